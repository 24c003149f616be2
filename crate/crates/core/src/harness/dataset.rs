//! Synthetic datasets on disk: a model manifest, a query set and a default
//! evaluation config, all generated from one JSON spec.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluation::EvalConfig;
use super::synthetic::{generate_synthetic, SyntheticSpec};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, PoseRecord};
use crate::io::write_ply;
use crate::retrieval::{Manifest, ManifestModel};

/// Query clouds are sampled with seeds offset by this much from the models.
const QUERY_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub category: String,
    /// Shape family, point count and base seed shared by every model.
    pub template: SyntheticSpec,
    pub models: usize,
    /// Linear sweep of one shape parameter across the models.
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Relative uniform jitter applied to every non-swept shape parameter.
    #[serde(default)]
    pub jitter: f64,
    /// Reuse the template seed for every model instead of `seed + k`.
    #[serde(default)]
    pub shared_sampling: bool,
    #[serde(default)]
    pub queries: Option<QuerySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: String,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub count: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub occlusion_fraction: f64,
    #[serde(default = "default_true")]
    pub rotate: bool,
    /// Draw fresh surface samples; when false a query reuses its model's
    /// samples exactly.
    #[serde(default = "default_true")]
    pub resample: bool,
}

fn default_true() -> bool {
    true
}

/// One query of a query set. `pose` maps the annotated model's raw frame
/// onto the query cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub id: String,
    pub cloud_path: PathBuf,
    pub model_id: String,
    pub pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySet {
    pub queries: Vec<QueryRecord>,
}

impl QuerySet {
    pub fn read(path: &Path) -> Result<QuerySet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_json(path, &text)
    }
}

/// What [`write_dataset`] produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub models: usize,
    pub queries: usize,
    pub manifest: PathBuf,
    pub query_set: Option<PathBuf>,
    pub eval_config: Option<PathBuf>,
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl DatasetSpec {
    pub fn read(path: &Path) -> Result<DatasetSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_json(path, &text)
    }

    fn validate(&self) -> Result<()> {
        if self.models == 0 {
            return Err(Error::param("a dataset needs at least one model"));
        }
        if !(self.jitter.is_finite() && (0.0..1.0).contains(&self.jitter)) {
            return Err(Error::param("jitter must lie in [0, 1)"));
        }
        if let Some(s) = &self.sweep {
            let known = self.template.family.default_params().iter().any(|(k, _)| *k == s.param);
            if !known {
                return Err(Error::param(format!(
                    "unknown sweep parameter '{}' for {:?}",
                    s.param, self.template.family
                )));
            }
        }
        Ok(())
    }

    /// Spec of model `k`: clean, unrotated, with the sweep and jitter applied.
    pub fn model_spec(&self, k: usize) -> Result<SyntheticSpec> {
        let mut spec = self.template.clone();
        spec.shape_params = self.template.resolved_params()?;
        spec.noise_sigma = 0.0;
        spec.occlusion_fraction = 0.0;
        spec.rotate = false;
        if !self.shared_sampling {
            spec.seed = self.template.seed.wrapping_add(k as u64);
        }
        if self.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.template.seed);
            rng.set_stream(k as u64);
            for (name, v) in spec.shape_params.iter_mut() {
                let f: f64 = rng.random_range(1.0 - self.jitter..=1.0 + self.jitter);
                if self.sweep.as_ref().is_none_or(|s| &s.param != name) {
                    *v *= f;
                }
            }
        }
        if let Some(s) = &self.sweep {
            let t = if self.models > 1 {
                k as f64 / (self.models - 1) as f64
            } else {
                0.0
            };
            spec.shape_params.insert(s.param.clone(), s.from + (s.to - s.from) * t);
        }
        Ok(spec)
    }

    /// Spec of query `j`, built on model `j % models`.
    pub fn query_spec(&self, j: usize) -> Result<Option<SyntheticSpec>> {
        let Some(q) = &self.queries else {
            return Ok(None);
        };
        let mut spec = self.model_spec(j % self.models)?;
        if q.resample {
            spec.seed = self
                .template
                .seed
                .wrapping_add(QUERY_SEED_OFFSET)
                .wrapping_add(j as u64);
        }
        spec.noise_sigma = q.noise_sigma;
        spec.occlusion_fraction = q.occlusion_fraction;
        spec.rotate = q.rotate;
        Ok(Some(spec))
    }
}

pub fn model_id(k: usize) -> String {
    format!("m{k:04}")
}

pub fn query_id(j: usize) -> String {
    format!("q{j:04}")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates the dataset into `out`:
///
/// ```text
/// out/manifest.json      models/NNNN.ply
/// out/queries.json       queries/NNNN.ply
/// out/eval.json
/// ```
///
/// The last three only when the spec has a query block.
pub fn write_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetSummary> {
    spec.validate()?;
    create_dir(&out.join("models"))?;
    let models: Vec<PointCloud> = (0..spec.models)
        .into_par_iter()
        .map(|k| {
            let obj = generate_synthetic(&spec.model_spec(k)?)?;
            Ok(obj.cloud.with_id(model_id(k)))
        })
        .collect::<Result<_>>()?;
    let mut manifest = Manifest {
        category: spec.category.clone(),
        models: Vec::with_capacity(models.len()),
    };
    for (k, cloud) in models.iter().enumerate() {
        let rel = PathBuf::from(format!("models/{k:04}.ply"));
        write_ply(&out.join(&rel), cloud)?;
        manifest.models.push(ManifestModel {
            id: cloud.id().to_string(),
            cloud_path: rel,
            feature_path: None,
            embedding_path: None,
            symmetry_classes: spec.template.symmetry_classes,
        });
    }
    let manifest_path = out.join("manifest.json");
    write_text(&manifest_path, &to_json(&manifest))?;

    let Some(q) = &spec.queries else {
        return Ok(DatasetSummary {
            models: models.len(),
            queries: 0,
            manifest: manifest_path,
            query_set: None,
            eval_config: None,
        });
    };
    create_dir(&out.join("queries"))?;
    let queries: Vec<(PointCloud, Pose)> = (0..q.count)
        .into_par_iter()
        .map(|j| {
            let s = spec.query_spec(j)?.expect("query block present");
            let obj = generate_synthetic(&s)?;
            Ok((obj.cloud.with_id(query_id(j)), obj.pose))
        })
        .collect::<Result<_>>()?;
    let mut set = QuerySet {
        queries: Vec::with_capacity(queries.len()),
    };
    for (j, (cloud, pose)) in queries.iter().enumerate() {
        let rel = PathBuf::from(format!("queries/{j:04}.ply"));
        write_ply(&out.join(&rel), cloud)?;
        set.queries.push(QueryRecord {
            id: cloud.id().to_string(),
            cloud_path: rel,
            model_id: model_id(j % spec.models),
            pose: PoseRecord::from(pose),
        });
    }
    let query_path = out.join("queries.json");
    write_text(&query_path, &to_json(&set))?;
    let config_path = out.join("eval.json");
    let config = EvalConfig::new("manifest.json", "queries.json");
    write_text(&config_path, &to_json(&config))?;
    Ok(DatasetSummary {
        models: models.len(),
        queries: set.queries.len(),
        manifest: manifest_path,
        query_set: Some(query_path),
        eval_config: Some(config_path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Family;
    use crate::io::read_ply;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            category: "chair".into(),
            template: SyntheticSpec::new(Family::ChairLike, 200, 3),
            models: 4,
            sweep: Some(Sweep {
                param: "back_height".into(),
                from: 0.4,
                to: 0.7,
            }),
            jitter: 0.1,
            shared_sampling: false,
            queries: Some(QuerySpec {
                count: 6,
                noise_sigma: 0.0,
                occlusion_fraction: 0.0,
                rotate: true,
                resample: true,
            }),
        }
    }

    #[test]
    fn sweep_is_linear_and_exact() {
        let s = spec();
        let vals: Vec<f64> = (0..4).map(|k| s.model_spec(k).unwrap().shape_params["back_height"]).collect();
        assert_eq!(vals[0], 0.4);
        assert_eq!(vals[3], 0.7);
        assert!((vals[1] - 0.5).abs() < 1e-12);
        let seat: Vec<f64> = (0..4).map(|k| s.model_spec(k).unwrap().shape_params["seat_width"]).collect();
        assert!(seat.iter().all(|v| (v / 0.5 - 1.0).abs() <= 0.1 + 1e-12));
        assert_ne!(seat[0], seat[1]);
    }

    #[test]
    fn query_specs_follow_models() {
        let s = spec();
        let q = s.query_spec(5).unwrap().unwrap();
        let m = s.model_spec(1).unwrap();
        assert_eq!(q.shape_params, m.shape_params);
        assert_ne!(q.seed, m.seed);
        assert!(q.rotate && !m.rotate);
    }

    #[test]
    fn writes_layout_deterministically() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = write_dataset(&spec(), a.path()).unwrap();
        write_dataset(&spec(), b.path()).unwrap();
        assert_eq!((sa.models, sa.queries), (4, 6));
        for rel in ["manifest.json", "queries.json", "eval.json", "models/0002.ply", "queries/0005.ply"] {
            let x = fs::read(a.path().join(rel)).unwrap();
            let y = fs::read(b.path().join(rel)).unwrap();
            assert_eq!(x, y, "{rel}");
        }
        let set = QuerySet::read(&a.path().join("queries.json")).unwrap();
        assert_eq!(set.queries[5].model_id, "m0001");
        let cloud = read_ply(&a.path().join(&set.queries[0].cloud_path)).unwrap();
        assert_eq!(cloud.len(), 200);
        let manifest = Manifest::read(&a.path().join("manifest.json")).unwrap();
        assert_eq!(manifest.models.len(), 4);
        assert_eq!(manifest.models[3].symmetry_classes, 2);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec();
        s.sweep.as_mut().unwrap().param = "wingspan".into();
        let dir = tempfile::tempdir().unwrap();
        assert!(write_dataset(&s, dir.path()).is_err());
        let mut s = spec();
        s.models = 0;
        assert!(write_dataset(&s, dir.path()).is_err());
        let path = dir.path().join("spec.json");
        fs::write(&path, "{\n  \"category\": \"x\",\n  \"bogus\": 1\n}").unwrap();
        let err = DatasetSpec::read(&path).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }
}
