//! Global embeddings, the model database, and nearest-embedding retrieval.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    extract_fpfh, feature_dist_sq, features_from_matrix, load_features, write_features,
    FeatureSet, FeatureSource, FpfhParams,
};
use crate::geometry::{PointCloud, Pose, PoseRecord};
use crate::io::{read_cloud, read_crsf, read_ply, write_crsf, write_ply};
use crate::symmetry::{symmetry_split, SymmetryParams, SymmetrySplit};

pub const EMBEDDING_DIM: usize = 256;
const EMBEDDING_TOL: f64 = 1e-6;
/// Fixed-point scale for order-independent column sums.
const SUM_SCALE: f64 = (1u128 << 100) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Pooled,
    External,
}

/// Unit-length global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f32>,
    source: EmbeddingSource,
}

impl Embedding {
    /// Rows already of unit length within 1e-6 keep their exact bits.
    pub fn from_f32(mut vector: Vec<f32>, source: EmbeddingSource) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::param("embedding is empty"));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("embedding has a non-finite entry"));
        }
        let norm = vector.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::param("embedding is all zeros"));
        }
        if (norm - 1.0).abs() > EMBEDDING_TOL {
            for v in vector.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        Ok(Embedding { vector, source })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        feature_dist_sq(&self.vector, &other.vector).sqrt()
    }
}

/// Per-dimension mean and max over rows, concatenated, zero-padded or
/// truncated to 256 values and normalized.
pub fn pooled_embedding(features: &FeatureSet) -> Result<Embedding> {
    if features.is_empty() {
        return Err(Error::param("cannot pool an empty feature set"));
    }
    let dim = features.dim();
    let mut sums = vec![0i128; dim];
    let mut maxes = vec![f32::NEG_INFINITY; dim];
    for i in 0..features.len() {
        for (k, &v) in features.row(i).iter().enumerate() {
            sums[k] += (v as f64 * SUM_SCALE) as i128;
            maxes[k] = maxes[k].max(v);
        }
    }
    let n = features.len() as f64;
    let mut pooled: Vec<f64> = sums.iter().map(|&s| s as f64 / SUM_SCALE / n).collect();
    pooled.extend(maxes.iter().map(|&v| v as f64));
    pooled.resize(EMBEDDING_DIM, 0.0);
    let norm = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::param("pooled embedding is all zeros"));
    }
    let vector = pooled.iter().map(|v| (v / norm) as f32).collect();
    Ok(Embedding {
        vector,
        source: EmbeddingSource::Pooled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub category: String,
    pub models: Vec<ManifestModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestModel {
    pub id: String,
    pub cloud_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_path: Option<PathBuf>,
    pub symmetry_classes: usize,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Manifest> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })
    }
}

/// Settings for turning raw clouds into database entries and queries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexOptions {
    pub fpfh: FpfhParams,
    pub symmetry: SymmetryParams,
}

/// A cloud brought into its normalized frame, with local features and a
/// global embedding.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    pub cloud: PointCloud,
    /// Maps the normalized frame back onto the input coordinates.
    pub normalization: Pose,
    pub features: FeatureSet,
    pub embedding: Embedding,
}

/// Normalizes a cloud, extracts FPFH features and pools them.
pub fn prepare_cloud(cloud: &PointCloud, fpfh: &FpfhParams) -> Result<PreparedCloud> {
    let (normalized, normalization) = cloud.normalized();
    let features = extract_fpfh(&normalized, fpfh)?;
    let embedding = pooled_embedding(&features)?;
    Ok(PreparedCloud {
        cloud: normalized,
        normalization,
        features,
        embedding,
    })
}

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub id: String,
    /// Cloud in its normalized frame.
    pub cloud: PointCloud,
    pub normalization: Pose,
    pub embedding: Embedding,
    pub features: FeatureSet,
    pub symmetry_classes: usize,
    pub symmetry_split: Option<SymmetrySplit>,
}

#[derive(Debug, Clone)]
pub struct ModelDatabase {
    category: String,
    entries: Vec<ModelEntry>,
}

impl ModelDatabase {
    /// Checks id uniqueness and dimensional consistency.
    pub fn new(category: impl Into<String>, entries: Vec<ModelEntry>) -> Result<Self> {
        let first = entries.first().ok_or(Error::EmptyDatabase)?;
        let (edim, fdim) = (first.embedding.dim(), first.features.dim());
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateModelId(e.id.clone()));
            }
            if e.embedding.dim() != edim {
                return Err(Error::EmbeddingDim {
                    id: e.id.clone(),
                    expected: edim,
                    found: e.embedding.dim(),
                });
            }
            if e.features.dim() != fdim {
                return Err(Error::Entry {
                    id: e.id.clone(),
                    message: format!("feature dimension {} differs from {fdim}", e.features.dim()),
                });
            }
            if e.symmetry_classes == 0 {
                return Err(Error::Entry {
                    id: e.id.clone(),
                    message: "symmetry_classes must be at least 1".into(),
                });
            }
        }
        Ok(ModelDatabase {
            category: category.into(),
            entries,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.entries[0].embedding.dim()
    }

    pub fn get(&self, id: &str) -> Result<&ModelEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn entry_err(id: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        e @ (Error::DuplicateModelId(_) | Error::EmbeddingDim { .. } | Error::Entry { .. }) => e,
        e => Error::Entry {
            id: id.to_string(),
            message: e.to_string(),
        },
    }
}

fn build_entry(base: &Path, m: &ManifestModel, options: &IndexOptions) -> Result<ModelEntry> {
    let raw = read_cloud(&resolve(base, &m.cloud_path))?.with_id(m.id.clone());
    let (cloud, normalization) = raw.normalized();
    let features = match &m.feature_path {
        Some(p) => load_features(&resolve(base, p), cloud.len())?,
        None => extract_fpfh(&cloud, &options.fpfh)?,
    };
    let embedding = match &m.embedding_path {
        Some(p) => {
            let mat = read_crsf(&resolve(base, p))?;
            if mat.rows != 1 {
                return Err(Error::param(format!(
                    "embedding file holds {} rows, expected 1",
                    mat.rows
                )));
            }
            Embedding::from_f32(mat.data, EmbeddingSource::External)?
        }
        None => pooled_embedding(&features)?,
    };
    if m.symmetry_classes == 0 {
        return Err(Error::param("symmetry_classes must be at least 1"));
    }
    let symmetry_split = if m.symmetry_classes >= 2 {
        match symmetry_split(&cloud, &features, m.symmetry_classes, &options.symmetry) {
            Ok(s) => Some(s),
            Err(Error::DegenerateSplit) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(ModelEntry {
        id: m.id.clone(),
        cloud,
        normalization,
        embedding,
        features,
        symmetry_classes: m.symmetry_classes,
        symmetry_split,
    })
}

/// Directory the index for `manifest_path` is written to:
/// `<manifest stem>.index` beside the manifest.
pub fn index_dir_for(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    manifest_path.with_file_name(format!("{stem}.index"))
}

pub fn build_database(manifest_path: &Path) -> Result<ModelDatabase> {
    build_database_with(manifest_path, &IndexOptions::default())
}

/// Builds every entry of the manifest and persists the index beside it.
pub fn build_database_with(manifest_path: &Path, options: &IndexOptions) -> Result<ModelDatabase> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = Manifest::parse(manifest_path, &text)?;
    if manifest.models.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let mut seen = HashSet::new();
    for m in &manifest.models {
        if !seen.insert(m.id.as_str()) {
            return Err(Error::DuplicateModelId(m.id.clone()));
        }
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries = manifest
        .models
        .par_iter()
        .map(|m| build_entry(base, m, options).map_err(entry_err(&m.id)))
        .collect::<Result<Vec<_>>>()?;
    let db = ModelDatabase::new(manifest.category.clone(), entries)?;
    save_database(&db, &index_dir_for(manifest_path), &text)?;
    Ok(db)
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    category: String,
    embedding_dim: usize,
    feature_dim: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    symmetry_classes: usize,
    normalization: PoseRecord,
    embedding_source: EmbeddingSource,
    feature_source: FeatureSource,
    has_split: bool,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes the index directory: the manifest text, `index.json`, one cloud,
/// feature file and optional split per entry, and `embeddings.crsf`.
pub fn save_database(db: &ModelDatabase, dir: &Path, manifest_text: &str) -> Result<()> {
    for sub in ["clouds", "features", "splits"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    write_text(&dir.join("manifest.json"), manifest_text)?;
    let header = IndexHeader {
        category: db.category.clone(),
        embedding_dim: db.embedding_dim(),
        feature_dim: db.entries[0].features.dim(),
        entries: db
            .entries
            .iter()
            .map(|e| IndexEntry {
                id: e.id.clone(),
                symmetry_classes: e.symmetry_classes,
                normalization: PoseRecord::from(&e.normalization),
                embedding_source: e.embedding.source(),
                feature_source: e.features.source(),
                has_split: e.symmetry_split.is_some(),
            })
            .collect(),
    };
    write_text(&dir.join("index.json"), &to_json(&header))?;
    let mut embeddings = Vec::with_capacity(db.len() * db.embedding_dim());
    for (k, e) in db.entries.iter().enumerate() {
        write_ply(&dir.join(format!("clouds/{k:04}.ply")), &e.cloud)?;
        write_features(&dir.join(format!("features/{k:04}.crsf")), &e.features)?;
        let split_path = dir.join(format!("splits/{k:04}.json"));
        if let Some(s) = &e.symmetry_split {
            write_text(&split_path, &to_json(s))?;
        }
        embeddings.extend_from_slice(e.embedding.as_slice());
    }
    write_crsf(&dir.join("embeddings.crsf"), db.len(), db.embedding_dim(), &embeddings)
}

/// Reads an index directory written by [`save_database`].
pub fn load_database(dir: &Path) -> Result<ModelDatabase> {
    let header_path = dir.join("index.json");
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: IndexHeader = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: header_path.clone(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    let emb_path = dir.join("embeddings.crsf");
    let emb = read_crsf(&emb_path)?;
    if emb.rows != header.entries.len() || emb.cols != header.embedding_dim {
        return Err(Error::Config {
            path: emb_path,
            message: format!(
                "embedding matrix is {}x{}, index expects {}x{}",
                emb.rows,
                emb.cols,
                header.entries.len(),
                header.embedding_dim
            ),
        });
    }
    let entries = header
        .entries
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let cloud = read_ply(&dir.join(format!("clouds/{k:04}.ply")))?.with_id(h.id.clone());
            let m = read_crsf(&dir.join(format!("features/{k:04}.crsf")))?;
            let mut features = features_from_matrix(m, cloud.len())?;
            if h.feature_source == FeatureSource::Fpfh {
                features = FeatureSet::from_f32(features.as_slice().to_vec(), features.dim(), FeatureSource::Fpfh)?;
            }
            let row = emb.data[k * emb.cols..(k + 1) * emb.cols].to_vec();
            let embedding = Embedding::from_f32(row, h.embedding_source)?;
            let symmetry_split = if h.has_split {
                let p = dir.join(format!("splits/{k:04}.json"));
                let s = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Some(serde_json::from_str(&s).map_err(|e| Error::Config {
                    path: p.clone(),
                    message: e.to_string(),
                })?)
            } else {
                None
            };
            Ok(ModelEntry {
                id: h.id.clone(),
                cloud,
                normalization: Pose::try_from(&h.normalization)?,
                embedding,
                features,
                symmetry_classes: h.symmetry_classes,
                symmetry_split,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            e @ Error::Config { .. } => e,
            e => Error::Config {
                path: dir.to_path_buf(),
                message: e.to_string(),
            },
        })?;
    ModelDatabase::new(header.category, entries)
}

/// The `m` entries nearest to `query` in embedding space, ascending by
/// distance, ties by id.
pub fn retrieve(query: &Embedding, db: &ModelDatabase, m: usize) -> Result<Vec<(String, f64)>> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if query.dim() != db.embedding_dim() {
        return Err(Error::DimMismatch {
            left: query.dim(),
            right: db.embedding_dim(),
        });
    }
    if m == 0 || m > db.len() {
        return Err(Error::param(format!("m must be in 1..={}, got {m}", db.len())));
    }
    let mut ranked: Vec<(String, f64)> = db
        .entries
        .iter()
        .map(|e| (e.id.clone(), query.distance(&e.embedding)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(m);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_pose, random_rotation, Point};
    use crate::io::write_cloud;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> FeatureSet {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect();
        FeatureSet::from_rows(&data, dim, FeatureSource::Fpfh).unwrap()
    }

    fn blob(rng: &mut ChaCha8Rng, n: usize, stretch: f64) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                Point::new(stretch * r * t.cos(), 0.6 * r * t.sin(), 0.4 * z)
            })
            .collect();
        PointCloud::new("b", pts).unwrap()
    }

    #[test]
    fn single_row_pools_to_itself() {
        let f = FeatureSet::from_rows(&[3.0, 4.0], 2, FeatureSource::External).unwrap();
        let e = pooled_embedding(&f).unwrap();
        assert_eq!(e.dim(), EMBEDDING_DIM);
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let expect = [0.6 * h, 0.8 * h, 0.6 * h, 0.8 * h];
        for (a, b) in e.as_slice()[..4].iter().zip(expect) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(e.as_slice()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_ignores_row_order_and_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = features(&mut rng, 50, 33);
        let e = pooled_embedding(&f).unwrap();
        let mut order: Vec<usize> = (0..50).rev().collect();
        order.swap(3, 17);
        assert_eq!(pooled_embedding(&f.select_rows(&order)).unwrap(), e);
        let doubled: Vec<usize> = (0..50).flat_map(|i| [i, i]).collect();
        assert_eq!(pooled_embedding(&f.select_rows(&doubled)).unwrap(), e);
        let norm: f64 = e.as_slice().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wide_features_are_truncated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = features(&mut rng, 5, 200);
        assert_eq!(pooled_embedding(&f).unwrap().dim(), EMBEDDING_DIM);
    }

    #[test]
    fn fpfh_embedding_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = blob(&mut rng, 600, 1.0);
        let pose = Pose::new(random_rotation(&mut rng), Point::new(2.0, -1.0, 0.5)).unwrap();
        let a = prepare_cloud(&c, &FpfhParams::default()).unwrap();
        let b = prepare_cloud(&apply_pose(&c, &pose), &FpfhParams::default()).unwrap();
        assert!(a.embedding.distance(&b.embedding) <= 1e-3);
    }

    fn entry(id: &str, emb: Embedding, f: FeatureSet, cloud: PointCloud) -> ModelEntry {
        ModelEntry {
            id: id.into(),
            cloud,
            normalization: Pose::identity(),
            embedding: emb,
            features: f,
            symmetry_classes: 1,
            symmetry_split: None,
        }
    }

    fn random_db(rng: &mut ChaCha8Rng, n: usize) -> ModelDatabase {
        let entries = (0..n)
            .map(|k| {
                let f = features(rng, 10, 8);
                let e = pooled_embedding(&f).unwrap();
                let c = PointCloud::new("x", (0..10).map(|i| Point::new(i as f64, 0.0, 0.0)).collect()).unwrap();
                entry(&format!("m{k:02}"), e, f, c)
            })
            .collect();
        ModelDatabase::new("test", entries).unwrap()
    }

    #[test]
    fn retrieve_matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let db = random_db(&mut rng, 10);
        let q = pooled_embedding(&features(&mut rng, 10, 8)).unwrap();
        let full = retrieve(&q, &db, 10).unwrap();
        let mut brute: Vec<(String, f64)> = db
            .entries()
            .iter()
            .map(|e| {
                let d: f64 = q.as_slice().iter().zip(e.embedding.as_slice()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
                (e.id.clone(), d.sqrt())
            })
            .collect();
        brute.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(full, brute);
        assert_eq!(retrieve(&q, &db, 1).unwrap()[0], brute[0]);

        let self_hit = retrieve(&db.entries()[3].embedding, &db, 1).unwrap();
        assert_eq!(self_hit[0], ("m03".to_string(), 0.0));
    }

    #[test]
    fn retrieve_breaks_ties_by_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = features(&mut rng, 10, 8);
        let e = pooled_embedding(&f).unwrap();
        let c = PointCloud::new("x", vec![Point::zeros()]).unwrap();
        let db = ModelDatabase::new(
            "t",
            vec![entry("b", e.clone(), f.clone(), c.clone()), entry("a", e.clone(), f, c)],
        )
        .unwrap();
        let r = retrieve(&e, &db, 2).unwrap();
        assert_eq!(r[0].0, "a");
        assert_eq!(r[1].0, "b");
    }

    #[test]
    fn retrieve_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let db = random_db(&mut rng, 3);
        let q = db.entries()[0].embedding.clone();
        assert!(retrieve(&q, &db, 0).is_err());
        assert!(retrieve(&q, &db, 4).is_err());
        let short = Embedding::from_f32(vec![1.0; 4], EmbeddingSource::External).unwrap();
        assert!(matches!(retrieve(&short, &db, 1), Err(Error::DimMismatch { .. })));
        assert!(matches!(ModelDatabase::new("e", vec![]), Err(Error::EmptyDatabase)));
    }

    fn write_manifest(dir: &Path, models: &[ManifestModel]) -> PathBuf {
        let m = Manifest {
            category: "blobs".into(),
            models: models.to_vec(),
        };
        let path = dir.join("db.json");
        fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
        path
    }

    fn model(id: &str, cloud: &str, g: usize) -> ManifestModel {
        ManifestModel {
            id: id.into(),
            cloud_path: cloud.into(),
            feature_path: None,
            embedding_path: None,
            symmetry_classes: g,
        }
    }

    #[test]
    fn build_persist_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (k, s) in [1.0, 1.3, 1.6].iter().enumerate() {
            write_cloud(&dir.path().join(format!("c{k}.ply")), &blob(&mut rng, 300, *s)).unwrap();
        }
        let manifest = write_manifest(
            dir.path(),
            &[model("zeta", "c0.ply", 2), model("alpha", "c1.ply", 1), model("mid", "c2.ply", 1)],
        );
        let db = build_database(&manifest).unwrap();
        let ids: Vec<&str> = db.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["zeta", "alpha", "mid"]);
        assert!(db.entries()[0].symmetry_split.is_some());

        let idx = index_dir_for(&manifest);
        assert!(idx.join("manifest.json").is_file());
        assert!(idx.join("embeddings.crsf").is_file());
        let emb = read_crsf(&idx.join("embeddings.crsf")).unwrap();
        assert_eq!((emb.rows, emb.cols), (3, EMBEDDING_DIM));

        let back = load_database(&idx).unwrap();
        for (a, b) in db.entries().iter().zip(back.entries()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.embedding, b.embedding);
            assert_eq!(a.features, b.features);
            assert_eq!(a.cloud, b.cloud);
            assert_eq!(a.symmetry_split, b.symmetry_split);
            assert_eq!(a.normalization, b.normalization);
        }
    }

    #[test]
    fn build_errors_name_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        write_cloud(&dir.path().join("c.ply"), &blob(&mut rng, 200, 1.0)).unwrap();

        let dup = write_manifest(dir.path(), &[model("a", "c.ply", 1), model("a", "c.ply", 1)]);
        let err = build_database(&dup).unwrap_err();
        assert!(err.to_string().contains("duplicate model id"));

        let missing = write_manifest(dir.path(), &[model("a", "c.ply", 1), model("ghost", "nope.ply", 1)]);
        let err = build_database(&missing).unwrap_err();
        assert!(matches!(&err, Error::Entry { id, .. } if id == "ghost"));

        write_crsf(&dir.path().join("e.crsf"), 1, 16, &[0.25; 16]).unwrap();
        let mut ext = model("ext", "c.ply", 1);
        ext.embedding_path = Some("e.crsf".into());
        let mixed = write_manifest(dir.path(), &[model("a", "c.ply", 1), ext]);
        let err = build_database(&mixed).unwrap_err();
        assert!(matches!(&err, Error::EmbeddingDim { id, .. } if id == "ext"));

        let bad = dir.path().join("bad.json");
        fs::write(&bad, "{\n  \"category\": \"x\",\n  \"models\": 3\n}").unwrap();
        let err = build_database(&bad).unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }
}
