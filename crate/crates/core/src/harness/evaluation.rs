//! Retrieval plus registration over a query set, scored against known poses.
//!
//! Each query is normalized, ranked against the database by embedding
//! distance, then registered onto either its top-1 retrieval or its
//! annotated model, once with the symmetry-aware pipeline and once with
//! plain kNN matching. Ground truth relates the two normalized frames:
//! `N_q^-1 * P_q * N_t` with the relative scale dropped, where `P_q` is the
//! query's annotated pose and `N_q`, `N_t` the normalizations.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{parse_json, QuerySet};
use super::metrics::{precision_at_m, top1_cd};
use crate::error::{Error, Result};
use crate::geometry::{chamfer, classify_by_rank, to_ncc, CdThresholds, PointCloud, Pose};
use crate::io::read_cloud;
use crate::registration::{
    register_unconstrained, rre, rte, symmetry_aware_register_with_split, RegistrationParams,
};
use crate::retrieval::{build_database_with, prepare_cloud, retrieve, IndexOptions, ModelDatabase};

/// RRE thresholds in degrees and RTE thresholds in normalized units.
pub const RRE_THRESHOLDS: [f64; 3] = [5.0, 15.0, 45.0];
pub const RTE_THRESHOLDS: [f64; 3] = [0.03, 0.05, 0.10];
/// Spacing of the RRE CDF columns, in degrees.
pub const CDF_STEP_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveMode {
    /// Only the annotated model counts as a hit.
    #[default]
    Annotated,
    /// Chamfer rank and threshold positives of the canonicalized query.
    Chamfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterTarget {
    #[default]
    Retrieved,
    Annotated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Model manifest, relative to the config file.
    pub manifest: PathBuf,
    /// Query set, relative to the config file.
    pub queries: PathBuf,
    #[serde(default)]
    pub positives: PositiveMode,
    #[serde(default)]
    pub register: RegisterTarget,
    /// Defaults to a tenth of the database, at least 1.
    #[serde(default)]
    pub precision_m: Option<usize>,
    #[serde(default)]
    pub registration: RegistrationParams,
    #[serde(default)]
    pub index: IndexOptions,
    #[serde(default)]
    pub thresholds: CdThresholds,
    /// Query `i` registers with seed `seed + i`.
    #[serde(default)]
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(manifest: impl Into<PathBuf>, queries: impl Into<PathBuf>) -> Self {
        EvalConfig {
            manifest: manifest.into(),
            queries: queries.into(),
            positives: PositiveMode::default(),
            register: RegisterTarget::default(),
            precision_m: None,
            registration: RegistrationParams::default(),
            index: IndexOptions::default(),
            thresholds: CdThresholds::default(),
            seed: 0,
        }
    }

    pub fn read(path: &Path) -> Result<EvalConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_json(path, &text)
    }
}

/// A query cloud in its raw frame with its annotation.
#[derive(Debug, Clone)]
pub struct Query {
    pub cloud: PointCloud,
    pub model_id: String,
    /// Annotated model's raw frame onto the query.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub query_id: String,
    pub model_id: String,
    pub retrieved_id: String,
    pub registered_id: String,
    /// Degrees.
    pub rre: f64,
    pub rte: f64,
    pub scd: f64,
    pub hypothesis_label: String,
    pub inlier_count: usize,
    /// Degrees.
    pub baseline_rre: f64,
    pub baseline_rte: f64,
    pub baseline_scd: f64,
    pub precision_at_m: f64,
    pub top1_cd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Fraction of cases with RRE at or below each of [`RRE_THRESHOLDS`].
    pub rre_within: [f64; 3],
    /// Fraction of cases with RTE at or below each of [`RTE_THRESHOLDS`].
    pub rte_within: [f64; 3],
    pub median_rre: f64,
    pub median_rte: f64,
    pub mean_scd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub rre_deg: Vec<f64>,
    pub symmetry_aware: Vec<f64>,
    pub unconstrained: Vec<f64>,
}

/// Every statistic derived from the case records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub symmetry_aware: MethodSummary,
    pub unconstrained: MethodSummary,
    pub precision_at_m: f64,
    pub top1_cd: f64,
    pub cdf: CdfTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub database: usize,
    pub precision_m: usize,
    pub positives: PositiveMode,
    pub register: RegisterTarget,
    pub cases: Vec<CaseRecord>,
    pub aggregates: Aggregates,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads the config, builds the database (persisting its index) and
/// evaluates every query.
pub fn run_evaluation(config_path: &Path) -> Result<EvalReport> {
    let config = EvalConfig::read(config_path)?;
    run_evaluation_with(&config, config_path.parent().unwrap_or(Path::new(".")))
}

/// As [`run_evaluation`] for an in-memory config whose relative paths are
/// resolved against `base`.
pub fn run_evaluation_with(config: &EvalConfig, base: &Path) -> Result<EvalReport> {
    let db = build_database_with(&resolve(base, &config.manifest), &config.index)?;
    let query_path = resolve(base, &config.queries);
    let set = QuerySet::read(&query_path)?;
    let qbase = query_path.parent().unwrap_or(Path::new("."));
    let queries = set
        .queries
        .iter()
        .map(|q| {
            Ok(Query {
                cloud: read_cloud(&resolve(qbase, &q.cloud_path))?.with_id(q.id.clone()),
                model_id: q.model_id.clone(),
                pose: Pose::try_from(&q.pose)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&db, &queries, config)
}

/// Default M: a tenth of the database, at least one.
pub fn default_precision_m(database: usize) -> usize {
    ((database as f64 * 0.1).round() as usize).max(1)
}

pub fn evaluate(db: &ModelDatabase, queries: &[Query], config: &EvalConfig) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::param("empty query set"));
    }
    config.thresholds.validate()?;
    let m = config.precision_m.unwrap_or_else(|| default_precision_m(db.len()));
    if m == 0 || m > db.len() {
        return Err(Error::param(format!("precision_m must be in 1..={}, got {m}", db.len())));
    }
    for q in queries {
        db.get(&q.model_id)?;
    }
    let cases = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| evaluate_case(db, q, config, m, config.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate(&cases)?;
    Ok(EvalReport {
        database: db.len(),
        precision_m: m,
        positives: config.positives,
        register: config.register,
        cases,
        aggregates,
    })
}

/// Pose between the normalized model and normalized query frames.
pub fn normalized_ground_truth(query_norm: &Pose, query_pose: &Pose, model_norm: &Pose) -> Result<Pose> {
    let full = query_norm.inverse().compose(query_pose).compose(model_norm);
    Pose::new(*full.rotation(), *full.translation())
}

fn evaluate_case(
    db: &ModelDatabase,
    q: &Query,
    config: &EvalConfig,
    m: usize,
    seed: u64,
) -> Result<CaseRecord> {
    let prepared = prepare_cloud(&q.cloud, &config.index.fpfh)?;
    let ranking = retrieve(&prepared.embedding, db, db.len())?;
    let ranked_ids: Vec<String> = ranking.into_iter().map(|(id, _)| id).collect();
    let retrieved_id = ranked_ids[0].clone();
    let target = match config.register {
        RegisterTarget::Retrieved => db.get(&retrieved_id)?,
        RegisterTarget::Annotated => db.get(&q.model_id)?,
    };

    let mut params = config.registration;
    params.ransac.seed = seed;
    params.symmetry.seed = seed;
    let sym = symmetry_aware_register_with_split(
        &prepared.cloud,
        &prepared.features,
        &target.cloud,
        &target.features,
        target.symmetry_classes,
        target.symmetry_split.as_ref(),
        &params,
    )?;
    let plain = register_unconstrained(
        &prepared.cloud,
        &prepared.features,
        &target.cloud,
        &target.features,
        &params,
    )?;
    let gt = normalized_ground_truth(&prepared.normalization, &q.pose, &target.normalization)?;

    // query in the shared canonical frame, normalized like the models
    let canonical = to_ncc(&q.cloud, &q.pose).normalized().0;
    let cds: Vec<f64> = db.entries().par_iter().map(|e| chamfer(&canonical, &e.cloud)).collect();
    let ids: Vec<String> = db.entries().iter().map(|e| e.id.clone()).collect();
    let positives: HashSet<String> = match config.positives {
        PositiveMode::Annotated => std::iter::once(q.model_id.clone()).collect(),
        PositiveMode::Chamfer => {
            let (pos, _) = classify_by_rank(&cds, &ids, None, db.len(), &config.thresholds)?;
            pos.into_iter().map(|i| ids[i].clone()).collect()
        }
    };
    let oracle = (0..cds.len())
        .min_by(|&a, &b| cds[a].total_cmp(&cds[b]).then_with(|| ids[a].cmp(&ids[b])))
        .expect("non-empty database");
    let retrieved = db.get(&retrieved_id)?;

    Ok(CaseRecord {
        query_id: q.cloud.id().to_string(),
        model_id: q.model_id.clone(),
        retrieved_id,
        registered_id: target.id.clone(),
        rre: rre(&sym.pose, &gt).to_degrees(),
        rte: rte(&sym.pose, &gt),
        scd: sym.alignment_scd,
        hypothesis_label: sym.hypothesis_label,
        inlier_count: sym.inlier_count,
        baseline_rre: rre(&plain.pose, &gt).to_degrees(),
        baseline_rte: rte(&plain.pose, &gt),
        baseline_scd: plain.alignment_scd,
        precision_at_m: precision_at_m(&ranked_ids, &positives, m)?,
        top1_cd: top1_cd(&canonical, &retrieved.cloud, &db.entries()[oracle].cloud),
    })
}

fn fraction_within(values: &[f64], t: f64) -> f64 {
    values.iter().filter(|&&v| v <= t).count() as f64 / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn summarize(rres: &[f64], rtes: &[f64], scds: &[f64]) -> MethodSummary {
    MethodSummary {
        rre_within: RRE_THRESHOLDS.map(|t| fraction_within(rres, t)),
        rte_within: RTE_THRESHOLDS.map(|t| fraction_within(rtes, t)),
        median_rre: median(rres),
        median_rte: median(rtes),
        mean_scd: mean(scds),
    }
}

/// Recomputes every report statistic from the case records alone.
pub fn aggregate(cases: &[CaseRecord]) -> Result<Aggregates> {
    if cases.is_empty() {
        return Err(Error::param("no cases to aggregate"));
    }
    let col = |f: fn(&CaseRecord) -> f64| cases.iter().map(f).collect::<Vec<f64>>();
    let (rre_s, rte_s, scd_s) = (col(|c| c.rre), col(|c| c.rte), col(|c| c.scd));
    let (rre_b, rte_b, scd_b) = (
        col(|c| c.baseline_rre),
        col(|c| c.baseline_rte),
        col(|c| c.baseline_scd),
    );
    let steps = (180.0 / CDF_STEP_DEG) as usize;
    let rre_deg: Vec<f64> = (0..=steps).map(|k| k as f64 * CDF_STEP_DEG).collect();
    Ok(Aggregates {
        symmetry_aware: summarize(&rre_s, &rte_s, &scd_s),
        unconstrained: summarize(&rre_b, &rte_b, &scd_b),
        precision_at_m: mean(&col(|c| c.precision_at_m)),
        top1_cd: mean(&col(|c| c.top1_cd)),
        cdf: CdfTable {
            symmetry_aware: rre_deg.iter().map(|&t| fraction_within(&rre_s, t)).collect(),
            unconstrained: rre_deg.iter().map(|&t| fraction_within(&rre_b, t)).collect(),
            rre_deg,
        },
    })
}

/// Aligned plain-text rendering: summary, per-case rows and CDF columns.
pub fn report_table(report: &EvalReport) -> String {
    let a = &report.aggregates;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16}{:>9}{:>9}{:>9}{:>10}{:>10}{:>10}{:>10}{:>10}",
        "method", "RRE<=5", "RRE<=15", "RRE<=45", "RTE<=.03", "RTE<=.05", "RTE<=.10", "medRRE", "medRTE"
    );
    for (name, m) in [("symmetry-aware", &a.symmetry_aware), ("unconstrained", &a.unconstrained)] {
        let _ = writeln!(
            s,
            "{:<16}{:>9.3}{:>9.3}{:>9.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.4}",
            name,
            m.rre_within[0],
            m.rre_within[1],
            m.rre_within[2],
            m.rte_within[0],
            m.rte_within[1],
            m.rte_within[2],
            m.median_rre,
            m.median_rte
        );
    }
    let _ = writeln!(
        s,
        "\nprecision@{} {:.4}   top-1 CD {:.6}   database {}   cases {}\n",
        report.precision_m,
        a.precision_at_m,
        a.top1_cd,
        report.database,
        report.cases.len()
    );
    let _ = writeln!(
        s,
        "{:<8}{:<8}{:<8}{:>10}{:>10}{:>12}{:>10}{:>10}{:>8}{:>10}",
        "query", "model", "top1", "RRE", "RTE", "SCD", "bRRE", "bRTE", "P@M", "top1CD"
    );
    for c in &report.cases {
        let _ = writeln!(
            s,
            "{:<8}{:<8}{:<8}{:>10.3}{:>10.4}{:>12.6}{:>10.3}{:>10.4}{:>8.3}{:>10.6}",
            c.query_id,
            c.model_id,
            c.retrieved_id,
            c.rre,
            c.rte,
            c.scd,
            c.baseline_rre,
            c.baseline_rte,
            c.precision_at_m,
            c.top1_cd
        );
    }
    let _ = writeln!(s, "\n{:<8}{:>10}{:>10}", "RRE<=", "sym", "plain");
    for (k, t) in a.cdf.rre_deg.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:<8}{:>10.3}{:>10.3}",
            t, a.cdf.symmetry_aware[k], a.cdf.unconstrained[k]
        );
    }
    s
}
