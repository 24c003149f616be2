use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dist_sq, Correspondence, KdTree, PointCloud};
use crate::error::{Error, Result};

/// Mean squared distance between matched points, normalized by the total
/// query size. Unmatched query points contribute zero.
pub fn matched_point_distance(
    query: &PointCloud,
    model: &PointCloud,
    assoc: &[Correspondence],
) -> Result<f64> {
    let mut seen = HashSet::with_capacity(assoc.len());
    let mut sum = 0.0;
    for c in assoc {
        if c.query >= query.len() {
            return Err(Error::IndexOutOfBounds {
                index: c.query,
                len: query.len(),
            });
        }
        if c.model >= model.len() {
            return Err(Error::IndexOutOfBounds {
                index: c.model,
                len: model.len(),
            });
        }
        if !seen.insert(c.query) {
            return Err(Error::param(format!("query point {} matched twice", c.query)));
        }
        sum += dist_sq(&query.points()[c.query], &model.points()[c.model]);
    }
    Ok(sum / query.len() as f64)
}

/// Single-direction Chamfer distance: sum over `source` of the squared
/// distance to the nearest `target` point.
pub fn scd(source: &PointCloud, target: &PointCloud) -> f64 {
    scd_to_tree(source, &KdTree::new(target.points()))
}

/// [`scd`] against a prebuilt tree over the target.
pub fn scd_to_tree(source: &PointCloud, target: &KdTree) -> f64 {
    source
        .points()
        .iter()
        .map(|p| target.nearest(p).map_or(0.0, |(_, d)| d))
        .sum()
}

pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    scd(a, b) + scd(b, a)
}

/// Symmetric matrix of pairwise Chamfer distances over a model set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    model_ids: Vec<String>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }
}

/// Pairwise Chamfer distances. The upper triangle is computed in parallel;
/// each entry is independent so the result does not depend on scheduling.
pub fn similarity_matrix(models: &[PointCloud]) -> Result<SimilarityMatrix> {
    let n = models.len();
    if n < 2 {
        return Err(Error::param(format!(
            "similarity matrix needs at least 2 models, got {n}"
        )));
    }
    let trees: Vec<KdTree> = models.par_iter().map(|m| KdTree::new(m.points())).collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let upper: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| scd_to_tree(&models[i], &trees[j]) + scd_to_tree(&models[j], &trees[i]))
        .collect();
    let mut values = vec![0.0; n * n];
    for (&(i, j), &d) in pairs.iter().zip(&upper) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    Ok(SimilarityMatrix {
        model_ids: models.iter().map(|m| m.id().to_string()).collect(),
        values,
    })
}

/// Rank-percentile and absolute Chamfer thresholds for positive/negative sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdThresholds {
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
}

impl Default for CdThresholds {
    fn default() -> Self {
        CdThresholds {
            tau_plus: 0.1,
            tau_minus: 0.5,
            delta_plus: 0.15,
            delta_minus: 0.20,
        }
    }
}

impl CdThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_plus > 0.0
            && self.tau_plus <= self.tau_minus
            && self.tau_minus <= 1.0
            && self.delta_plus <= self.delta_minus;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!(
                "thresholds must satisfy 0 < tau+ <= tau- <= 1 and delta+ <= delta-: {self:?}"
            )))
        }
    }
}

/// Splits candidates into positive and negative index sets by Chamfer rank.
///
/// `cds[i]` is the distance from the anchor to candidate `i`; `exclude`
/// removes the anchor itself when it is part of the candidate list. Ranks
/// are 1-based over the remaining candidates, ties broken by ascending id.
/// `population` is the database size the percentiles refer to. Both outputs
/// are listed in rank order.
pub fn classify_by_rank(
    cds: &[f64],
    ids: &[String],
    exclude: Option<usize>,
    population: usize,
    params: &CdThresholds,
) -> Result<(Vec<usize>, Vec<usize>)> {
    params.validate()?;
    if cds.len() != ids.len() {
        return Err(Error::param("distance and id lists differ in length"));
    }
    let mut order: Vec<usize> = (0..cds.len()).filter(|&i| Some(i) != exclude).collect();
    order.sort_by(|&a, &b| cds[a].total_cmp(&cds[b]).then_with(|| ids[a].cmp(&ids[b])));
    let pos_cut = params.tau_plus * population as f64;
    let neg_cut = params.tau_minus * population as f64;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (r, &i) in order.iter().enumerate() {
        let rank = (r + 1) as f64;
        if rank <= pos_cut && cds[i] <= params.delta_plus {
            positives.push(i);
        }
        if rank >= neg_cut && cds[i] >= params.delta_minus {
            negatives.push(i);
        }
    }
    Ok((positives, negatives))
}

/// Positive and negative model ids for `anchor`, anchor excluded from both.
pub fn positive_negative_sets(
    matrix: &SimilarityMatrix,
    anchor: usize,
    params: &CdThresholds,
) -> Result<(Vec<String>, Vec<String>)> {
    if anchor >= matrix.len() {
        return Err(Error::IndexOutOfBounds {
            index: anchor,
            len: matrix.len(),
        });
    }
    let (p, n) = classify_by_rank(
        matrix.row(anchor),
        matrix.model_ids(),
        Some(anchor),
        matrix.len(),
        params,
    )?;
    let ids = |v: Vec<usize>| v.into_iter().map(|i| matrix.model_ids[i].clone()).collect();
    Ok((ids(p), ids(n)))
}
