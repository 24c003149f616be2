//! Synthetic objects with exact mirror symmetry.
//!
//! A shape is a union of axis-aligned boxes. Points are sampled on the box
//! surfaces inside one fundamental domain (the part with non-negative
//! coordinates along every mirror axis) and then reflected into the other
//! domains, so class `c` holds the reflections selected by the bits of `c`.
//! Each face receives a share of the points proportional to its area and
//! draws them from its own random stream, so sampled points move smoothly
//! as the shape parameters change.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureSource};
use crate::geometry::{random_rotation, Point, PointCloud, Pose};
use crate::symmetry::SymmetrySplit;

/// Fewest points an occluded cloud may keep.
pub const MIN_POINTS: usize = 50;
const FACE_STREAM: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Seat, backrest and four legs; mirror plane x = 0.
    ChairLike,
    /// Top, lower shelf and four legs; mirror planes x = 0 and y = 0.
    TableLike,
    /// Closed box with a knob on one side; mirror planes x = 0 and z = 0.
    Box,
}

impl Family {
    pub fn symmetry_classes(self) -> usize {
        match self {
            Family::ChairLike => 2,
            Family::TableLike | Family::Box => 4,
        }
    }

    fn mirror_axes(self) -> &'static [usize] {
        match self {
            Family::ChairLike => &[0],
            Family::TableLike => &[0, 1],
            Family::Box => &[0, 2],
        }
    }

    /// Parameter names and default values.
    pub fn default_params(self) -> &'static [(&'static str, f64)] {
        match self {
            Family::ChairLike => &[
                ("seat_width", 0.5),
                ("seat_depth", 0.45),
                ("seat_height", 0.45),
                ("seat_thickness", 0.05),
                ("back_height", 0.5),
                ("back_thickness", 0.05),
                ("leg_thickness", 0.05),
            ],
            Family::TableLike => &[
                ("top_width", 0.8),
                ("top_depth", 0.5),
                ("height", 0.6),
                ("top_thickness", 0.05),
                ("leg_thickness", 0.05),
                ("shelf_height", 0.15),
            ],
            Family::Box => &[
                ("width", 0.6),
                ("depth", 0.4),
                ("height", 0.3),
                ("knob_size", 0.25),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub symmetry_classes: usize,
    /// Overrides of the family's default parameters.
    #[serde(default)]
    pub shape_params: BTreeMap<String, f64>,
    pub points: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub occlusion_fraction: f64,
    /// Apply a random rotation about the origin.
    #[serde(default = "default_true")]
    pub rotate: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl SyntheticSpec {
    pub fn new(family: Family, points: usize, seed: u64) -> Self {
        SyntheticSpec {
            family,
            symmetry_classes: family.symmetry_classes(),
            shape_params: BTreeMap::new(),
            points,
            noise_sigma: 0.0,
            occlusion_fraction: 0.0,
            rotate: true,
            seed,
        }
    }

    /// Default parameters with this spec's overrides applied.
    pub fn resolved_params(&self) -> Result<BTreeMap<String, f64>> {
        let mut out: BTreeMap<String, f64> = self
            .family
            .default_params()
            .iter()
            .map(|&(k, v)| (k.to_string(), v))
            .collect();
        for (k, &v) in &self.shape_params {
            if !out.contains_key(k) {
                return Err(Error::param(format!("unknown shape parameter '{k}' for {:?}", self.family)));
            }
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("shape parameter '{k}' must be positive")));
            }
            out.insert(k.clone(), v);
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.symmetry_classes != self.family.symmetry_classes() {
            return Err(Error::param(format!(
                "{:?} has {} symmetry classes, spec declares {}",
                self.family,
                self.family.symmetry_classes(),
                self.symmetry_classes
            )));
        }
        if self.points < self.symmetry_classes {
            return Err(Error::param("point count is below the class count"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::param("noise_sigma must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.occlusion_fraction) {
            return Err(Error::param("occlusion_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Generator output. `labels[i]` is the true class of point `i` and
/// points sharing an `orbits` value are reflections of one another.
#[derive(Debug, Clone)]
pub struct SyntheticObject {
    pub cloud: PointCloud,
    /// Applied pose: canonical shape coordinates to cloud coordinates.
    pub pose: Pose,
    pub split: SymmetrySplit,
    pub labels: Vec<usize>,
    pub orbits: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: [f64; 3],
    hi: [f64; 3],
}

fn aabb(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Aabb {
    Aabb {
        lo: [x.0, y.0, z.0],
        hi: [x.1, y.1, z.1],
    }
}

fn shape_boxes(family: Family, p: &BTreeMap<String, f64>) -> Vec<Aabb> {
    let g = |k: &str| p[k];
    match family {
        Family::ChairLike => {
            let (w, d, h) = (g("seat_width") / 2.0, g("seat_depth") / 2.0, g("seat_height"));
            let (ts, tb, tl) = (g("seat_thickness"), g("back_thickness"), g("leg_thickness"));
            let top = h + ts;
            let mut out = vec![
                aabb((-w, w), (-d, d), (h, top)),
                aabb((-w, w), (d - tb, d), (top, top + g("back_height"))),
            ];
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    let xs = ordered(sx * w, sx * (w - tl));
                    let ys = ordered(sy * d, sy * (d - tl));
                    out.push(aabb(xs, ys, (0.0, h)));
                }
            }
            out
        }
        Family::TableLike => {
            let (w, d, h) = (g("top_width") / 2.0, g("top_depth") / 2.0, g("height"));
            let (tt, tl, sh) = (g("top_thickness"), g("leg_thickness"), g("shelf_height"));
            let mut out = vec![
                aabb((-w, w), (-d, d), (h - tt, h)),
                aabb((-(w - tl), w - tl), (-(d - tl), d - tl), (sh, sh + 0.5 * tt)),
            ];
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    let xs = ordered(sx * w, sx * (w - tl));
                    let ys = ordered(sy * d, sy * (d - tl));
                    out.push(aabb(xs, ys, (0.0, h - tt)));
                }
            }
            out
        }
        Family::Box => {
            let (w, d, h) = (g("width") / 2.0, g("depth") / 2.0, g("height") / 2.0);
            let k = g("knob_size") / 2.0;
            vec![
                aabb((-w, w), (-d, d), (-h, h)),
                aabb((-k, k), (d, d + 2.0 * k), (-k, k)),
            ]
        }
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    (a.min(b), a.max(b))
}

/// Axis-aligned rectangle on a box face, clipped to the fundamental domain.
struct Face {
    axis: usize,
    coord: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Face {
    fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]).max(0.0) * (self.hi[1] - self.lo[1]).max(0.0)
    }

    fn other_axes(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }
}

fn domain_faces(boxes: &[Aabb], mirrors: &[usize]) -> Vec<Face> {
    let mut faces = Vec::new();
    for b in boxes {
        for axis in 0..3 {
            for coord in [b.lo[axis], b.hi[axis]] {
                if mirrors.contains(&axis) && coord <= 0.0 {
                    continue;
                }
                let mut face = Face {
                    axis,
                    coord,
                    lo: [0.0; 2],
                    hi: [0.0; 2],
                };
                let others = face.other_axes();
                for (slot, &a) in others.iter().enumerate() {
                    let lo = if mirrors.contains(&a) { b.lo[a].max(0.0) } else { b.lo[a] };
                    face.lo[slot] = lo;
                    face.hi[slot] = b.hi[a];
                }
                if face.area() > 0.0 {
                    faces.push(face);
                }
            }
        }
    }
    faces
}

fn reflect(p: &Point, class: usize, mirrors: &[usize]) -> Point {
    let mut q = *p;
    for (bit, &axis) in mirrors.iter().enumerate() {
        if class & (1 << bit) != 0 {
            q[axis] = -q[axis];
        }
    }
    q
}

/// Points per face proportional to area, by largest remainder.
fn face_counts(areas: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = areas.iter().sum();
    let quotas: Vec<f64> = areas.iter().map(|a| a / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &f in order.iter().take(missing) {
        counts[f] += 1;
    }
    counts
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Builds, noises, occludes and rotates one synthetic object.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticObject> {
    spec.validate()?;
    let params = spec.resolved_params()?;
    let g = spec.symmetry_classes;
    let mirrors = spec.family.mirror_axes();
    let faces = domain_faces(&shape_boxes(spec.family, &params), mirrors);
    let areas: Vec<f64> = faces.iter().map(Face::area).collect();

    let per_class = spec.points / g;
    let mut domain = Vec::with_capacity(per_class);
    for (f, (face, &count)) in faces.iter().zip(&face_counts(&areas, per_class)).enumerate() {
        let mut rng = stream(spec.seed, FACE_STREAM + f as u64);
        let others = face.other_axes();
        for _ in 0..count {
            let mut p = Point::zeros();
            p[face.axis] = face.coord;
            for (slot, &a) in others.iter().enumerate() {
                let u: f64 = rng.random();
                p[a] = face.lo[slot] + u * (face.hi[slot] - face.lo[slot]);
            }
            domain.push(p);
        }
    }

    let mut points = Vec::with_capacity(per_class * g);
    let mut labels = Vec::with_capacity(per_class * g);
    let mut orbits = Vec::with_capacity(per_class * g);
    for class in 0..g {
        for (k, p) in domain.iter().enumerate() {
            points.push(reflect(p, class, mirrors));
            labels.push(class);
            orbits.push(k);
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param(e.to_string()))?;
        let mut rng = stream(spec.seed, 1);
        for p in points.iter_mut() {
            for a in 0..3 {
                p[a] += normal.sample(&mut rng);
            }
        }
    }

    if spec.occlusion_fraction > 0.0 {
        let mut rng = stream(spec.seed, 2);
        let dir = random_rotation(&mut rng).column(0).into_owned();
        let remove = (spec.occlusion_fraction * points.len() as f64).floor() as usize;
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| dir.dot(&points[b]).total_cmp(&dir.dot(&points[a])).then(a.cmp(&b)));
        let mut keep = vec![true; points.len()];
        for &i in &order[..remove] {
            keep[i] = false;
        }
        let remaining = points.len() - remove;
        if remaining < MIN_POINTS {
            return Err(Error::OverOccluded { remaining });
        }
        let mut k = 0;
        points.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        let mut k = 0;
        labels.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        let mut k = 0;
        orbits.retain(|_| {
            k += 1;
            keep[k - 1]
        });
    } else if points.len() < MIN_POINTS {
        return Err(Error::OverOccluded {
            remaining: points.len(),
        });
    }

    let pose = if spec.rotate {
        Pose::new(random_rotation(&mut stream(spec.seed, 3)), Point::zeros())?
    } else {
        Pose::identity()
    };
    let posed: Vec<Point> = points.iter().map(|p| pose.transform_point(p)).collect();
    let cloud = PointCloud::new(format!("{:?}-{}", spec.family, spec.seed).to_lowercase(), posed)?;
    let split = SymmetrySplit::from_labels(&cloud, labels.clone(), g)?;
    Ok(SyntheticObject {
        cloud,
        pose,
        split,
        labels,
        orbits,
    })
}

/// Replaces every row by the normalized mean of the rows in its orbit,
/// making features exactly equal across reflections.
pub fn symmetrize_features(features: &FeatureSet, orbits: &[usize]) -> Result<FeatureSet> {
    if orbits.len() != features.len() {
        return Err(Error::FeatureCountMismatch {
            expected: orbits.len(),
            found: features.len(),
        });
    }
    let dim = features.dim();
    let n_orbits = orbits.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0f64; n_orbits * dim];
    for (i, &o) in orbits.iter().enumerate() {
        for (k, &v) in features.row(i).iter().enumerate() {
            sums[o * dim + k] += v as f64;
        }
    }
    let mut data = Vec::with_capacity(features.len() * dim);
    for &o in orbits {
        data.extend_from_slice(&sums[o * dim..(o + 1) * dim]);
    }
    FeatureSet::from_rows(&data, dim, FeatureSource::External)
}

/// Fraction of points whose label agrees with the truth under the best
/// relabeling of the predicted classes.
pub fn label_agreement(truth: &[usize], predicted: &[usize], classes: usize) -> f64 {
    let mut best = 0usize;
    let mut perm: Vec<usize> = (0..classes).collect();
    loop {
        let hits = truth.iter().zip(predicted).filter(|(t, p)| perm[**p] == **t).count();
        best = best.max(hits);
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best as f64 / truth.len().max(1) as f64
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
