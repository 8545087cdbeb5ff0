//! Labelling models and the sign function.
//!
//! Model 1 labels every sample falling in `Ω⁺ ∪ Ω⁻`, so the labelled count
//! grows with `n` and the fidelity weight is `r_n = 1/n`. Model 2 fixes a
//! finite set of labelled points, prepended to the cloud, with `r_n = 1`.

use serde::{Deserialize, Serialize};

use crate::density::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Region {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => dist(center, x) < *radius,
            Region::Box { lo, hi } => x.iter().zip(lo).zip(hi).all(|((c, l), h)| c >= l && c <= h),
        }
    }

    fn dimension(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::Box { lo, .. } => lo.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Region::Ball { radius, .. } if !(*radius > 0.0) => Err(Error::validation("ball radius must be positive")),
            Region::Box { lo, hi } if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| l > h) => {
                Err(Error::validation("box corners are inconsistent"))
            }
            _ => Ok(()),
        }
    }

    /// Euclidean distance between two regions (zero when they touch).
    pub fn separation(&self, other: &Region) -> f64 {
        match (self, other) {
            (Region::Ball { center: a, radius: ra }, Region::Ball { center: b, radius: rb }) => (dist(a, b) - ra - rb).max(0.0),
            (Region::Ball { center, radius }, Region::Box { lo, hi }) | (Region::Box { lo, hi }, Region::Ball { center, radius }) => {
                (box_point_distance(lo, hi, center) - radius).max(0.0)
            }
            (Region::Box { lo: l1, hi: h1 }, Region::Box { lo: l2, hi: h2 }) => {
                let mut s = 0.0;
                for a in 0..l1.len() {
                    let gap = (l2[a] - h1[a]).max(l1[a] - h2[a]).max(0.0);
                    s += gap * gap;
                }
                s.sqrt()
            }
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn box_point_distance(lo: &[f64], hi: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in 0..x.len() {
        let gap = (lo[a] - x[a]).max(x[a] - hi[a]).max(0.0);
        s += gap * gap;
    }
    s.sqrt()
}

/// A labelled location for Model 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLabel {
    pub point: Vec<f64>,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum LabelModel {
    /// Labels every sample in `plus` (+1) or `minus` (−1).
    Regions { plus: Vec<Region>, minus: Vec<Region> },
    /// A fixed set of labelled points prepended to the cloud.
    Fixed { points: Vec<FixedLabel> },
}

impl LabelModel {
    /// Model 1 with two balls.
    pub fn balls(plus: [f64; 2], minus: [f64; 2], radius: f64) -> Self {
        LabelModel::Regions {
            plus: vec![Region::Ball { center: plus.to_vec(), radius }],
            minus: vec![Region::Ball { center: minus.to_vec(), radius }],
        }
    }

    /// Model 2 with one `+1` and one `−1` point.
    pub fn pair(plus: &[f64], minus: &[f64]) -> Self {
        LabelModel::Fixed {
            points: vec![
                FixedLabel { point: plus.to_vec(), label: 1.0 },
                FixedLabel { point: minus.to_vec(), label: -1.0 },
            ],
        }
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            LabelModel::Regions { .. } => LabelKind::Model1,
            LabelModel::Fixed { .. } => LabelKind::Model2,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            LabelModel::Regions { plus, minus } => {
                for r in plus.iter().chain(minus) {
                    r.validate()?;
                    if r.dimension() != dim {
                        return Err(Error::validation("label region dimension differs from the cloud"));
                    }
                }
                for p in plus {
                    for m in minus {
                        if p.separation(m) <= 0.0 {
                            return Err(Error::validation("Ω⁺ and Ω⁻ must be separated by a positive distance"));
                        }
                    }
                }
                Ok(())
            }
            LabelModel::Fixed { points } => {
                if points.is_empty() {
                    return Err(Error::validation("Model 2 needs at least one labelled point"));
                }
                for p in points {
                    if p.point.len() != dim {
                        return Err(Error::validation("labelled point dimension differs from the cloud"));
                    }
                    if p.label != 1.0 && p.label != -1.0 {
                        return Err(Error::validation("labels must be ±1"));
                    }
                    if p.point.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
                        return Err(Error::validation("labelled points must lie inside the unit box"));
                    }
                }
                for (i, p) in points.iter().enumerate() {
                    if points[..i].iter().any(|q| q.point == p.point) {
                        return Err(Error::validation("labelled points must be distinct"));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Model1,
    Model2,
}

/// Labelled indices `Z′`, labels `y_j = ±1` and the fidelity weight `r_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    kind: LabelKind,
    indices: Vec<usize>,
    y: Vec<f64>,
    r_n: f64,
    n: usize,
}

impl LabelSet {
    /// Builds a label set directly; `r_n` follows the model.
    pub fn new(kind: LabelKind, n: usize, indices: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        if indices.len() != y.len() {
            return Err(Error::validation("label indices and values differ in length"));
        }
        if indices.iter().any(|&i| i >= n) {
            return Err(Error::validation("label index out of range"));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::validation("labels must be ±1"));
        }
        let r_n = match kind {
            LabelKind::Model1 => 1.0 / n as f64,
            LabelKind::Model2 => 1.0,
        };
        Ok(LabelSet { kind, indices, y, r_n, n })
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn r_n(&self) -> f64 {
        self.r_n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of points in the labelled cloud.
    pub fn cloud_len(&self) -> usize {
        self.n
    }

    /// Per-point label column: `y_j` on `Z′`, zero elsewhere.
    pub fn column(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for (&i, &y) in self.indices.iter().zip(&self.y) {
            c[i] = y;
        }
        c
    }
}

/// Labels `cloud` under `model`; Model 2 returns the cloud with its fixed
/// points prepended.
pub fn assign_labels(cloud: &PointCloud, model: &LabelModel) -> Result<(PointCloud, LabelSet)> {
    model.validate(cloud.dim())?;
    match model {
        LabelModel::Regions { plus, minus } => {
            let mut indices = Vec::new();
            let mut y = Vec::new();
            for (i, x) in cloud.iter().enumerate() {
                if plus.iter().any(|r| r.contains(x)) {
                    indices.push(i);
                    y.push(1.0);
                } else if minus.iter().any(|r| r.contains(x)) {
                    indices.push(i);
                    y.push(-1.0);
                }
            }
            if indices.is_empty() {
                log::warn!("no sample fell in the labelled regions; Z′ is empty");
            }
            let set = LabelSet::new(LabelKind::Model1, cloud.len(), indices, y)?;
            Ok((cloud.clone(), set))
        }
        LabelModel::Fixed { points } => {
            let fixed: Vec<Vec<f64>> = points.iter().map(|p| p.point.clone()).collect();
            let merged = cloud.prepend(&fixed)?;
            let set = LabelSet::new(
                LabelKind::Model2,
                merged.len(),
                (0..points.len()).collect(),
                points.iter().map(|p| p.label).collect(),
            )?;
            Ok((merged, set))
        }
    }
}

/// `S(t)`: −1, 0 or +1.
#[inline]
pub fn sign_scalar(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Elementwise sign with `S(0) = 0`.
pub fn sign(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&t| sign_scalar(t)).collect()
}
