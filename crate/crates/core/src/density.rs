//! Sampling densities on the unit box Ω = (0,1)^d and i.i.d. point clouds.
//!
//! Three families are supported: the uniform density, a "channel" density
//! that dips to a level `h` on a vertical strip, and a continuum analogue of
//! the two-moons data set with mass concentrated near two half-circle arcs.
//! Every density is bounded above and below by positive constants and is
//! normalized to integrate to one over Ω.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Width of the linear ramps on either side of the channel floor.
pub const CHANNEL_RAMP: f64 = 0.02;
/// Smallest admissible density level inside the channel. A level of exactly
/// zero would make the weighted operator degenerate, so `h = 0` is clamped.
pub const CHANNEL_FLOOR: f64 = 0.01;

/// Geometry of the continuum two-moons density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoMoons {
    /// Ratio between the density on the arcs and far away from them.
    pub contrast: f64,
    /// Half-width of the tube around each arc carrying the extra mass.
    pub bandwidth: f64,
    pub radius: f64,
    /// Centers of the upper (first) and lower (second) half circles.
    pub centers: [[f64; 2]; 2],
}

impl Default for TwoMoons {
    fn default() -> Self {
        TwoMoons {
            contrast: 100.0,
            bandwidth: 0.04,
            radius: 0.25,
            centers: [[0.35, 0.45], [0.65, 0.55]],
        }
    }
}

impl TwoMoons {
    /// Distance from `x` to arc `which` (0: upper half circle, 1: lower half circle).
    pub fn arc_distance(&self, which: usize, x: &[f64]) -> f64 {
        let c = self.centers[which];
        let dx = x[0] - c[0];
        let dy = x[1] - c[1];
        let on_side = if which == 0 { dy >= 0.0 } else { dy <= 0.0 };
        if on_side {
            ((dx * dx + dy * dy).sqrt() - self.radius).abs()
        } else {
            let left = ((dx + self.radius).powi(2) + dy * dy).sqrt();
            let right = ((dx - self.radius).powi(2) + dy * dy).sqrt();
            left.min(right)
        }
    }

    /// Midpoint of arc `which`; the natural place for a single label.
    pub fn arc_midpoint(&self, which: usize) -> [f64; 2] {
        let c = self.centers[which];
        if which == 0 {
            [c[0], c[1] + self.radius]
        } else {
            [c[0], c[1] - self.radius]
        }
    }

    fn profile(&self, x: &[f64]) -> f64 {
        let b0 = bump(self.arc_distance(0, x) / self.bandwidth);
        let b1 = bump(self.arc_distance(1, x) / self.bandwidth);
        1.0 + (self.contrast - 1.0) * b0.max(b1)
    }
}

/// Smooth compactly supported bump with `bump(0) = 1` and support `[0, 1)`.
pub fn bump(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityKind {
    Uniform,
    /// Constant in every coordinate but the first; dips to level `h` on a
    /// centered strip of the given width.
    Channel { h: f64, width: f64 },
    TwoMoons(TwoMoons),
}

/// A normalized density on (0,1)^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    kind: DensityKind,
    dim: usize,
    /// Integral of the unnormalized profile over Ω.
    normalization: f64,
    /// Supremum of the unnormalized profile.
    peak: f64,
    /// Infimum of the unnormalized profile.
    floor: f64,
}

impl Density {
    pub fn uniform(dim: usize) -> Result<Self> {
        Self::new(DensityKind::Uniform, dim)
    }

    pub fn channel(dim: usize, h: f64, width: f64) -> Result<Self> {
        Self::new(DensityKind::Channel { h, width }, dim)
    }

    pub fn two_moons(moons: TwoMoons) -> Result<Self> {
        Self::new(DensityKind::TwoMoons(moons), 2)
    }

    pub fn new(kind: DensityKind, dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::validation("density dimension must be at least 1"));
        }
        let (normalization, peak, floor) = match &kind {
            DensityKind::Uniform => (1.0, 1.0, 1.0),
            DensityKind::Channel { h, width } => {
                if !(0.0..=1.0).contains(h) {
                    return Err(Error::validation(format!("channel level h={h} not in [0,1]")));
                }
                if !(*width > 0.0 && 0.5 * width + CHANNEL_RAMP < 0.5) {
                    return Err(Error::validation(format!("channel width {width} does not fit in (0,1)")));
                }
                let level = h.max(CHANNEL_FLOOR);
                let total = 1.0 - (1.0 - level) * (width + CHANNEL_RAMP);
                (total, 1.0, level)
            }
            DensityKind::TwoMoons(m) => {
                if dim != 2 {
                    return Err(Error::validation("the two-moons density is defined for d = 2 only"));
                }
                if !(m.contrast >= 1.0 && m.bandwidth > 0.0 && m.radius > 0.0) {
                    return Err(Error::validation("two-moons parameters must satisfy contrast >= 1, bandwidth > 0, radius > 0"));
                }
                let total = quadrature::unit_square(|x, y| m.profile(&[x, y]), 512);
                (total, m.contrast, 1.0)
            }
        };
        Ok(Density { kind, dim, normalization, peak, floor })
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Integral of the unnormalized profile over Ω.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Upper bound ρ⁺ of the normalized density.
    pub fn upper_bound(&self) -> f64 {
        self.peak / self.normalization
    }

    /// Lower bound ρ⁻ of the normalized density.
    pub fn lower_bound(&self) -> f64 {
        self.floor / self.normalization
    }

    /// Unnormalized profile. Callers must pass a point of the closed box.
    pub fn profile(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DensityKind::Uniform => 1.0,
            DensityKind::Channel { h, width } => channel_profile(x[0], h.max(CHANNEL_FLOOR), *width),
            DensityKind::TwoMoons(m) => m.profile(x),
        }
    }

    /// Normalized density at a point of the closed unit box.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Domain(format!("point has dimension {}, expected {}", x.len(), self.dim)));
        }
        if x.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain(format!("point {x:?} lies outside the closed unit box")));
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.profile(x) / self.normalization
    }

    /// Analytic CDF of the first-coordinate marginal, when available.
    pub fn marginal_cdf(&self, t: f64) -> Option<f64> {
        let t = t.clamp(0.0, 1.0);
        match &self.kind {
            DensityKind::Uniform => Some(t),
            DensityKind::Channel { h, width } => {
                Some(channel_profile_integral(t, h.max(CHANNEL_FLOOR), *width) / self.normalization)
            }
            DensityKind::TwoMoons(_) => None,
        }
    }

    /// Draws `n` i.i.d. points by rejection against the uniform envelope ρ⁺.
    pub fn sample(&self, n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = self.sample_with(n, &mut rng);
        cloud.seed = seed;
        cloud
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PointCloud {
        let mut points = Vec::with_capacity(n * self.dim);
        let mut x = vec![0.0; self.dim];
        let mut accepted = 0;
        while accepted < n {
            for c in x.iter_mut() {
                *c = open_unit(rng);
            }
            let u: f64 = rng.random();
            if u * self.peak < self.profile(&x) {
                points.extend_from_slice(&x);
                accepted += 1;
            }
        }
        PointCloud { dim: self.dim, points, seed: 0 }
    }
}

/// Uniform draw from the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

fn channel_profile(t: f64, level: f64, width: f64) -> f64 {
    let half = 0.5 * width;
    let r = (t - 0.5).abs();
    if r <= half {
        level
    } else if r >= half + CHANNEL_RAMP {
        1.0
    } else {
        level + (1.0 - level) * (r - half) / CHANNEL_RAMP
    }
}

/// ∫₀ᵗ of the channel profile, piecewise quadratic.
fn channel_profile_integral(t: f64, level: f64, width: f64) -> f64 {
    let half = 0.5 * width;
    // Deficit 1 - profile as a function of the signed offset s = t - 0.5.
    let deficit_from_center = |s: f64| -> f64 {
        // ∫₀^{|s|} (1 - profile) dr, odd extension in s.
        let r = s.abs();
        let flat = r.min(half) * (1.0 - level);
        let ramp = if r > half {
            let a = (r - half).min(CHANNEL_RAMP);
            (1.0 - level) * (a - a * a / (2.0 * CHANNEL_RAMP))
        } else {
            0.0
        };
        (flat + ramp).copysign(s)
    };
    t - (deficit_from_center(t - 0.5) - deficit_from_center(-0.5))
}

/// An i.i.d. sample of points in (0,1)^d, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<f64>,
    /// Seed used to draw the cloud (0 for clouds assembled by hand).
    pub seed: u64,
}

impl PointCloud {
    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::validation("point buffer length is not a multiple of the dimension"));
        }
        Ok(PointCloud { dim, points, seed: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// A new cloud with `fixed` points placed in front of this one.
    pub fn prepend(&self, fixed: &[Vec<f64>]) -> Result<Self> {
        let mut points = Vec::with_capacity(self.points.len() + fixed.len() * self.dim);
        for p in fixed {
            if p.len() != self.dim {
                return Err(Error::validation("fixed point has the wrong dimension"));
            }
            points.extend_from_slice(p);
        }
        points.extend_from_slice(&self.points);
        Ok(PointCloud { dim: self.dim, points, seed: self.seed })
    }

    /// Writes one point per row, coordinates comma-separated, with an
    /// optional extra column.
    pub fn write_csv<W: Write>(&self, mut out: W, extra: Option<(&str, &[f64])>) -> std::io::Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        if let Some((name, _)) = extra {
            header.push(name.to_string());
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, p) in self.iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            if let Some((_, col)) = extra {
                row.push(col[i].to_string());
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_density_is_one() {
        let rho = Density::uniform(2).unwrap();
        assert_eq!(rho.eval(&[0.3, 0.7]).unwrap(), 1.0);
    }

    #[test]
    fn eval_rejects_points_outside_the_box() {
        let rho = Density::uniform(2).unwrap();
        assert!(matches!(rho.eval(&[1.2, 0.5]), Err(Error::Domain(_))));
        assert!(matches!(rho.eval(&[0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn channel_without_depth_is_uniform() {
        let ch = Density::channel(2, 1.0, 0.1).unwrap();
        for &x in &[0.0, 0.2, 0.45, 0.5, 0.53, 0.9, 1.0] {
            assert_eq!(ch.eval(&[x, 0.3]).unwrap(), 1.0);
        }
    }

    #[test]
    fn channel_is_constant_off_the_first_axis() {
        let ch = Density::channel(3, 0.25, 0.1).unwrap();
        let a = ch.eval(&[0.46, 0.1, 0.9]).unwrap();
        let b = ch.eval(&[0.46, 0.8, 0.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn channel_marginal_matches_quadrature() {
        let ch = Density::channel(2, 0.3, 0.1).unwrap();
        for &t in &[0.1, 0.44, 0.46, 0.5, 0.53, 0.57, 1.0] {
            // Integrate piecewise between the profile's kinks.
            let mut knots = vec![0.0];
            knots.extend([0.43, 0.45, 0.55, 0.57].iter().copied().filter(|&k| k < t));
            knots.push(t);
            let q: f64 = knots
                .windows(2)
                .map(|w| quadrature::adaptive_simpson(&|s: f64| ch.eval_unchecked(&[s, 0.5]), w[0], w[1], 1e-13))
                .sum();
            assert!((q - ch.marginal_cdf(t).unwrap()).abs() < 1e-10, "t={t}: {q} vs {}", ch.marginal_cdf(t).unwrap());
        }
        assert!((ch.marginal_cdf(1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_moons_contrast_on_and_off_the_curve() {
        let m = TwoMoons::default();
        let rho = Density::two_moons(m.clone()).unwrap();
        let on = rho.eval(&m.arc_midpoint(0)).unwrap();
        let off = rho.eval(&[0.05, 0.05]).unwrap();
        assert!((on / off - 100.0).abs() < 1e-9);
        assert!(rho.lower_bound() > 0.0);
    }

    #[test]
    fn sampling_is_reproducible_and_inside_the_box() {
        let rho = Density::uniform(2).unwrap();
        let a = rho.sample(4, 7);
        assert_eq!(a.len(), 4);
        assert!(a.as_flat().iter().all(|&c| c > 0.0 && c < 1.0));
        assert_eq!(a, rho.sample(4, 7));
        assert_ne!(a, rho.sample(4, 8));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(Density::channel(2, 1.5, 0.1).is_err());
        assert!(Density::channel(2, 0.5, 0.99).is_err());
        assert!(Density::new(DensityKind::TwoMoons(TwoMoons::default()), 3).is_err());
    }
}
