//! TL^p distances between (measure, function) pairs.
//!
//! `d_p((μ,f),(ν,g))^p = inf_π ∫ |x − y|^p + |f(x) − g(y)|^p dπ(x, y)`. For two
//! uniform empirical measures of the same size the infimum is attained at a
//! permutation and is solved exactly by the Hungarian method. For general
//! weighted measures an admissible coupling built along a space-filling curve
//! gives an upper bound.

use crate::continuum::Grid;
use crate::density::PointCloud;
use crate::error::{Error, Result};

/// Largest atom count for the exact solver.
pub const EXACT_LIMIT: usize = 256;

/// A discrete probability measure with a function on its atoms.
#[derive(Debug, Clone)]
pub struct TlpPair {
    dim: usize,
    points: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl TlpPair {
    /// Uniform empirical measure on `cloud` carrying `values`.
    pub fn empirical(cloud: &PointCloud, values: &[f64]) -> Result<Self> {
        let m = cloud.len();
        if m == 0 {
            return Err(Error::validation("empty measure"));
        }
        TlpPair::build(cloud.dim(), cloud.as_flat().to_vec(), values.to_vec(), vec![1.0 / m as f64; m], true)
    }

    /// Grid nodes weighted by the quadrature weights `ρ(x_i) hᵈ`, renormalized.
    pub fn grid(grid: &Grid, rho: &[f64], values: &[f64]) -> Result<Self> {
        let total: f64 = rho.iter().sum();
        let weights = rho.iter().map(|r| r / total).collect();
        TlpPair::build(grid.dim(), grid.nodes().as_flat().to_vec(), values.to_vec(), weights, false)
    }

    pub fn new(dim: usize, points: Vec<f64>, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        let uniform = weights.iter().all(|&w| (w * m as f64 - 1.0).abs() < 1e-12);
        TlpPair::build(dim, points, values, weights, uniform)
    }

    fn build(dim: usize, points: Vec<f64>, values: Vec<f64>, weights: Vec<f64>, uniform: bool) -> Result<Self> {
        let m = weights.len();
        if points.len() != m * dim || values.len() != m {
            return Err(Error::validation("measure atoms, values and weights differ in length"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("function values must be finite"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::validation("measure weights must be non-negative and sum to 1"));
        }
        Ok(TlpPair { dim, points, values, weights, uniform })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn cost(&self, i: usize, other: &TlpPair, j: usize, p: f64) -> f64 {
        let dx: f64 = self.point(i).iter().zip(other.point(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        dx.powf(p) + (self.values[i] - other.values[j]).abs().powf(p)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::validation("TL^p exponent must satisfy p ≥ 1"));
    }
    Ok(())
}

/// Exact TL^p distance between two uniform empirical pairs of equal size.
pub fn tlp_exact(a: &TlpPair, b: &TlpPair, p: f64) -> Result<f64> {
    check_p(p)?;
    if a.dim != b.dim {
        return Err(Error::validation("measures live in different dimensions"));
    }
    if a.len() != b.len() {
        return Err(Error::validation("exact TL^p needs equal atom counts; use tlp_map_bound"));
    }
    if !a.uniform || !b.uniform {
        return Err(Error::validation("exact TL^p needs uniform empirical measures"));
    }
    let m = a.len();
    if m > EXACT_LIMIT {
        return Err(Error::validation(format!("exact TL^p is limited to {EXACT_LIMIT} atoms")));
    }
    let cost: Vec<f64> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| a.cost(i, b, j, p)).collect();
    let assignment = hungarian(&cost, m);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    Ok((total / m as f64).powf(1.0 / p))
}

/// Minimum-cost perfect matching on a square cost matrix (row-major).
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[f64], m: usize) -> Vec<usize> {
    // Potentials method on a 1-indexed square matrix.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0usize; m];
    for j in 1..=m {
        if matched[j] > 0 {
            rows[matched[j] - 1] = j - 1;
        }
    }
    rows
}

/// Transport and function parts of a coupling cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapBound {
    /// `(∫ |x − y|^p dπ)^{1/p}`.
    pub transport: f64,
    /// `(∫ |f(x) − g(y)|^p dπ)^{1/p}`.
    pub function: f64,
    /// `(transport^p + function^p)^{1/p}`, an upper bound on the TL^p distance.
    pub total: f64,
}

/// Upper bound on TL^p from the monotone coupling of both measures ordered
/// along a space-filling curve (Hilbert in 2-D, Morton otherwise).
///
/// The coupling transports mass in curve order, so it is admissible for any
/// pair of discrete probability measures.
pub fn tlp_map_bound(a: &TlpPair, b: &TlpPair, p: f64) -> Result<MapBound> {
    check_p(p)?;
    if a.dim != b.dim {
        return Err(Error::validation("measures live in different dimensions"));
    }
    let order_a = curve_order(a);
    let order_b = curve_order(b);
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut left_a = a.weights[order_a[0]];
    let mut left_b = b.weights[order_b[0]];
    let (mut tx, mut tf) = (0.0, 0.0);
    loop {
        let i = order_a[ia];
        let j = order_b[ib];
        let mass = left_a.min(left_b);
        if mass > 0.0 {
            let dx: f64 = a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            tx += mass * dx.powf(p);
            tf += mass * (a.values[i] - b.values[j]).abs().powf(p);
        }
        left_a -= mass;
        left_b -= mass;
        let a_done = left_a <= 1e-15;
        let b_done = left_b <= 1e-15;
        if a_done {
            ia += 1;
        }
        if b_done {
            ib += 1;
        }
        if ia == order_a.len() || ib == order_b.len() {
            break;
        }
        if a_done {
            left_a = a.weights[order_a[ia]];
        }
        if b_done {
            left_b = b.weights[order_b[ib]];
        }
    }
    Ok(MapBound { transport: tx.powf(1.0 / p), function: tf.powf(1.0 / p), total: (tx + tf).powf(1.0 / p) })
}

fn curve_order(m: &TlpPair) -> Vec<usize> {
    let keys: Vec<u64> = (0..m.len()).map(|i| curve_key(m.point(i))).collect();
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    order
}

fn curve_key(x: &[f64]) -> u64 {
    let bits = (60 / x.len().max(1)).min(31) as u32;
    let side = 1u64 << bits;
    let q: Vec<u64> = x.iter().map(|&c| ((c.clamp(0.0, 1.0) * side as f64) as u64).min(side - 1)).collect();
    if q.len() == 2 {
        hilbert_d2(q[0], q[1], bits)
    } else {
        let mut key = 0u64;
        for b in (0..bits).rev() {
            for c in &q {
                key = (key << 1) | ((c >> b) & 1);
            }
        }
        key
    }
}

/// Distance along the Hilbert curve of order `bits` through cell `(x, y)`.
fn hilbert_d2(mut x: u64, mut y: u64, bits: u32) -> u64 {
    let n = 1u64 << bits;
    let mut d = 0u64;
    let mut s = n >> 1;
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = s.wrapping_mul(2).wrapping_sub(1).wrapping_sub(x) & (n - 1);
                y = s.wrapping_mul(2).wrapping_sub(1).wrapping_sub(y) & (n - 1);
            }
            std::mem::swap(&mut x, &mut y);
        }
        s >>= 1;
    }
    d
}

/// `((1/n) Σ_j |u_n(x_j) − û(x_j)|²)^{1/2}` with `û` interpolated from the grid.
pub fn discrete_vs_continuum_error(u_n: &[f64], cloud: &PointCloud, grid: &Grid, u_hat: &[f64]) -> Result<f64> {
    if u_n.len() != cloud.len() || u_hat.len() != grid.len() {
        return Err(Error::validation("function and support sizes differ"));
    }
    let n = cloud.len() as f64;
    let s: f64 = cloud.iter().zip(u_n).map(|(x, &v)| (v - grid.interpolate(u_hat, x)).powi(2)).sum();
    Ok((s / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Density;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(m: usize, seed: u64) -> TlpPair {
        let cloud = Density::uniform(2).unwrap().sample(m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
        let f: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        TlpPair::empirical(&cloud, &f).unwrap()
    }

    #[test]
    fn identical_pairs_are_at_distance_zero() {
        let a = random_pair(20, 3);
        assert!(tlp_exact(&a, &a, 2.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn single_atoms() {
        let c = PointCloud::from_points(2, vec![0.3, 0.4]).unwrap();
        let a = TlpPair::empirical(&c, &[1.0]).unwrap();
        let b = TlpPair::empirical(&c, &[3.5]).unwrap();
        assert!((tlp_exact(&a, &b, 1.0).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn unequal_sizes_need_the_bound() {
        assert!(tlp_exact(&random_pair(5, 1), &random_pair(6, 2), 2.0).is_err());
        let b = tlp_map_bound(&random_pair(5, 1), &random_pair(6, 2), 2.0).unwrap();
        assert!(b.total > 0.0);
    }

    #[test]
    fn hilbert_curve_visits_every_cell_once() {
        let mut seen = vec![false; 64];
        for x in 0..8 {
            for y in 0..8 {
                let d = hilbert_d2(x, y, 3) as usize;
                assert!(!seen[d]);
                seen[d] = true;
            }
        }
    }

    #[test]
    fn zero_functions_leave_only_transport() {
        let cloud = Density::uniform(2).unwrap().sample(200, 4);
        let grid = Grid::new(2, 16).unwrap();
        let a = TlpPair::empirical(&cloud, &vec![0.0; 200]).unwrap();
        let b = TlpPair::grid(&grid, &vec![1.0; grid.len()], &vec![0.0; grid.len()]).unwrap();
        let bound = tlp_map_bound(&a, &b, 2.0).unwrap();
        assert_eq!(bound.function, 0.0);
        assert!((bound.total - bound.transport).abs() < 1e-15);
    }

    #[test]
    fn interpolated_grid_function_has_zero_error() {
        let grid = Grid::new(2, 20).unwrap();
        let cloud = Density::uniform(2).unwrap().sample(50, 1);
        let f: Vec<f64> = (0..grid.len()).map(|i| grid.node(i)[0].sin()).collect();
        let at = crate::continuum::interpolate_to_points(&grid, &f, &cloud);
        assert!(discrete_vs_continuum_error(&at, &cloud, &grid, &f).unwrap() < 1e-15);
        let shifted: Vec<f64> = at.iter().map(|v| v + 0.25).collect();
        assert!((discrete_vs_continuum_error(&shifted, &cloud, &grid, &f).unwrap() - 0.25).abs() < 1e-12);
    }

    fn permutations(m: usize) -> Vec<Vec<usize>> {
        if m == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(m - 1) {
            for k in 0..m {
                let mut q = p.clone();
                q.insert(k, m - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn hungarian_matches_brute_force_over_all_permutations() {
        let m = 8;
        let a = random_pair(m, 11);
        let b = random_pair(m, 12);
        let p = 2.0;
        let best = permutations(m)
            .iter()
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| a.cost(i, &b, j, p)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let exact = tlp_exact(&a, &b, p).unwrap();
        assert!((exact - (best / m as f64).sqrt()).abs() < 1e-12);
        assert!(tlp_map_bound(&a, &b, p).unwrap().total >= exact - 1e-12);
    }
}
