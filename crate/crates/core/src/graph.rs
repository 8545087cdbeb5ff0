//! ε-neighborhood graphs, their Laplacians and the continuum scale factor.
//!
//! Weights are `w_ij = ε^{-d} η(|x_i − x_j| / ε)` for a non-increasing profile
//! `η`. The scale factor `s_n = 2 / (σ_η n ε²)` makes `s_n L` converge to the
//! weighted elliptic operator `−ρ⁻¹ ∇·(ρ² ∇·)` as `n → ∞`.

use std::fmt;
use std::sync::Arc;

use crate::density::PointCloud;
use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::sparse::{SymCsr, SymmetricOperator};

/// Radial profile `η` of the edge-weight kernel.
#[derive(Clone)]
pub enum Profile {
    /// `η(t) = 1` for `t < 1`, zero otherwise (random geometric graph).
    Indicator,
    /// A user-supplied non-increasing profile vanishing beyond `support`
    /// (which may be infinite for the moment computation, but must be finite
    /// to build a graph).
    Custom {
        eta: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        support: f64,
    },
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Indicator => write!(f, "Indicator"),
            Profile::Custom { support, .. } => write!(f, "Custom {{ support: {support} }}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Kernel {
    pub profile: Profile,
    pub epsilon: f64,
    pub dim: usize,
}

impl Kernel {
    pub fn indicator(epsilon: f64, dim: usize) -> Self {
        Kernel { profile: Profile::Indicator, epsilon, dim }
    }

    pub fn custom<F>(eta: F, support: f64, epsilon: f64, dim: usize) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Kernel { profile: Profile::Custom { eta: Arc::new(eta), support }, epsilon, dim }
    }

    #[inline]
    pub fn eta(&self, t: f64) -> f64 {
        match &self.profile {
            Profile::Indicator => {
                if t < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::Custom { eta, support } => {
                if t > *support {
                    0.0
                } else {
                    eta(t)
                }
            }
        }
    }

    pub fn support(&self) -> f64 {
        match &self.profile {
            Profile::Indicator => 1.0,
            Profile::Custom { support, .. } => *support,
        }
    }

    /// `η_ε(r) = ε^{-d} η(r/ε)`.
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        self.eta(r / self.epsilon) / self.epsilon.powi(self.dim as i32)
    }
}

/// Kernel moments `σ_η = (1/d) ∫ η(|h|) |h|² dh` and `β_η = ∫ η(|h|) dh`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    pub sigma: f64,
    pub beta: f64,
}

/// Surface area of the unit sphere in ℝᵈ.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Γ(d/2) for a positive integer d.
fn gamma_half(d: usize) -> f64 {
    let mut g = if d % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if d % 2 == 0 { 1.0 } else { 0.5 };
    while x < d as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Checks that the profile is positive at 0, non-negative and non-increasing,
/// and computes `σ_η`, `β_η` by radial quadrature.
pub fn kernel_constants(k: &Kernel) -> Result<KernelConstants> {
    if k.dim == 0 {
        return Err(Error::validation("kernel dimension must be positive"));
    }
    let eta0 = k.eta(0.0);
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(Error::validation("kernel profile must satisfy η(0) > 0"));
    }
    let probe_end = k.support().min(10.0);
    let mut prev = eta0;
    for i in 1..=2000 {
        let t = probe_end * i as f64 / 2000.0;
        let v = k.eta(t);
        if v < 0.0 || v > prev * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::validation(format!("kernel profile is not non-increasing and non-negative near t={t}")));
        }
        prev = v;
    }
    let d = k.dim as i32;
    let second = radial_moment(k, d + 1)?;
    let zeroth = radial_moment(k, d - 1)?;
    let area = unit_sphere_area(k.dim);
    Ok(KernelConstants { sigma: area * second / k.dim as f64, beta: area * zeroth })
}

/// `∫₀^∞ η(r) r^power dr`, integrating over doubling intervals until the tail
/// contribution is negligible.
fn radial_moment(k: &Kernel, power: i32) -> Result<f64> {
    let f = |r: f64| k.eta(r) * r.powi(power);
    let support = k.support();
    if support.is_finite() {
        // Split at integers so the Indicator discontinuity at 1 falls on a node.
        let mut total = 0.0;
        let mut a = 0.0;
        while a < support {
            let b = (a + 1.0).min(support);
            total += adaptive_simpson(&f, a, b, 1e-11);
            a = b;
        }
        return Ok(total);
    }
    let mut total = adaptive_simpson(&f, 0.0, 1.0, 1e-11);
    let mut a = 1.0;
    for _ in 0..60 {
        let piece = adaptive_simpson(&f, a, 2.0 * a, 1e-11);
        total += piece;
        if piece.abs() <= 1e-13 * total.abs() {
            return Ok(total);
        }
        a *= 2.0;
    }
    Err(Error::validation("kernel moment ∫ η(r) r^{d+1} dr diverges (K3 violated)"))
}

/// Default bandwidth `ε = multiplier · (log n / n)^{1/d}`.
pub fn default_epsilon(n: usize, dim: usize, multiplier: f64) -> f64 {
    let n = n.max(2) as f64;
    multiplier * (n.ln() / n).powf(1.0 / dim as f64)
}

/// An ε-graph over a point cloud.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    cloud: PointCloud,
    kernel: Kernel,
    constants: KernelConstants,
    /// Full symmetric weight matrix including the self loops `w_ii = η_ε(0)`.
    weights: SymCsr,
    degrees: Vec<f64>,
    s_n: f64,
    components: usize,
}

impl WeightedGraph {
    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn constants(&self) -> KernelConstants {
        self.constants
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn weights(&self) -> &SymCsr {
        &self.weights
    }

    /// `d_ii = Σ_j w_ij`, self loop included.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn epsilon(&self) -> f64 {
        self.kernel.epsilon
    }

    /// Scale factor `s_n = 2 / (σ_η n ε²)`.
    pub fn s_n(&self) -> f64 {
        self.s_n
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// `false` when the graph has more than one connected component. Models
    /// with τ > 0 remain well posed; τ = 0 models need connectivity.
    pub fn is_connected(&self) -> bool {
        self.components == 1
    }

    /// `½ Σ_ij w_ij (u_i − u_j)²`, evaluated edge by edge.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.len() {
            for (j, w) in self.weights.row(i) {
                let d = u[i] - u[j];
                e += w * d * d;
            }
        }
        0.5 * e
    }

    /// Unnormalized `L = D − W` or normalized `I − D^{-1/2} W D^{-1/2}` Laplacian,
    /// as an operator self-adjoint in the empirical inner product.
    ///
    /// The normalized variant uses degrees without self loops, so an isolated
    /// vertex is an error there.
    pub fn laplacian(&self, normalized: bool) -> Result<SymmetricOperator> {
        let n = self.len();
        let mut entries = Vec::with_capacity(self.weights.nnz() / 2 + n);
        let off_degree: Vec<f64> = (0..n)
            .map(|i| self.weights.row(i).filter(|&(j, _)| j != i).map(|(_, w)| w).sum())
            .collect();
        if normalized {
            if let Some(i) = off_degree.iter().position(|&d| d <= 0.0) {
                return Err(Error::validation(format!("vertex {i} is isolated; normalized Laplacian undefined")));
            }
            for i in 0..n {
                entries.push((i, i, 1.0));
                for (j, w) in self.weights.row(i) {
                    if j > i {
                        entries.push((i, j, -w / (off_degree[i] * off_degree[j]).sqrt()));
                    }
                }
            }
        } else {
            for i in 0..n {
                entries.push((i, i, off_degree[i]));
                for (j, w) in self.weights.row(i) {
                    if j > i {
                        entries.push((i, j, -w));
                    }
                }
            }
        }
        Ok(SymmetricOperator::uniform(&SymCsr::from_upper_triplets(n, &entries)))
    }

    /// Writes the weight matrix as `i j w_ij` triplets (upper triangle).
    pub fn write_triplets<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        self.weights.write_triplets(out)
    }
}

/// Builds the ε-graph with a uniform bucket grid of side at least `ε · support`.
pub fn build_graph(cloud: &PointCloud, kernel: &Kernel) -> Result<WeightedGraph> {
    if !(kernel.epsilon > 0.0 && kernel.epsilon.is_finite()) {
        return Err(Error::validation("graph bandwidth ε must be positive"));
    }
    if kernel.dim != cloud.dim() {
        return Err(Error::validation("kernel and cloud dimensions differ"));
    }
    let radius = kernel.epsilon * kernel.support();
    if !radius.is_finite() {
        return Err(Error::validation("graph construction needs a kernel with finite support"));
    }
    let constants = kernel_constants(kernel)?;
    let n = cloud.len();
    let d = cloud.dim();
    let cap = ((n as f64).powf(1.0 / d as f64) * 2.0).ceil().max(1.0) as usize;
    let cells = ((1.0 / radius).floor() as usize).clamp(1, cap);
    let cell_of = |x: &[f64]| -> Vec<usize> {
        x.iter().map(|&c| ((c * cells as f64) as usize).min(cells - 1)).collect()
    };
    let flatten = |c: &[usize]| -> usize { c.iter().rev().fold(0, |acc, &k| acc * cells + k) };
    let total_cells = cells.pow(d as u32);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); total_cells];
    let coords: Vec<Vec<usize>> = cloud.iter().map(cell_of).collect();
    for (i, c) in coords.iter().enumerate() {
        buckets[flatten(c)].push(i);
    }

    let self_weight = kernel.weight(0.0);
    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, self_weight)).collect();
    let offsets = neighbor_offsets(d);
    let mut neighbor = vec![0usize; d];
    for i in 0..n {
        let xi = cloud.point(i);
        'offsets: for off in &offsets {
            for a in 0..d {
                let k = coords[i][a] as isize + off[a];
                if k < 0 || k >= cells as isize {
                    continue 'offsets;
                }
                neighbor[a] = k as usize;
            }
            for &j in &buckets[flatten(&neighbor)] {
                if j <= i {
                    continue;
                }
                let r = distance(xi, cloud.point(j));
                let w = kernel.weight(r);
                if w > 0.0 {
                    entries.push((i, j, w));
                }
            }
        }
    }

    let components = count_components(n, entries.iter().filter(|e| e.0 != e.1).map(|e| (e.0, e.1)));
    if components > 1 {
        log::warn!("ε-graph with ε={} on n={} points has {} components", kernel.epsilon, n, components);
    }
    let weights = SymCsr::from_upper_triplets(n, &entries);
    let degrees = (0..n).map(|i| weights.row(i).map(|(_, w)| w).sum()).collect();
    let s_n = 2.0 / (constants.sigma * n as f64 * kernel.epsilon * kernel.epsilon);
    Ok(WeightedGraph { cloud: cloud.clone(), kernel: kernel.clone(), constants, weights, degrees, s_n, components })
}

fn neighbor_offsets(d: usize) -> Vec<Vec<isize>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-1..=1).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    out
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn count_components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut count = n;
    for (a, b) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
            count -= 1;
        }
    }
    count
}

/// Smallest ε for which the ε-graph (indicator kernel) is connected: the
/// longest edge of the Euclidean minimum spanning tree.
pub fn connectivity_radius(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    if n < 2 {
        return 0.0;
    }
    let mut best = vec![f64::INFINITY; n];
    let mut in_tree = vec![false; n];
    let mut current = 0;
    in_tree[0] = true;
    let mut longest: f64 = 0.0;
    for _ in 1..n {
        let xc = cloud.point(current);
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let dj = distance(xc, cloud.point(j));
            if dj < best[j] {
                best[j] = dj;
            }
            if best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        longest = longest.max(next_d);
        current = next;
    }
    longest
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn collinear() -> PointCloud {
        PointCloud::from_points(2, vec![0.1, 0.5, 0.5, 0.5, 0.9, 0.5]).unwrap()
    }

    #[test]
    fn indicator_constants_match_closed_forms() {
        let c2 = kernel_constants(&Kernel::indicator(0.1, 2)).unwrap();
        assert!((c2.sigma - PI / 4.0).abs() < 1e-9 * PI);
        assert!((c2.beta - PI).abs() < 1e-9 * PI);
        let c3 = kernel_constants(&Kernel::indicator(0.1, 3)).unwrap();
        assert!((c3.sigma - 4.0 * PI / 15.0).abs() < 1e-8);
        assert!((c3.beta - 4.0 * PI / 3.0).abs() < 1e-8);
    }

    #[test]
    fn gaussian_profile_constants() {
        // η(t) = exp(-t²/2): β = (2π)^{d/2}, σ = β (each coordinate has unit variance).
        let k = Kernel::custom(|t| (-0.5 * t * t).exp(), f64::INFINITY, 0.1, 2);
        let c = kernel_constants(&k).unwrap();
        assert!((c.beta - 2.0 * PI).abs() < 1e-8);
        assert!((c.sigma - 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn kernel_assumption_violations_are_reported() {
        let zero = Kernel::custom(|_| 0.0, 1.0, 0.1, 2);
        assert!(matches!(kernel_constants(&zero), Err(Error::Validation(_))));
        let increasing = Kernel::custom(|t| 1.0 + t, 2.0, 0.1, 2);
        assert!(kernel_constants(&increasing).is_err());
        let heavy = Kernel::custom(|t| 1.0 / (1.0 + t.powi(3)), f64::INFINITY, 0.1, 2);
        assert!(kernel_constants(&heavy).is_err());
    }

    #[test]
    fn collinear_points_form_a_path() {
        let g = build_graph(&collinear(), &Kernel::indicator(0.5, 2)).unwrap();
        assert!(g.is_connected());
        let l = g.laplacian(false).unwrap().stiffness().to_dense();
        // stiffness is L/n; strip 1/n and the ε^{-d} weight scale.
        let scale = 3.0 * 0.25;
        assert!((l[(0, 0)] * scale - 1.0).abs() < 1e-12);
        assert!((l[(1, 1)] * scale - 2.0).abs() < 1e-12);
        assert_eq!(l[(0, 2)], 0.0);
    }

    #[test]
    fn tiny_bandwidth_leaves_only_self_loops() {
        let g = build_graph(&collinear(), &Kernel::indicator(0.1, 2)).unwrap();
        assert_eq!(g.components(), 3);
        assert_eq!(g.weights().nnz(), 3);
        let op = g.laplacian(false).unwrap();
        assert!(op.stiffness().diagonal().iter().all(|&v| v == 0.0));
        assert!(matches!(g.laplacian(true), Err(Error::Validation(_))));
    }

    #[test]
    fn scale_factor_formula() {
        let cloud = crate::density::Density::uniform(2).unwrap().sample(100, 3);
        let g = build_graph(&cloud, &Kernel::indicator(0.3, 2)).unwrap();
        let expected = 2.0 / ((PI / 4.0) * 100.0 * 0.09);
        assert!((g.s_n() - expected).abs() < 1e-8 * expected);
        assert!((expected - 0.28294).abs() < 1e-5);
    }

    #[test]
    fn bucket_search_matches_brute_force() {
        let cloud = crate::density::Density::uniform(2).unwrap().sample(300, 11);
        let eps = 0.12;
        let g = build_graph(&cloud, &Kernel::indicator(eps, 2)).unwrap();
        let mut brute = 0;
        for i in 0..300 {
            for j in 0..300 {
                if distance(cloud.point(i), cloud.point(j)) < eps {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, g.weights().nnz());
    }

    #[test]
    fn connectivity_radius_connects_the_graph() {
        let cloud = crate::density::Density::uniform(2).unwrap().sample(200, 5);
        let r = connectivity_radius(&cloud);
        assert!(build_graph(&cloud, &Kernel::indicator(r * 1.0001, 2)).unwrap().is_connected());
        assert!(!build_graph(&cloud, &Kernel::indicator(r * 0.9999, 2)).unwrap().is_connected());
    }
}
