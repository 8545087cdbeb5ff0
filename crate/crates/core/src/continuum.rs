//! Finite-volume discretization of `𝓛u = −ρ⁻¹ ∇·(ρ² ∇u)` with no-flux
//! boundary conditions on the cell-centred uniform grid of `(0,1)^d`.
//!
//! The stiffness matrix sums `ρ(face)² h^{d−2} (u_a − u_b)²` over interior
//! faces, and the mass weights are `ρ(x_a) hᵈ`, so the operator is exactly
//! self-adjoint in the discrete `L²_μ` inner product. The normalized variant
//! `−ρ^{−3/2} ∇·(ρ² ∇(u ρ^{−1/2}))` is `P 𝓛 P` with `P = diag(ρ^{−1/2})`.

use crate::density::{Density, PointCloud};
use crate::error::{Error, Result};
use crate::spectral::{decompose, EigenDecomposition};
use crate::sparse::{SymCsr, SymmetricOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    side: usize,
}

impl Grid {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("grid dimension must be positive"));
        }
        if side < 2 {
            return Err(Error::validation("grid needs at least two cells per side"));
        }
        Ok(Grid { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.side as f64
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of node `i`; the first axis varies fastest.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(i % self.side);
            i /= self.side;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &k| acc * self.side + k)
    }

    /// Cell-centre coordinates of node `i`.
    pub fn node(&self, i: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(i).into_iter().map(|k| (k as f64 + 0.5) * h).collect()
    }

    /// All cell centres as a point cloud.
    pub fn nodes(&self) -> PointCloud {
        let flat: Vec<f64> = (0..self.len()).flat_map(|i| self.node(i)).collect();
        PointCloud::from_points(self.dim, flat).expect("cell centres lie inside the unit box")
    }

    /// Index of the cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = x
            .iter()
            .map(|&c| ((c * self.side as f64).floor().max(0.0) as usize).min(self.side - 1))
            .collect();
        self.flat_index(&idx)
    }

    /// Multilinear interpolation of a grid function at `x`, clamped to the
    /// outermost cell centres.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim;
        let n = self.side;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let t = x[a] * n as f64 - 0.5;
            let i0 = (t.floor().max(0.0) as usize).min(n - 2);
            base[a] = i0;
            frac[a] = (t - i0 as f64).clamp(0.0, 1.0);
        }
        let mut total = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                let up = (corner >> a) & 1 == 1;
                idx[a] = base[a] + up as usize;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                total += w * values[self.flat_index(&idx)];
            }
        }
        total
    }

    /// Writes `x1,…,xd` plus one column per named field.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, fields: &[(&str, &[f64])]) -> std::io::Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|a| format!("x{a}")).collect();
        header.extend(fields.iter().map(|(name, _)| name.to_string()));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.node(i).iter().map(|c| format!("{c:.6}")).collect();
            row.extend(fields.iter().map(|(_, v)| format!("{:.10e}", v[i])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ContinuumOperator {
    grid: Grid,
    density: Density,
    normalized: bool,
    rho: Vec<f64>,
    op: SymmetricOperator,
}

/// Assembles the flux-form operator on an `N^d` grid.
pub fn discretize(density: &Density, side: usize, normalized: bool) -> Result<ContinuumOperator> {
    if side < 8 {
        return Err(Error::validation("continuum grid needs N ≥ 8"));
    }
    let grid = Grid::new(density.dim(), side)?;
    let d = grid.dim();
    let h = grid.spacing();
    let rho: Vec<f64> = (0..grid.len()).map(|i| density.eval_unchecked(&grid.node(i))).collect();
    let face_scale = h.powi(d as i32 - 2);
    let mut entries = Vec::with_capacity(grid.len() * (d + 1));
    let mut diag = vec![0.0; grid.len()];
    for a in 0..grid.len() {
        let idx = grid.multi_index(a);
        let xa = grid.node(a);
        for axis in 0..d {
            if idx[axis] + 1 == side {
                continue;
            }
            let mut nb = idx.clone();
            nb[axis] += 1;
            let b = grid.flat_index(&nb);
            let mut face = xa.clone();
            face[axis] += 0.5 * h;
            let rf = density.eval_unchecked(&face);
            let c = rf * rf * face_scale;
            entries.push((a, b, -c));
            diag[a] += c;
            diag[b] += c;
        }
    }
    entries.extend(diag.iter().enumerate().map(|(i, &v)| (i, i, v)));
    let mut stiffness = SymCsr::from_upper_triplets(grid.len(), &entries);
    if normalized {
        let p: Vec<f64> = rho.iter().map(|r| 1.0 / r.sqrt()).collect();
        stiffness = stiffness.congruence(&p);
    }
    let weights = rho.iter().map(|r| r * h.powi(d as i32)).collect();
    let op = SymmetricOperator::new(stiffness, weights)?;
    Ok(ContinuumOperator { grid, density: density.clone(), normalized, rho, op })
}

impl ContinuumOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// `ρ` at the cell centres.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn operator(&self) -> &SymmetricOperator {
        &self.op
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.op.apply(u)
    }

    /// `⟨a, b⟩_μ = Σ a_i b_i ρ(x_i) hᵈ`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.op.inner(a, b)
    }

    /// The `m` smallest eigenpairs, orthonormal in `⟨·,·⟩_μ`.
    pub fn decompose(&self, m: Option<usize>) -> Result<EigenDecomposition> {
        decompose(&self.op, m)
    }

    /// Fiedler vector computed from a fresh three-mode decomposition.
    pub fn fiedler_vector(&self, plus_point: &[f64]) -> Result<Fiedler> {
        fiedler_vector(&self.decompose(Some(3))?, &self.grid, plus_point)
    }
}

/// The second eigenfunction, normalized positive at the `+1` labelled point.
#[derive(Debug, Clone)]
pub struct Fiedler {
    pub values: Vec<f64>,
    pub lambda: f64,
    /// Set when `λ_2 = λ_3` within `1e-8`; `partner` then holds `q_3`.
    pub degenerate: bool,
    pub partner: Option<Vec<f64>>,
}

pub fn fiedler_vector(eig: &EigenDecomposition, grid: &Grid, plus_point: &[f64]) -> Result<Fiedler> {
    if eig.len() < 2 {
        return Err(Error::validation("Fiedler vector needs at least two eigenpairs"));
    }
    let orient = |v: &[f64]| -> Vec<f64> {
        if grid.interpolate(v, plus_point) < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v.to_vec()
        }
    };
    let l = eig.eigenvalues();
    let degenerate = eig.len() >= 3 && (l[2] - l[1]).abs() <= 1e-8 * l[1].abs().max(1.0);
    Ok(Fiedler {
        values: orient(eig.vector(1)),
        lambda: l[1],
        degenerate,
        partner: if degenerate { Some(orient(eig.vector(2))) } else { None },
    })
}

/// Multilinear interpolation of a grid function at every point of `cloud`.
pub fn interpolate_to_points(grid: &Grid, values: &[f64], cloud: &PointCloud) -> Vec<f64> {
    cloud.iter().map(|x| grid.interpolate(values, x)).collect()
}

/// The `count` smallest eigenvalues `π² Σ i_a²` of the Neumann Laplacian on `(0,1)^d`.
pub fn neumann_eigenvalues(dim: usize, count: usize) -> Vec<f64> {
    let mut side = 1usize;
    while side.pow(dim as u32) < 4 * count.max(1) {
        side += 1;
    }
    let total = side.pow(dim as u32);
    let mut out: Vec<f64> = (0..total)
        .map(|mut i| {
            let mut s = 0usize;
            for _ in 0..dim {
                let k = i % side;
                s += k * k;
                i /= side;
            }
            std::f64::consts::PI.powi(2) * s as f64
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.truncate(count);
    out
}
