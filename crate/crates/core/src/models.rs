//! Probit, Bayesian level-set and kriging estimators.
//!
//! Everything is expressed in the spectral coefficients `c` of a
//! [`FractionalOperator`]. Observations enter through a row matrix `R` with
//! `(R c)_j = u(x_j)`, a label `y_j` and a weight `w_j` per observation, so
//! the same code serves graphs (`w_j = r_n`), continuum regions (`w_j = ρ hᵈ`)
//! and continuum point labels (`w_j = 1`).
//!
//! The MAP estimator minimizes
//! `F(c) = ½ Σ_k m_k c_k² + Σ_j w_j φ(y_j (Rc)_j)` with `φ = −log Ψ(·; γ)`.

use std::f64::consts::SQRT_2;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::continuum::{ContinuumOperator, Grid};
use crate::error::{Error, Result};
use crate::labels::{assign_labels, sign_scalar, FixedLabel, LabelKind, LabelModel, LabelSet};
use crate::spectral::{EigenDecomposition, FractionalOperator, SparsePowerOperator};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log Φ(z)` for the standard normal CDF.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 0.0 {
        (-0.5 * libm::erfc(z / SQRT_2)).ln_1p()
    } else if z >= -8.0 {
        (0.5 * libm::erfc(-z / SQRT_2)).ln()
    } else {
        // Optimally truncated asymptotic series 1 − 1/z² + 3/z⁴ − 15/z⁶ + …
        let w = 1.0 / (z * z);
        let mut term: f64 = 1.0;
        let mut sum: f64 = 1.0;
        let mut k = 1.0;
        loop {
            let next = -term * (2.0 * k - 1.0) * w;
            if next.abs() >= term.abs() || next.abs() < 1e-17 * sum.abs() {
                break;
            }
            sum += next;
            term = next;
            k += 1.0;
        }
        -0.5 * z * z - (-z).ln() - LN_SQRT_2PI + sum.ln()
    }
}

/// `log Ψ(v; γ) = log Φ(v/γ)`.
pub fn log_psi(v: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::validation("noise level γ must be positive"));
    }
    Ok(log_ndtr(v / gamma))
}

/// Inverse Mills ratio `φ(z)/Φ(z)`, computed in log space.
pub fn mills_ratio(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_ndtr(z)).exp()
}

/// `d²/dz² (−log Φ(z)) = r(z)(z + r(z)) ∈ (0, 1)`.
fn neg_log_ndtr_curvature(z: f64) -> f64 {
    let r = mills_ratio(z);
    (r * (z + r)).clamp(0.0, 1.0)
}

/// Observations in spectral coordinates.
#[derive(Debug, Clone)]
pub struct Observations {
    /// Row-major `p × K`.
    rows: Vec<f64>,
    modes: usize,
    y: Vec<f64>,
    weights: Vec<f64>,
}

impl Observations {
    pub fn new(rows: Vec<f64>, modes: usize, y: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if rows.len() != y.len() * modes || y.len() != weights.len() {
            return Err(Error::validation("observation rows, labels and weights are inconsistent"));
        }
        Ok(Observations { rows, modes, y, weights })
    }

    /// Point evaluations of the eigenvectors at labelled graph nodes, `w_j = r_n`.
    pub fn graph(eig: &EigenDecomposition, labels: &LabelSet) -> Result<Self> {
        if labels.cloud_len() != eig.dim() {
            return Err(Error::validation("label set and operator sizes differ"));
        }
        let k = eig.len();
        let mut rows = Vec::with_capacity(labels.len() * k);
        for &i in labels.indices() {
            rows.extend((0..k).map(|m| eig.vector(m)[i]));
        }
        Observations::new(rows, k, labels.labels().to_vec(), vec![labels.r_n(); labels.len()])
    }

    /// Continuum Model 1: every grid node in a labelled region, `w_j = ρ(x_j) hᵈ`.
    pub fn grid_regions(eig: &EigenDecomposition, grid: &Grid, model: &LabelModel) -> Result<Self> {
        if model.kind() != LabelKind::Model1 {
            return Err(Error::validation("region observations need labelling Model 1"));
        }
        let (_, labels) = assign_labels(&grid.nodes(), model)?;
        let k = eig.len();
        let mut rows = Vec::with_capacity(labels.len() * k);
        for &i in labels.indices() {
            rows.extend((0..k).map(|m| eig.vector(m)[i]));
        }
        let weights = labels.indices().iter().map(|&i| eig.weights()[i]).collect();
        Observations::new(rows, k, labels.labels().to_vec(), weights)
    }

    /// Continuum Model 2: interpolated evaluations at fixed points, `w_j = 1`.
    pub fn grid_points(eig: &EigenDecomposition, grid: &Grid, points: &[FixedLabel]) -> Result<Self> {
        let k = eig.len();
        let mut rows = Vec::with_capacity(points.len() * k);
        for p in points {
            if p.point.len() != grid.dim() {
                return Err(Error::validation("labelled point dimension differs from the grid"));
            }
            rows.extend((0..k).map(|m| grid.interpolate(eig.vector(m), &p.point)));
        }
        Observations::new(rows, k, points.iter().map(|p| p.label).collect(), vec![1.0; points.len()])
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.modes..(j + 1) * self.modes]
    }

    /// `R c`.
    pub fn evaluate(&self, c: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|j| self.row(j).iter().zip(c).map(|(a, b)| a * b).sum()).collect()
    }

    /// `Rᵀ z`.
    pub fn adjoint(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.modes];
        for (j, &zj) in z.iter().enumerate() {
            if zj != 0.0 {
                for (o, r) in out.iter_mut().zip(self.row(j)) {
                    *o += zj * r;
                }
            }
        }
        out
    }

    /// Weighted misfit `Σ_j w_j Φ_j` at the observed values `v = Rc`.
    pub fn misfit(&self, kind: Misfit, v: &[f64]) -> f64 {
        match kind {
            Misfit::Zero => 0.0,
            Misfit::Probit { gamma } => self
                .y
                .iter()
                .zip(v)
                .zip(&self.weights)
                .map(|((y, v), w)| -w * log_ndtr(y * v / gamma))
                .sum(),
            Misfit::LevelSet { gamma } => self
                .y
                .iter()
                .zip(v)
                .zip(&self.weights)
                .map(|((y, v), w)| w * (y - sign_scalar(*v)).powi(2))
                .sum::<f64>()
                / (2.0 * gamma * gamma),
            Misfit::Indicator => {
                if self.y.iter().zip(v).all(|(y, v)| y * v > 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Likelihood terms available to the optimizers and samplers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Misfit {
    Zero,
    Probit { gamma: f64 },
    LevelSet { gamma: f64 },
    /// Zero on `{y_j u_j > 0 ∀ j}`, infinite elsewhere.
    Indicator,
}

/// `Φ_p(u; γ) = −Σ_{j∈Z′} log Ψ(y_j u_j; γ)`, weighted by `r_n` in objectives.
#[derive(Debug, Clone)]
pub struct ProbitPotential {
    gamma: f64,
    labels: LabelSet,
}

impl ProbitPotential {
    pub fn new(gamma: f64, labels: LabelSet) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::validation("noise level γ must be positive"));
        }
        Ok(ProbitPotential { gamma, labels })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn r_n(&self) -> f64 {
        self.labels.r_n()
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        self.labels
            .indices()
            .iter()
            .zip(self.labels.labels())
            .map(|(&i, &y)| -log_ndtr(y * u[i] / self.gamma))
            .sum()
    }

    /// `∂Φ_p/∂u_i`: `−y_j ψ/Ψ` on labelled nodes, zero elsewhere.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        for (&i, &y) in self.labels.indices().iter().zip(self.labels.labels()) {
            g[i] = -y * mills_ratio(y * u[i] / self.gamma) / self.gamma;
        }
        g
    }
}

/// `Φ_ls(u; γ) = (1/2γ²) Σ_{j∈Z′} |y_j − S(u_j)|²`.
#[derive(Debug, Clone)]
pub struct LevelSetPotential {
    gamma: f64,
    labels: LabelSet,
}

impl LevelSetPotential {
    pub fn new(gamma: f64, labels: LabelSet) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::validation("noise level γ must be positive"));
        }
        Ok(LevelSetPotential { gamma, labels })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        self.labels
            .indices()
            .iter()
            .zip(self.labels.labels())
            .map(|(&i, &y)| (y - sign_scalar(u[i])).powi(2))
            .sum::<f64>()
            / (2.0 * self.gamma * self.gamma)
    }
}

/// `J_p(u) = J(u) + r_n Φ_p(u)`.
pub fn probit_objective(u: &[f64], prior: &FractionalOperator, pot: &ProbitPotential) -> f64 {
    prior.quadratic_form(u) + pot.r_n() * pot.value(u)
}

/// `J_ls(u) = J(u) + r_n Φ_ls(u)`; it has no minimizer and is only evaluated.
pub fn levelset_objective(u: &[f64], prior: &FractionalOperator, pot: &LevelSetPotential) -> f64 {
    prior.quadratic_form(u) + pot.labels.r_n() * pot.value(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientFlowConfig {
    /// Step size; `10 / m_min` (smallest positive multiplier) when absent.
    pub dt: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for GradientFlowConfig {
    fn default() -> Self {
        GradientFlowConfig { dt: None, tolerance: 1e-8, max_iterations: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct MapResult {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
}

/// `F(c)` for the probit MAP problem.
pub fn probit_objective_coefficients(prior: &FractionalOperator, obs: &Observations, gamma: f64, c: &[f64]) -> f64 {
    prior.quadratic_form_coefficients(c) + obs.misfit(Misfit::Probit { gamma }, &obs.evaluate(c))
}

/// `∇F(c)`.
pub fn probit_gradient_coefficients(prior: &FractionalOperator, obs: &Observations, gamma: f64, c: &[f64]) -> Vec<f64> {
    let v = obs.evaluate(c);
    let z: Vec<f64> = (0..obs.len())
        .map(|j| {
            let y = obs.y[j];
            -obs.weights[j] * y * mills_ratio(y * v[j] / gamma) / gamma
        })
        .collect();
    let mut g = obs.adjoint(&z);
    for (gk, (m, ck)) in g.iter_mut().zip(prior.multipliers().iter().zip(c)) {
        *gk += m * ck;
    }
    g
}

/// Linearly-implicit gradient flow for the probit MAP estimator.
///
/// Each step solves `(I/dt + M + Rᵀ S R) δ = −∇F(c)` where `M = diag(m_k)` is
/// treated implicitly and `S_j = w_j φ''` linearizes the likelihood around the
/// current iterate. The small `p × p` system comes from the Woodbury identity.
/// A step that raises `F` is retried with `dt / 4`.
pub fn probit_map_coefficients(
    prior: &FractionalOperator,
    obs: &Observations,
    gamma: f64,
    cfg: &GradientFlowConfig,
    init: &[f64],
) -> Result<MapResult> {
    if !(gamma > 0.0) {
        return Err(Error::validation("noise level γ must be positive"));
    }
    if !(cfg.tolerance > 0.0) || cfg.max_iterations == 0 {
        return Err(Error::validation("gradient flow needs a positive tolerance and iteration budget"));
    }
    let k = prior.len();
    if init.len() != k || obs.modes() != k {
        return Err(Error::validation("initial coefficients do not match the spectral truncation"));
    }
    let m = prior.multipliers();
    if obs.is_empty() {
        log::warn!("no labelled points: the probit minimizer is zero");
        return Ok(MapResult { coefficients: vec![0.0; k], iterations: 0, gradient_norm: 0.0, objective: 0.0 });
    }
    let m_min = m.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let dt_default = match cfg.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(_) => return Err(Error::validation("gradient flow step dt must be positive")),
        None if m_min.is_finite() => 10.0 / m_min,
        None => 1.0,
    };
    let mut dt = dt_default;
    let mut c = init.to_vec();
    let mut f = probit_objective_coefficients(prior, obs, gamma, &c);
    let mut grad = probit_gradient_coefficients(prior, obs, gamma, &c);
    let p = obs.len();
    let mut gram: Option<(f64, Mat<f64>)> = None;

    for iter in 1..=cfg.max_iterations {
        if gram.as_ref().map_or(true, |(d, _)| *d != dt) {
            gram = Some((dt, woodbury_gram(obs, m, dt)));
        }
        let g_mat = &gram.as_ref().unwrap().1;
        let v = obs.evaluate(&c);
        let s: Vec<f64> = (0..p)
            .map(|j| obs.weights[j] * neg_log_ndtr_curvature(obs.y[j] * v[j] / gamma) / (gamma * gamma))
            .collect();
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let delta = woodbury_solve(obs, m, dt, g_mat, &s, &rhs)?;
        let trial: Vec<f64> = c.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let f_trial = probit_objective_coefficients(prior, obs, gamma, &trial);
        if !f_trial.is_finite() {
            return Err(Error::numerical("probit objective became non-finite"));
        }
        if f_trial > f + 1e-13 * f.abs().max(1.0) {
            dt *= 0.25;
            if dt < 1e-300 {
                return Err(Error::numerical("gradient flow step size underflowed"));
            }
            continue;
        }
        let step = norm(&delta);
        c = trial;
        f = f_trial;
        grad = probit_gradient_coefficients(prior, obs, gamma, &c);
        let gn = norm(&grad);
        let quad_scale = norm(&c.iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>()).max(1.0);
        if step <= cfg.tolerance && gn <= cfg.tolerance * quad_scale {
            return Ok(MapResult { coefficients: c, iterations: iter, gradient_norm: gn, objective: f });
        }
        dt = (dt * 2.0).min(dt_default);
    }
    Err(Error::NotConverged {
        method: "probit gradient flow",
        iterations: cfg.max_iterations,
        residual: norm(&grad),
        last: Some(c),
    })
}

/// `G = R D⁻¹ Rᵀ` with `D = I/dt + M`.
fn woodbury_gram(obs: &Observations, m: &[f64], dt: f64) -> Mat<f64> {
    let p = obs.len();
    let dinv: Vec<f64> = m.iter().map(|mk| 1.0 / (1.0 / dt + mk)).collect();
    let mut g = Mat::<f64>::zeros(p, p);
    for a in 0..p {
        let ra = obs.row(a);
        for b in 0..=a {
            let v: f64 = ra.iter().zip(obs.row(b)).zip(&dinv).map(|((x, y), d)| x * y * d).sum();
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// Solves `(D + Rᵀ S R) x = b` with `D = I/dt + M`.
fn woodbury_solve(obs: &Observations, m: &[f64], dt: f64, gram: &Mat<f64>, s: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let p = obs.len();
    let dinv: Vec<f64> = m.iter().map(|mk| 1.0 / (1.0 / dt + mk)).collect();
    let y: Vec<f64> = b.iter().zip(&dinv).map(|(a, d)| a * d).collect();
    let sq: Vec<f64> = s.iter().map(|v| v.sqrt()).collect();
    let small = Mat::<f64>::from_fn(p, p, |a, c| sq[a] * gram[(a, c)] * sq[c] + if a == c { 1.0 } else { 0.0 });
    let ry = obs.evaluate(&y);
    let rhs = Mat::<f64>::from_fn(p, 1, |a, _| sq[a] * ry[a]);
    let llt = small
        .llt(Side::Lower)
        .map_err(|e| Error::numerical(format!("Woodbury system is not positive definite: {e:?}")))?;
    let t = llt.solve(&rhs);
    let z: Vec<f64> = (0..p).map(|a| sq[a] * t[(a, 0)]).collect();
    let back = obs.adjoint(&z);
    Ok(y.iter().zip(back.iter().zip(&dinv)).map(|(yk, (bk, d))| yk - d * bk).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Probit MAP estimator on a graph, started from `init`.
pub fn probit_map(prior: &FractionalOperator, pot: &ProbitPotential, cfg: &GradientFlowConfig, init: &[f64]) -> Result<Vec<f64>> {
    let obs = Observations::graph(prior.eig(), pot.labels())?;
    let c0 = prior.eig().coefficients(init);
    let res = probit_map_coefficients(prior, &obs, pot.gamma(), cfg, &c0)?;
    Ok(prior.eig().synthesize(&res.coefficients))
}

/// Probit MAP estimator for the continuum problem on the operator's spectral
/// truncation; Model 1 integrates over the labelled regions, Model 2 uses
/// point evaluations and needs `α > d/2`.
pub fn continuum_probit_map(
    prior: &FractionalOperator,
    grid: &Grid,
    model: &LabelModel,
    gamma: f64,
    cfg: &GradientFlowConfig,
) -> Result<Vec<f64>> {
    let obs = continuum_observations(prior, grid, model)?;
    let res = probit_map_coefficients(prior, &obs, gamma, cfg, &vec![0.0; prior.len()])?;
    Ok(prior.eig().synthesize(&res.coefficients))
}

/// Probit MAP without spectral truncation, for integer `α`.
///
/// The misfit only sees `u` at `nodes`, so the minimizer has the form
/// `u = A⁻¹W⁻¹Pa` and minimizes `F(a) = ½ aᵀGa + Σ_j w_j φ(y_j (Ga)_j)` with
/// the node covariance `G`. Damped Newton on `a`; each step solves
/// `(I + SG) δ = −(a + ∇Φ)` through the symmetric `I + S^½ G S^½`.
pub fn probit_map_sparse(
    prior: &SparsePowerOperator,
    nodes: &[usize],
    y: &[f64],
    w: &[f64],
    gamma: f64,
    cfg: &GradientFlowConfig,
) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::validation("noise level γ must be positive"));
    }
    if !(cfg.tolerance > 0.0) || cfg.max_iterations == 0 {
        return Err(Error::validation("Newton iteration needs a positive tolerance and iteration budget"));
    }
    if nodes.len() != y.len() || y.len() != w.len() || nodes.iter().any(|&i| i >= prior.dim()) {
        return Err(Error::validation("labelled nodes, labels and weights are inconsistent"));
    }
    let p = nodes.len();
    if p == 0 {
        log::warn!("no labelled points: the probit minimizer is zero");
        return Ok(vec![0.0; prior.dim()]);
    }
    let g = prior.covariance_block(nodes);
    let gv = |a: &[f64]| -> Vec<f64> { (0..p).map(|r| (0..p).map(|c| g[(r, c)] * a[c]).sum()).collect() };
    let objective = |a: &[f64], v: &[f64]| -> f64 {
        let quad: f64 = a.iter().zip(v).map(|(x, y)| x * y).sum();
        0.5 * quad - (0..p).map(|j| w[j] * log_ndtr(y[j] * v[j] / gamma)).sum::<f64>()
    };
    let mut a = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut f = objective(&a, &v);
    let mut step = f64::INFINITY;
    for iter in 1..=cfg.max_iterations {
        let grad: Vec<f64> = (0..p).map(|j| -w[j] * y[j] * mills_ratio(y[j] * v[j] / gamma) / gamma).collect();
        let sq: Vec<f64> = (0..p)
            .map(|j| (w[j] * neg_log_ndtr_curvature(y[j] * v[j] / gamma)).sqrt() / gamma)
            .collect();
        let r: Vec<f64> = a.iter().zip(&grad).map(|(x, d)| x + d).collect();
        let gr = gv(&r);
        let small = Mat::<f64>::from_fn(p, p, |i, j| sq[i] * g[(i, j)] * sq[j] + if i == j { 1.0 } else { 0.0 });
        let llt = small
            .llt(Side::Lower)
            .map_err(|e| Error::numerical(format!("Newton system is not positive definite: {e:?}")))?;
        let t = llt.solve(Mat::<f64>::from_fn(p, 1, |i, _| sq[i] * gr[i]));
        let delta: Vec<f64> = (0..p).map(|i| -(r[i] - sq[i] * t[(i, 0)])).collect();
        let slope: f64 = gr.iter().zip(&delta).map(|(x, d)| x * d).sum();
        let gd = gv(&delta);
        let mut s = 1.0;
        loop {
            let trial: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + s * d).collect();
            let tv: Vec<f64> = v.iter().zip(&gd).map(|(x, d)| x + s * d).collect();
            let ft = objective(&trial, &tv);
            if !ft.is_finite() {
                return Err(Error::numerical("probit objective became non-finite"));
            }
            if ft <= f + 1e-4 * s * slope || s < 1e-12 {
                a = trial;
                v = tv;
                f = ft;
                break;
            }
            s *= 0.5;
        }
        step = s * norm(&delta);
        if step <= cfg.tolerance * norm(&a).max(f64::MIN_POSITIVE) {
            log::debug!("sparse probit Newton converged in {iter} iterations");
            return Ok(prior.represent(nodes, &a));
        }
    }
    Err(Error::NotConverged {
        method: "sparse probit Newton",
        iterations: cfg.max_iterations,
        residual: step,
        last: Some(prior.represent(nodes, &a)),
    })
}

/// Continuum probit MAP (Model 1) for integer `α` on the full grid, with no
/// spectral truncation.
pub fn continuum_probit_map_sparse(
    op: &ContinuumOperator,
    alpha: f64,
    tau: f64,
    model: &LabelModel,
    gamma: f64,
    cfg: &GradientFlowConfig,
) -> Result<Vec<f64>> {
    if model.kind() != LabelKind::Model1 {
        return Err(Error::validation("the sparse continuum solver supports region labels only"));
    }
    let prior = SparsePowerOperator::new(op.operator(), alpha, tau, 1.0)?;
    let (_, labels) = assign_labels(&op.grid().nodes(), model)?;
    let w: Vec<f64> = labels.indices().iter().map(|&i| op.operator().weights()[i]).collect();
    probit_map_sparse(&prior, labels.indices(), labels.labels(), &w, gamma, cfg)
}

/// Observation rows for a continuum labelling model.
pub fn continuum_observations(prior: &FractionalOperator, grid: &Grid, model: &LabelModel) -> Result<Observations> {
    match model {
        LabelModel::Regions { .. } => Observations::grid_regions(prior.eig(), grid, model),
        LabelModel::Fixed { points } => {
            if prior.alpha() <= grid.dim() as f64 / 2.0 {
                return Err(Error::validation("point labels in the continuum need α > d/2"));
            }
            Observations::grid_points(prior.eig(), grid, points)
        }
    }
}

/// Kriging coefficients `M⁺ Rᵀ (R M⁺ Rᵀ)⁻¹ y`.
pub fn krige_coefficients(prior: &FractionalOperator, obs: &Observations) -> Result<Vec<f64>> {
    let p = obs.len();
    if p == 0 {
        return Ok(vec![0.0; prior.len()]);
    }
    let minv = prior.prior_variances(1.0);
    let mut gram = Mat::<f64>::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let v: f64 = obs.row(a).iter().zip(obs.row(b)).zip(&minv).map(|((x, y), d)| x * y * d).sum();
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let scale = (0..p).map(|a| gram[(a, a)]).fold(0.0, f64::max);
    let llt = gram
        .llt(Side::Lower)
        .map_err(|_| Error::numerical("kriging Gram matrix is singular"))?;
    let rhs = Mat::<f64>::from_fn(p, 1, |a, _| obs.y[a]);
    let z_mat = llt.solve(&rhs);
    let z: Vec<f64> = (0..p).map(|a| z_mat[(a, 0)]).collect();
    if z.iter().any(|v| !v.is_finite()) || !(scale > 0.0) {
        return Err(Error::numerical("kriging Gram matrix is singular"));
    }
    Ok(obs.adjoint(&z).iter().zip(&minv).map(|(a, d)| a * d).collect())
}

/// Minimum-energy interpolant of the labels on a graph.
pub fn krige(prior: &FractionalOperator, labels: &LabelSet) -> Result<Vec<f64>> {
    let obs = Observations::graph(prior.eig(), labels)?;
    Ok(prior.eig().synthesize(&krige_coefficients(prior, &obs)?))
}

/// Continuum kriging interpolant on the grid.
pub fn continuum_krige(prior: &FractionalOperator, grid: &Grid, model: &LabelModel) -> Result<Vec<f64>> {
    let obs = continuum_observations(prior, grid, model)?;
    Ok(prior.eig().synthesize(&krige_coefficients(prior, &obs)?))
}

/// `log Φ` reference by quadrature, never forming `erfc`.
///
/// Uses `Φ(z) = φ(z) ∫₀^∞ e^{zs − s²/2} ds`; for `z > 0` the same identity
/// gives the upper tail `Φ(−z)` and `log Φ(z) = log1p(−Φ(−z))`.
pub fn log_ndtr_quadrature(z: f64) -> f64 {
    if z > 0.0 {
        let tail = log_mills_integral(-z) - 0.5 * z * z - LN_SQRT_2PI;
        return (-tail.exp()).ln_1p();
    }
    log_mills_integral(z) - 0.5 * z * z - LN_SQRT_2PI
}

/// `log ∫₀^∞ e^{zs − s²/2} ds` for `z ≤ 0`, on panels that grow geometrically
/// from a width matched to the `e^{zs}` decay.
fn log_mills_integral(z: f64) -> f64 {
    let end = 40.0;
    let f = |s: f64| (z * s - 0.5 * s * s).exp();
    let mut width = 1.0 / (1.0 - z) / 16.0;
    let mut a = 0.0;
    let mut total = 0.0;
    while a < end {
        let b = (a + width).min(end);
        total += crate::quadrature::gauss_legendre(f, a, b, 4);
        a = b;
        width *= 1.1;
    }
    total.ln()
}
