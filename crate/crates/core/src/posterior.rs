//! pCN sampling of probit, level-set and indicator posteriors in spectral
//! coordinates, with running classification statistics.
//!
//! The chain state is the coefficient vector `c` of `u = Σ c_k q_k`. A
//! proposal `c' = √(1−β²) c + β ξ` with `ξ ~ N(0, r A⁻¹)` is reversible for the
//! prior, so acceptance only involves the misfit difference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::sign_scalar;
use crate::models::{krige_coefficients, Misfit, Observations};
use crate::spectral::FractionalOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcnConfig {
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post burn-in state.
    pub thin: usize,
    /// Number of batches for batch-means standard errors.
    pub batches: usize,
    pub seed: u64,
    /// Retain the thinned coefficient vectors.
    pub store_samples: bool,
}

impl Default for PcnConfig {
    fn default() -> Self {
        PcnConfig { beta: 0.1, iterations: 100_000, burn_in: 10_000, thin: 10, batches: 50, seed: 1, store_samples: false }
    }
}

impl PcnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::validation("pCN β must lie in (0, 1]"));
        }
        if self.thin == 0 || self.batches == 0 {
            return Err(Error::validation("thinning and batch counts must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::validation("burn-in must be shorter than the chain"));
        }
        Ok(())
    }
}

/// State and running statistics of one pCN chain.
#[derive(Debug, Clone)]
pub struct Chain {
    coefficients: Vec<f64>,
    potential: f64,
    prior_scale: f64,
    steps: usize,
    accepted: usize,
    kept: usize,
    sign_sum: Vec<f64>,
    value_sum: Vec<f64>,
    batch_size: usize,
    batch_fill: usize,
    batch_acc: Vec<f64>,
    batch_means: Vec<Vec<f64>>,
    samples: Vec<Vec<f64>>,
}

impl Chain {
    /// A chain at `init` for a prior `N(0, prior_scale · A⁻¹)`.
    pub fn new(init: Vec<f64>, potential: f64, prior_scale: f64) -> Self {
        Chain {
            coefficients: init,
            potential,
            prior_scale,
            steps: 0,
            accepted: 0,
            kept: 0,
            sign_sum: Vec::new(),
            value_sum: Vec::new(),
            batch_size: 0,
            batch_fill: 0,
            batch_acc: Vec::new(),
            batch_means: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn potential(&self) -> f64 {
        self.potential
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    /// Number of recorded (post burn-in, thinned) states.
    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Running mean of `u` per node.
    pub fn mean_field(&self) -> Vec<f64> {
        let k = self.kept.max(1) as f64;
        self.value_sum.iter().map(|s| s / k).collect()
    }

    /// Records the current state, evaluated on nodes as `u`.
    fn record(&mut self, u: &[f64], store: bool) {
        if self.sign_sum.is_empty() {
            self.sign_sum = vec![0.0; u.len()];
            self.value_sum = vec![0.0; u.len()];
            self.batch_acc = vec![0.0; u.len()];
        }
        for i in 0..u.len() {
            let s = sign_scalar(u[i]);
            self.sign_sum[i] += s;
            self.value_sum[i] += u[i];
            self.batch_acc[i] += s;
        }
        self.kept += 1;
        self.batch_fill += 1;
        if self.batch_size > 0 && self.batch_fill == self.batch_size {
            let b = self.batch_size as f64;
            self.batch_means.push(self.batch_acc.iter().map(|s| s / b).collect());
            self.batch_acc.iter_mut().for_each(|s| *s = 0.0);
            self.batch_fill = 0;
        }
        if store {
            self.samples.push(self.coefficients.clone());
        }
    }
}

/// One pCN step. Returns whether the proposal was accepted.
///
/// A uniform variate is drawn on every step, so the accept/reject sequence
/// for a fixed stream depends on the potential only through differences.
pub fn pcn_step<R, P>(chain: &mut Chain, prior: &FractionalOperator, potential: &P, beta: f64, rng: &mut R) -> bool
where
    R: Rng + ?Sized,
    P: Fn(&[f64]) -> f64 + ?Sized,
{
    let xi = prior.sample_coefficients(rng, chain.prior_scale);
    let a = (1.0 - beta * beta).sqrt();
    let proposal: Vec<f64> = chain.coefficients.iter().zip(&xi).map(|(c, x)| a * c + beta * x).collect();
    let phi_new = potential(&proposal);
    let u: f64 = rng.random();
    chain.steps += 1;
    let log_ratio = chain.potential - phi_new;
    // Infinite potentials reject; a NaN ratio (∞ − ∞) also rejects.
    let accept = if phi_new == f64::INFINITY { false } else { u.ln() < log_ratio };
    if accept {
        chain.coefficients = proposal;
        chain.potential = phi_new;
        chain.accepted += 1;
    }
    accept
}

/// The weighted misfit of `obs` as a function of the coefficients.
pub fn misfit_potential(obs: &Observations, kind: Misfit) -> impl Fn(&[f64]) -> f64 + '_ {
    move |c: &[f64]| obs.misfit(kind, &obs.evaluate(c))
}

/// Runs a full chain: burn-in, then thinned recording of `S(u)` and `u`.
pub fn run_chain<P>(prior: &FractionalOperator, potential: &P, prior_scale: f64, init: Vec<f64>, cfg: &PcnConfig) -> Result<Chain>
where
    P: Fn(&[f64]) -> f64 + ?Sized,
{
    cfg.validate()?;
    if init.len() != prior.len() {
        return Err(Error::validation("initial coefficients do not match the spectral truncation"));
    }
    let phi0 = potential(&init);
    if !phi0.is_finite() {
        return Err(Error::validation("pCN chain must start at a point of finite potential"));
    }
    let mut chain = Chain::new(init, phi0, prior_scale);
    let expected = (cfg.iterations - cfg.burn_in) / cfg.thin;
    chain.batch_size = (expected / cfg.batches).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for step in 0..cfg.iterations {
        pcn_step(&mut chain, prior, potential, cfg.beta, &mut rng);
        if step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == cfg.thin - 1 {
            let u = prior.eig().synthesize(&chain.coefficients);
            chain.record(&u, cfg.store_samples);
        }
    }
    Ok(chain)
}

/// Per-node classification statistics.
#[derive(Debug, Clone)]
pub struct ClassificationStats {
    pub mean_sign: Vec<f64>,
    /// `1 − mean²`, the variance of `S(u)` when `u ≠ 0` almost surely.
    pub variance: Vec<f64>,
    /// Batch-means Monte Carlo standard error of `mean_sign`.
    pub std_error: Vec<f64>,
    pub samples: usize,
}

pub fn classification_stats(chain: &Chain) -> Result<ClassificationStats> {
    if chain.kept < 100 {
        return Err(Error::validation(format!("classification statistics need ≥ 100 samples, chain kept {}", chain.kept)));
    }
    let k = chain.kept as f64;
    let mean_sign: Vec<f64> = chain.sign_sum.iter().map(|s| s / k).collect();
    let variance = mean_sign.iter().map(|m| (1.0 - m * m).max(0.0)).collect();
    let nb = chain.batch_means.len();
    let std_error = (0..mean_sign.len())
        .map(|i| {
            if nb < 2 {
                return f64::NAN;
            }
            let mu = chain.batch_means.iter().map(|b| b[i]).sum::<f64>() / nb as f64;
            let var = chain.batch_means.iter().map(|b| (b[i] - mu).powi(2)).sum::<f64>() / (nb - 1) as f64;
            (var / nb as f64).sqrt()
        })
        .collect();
    Ok(ClassificationStats { mean_sign, variance, std_error, samples: chain.kept })
}

/// Discrepancies between the probit, level-set and indicator chains at one γ.
#[derive(Debug, Clone)]
pub struct SmallNoiseRow {
    pub gamma: f64,
    pub probit_max: f64,
    pub levelset_max: f64,
    pub probit_mean: f64,
    pub levelset_mean: f64,
    /// Largest `|Δ_i| / σ_i` over nodes, with `σ_i` the combined standard error.
    pub probit_max_z: f64,
    pub levelset_max_z: f64,
    /// Mean combined standard error, the noise scale of the discrepancies.
    pub probit_noise: f64,
    pub levelset_noise: f64,
    pub acceptance: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SmallNoiseReport {
    pub rows: Vec<SmallNoiseRow>,
    pub indicator: ClassificationStats,
}

impl SmallNoiseReport {
    /// Both chains at the smallest γ lie within `z` standard errors of the indicator chain at every node.
    pub fn within(&self, z: f64) -> bool {
        self.rows.last().is_some_and(|r| r.probit_max_z <= z && r.levelset_max_z <= z)
    }

    /// Mean discrepancies do not increase along the γ list beyond `z` noise units.
    pub fn nonincreasing(&self, z: f64) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].probit_mean <= w[0].probit_mean + z * w[1].probit_noise.max(w[0].probit_noise)
                && w[1].levelset_mean <= w[0].levelset_mean + z * w[1].levelset_noise.max(w[0].levelset_noise)
        })
    }
}

/// Runs probit, level-set and indicator chains on the same random stream for
/// each γ and compares their mean-sign fields.
///
/// The probit prior is `r_n A⁻¹` with an unweighted likelihood; the level-set
/// and indicator priors are `A⁻¹` with the misfit weighted by `r_n`.
pub fn small_noise_agreement(
    prior: &FractionalOperator,
    obs: &Observations,
    r_n: f64,
    gammas: &[f64],
    cfg: &PcnConfig,
) -> Result<SmallNoiseReport> {
    if gammas.is_empty() || gammas.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::validation("γ list must be non-empty and positive"));
    }
    if gammas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("γ list must be strictly decreasing"));
    }
    let unit = reweighted(obs, 1.0);
    let scaled = reweighted(obs, r_n);
    let init = krige_coefficients(prior, obs)?;
    let indicator = run_chain(prior, &misfit_potential(&scaled, Misfit::Indicator), 1.0, init, cfg)?;
    let ind_stats = classification_stats(&indicator)?;
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let zero = vec![0.0; prior.len()];
        let probit = run_chain(prior, &misfit_potential(&unit, Misfit::Probit { gamma }), r_n, zero.clone(), cfg)?;
        let levelset = run_chain(prior, &misfit_potential(&scaled, Misfit::LevelSet { gamma }), 1.0, zero, cfg)?;
        let ps = classification_stats(&probit)?;
        let ls = classification_stats(&levelset)?;
        let (pmax, pmean, pz, pnoise) = compare(&ps, &ind_stats);
        let (lmax, lmean, lz, lnoise) = compare(&ls, &ind_stats);
        rows.push(SmallNoiseRow {
            gamma,
            probit_max: pmax,
            levelset_max: lmax,
            probit_mean: pmean,
            levelset_mean: lmean,
            probit_max_z: pz,
            levelset_max_z: lz,
            probit_noise: pnoise,
            levelset_noise: lnoise,
            acceptance: [probit.acceptance_rate(), levelset.acceptance_rate(), indicator.acceptance_rate()],
        });
    }
    Ok(SmallNoiseReport { rows, indicator: ind_stats })
}

fn reweighted(obs: &Observations, w: f64) -> Observations {
    let k = obs.modes();
    let rows: Vec<f64> = (0..obs.len()).flat_map(|j| obs.row(j).to_vec()).collect();
    Observations::new(rows, k, obs.labels().to_vec(), vec![w; obs.len()]).expect("same shape as the source")
}

/// (max |Δ|, mean |Δ|, max |Δ|/σ, mean σ) between two mean-sign fields.
fn compare(a: &ClassificationStats, b: &ClassificationStats) -> (f64, f64, f64, f64) {
    let n = a.mean_sign.len();
    let mut max_d: f64 = 0.0;
    let mut sum_d = 0.0;
    let mut max_z: f64 = 0.0;
    let mut sum_s = 0.0;
    for i in 0..n {
        let d = (a.mean_sign[i] - b.mean_sign[i]).abs();
        let s = (a.std_error[i].powi(2) + b.std_error[i].powi(2)).sqrt();
        max_d = max_d.max(d);
        sum_d += d;
        sum_s += s;
        let z = if d == 0.0 {
            0.0
        } else if s > 0.0 {
            d / s
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
    }
    (max_d, sum_d / n as f64, max_z, sum_s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::EigenDecomposition;
    use std::sync::Arc;

    /// Two modes on a two-point space with weights 1/2.
    fn toy(alpha: f64) -> FractionalOperator {
        let eig = EigenDecomposition::from_parts(vec![1.0, 3.0], vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.5, 0.5]).unwrap();
        FractionalOperator::new(Arc::new(eig), alpha, 0.0, 1.0).unwrap()
    }

    #[test]
    fn zero_potential_accepts_everything() {
        let prior = toy(1.0);
        let cfg = PcnConfig { iterations: 2_000, burn_in: 100, ..PcnConfig::default() };
        let chain = run_chain(&prior, &|_: &[f64]| 0.0, 1.0, vec![0.0, 0.0], &cfg).unwrap();
        assert_eq!(chain.acceptance_rate(), 1.0);
    }

    #[test]
    fn constant_offset_does_not_change_the_trajectory() {
        let prior = toy(1.0);
        let pot = |c: &[f64]| (c[0] - 0.3).powi(2) + c[1].abs();
        let shifted = |c: &[f64]| pot(c) + 17.0;
        let cfg = PcnConfig { iterations: 3_000, burn_in: 100, thin: 1, store_samples: true, ..PcnConfig::default() };
        let a = run_chain(&prior, &pot, 1.0, vec![0.0, 0.0], &cfg).unwrap();
        let b = run_chain(&prior, &shifted, 1.0, vec![0.0, 0.0], &cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.accepted(), b.accepted());
    }

    #[test]
    fn stats_need_enough_samples() {
        let prior = toy(1.0);
        let cfg = PcnConfig { iterations: 500, burn_in: 100, thin: 10, ..PcnConfig::default() };
        let chain = run_chain(&prior, &|_: &[f64]| 0.0, 1.0, vec![0.0, 0.0], &cfg).unwrap();
        assert!(classification_stats(&chain).is_err());
    }

    #[test]
    fn always_positive_node_has_zero_variance() {
        let prior = toy(1.0);
        // Constrain u at node 0 to be positive: u_0 = c_0 + c_1.
        let pot = |c: &[f64]| if c[0] + c[1] > 0.0 { 0.0 } else { f64::INFINITY };
        let cfg = PcnConfig { iterations: 5_000, burn_in: 500, thin: 2, ..PcnConfig::default() };
        let chain = run_chain(&prior, &pot, 1.0, vec![1.0, 0.0], &cfg).unwrap();
        let st = classification_stats(&chain).unwrap();
        assert_eq!(st.mean_sign[0], 1.0);
        assert_eq!(st.variance[0], 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PcnConfig { beta: 0.0, ..PcnConfig::default() }.validate().is_err());
        assert!(PcnConfig { beta: 1.5, ..PcnConfig::default() }.validate().is_err());
        assert!(PcnConfig { burn_in: 200_000, ..PcnConfig::default() }.validate().is_err());
    }
}
