//! Experiment drivers: configuration, parameter sweeps and CSV output.
//!
//! Each runner returns a report for programmatic checks and, when given an
//! output directory, writes its CSV tables there. Sweeps run on the rayon pool
//! and are collected in input order, so output never depends on scheduling.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuum::{discretize, fiedler_vector, neumann_eigenvalues, Grid};
use crate::density::{Density, PointCloud, TwoMoons};
use crate::error::{Error, Result};
use crate::graph::{build_graph, connectivity_radius, Kernel};
use crate::labels::{assign_labels, sign, sign_scalar, FixedLabel, LabelKind, LabelModel};
use crate::models::{
    continuum_observations, continuum_probit_map_sparse, krige_coefficients, probit_map_coefficients, GradientFlowConfig, MapResult, Misfit, Observations,
};
use crate::posterior::{classification_stats, misfit_potential, run_chain, small_noise_agreement, PcnConfig, SmallNoiseReport};
use crate::spectral::{decompose, loglog_slope, weyl_exponent, EigenDecomposition, FractionalOperator};
use crate::transport::discrete_vs_continuum_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Channel,
    RatesKrige,
    RatesProbit,
    Extrapolation,
    McmcMoons,
    Spectra,
    Smallnoise,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Channel,
        ExperimentId::RatesKrige,
        ExperimentId::RatesProbit,
        ExperimentId::Extrapolation,
        ExperimentId::McmcMoons,
        ExperimentId::Spectra,
        ExperimentId::Smallnoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Channel => "channel",
            ExperimentId::RatesKrige => "rates-krige",
            ExperimentId::RatesProbit => "rates-probit",
            ExperimentId::Extrapolation => "extrapolation",
            ExperimentId::McmcMoons => "mcmc-moons",
            ExperimentId::Spectra => "spectra",
            ExperimentId::Smallnoise => "smallnoise",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// `count` uniformly spaced bandwidths in `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl EpsilonGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.min + step * i as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max >= self.min) || self.count == 0 {
            return Err(Error::validation("ε grid needs 0 < min ≤ max and a positive count"));
        }
        Ok(())
    }
}

/// Bandwidth `multiplier · (log n)^{3/4} / n^{1/d}`, inside the sweet spot for the sizes used here.
pub fn sweet_spot_epsilon(n: usize, dim: usize, multiplier: f64) -> f64 {
    let n = n.max(2) as f64;
    multiplier * n.ln().powf(0.75) / n.powf(1.0 / dim as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub grid: usize,
    pub solver: ChannelSolver,
    /// Retained eigenpairs; used by the spectral solver only.
    pub modes: usize,
    pub heights: Vec<f64>,
    pub alphas: Vec<f64>,
    pub tau: f64,
    pub gamma: f64,
    /// Width of the channel floor; the walls ramp over a further 0.02 each side.
    pub width: f64,
    pub labels: LabelModel,
    pub flow: GradientFlowConfig,
}

/// How the channel MAP estimators are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSolver {
    /// Full grid, integer α only: sparse Cholesky plus Newton on the labelled nodes.
    Sparse,
    /// Gradient flow on the leading `modes` eigenpairs.
    Spectral,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            grid: 128,
            solver: ChannelSolver::Sparse,
            modes: 500,
            heights: vec![1.0, 0.75, 0.5, 0.25, 0.0],
            alphas: vec![1.0, 2.0, 3.0],
            tau: 10.0,
            gamma: 0.01,
            width: 0.1,
            labels: LabelModel::balls([0.25, 0.25], [0.75, 0.75], 0.05),
            flow: GradientFlowConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub epsilon: EpsilonGrid,
    pub alpha: f64,
    pub tau: f64,
    /// Probit noise level; unused by kriging.
    pub gamma: f64,
    pub grid: usize,
    pub modes: usize,
    /// Moving-average window applied before bound detection.
    pub window: usize,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub flow: GradientFlowConfig,
    pub decay: DecayConfig,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            sizes: vec![100, 200, 400, 800, 1600],
            seeds: 20,
            epsilon: EpsilonGrid { min: 0.005, max: 0.5, count: 30 },
            alpha: 2.0,
            tau: 1.0,
            gamma: 0.01,
            grid: 128,
            modes: 500,
            window: 5,
            plus: vec![0.25, 0.25],
            minus: vec![0.75, 0.75],
            flow: GradientFlowConfig::default(),
            decay: DecayConfig::default(),
        }
    }
}

/// Probit minimizer norms at a fixed bandwidth as `n` grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub epsilon: f64,
    pub sizes: Vec<usize>,
    pub seeds: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { epsilon: 0.3, sizes: vec![400, 800, 1600], seeds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapolationConfig {
    pub n: usize,
    pub alphas: Vec<f64>,
    pub tau: f64,
    /// `|u|` below this counts as a spike-collapsed node.
    pub threshold: f64,
    /// For `α ≤ d/2` the bandwidth is this multiple of the connectivity radius.
    pub radius_multiple: f64,
    /// Candidate bandwidths for `α > d/2`, picked by the continuum error.
    pub epsilon: EpsilonGrid,
    pub grid: usize,
    pub modes: usize,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl Default for ExtrapolationConfig {
    fn default() -> Self {
        ExtrapolationConfig {
            n: 1600,
            alphas: vec![0.5, 1.0, 1.5, 2.0],
            tau: 1.0,
            threshold: 0.05,
            radius_multiple: 2.0,
            epsilon: EpsilonGrid { min: 0.06, max: 0.3, count: 9 },
            grid: 128,
            modes: 500,
            plus: vec![0.25, 0.25],
            minus: vec![0.75, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonsConfig {
    pub grid: usize,
    pub modes: usize,
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub moons: TwoMoons,
    pub pcn: PcnConfig,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        MoonsConfig {
            grid: 64,
            modes: 500,
            alphas: vec![2.0, 3.0, 4.0],
            taus: vec![1.0, 0.2],
            moons: TwoMoons::default(),
            pcn: PcnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraConfig {
    pub sizes: Vec<usize>,
    pub seeds: usize,
    /// Nonzero eigenvalues compared with the Neumann spectrum.
    pub count: usize,
    pub epsilon_multiplier: f64,
    pub graph_fit: [usize; 2],
    /// Grid sides for the continuum spectra in d = 2 and d = 3.
    pub grid_2d: usize,
    pub grid_3d: usize,
    pub continuum_fit: [usize; 2],
}

impl Default for SpectraConfig {
    fn default() -> Self {
        SpectraConfig {
            sizes: vec![400, 1600],
            seeds: 10,
            count: 10,
            epsilon_multiplier: 1.0,
            graph_fit: [5, 50],
            grid_2d: 64,
            grid_3d: 16,
            continuum_fit: [20, 400],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallNoiseConfig {
    pub n: usize,
    pub alpha: f64,
    pub tau: f64,
    pub gammas: Vec<f64>,
    /// Graph bandwidth; the sweet-spot rule when absent.
    pub epsilon: Option<f64>,
    pub labels: LabelModel,
    pub pcn: PcnConfig,
}

impl Default for SmallNoiseConfig {
    fn default() -> Self {
        SmallNoiseConfig {
            n: 400,
            alpha: 2.0,
            tau: 1.0,
            gammas: vec![1.0, 0.1, 0.01, 1e-4],
            epsilon: None,
            labels: LabelModel::balls([0.25, 0.25], [0.75, 0.75], 0.1),
            pcn: PcnConfig { iterations: 200_000, burn_in: 20_000, ..PcnConfig::default() },
        }
    }
}

/// Full configuration file; every section has documented defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment the file is meant for; checked against the requested one.
    pub experiment: Option<ExperimentId>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub paper_scale: bool,
    pub channel: ChannelConfig,
    pub rates: RatesConfig,
    pub extrapolation: ExtrapolationConfig,
    #[serde(rename = "mcmc-moons")]
    pub moons: MoonsConfig,
    pub spectra: SpectraConfig,
    pub smallnoise: SmallNoiseConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Switches to publication-scale realization counts and grid sizes.
    pub fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        self.channel.grid = 256;
        self.rates.seeds = 200;
        self.rates.epsilon = EpsilonGrid { min: 0.005, max: 0.5, count: 100 };
        self.rates.grid = 256;
        self.extrapolation.grid = 256;
        self.moons.grid = 200;
    }

    pub fn validate(&self) -> Result<()> {
        let prior = |alpha: f64, tau: f64| -> Result<()> {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::validation("α must be positive"));
            }
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::validation("τ must be non-negative"));
            }
            Ok(())
        };
        let gamma = |g: f64| -> Result<()> {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::validation("γ must be positive"));
            }
            Ok(())
        };
        let size = |n: usize| -> Result<()> {
            if n < 4 {
                return Err(Error::validation("graph size n must be at least 4"));
            }
            Ok(())
        };
        if self.threads == Some(0) {
            return Err(Error::validation("thread count must be positive"));
        }
        let c = &self.channel;
        for &a in &c.alphas {
            prior(a, c.tau)?;
        }
        gamma(c.gamma)?;
        if c.heights.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return Err(Error::validation("channel heights must lie in [0, 1]"));
        }
        if c.modes < 2 {
            return Err(Error::validation("channel needs at least two modes"));
        }
        if c.solver == ChannelSolver::Sparse && c.alphas.iter().any(|a| a.fract() != 0.0 || *a > 16.0) {
            return Err(Error::validation("the sparse channel solver needs integer α ≤ 16; use solver = \"spectral\""));
        }
        if c.solver == ChannelSolver::Sparse && !(c.tau > 0.0) {
            return Err(Error::validation("the sparse channel solver needs τ > 0"));
        }
        c.labels.validate(2)?;

        let r = &self.rates;
        prior(r.alpha, r.tau)?;
        gamma(r.gamma)?;
        r.sizes.iter().chain(&r.decay.sizes).try_for_each(|&n| size(n))?;
        r.epsilon.validate()?;
        if r.seeds == 0 || r.decay.seeds == 0 || r.window == 0 || !(r.decay.epsilon > 0.0) {
            return Err(Error::validation("rates needs positive seeds, window and decay bandwidth"));
        }
        LabelModel::pair(&r.plus, &r.minus).validate(2)?;

        let e = &self.extrapolation;
        size(e.n)?;
        for &a in &e.alphas {
            prior(a, e.tau)?;
        }
        e.epsilon.validate()?;
        if !(e.radius_multiple > 0.0 && e.threshold > 0.0) {
            return Err(Error::validation("extrapolation multiples must be positive"));
        }
        LabelModel::pair(&e.plus, &e.minus).validate(2)?;

        let m = &self.moons;
        for &a in &m.alphas {
            for &t in &m.taus {
                prior(a, t)?;
            }
            if a <= 1.0 {
                return Err(Error::validation("point labels in the continuum need α > d/2"));
            }
        }
        m.pcn.validate()?;

        let s = &self.spectra;
        s.sizes.iter().try_for_each(|&n| size(n))?;
        if s.seeds == 0 || s.count == 0 || !(s.epsilon_multiplier > 0.0) {
            return Err(Error::validation("spectra needs positive seeds, count and multiplier"));
        }

        let q = &self.smallnoise;
        size(q.n)?;
        prior(q.alpha, q.tau)?;
        q.gammas.iter().try_for_each(|&g| gamma(g))?;
        if q.epsilon.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::validation("ε must be positive"));
        }
        q.labels.validate(2)?;
        q.pcn.validate()
    }
}

/// Independent stream for one sweep point.
pub fn stream_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = splitmix(z ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `id`, writing the resolved configuration and CSV tables to `out`.
pub fn run(id: ExperimentId, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if let Some(declared) = cfg.experiment {
        if declared != id {
            return Err(Error::Config(format!("config is for `{declared}` but `{id}` was requested")));
        }
    }
    cfg.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut echo = cfg.clone();
    echo.experiment = Some(id);
    echo.output = Some(out.to_path_buf());
    let text = echo.to_toml()?;
    fs::write(out.join("config.toml"), text).map_err(io_err(out))?;
    let body = || -> Result<()> {
        let seed = cfg.seed;
        match id {
            ExperimentId::Channel => run_channel(&cfg.channel, Some(out)).map(drop),
            ExperimentId::RatesKrige => run_rates(&cfg.rates, RatesModel::Krige, seed, Some(out)).map(drop),
            ExperimentId::RatesProbit => {
                run_rates(&cfg.rates, RatesModel::Probit, seed, Some(out))?;
                label_information_loss(&cfg.rates, seed, Some(out)).map(drop)
            }
            ExperimentId::Extrapolation => run_extrapolation(&cfg.extrapolation, seed, Some(out)).map(drop),
            ExperimentId::McmcMoons => run_mcmc_moons(&cfg.moons, seed, Some(out)).map(drop),
            ExperimentId::Spectra => run_spectra(&cfg.spectra, seed, Some(out)).map(drop),
            ExperimentId::Smallnoise => run_smallnoise(&cfg.smallnoise, seed, Some(out)).map(drop),
        }
    };
    // Threaded kernels inside faer split reductions by thread count, which
    // changes rounding; sweeps parallelize over their points instead.
    faer::set_global_parallelism(faer::Par::Seq);
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(body),
        None => body(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Numeric CSV table writer.
struct Table {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut t = Table { out: BufWriter::new(file), path };
        t.line(&header.join(","))?;
        Ok(t)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(io_err(&self.path))
    }

    fn row(&mut self, values: &[f64]) -> Result<()> {
        let s: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.line(&s.join(","))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

fn write_grid(dir: &Path, name: &str, grid: &Grid, fields: &[(&str, &[f64])]) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut out = BufWriter::new(file);
    grid.write_csv(&mut out, fields).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))
}

fn tag(v: f64) -> String {
    v.to_string().replace('.', "p")
}

fn continuum_eig(density: &Density, side: usize, modes: usize) -> Result<(Grid, Arc<EigenDecomposition>, Vec<f64>)> {
    let op = discretize(density, side, false)?;
    let eig = op.decompose(Some(modes.min(op.grid().len())))?;
    Ok((op.grid().clone(), Arc::new(eig), op.rho().to_vec()))
}

/// Unnormalized ε-graph Laplacian of `cloud`, full spectrum, scaled by `s_n`.
fn graph_spectrum(cloud: &PointCloud, epsilon: f64, modes: Option<usize>) -> Result<(Arc<EigenDecomposition>, f64)> {
    let g = build_graph(cloud, &Kernel::indicator(epsilon, cloud.dim()))?;
    let eig = decompose(&g.laplacian(false)?, modes)?;
    Ok((Arc::new(eig), g.s_n()))
}

fn map_or_last(res: Result<MapResult>, what: &str) -> Result<Vec<f64>> {
    match res {
        Ok(r) => Ok(r.coefficients),
        Err(Error::NotConverged { iterations, residual, last: Some(c), .. }) => {
            log::warn!("{what}: gradient flow stopped after {iterations} iterations (residual {residual:.3e})");
            Ok(c)
        }
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------- channel

#[derive(Debug, Clone)]
pub struct ChannelRow {
    pub h: f64,
    pub alpha: f64,
    /// Fraction of nodes classified as by the diagonal bisector `x₁ + x₂ = 1`.
    pub diagonal: f64,
    /// Fraction of nodes classified as by the vertical bisector `x₁ = 1/2`.
    pub vertical: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct ChannelReport {
    pub rows: Vec<ChannelRow>,
    /// Smallest pairwise sign agreement across α, per height.
    pub cross_alpha: Vec<(f64, f64)>,
}

impl ChannelReport {
    pub fn row(&self, h: f64, alpha: f64) -> Option<&ChannelRow> {
        self.rows.iter().find(|r| r.h == h && r.alpha == alpha)
    }
}

fn agreement(s: &[f64], reference: impl Fn(usize) -> f64) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (i, &v) in s.iter().enumerate() {
        let r = reference(i);
        if r != 0.0 {
            total += 1;
            hit += usize::from(v == r);
        }
    }
    hit as f64 / total.max(1) as f64
}

/// Continuum probit minimizers on channel densities, over heights and α.
pub fn run_channel(cfg: &ChannelConfig, out: Option<&Path>) -> Result<ChannelReport> {
    if cfg.labels.kind() != LabelKind::Model1 {
        return Err(Error::validation("the channel experiment uses labelling Model 1"));
    }
    let mut rows = Vec::new();
    let mut cross = Vec::new();
    let mut summary = match out {
        Some(d) => {
            Some(Table::create(d, "summary.csv", &["h", "alpha", "diagonal_agreement", "vertical_agreement", "min", "max"])?)
        }
        None => None,
    };
    for &h in &cfg.heights {
        log::info!("channel h = {h}");
        let density = Density::channel(2, h, cfg.width)?;
        let (grid, rho, fields) = match cfg.solver {
            ChannelSolver::Sparse => {
                let op = discretize(&density, cfg.grid, false)?;
                let fields: Vec<Vec<f64>> = cfg
                    .alphas
                    .par_iter()
                    .map(|&alpha| {
                        match continuum_probit_map_sparse(&op, alpha, cfg.tau, &cfg.labels, cfg.gamma, &cfg.flow) {
                            Err(Error::NotConverged { iterations, residual, last: Some(u), .. }) => {
                                log::warn!("channel: Newton stopped after {iterations} iterations (step {residual:.3e})");
                                Ok(u)
                            }
                            other => other,
                        }
                    })
                    .collect::<Result<_>>()?;
                (op.grid().clone(), op.rho().to_vec(), fields)
            }
            ChannelSolver::Spectral => {
                let (grid, eig, rho) = continuum_eig(&density, cfg.grid, cfg.modes)?;
                let fields: Vec<Vec<f64>> = cfg
                    .alphas
                    .par_iter()
                    .map(|&alpha| -> Result<Vec<f64>> {
                        let prior = FractionalOperator::new(eig.clone(), alpha, cfg.tau, 1.0)?;
                        let obs = continuum_observations(&prior, &grid, &cfg.labels)?;
                        let c = map_or_last(
                            probit_map_coefficients(&prior, &obs, cfg.gamma, &cfg.flow, &vec![0.0; prior.len()]),
                            "channel",
                        )?;
                        Ok(eig.synthesize(&c))
                    })
                    .collect::<Result<_>>()?;
                (grid, rho, fields)
            }
        };
        let fields: Vec<(Vec<f64>, Vec<f64>)> = fields
            .into_iter()
            .map(|u| {
                if u.iter().any(|x| !x.is_finite()) {
                    return Err(Error::numerical("channel MAP estimate is not finite"));
                }
                let s = sign(&u);
                Ok((u, s))
            })
            .collect::<Result<_>>()?;
        for (&alpha, (u, s)) in cfg.alphas.iter().zip(&fields) {
            let diag = agreement(s, |i| {
                let x = grid.node(i);
                -sign_scalar(x[0] + x[1] - 1.0)
            });
            let vert = agreement(s, |i| -sign_scalar(grid.node(i)[0] - 0.5));
            let row = ChannelRow {
                h,
                alpha,
                diagonal: diag,
                vertical: vert,
                min: u.iter().copied().fold(f64::INFINITY, f64::min),
                max: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            if let Some(t) = summary.as_mut() {
                t.row(&[h, alpha, diag, vert, row.min, row.max])?;
            }
            rows.push(row);
        }
        let mut worst: f64 = 1.0;
        for a in 0..fields.len() {
            for b in a + 1..fields.len() {
                worst = worst.min(agreement(&fields[a].1, |i| fields[b].1[i]));
            }
        }
        cross.push((h, worst));
        if let Some(dir) = out {
            let names: Vec<(String, String)> =
                cfg.alphas.iter().map(|a| (format!("u_alpha{}", tag(*a)), format!("sign_alpha{}", tag(*a)))).collect();
            let mut cols: Vec<(&str, &[f64])> = vec![("rho", &rho)];
            for ((nu, ns), (u, s)) in names.iter().zip(&fields) {
                cols.push((nu, u));
                cols.push((ns, s));
            }
            write_grid(dir, &format!("fields_h{}.csv", tag(h)), &grid, &cols)?;
        }
    }
    if let Some(t) = summary {
        t.finish()?;
    }
    if let Some(dir) = out {
        let mut t = Table::create(dir, "cross_alpha.csv", &["h", "min_pairwise_agreement"])?;
        for &(h, a) in &cross {
            t.row(&[h, a])?;
        }
        t.finish()?;
    }
    Ok(ChannelReport { rows, cross_alpha: cross })
}

// ---------------------------------------------------------------- rates

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatesModel {
    Krige,
    Probit,
}

impl RatesModel {
    fn name(self) -> &'static str {
        match self {
            RatesModel::Krige => "krige",
            RatesModel::Probit => "probit",
        }
    }
}

/// Inflection points of a smoothed error curve around its minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub argmin: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Centered moving average; the window shrinks near the ends.
pub fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(y.len());
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Locates the lower and upper bandwidth bounds of a U-shaped error curve:
/// among the sign changes of the second difference of the smoothed curve, the
/// steepest one on each side of the minimum.
pub fn detect_bounds(eps: &[f64], errors: &[f64], window: usize) -> Bounds {
    let s = moving_average(errors, window);
    let m = s.len();
    let argmin = (0..m).fold(0, |best, i| if s[i] < s[best] { i } else { best });
    let mut lower: Option<(f64, f64)> = None;
    let mut upper: Option<(f64, f64)> = None;
    if m >= 4 {
        let d2: Vec<f64> = (1..m - 1).map(|i| s[i + 1] - 2.0 * s[i] + s[i - 1]).collect();
        for k in 0..d2.len() - 1 {
            if d2[k] * d2[k + 1] < 0.0 {
                // Curvature flips between nodes k+1 and k+2.
                let i = k + 1;
                let at = 0.5 * (eps[i] + eps[i + 1]);
                let slope = ((s[i + 1] - s[i]) / (eps[i + 1] - eps[i])).abs();
                let side = if i < argmin { &mut lower } else { &mut upper };
                if side.is_none_or(|(_, best)| slope > best) {
                    *side = Some((at, slope));
                }
            }
        }
    }
    Bounds { argmin, lower: lower.map(|b| b.0), upper: upper.map(|b| b.0) }
}

#[derive(Debug, Clone)]
pub struct RatesCurve {
    pub n: usize,
    pub epsilons: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub bounds: Bounds,
}

impl RatesCurve {
    /// Minimum of the averaged curve at an interior bandwidth, strictly below both ends.
    pub fn interior_minimum(&self) -> bool {
        let m = self.mean.len();
        let i = (0..m).fold(0, |b, i| if self.mean[i] < self.mean[b] { i } else { b });
        i > 0 && i + 1 < m && self.mean[i] < self.mean[0] && self.mean[i] < self.mean[m - 1]
    }
}

#[derive(Debug, Clone)]
pub struct RatesReport {
    pub model: RatesModel,
    pub curves: Vec<RatesCurve>,
    pub lower_slope: Option<f64>,
    pub upper_slope: Option<f64>,
}

impl RatesReport {
    pub fn curve(&self, n: usize) -> Option<&RatesCurve> {
        self.curves.iter().find(|c| c.n == n)
    }
}

/// Discrete-to-continuum error sweeps for one labelling model.
pub fn run_rates(cfg: &RatesConfig, model: RatesModel, seed: u64, out: Option<&Path>) -> Result<RatesReport> {
    let mut reports = rates_sweep(cfg, &[model], seed, out)?;
    Ok(reports.remove(0))
}

/// Error sweeps for several models sharing each graph spectrum.
pub fn rates_sweep(cfg: &RatesConfig, models: &[RatesModel], seed: u64, out: Option<&Path>) -> Result<Vec<RatesReport>> {
    let labels = LabelModel::pair(&cfg.plus, &cfg.minus);
    let LabelModel::Fixed { points } = &labels else { unreachable!() };
    let (grid, ceig, _) = continuum_eig(&Density::uniform(2)?, cfg.grid, cfg.modes)?;
    let references: Vec<Vec<f64>> = models
        .iter()
        .map(|&m| {
            let prior = FractionalOperator::new(ceig.clone(), cfg.alpha, cfg.tau, 1.0)?;
            let obs = continuum_observations(&prior, &grid, &labels)?;
            let c = match m {
                RatesModel::Krige => krige_coefficients(&prior, &obs)?,
                RatesModel::Probit => map_or_last(
                    probit_map_coefficients(&prior, &obs, cfg.gamma, &cfg.flow, &vec![0.0; prior.len()]),
                    "continuum probit",
                )?,
            };
            Ok(ceig.synthesize(&c))
        })
        .collect::<Result<_>>()?;
    let eps = cfg.epsilon.values();
    let eps_count = eps.len();
    let tasks: Vec<(usize, usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.seeds).flat_map(move |s| (0..eps_count).map(move |e| (n, s, e))))
        .collect();
    log::info!("rates: {} sweep points", tasks.len());
    let errors: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(n, s, e)| -> Result<Vec<f64>> {
            let cloud = Density::uniform(2)?.sample(n - points.len(), stream_seed(seed, &[n as u64, s as u64]));
            let (cloud, set) = assign_labels(&cloud, &labels)?;
            let (eig, s_n) = graph_spectrum(&cloud, eps[e], None)?;
            let prior = FractionalOperator::new(eig.clone(), cfg.alpha, cfg.tau, s_n)?;
            let obs = Observations::graph(&eig, &set)?;
            models
                .iter()
                .zip(&references)
                .map(|(&m, reference)| {
                    let c = match m {
                        RatesModel::Krige => krige_coefficients(&prior, &obs)?,
                        RatesModel::Probit => map_or_last(
                            probit_map_coefficients(&prior, &obs, cfg.gamma, &cfg.flow, &vec![0.0; prior.len()]),
                            "graph probit",
                        )?,
                    };
                    discrete_vs_continuum_error(&eig.synthesize(&c), &cloud, &grid, reference)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for (mi, &model) in models.iter().enumerate() {
        let mut curves = Vec::new();
        for (ni, &n) in cfg.sizes.iter().enumerate() {
            let mut mean = vec![0.0; eps.len()];
            let mut sq = vec![0.0; eps.len()];
            for s in 0..cfg.seeds {
                for e in 0..eps.len() {
                    let v = errors[(ni * cfg.seeds + s) * eps.len() + e][mi];
                    mean[e] += v;
                    sq[e] += v * v;
                }
            }
            let k = cfg.seeds as f64;
            let std_error = mean
                .iter()
                .zip(&sq)
                .map(|(m, q)| if cfg.seeds > 1 { ((q - m * m / k) / (k - 1.0)).max(0.0).sqrt() / k.sqrt() } else { f64::NAN })
                .collect();
            mean.iter_mut().for_each(|m| *m /= k);
            let bounds = detect_bounds(&eps, &mean, cfg.window);
            curves.push(RatesCurve { n, epsilons: eps.clone(), mean, std_error, bounds });
        }
        let fit = |pick: fn(&Bounds) -> Option<f64>| -> Option<f64> {
            let (ns, bs): (Vec<f64>, Vec<f64>) =
                curves.iter().filter_map(|c| pick(&c.bounds).map(|b| (c.n as f64, b))).unzip();
            loglog_slope(&ns, &bs).ok()
        };
        let lower_slope = fit(|b| b.lower);
        let upper_slope = fit(|b| b.upper);
        let report = RatesReport { model, curves, lower_slope, upper_slope };
        if let Some(dir) = out {
            write_rates(dir, &report, &grid, &references[mi])?;
        }
        reports.push(report);
    }
    Ok(reports)
}

fn write_rates(dir: &Path, r: &RatesReport, grid: &Grid, reference: &[f64]) -> Result<()> {
    let name = r.model.name();
    let mut t = Table::create(dir, &format!("errors_{name}.csv"), &["n", "epsilon", "mean_error", "std_error"])?;
    for c in &r.curves {
        for e in 0..c.epsilons.len() {
            t.row(&[c.n as f64, c.epsilons[e], c.mean[e], c.std_error[e]])?;
        }
    }
    t.finish()?;
    let mut t = Table::create(dir, &format!("bounds_{name}.csv"), &["n", "argmin_epsilon", "min_error", "lower", "upper", "interior_minimum"])?;
    for c in &r.curves {
        t.row(&[
            c.n as f64,
            c.epsilons[c.bounds.argmin],
            c.mean[c.bounds.argmin],
            c.bounds.lower.unwrap_or(f64::NAN),
            c.bounds.upper.unwrap_or(f64::NAN),
            f64::from(u8::from(c.interior_minimum())),
        ])?;
    }
    t.finish()?;
    let mut t = Table::create(dir, &format!("fits_{name}.csv"), &["lower_slope", "upper_slope"])?;
    t.row(&[r.lower_slope.unwrap_or(f64::NAN), r.upper_slope.unwrap_or(f64::NAN)])?;
    t.finish()?;
    write_grid(dir, &format!("continuum_{name}.csv"), grid, &[("u", reference)])
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub sizes: Vec<usize>,
    /// Seed-averaged `‖v_n‖_{μ_n}` of the probit minimizer.
    pub norms: Vec<f64>,
}

impl DecayReport {
    pub fn monotone(&self) -> bool {
        self.norms.windows(2).all(|w| w[1] < w[0])
    }

    pub fn final_ratio(&self) -> f64 {
        self.norms[self.norms.len() - 1] / self.norms[0]
    }
}

/// Probit minimizer norms at the fixed bandwidth `cfg.decay.epsilon`.
pub fn label_information_loss(cfg: &RatesConfig, seed: u64, out: Option<&Path>) -> Result<DecayReport> {
    let labels = LabelModel::pair(&cfg.plus, &cfg.minus);
    let d = &cfg.decay;
    let tasks: Vec<(usize, usize)> = d.sizes.iter().flat_map(|&n| (0..d.seeds).map(move |s| (n, s))).collect();
    let norms: Vec<f64> = tasks
        .par_iter()
        .map(|&(n, s)| -> Result<f64> {
            let cloud = Density::uniform(2)?.sample(n - 2, stream_seed(seed, &[n as u64, s as u64, 0xdeca]));
            let (cloud, set) = assign_labels(&cloud, &labels)?;
            let (eig, s_n) = graph_spectrum(&cloud, d.epsilon, None)?;
            let prior = FractionalOperator::new(eig.clone(), cfg.alpha, cfg.tau, s_n)?;
            let obs = Observations::graph(&eig, &set)?;
            let c = map_or_last(
                probit_map_coefficients(&prior, &obs, cfg.gamma, &cfg.flow, &vec![0.0; prior.len()]),
                "fixed-ε probit",
            )?;
            let u = eig.synthesize(&c);
            Ok((u.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt())
        })
        .collect::<Result<_>>()?;
    let avg: Vec<f64> =
        norms.chunks(d.seeds).map(|c| c.iter().sum::<f64>() / d.seeds as f64).collect();
    if let Some(dir) = out {
        let mut t = Table::create(dir, "norm_decay.csv", &["n", "epsilon", "mean_norm"])?;
        for (&n, &v) in d.sizes.iter().zip(&avg) {
            t.row(&[n as f64, d.epsilon, v])?;
        }
        t.finish()?;
    }
    Ok(DecayReport { sizes: d.sizes.clone(), norms: avg })
}

// ---------------------------------------------------------------- extrapolation

#[derive(Debug, Clone)]
pub struct ExtrapolationRow {
    pub alpha: f64,
    pub epsilon: f64,
    /// Fraction of unlabelled nodes with `|u| <` threshold.
    pub spike_score: f64,
    /// Largest `|u(x_j) − y_j|` over the labelled nodes.
    pub interpolation_error: f64,
    /// Error to the continuum interpolant, when `α > d/2`.
    pub continuum_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExtrapolationReport {
    pub rows: Vec<ExtrapolationRow>,
}

impl ExtrapolationReport {
    pub fn score(&self, alpha: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.alpha == alpha).map(|r| r.spike_score)
    }
}

/// Graph kriging with two opposite labels for several smoothness levels.
pub fn run_extrapolation(cfg: &ExtrapolationConfig, seed: u64, out: Option<&Path>) -> Result<ExtrapolationReport> {
    let labels = LabelModel::pair(&cfg.plus, &cfg.minus);
    let dim = 2;
    let cloud = Density::uniform(dim)?.sample(cfg.n - 2, stream_seed(seed, &[cfg.n as u64]));
    let (cloud, set) = assign_labels(&cloud, &labels)?;
    let radius = connectivity_radius(&cloud);
    let rough_eps = cfg.radius_multiple * radius;
    let smooth: Vec<f64> = cfg.alphas.iter().copied().filter(|&a| a > dim as f64 / 2.0).collect();

    let krige_at = |eig: &Arc<EigenDecomposition>, s_n: f64, alpha: f64| -> Result<Vec<f64>> {
        let prior = FractionalOperator::new(eig.clone(), alpha, cfg.tau, s_n)?;
        let obs = Observations::graph(eig, &set)?;
        Ok(eig.synthesize(&krige_coefficients(&prior, &obs)?))
    };

    // For α > d/2, sweep ε against the continuum interpolant and keep the best.
    let mut chosen: Vec<(f64, f64, Vec<f64>, Option<f64>)> = Vec::new();
    if !smooth.is_empty() {
        let (grid, ceig, _) = continuum_eig(&Density::uniform(dim)?, cfg.grid, cfg.modes)?;
        let references: Vec<Vec<f64>> = smooth
            .iter()
            .map(|&a| {
                let prior = FractionalOperator::new(ceig.clone(), a, cfg.tau, 1.0)?;
                let obs = continuum_observations(&prior, &grid, &labels)?;
                Ok(ceig.synthesize(&krige_coefficients(&prior, &obs)?))
            })
            .collect::<Result<_>>()?;
        let eps = cfg.epsilon.values();
        let sweep: Vec<Vec<(Vec<f64>, f64)>> = eps
            .par_iter()
            .map(|&e| -> Result<Vec<(Vec<f64>, f64)>> {
                let (eig, s_n) = graph_spectrum(&cloud, e, None)?;
                smooth
                    .iter()
                    .zip(&references)
                    .map(|(&a, r)| {
                        let u = krige_at(&eig, s_n, a)?;
                        let err = discrete_vs_continuum_error(&u, &cloud, &grid, r)?;
                        Ok((u, err))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (ai, &a) in smooth.iter().enumerate() {
            let best = (0..eps.len()).fold(0, |b, e| if sweep[e][ai].1 < sweep[b][ai].1 { e } else { b });
            chosen.push((a, eps[best], sweep[best][ai].0.clone(), Some(sweep[best][ai].1)));
        }
    }
    let rough: Vec<f64> = cfg.alphas.iter().copied().filter(|&a| a <= dim as f64 / 2.0).collect();
    if !rough.is_empty() {
        let (eig, s_n) = graph_spectrum(&cloud, rough_eps, None)?;
        for &a in &rough {
            chosen.push((a, rough_eps, krige_at(&eig, s_n, a)?, None));
        }
    }
    let labelled: Vec<bool> = {
        let mut m = vec![false; cloud.len()];
        set.indices().iter().for_each(|&i| m[i] = true);
        m
    };
    let mut rows = Vec::new();
    for &alpha in &cfg.alphas {
        let (_, epsilon, u, cerr) = chosen.iter().find(|c| c.0 == alpha).expect("every α is handled");
        let free = u.iter().zip(&labelled).filter(|(_, &l)| !l);
        let (small, total) = free.fold((0usize, 0usize), |(s, t), (v, _)| (s + usize::from(v.abs() < cfg.threshold), t + 1));
        let interp = set.indices().iter().zip(set.labels()).map(|(&i, y)| (u[i] - y).abs()).fold(0.0, f64::max);
        rows.push(ExtrapolationRow {
            alpha,
            epsilon: *epsilon,
            spike_score: small as f64 / total.max(1) as f64,
            interpolation_error: interp,
            continuum_error: *cerr,
        });
        if let Some(dir) = out {
            let path = dir.join(format!("field_alpha{}.csv", tag(alpha)));
            let file = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            cloud.write_csv(&mut w, Some(("u", u))).map_err(io_err(&path))?;
            w.flush().map_err(io_err(&path))?;
        }
    }
    if let Some(dir) = out {
        let mut t = Table::create(
            dir,
            "summary.csv",
            &["alpha", "epsilon", "spike_score", "interpolation_error", "continuum_error", "connectivity_radius"],
        )?;
        for r in &rows {
            t.row(&[r.alpha, r.epsilon, r.spike_score, r.interpolation_error, r.continuum_error.unwrap_or(f64::NAN), radius])?;
        }
        t.finish()?;
    }
    Ok(ExtrapolationReport { rows })
}

// ---------------------------------------------------------------- mcmc-moons

#[derive(Debug, Clone)]
pub struct MoonsRow {
    pub alpha: f64,
    pub tau: f64,
    pub acceptance: f64,
    /// Mean `|E S(u)|` over nodes within one bandwidth of an arc.
    pub on_curve: f64,
    /// Mean `|E S(u)|` over nodes further than two bandwidths from both arcs.
    pub off_curve: f64,
    /// Mean sign at the grid nodes nearest the two labelled points.
    pub label_means: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct MoonsReport {
    /// Per-arc fraction of tube nodes where the Fiedler sign matches the arc's label.
    pub fiedler_consistency: [f64; 2],
    pub rows: Vec<MoonsRow>,
}

impl MoonsReport {
    pub fn row(&self, alpha: f64, tau: f64) -> Option<&MoonsRow> {
        self.rows.iter().find(|r| r.alpha == alpha && r.tau == tau)
    }
}

/// Zero-noise pCN sampling on the continuum two-moons density.
pub fn run_mcmc_moons(cfg: &MoonsConfig, seed: u64, out: Option<&Path>) -> Result<MoonsReport> {
    let density = Density::two_moons(cfg.moons.clone())?;
    let (grid, eig, rho) = continuum_eig(&density, cfg.grid, cfg.modes)?;
    let mids = [cfg.moons.arc_midpoint(0), cfg.moons.arc_midpoint(1)];
    let points = vec![
        FixedLabel { point: mids[0].to_vec(), label: 1.0 },
        FixedLabel { point: mids[1].to_vec(), label: -1.0 },
    ];
    let labels = LabelModel::Fixed { points };
    let fiedler = fiedler_vector(&eig, &grid, &mids[0])?;

    let near: Vec<Option<usize>> = (0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            let d = [cfg.moons.arc_distance(0, &x), cfg.moons.arc_distance(1, &x)];
            let a = usize::from(d[1] < d[0]);
            (d[a] < cfg.moons.bandwidth).then_some(a)
        })
        .collect();
    let far: Vec<bool> = (0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            cfg.moons.arc_distance(0, &x).min(cfg.moons.arc_distance(1, &x)) > 2.0 * cfg.moons.bandwidth
        })
        .collect();
    let mut consistency = [0.0; 2];
    for (a, c) in consistency.iter_mut().enumerate() {
        let expect = if a == 0 { 1.0 } else { -1.0 };
        let tube: Vec<usize> = (0..grid.len()).filter(|&i| near[i] == Some(a)).collect();
        *c = tube.iter().filter(|&&i| sign_scalar(fiedler.values[i]) == expect).count() as f64 / tube.len().max(1) as f64;
    }
    let label_nodes = [grid.cell_of(&mids[0]), grid.cell_of(&mids[1])];

    let cases: Vec<(f64, f64)> = cfg.alphas.iter().flat_map(|&a| cfg.taus.iter().map(move |&t| (a, t))).collect();
    let results: Vec<(MoonsRow, crate::posterior::ClassificationStats)> = cases
        .par_iter()
        .enumerate()
        .map(|(ci, &(alpha, tau))| {
            let prior = FractionalOperator::new(eig.clone(), alpha, tau, 1.0)?;
            let obs = continuum_observations(&prior, &grid, &labels)?;
            let init = krige_coefficients(&prior, &obs)?;
            let pcn = PcnConfig { seed: stream_seed(seed ^ cfg.pcn.seed, &[ci as u64]), ..cfg.pcn.clone() };
            let chain = run_chain(&prior, &misfit_potential(&obs, Misfit::Indicator), 1.0, init, &pcn)?;
            let st = classification_stats(&chain)?;
            let mean_abs = |mask: &dyn Fn(usize) -> bool| {
                let (s, c) = (0..grid.len()).filter(|&i| mask(i)).fold((0.0, 0usize), |(s, c), i| (s + st.mean_sign[i].abs(), c + 1));
                s / c.max(1) as f64
            };
            let row = MoonsRow {
                alpha,
                tau,
                acceptance: chain.acceptance_rate(),
                on_curve: mean_abs(&|i| near[i].is_some()),
                off_curve: mean_abs(&|i| far[i]),
                label_means: [st.mean_sign[label_nodes[0]], st.mean_sign[label_nodes[1]]],
            };
            Ok((row, st))
        })
        .collect::<Result<_>>()?;

    if let Some(dir) = out {
        let mut cols: Vec<(&str, &[f64])> = vec![("rho", &rho), ("fiedler", &fiedler.values)];
        if let Some(p) = &fiedler.partner {
            cols.push(("fiedler_partner", p));
        }
        write_grid(dir, "fiedler.csv", &grid, &cols)?;
        for (row, st) in &results {
            write_grid(
                dir,
                &format!("chain_alpha{}_tau{}.csv", tag(row.alpha), tag(row.tau)),
                &grid,
                &[("mean_sign", &st.mean_sign), ("variance", &st.variance), ("std_error", &st.std_error)],
            )?;
        }
        let mut t = Table::create(
            dir,
            "summary.csv",
            &["alpha", "tau", "acceptance", "on_curve_mean_abs", "off_curve_mean_abs", "label_plus_mean", "label_minus_mean"],
        )?;
        for (r, _) in &results {
            t.row(&[r.alpha, r.tau, r.acceptance, r.on_curve, r.off_curve, r.label_means[0], r.label_means[1]])?;
        }
        t.finish()?;
        let mut t = Table::create(dir, "fiedler_summary.csv", &["lambda2", "degenerate", "upper_arc_consistency", "lower_arc_consistency"])?;
        t.row(&[fiedler.lambda, f64::from(u8::from(fiedler.degenerate)), consistency[0], consistency[1]])?;
        t.finish()?;
    }
    Ok(MoonsReport { fiedler_consistency: consistency, rows: results.into_iter().map(|r| r.0).collect() })
}

// ---------------------------------------------------------------- spectra

#[derive(Debug, Clone)]
pub struct SpectraRow {
    pub n: usize,
    pub epsilon: f64,
    /// Seed-averaged `s_n λ_k`, `k = 1..=count`.
    pub scaled: Vec<f64>,
    pub relative_errors: Vec<f64>,
}

impl SpectraRow {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SpectraReport {
    pub analytic: Vec<f64>,
    pub rows: Vec<SpectraRow>,
    /// `(d, fitted exponent)` for the finite-difference operators.
    pub continuum_weyl: Vec<(usize, f64)>,
    pub graph_weyl: f64,
}

/// Graph spectra against the continuum and analytic Neumann spectra.
pub fn run_spectra(cfg: &SpectraConfig, seed: u64, out: Option<&Path>) -> Result<SpectraReport> {
    let analytic: Vec<f64> = neumann_eigenvalues(2, cfg.count + 1)[1..].to_vec();
    let needed = (cfg.count + 1).max(cfg.graph_fit[1]);
    let tasks: Vec<(usize, usize)> = cfg.sizes.iter().flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s))).collect();
    let spectra: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(n, s)| -> Result<Vec<f64>> {
            let cloud = Density::uniform(2)?.sample(n, stream_seed(seed, &[n as u64, s as u64]));
            let eps = sweet_spot_epsilon(n, 2, cfg.epsilon_multiplier);
            let (eig, s_n) = graph_spectrum(&cloud, eps, Some(needed.min(n)))?;
            Ok(eig.eigenvalues().iter().map(|l| l * s_n).collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (ni, &n) in cfg.sizes.iter().enumerate() {
        let group = &spectra[ni * cfg.seeds..(ni + 1) * cfg.seeds];
        let len = group.iter().map(Vec::len).min().unwrap_or(0);
        let mean: Vec<f64> = (0..len).map(|k| group.iter().map(|v| v[k]).sum::<f64>() / cfg.seeds as f64).collect();
        let scaled: Vec<f64> = mean.iter().skip(1).take(cfg.count).copied().collect();
        let relative_errors = scaled.iter().zip(&analytic).map(|(a, b)| (a - b).abs() / b).collect();
        rows.push(SpectraRow { n, epsilon: sweet_spot_epsilon(n, 2, cfg.epsilon_multiplier), scaled, relative_errors });
    }
    // Weyl fit on the largest graph, seed-averaged.
    let last = cfg.sizes.len() - 1;
    let group = &spectra[last * cfg.seeds..];
    let len = group.iter().map(Vec::len).min().unwrap_or(0);
    let mean: Vec<f64> = (0..len).map(|k| group.iter().map(|v| v[k]).sum::<f64>() / cfg.seeds as f64).collect();
    let graph_weyl = weyl_exponent(&mean, cfg.graph_fit[0], cfg.graph_fit[1])?;

    let mut continuum_weyl = Vec::new();
    let mut continuum_spectra = Vec::new();
    for (dim, side) in [(2usize, cfg.grid_2d), (3, cfg.grid_3d)] {
        let op = discretize(&Density::uniform(dim)?, side, false)?;
        let eig = op.decompose(Some(cfg.continuum_fit[1].min(op.grid().len())))?;
        continuum_weyl.push((dim, eig.weyl_exponent(cfg.continuum_fit[0], cfg.continuum_fit[1])?));
        continuum_spectra.push((dim, eig.eigenvalues().to_vec()));
    }

    if let Some(dir) = out {
        let mut t = Table::create(dir, "graph_spectra.csv", &["n", "seed", "k", "scaled_lambda"])?;
        for (&(n, s), v) in tasks.iter().zip(&spectra) {
            for (k, l) in v.iter().enumerate() {
                t.row(&[n as f64, s as f64, k as f64, *l])?;
            }
        }
        t.finish()?;
        let mut t = Table::create(dir, "continuum_spectra.csv", &["d", "k", "finite_difference", "analytic"])?;
        for (dim, v) in &continuum_spectra {
            let exact = neumann_eigenvalues(*dim, v.len());
            for (k, l) in v.iter().enumerate() {
                t.row(&[*dim as f64, k as f64, *l, exact[k]])?;
            }
        }
        t.finish()?;
        let mut t = Table::create(dir, "errors.csv", &["n", "epsilon", "k", "mean_scaled_lambda", "analytic", "relative_error"])?;
        for r in &rows {
            for k in 0..r.scaled.len() {
                t.row(&[r.n as f64, r.epsilon, (k + 1) as f64, r.scaled[k], analytic[k], r.relative_errors[k]])?;
            }
        }
        t.finish()?;
        let mut t = Table::create(dir, "weyl.csv", &["source", "d", "exponent", "expected"])?;
        for (dim, v) in &continuum_weyl {
            t.line(&format!("continuum,{dim},{v},{}", 2.0 / *dim as f64))?;
        }
        t.line(&format!("graph,2,{graph_weyl},1"))?;
        t.finish()?;
    }
    Ok(SpectraReport { analytic, rows, continuum_weyl, graph_weyl })
}

// ---------------------------------------------------------------- small noise

/// Probit and level-set chains against the indicator chain as γ decreases.
pub fn run_smallnoise(cfg: &SmallNoiseConfig, seed: u64, out: Option<&Path>) -> Result<SmallNoiseReport> {
    let cloud = Density::uniform(2)?.sample(cfg.n, stream_seed(seed, &[cfg.n as u64]));
    let (cloud, set) = assign_labels(&cloud, &cfg.labels)?;
    if set.is_empty() {
        return Err(Error::validation("no labelled nodes; enlarge the label regions"));
    }
    let eps = cfg.epsilon.unwrap_or_else(|| sweet_spot_epsilon(cloud.len(), 2, 1.0));
    let (eig, s_n) = graph_spectrum(&cloud, eps, None)?;
    let prior = FractionalOperator::new(eig.clone(), cfg.alpha, cfg.tau, s_n)?;
    let obs = Observations::graph(&eig, &set)?;
    let pcn = PcnConfig { seed: stream_seed(seed ^ cfg.pcn.seed, &[1]), ..cfg.pcn.clone() };
    let report = small_noise_agreement(&prior, &obs, set.r_n(), &cfg.gammas, &pcn)?;
    if let Some(dir) = out {
        let mut t = Table::create(
            dir,
            "agreement.csv",
            &[
                "gamma",
                "probit_max",
                "levelset_max",
                "probit_mean",
                "levelset_mean",
                "probit_max_z",
                "levelset_max_z",
                "probit_noise",
                "levelset_noise",
                "probit_acceptance",
                "levelset_acceptance",
                "indicator_acceptance",
            ],
        )?;
        for r in &report.rows {
            t.row(&[
                r.gamma,
                r.probit_max,
                r.levelset_max,
                r.probit_mean,
                r.levelset_mean,
                r.probit_max_z,
                r.levelset_max_z,
                r.probit_noise,
                r.levelset_noise,
                r.acceptance[0],
                r.acceptance[1],
                r.acceptance[2],
            ])?;
        }
        t.finish()?;
        let path = dir.join("indicator.csv");
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "x1,x2,mean_sign,variance,std_error").map_err(io_err(&path))?;
        let st = &report.indicator;
        for (i, x) in cloud.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", x[0], x[1], st.mean_sign[i], st.variance[i], st.std_error[i]).map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.name().parse::<ExperimentId>().unwrap(), id);
        }
        assert!("nope".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 7\n[rates]\nalpha = 3.0\n[rates.epsilon]\nmin = 0.01\nmax = 0.2\ncount = 4\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.rates.alpha, 3.0);
        assert_eq!(cfg.rates.tau, 1.0);
        assert_eq!(cfg.rates.epsilon.values().len(), 4);
        assert_eq!(cfg.channel, ChannelConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("sede = 1"), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.rates.alpha = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.smallnoise.gammas = vec![1.0, -1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.spectra.sizes = vec![3];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.channel.tau = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mismatched_experiment_is_a_config_error() {
        let cfg = ExperimentConfig { experiment: Some(ExperimentId::Spectra), ..ExperimentConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run(ExperimentId::Channel, &cfg, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn moving_average_preserves_constants_and_shrinks_at_the_ends() {
        assert_eq!(moving_average(&[2.0; 7], 5), vec![2.0; 7]);
        let s = moving_average(&[0.0, 3.0, 6.0, 9.0], 3);
        assert_eq!(s, vec![1.5, 3.0, 6.0, 7.5]);
    }

    #[test]
    fn bounds_bracket_the_minimum_of_a_smooth_well() {
        // Logistic walls at 0.1 and 0.4 around a flat floor.
        let eps: Vec<f64> = (0..100).map(|i| 0.005 + 0.005 * i as f64).collect();
        let err: Vec<f64> =
            eps.iter().map(|&e| 1.0 / (1.0 + ((e - 0.1) / 0.01).exp()) + 1.0 / (1.0 + (-(e - 0.4) / 0.01).exp())).collect();
        let b = detect_bounds(&eps, &err, 5);
        assert!((b.lower.unwrap() - 0.1).abs() < 0.01, "{b:?}");
        assert!((b.upper.unwrap() - 0.4).abs() < 0.01, "{b:?}");
        assert!(eps[b.argmin] > 0.1 && eps[b.argmin] < 0.4);
    }

    #[test]
    fn monotone_curve_has_no_interior_minimum() {
        let c = RatesCurve {
            n: 10,
            epsilons: vec![0.1, 0.2, 0.3],
            mean: vec![3.0, 2.0, 1.0],
            std_error: vec![0.0; 3],
            bounds: Bounds { argmin: 2, lower: None, upper: None },
        };
        assert!(!c.interior_minimum());
    }

    #[test]
    fn stream_seeds_differ_across_parts() {
        assert_ne!(stream_seed(0, &[1, 2]), stream_seed(0, &[2, 1]));
        assert_eq!(stream_seed(5, &[3]), stream_seed(5, &[3]));
    }

    #[test]
    fn epsilon_grid_endpoints() {
        let g = EpsilonGrid { min: 0.005, max: 0.5, count: 100 }.values();
        assert_eq!(g.len(), 100);
        assert!((g[99] - 0.5).abs() < 1e-15);
    }
}
