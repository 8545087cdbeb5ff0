//! Graph-based semi-supervised learning: ε-graphs, fractional Laplacian
//! priors, continuum limits, and the MAP, kriging and MCMC estimators built on
//! them.

pub mod continuum;
pub mod density;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod labels;
pub mod models;
pub mod posterior;
pub mod quadrature;
pub mod sparse;
pub mod spectral;
pub mod transport;

pub use density::{Density, DensityKind, PointCloud, TwoMoons};
pub use error::{Error, Result};
pub use graph::{build_graph, Kernel, KernelConstants, Profile, WeightedGraph};
pub use sparse::{SymCsr, SymmetricOperator};
pub use spectral::{decompose, decompose_with, EigenDecomposition, EigenOptions, FractionalOperator, SparsePowerOperator};
pub use continuum::{discretize, ContinuumOperator, Grid};
pub use labels::{assign_labels, sign, LabelKind, LabelModel, LabelSet, Region};
pub use models::{krige, log_psi, probit_map, GradientFlowConfig, LevelSetPotential, Misfit, Observations, ProbitPotential};
pub use posterior::{classification_stats, pcn_step, run_chain, small_noise_agreement, Chain, PcnConfig, SmallNoiseReport};
pub use transport::{discrete_vs_continuum_error, tlp_exact, tlp_map_bound, MapBound, TlpPair};
pub use experiments::{run, ExperimentConfig, ExperimentId};
