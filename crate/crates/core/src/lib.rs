//! Gibbs-measure analysis of noisy discrete-time leaky integrate-and-fire
//! networks.
//!
//! The crate simulates the network, computes the exact conditional
//! probability of a spike pattern given a finite spike history, builds the
//! range-`R` Markov chain those probabilities define, and analyses its
//! stationary (Gibbs) measure: pressure, entropy, rates, divergences and
//! membrane-potential densities. Maximum-entropy spike-uplet models can be
//! fitted and compared against the network's chain, and empirical estimators
//! work directly on simulated rasters.

pub mod error;
pub mod kernel;
pub mod markov;
pub mod maxent;
pub mod params;
pub mod raster;
pub mod simulator;
pub mod stats;

pub use error::{Error, ParamViolation, Result};
pub use kernel::{
    conditional_moments, drift_envelope, gauss_tail, integrated_spikes, log_gauss_tail,
    no_fire_bounds, potential, transition_prob, variation_constants, ConditionalMoments,
    NoFireBounds, VariationConstants,
};
pub use markov::{
    block_measure, block_probability, build_chain, build_chain_capped, gibbs_ratio_bounds,
    kl_divergence, membrane_density, stationary, stationary_with, GibbsChain, GibbsRatioBounds,
    MembraneMixture, PowerOptions, StationaryAnalysis,
};
pub use maxent::{
    block_to_uplet, chain_from_potential, eval_monomial, expectations, fit, model_divergence,
    FitOptions, FitResult, Monomial, UpletPotential,
};
pub use params::{validate_params, NetworkParams};
pub use raster::{
    decode_word, encode_block, follows, last_firing_time, parse_raster, write_raster, Raster,
    SpikeBlock, SpikingPattern, Word,
};
pub use simulator::{run, step, SimOutput, SimState};
pub use stats::{
    empirical_blocks, empirical_kl, empirical_pairwise, empirical_rates, entropy_rate,
    EmpiricalMeasure,
};
