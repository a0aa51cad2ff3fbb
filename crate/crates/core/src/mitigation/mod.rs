//! Dataset reweighting and the code-space pairing that balances the local
//! quantity mixtures a generator is expected to produce.

mod code;
mod pairing;
mod reweight;
mod transform;

pub use code::{
    decode_posterior, decode_sample, decoder_matrix, decoder_weights, latin_hypercube, CodeSupport, DecoderMatrix,
    DEFAULT_K_DEC, DEFAULT_PERTURBATIONS_PER_CODE,
};
pub use pairing::{init_pairing, local_mixtures, swap_optimize, Pairing, PairingProblem, SwapOptions};
pub use reweight::{
    compute_reweight, compute_reweight_with_floor, inverse_prior, ReweightPlan, DEFAULT_INVERSE_FLOOR_FRACTION,
    DEFAULT_REWEIGHT_FLOOR,
};
pub use transform::{posterior_bins, transform_plan, TransformConfig, TransformPlan};
