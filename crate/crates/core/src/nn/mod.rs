//! Small dense neural networks with hand-written backward passes, and the
//! generative models built from them.

pub mod adam;
pub mod cascade;
pub mod ddpm;
pub mod denoiser;
pub mod gradcheck;
pub mod infer;
pub mod mlp;
pub mod normalize;
pub mod null;
pub mod range;
pub mod schedule;
pub mod tensor;
pub mod train;
pub mod vae;

pub use adam::{Adam, AdamConfig};
pub use cascade::{cascade_sample, CascadeSamples};
pub use ddpm::{sample_null_ddpm, train_null_ddpm, DdpmConfig, DdpmModel};
pub use mlp::{Activation, Linear, Mlp, ParamSet};
pub use null::{GaussianConditional, NullModel};
pub use range::{train_range, RangeConfig, RangeKind, RangeModel};
pub use tensor::Mat;
pub use vae::{sample_null_vae, train_null_vae, VaeConfig, VaeModel};
