//! Synthetic experiment families: an undersampled Fourier toy with procedural
//! phantoms, and localized patch sources behind a random leadfield.

pub mod case;
pub mod fourier;
pub mod patch;
pub mod phantom;

pub use case::{add_noise_sigma, add_noise_snr, snr_sigma, GroundTruthCase, NoiseLevel};
pub use fourier::{build_fourier_toy, FourierToyConfig, FourierToyProblem, MaskKind};
pub use patch::{
    build_patch_problem, sample_patch_sources, Geometry, LeadfieldKind, PatchProblemConfig, PatchSampling,
    PatchSourceProblem,
};
pub use phantom::{phantom, synth_images, write_pgm};
