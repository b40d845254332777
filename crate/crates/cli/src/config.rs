//! Experiment configuration: strict JSON, every field defaulted.

use std::path::{Path, PathBuf};

use nullcal::calibration::{SweepOptions, TestStatistic};
use nullcal::gaussian::GaussianParams;
use nullcal::nn::{DdpmConfig, RangeConfig, RangeKind, VaeConfig};
use nullcal::synthetic::{FourierToyConfig, PatchProblemConfig, PatchSampling};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Gaussian,
    FourierToy,
    PatchSource,
}

/// A null sampler to evaluate. Trained kinds load a checkpoint; the oracle
/// kinds exist only for the Gaussian experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullKind {
    Ddpm,
    Vae,
    Oracle,
    ScaledOracle(f64),
}

impl NullKind {
    pub fn label(&self) -> String {
        match self {
            NullKind::Ddpm => "ddpm".into(),
            NullKind::Vae => "vae".into(),
            NullKind::Oracle => "oracle".into(),
            NullKind::ScaledOracle(s) => format!("scaled-oracle-{s}"),
        }
    }

    pub fn is_trained(&self) -> bool {
        matches!(self, NullKind::Ddpm | NullKind::Vae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub test_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 100_000,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbcConfig {
    pub samples_per_case: usize,
    /// Cases taken from the start of the test split; 0 uses the whole split.
    pub cases: usize,
    pub statistics: Vec<TestStatistic>,
    pub bins: usize,
    /// Samples per case for the variance-ratio check on the Gaussian problem.
    pub variance_samples: usize,
}

impl Default for SbcConfig {
    fn default() -> Self {
        Self {
            samples_per_case: 200,
            cases: 500,
            statistics: vec![TestStatistic::L2Norm, TestStatistic::PeakRatio],
            bins: 20,
            variance_samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub samples: usize,
    pub case: usize,
    pub average: bool,
    /// Cases averaged over; 0 uses the whole test split.
    pub average_cases: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            case: 0,
            average: true,
            average_cases: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub noise_draws: usize,
    pub samples: usize,
    pub cases: usize,
    pub probes: usize,
    pub bound_sigmas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let options = SweepOptions::default();
        Self {
            sigmas: options.sigmas,
            noise_draws: options.noise_draws,
            samples: options.samples,
            cases: 50,
            probes: 10,
            bound_sigmas: vec![0.05, 0.1, 0.2],
        }
    }
}

impl SweepConfig {
    pub fn options(&self, seed: u64) -> SweepOptions {
        SweepOptions {
            sigmas: self.sigmas.clone(),
            noise_draws: self.noise_draws,
            samples: self.samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub samples: usize,
    /// Test cases evaluated; 0 uses the whole split.
    pub cases: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { samples: 200, cases: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub gaussian: GaussianParams,
    pub fourier: FourierToyConfig,
    pub patch: PatchProblemConfig,
    pub patch_sampling: PatchSampling,
    pub ranges: Vec<RangeKind>,
    pub range: RangeConfig,
    pub nulls: Vec<NullKind>,
    pub ddpm: DdpmConfig,
    pub vae: VaeConfig,
    pub sbc: SbcConfig,
    pub map: MapConfig,
    pub sweep: SweepConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Gaussian,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            gaussian: GaussianParams::default(),
            fourier: FourierToyConfig::default(),
            patch: PatchProblemConfig::default(),
            patch_sampling: PatchSampling::default(),
            ranges: vec![RangeKind::Mlp],
            range: RangeConfig::default(),
            nulls: vec![NullKind::Ddpm],
            ddpm: DdpmConfig::default(),
            vae: VaeConfig::default(),
            sbc: SbcConfig::default(),
            map: MapConfig::default(),
            sweep: SweepConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.dataset.count == 0 {
            return bad("dataset.count must be positive");
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return bad("dataset.test_fraction must lie in (0, 1)");
        }
        if self.nulls.is_empty() {
            return bad("nulls must name at least one null model");
        }
        for null in &self.nulls {
            match null {
                NullKind::Oracle | NullKind::ScaledOracle(_) if self.experiment != ExperimentKind::Gaussian => {
                    return bad("oracle null models exist only for the gaussian experiment");
                }
                NullKind::ScaledOracle(s) if !(*s > 0.0 && s.is_finite()) => {
                    return bad("scaled-oracle factor must be positive");
                }
                _ => {}
            }
        }
        if self.ranges.is_empty() {
            return bad("ranges must name at least one range model");
        }
        if self.sbc.statistics.is_empty() {
            return bad("sbc.statistics must be nonempty");
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed for one stage, combining the top-level seed with a module seed.
    pub fn stage_seed(&self, stage: u64, module_seed: u64) -> u64 {
        nullcal::rng::derive_seed(self.seed, &[0xC11, stage, module_seed])
    }

    pub fn train_count(&self) -> usize {
        let test = ((self.dataset.count as f64) * self.dataset.test_fraction).round() as usize;
        self.dataset.count - test.min(self.dataset.count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.gaussian.r, 32);
        assert_eq!(cfg.sbc.samples_per_case, 200);
        assert_eq!(cfg.train_count(), 90_000);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = ExperimentConfig::from_json(r#"{"ddpm": {"stepz": 3}}"#).unwrap_err();
        let CliError::Config(msg) = err else { panic!() };
        assert!(msg.contains("ddpm"), "{msg}");
        assert!(msg.contains("stepz"), "{msg}");
    }

    #[test]
    fn null_kinds_parse() {
        let cfg =
            ExperimentConfig::from_json(r#"{"nulls": ["ddpm", "vae", "oracle", {"scaled-oracle": 0.5}]}"#).unwrap();
        assert_eq!(cfg.nulls[3], NullKind::ScaledOracle(0.5));
        assert!(ExperimentConfig::from_json(r#"{"experiment": "patch-source", "nulls": ["oracle"]}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
