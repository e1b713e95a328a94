use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{DiscreteManifold, GridSpec, ScalarField};
use crate::minimizer::MinimizerOptions;
use crate::sobolev::{conformal_coefficient, YamabeEstimateOptions};
use crate::spectrum::SpectrumOptions;

use super::perturbation::smooth_perturbation;

/// Absolute tolerance on the normalized-eigenvalue gap below which a run is
/// reported as inconclusive.
pub const DEFAULT_GAP_TOLERANCE: f64 = 0.5;

/// Largest grid accepted without an explicit size override.
pub const MAX_NODES: usize = 1_000_000;

/// The potential `h` in `J_{g,h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HSpec {
    Constant { value: f64 },
    /// `(n−2)/(4(n−1)) · S_g`.
    Centered,
    /// The centered value plus `amplitude · ψ`, where `ψ` is a random
    /// low-frequency field with unit sup norm.
    CenteredPerturbed { amplitude: f64 },
}

impl HSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            HSpec::Constant { .. } => "constant",
            HSpec::Centered => "centered",
            HSpec::CenteredPerturbed { .. } => "centered-perturbed",
        }
    }

    /// The constant value, the perturbation amplitude, or zero when centered.
    pub fn amplitude(&self) -> f64 {
        match self {
            HSpec::Constant { value } => *value,
            HSpec::Centered => 0.0,
            HSpec::CenteredPerturbed { amplitude } => *amplitude,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            HSpec::Constant { value } if !value.is_finite() => {
                Err(Error::config("h.value", format!("{value} is not finite")))
            }
            HSpec::CenteredPerturbed { amplitude } if !(amplitude.is_finite() && *amplitude >= 0.0) => Err(
                Error::config("h.amplitude", format!("{amplitude} must be finite and nonnegative")),
            ),
            _ => Ok(()),
        }
    }

    /// Realizes `h` on the grid; `perturbation_seed` selects the random field.
    pub fn realize(&self, m: &DiscreteManifold, perturbation_seed: u64) -> Result<ScalarField> {
        let center = conformal_coefficient(m.dimension()) * m.scalar_curvature();
        match self {
            HSpec::Constant { value } => Ok(ScalarField::constant(m, *value)),
            HSpec::Centered => Ok(ScalarField::constant(m, center)),
            HSpec::CenteredPerturbed { amplitude } => {
                let psi = smooth_perturbation(m, perturbation_seed)?;
                Ok(psi.map(|x| center + amplitude * x))
            }
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// A complete, reproducible experiment description.
///
/// The top-level `seed` drives every random choice; each stage combines it
/// with the stage's own `seed` option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: GridSpec,
    pub h: HSpec,
    #[serde(default)]
    pub minimizer: MinimizerOptions,
    #[serde(default)]
    pub spectrum: SpectrumOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

/// Run-time switches that are not part of the experiment itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    /// Run even when `h` or the manifold fails the admissibility check.
    pub override_admissibility: bool,
    /// Accept grids above [`MAX_NODES`].
    pub override_size: bool,
    pub gap_tolerance: f64,
    /// Record wall-clock durations (which breaks byte-reproducibility).
    pub record_wall_clock: bool,
    /// Upper bound on concurrently running scan trials.
    pub workers: Option<usize>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            override_admissibility: false,
            override_size: false,
            gap_tolerance: DEFAULT_GAP_TOLERANCE,
            record_wall_clock: false,
            workers: None,
        }
    }
}

impl RunSettings {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.gap_tolerance.is_finite() && self.gap_tolerance >= 0.0) {
            return Err(Error::config("gap_tolerance", "must be finite and nonnegative"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be at least one"));
        }
        Ok(())
    }
}

fn prefix_field(prefix: &str, err: Error) -> Error {
    match err {
        Error::Config { field, message } => Error::Config {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(master: u64, stream: u64, local: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_mul(0x1000_0000_01b3) ^ splitmix64(local)))
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Checks every field; the error names the offending one.
    pub fn validate(&self, settings: &RunSettings) -> Result<()> {
        settings.validate()?;
        self.manifold.validate()?;
        let n = self.manifold.dimension();
        if n < 3 {
            return Err(Error::config(
                "manifold",
                format!("dimension {n} is below 3; the critical exponent is undefined"),
            ));
        }
        self.check_size(self.manifold.node_count(), settings)?;
        self.h.validate()?;
        self.minimizer.validate().map_err(|e| prefix_field("minimizer", e))?;
        self.spectrum.validate().map_err(|e| prefix_field("spectrum", e))?;
        Ok(())
    }

    pub(crate) fn check_size(&self, nodes: usize, settings: &RunSettings) -> Result<()> {
        if nodes > MAX_NODES && !settings.override_size {
            return Err(Error::config(
                "manifold.resolution",
                format!("{nodes} nodes exceed the limit of {MAX_NODES} (use the size override)"),
            ));
        }
        Ok(())
    }

    pub(crate) fn minimizer_options(&self) -> MinimizerOptions {
        MinimizerOptions {
            seed: derive_seed(self.seed, 1, self.minimizer.seed),
            ..self.minimizer
        }
    }

    pub(crate) fn spectrum_options(&self) -> SpectrumOptions {
        SpectrumOptions {
            seed: derive_seed(self.seed, 2, self.spectrum.seed),
            ..self.spectrum
        }
    }

    pub(crate) fn yamabe_options(&self) -> YamabeEstimateOptions {
        YamabeEstimateOptions {
            seed: derive_seed(self.seed, 3, 0),
            ..YamabeEstimateOptions::default()
        }
    }

    /// Seed of the `h` perturbation of scan trial `trial`; single runs use
    /// trial zero.
    pub fn perturbation_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, 4, trial as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TORUS: &str = r#"{
        "manifold": {"family": "flat-torus", "lengths": [1, 1, 1], "resolution": [8, 8, 8]},
        "h": {"kind": "constant", "value": 0.1},
        "seed": 7
    }"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let c = ExperimentConfig::from_json_str(TORUS).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.h, HSpec::Constant { value: 0.1 });
        assert_eq!(c.minimizer, MinimizerOptions::default());
        assert_eq!(c.out, PathBuf::from("out"));
        c.validate(&RunSettings::default()).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = TORUS.replace("\"seed\": 7", "\"seed\": 7, \"colour\": 1");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let text = TORUS.replace("\"value\": 0.1", "\"value\": 0.1, \"amp\": 2");
        assert!(ExperimentConfig::from_json_str(&text).is_err());
    }

    #[test]
    fn small_resolution_is_an_invalid_spec() {
        let text = TORUS.replace("[8, 8, 8]", "[4, 4, 4]");
        let c = ExperimentConfig::from_json_str(&text).unwrap();
        assert!(c.validate(&RunSettings::default()).is_ok());
        let text = TORUS.replace("[8, 8, 8]", "[3, 8, 8]");
        let c = ExperimentConfig::from_json_str(&text).unwrap();
        assert!(matches!(c.validate(&RunSettings::default()), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut c = ExperimentConfig::from_json_str(TORUS).unwrap();
        c.minimizer.restarts = 0;
        let err = c.validate(&RunSettings::default()).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "minimizer.restarts"), "{err}");

        let mut c = ExperimentConfig::from_json_str(TORUS).unwrap();
        c.h = HSpec::CenteredPerturbed { amplitude: -1.0 };
        let err = c.validate(&RunSettings::default()).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "h.amplitude"));

        let mut c = ExperimentConfig::from_json_str(TORUS).unwrap();
        c.manifold = GridSpec::flat_torus(&[1.0, 1.0], &[8, 8]);
        let err = c.validate(&RunSettings::default()).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "manifold"));
    }

    #[test]
    fn size_guard() {
        let mut c = ExperimentConfig::from_json_str(TORUS).unwrap();
        c.manifold = GridSpec::flat_torus(&[1.0; 3], &[128, 128, 128]);
        let err = c.validate(&RunSettings::default()).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "manifold.resolution"));
        let settings = RunSettings {
            override_size: true,
            ..RunSettings::default()
        };
        c.validate(&settings).unwrap();
    }

    #[test]
    fn seeds_are_derived_deterministically() {
        let a = ExperimentConfig::from_json_str(TORUS).unwrap();
        let mut b = a.clone();
        assert_eq!(a.minimizer_options(), b.minimizer_options());
        b.seed = 8;
        assert_ne!(a.minimizer_options().seed, b.minimizer_options().seed);
        assert_ne!(a.perturbation_seed(0), a.perturbation_seed(1));
        assert_ne!(a.spectrum_options().seed, a.minimizer_options().seed);
    }

    #[test]
    fn centered_h_on_cylinder() {
        let m = GridSpec::product(GridSpec::circle(30.0, 8), GridSpec::round_sphere2(1.0, 2))
            .build()
            .unwrap();
        let h = HSpec::Centered.realize(&m, 0).unwrap();
        assert!(h.values().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let p = HSpec::CenteredPerturbed { amplitude: 0.0 }.realize(&m, 3).unwrap();
        assert_eq!(p, h);
    }
}
