use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{DiscreteManifold, ScalarField};
use crate::minimizer::{minimize_j, MinimizerState, RestartSummary};
use crate::sobolev::{check_admissibility, constants, estimate_yamabe_invariant, AdmissibilityReport};
use crate::spectrum::{conformal_spectrum, laplacian_spectrum, transversality_integrals, SpectralReport};

use super::config::{ExperimentConfig, RunSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    GapPositive,
    GapInconclusive,
    StageFailure,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::GapPositive => "gap-positive",
            Verdict::GapInconclusive => "gap-inconclusive",
            Verdict::StageFailure => "stage-failure",
        }
    }

    /// Process exit status for this verdict.
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::GapPositive => 0,
            Verdict::GapInconclusive => 2,
            Verdict::StageFailure => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Constants,
    Build,
    Admissibility,
    FlatSpectrum,
    Minimize,
    ConformalSpectrum,
    Transversality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub status: Verdict,
    pub gap_tolerance: f64,
    /// The stage that failed, for `stage-failure`.
    pub stage: Option<Stage>,
    pub diagnostics: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerSummary {
    pub alpha: f64,
    pub j_value: f64,
    pub el_residual: f64,
    pub el_residual_tol: f64,
    pub converged: bool,
    pub iterations: usize,
    pub newton_steps: usize,
    pub restart: usize,
    pub blow_up: bool,
    pub concentration: f64,
    pub peak_mass_fraction: f64,
    pub equal_value_states: usize,
    pub restarts: Vec<RestartSummary>,
    /// `J` after every accepted step of the selected restart.
    pub trace: Vec<f64>,
}

impl MinimizerSummary {
    fn new(state: &MinimizerState, tol: f64) -> Self {
        Self {
            alpha: state.alpha,
            j_value: state.j_value,
            el_residual: state.el_residual,
            el_residual_tol: tol,
            converged: state.converged,
            iterations: state.iterations,
            newton_steps: state.newton_steps,
            restart: state.restart,
            blow_up: state.blow_up,
            concentration: state.concentration,
            peak_mass_fraction: state.peak_mass_fraction,
            equal_value_states: state.equal_value_states.len(),
            restarts: state.restarts.clone(),
            trace: state.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub lambda1: f64,
    pub normalized_lambda1: f64,
    pub multiplicity: usize,
    pub volume: f64,
    pub sphere_bound: Option<f64>,
    pub gap: Option<f64>,
    pub iterations: usize,
}

impl From<&SpectralReport> for SpectrumSummary {
    fn from(r: &SpectralReport) -> Self {
        Self {
            eigenvalues: r.eigenvalues.clone(),
            residuals: r.residuals.clone(),
            max_residual: r.max_residual(),
            lambda1: r.lambda1,
            normalized_lambda1: r.normalized_lambda1,
            multiplicity: r.multiplicity,
            volume: r.vol_gtilde,
            sphere_bound: r.sphere_bound,
            gap: r.gap_to_sphere_bound,
            iterations: r.iterations,
        }
    }
}

/// Spectra of the starting (flat) metric and of the conformal metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSection {
    pub flat: Option<SpectrumSummary>,
    pub conformal: Option<SpectrumSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalitySummary {
    /// `Σ w u² φ` for each eigenfield of the λ₁ cluster.
    pub integrals: Vec<f64>,
    pub min_abs: f64,
    pub max_abs: f64,
}

impl TransversalitySummary {
    fn new(integrals: Vec<f64>) -> Self {
        let min_abs = integrals.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
        let max_abs = integrals.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        Self {
            integrals,
            min_abs,
            max_abs,
        }
    }
}

/// Deterministic work counters, plus wall-clock time when requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub minimizer_iterations: usize,
    pub newton_steps: usize,
    pub eigensolver_iterations: usize,
    pub wall_clock_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    pub config: ExperimentConfig,
    pub admissibility: Option<AdmissibilityReport>,
    pub minimizer: Option<MinimizerSummary>,
    pub spectrum: SpectrumSection,
    pub transversality: Option<TransversalitySummary>,
    pub verdict: VerdictReport,
    pub timing: Timing,
}

impl RigidityReport {
    pub fn exit_code(&self) -> i32 {
        self.verdict.status.exit_code()
    }

    /// The report without its config echo and wall-clock time, for
    /// comparing runs that differ only in bookkeeping.
    pub fn results_eq(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            r.config = other.config.clone();
            r.timing.wall_clock_seconds = None;
            r
        };
        strip(self) == strip(other)
    }
}

/// The report together with the numerical objects behind it.
#[derive(Debug, Clone)]
pub struct RigidityRun {
    pub report: RigidityReport,
    pub manifold: Option<DiscreteManifold>,
    pub h: Option<ScalarField>,
    pub state: Option<MinimizerState>,
    pub spectrum: Option<SpectralReport>,
}

/// Runs constants → build → admissibility → flat spectrum → minimize →
/// conformal spectrum → transversality.
///
/// Invalid configs (including inadmissible `h` without the override) are
/// errors; numerical failures of a stage yield a `stage-failure` report.
pub fn run_rigidity(config: &ExperimentConfig, settings: &RunSettings) -> Result<RigidityReport> {
    Ok(run_rigidity_detailed(config, settings)?.report)
}

pub fn run_rigidity_detailed(config: &ExperimentConfig, settings: &RunSettings) -> Result<RigidityRun> {
    config.validate(settings)?;
    run_trial(config, settings, 0, None)
}

/// Yamabe estimate shared by all trials of a scan.
pub(crate) fn estimate_mu(config: &ExperimentConfig, m: &DiscreteManifold) -> Result<f64> {
    estimate_yamabe_invariant(m, m.scalar_curvature(), &config.yamabe_options())
}

pub(crate) fn admissibility_gate(report: &AdmissibilityReport, settings: &RunSettings) -> Result<()> {
    if settings.override_admissibility {
        return Ok(());
    }
    if !report.aubin_ok {
        return Err(Error::config(
            "manifold",
            format!(
                "Yamabe estimate {:.6} is not below K_n^-2 = {:.6}",
                report.mu_estimate, report.k_inv_sq
            ),
        ));
    }
    if !report.h_ok {
        return Err(Error::config(
            "h",
            format!(
                "distance from the centered potential exceeds the admissible radius by {:.6}",
                -report.h_norm_gap
            ),
        ));
    }
    Ok(())
}

struct Builder<'a> {
    config: &'a ExperimentConfig,
    settings: &'a RunSettings,
    start: Option<Instant>,
    report: RigidityReport,
}

impl Builder<'_> {
    fn finish(mut self, status: Verdict, stage: Option<Stage>, diagnostics: Option<String>) -> RigidityReport {
        self.report.verdict = VerdictReport {
            status,
            gap_tolerance: self.settings.gap_tolerance,
            stage,
            diagnostics,
        };
        if let (true, Some(start)) = (self.settings.record_wall_clock, self.start) {
            self.report.timing.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
        }
        self.report
    }

    fn fail(self, stage: Stage, err: impl std::fmt::Display) -> RigidityReport {
        log::warn!("stage {stage:?} failed: {err}");
        self.finish(Verdict::StageFailure, Some(stage), Some(err.to_string()))
    }

    fn empty(config: &ExperimentConfig) -> RigidityReport {
        RigidityReport {
            config: config.clone(),
            admissibility: None,
            minimizer: None,
            spectrum: SpectrumSection::default(),
            transversality: None,
            verdict: VerdictReport {
                status: Verdict::StageFailure,
                gap_tolerance: 0.0,
                stage: None,
                diagnostics: None,
            },
            timing: Timing::default(),
        }
    }
}

/// One pipeline run with the `h` perturbation of `trial`; `mu` reuses a
/// Yamabe estimate computed on the same grid.
pub(crate) fn run_trial(
    config: &ExperimentConfig,
    settings: &RunSettings,
    trial: usize,
    mu: Option<f64>,
) -> Result<RigidityRun> {
    let mut b = Builder {
        config,
        settings,
        start: settings.record_wall_clock.then(Instant::now),
        report: Builder::empty(config),
    };
    let mut run = RigidityRun {
        report: Builder::empty(config),
        manifold: None,
        h: None,
        state: None,
        spectrum: None,
    };
    macro_rules! stage {
        ($stage:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => {
                    run.report = b.fail($stage, err);
                    return Ok(run);
                }
            }
        };
    }

    let consts = stage!(Stage::Constants, constants(config.manifold.dimension()));
    let m = stage!(Stage::Build, config.manifold.build());
    let h = stage!(Stage::Admissibility, config.h.realize(&m, b.config.perturbation_seed(trial)));
    let mu = match mu {
        Some(mu) => mu,
        None => stage!(Stage::Admissibility, estimate_mu(config, &m)),
    };
    let adm = stage!(Stage::Admissibility, check_admissibility(&m, m.scalar_curvature(), &h, mu));
    admissibility_gate(&adm, settings)?;
    b.report.admissibility = Some(adm);

    let spectrum_opts = config.spectrum_options();
    let flat = stage!(Stage::FlatSpectrum, laplacian_spectrum(&m, &spectrum_opts));
    b.report.spectrum.flat = Some(SpectrumSummary::from(&flat));
    b.report.timing.eigensolver_iterations += flat.iterations;

    let min_opts = config.minimizer_options();
    let state = stage!(Stage::Minimize, minimize_j(&m, &h, &min_opts));
    b.report.minimizer = Some(MinimizerSummary::new(&state, min_opts.el_residual_tol));
    b.report.timing.minimizer_iterations = state.iterations;
    b.report.timing.newton_steps = state.newton_steps;
    run.manifold = Some(m);
    run.h = Some(h);
    let m = run.manifold.as_ref().expect("just set");
    if !state.converged {
        let msg = format!(
            "Euler-Lagrange residual {:e} above tolerance {:e} after {} iterations",
            state.el_residual, min_opts.el_residual_tol, state.iterations
        );
        run.state = Some(state);
        run.report = b.fail(Stage::Minimize, msg);
        return Ok(run);
    }
    // Later stages may fail; the converged state stays available either way.
    run.state = Some(state.clone());

    let spec = stage!(Stage::ConformalSpectrum, conformal_spectrum(m, &state.u, &spectrum_opts));
    b.report.spectrum.conformal = Some(SpectrumSummary::from(&spec));
    b.report.timing.eigensolver_iterations += spec.iterations;

    let integrals = stage!(Stage::Transversality, transversality_integrals(m, &state.u, &spec));
    b.report.transversality = Some(TransversalitySummary::new(integrals));

    let gap = spec
        .gap_to_sphere_bound
        .unwrap_or(spec.normalized_lambda1 - consts.sphere_bound);
    let converged_spectrum = spec.max_residual() <= spectrum_opts.tol;
    let status = if converged_spectrum && gap > settings.gap_tolerance {
        Verdict::GapPositive
    } else {
        Verdict::GapInconclusive
    };
    let diagnostics = format!(
        "normalized lambda1 {:.6} vs sphere bound {:.6}: gap {:+.6} (tolerance {})",
        spec.normalized_lambda1, consts.sphere_bound, gap, settings.gap_tolerance
    );
    run.spectrum = Some(spec);
    run.report = b.finish(status, None, Some(diagnostics));
    Ok(run)
}
