use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sobolev::check_admissibility;

use super::config::{ExperimentConfig, HSpec, RunSettings};
use super::pipeline::{admissibility_gate, estimate_mu, run_trial, RigidityReport, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTrial {
    pub trial: usize,
    pub perturbation_seed: u64,
    pub report: RigidityReport,
}

impl ScanTrial {
    pub fn gap(&self) -> Option<f64> {
        self.report.spectrum.conformal.as_ref().and_then(|s| s.gap)
    }

    pub fn multiplicity(&self) -> Option<usize> {
        self.report.spectrum.conformal.as_ref().map(|s| s.multiplicity)
    }

    pub fn min_transversality(&self) -> Option<f64> {
        self.report.transversality.as_ref().map(|t| t.min_abs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Range {
    fn of(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let k = values.len();
        let median = if k % 2 == 1 {
            values[k / 2]
        } else {
            0.5 * (values[k / 2 - 1] + values[k / 2])
        };
        Some(Self {
            min: values[0],
            median,
            max: values[k - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplicityCount {
    pub multiplicity: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanStatistics {
    pub trials: usize,
    pub gap_positive: usize,
    pub gap_inconclusive: usize,
    pub stage_failures: usize,
    /// Trials whose λ₁ cluster has size one.
    pub simple_lambda1: usize,
    pub multiplicities: Vec<MultiplicityCount>,
    pub gap: Option<Range>,
    /// Range over trials of `min |Σ w u² φ|` across the λ₁ cluster.
    pub min_transversality: Option<Range>,
}

impl ScanStatistics {
    fn new(trials: &[ScanTrial]) -> Self {
        let count = |v: Verdict| trials.iter().filter(|t| t.report.verdict.status == v).count();
        let mut multiplicities: Vec<MultiplicityCount> = Vec::new();
        for m in trials.iter().filter_map(ScanTrial::multiplicity) {
            match multiplicities.iter_mut().find(|c| c.multiplicity == m) {
                Some(c) => c.trials += 1,
                None => multiplicities.push(MultiplicityCount {
                    multiplicity: m,
                    trials: 1,
                }),
            }
        }
        multiplicities.sort_by_key(|c| c.multiplicity);
        Self {
            trials: trials.len(),
            gap_positive: count(Verdict::GapPositive),
            gap_inconclusive: count(Verdict::GapInconclusive),
            stage_failures: count(Verdict::StageFailure),
            simple_lambda1: trials.iter().filter(|t| t.multiplicity() == Some(1)).count(),
            multiplicities,
            gap: Range::of(trials.iter().filter_map(ScanTrial::gap).collect()),
            min_transversality: Range::of(trials.iter().filter_map(ScanTrial::min_transversality).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub config: ExperimentConfig,
    pub trials: Vec<ScanTrial>,
    pub statistics: ScanStatistics,
}

impl ScanReport {
    /// The most severe verdict over all trials.
    pub fn worst_verdict(&self) -> Verdict {
        let rank = |v: Verdict| v.exit_code();
        self.trials
            .iter()
            .map(|t| t.report.verdict.status)
            .max_by_key(|&v| rank(v))
            .unwrap_or(Verdict::StageFailure)
    }
}

/// Reruns the rigidity pipeline for `trials` independent random
/// perturbations of the centered `h`. Trials run concurrently (bounded by
/// `settings.workers`) and are reported in trial order; a failing trial is
/// recorded and the scan continues.
pub fn run_perturbation_scan(config: &ExperimentConfig, trials: usize, settings: &RunSettings) -> Result<ScanReport> {
    config.validate(settings)?;
    if trials == 0 {
        return Err(Error::config("trials", "at least one trial is required"));
    }
    if !matches!(config.h, HSpec::CenteredPerturbed { .. }) {
        return Err(Error::config(
            "h.kind",
            format!("a scan perturbs the centered potential; got `{}`", config.h.kind_name()),
        ));
    }

    // Every trial has the same distance to the centered potential (the
    // perturbation has unit sup norm), so one check covers the scan.
    let m = config.manifold.build()?;
    let mu = estimate_mu(config, &m)?;
    let h0 = config.h.realize(&m, config.perturbation_seed(0))?;
    admissibility_gate(&check_admissibility(&m, m.scalar_curvature(), &h0, mu)?, settings)?;
    drop(m);

    let run = || -> Result<Vec<ScanTrial>> {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let report = run_trial(config, settings, trial, Some(mu))?.report;
                log::info!("trial {trial}: {}", report.verdict.status.as_str());
                Ok(ScanTrial {
                    trial,
                    perturbation_seed: config.perturbation_seed(trial),
                    report,
                })
            })
            .collect()
    };
    let results = match settings.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let statistics = ScanStatistics::new(&results);
    Ok(ScanReport {
        config: config.clone(),
        trials: results,
        statistics,
    })
}
