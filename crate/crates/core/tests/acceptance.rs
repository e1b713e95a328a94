//! Acceptance criteria for the workspace, one PASS/FAIL line per criterion.
//!
//! Run all criteria with `cargo test -p conflab-core --test acceptance`, or
//! pass criterion numbers to run a subset:
//! `cargo test -p conflab-core --test acceptance -- 1 9`.
//! The process exits non-zero if any selected criterion fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use conflab::lab::{
    continuum_lambda1, run_perturbation_scan, run_refinement_study, run_rigidity, run_rigidity_detailed,
    smooth_perturbation, to_json_string, ExperimentConfig, HSpec, RefinementChecks, RigidityRun, RunSettings,
    Verdict, ROUNDOFF_FLOOR,
};
use conflab::manifold::{
    build_flat_torus, build_round_sphere2, sphere_volume, DiscreteManifold, GridSpec, ScalarField,
};
use conflab::minimizer::{conformal_hessian_form, second_variation_form, MinimizerState};
use conflab::sobolev::{constants, evaluate_j};
use conflab::spectrum::{
    conformal_spectrum, laplacian_spectrum, linearized_operator_report, LinearizationOptions, SpectralReport,
    SpectrumOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A sub-check of a criterion. Informational lines never fail.
struct Check {
    label: &'static str,
    pass: Option<bool>,
    detail: String,
}

fn check(label: &'static str, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        label,
        pass: Some(pass),
        detail: detail.into(),
    }
}

fn info(label: &'static str, detail: impl Into<String>) -> Check {
    Check {
        label,
        pass: None,
        detail: detail.into(),
    }
}

fn runtime(limit_secs: f64, elapsed: Duration) -> Check {
    let t = elapsed.as_secs_f64();
    check("runtime", t < limit_secs, format!("{t:.1} s (limit {limit_secs} s)"))
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&configs_dir().join(name)).expect("reference config parses")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// A pipeline run with the time it took.
struct TimedRun {
    run: RigidityRun,
    elapsed: Duration,
}

fn timed_run(config: &ExperimentConfig) -> TimedRun {
    let start = Instant::now();
    let run = run_rigidity_detailed(config, &RunSettings::default()).expect("config is valid");
    TimedRun {
        run,
        elapsed: start.elapsed(),
    }
}

/// The flat 3-torus at 32³ with `h ≡ 0.1`.
fn torus_run() -> &'static TimedRun {
    static RUN: OnceLock<TimedRun> = OnceLock::new();
    RUN.get_or_init(|| timed_run(&load_config("torus.json")))
}

/// circle(30) × S² at 32 × level 2 with `h ≡ 0.25`.
fn cylinder_run() -> &'static TimedRun {
    static RUN: OnceLock<TimedRun> = OnceLock::new();
    RUN.get_or_init(|| timed_run(&load_config("cylinder.json")))
}

fn criterion_1() -> Vec<Check> {
    let start = Instant::now();
    let mut checks = Vec::new();
    for n in 3..=6usize {
        let c = constants(n).unwrap();
        let nf = n as f64;
        let k_closed = (4.0 / (nf * (nf - 2.0) * sphere_volume(n).powf(2.0 / nf))).sqrt();
        let identity = c.k_n_inv_sq * (c.two_star - 2.0);
        let bound = nf * sphere_volume(n).powf(2.0 / nf);
        let err_k = rel(c.k_n, k_closed);
        let err_id = rel(identity, bound).max(rel(c.sphere_bound, bound));
        checks.push(check(
            "constants",
            err_k <= 1e-12 && err_id <= 1e-12,
            format!(
                "n={n}: K_n={:.15} (rel err {err_k:.1e}), K_n^-2 (2*-2)={identity:.15} vs n w_n^(2/n) (rel err {err_id:.1e})",
                c.k_n
            ),
        ));
    }
    checks.push(runtime(1.0, start.elapsed()));
    checks
}

fn criterion_2() -> Vec<Check> {
    let start = Instant::now();
    let opts = SpectrumOptions::default();
    let mut checks = Vec::new();

    let torus = build_flat_torus(&[1.0; 3], &[32; 3]).unwrap();
    let s = laplacian_spectrum(&torus, &opts).unwrap();
    let exact = 4.0 * PI * PI;
    checks.push(check(
        "T^3 lambda1",
        rel(s.lambda1, exact) <= 0.02,
        format!("{:.6} vs 4 pi^2 = {exact:.6} (rel err {:.2e})", s.lambda1, rel(s.lambda1, exact)),
    ));
    checks.push(check(
        "T^3 multiplicity",
        s.multiplicity == 3,
        format!(
            "{} (expected 3); eigenvalues {:?}",
            s.multiplicity,
            &s.eigenvalues[1..]
        ),
    ));

    let sphere = build_round_sphere2(1.0, 5).unwrap();
    let s = laplacian_spectrum(&sphere, &opts).unwrap();
    checks.push(check(
        "S^2 lambda1",
        rel(s.lambda1, 2.0) <= 0.02,
        format!("{:.6} vs 2 (rel err {:.2e})", s.lambda1, rel(s.lambda1, 2.0)),
    ));
    checks.push(check("S^2 multiplicity", s.multiplicity == 3, format!("{} (expected 3)", s.multiplicity)));

    let cylinder = GridSpec::product(GridSpec::circle(30.0, 32), GridSpec::round_sphere2(1.0, 2)).build().unwrap();
    let s = laplacian_spectrum(&cylinder, &opts).unwrap();
    let exact = (2.0 * PI / 30.0).powi(2);
    checks.push(check(
        "circle(30) x S^2 lambda1",
        rel(s.lambda1, exact) <= 0.02,
        format!("{:.6} vs (2 pi/30)^2 = {exact:.6} (rel err {:.2e})", s.lambda1, rel(s.lambda1, exact)),
    ));
    checks.push(runtime(120.0, start.elapsed()));
    checks
}

fn criterion_3() -> Vec<Check> {
    let start = Instant::now();
    let config = load_config("torus_refine.json");
    let checks_on = RefinementChecks {
        lambda1: true,
        identity: true,
        second_variation: false,
    };
    let table = run_refinement_study(&config, 4, checks_on, &RunSettings::default()).unwrap();
    let mut checks = Vec::new();
    for level in &table.levels {
        checks.push(info(
            "level",
            format!(
                "{} h={:.4}: lambda1 err {:.3e}, identity separable {:.3e}, coupled {:.3e}",
                level.resolution,
                level.mesh_size,
                level.lambda1_error.unwrap_or(f64::NAN),
                level.identity_separable.unwrap_or(f64::NAN),
                level.identity_coupled.unwrap_or(f64::NAN)
            ),
        ));
    }
    let orders = &table.orders.lambda1;
    let ok = !orders.is_empty() && orders.iter().all(|o| matches!(o, Some(o) if (o - 2.0).abs() <= 0.3));
    checks.push(check("lambda1 order", ok, format!("{orders:?} (expected 2 +/- 0.3)")));

    // The separable pair is reproduced exactly by the discrete operators, so
    // its residual sits at round-off on every level and has no order.
    let separable: Vec<f64> = table.levels.iter().filter_map(|l| l.identity_separable).collect();
    let at_roundoff = separable.len() == table.levels.len() && separable.iter().all(|r| *r <= ROUNDOFF_FLOOR);
    let sep_orders = &table.orders.identity_separable;
    let sep_ok = at_roundoff || sep_orders.iter().all(|o| matches!(o, Some(o) if *o >= 1.0));
    checks.push(check(
        "identity residual (separable pair)",
        sep_ok,
        format!("residuals {:?}; orders {sep_orders:?}; round-off floor {ROUNDOFF_FLOOR:e}",
            separable.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>()
        ),
    ));
    let coupled = &table.orders.identity_coupled;
    let coupled_ok = !coupled.is_empty() && coupled.iter().all(|o| matches!(o, Some(o) if *o >= 1.0));
    checks.push(check("identity order (coupled pair)", coupled_ok, format!("{coupled:?} (expected >= 1)")));
    checks.push(runtime(300.0, start.elapsed()));
    checks
}

fn state_of(run: &RigidityRun) -> Option<(&DiscreteManifold, &ScalarField, &MinimizerState)> {
    Some((run.manifold.as_ref()?, run.h.as_ref()?, run.state.as_ref()?))
}

fn criterion_4() -> Vec<Check> {
    let TimedRun { run, elapsed } = torus_run();
    let Some((m, h, state)) = state_of(run) else {
        return vec![check("pipeline", false, format!("{:?}", run.report.verdict))];
    };
    let u = state.u.values();
    let w = m.weights();
    let mean = w.iter().zip(u).map(|(w, x)| w * x).sum::<f64>() / m.volume();
    let dev = u.iter().fold(0.0f64, |a, x| a.max((x - mean).abs()));
    let c = constants(3).unwrap();
    let alpha_exact = c.k_n_inv_sq - h.values()[0];
    let mut checks = vec![
        check("u constant", dev <= 1e-6, format!("sup |u - mean| = {dev:.2e} (tol 1e-6)")),
        check(
            "alpha",
            (state.alpha - alpha_exact).abs() <= 1e-6,
            format!("{:.9} vs K_3^-2 - 0.1 = {alpha_exact:.9}", state.alpha),
        ),
        check(
            "EL residual",
            state.el_residual <= 1e-8,
            format!("{:.2e} (tol 1e-8)", state.el_residual),
        ),
    ];
    match &run.report.spectrum.conformal {
        Some(s) => {
            let gap = s.gap.unwrap_or(f64::NAN);
            checks.push(check(
                "gap",
                (gap - 17.57).abs() <= 0.8,
                format!("{gap:.4} (expected 17.57 +/- 0.8); normalized lambda1 {:.4}", s.normalized_lambda1),
            ));
        }
        None => checks.push(check("gap", false, "no conformal spectrum")),
    }
    checks.push(check(
        "verdict",
        run.report.verdict.status == Verdict::GapPositive,
        run.report.verdict.status.as_str(),
    ));
    checks.push(runtime(60.0, *elapsed));
    checks
}

fn white_noise(m: &DiscreteManifold, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarField::new((0..m.node_count()).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
}

/// Half the smooth perturbations, half white noise.
fn test_directions(m: &DiscreteManifold, count: usize) -> Vec<ScalarField> {
    (0..count as u64)
        .map(|i| {
            if i % 2 == 0 {
                smooth_perturbation(m, 1000 + i).unwrap()
            } else {
                white_noise(m, 1000 + i)
            }
        })
        .collect()
}

fn second_variation_checks(name: &str, m: &DiscreteManifold, h: &ScalarField, state: &MinimizerState) -> Vec<Check> {
    let u = &state.u;
    let dirs = test_directions(m, 100);
    let q: Vec<f64> = dirs
        .iter()
        .map(|v| second_variation_form(m, h, state.alpha, u, v).unwrap())
        .collect();
    let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);

    let d: f64 = m.weights().iter().zip(u.values()).map(|(w, x)| w * x * x).sum();
    let j0 = evaluate_j(m, h, u).unwrap();
    let t = 1e-4;
    let fd_err = dirs
        .iter()
        .zip(&q)
        .take(10)
        .map(|(v, &qv)| {
            let shifted = |s: f64| {
                let f = ScalarField::new(u.values().iter().zip(v.values()).map(|(a, b)| a * (1.0 + s * b)).collect())
                    .unwrap();
                evaluate_j(m, h, &f).unwrap()
            };
            let fd = (shifted(t) + shifted(-t) - 2.0 * j0) / (2.0 * t * t);
            rel(fd, qv / d)
        })
        .fold(0.0f64, f64::max);

    let hq_err = dirs
        .iter()
        .zip(&q)
        .map(|(v, &qv)| rel(conformal_hessian_form(m, u, v).unwrap(), qv))
        .fold(0.0f64, f64::max);

    vec![
        check(
            if name == "T^3" { "T^3: Q(v) >= -1e-6" } else { "circle x S^2: Q(v) >= -1e-6" },
            q_min >= -1e-6,
            format!("min over 100 directions {q_min:.4e}"),
        ),
        check(
            if name == "T^3" { "T^3: finite difference" } else { "circle x S^2: finite difference" },
            fd_err <= 0.01,
            format!("max rel err {fd_err:.2e} over 10 directions at t = 1e-4 (tol 1%)"),
        ),
        check(
            if name == "T^3" { "T^3: conformal form" } else { "circle x S^2: conformal form" },
            hq_err <= 0.01,
            format!("max rel diff {hq_err:.2e} over 100 directions (tol 1%)"),
        ),
    ]
}

fn criterion_5() -> Vec<Check> {
    let mut checks = Vec::new();
    for (name, timed) in [("T^3", torus_run()), ("circle x S^2", cylinder_run())] {
        let run = &timed.run;
        match state_of(run) {
            Some((m, h, state)) if state.converged => {
                checks.push(info(
                    "minimizer",
                    format!(
                        "{name}: J = {:.6}, EL residual {:.2e}, peak mass fraction {:.3}",
                        state.j_value, state.el_residual, state.peak_mass_fraction
                    ),
                ));
                checks.extend(second_variation_checks(name, m, h, state));
            }
            _ => checks.push(info("minimizer", format!("{name}: no converged minimizer, nothing to check"))),
        }
    }
    checks
}

fn criterion_6() -> Vec<Check> {
    let TimedRun { run, elapsed } = cylinder_run();
    let report = &run.report;
    let c = constants(3).unwrap();
    let mut checks = Vec::new();
    if let Some(flat) = &report.spectrum.flat {
        let (exact, _, _) = continuum_lambda1(&report.config.manifold);
        let continuum = exact * flat.volume.powf(2.0 / 3.0);
        checks.push(info(
            "flat start",
            format!(
                "normalized lambda1 {:.4} (continuum {continuum:.4}; reference value 7.80)",
                flat.normalized_lambda1
            ),
        ));
    }
    if let Some(min) = &report.minimizer {
        checks.push(info(
            "minimizer",
            format!(
                "J = {:.6}, alpha = {:.6}, EL residual {:.2e}, concentration {:.1}, peak mass fraction {:.3}",
                min.j_value, min.alpha, min.el_residual, min.concentration, min.peak_mass_fraction
            ),
        ));
    }
    let threshold = c.sphere_bound - report.verdict.gap_tolerance;
    let (pass, detail) = match &report.spectrum.conformal {
        Some(s) => (
            s.max_residual <= report.config.spectrum.tol && s.normalized_lambda1 >= threshold,
            format!(
                "normalized lambda1 {:.4} vs {threshold:.3}; max residual {:.2e}",
                s.normalized_lambda1, s.max_residual
            ),
        ),
        None => (false, "no conformal spectrum".to_string()),
    };
    checks.push(check("conformal lambda1", pass, detail));
    checks.push(check(
        "verdict",
        report.verdict.status != Verdict::StageFailure,
        format!(
            "{} at {:?}: {}",
            report.verdict.status.as_str(),
            report.verdict.stage,
            report.verdict.diagnostics.as_deref().unwrap_or("")
        ),
    ));
    checks.push(runtime(600.0, *elapsed));
    checks
}

fn first_pairs(s: &SpectralReport, k: usize) -> SpectralReport {
    let mut out = s.clone();
    out.eigenvalues.truncate(k);
    out.eigenfields.truncate(k);
    out.residuals.truncate(k);
    out
}

fn criterion_7() -> Vec<Check> {
    let start = Instant::now();
    let TimedRun { run, .. } = torus_run();
    let (Some((m, h, state)), Some(spectrum)) = (state_of(run), run.spectrum.as_ref()) else {
        return vec![check("pipeline", false, format!("{:?}", run.report.verdict))];
    };
    let six = first_pairs(spectrum, 6);
    let report =
        linearized_operator_report(m, h, state.alpha, &state.u, &six, &LinearizationOptions::default()).unwrap();
    let max_image = report.correspondence.iter().map(|e| e.image_norm).fold(0.0f64, f64::max);
    let max_resid = report.correspondence.iter().map(|e| e.residual).fold(0.0f64, f64::max);
    let intercept_tol = 1e-6 * max_image;
    vec![
        info(
            "correspondence",
            format!(
                "lambda {:?}; max residual {max_resid:.2e} (image norms up to {max_image:.3})",
                report.correspondence.iter().map(|e| e.lambda).collect::<Vec<_>>()
            ),
        ),
        check("slope", report.correspondence_slope > 0.0, format!("{:.12}", report.correspondence_slope)),
        check(
            "intercept",
            report.correspondence_intercept.abs() <= intercept_tol,
            format!("{:.2e} (tol {intercept_tol:.2e})", report.correspondence_intercept),
        ),
        check(
            "augmented rank",
            report.augmented_full_rank && report.augmented_lower_bound.max(report.augmented_min_singular_value) > 1e-8,
            format!(
                "sigma_min(A) = {:.4e}, Ritz sigma_min([A|u]) = {:.4e}, kernel dimension {}",
                report.augmented_lower_bound, report.augmented_min_singular_value, report.kernel_dimension
            ),
        ),
        runtime(120.0, start.elapsed()),
    ]
}

fn criterion_8() -> Vec<Check> {
    let start = Instant::now();
    let config = load_config("torus_scan.json");
    let settings = RunSettings::default();
    let first = run_perturbation_scan(&config, 20, &settings).unwrap();
    let second = run_perturbation_scan(&config, 20, &settings).unwrap();
    let identical = to_json_string(&first).unwrap() == to_json_string(&second).unwrap();
    let s = &first.statistics;
    let complete = first
        .trials
        .iter()
        .all(|t| t.multiplicity().is_some() && t.min_transversality().is_some());

    let mut zero = config.clone();
    zero.h = HSpec::CenteredPerturbed { amplitude: 0.0 };
    let zero_scan = run_perturbation_scan(&zero, 3, &settings).unwrap();
    let mut plain = config.clone();
    plain.h = HSpec::Centered;
    let plain_report = run_rigidity(&plain, &settings).unwrap();
    let zero_matches = zero_scan.trials.iter().all(|t| t.report.results_eq(&plain_report));

    vec![
        check("byte-identical reruns", identical, "two 20-trial scans serialize identically"),
        check(
            "per-trial statistics",
            complete,
            format!(
                "multiplicities {:?}; min transversality {:?}",
                s.multiplicities, s.min_transversality
            ),
        ),
        check(
            "all trials gap-positive",
            s.gap_positive == s.trials,
            format!(
                "{}/{} gap-positive, {} inconclusive, {} failed; gap {:?}",
                s.gap_positive, s.trials, s.gap_inconclusive, s.stage_failures, s.gap
            ),
        ),
        check(
            "zero amplitude reproduces unperturbed run",
            zero_matches,
            format!("{} trials compared", zero_scan.trials.len()),
        ),
        runtime(600.0, start.elapsed()),
    ]
}

fn positive_field(m: &DiscreteManifold, seed: u64) -> ScalarField {
    let smooth = smooth_perturbation(m, seed).unwrap();
    let noise = white_noise(m, seed + 1);
    ScalarField::new(
        smooth
            .values()
            .iter()
            .zip(noise.values())
            .map(|(s, z)| (0.8 * s + 0.1 * z).exp())
            .collect(),
    )
    .unwrap()
}

fn criterion_9() -> Vec<Check> {
    let mut checks = Vec::new();
    let opts = SpectrumOptions {
        k: 4,
        ..SpectrumOptions::default()
    };
    let cases = [
        ("T^3 12^3", build_flat_torus(&[1.0; 3], &[12; 3]).unwrap(), 0.1),
        (
            "circle x S^2",
            GridSpec::product(GridSpec::circle(30.0, 16), GridSpec::round_sphere2(1.0, 2)).build().unwrap(),
            0.25,
        ),
    ];
    for (name, m, h_value) in cases {
        let h = ScalarField::constant(&m, h_value);
        let mut worst_j = 0.0f64;
        let mut worst_l = 0.0f64;
        for seed in [11u64, 12] {
            let u = positive_field(&m, seed);
            let j = evaluate_j(&m, &h, &u).unwrap();
            let l = conformal_spectrum(&m, &u, &opts).unwrap().normalized_lambda1;
            for c in [0.5, 2.0, 10.0] {
                let cu = u.scaled(c);
                worst_j = worst_j.max(rel(evaluate_j(&m, &h, &cu).unwrap(), j));
                worst_l = worst_l.max(rel(conformal_spectrum(&m, &cu, &opts).unwrap().normalized_lambda1, l));
            }
        }
        checks.push(check(
            if name.starts_with("T") { "T^3: J scale invariance" } else { "circle x S^2: J scale invariance" },
            worst_j <= 1e-10,
            format!("{name}: max rel change {worst_j:.2e} (tol 1e-10)"),
        ));
        checks.push(check(
            if name.starts_with("T") {
                "T^3: normalized lambda1 scale invariance"
            } else {
                "circle x S^2: normalized lambda1 scale invariance"
            },
            worst_l <= 1e-10,
            format!("{name}: max rel change {worst_l:.2e} (tol 1e-10)"),
        ));
    }
    checks
}

type Criterion = (usize, &'static str, fn() -> Vec<Check>);

const CRITERIA: [Criterion; 9] = [
    (1, "dimensional constants", criterion_1),
    (2, "flat Laplacian spectra", criterion_2),
    (3, "refinement orders", criterion_3),
    (4, "constant minimizer on T^3", criterion_4),
    (5, "second variation at minimizers", criterion_5),
    (6, "circle(30) x S^2 pipeline", criterion_6),
    (7, "linearization at the constant solution", criterion_7),
    (8, "perturbation scan reproducibility", criterion_8),
    (9, "scale invariance", criterion_9),
];

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let checks = run();
        let pass = checks.iter().all(|c| c.pass != Some(false));
        println!(
            "criterion {id}: {} — {name} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        for c in &checks {
            let tag = match c.pass {
                Some(true) => "ok  ",
                Some(false) => "FAIL",
                None => "info",
            };
            println!("    {tag} {}: {}", c.label, c.detail);
        }
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
