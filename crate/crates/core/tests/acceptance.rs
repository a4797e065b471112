//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. Reports land in `$CARGO_TARGET_TMPDIR/acceptance/`.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use formctrl::certify::{
    check_resolvent_lipschitz, certify_formlinear, certify_stability, random_control, random_state, run_trials, summarize,
    linear_fit, GrowthChecker, StabilityCertificate,
};
use formctrl::controls::{
    derivative_l1, l1_distance, mollify, random_piecewise_constant, total_variation, ControlSchedule, MollifierParams, RampKind,
};
use formctrl::galerkin::{basis_state, compactness_profile, summarize_sweep, tail_norm_profile, transfer_sweep, SynthesisParams};
use formctrl::linops::{norm_plus_minus, spectral_norm};
use formctrl::models::{harmonic_oscillator, particle_in_box, random_system};
use formctrl::propagate::propagate_pc;
use formctrl::report::{derive_seed, Report};
use formctrl::system::FormLinearSystem;
use formctrl::{CMatrix, CVector, Complex64, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const MASTER_SEED: u64 = 20240607;

struct Outcome {
    pass: bool,
    summary: String,
    report: Report,
}

fn outcome(k: usize, pass: bool, summary: String, config: serde_json::Value, body: serde_json::Value, seed: u64) -> Outcome {
    let mut report = Report::new(&format!("acceptance-{k}"), config, Some(seed));
    report.body = body;
    Outcome { pass, summary, report }
}

fn models32() -> Result<Vec<(String, FormLinearSystem)>> {
    let mut out = vec![
        ("oscillator".to_string(), harmonic_oscillator(32, 1.0)?),
        ("box".to_string(), particle_in_box(32, 1.0)?),
    ];
    for seed in 1..=5 {
        out.push((format!("random-{seed}"), random_system(32, 2, seed)?));
    }
    Ok(out)
}

/// Randomized lower estimate of `sup |⟨ψ,Vφ⟩|/(‖ψ‖₊‖φ‖₊)`: best of random
/// starts, then alternating closed-form maximization over one side.
fn randomized_sup(v: &CMatrix, a0: &CMatrix, a0_inv: &CMatrix, rng: &mut ChaCha8Rng) -> f64 {
    let n = v.nrows();
    let plus = |x: &CVector| x.dotc(&(a0 * x)).re.sqrt();
    let ratio = |psi: &CVector, phi: &CVector| psi.dotc(&(v * phi)).norm() / (plus(psi) * plus(phi));
    let mut best_phi = random_state(rng, n);
    let mut best = 0.0;
    for _ in 0..64 {
        let phi = random_state(rng, n);
        let psi = a0_inv * (v * &phi);
        let r = ratio(&psi, &phi);
        if r > best {
            best = r;
            best_phi = phi;
        }
    }
    let mut phi = best_phi;
    for _ in 0..60 {
        let psi = a0_inv * (v * &phi);
        best = f64::max(best, ratio(&psi, &phi));
        phi = a0_inv * (v.adjoint() * &psi);
        phi /= Complex64::new(phi.norm(), 0.0);
    }
    best
}

fn criterion_1(seed: u64) -> Result<Outcome> {
    let start = Instant::now();
    let system = harmonic_oscillator(16, 1.0)?;
    let frame = system.frame();
    let (a0, a0_inv) = (frame.a0().matrix().clone(), frame.a0_inv().matrix().clone());
    let rows = run_trials(50, seed, |_, mut rng| {
        let v = CMatrix::from_fn(16, 16, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let exact = norm_plus_minus(&v, frame)?;
        let sup = randomized_sup(&v, &a0, &a0_inv, &mut rng);
        Ok((exact, sup))
    })?;
    let ratios: Vec<f64> = rows.iter().map(|(e, s)| s / e).collect();
    let worst_low = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst_high = ratios.iter().cloned().fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_low >= 0.98 && worst_high <= 1.0 + 1e-9 && secs < 10.0;
    Ok(outcome(
        1,
        pass,
        format!("norm oracle: sup/norm in [{worst_low:.5}, {worst_high:.9}] over 50 operators"),
        json!({"operators": 50, "dim": 16, "tolerance": 0.02}),
        json!({"ratios": ratios}),
        seed,
    ))
}

fn criterion_2(seed: u64) -> Result<Outcome> {
    let start = Instant::now();
    let systems = [harmonic_oscillator(32, 1.0)?, particle_in_box(32, 1.0)?, random_system(32, 2, 7)?];
    let rows = run_trials(1000, seed, |k, mut rng| {
        let system = &systems[k % systems.len()];
        let horizon = rng.random_range(0.5..3.0);
        let segments = rng.random_range(1..=8);
        let sched = random_piecewise_constant(&mut rng, system.control_box(), horizon, segments)?;
        let r = rng.random_range(0.0..horizon);
        let full = propagate_pc(system, &sched, horizon, 0.0)?;
        let composed = propagate_pc(system, &sched, horizon, r)?.compose(&propagate_pc(system, &sched, r, 0.0)?)?;
        let back = propagate_pc(system, &sched, 0.0, horizon)?;
        let identity = CMatrix::identity(32, 32);
        Ok((
            full.unitarity_defect(),
            spectral_norm(&(full.matrix() - composed.matrix())),
            spectral_norm(&(back.matrix() * full.matrix() - identity)),
        ))
    })?;
    let max = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let (unitarity, composition, reversal) = (max(|r| r.0), max(|r| r.1), max(|r| r.2));
    let secs = start.elapsed().as_secs_f64();
    let pass = unitarity <= 1e-10 && composition <= 1e-9 && reversal <= 1e-10 && secs < 60.0;
    Ok(outcome(
        2,
        pass,
        format!("propagator invariants over 1000 schedules: unitarity {unitarity:.1e}, composition {composition:.1e}, reversal {reversal:.1e}"),
        json!({"schedules": 1000, "dim": 32}),
        json!({"max_unitarity_defect": unitarity, "max_composition_defect": composition, "max_reversal_defect": reversal}),
        seed,
    ))
}

fn criterion_3(seed: u64) -> Result<Outcome> {
    let mut body = serde_json::Map::new();
    let mut failures = 0;
    let mut total = 0;
    for (idx, (name, system)) in models32()?.into_iter().enumerate() {
        let c = system.equivalence_constant(&system.default_samples()?)?;
        let certs: Vec<StabilityCertificate> = run_trials(500, derive_seed(seed, idx as u64), |_, mut rng| {
            let u1 = random_control(&mut rng, system.control_box());
            let u2 = random_control(&mut rng, system.control_box());
            check_resolvent_lipschitz(&system, &u1, &u2, c)
        })?;
        let summary = summarize(&certs);
        failures += summary.failed;
        total += summary.total;
        body.insert(name, serde_json::to_value(summary)?);
    }
    Ok(outcome(
        3,
        failures == 0,
        format!("resolvent Lipschitz: {failures} failures in {total} certificates over 7 models"),
        json!({"pairs_per_model": 500, "dim": 32}),
        serde_json::Value::Object(body),
        seed,
    ))
}

/// `‖Φ(t)‖₊,ₜ` along each segment of a pc schedule, as a max relative drift.
fn pc_conservation(system: &FormLinearSystem, sched: &ControlSchedule, phi: &CVector) -> Result<f64> {
    let mut worst = 0.0f64;
    for j in 0..sched.segments().len() {
        let (a, b) = sched.segment_bounds(j);
        let a_op = system.generator(&sched.eval_on(j, a))?;
        let norm = |x: &CVector| x.dotc(&(a_op.matrix() * x)).re.sqrt();
        let at_a = propagate_pc(system, sched, a, 0.0)?.apply(phi)?;
        let reference = norm(&at_a);
        for q in 1..=8 {
            let t = a + (b - a) * q as f64 / 8.0;
            let state = propagate_pc(system, sched, t, a)?.apply(&at_a)?;
            worst = worst.max((norm(&state) - reference).abs() / reference);
        }
    }
    Ok(worst)
}

fn criterion_4(seed: u64) -> Result<Outcome> {
    let system = harmonic_oscillator(16, 1.0)?;
    let rows = run_trials(20, seed, |_, mut rng| {
        let pc = random_piecewise_constant(&mut rng, system.control_box(), 2.0, 4)?;
        let ramp = if rng.random_bool(0.5) { RampKind::Quintic } else { RampKind::Bump };
        let sched = mollify(&pc, &MollifierParams::new(0.05, ramp))?;
        let constants = system.constants_for(&[&sched], None)?;
        let checker = GrowthChecker::new(&system, &sched, 2.0, 0.0, constants)?;
        let mut certs = Vec::with_capacity(200);
        for _ in 0..100 {
            let (plus, minus) = checker.check(&random_state(&mut rng, 16))?;
            certs.push(plus);
            certs.push(minus);
        }
        let drift = pc_conservation(&system, &pc, &random_state(&mut rng, 16))?;
        Ok((summarize(&certs), drift))
    })?;
    let failed: usize = rows.iter().map(|(s, _)| s.failed).sum();
    let max_ratio = rows.iter().map(|(s, _)| s.max_ratio).fold(0.0, f64::max);
    let drift = rows.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    Ok(outcome(
        4,
        failed == 0 && drift <= 1e-9,
        format!("propagator growth: {failed} failures in 4000 certificates (max ratio {max_ratio:.3}), pc conservation drift {drift:.1e}"),
        json!({"states": 100, "schedules": 20, "dim": 16, "delta": 0.05}),
        json!({"failed": failed, "max_ratio": max_ratio, "max_conservation_drift": drift}),
        seed,
    ))
}

fn criterion_5(seed: u64) -> Result<Outcome> {
    let models = [
        ("oscillator", harmonic_oscillator(32, 1.0)?),
        ("box", particle_in_box(32, 1.0)?),
        ("random-1", random_system(32, 2, 1)?),
    ];
    let mut body = serde_json::Map::new();
    let mut failed = 0;
    let mut max_ratio = 0.0f64;
    for (idx, (name, system)) in models.iter().enumerate() {
        let certs = run_trials(250, derive_seed(seed, idx as u64), |k, mut rng| {
            let mut a = random_piecewise_constant(&mut rng, system.control_box(), 2.0, 4)?;
            let mut b = random_piecewise_constant(&mut rng, system.control_box(), 2.0, 4)?;
            if k >= 200 {
                a = mollify(&a, &MollifierParams::new(0.05, RampKind::Quintic))?;
                b = mollify(&b, &MollifierParams::new(0.05, RampKind::Quintic))?;
            }
            let constants = system.constants_for(&[&a, &b], None)?;
            certify_stability(system, &a, &b, &constants)
        })?;
        let (pc, smooth) = certs.split_at(200);
        let (s_pc, s_smooth) = (summarize(pc), summarize(smooth));
        failed += s_pc.failed + s_smooth.failed;
        max_ratio = max_ratio.max(s_pc.max_ratio).max(s_smooth.max_ratio);
        body.insert(name.to_string(), json!({"pc": s_pc, "mollified": s_smooth}));
    }
    Ok(outcome(
        5,
        failed == 0,
        format!("main stability bound: {failed} failures in 750 pairs, empirical max lhs/rhs {max_ratio:.2e}"),
        json!({"pc_pairs": 200, "mollified_pairs": 50, "dim": 32, "horizon": 2.0}),
        serde_json::Value::Object(body),
        seed,
    ))
}

fn two_step() -> Result<ControlSchedule> {
    ControlSchedule::piecewise_constant(vec![0.0, 1.0, 2.0], &[vec![0.8], vec![-0.6]])
}

fn criterion_6(seed: u64) -> Result<Outcome> {
    let system = harmonic_oscillator(32, 1.0)?;
    let pc = two_step()?;
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut all_pass = true;
    for k in 0..=5 {
        let delta = 0.2 * 0.5f64.powi(k);
        let sched = mollify(&pc, &MollifierParams::new(delta, RampKind::Quintic))?;
        let constants = system.constants_for(&[&sched, &pc], None)?;
        let cert = certify_formlinear(&system, &sched, &pc, &constants)?;
        all_pass &= cert.pass;
        lhs.push(cert.lhs);
        rhs.push(cert.rhs);
    }
    let monotone = lhs.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let reduction = lhs[0] / lhs[5];
    Ok(outcome(
        6,
        all_pass && monotone && reduction >= 4.0,
        format!("form-linear L1 bound: lhs {:.3e} -> {:.3e} (x{reduction:.1} reduction), monotone {monotone}, bound held {all_pass}", lhs[0], lhs[5]),
        json!({"deltas": (0..=5).map(|k| 0.2 * 0.5f64.powi(k)).collect::<Vec<_>>(), "dim": 32}),
        json!({"lhs": lhs, "rhs": rhs}),
        seed,
    ))
}

fn criterion_7(seed: u64) -> Result<Outcome> {
    let system = harmonic_oscillator(8, 1.0)?;
    let deltas: Vec<f64> = (0..6).map(|k| 0.06 * 0.5f64.powi(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_budget = 0.0f64;
    let mut worst_slope = 0.0f64;
    let mut slopes = Vec::new();
    for _ in 0..10 {
        let pc = random_piecewise_constant(&mut rng, system.control_box(), 2.0, 4)?;
        let tv = total_variation(&pc)?[0];
        for ramp in [RampKind::Quintic, RampKind::Bump] {
            let mut distances = Vec::new();
            for &delta in &deltas {
                let sched = mollify(&pc, &MollifierParams::new(delta, ramp))?;
                worst_budget = worst_budget.max((derivative_l1(&sched)?[0] - tv).abs());
                distances.push(l1_distance(&sched, &pc)?[0]);
            }
            if ramp == RampKind::Quintic {
                let (slope, _) = linear_fit(&deltas, &distances)?;
                let expected = 5.0 / 32.0 * tv * 2.0;
                worst_slope = worst_slope.max((slope - expected).abs() / expected);
                slopes.push([slope, expected]);
            }
        }
    }
    Ok(outcome(
        7,
        worst_budget <= 1e-9 && worst_slope <= 0.05,
        format!("mollification mechanism: |derivative_l1 - TV| <= {worst_budget:.1e}, slope deviation {:.3}%", 100.0 * worst_slope),
        json!({"schedules": 10, "deltas": deltas}),
        json!({"max_budget_deviation": worst_budget, "slopes_vs_expected": slopes}),
        seed,
    ))
}

fn criterion_8(seed: u64) -> Result<Outcome> {
    let start = Instant::now();
    let system = harmonic_oscillator(64, 1.0)?;
    let params = SynthesisParams { epsilon: 1e-2, l1_budget: 5.0, seed, ..Default::default() };
    let reports = transfer_sweep(&system, 2, &[4, 8, 16], &basis_state(64, 0), &basis_state(64, 1), &params)?;
    let summary = summarize_sweep(&reports);
    let secs = start.elapsed().as_secs_f64();
    let pass = summary.all_synthesized
        && summary.errors_nonincreasing
        && summary.final_within_epsilon
        && summary.gap_bound_everywhere
        && secs < 600.0;
    let residuals: Vec<String> = reports.iter().map(|r| format!("{:.3}", r.synthesis.residual)).collect();
    let errors: Vec<String> = summary.ambient_errors.iter().map(|e| format!("{e:.4}")).collect();
    Ok(outcome(
        8,
        pass,
        format!(
            "Galerkin transfer n=4,8,16: synthesized {:?}, residuals [{}], ambient errors [{}], gap bound held {}",
            summary.synthesized,
            residuals.join(", "),
            errors.join(", "),
            summary.gap_bound_everywhere
        ),
        json!({"N": 64, "ranks": [4, 8, 16], "n_prime": 2, "synthesis": params}),
        json!({"summary": summary, "reports": reports}),
        seed,
    ))
}

fn criterion_9(seed: u64) -> Result<Outcome> {
    let ranks: Vec<usize> = (1..64).collect();
    let mut body = serde_json::Map::new();
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, system) in [("oscillator", harmonic_oscillator(64, 1.0)?), ("box", particle_in_box(64, 1.0)?)] {
        let profile = compactness_profile(&system, 0, &ranks)?;
        let monotone = profile.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let first_below = profile.iter().position(|&v| v < 0.1).map(|i| ranks[i]);
        let early = first_below.is_some_and(|n| n < 32);
        let a0 = tail_norm_profile(&system, system.frame().a0().matrix(), &ranks)?;
        let a0_min = a0.iter().cloned().fold(f64::INFINITY, f64::min);
        pass &= monotone && early && a0_min >= 0.5;
        notes.push(format!("{name}: monotone {monotone}, first n<0.1 {first_below:?}, tail(32) {:.3}, A0 min {a0_min:.3}", profile[31]));
        body.insert(name.into(), json!({"profile": profile, "a0_profile_min": a0_min, "first_below": first_below}));
    }
    Ok(outcome(
        9,
        pass,
        format!("compactness surrogate at N=64: {}", notes.join("; ")),
        json!({"N": 64, "threshold": 0.1, "a0_floor": 0.5}),
        serde_json::Value::Object(body),
        seed,
    ))
}

type Criterion = fn(u64) -> Result<Outcome>;

const CRITERIA: [(usize, Criterion); 9] = [
    (1, criterion_1),
    (2, criterion_2),
    (3, criterion_3),
    (4, criterion_4),
    (5, criterion_5),
    (6, criterion_6),
    (7, criterion_7),
    (8, criterion_8),
    (9, criterion_9),
];

fn report_dir() -> PathBuf {
    let base = option_env!("CARGO_TARGET_TMPDIR").map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    base.join("acceptance")
}

fn line(k: usize, pass: bool, secs: f64, summary: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {k:>2}  {verdict}  ({secs:7.1}s)  {summary}");
}

fn main() {
    let dir = report_dir();
    std::fs::create_dir_all(&dir).expect("report directory");
    let mut first_run = Vec::new();
    let mut failed = Vec::new();
    for (k, criterion) in CRITERIA {
        let seed = derive_seed(MASTER_SEED, k as u64);
        let start = Instant::now();
        match criterion(seed) {
            Ok(mut out) => {
                let secs = start.elapsed().as_secs_f64();
                out.report.timing.wall_clock_seconds = secs;
                out.report.write(&dir.join(format!("criterion_{k}.json"))).expect("write report");
                line(k, out.pass, secs, &out.summary);
                if !out.pass {
                    failed.push(k);
                }
                first_run.push((k, out.report.without_timing().to_json_pretty().expect("serialize")));
            }
            Err(e) => {
                line(k, false, start.elapsed().as_secs_f64(), &format!("error: {e}"));
                failed.push(k);
            }
        }
    }

    // Criterion 10: rerun everything on a two-thread pool and compare bytes.
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().expect("thread pool");
    let mut mismatches = Vec::new();
    for (k, bytes) in &first_run {
        let criterion = CRITERIA[k - 1].1;
        let seed = derive_seed(MASTER_SEED, *k as u64);
        let again = pool.install(|| criterion(seed));
        match again.and_then(|o| o.report.without_timing().to_json_pretty()) {
            Ok(b) if &b == bytes => {}
            _ => mismatches.push(*k),
        }
    }
    let pass = mismatches.is_empty() && first_run.len() == CRITERIA.len();
    line(
        10,
        pass,
        start.elapsed().as_secs_f64(),
        &format!("reproducibility: {} of {} reports byte-identical on rerun, mismatches {mismatches:?}", first_run.len() - mismatches.len(), first_run.len()),
    );
    if !pass {
        failed.push(10);
    }
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance reports written to {}", dir.display());
    if failed.is_empty() {
        let _ = writeln!(err, "acceptance: all 10 criteria passed");
    } else {
        let _ = writeln!(err, "acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

