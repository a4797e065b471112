//! Numerical certificates for the resolvent, growth and stability inequalities.
//!
//! Every certificate stores `lhs`, `rhs`, the constants used and the numeric
//! factors `rhs` was built from, so [`StabilityCertificate::recompute_rhs`]
//! reproduces it without re-running any propagation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::{l1_distance_on, merged_pieces, ControlSchedule, CONTINUITY_TOLERANCE};
use crate::error::{Error, Result};
use crate::linops::{norm_minus_plus, norm_plus_minus, weighted_norm_with, CMatrix, CVector, Eigen, HermitianMatrix, ScaleFrame, Side};
use crate::propagate::{Evolver, Propagator};
use crate::quad::adaptive_simpson;
use crate::report::derive_seed;
use crate::system::{FormLinearSystem, SystemConstants};
use crate::Complex64;

/// Relative slack of the pass rule.
pub const PASS_SLACK: f64 = 1e-8;
/// Global Magnus tolerance used for certificate propagations.
pub const CERT_PROPAGATION_TOL: f64 = 1e-10;
/// Absolute quadrature tolerance for `∫C` and `∫‖H_j − H_k‖₊,₋`.
pub const CERT_QUADRATURE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    ResolventLipschitz,
    PropagatorGrowthPlus,
    PropagatorGrowthMinus,
    StabilityMain,
    StabilityFormlinear,
    StrongConvergence,
}

impl CertificateKind {
    pub fn name(self) -> &'static str {
        match self {
            CertificateKind::ResolventLipschitz => "resolvent_lipschitz",
            CertificateKind::PropagatorGrowthPlus => "propagator_growth_plus",
            CertificateKind::PropagatorGrowthMinus => "propagator_growth_minus",
            CertificateKind::StabilityMain => "stability_main",
            CertificateKind::StabilityFormlinear => "stability_formlinear",
            CertificateKind::StrongConvergence => "strong_convergence",
        }
    }
}

/// Inputs and numeric factors behind a certificate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `[s, t]`.
    pub window: [f64; 2],
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, serde_json::Value>,
    pub factors: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
}

impl Provenance {
    fn window(s: f64, t: f64) -> Self {
        Self { window: [s, t], ..Default::default() }
    }

    fn factor(&self, key: &str) -> f64 {
        self.factors.get(key).copied().unwrap_or(f64::NAN)
    }

    fn indexed(&self, prefix: &str) -> Vec<f64> {
        let mut items: Vec<(usize, f64)> = self
            .factors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).and_then(|i| i.parse().ok()).map(|i| (i, *v)))
            .collect();
        items.sort_by_key(|&(i, _)| i);
        items.into_iter().map(|(_, v)| v).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub kind: CertificateKind,
    pub lhs: f64,
    pub rhs: f64,
    pub constants: SystemConstants,
    pub margin: f64,
    pub pass: bool,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

/// `margin ≥ −1e−8·max(1, rhs)`; NaN never passes.
pub fn passes(lhs: f64, rhs: f64) -> bool {
    rhs - lhs >= -PASS_SLACK * rhs.max(1.0)
}

impl StabilityCertificate {
    pub fn new(kind: CertificateKind, lhs: f64, rhs: f64, constants: SystemConstants, provenance: Provenance) -> Self {
        Self { kind, lhs, rhs, constants, margin: rhs - lhs, pass: passes(lhs, rhs), provenance, extra: BTreeMap::new() }
    }

    /// `lhs / rhs` (0 when both vanish).
    pub fn ratio(&self) -> f64 {
        if self.rhs == 0.0 {
            if self.lhs == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            self.lhs / self.rhs
        }
    }

    /// Rebuilds `rhs` from the embedded constants and factors.
    pub fn recompute_rhs(&self) -> f64 {
        let p = &self.provenance;
        match self.kind {
            CertificateKind::ResolventLipschitz => self.constants.c.powi(4) * p.factor("difference_norm"),
            CertificateKind::PropagatorGrowthPlus => (1.5 * p.factor("integral_C")).exp() * p.factor("initial_norm"),
            CertificateKind::PropagatorGrowthMinus => (0.5 * p.factor("integral_C")).exp() * p.factor("initial_norm"),
            CertificateKind::StabilityMain => self.constants.l * p.factor("integral_difference"),
            CertificateKind::StabilityFormlinear => {
                let norms = p.indexed("interaction_norm.");
                let l1 = p.indexed("l1_distance.");
                self.constants.l * norms.iter().zip(&l1).map(|(a, b)| a * b).sum::<f64>()
            }
            CertificateKind::StrongConvergence => p.factor("gap"),
        }
    }
}

fn index_key(prefix: &str, i: usize) -> String {
    format!("{prefix}{i}")
}

fn inverse(a: &HermitianMatrix) -> Result<CMatrix> {
    let eig = a.eigen();
    if eig.min() <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: eig.min() });
    }
    Ok(eig.map(|l| Complex64::new(1.0 / l, 0.0)))
}

/// `‖A(u₁)⁻¹ − A(u₂)⁻¹‖₋,₊ ≤ c⁴·‖H(u₁) − H(u₂)‖₊,₋`.
pub fn check_resolvent_lipschitz(system: &FormLinearSystem, u1: &[f64], u2: &[f64], c: f64) -> Result<StabilityCertificate> {
    let a1 = inverse(&system.generator(u1)?)?;
    let a2 = inverse(&system.generator(u2)?)?;
    let lhs = norm_minus_plus(&(a1 - a2), system.frame())?;
    let difference = system.difference_norm(u1, u2);
    let mut prov = Provenance::default();
    prov.inputs.insert("u1".into(), serde_json::json!(u1));
    prov.inputs.insert("u2".into(), serde_json::json!(u2));
    prov.factors.insert("difference_norm".into(), difference);
    let constants = SystemConstants::new(system.m(), c, 0.0);
    Ok(StabilityCertificate::new(CertificateKind::ResolventLipschitz, lhs, c.powi(4) * difference, constants, prov))
}

/// `‖A^{-½}VA^{-½}‖` with `A = Q·diag(λ)·Q†`.
fn sandwiched_norm(a: &Eigen, v: &CMatrix) -> f64 {
    let rotated = a.vectors.adjoint() * v * &a.vectors;
    let w: Vec<f64> = a.values.iter().map(|l| 1.0 / l.sqrt()).collect();
    let scaled = CMatrix::from_fn(rotated.nrows(), rotated.ncols(), |i, j| rotated[(i, j)] * (w[i] * w[j]));
    HermitianMatrix::symmetrized(scaled).spectral_norm()
}

/// `C(t)` evaluated with segment `j`'s functions.
pub fn instantaneous_c_on(system: &FormLinearSystem, schedule: &ControlSchedule, j: usize, t: f64) -> f64 {
    let d = schedule.derivative_on(j, t);
    if d.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let u = schedule.eval_on(j, t);
    let a = system.assemble_unchecked(&u).shifted(system.m() + 1.0).eigen();
    sandwiched_norm(&a, system.interaction_sum(&d).matrix())
}

/// `C(t) = ‖A(u(t))^{-½}·(Σ uᵢ′(t)Hᵢ)·A(u(t))^{-½}‖` at a segment interior.
pub fn instantaneous_c(system: &FormLinearSystem, schedule: &ControlSchedule, t: f64) -> Result<f64> {
    if schedule.channels() != system.channels() {
        return Err(Error::ChannelMismatch { system: system.channels(), schedule: schedule.channels() });
    }
    let j = schedule.segment_index(t)?;
    let interior = &schedule.breakpoints()[1..schedule.breakpoints().len() - 1];
    if interior.iter().any(|b| (b - t).abs() <= 1e-12 * b.abs().max(1.0)) {
        return Err(Error::AtBreakpoint { t });
    }
    if schedule.is_piecewise_constant() {
        return Ok(0.0);
    }
    system.check_control(&schedule.eval_on(j, t))?;
    Ok(instantaneous_c_on(system, schedule, j, t))
}

/// `∫_lo^hi C`, split at breakpoints; constant segments contribute 0.
fn integral_c(system: &FormLinearSystem, schedule: &ControlSchedule, lo: f64, hi: f64) -> Result<f64> {
    if schedule.is_piecewise_constant() || hi <= lo {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (j, seg) in schedule.segments().iter().enumerate() {
        let (a, b) = schedule.segment_bounds(j);
        let (a, b) = (a.max(lo), b.min(hi));
        if b <= a || seg.is_constant() {
            continue;
        }
        total += adaptive_simpson(|t| instantaneous_c_on(system, schedule, j, t), a, b, CERT_QUADRATURE_TOL * (b - a) / (hi - lo))?;
    }
    Ok(total)
}

/// Reusable data for growth certificates on one window `[s, t]`.
pub struct GrowthChecker {
    propagator: Propagator,
    integral: f64,
    start: Eigen,
    end: Eigen,
    phase: Complex64,
    constants: SystemConstants,
    base: Provenance,
}

impl GrowthChecker {
    /// Precomputes `U(t, s)`, `|∫ₛᵗ C|` and the endpoint generators. `t < s`
    /// checks the backward evolution. Fails with `JumpInWindow` when the
    /// control jumps strictly inside the window.
    pub fn new(system: &FormLinearSystem, schedule: &ControlSchedule, t: f64, s: f64, constants: SystemConstants) -> Result<Self> {
        system.check_schedule(schedule)?;
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let horizon = schedule.horizon();
        for time in [lo, hi] {
            if !(0.0..=horizon).contains(&time) {
                return Err(Error::OutsideHorizon { t: time, horizon });
            }
        }
        let bps = schedule.breakpoints();
        for j in 1..bps.len() - 1 {
            let b = bps[j];
            if b > lo && b < hi {
                let left = schedule.eval_on(j - 1, b);
                let right = schedule.eval_on(j, b);
                if left.iter().zip(&right).any(|(x, y)| (x - y).abs() > CONTINUITY_TOLERANCE) {
                    return Err(Error::JumpInWindow { s, t });
                }
            }
        }
        // endpoint values come from the segments facing into the window
        let (j_lo, j_hi) = if lo == hi {
            let j = schedule.segment_index(lo)?;
            (j, j)
        } else {
            (schedule.segment_index(lo)?, schedule.segment_index_left(hi)?)
        };
        let generator = |j: usize, time: f64| system.assemble_unchecked(&schedule.eval_on(j, time)).shifted(system.m() + 1.0).eigen();
        let (eig_lo, eig_hi) = (generator(j_lo, lo), generator(j_hi, hi));
        let (start, end) = if s <= t { (eig_lo, eig_hi) } else { (eig_hi, eig_lo) };
        let evolver = Evolver::new(system);
        let propagator = evolver.propagate(schedule, t, s, CERT_PROPAGATION_TOL)?;
        let integral = integral_c(system, schedule, lo, hi)?;
        let phase = Complex64::from_polar(1.0, -(system.m() + 1.0) * (t - s));
        let mut base = Provenance::window(s, t);
        base.factors.insert("integral_C".into(), integral);
        base.tolerances.insert("propagation".into(), CERT_PROPAGATION_TOL);
        base.tolerances.insert("quadrature".into(), CERT_QUADRATURE_TOL);
        Ok(Self { propagator, integral, start, end, phase, constants, base })
    }

    pub fn integral_c(&self) -> f64 {
        self.integral
    }

    /// Plus and minus certificates for the initial state `phi`.
    pub fn check(&self, phi: &CVector) -> Result<(StabilityCertificate, StabilityCertificate)> {
        let evolved = self.propagator.apply(phi)? * self.phase;
        let make = |kind: CertificateKind, side: Side, exponent: f64| {
            let initial = weighted_norm_with(phi, &self.start, side);
            let lhs = weighted_norm_with(&evolved, &self.end, side);
            let mut prov = self.base.clone();
            prov.factors.insert("initial_norm".into(), initial);
            StabilityCertificate::new(kind, lhs, (exponent * self.integral).exp() * initial, self.constants, prov)
        };
        Ok((make(CertificateKind::PropagatorGrowthPlus, Side::Plus, 1.5), make(CertificateKind::PropagatorGrowthMinus, Side::Minus, 0.5)))
    }
}

/// Growth certificates for `Φ(t) = e^{−i(m+1)(t−s)}U(t, s)φ`:
/// `‖Φ(t)‖₊,ₜ ≤ e^{(3/2)|∫C|}‖φ‖₊,ₛ` and `‖Φ(t)‖₋,ₜ ≤ e^{(1/2)|∫C|}‖φ‖₋,ₛ`.
pub fn check_propagator_growth(
    system: &FormLinearSystem,
    schedule: &ControlSchedule,
    phi: &CVector,
    t: f64,
    s: f64,
) -> Result<(StabilityCertificate, StabilityCertificate)> {
    let constants = system.constants_for(&[schedule], None)?;
    GrowthChecker::new(system, schedule, t, s, constants)?.check(phi)
}

/// Verifies that `constants` cover both schedules: A1 (same `m`, values in the
/// box), A3 (`c` dominates the equivalence constant on the box spanned by the
/// schedules' ranges) and A4 (`M` dominates both derivative budgets).
pub fn check_hypotheses(system: &FormLinearSystem, schedules: &[&ControlSchedule], constants: &SystemConstants) -> Result<()> {
    let mut violations = Vec::new();
    if (constants.m - system.m()).abs() > 1e-12 * system.m().max(1.0) {
        violations.push(format!("A1: constants use m = {} but the system bound is {}", constants.m, system.m()));
    }
    let p = system.channels();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); p];
    for (k, s) in schedules.iter().enumerate() {
        if let Err(e) = system.check_schedule(s) {
            violations.push(format!("A1: schedule {k}: {e}"));
            continue;
        }
        for (r, (lo, hi)) in ranges.iter_mut().zip(s.channel_ranges()) {
            r.0 = r.0.min(lo);
            r.1 = r.1.max(hi);
        }
    }
    if violations.is_empty() {
        let clamp: Vec<(f64, f64)> = ranges
            .iter()
            .zip(system.control_box())
            .map(|(&(lo, hi), &(blo, bhi))| (lo.clamp(blo, bhi), hi.clamp(blo, bhi)))
            .collect();
        let sub = FormLinearSystem::new(system.h0().clone(), system.interactions().to_vec(), clamp);
        let needed = match sub.and_then(|sub| sub.vertices()) {
            Ok(vertices) => system.equivalence_constant(&vertices)?,
            Err(e) => return Err(e),
        };
        if constants.c < needed * (1.0 - 1e-12) {
            violations.push(format!("A3: c = {} is below {} needed on the schedules' range box", constants.c, needed));
        }
        for (k, s) in schedules.iter().enumerate() {
            let m_needed = system.derivative_bound_m(s)?;
            if constants.m_budget < m_needed - 1e-10 * m_needed.max(1.0) {
                violations.push(format!("A4: M = {} is below {} required by schedule {k}", constants.m_budget, m_needed));
            }
        }
    }
    let expected_l = crate::system::stability_constant_l(constants.c, constants.m_budget);
    if (constants.l - expected_l).abs() > 1e-12 * expected_l {
        violations.push(format!("L = {} differs from c^11 exp(4c^2 M) = {}", constants.l, expected_l));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::HypothesisViolated(violations))
    }
}

/// Both sides of the stability bound on a window.
#[derive(Clone, Debug)]
struct StabilityData {
    lhs: f64,
    integral_difference: f64,
    interaction_norms: Vec<f64>,
    l1: Vec<f64>,
    s: f64,
    t: f64,
}

fn integral_difference(system: &FormLinearSystem, sj: &ControlSchedule, sk: &ControlSchedule, lo: f64, hi: f64) -> Result<f64> {
    let mut total = 0.0;
    for (a, b, j1, j2) in merged_pieces(sj, sk)? {
        let (a, b) = (a.max(lo), b.min(hi));
        if b <= a {
            continue;
        }
        let (c1, c2) = (sj.segments()[j1].constant_value(), sk.segments()[j2].constant_value());
        total += match (c1, c2) {
            (Some(u), Some(v)) => system.difference_norm(&u, &v) * (b - a),
            _ => adaptive_simpson(
                |t| system.difference_norm(&sj.eval_on(j1, t), &sk.eval_on(j2, t)),
                a,
                b,
                CERT_QUADRATURE_TOL * (b - a) / (hi - lo),
            )?,
        };
    }
    Ok(total)
}

fn stability_data(
    system: &FormLinearSystem,
    evolver: &Evolver,
    sj: &ControlSchedule,
    sk: &ControlSchedule,
    t: f64,
    s: f64,
) -> Result<StabilityData> {
    let uj = evolver.propagate(sj, t, s, CERT_PROPAGATION_TOL)?;
    let uk = evolver.propagate(sk, t, s, CERT_PROPAGATION_TOL)?;
    let lhs = norm_plus_minus(&(uj.matrix() - uk.matrix()), system.frame())?;
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    Ok(StabilityData {
        lhs,
        integral_difference: if hi > lo { integral_difference(system, sj, sk, lo, hi)? } else { 0.0 },
        interaction_norms: system.interaction_norms(),
        l1: l1_distance_on(sj, sk, lo, hi)?,
        s,
        t,
    })
}

fn stability_certificates(
    data: &StabilityData,
    constants: SystemConstants,
    sj: &ControlSchedule,
    sk: &ControlSchedule,
) -> (StabilityCertificate, StabilityCertificate) {
    let mut prov = Provenance::window(data.s, data.t);
    prov.inputs.insert("schedule_j".into(), serde_json::to_value(sj).expect("schedule serializes"));
    prov.inputs.insert("schedule_k".into(), serde_json::to_value(sk).expect("schedule serializes"));
    prov.factors.insert("integral_difference".into(), data.integral_difference);
    for (i, (n, d)) in data.interaction_norms.iter().zip(&data.l1).enumerate() {
        prov.factors.insert(index_key("interaction_norm.", i), *n);
        prov.factors.insert(index_key("l1_distance.", i), *d);
    }
    prov.tolerances.insert("propagation".into(), CERT_PROPAGATION_TOL);
    prov.tolerances.insert("quadrature".into(), CERT_QUADRATURE_TOL);
    let rhs_main = constants.l * data.integral_difference;
    let rhs_formlinear = constants.l * data.interaction_norms.iter().zip(&data.l1).map(|(a, b)| a * b).sum::<f64>();
    let mut main = StabilityCertificate::new(CertificateKind::StabilityMain, data.lhs, rhs_main, constants, prov.clone());
    main.extra.insert("rhs_formlinear".into(), rhs_formlinear);
    main.extra.insert("rhs_main_with_L_c2".into(), constants.l_c2 * data.integral_difference);
    let mut formlinear = StabilityCertificate::new(CertificateKind::StabilityFormlinear, data.lhs, rhs_formlinear, constants, prov);
    formlinear.extra.insert("rhs_main".into(), rhs_main);
    (main, formlinear)
}

/// Main and form-linear stability certificates on the window `[s, t]`.
pub fn certify_stability_window(
    system: &FormLinearSystem,
    sj: &ControlSchedule,
    sk: &ControlSchedule,
    constants: &SystemConstants,
    t: f64,
    s: f64,
) -> Result<(StabilityCertificate, StabilityCertificate)> {
    check_hypotheses(system, &[sj, sk], constants)?;
    let evolver = Evolver::new(system);
    let data = stability_data(system, &evolver, sj, sk, t, s)?;
    Ok(stability_certificates(&data, *constants, sj, sk))
}

/// `‖U_j(T,0) − U_k(T,0)‖₊,₋ ≤ L·∫₀ᵀ‖H(u_j) − H(u_k)‖₊,₋`; the form-linear
/// right-hand side `L·Σᵢ‖Hᵢ‖₊,₋·‖u_{j,i} − u_{k,i}‖_{L¹}` rides along in `extra`.
pub fn certify_stability(
    system: &FormLinearSystem,
    sj: &ControlSchedule,
    sk: &ControlSchedule,
    constants: &SystemConstants,
) -> Result<StabilityCertificate> {
    Ok(certify_stability_window(system, sj, sk, constants, sj.horizon(), 0.0)?.0)
}

/// Same data as [`certify_stability`], judged against the form-linear bound.
pub fn certify_formlinear(
    system: &FormLinearSystem,
    sj: &ControlSchedule,
    sk: &ControlSchedule,
    constants: &SystemConstants,
) -> Result<StabilityCertificate> {
    Ok(certify_stability_window(system, sj, sk, constants, sj.horizon(), 0.0)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingCheck {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `|⟨Ψ, DΦ⟩| / (‖Ψ‖₊‖Φ‖₊·gap)`; at most 1.
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongConvergenceReport {
    pub gaps: Vec<f64>,
    /// `‖(Uₙ − U_ref)φ‖` per sequence element and probe.
    pub probe_errors: Vec<Vec<f64>>,
    pub pairing: Vec<PairingCheck>,
    pub certificates: Vec<StabilityCertificate>,
}

/// `gapₙ = ‖Uₙ − U_ref‖₊,₋`, probe errors, and the pairing inequality
/// `|⟨Ψ,(Uₙ−U_ref)Φ⟩| ≤ ‖Ψ‖₊‖Φ‖₊·gapₙ` on `pairs` random pairs.
pub fn strong_convergence_gap(
    u_ref: &Propagator,
    u_seq: &[Propagator],
    probes: &[CVector],
    frame: &ScaleFrame,
    constants: SystemConstants,
    pairs: usize,
    seed: u64,
) -> Result<StrongConvergenceReport> {
    let n = u_ref.dim();
    for u in u_seq {
        if u.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: u.dim() });
        }
        if u.t() != u_ref.t() || u.s() != u_ref.s() {
            return Err(Error::InvalidArgument(format!(
                "propagator U({}, {}) compared with reference U({}, {})",
                u.t(),
                u.s(),
                u_ref.t(),
                u_ref.s()
            )));
        }
    }
    let mut report = StrongConvergenceReport { gaps: vec![], probe_errors: vec![], pairing: vec![], certificates: vec![] };
    for (idx, u) in u_seq.iter().enumerate() {
        let d = u.matrix() - u_ref.matrix();
        let gap = norm_plus_minus(&d, frame)?;
        let errors = probes
            .iter()
            .map(|phi| {
                if phi.len() != n {
                    Err(Error::DimensionMismatch { expected: n, found: phi.len() })
                } else {
                    Ok((&d * phi).norm())
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx as u64));
        let mut check = PairingCheck { pairs, violations: 0, max_ratio: 0.0 };
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let psi = random_state(&mut rng, n);
            let phi = random_state(&mut rng, n);
            let pairing = psi.dotc(&(&d * &phi)).norm();
            let bound = frame.norm_plus(&psi) * frame.norm_plus(&phi);
            worst = worst.max(pairing / bound);
            if !passes(pairing, bound * gap) {
                check.violations += 1;
            }
            if gap > 0.0 {
                check.max_ratio = check.max_ratio.max(pairing / (bound * gap));
            }
        }
        let mut prov = Provenance::window(u_ref.s(), u_ref.t());
        prov.factors.insert("gap".into(), gap);
        prov.inputs.insert("sequence_index".into(), serde_json::json!(idx));
        prov.inputs.insert("pairs".into(), serde_json::json!(pairs));
        let mut cert = StabilityCertificate::new(CertificateKind::StrongConvergence, worst, gap, constants, prov);
        cert.extra.insert("max_probe_error".into(), errors.iter().copied().fold(0.0, f64::max));
        report.gaps.push(gap);
        report.probe_errors.push(errors);
        report.pairing.push(check);
        report.certificates.push(cert);
    }
    Ok(report)
}

/// Standard complex Gaussian-like state with entries uniform in the unit square.
pub fn random_state(rng: &mut impl Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// Random point of a control box.
pub fn random_control(rng: &mut impl Rng, control_box: &[(f64, f64)]) -> Vec<f64> {
    control_box.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect()
}

/// Runs `trials` independent closures in parallel, trial `k` seeded with
/// `derive_seed(master, k)`; results keep trial order.
pub fn run_trials<T: Send>(trials: usize, master: u64, f: impl Fn(usize, ChaCha8Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..trials)
        .into_par_iter()
        .map(|k| f(k, ChaCha8Rng::seed_from_u64(derive_seed(master, k as u64))))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub total: usize,
    pub failed: usize,
    pub max_ratio: f64,
    pub min_margin: f64,
}

pub fn summarize(certs: &[StabilityCertificate]) -> CertificateSummary {
    CertificateSummary {
        total: certs.len(),
        failed: certs.iter().filter(|c| !c.pass).count(),
        max_ratio: certs.iter().map(StabilityCertificate::ratio).fold(0.0, f64::max),
        min_margin: certs.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min),
    }
}

/// Least-squares line `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("a linear fit needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
