//! Truncation onto the lowest eigenvectors of `h0`, tail-norm compactness
//! diagnostics, budgeted piecewise-constant synthesis and the transfer
//! experiment from a rank-`n` truncation back to the ambient system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::passes;
use crate::controls::ControlSchedule;
use crate::error::{Error, Result};
use crate::linops::{norm_plus_minus, CMatrix, CVector, Eigen, HermitianMatrix};
use crate::propagate::propagate_pc;
use crate::report::derive_seed;
use crate::system::{FormLinearSystem, SystemConstants};
use crate::Complex64;

/// Relative movement of a key norm between `N` and `N/2` that gets flagged.
pub const SENSITIVITY_THRESHOLD: f64 = 0.05;
/// Slack for reconstructing the ambient error from the chain terms.
pub const CHAIN_SLACK: f64 = 1e-9;
/// Weight of the squared budget hinge in the synthesis objective.
const PENALTY_WEIGHT: f64 = 100.0;
/// The search runs against a slightly tightened budget so the reported
/// `l1` stays strictly below the requested one.
const BUDGET_MARGIN: f64 = 0.99;

/// Ascending eigenbasis of `h0`. Exactly diagonal `h0` keeps the standard
/// basis with ties in index order; otherwise each eigenvector is rotated so
/// its largest component is real and positive.
fn h0_basis(system: &FormLinearSystem) -> Eigen {
    let mut eig = system.h0().eigen();
    let n = eig.values.len();
    for j in 0..n {
        let mut best = 0;
        for i in 0..n {
            if eig.vectors[(i, j)].norm() > eig.vectors[(best, j)].norm() + 1e-12 {
                best = i;
            }
        }
        let z = eig.vectors[(best, j)];
        if z.norm() > 0.0 {
            let phase = z.conj() / z.norm();
            for i in 0..n {
                eig.vectors[(i, j)] *= phase;
            }
        }
    }
    eig
}

fn leading_columns(basis: &CMatrix, n: usize) -> CMatrix {
    basis.columns(0, n).into_owned()
}

fn compress(v: &CMatrix, op: &CMatrix) -> HermitianMatrix {
    HermitianMatrix::symmetrized(v.adjoint() * op * v)
}

/// `PₙXPₙ` in the ambient basis, with `Pₙ = VₙVₙ†`.
fn ambient_compression(v: &CMatrix, op: &CMatrix) -> CMatrix {
    let p = v * v.adjoint();
    &p * op * &p
}

/// Rank-`n` Galerkin truncation of a system, represented in the eigenbasis of
/// the parent `h0`.
#[derive(Clone, Debug)]
pub struct TruncatedSystem {
    parent: FormLinearSystem,
    n: usize,
    basis: CMatrix,
    levels: Vec<f64>,
    system: FormLinearSystem,
}

pub fn truncate(system: &FormLinearSystem, n: usize) -> Result<TruncatedSystem> {
    let big_n = system.dim();
    if n == 0 || n > big_n {
        return Err(Error::InvalidArgument(format!("truncation rank must lie in 1..={big_n}, got {n}")));
    }
    let eig = h0_basis(system);
    let basis = leading_columns(&eig.vectors, n);
    let levels = eig.values[..n].to_vec();
    let h0_n = HermitianMatrix::from_real_diagonal(&levels);
    let interactions_n = system.interactions().iter().map(|h| compress(&basis, h.matrix())).collect();
    let truncated = FormLinearSystem::new(h0_n, interactions_n, system.control_box().to_vec())?.with_model(system.model().cloned());
    Ok(TruncatedSystem { parent: system.clone(), n, basis, levels, system: truncated })
}

impl TruncatedSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ambient_dim(&self) -> usize {
        self.parent.dim()
    }

    pub fn parent(&self) -> &FormLinearSystem {
        &self.parent
    }

    /// The `n`-dimensional system `(h0_n, PₙHᵢPₙ)` in the eigenbasis.
    pub fn system(&self) -> &FormLinearSystem {
        &self.system
    }

    /// `N×n` matrix whose columns are the first `n` eigenvectors of `h0`.
    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn projector(&self) -> CMatrix {
        &self.basis * self.basis.adjoint()
    }

    /// Eigenbasis coordinates of `Pₙφ`.
    pub fn restrict(&self, phi: &CVector) -> Result<CVector> {
        if phi.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), found: phi.len() });
        }
        Ok(self.basis.adjoint() * phi)
    }

    pub fn embed(&self, y: &CVector) -> Result<CVector> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: y.len() });
        }
        Ok(&self.basis * y)
    }

    /// `PₙHᵢPₙ` in the ambient basis.
    pub fn compressed_interaction(&self, i: usize) -> CMatrix {
        ambient_compression(&self.basis, self.parent.interactions()[i].matrix())
    }

    /// Ambient system `h0 + ΣuᵢPₙHᵢPₙ`. On the range of `Pₙ` it generates the
    /// truncated dynamics; on the complement only the drift acts.
    pub fn compressed_parent(&self) -> Result<FormLinearSystem> {
        let interactions = (0..self.parent.channels())
            .map(|i| HermitianMatrix::symmetrized(self.compressed_interaction(i)))
            .collect();
        FormLinearSystem::new(self.parent.h0().clone(), interactions, self.parent.control_box().to_vec())
    }

    /// `‖PₙHᵢPₙ − Hᵢ‖₊,₋` for every channel, in the parent frame.
    pub fn tail_norms(&self) -> Result<Vec<f64>> {
        (0..self.parent.channels())
            .map(|i| {
                let h = self.parent.interactions()[i].matrix();
                norm_plus_minus(&(self.compressed_interaction(i) - h), self.parent.frame())
            })
            .collect()
    }
}

/// `‖PₙVPₙ − V‖₊,₋` in the frame of `system` for each rank.
pub fn tail_norm_profile(system: &FormLinearSystem, op: &CMatrix, ranks: &[usize]) -> Result<Vec<f64>> {
    let big_n = system.dim();
    if op.nrows() != big_n || op.ncols() != big_n {
        return Err(Error::DimensionMismatch { expected: big_n, found: op.nrows() });
    }
    if let Some(&bad) = ranks.iter().find(|&&n| n > big_n) {
        return Err(Error::InvalidArgument(format!("rank {bad} exceeds the ambient dimension {big_n}")));
    }
    let eig = h0_basis(system);
    ranks
        .par_iter()
        .map(|&n| {
            let v = leading_columns(&eig.vectors, n);
            norm_plus_minus(&(ambient_compression(&v, op) - op), system.frame())
        })
        .collect()
}

/// Tail norms of channel `i`; decay toward zero is the finite surrogate for
/// compactness of `Hᵢ: H⁺ → H⁻`.
pub fn compactness_profile(system: &FormLinearSystem, i: usize, ranks: &[usize]) -> Result<Vec<f64>> {
    if i >= system.channels() {
        return Err(Error::InvalidArgument(format!("channel {i} out of range ({} channel(s))", system.channels())));
    }
    tail_norm_profile(system, system.interactions()[i].matrix(), ranks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub epsilon: f64,
    pub l1_budget: f64,
    pub segments: usize,
    pub t_max: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Objective evaluations per restart.
    pub max_evals: usize,
    /// Restarts run concurrently; the search stops after the first batch
    /// holding a success.
    pub batch: usize,
    /// A restart stops early once its residual is below `polish·epsilon`.
    pub polish: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            l1_budget: 5.0,
            segments: 8,
            t_max: 20.0,
            seed: 0,
            restarts: 32,
            max_evals: 6000,
            batch: 8,
            polish: 0.1,
        }
    }
}

impl SynthesisParams {
    fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::InvalidArgument("synthesis needs at least one segment".into()));
        }
        if !(self.epsilon > 0.0) || !(self.t_max > 0.0) || !(self.l1_budget >= 0.0) {
            return Err(Error::InvalidArgument("epsilon and t_max must be positive, the budget non-negative".into()));
        }
        if self.restarts == 0 || self.batch == 0 || self.max_evals == 0 {
            return Err(Error::InvalidArgument("restarts, batch and max_evals must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a synthesis run; failure is reported here, not as an error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub success: bool,
    /// `None` when no segment has positive length.
    pub schedule: Option<ControlSchedule>,
    pub horizon: f64,
    /// `‖Uₙ(T,0)φ − ψ‖`.
    pub residual: f64,
    /// `1 − |⟨ψ, Uₙ(T,0)φ⟩|²` for normalized states.
    pub infidelity: f64,
    pub l1_norms: Vec<f64>,
    pub objective: f64,
    pub best_restart: Option<usize>,
    pub restarts_run: usize,
    pub evaluations: usize,
}

struct Problem<'a> {
    system: &'a FormLinearSystem,
    phi: &'a CVector,
    psi: &'a CVector,
    params: &'a SynthesisParams,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Problem<'_> {
    fn stride(&self) -> usize {
        1 + self.system.channels()
    }

    fn decode(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let stride = self.stride();
        let durations = x.chunks(stride).map(|c| c[0]).collect();
        let values = x.chunks(stride).map(|c| c[1..].to_vec()).collect();
        (durations, values)
    }

    fn evolve(&self, x: &[f64]) -> CVector {
        let (durations, values) = self.decode(x);
        let mut state = self.phi.clone();
        for (d, u) in durations.iter().zip(&values) {
            if *d <= 0.0 {
                continue;
            }
            let eig = self.system.assemble(u).expect("decoded controls lie in the box").eigen();
            let coeffs = eig.vectors.adjoint() * &state;
            let rotated = CVector::from_fn(coeffs.len(), |k, _| coeffs[k] * Complex64::from_polar(1.0, -eig.values[k] * d));
            state = &eig.vectors * rotated;
        }
        state
    }

    fn l1(&self, x: &[f64]) -> Vec<f64> {
        let (durations, values) = self.decode(x);
        let mut out = vec![0.0; self.system.channels()];
        for (d, u) in durations.iter().zip(&values) {
            for (acc, ui) in out.iter_mut().zip(u) {
                *acc += ui.abs() * d;
            }
        }
        out
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let residual = (self.evolve(x) - self.psi).norm_squared();
        let budget = BUDGET_MARGIN * self.params.l1_budget;
        let penalty: f64 = self.l1(x).iter().map(|l| (l - budget).max(0.0).powi(2)).sum();
        residual + PENALTY_WEIGHT * penalty
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

struct SearchResult {
    x: Vec<f64>,
    value: f64,
    evals: usize,
}

/// Hooke–Jeeves pattern search inside the parameter box.
fn pattern_search(problem: &Problem, x0: Vec<f64>, target: f64) -> SearchResult {
    let max_evals = problem.params.max_evals;
    let mut steps: Vec<f64> = problem.lower.iter().zip(&problem.upper).map(|(lo, hi)| 0.25 * (hi - lo)).collect();
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        problem.objective(x)
    };
    let explore = |base: &[f64], f_base: f64, steps: &[f64], evals: &mut usize| {
        let mut x = base.to_vec();
        let mut fx = f_base;
        for k in 0..x.len() {
            if steps[k] == 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[k] += sign * steps[k];
                problem.clamp(&mut trial);
                if trial[k] == x[k] {
                    continue;
                }
                *evals += 1;
                let f = problem.objective(&trial);
                if f < fx {
                    x = trial;
                    fx = f;
                    break;
                }
            }
        }
        (x, fx)
    };
    let mut x = x0;
    problem.clamp(&mut x);
    let mut fx = eval(&x, &mut evals);
    while evals < max_evals && fx > target {
        let (y, fy) = explore(&x, fx, &steps, &mut evals);
        if fy < fx {
            let (mut base, mut f_base) = (y, fy);
            while evals < max_evals {
                let mut z: Vec<f64> = base.iter().zip(&x).map(|(a, b)| 2.0 * a - b).collect();
                problem.clamp(&mut z);
                x = base.clone();
                fx = f_base;
                let fz = eval(&z, &mut evals);
                let (z2, fz2) = explore(&z, fz, &steps, &mut evals);
                if fz2 < fx {
                    base = z2;
                    f_base = fz2;
                } else {
                    break;
                }
            }
            if f_base < fx {
                x = base;
                fx = f_base;
            }
        } else {
            steps.iter_mut().for_each(|s| *s *= 0.5);
            if steps.iter().cloned().fold(0.0, f64::max) < 1e-10 {
                break;
            }
        }
    }
    SearchResult { x, value: fx, evals }
}

fn check_pair(phi: &CVector, psi: &CVector, n: usize) -> Result<()> {
    for v in [phi, psi] {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: v.len() });
        }
    }
    let (a, b) = (phi.norm(), psi.norm());
    if a == 0.0 || (a - b).abs() > 1e-10 * a.max(1.0) {
        return Err(Error::InvalidArgument(format!("states must be nonzero with equal norms, got {a} and {b}")));
    }
    Ok(())
}

fn infidelity(final_state: &CVector, psi: &CVector) -> f64 {
    let norms = final_state.norm_squared() * psi.norm_squared();
    (1.0 - psi.dotc(final_state).norm_sqr() / norms).max(0.0)
}

/// Budgeted piecewise-constant synthesis on the truncated system.
pub fn synthesize_pc(trunc: &TruncatedSystem, phi: &CVector, psi: &CVector, params: &SynthesisParams) -> Result<SynthesisOutcome> {
    synthesize_on(trunc.system(), phi, psi, params)
}

/// Multi-start pattern search over segment durations in `[0, T_max/K]` and
/// amplitudes in the control box. The objective is
/// `‖Uₙ(T,0)φ − ψ‖² + w·Σᵢ max(0, ‖uᵢ‖_{L¹} − ℓ)²`; success means
/// `‖Uₙ(T,0)φ − ψ‖ ≤ ε` with every `‖uᵢ‖_{L¹} < ℓ`.
pub fn synthesize_on(system: &FormLinearSystem, phi: &CVector, psi: &CVector, params: &SynthesisParams) -> Result<SynthesisOutcome> {
    params.validate()?;
    check_pair(phi, psi, system.dim())?;
    let p = system.channels();
    if (phi - psi).norm() <= 1e-14 {
        return Ok(SynthesisOutcome {
            success: true,
            schedule: None,
            horizon: 0.0,
            residual: 0.0,
            infidelity: 0.0,
            l1_norms: vec![0.0; p],
            objective: 0.0,
            best_restart: None,
            restarts_run: 0,
            evaluations: 0,
        });
    }
    let k = params.segments;
    let d_max = params.t_max / k as f64;
    let mut lower = Vec::with_capacity(k * (1 + p));
    let mut upper = Vec::with_capacity(k * (1 + p));
    for _ in 0..k {
        lower.push(0.0);
        upper.push(d_max);
        for &(lo, hi) in system.control_box() {
            lower.push(lo);
            upper.push(hi);
        }
    }
    let problem = Problem { system, phi, psi, params, lower, upper };
    let target = (params.polish * params.epsilon).powi(2);

    let mut results: Vec<(usize, SearchResult)> = Vec::new();
    let mut start = 0;
    while start < params.restarts {
        let end = (start + params.batch).min(params.restarts);
        let batch: Vec<(usize, SearchResult)> = (start..end)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, r as u64));
                let x0: Vec<f64> = problem.lower.iter().zip(&problem.upper).map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo }).collect();
                (r, pattern_search(&problem, x0, target))
            })
            .collect();
        results.extend(batch);
        start = end;
        if results.iter().any(|(_, res)| is_success(&problem, &res.x)) {
            break;
        }
    }
    let evaluations = results.iter().map(|(_, r)| r.evals).sum();
    let restarts_run = results.len();
    let (best_index, best) = results
        .into_iter()
        .min_by(|(ia, a), (ib, b)| {
            is_success(&problem, &b.x)
                .cmp(&is_success(&problem, &a.x))
                .then(a.value.total_cmp(&b.value))
                .then(ia.cmp(ib))
        })
        .expect("at least one restart");
    finish(&problem, best, best_index, restarts_run, evaluations)
}

fn is_success(problem: &Problem, x: &[f64]) -> bool {
    (problem.evolve(x) - problem.psi).norm() <= problem.params.epsilon && problem.l1(x).iter().all(|&l| l < problem.params.l1_budget)
}

fn finish(problem: &Problem, best: SearchResult, index: usize, restarts_run: usize, evaluations: usize) -> Result<SynthesisOutcome> {
    let (durations, values) = problem.decode(&best.x);
    let kept: Vec<(f64, Vec<f64>)> = durations.into_iter().zip(values).filter(|(d, _)| *d > 1e-12).collect();
    let (schedule, horizon, final_state) = if kept.is_empty() {
        (None, 0.0, problem.phi.clone())
    } else {
        let d: Vec<f64> = kept.iter().map(|(d, _)| *d).collect();
        let v: Vec<Vec<f64>> = kept.into_iter().map(|(_, v)| v).collect();
        let schedule = ControlSchedule::from_durations(&d, &v)?;
        let horizon = schedule.horizon();
        let state = propagate_pc(problem.system, &schedule, horizon, 0.0)?.apply(problem.phi)?;
        (Some(schedule), horizon, state)
    };
    let l1_norms = match &schedule {
        Some(s) => s.l1_norms()?,
        None => vec![0.0; problem.system.channels()],
    };
    let residual = (&final_state - problem.psi).norm();
    let success = residual <= problem.params.epsilon && l1_norms.iter().all(|&l| l < problem.params.l1_budget);
    Ok(SynthesisOutcome {
        success,
        schedule,
        horizon,
        residual,
        infidelity: infidelity(&final_state, problem.psi),
        l1_norms,
        objective: best.value,
        best_restart: Some(index),
        restarts_run,
        evaluations,
    })
}

/// Key norms recomputed with the ambient dimension halved.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityCheck {
    pub half_dim: usize,
    pub tail_norms: Vec<f64>,
    pub tail_norms_half: Vec<f64>,
    pub c: f64,
    pub c_half: f64,
    pub max_relative_change: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferErrors {
    pub finite_dim_residual: f64,
    /// `‖U(T,0)φ − ψ‖` in the ambient dimension, the asserted quantity.
    pub ambient_final_error: f64,
    /// The same error in `‖·‖₊`, recorded only.
    pub ambient_final_error_plus: f64,
    pub projector_tail_norms: Vec<f64>,
    pub chain_bound_terms: ChainTerms,
}

/// Terms of `‖Uφ − ψ‖ ≤ 2μ + ‖Uₙφ − ψ‖ + ‖(U − Uₙ)φ‖` and of the
/// interaction-picture gap bound `‖Uₙ − U‖₊,₋ ≤ L·Σᵢ‖PₙHᵢPₙ − Hᵢ‖₊,₋·‖uᵢ‖_{L¹}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainTerms {
    pub mu: f64,
    pub state_gap: f64,
    pub chain_bound: f64,
    pub propagator_gap: f64,
    pub gap_bound: f64,
    pub l1_norms: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferReport {
    pub n_prime: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub ambient_dim: usize,
    pub epsilon: f64,
    pub mu: f64,
    pub synthesis: SynthesisOutcome,
    pub errors: TransferErrors,
    /// Constants over both Hamiltonian families; `M = 0` for pc schedules.
    pub constants: SystemConstants,
    pub gap_bound_holds: bool,
    pub chain_holds: bool,
    pub ambient_within_epsilon: bool,
    pub sensitivity: Option<SensitivityCheck>,
}

impl TransferReport {
    /// Synthesized within budget and the ambient error is at most `ε`.
    pub fn success(&self) -> bool {
        self.synthesis.success && self.ambient_within_epsilon
    }
}

fn sensitivity(system: &FormLinearSystem, n: usize, tail_norms: &[f64], c: f64) -> Result<Option<SensitivityCheck>> {
    let half = system.dim() / 2;
    if half < n || half < 1 {
        return Ok(None);
    }
    let reduced = truncate(system, half)?;
    let sub = reduced.system();
    let tail_norms_half = (0..sub.channels())
        .map(|i| Ok(compactness_profile(sub, i, &[n])?[0]))
        .collect::<Result<Vec<f64>>>()?;
    let c_half = sub.equivalence_constant(&sub.default_samples()?)?;
    let rel = |a: f64, b: f64| if a.abs().max(b.abs()) < 1e-14 { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    let max_relative_change = tail_norms
        .iter()
        .zip(&tail_norms_half)
        .map(|(a, b)| rel(*a, *b))
        .chain(std::iter::once(rel(c, c_half)))
        .fold(0.0, f64::max);
    Ok(Some(SensitivityCheck {
        half_dim: half,
        tail_norms: tail_norms.to_vec(),
        tail_norms_half,
        c,
        c_half,
        max_relative_change,
        flagged: max_relative_change > SENSITIVITY_THRESHOLD,
    }))
}

/// Synthesizes at rank `n`, replays the schedule in the ambient dimension and
/// records the error chain. `phi`, `psi` are ambient vectors supported on the
/// first `n_prime` eigenvectors.
pub fn transfer_experiment(
    system: &FormLinearSystem,
    n_prime: usize,
    n: usize,
    phi: &CVector,
    psi: &CVector,
    params: &SynthesisParams,
) -> Result<TransferReport> {
    let big_n = system.dim();
    if n_prime == 0 || n_prime > n || n > big_n {
        return Err(Error::InvalidArgument(format!("need 1 ≤ n' ≤ n ≤ N, got n'={n_prime}, n={n}, N={big_n}")));
    }
    check_pair(phi, psi, big_n)?;
    let support = truncate(system, n_prime)?;
    for (name, v) in [("phi", phi), ("psi", psi)] {
        let outside = (support.embed(&support.restrict(v)?)? - v).norm();
        if outside > 1e-10 * v.norm() {
            return Err(Error::InvalidArgument(format!("{name} has weight {outside:e} outside the first {n_prime} eigenvectors")));
        }
    }
    let trunc = truncate(system, n)?;
    let mu = [phi, psi]
        .iter()
        .map(|v| Ok((trunc.embed(&trunc.restrict(v)?)? - *v).norm()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let outcome = synthesize_pc(&trunc, &trunc.restrict(phi)?, &trunc.restrict(psi)?, params)?;

    let compressed = trunc.compressed_parent()?;
    let c = system
        .equivalence_constant(&system.default_samples()?)?
        .max(compressed.equivalence_constant(&compressed.default_samples()?)?);
    let constants = SystemConstants::new(system.m(), c, 0.0);
    let tail_norms = trunc.tail_norms()?;

    let (final_state, state_gap, propagator_gap) = match &outcome.schedule {
        Some(schedule) => {
            let t = schedule.horizon();
            let u = propagate_pc(system, schedule, t, 0.0)?;
            let u_n = propagate_pc(&compressed, schedule, t, 0.0)?;
            let gap = u_n.matrix() - u.matrix();
            (u.apply(phi)?, (&gap * phi).norm(), norm_plus_minus(&gap, system.frame())?)
        }
        None => (phi.clone(), 0.0, 0.0),
    };
    let diff = &final_state - psi;
    let ambient_final_error = diff.norm();
    let gap_bound =
        constants.l * tail_norms.iter().zip(&outcome.l1_norms).map(|(t, l)| t * l).sum::<f64>();
    let chain_bound = 2.0 * mu + outcome.residual + state_gap;
    let report = TransferReport {
        n_prime,
        n,
        ambient_dim: big_n,
        epsilon: params.epsilon,
        mu,
        gap_bound_holds: passes(propagator_gap, gap_bound),
        chain_holds: ambient_final_error <= chain_bound + CHAIN_SLACK,
        ambient_within_epsilon: ambient_final_error <= params.epsilon,
        sensitivity: sensitivity(system, n, &tail_norms, c)?,
        errors: TransferErrors {
            finite_dim_residual: outcome.residual,
            ambient_final_error,
            ambient_final_error_plus: system.frame().norm_plus(&diff),
            projector_tail_norms: tail_norms,
            chain_bound_terms: ChainTerms {
                mu,
                state_gap,
                chain_bound,
                propagator_gap,
                gap_bound,
                l1_norms: outcome.l1_norms.clone(),
            },
        },
        constants,
        synthesis: outcome,
    };
    Ok(report)
}

/// Sweep-level view of a list of transfer reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub ranks: Vec<usize>,
    pub ambient_errors: Vec<f64>,
    pub synthesized: Vec<bool>,
    pub max_l1: Vec<f64>,
    pub all_synthesized: bool,
    pub errors_nonincreasing: bool,
    pub final_within_epsilon: bool,
    pub gap_bound_everywhere: bool,
    /// Largest achieved `‖uᵢ‖_{L¹}` over the sweep; a uniform budget exists
    /// for these ranks iff it stays below the requested one.
    pub l1_sup: f64,
    pub sensitivity_flags: usize,
}

pub fn summarize_sweep(reports: &[TransferReport]) -> SweepSummary {
    let ambient_errors: Vec<f64> = reports.iter().map(|r| r.errors.ambient_final_error).collect();
    let max_l1: Vec<f64> = reports.iter().map(|r| r.synthesis.l1_norms.iter().cloned().fold(0.0, f64::max)).collect();
    SweepSummary {
        ranks: reports.iter().map(|r| r.n).collect(),
        synthesized: reports.iter().map(|r| r.synthesis.success).collect(),
        all_synthesized: reports.iter().all(|r| r.synthesis.success),
        errors_nonincreasing: ambient_errors.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        final_within_epsilon: reports.last().is_some_and(|r| r.ambient_within_epsilon),
        gap_bound_everywhere: reports.iter().all(|r| r.gap_bound_holds),
        l1_sup: max_l1.iter().cloned().fold(0.0, f64::max),
        sensitivity_flags: reports.iter().filter(|r| r.sensitivity.as_ref().is_some_and(|s| s.flagged)).count(),
        ambient_errors,
        max_l1,
    }
}

/// Runs [`transfer_experiment`] at each rank with the same parameters.
pub fn transfer_sweep(
    system: &FormLinearSystem,
    n_prime: usize,
    ranks: &[usize],
    phi: &CVector,
    psi: &CVector,
    params: &SynthesisParams,
) -> Result<Vec<TransferReport>> {
    ranks.iter().map(|&n| transfer_experiment(system, n_prime, n, phi, psi, params)).collect()
}

/// Unit vector `e_k` of dimension `n`.
pub fn basis_state(n: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[k] = Complex64::new(1.0, 0.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::random_state;
    use crate::models::{harmonic_oscillator, particle_in_box, random_system};
    use proptest::prelude::*;
    use rand::Rng;

    fn rabi() -> FormLinearSystem {
        let h0 = HermitianMatrix::from_real_diagonal(&[0.0, 1.0]);
        let x = HermitianMatrix::from_real_fn(2, |i, j| if i != j { 1.0 } else { 0.0 });
        FormLinearSystem::new(h0, vec![x], vec![(-1.0, 1.0)]).unwrap()
    }

    #[test]
    fn truncation_of_oscillator_keeps_lowest_levels() {
        let s = harmonic_oscillator(32, 1.0).unwrap();
        let t = truncate(&s, 8).unwrap();
        let d = t.system().h0().matrix();
        for k in 0..8 {
            assert_eq!(d[(k, k)].re, k as f64 + 0.5);
        }
        assert!(t.system().m() < 1e-12);
        assert!(truncate(&s, 0).is_err());
        assert!(truncate(&s, 33).is_err());
    }

    #[test]
    fn full_rank_truncation_is_unitarily_equivalent() {
        let s = random_system(12, 2, 5).unwrap();
        let h0 = rotated_h0(&s);
        let s = FormLinearSystem::new(h0, s.interactions().to_vec(), s.control_box().to_vec()).unwrap();
        let t = truncate(&s, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let u = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = s.assemble(&u).unwrap().eigen().values;
            let b = t.system().assemble(&u).unwrap().eigen().values;
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    /// `h0` rotated by a fixed unitary so the eigensolver path is exercised.
    fn rotated_h0(s: &FormLinearSystem) -> HermitianMatrix {
        let n = s.dim();
        let q = HermitianMatrix::from_real_fn(n, |i, j| if i == j { 0.0 } else { 1.0 / (1.0 + (i + j) as f64) }).eigen().vectors;
        HermitianMatrix::symmetrized(&q * s.h0().matrix() * q.adjoint())
    }

    #[test]
    fn rank_one_is_a_phase() {
        let s = harmonic_oscillator(6, 1.0).unwrap();
        let t = truncate(&s, 1).unwrap();
        let sched = ControlSchedule::from_durations(&[0.3, 0.5], &[vec![0.4], vec![-0.9]]).unwrap();
        let u = propagate_pc(t.system(), &sched, 0.8, 0.0).unwrap();
        // X₀₀ = 0, so only the drift level contributes
        let expect = Complex64::from_polar(1.0, -0.5 * 0.8);
        assert!((u.matrix()[(0, 0)] - expect).norm() < 1e-12);
    }

    #[test]
    fn profile_examples() {
        let s = harmonic_oscillator(24, 1.0).unwrap();
        let ranks: Vec<usize> = (1..=24).collect();
        let prof = compactness_profile(&s, 0, &ranks).unwrap();
        assert!(prof[23] < 1e-12);
        assert!(prof.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let a0 = s.frame().a0().matrix().clone();
        let flat = tail_norm_profile(&s, &a0, &ranks[..23]).unwrap();
        assert!(flat.iter().all(|&v| (v - 1.0).abs() < 1e-10));
        assert!(compactness_profile(&s, 1, &[2]).is_err());
    }

    #[test]
    fn box_profile_is_monotone() {
        let s = particle_in_box(24, 1.0).unwrap();
        let prof = compactness_profile(&s, 0, &(1..=24).collect::<Vec<_>>()).unwrap();
        assert!(prof.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn synthesis_trivial_and_zero_budget() {
        let s = rabi();
        let t = truncate(&s, 2).unwrap();
        let phi = basis_state(2, 0);
        let out = synthesize_pc(&t, &phi, &phi, &SynthesisParams::default()).unwrap();
        assert!(out.success && out.schedule.is_none() && out.horizon == 0.0);
        let params = SynthesisParams { l1_budget: 0.0, restarts: 4, max_evals: 800, ..Default::default() };
        let out = synthesize_pc(&t, &phi, &basis_state(2, 1), &params).unwrap();
        assert!(!out.success);
        assert!(out.residual > 0.5);
        assert!(synthesize_pc(&t, &phi, &basis_state(2, 1).scale(2.0), &params).is_err());
    }

    #[test]
    fn rabi_transfer_reaches_excited_state() {
        let s = rabi();
        let t = truncate(&s, 2).unwrap();
        let params = SynthesisParams { epsilon: 1e-4, segments: 4, t_max: 8.0, seed: 11, ..Default::default() };
        let out = synthesize_pc(&t, &basis_state(2, 0), &basis_state(2, 1), &params).unwrap();
        assert!(out.success, "{out:?}");
        assert!(out.infidelity <= 1e-6);
        assert!(out.l1_norms[0] < params.l1_budget);
        let again = synthesize_pc(&t, &basis_state(2, 0), &basis_state(2, 1), &params).unwrap();
        assert_eq!(again.residual, out.residual);
    }

    #[test]
    fn full_rank_transfer_has_no_gap() {
        let s = harmonic_oscillator(6, 1.0).unwrap();
        let params = SynthesisParams { segments: 4, restarts: 4, max_evals: 1500, seed: 2, ..Default::default() };
        let r = transfer_experiment(&s, 2, 6, &basis_state(6, 0), &basis_state(6, 1), &params).unwrap();
        assert!((r.errors.ambient_final_error - r.errors.finite_dim_residual).abs() < 1e-10);
        assert!(r.errors.chain_bound_terms.propagator_gap < 1e-10);
        assert!(r.sensitivity.is_none());
        let same = transfer_experiment(&s, 2, 4, &basis_state(6, 0), &basis_state(6, 0), &params).unwrap();
        assert_eq!(same.errors.ambient_final_error, 0.0);
        assert_eq!(same.errors.finite_dim_residual, 0.0);
        assert!(transfer_experiment(&s, 2, 4, &basis_state(6, 0), &basis_state(6, 3), &params).is_err());
    }

    #[test]
    fn transfer_report_is_consistent() {
        let s = particle_in_box(16, 1.0).unwrap();
        let params = SynthesisParams { segments: 4, restarts: 8, max_evals: 3000, seed: 9, t_max: 2.0, ..Default::default() };
        let r = transfer_experiment(&s, 2, 4, &basis_state(16, 0), &basis_state(16, 1), &params).unwrap();
        assert!(r.gap_bound_holds);
        assert!(r.chain_holds);
        assert!(r.sensitivity.is_some());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("N").is_some());
    }

    #[test]
    fn embedded_truncated_dynamics_match_compressed_parent() {
        let s = harmonic_oscillator(10, 1.0).unwrap();
        let t = truncate(&s, 4).unwrap();
        let sched = ControlSchedule::from_durations(&[0.7, 1.1], &[vec![0.6], vec![-1.0]]).unwrap();
        let phi = basis_state(10, 1);
        let small = propagate_pc(t.system(), &sched, 1.8, 0.0).unwrap().apply(&t.restrict(&phi).unwrap()).unwrap();
        let big = propagate_pc(&t.compressed_parent().unwrap(), &sched, 1.8, 0.0).unwrap().apply(&phi).unwrap();
        assert!((t.embed(&small).unwrap() - big).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projector_algebra(seed in 0u64..1000, n in 1usize..10) {
            let s = random_system(10, 1, seed).unwrap();
            let t = truncate(&s, n).unwrap();
            let p = t.projector();
            prop_assert!((&p * &p - &p).norm() < 1e-12);
            prop_assert!((p.adjoint() - &p).norm() < 1e-12);
            let h0 = s.h0().matrix();
            prop_assert!((&p * h0 - h0 * &p).norm() < 1e-12 * h0.norm());
            let e = s.h0().eigen().unitary_exp(-0.37 * (seed as f64 + 1.0));
            prop_assert!((&p * &e - &e * &p).norm() < 1e-12);
        }

        #[test]
        fn basis_expansions_agree(seed in 0u64..1000, n in 1usize..10) {
            let s = random_system(10, 1, seed).unwrap();
            let t = truncate(&s, n).unwrap();
            let frame = s.frame();
            let shift = frame.m() + 1.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let psi = random_state(&mut rng, 10);
            let plain = t.projector() * &psi;
            let mut plus = CVector::zeros(10);
            let mut minus = CVector::zeros(10);
            for j in 0..n {
                let col: CVector = t.basis().column(j).into_owned();
                let w = t.levels()[j] + shift;
                let tilde = col.scale(w.powf(-0.5));
                let hat = col.scale(w.powf(0.5));
                plus += &tilde * frame.inner_plus(&tilde, &psi);
                minus += &hat * frame.inner_minus(&hat, &psi);
            }
            let _ = rng.random::<f64>();
            prop_assert!((&plain - &plus).norm() < 1e-10 * psi.norm());
            prop_assert!((&plain - &minus).norm() < 1e-10 * psi.norm());
        }
    }
}
