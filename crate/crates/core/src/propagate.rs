//! Unitary propagators `U(t, s)` of `i∂ₜψ = H(u(t))ψ`.
//!
//! Constant segments use exact exponentials from an eigendecomposition;
//! smooth segments use the fourth-order Magnus integrator with two Gauss
//! nodes and step-doubling error control. `t < s` is the adjoint of `U(s, t)`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::controls::ControlSchedule;
use crate::error::{Error, Result};
use crate::linops::{expm_minus_i, matmul, spectral_norm, CMatrix, CVector, Eigen, HermitianMatrix};
use crate::system::FormLinearSystem;
use crate::Complex64;

/// Smallest step the adaptive integrator may take.
pub const STEP_FLOOR: f64 = 1e-8;
/// Unitarity defect above which the polar factor replaces the result.
pub const CLEANUP_THRESHOLD: f64 = 1e-9;
/// Default global tolerance of [`propagate_smooth`].
pub const DEFAULT_TOL: f64 = 1e-10;
/// Entries kept by an [`ExpCache`] before it is flushed.
const CACHE_CAPACITY: usize = 4096;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagatorMeta {
    pub integrator: String,
    pub exact_segments: usize,
    pub magnus_steps: usize,
    pub rejected_steps: usize,
    pub tol: Option<f64>,
    pub cleaned: bool,
}

/// `U(t, s)` together with how it was computed.
#[derive(Clone, Debug)]
pub struct Propagator {
    matrix: CMatrix,
    t: f64,
    s: f64,
    pub meta: PropagatorMeta,
}

impl Propagator {
    pub fn identity(dim: usize, t: f64) -> Self {
        Self { matrix: CMatrix::identity(dim, dim), t, s: t, meta: PropagatorMeta { integrator: "identity".into(), ..Default::default() } }
    }

    pub fn from_matrix(matrix: CMatrix, t: f64, s: f64, meta: PropagatorMeta) -> Self {
        Self { matrix, t, s, meta }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `U(s, t) = U(t, s)†`.
    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint(), t: self.s, s: self.t, meta: self.meta.clone() }
    }

    /// `U(t, s)·U(s, r) = U(t, r)`; `other` must end where `self` starts.
    pub fn compose(&self, other: &Propagator) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        if (self.s - other.t).abs() > 1e-12 * self.s.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot compose U({}, {}) with U({}, {})",
                self.t, self.s, other.t, other.s
            )));
        }
        let meta = PropagatorMeta {
            integrator: "composed".into(),
            exact_segments: self.meta.exact_segments + other.meta.exact_segments,
            magnus_steps: self.meta.magnus_steps + other.meta.magnus_steps,
            rejected_steps: self.meta.rejected_steps + other.meta.rejected_steps,
            tol: match (self.meta.tol, other.meta.tol) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
            cleaned: self.meta.cleaned || other.meta.cleaned,
        };
        Ok(Self { matrix: &self.matrix * &other.matrix, t: self.t, s: other.s, meta })
    }

    /// `‖U†U − I‖₂`.
    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.matrix)
    }

    pub fn apply(&self, phi: &CVector) -> Result<CVector> {
        if phi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: phi.len() });
        }
        Ok(&self.matrix * phi)
    }
}

pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let n = u.nrows();
    spectral_norm(&(u.adjoint() * u - CMatrix::identity(n, n)))
}

/// Replaces `u` by its unitary polar factor when the defect exceeds
/// [`CLEANUP_THRESHOLD`]. Returns whether it did.
fn polar_cleanup(u: &mut CMatrix) -> bool {
    let defect = unitarity_defect(u);
    if defect <= CLEANUP_THRESHOLD {
        return false;
    }
    log::info!("unitarity defect {defect:e} above {CLEANUP_THRESHOLD:e}; replacing by polar factor");
    let svd = u.clone().svd(true, true);
    *u = svd.u.expect("requested") * svd.v_t.expect("requested");
    true
}

/// Eigendecompositions of `H(u)` keyed by the bit pattern of `u`.
///
/// Safe for concurrent use; inserts are idempotent.
#[derive(Debug, Default)]
pub struct ExpCache {
    map: RwLock<HashMap<Vec<u64>, Arc<Eigen>>>,
}

impl ExpCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eigen(&self, system: &FormLinearSystem, u: &[f64]) -> Arc<Eigen> {
        let key: Vec<u64> = u.iter().map(|v| v.to_bits()).collect();
        if let Some(e) = self.map.read().expect("cache lock").get(&key) {
            return Arc::clone(e);
        }
        let eig = Arc::new(system.assemble_unchecked(u).eigen());
        let mut map = self.map.write().expect("cache lock");
        if map.len() >= CACHE_CAPACITY {
            map.clear();
        }
        Arc::clone(map.entry(key).or_insert(eig))
    }
}

/// A piecewise-smooth Hermitian generator on `[0, T]`.
pub trait Generator {
    fn dim(&self) -> usize;
    /// `0 = t₁ < … < t_{ν+1} = T`.
    fn breakpoints(&self) -> &[f64];
    /// Generator of segment `j` at `t` (extended continuously to the segment ends).
    fn at(&self, segment: usize, t: f64) -> HermitianMatrix;
    /// Eigendecomposition of segment `j` when the generator is constant there.
    fn constant_eigen(&self, _segment: usize) -> Option<Arc<Eigen>> {
        None
    }
    /// `[H(t₂), H(t₁)]` on segment `j`.
    fn commutator(&self, segment: usize, t2: f64, t1: f64) -> CMatrix {
        let (a, b) = (self.at(segment, t1), self.at(segment, t2));
        matmul(b.matrix(), a.matrix()) - matmul(a.matrix(), b.matrix())
    }
}

/// `H(u(t))` for a system and a schedule.
pub struct ScheduleGenerator<'a> {
    pub system: &'a FormLinearSystem,
    pub schedule: &'a ControlSchedule,
    pub cache: &'a ExpCache,
    /// `[h0, Hᵢ]` for each `i`, then `[Hᵢ, Hⱼ]` for `i < j`; built on first use.
    commutators: OnceLock<Vec<CMatrix>>,
}

impl<'a> ScheduleGenerator<'a> {
    pub fn new(system: &'a FormLinearSystem, schedule: &'a ControlSchedule, cache: &'a ExpCache) -> Result<Self> {
        if system.channels() != schedule.channels() {
            return Err(Error::ChannelMismatch { system: system.channels(), schedule: schedule.channels() });
        }
        Ok(Self { system, schedule, cache, commutators: OnceLock::new() })
    }

    fn commutator_basis(&self) -> &[CMatrix] {
        self.commutators.get_or_init(|| {
            let h0 = self.system.h0().matrix();
            let hs = self.system.interactions();
            let mut out: Vec<CMatrix> = hs.iter().map(|h| h0 * h.matrix() - h.matrix() * h0).collect();
            for i in 0..hs.len() {
                for j in i + 1..hs.len() {
                    out.push(hs[i].matrix() * hs[j].matrix() - hs[j].matrix() * hs[i].matrix());
                }
            }
            out
        })
    }
}

impl Generator for ScheduleGenerator<'_> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn breakpoints(&self) -> &[f64] {
        self.schedule.breakpoints()
    }

    fn at(&self, segment: usize, t: f64) -> HermitianMatrix {
        self.system.assemble_unchecked(&self.schedule.eval_on(segment, t))
    }

    fn constant_eigen(&self, segment: usize) -> Option<Arc<Eigen>> {
        let u = self.schedule.segments()[segment].constant_value()?;
        Some(self.cache.eigen(self.system, &u))
    }

    /// Form-linearity: with `a = u(t₁)`, `b = u(t₂)`,
    /// `[H(b), H(a)] = Σᵢ(aᵢ − bᵢ)[h0, Hᵢ] + Σ_{i<j}(bᵢaⱼ − bⱼaᵢ)[Hᵢ, Hⱼ]`.
    fn commutator(&self, segment: usize, t2: f64, t1: f64) -> CMatrix {
        let a = self.schedule.eval_on(segment, t1);
        let b = self.schedule.eval_on(segment, t2);
        let basis = self.commutator_basis();
        let p = a.len();
        let n = self.system.dim();
        let mut out = CMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..p {
            let w = a[i] - b[i];
            if w != 0.0 {
                out.zip_apply(&basis[k], |o, c| *o += c * Complex64::new(w, 0.0));
            }
            k += 1;
        }
        for i in 0..p {
            for j in i + 1..p {
                let w = b[i] * a[j] - b[j] * a[i];
                if w != 0.0 {
                    out.zip_apply(&basis[k], |o, c| *o += c * Complex64::new(w, 0.0));
                }
                k += 1;
            }
        }
        out
    }
}

/// One Magnus-4 step `exp(−iK)` with
/// `K = h/2·(H₁ + H₂) − i·√3/12·h²·[H₂, H₁]` at the Gauss nodes.
fn magnus_step(gen: &impl Generator, segment: usize, t: f64, h: f64) -> (CMatrix, f64) {
    let offset = 3f64.sqrt() / 6.0;
    let (t1, t2) = (t + (0.5 - offset) * h, t + (0.5 + offset) * h);
    let h1 = gen.at(segment, t1);
    let h2 = gen.at(segment, t2);
    let commutator = gen.commutator(segment, t2, t1);
    let k = (h1.matrix() + h2.matrix()) * Complex64::new(0.5 * h, 0.0) - commutator * Complex64::new(0.0, 3f64.sqrt() / 12.0 * h * h);
    let k_norm = k.norm();
    (expm_minus_i(&k), k_norm)
}

/// Rounding level of a step-doubling difference: `16·n·ε·(1 + ‖K‖_F)`.
fn roundoff_floor(n: usize, k_norm: f64) -> f64 {
    16.0 * n as f64 * f64::EPSILON * (1.0 + k_norm)
}

/// Adaptive Magnus propagation across `[a, b]` inside one segment.
fn magnus_interval(
    gen: &impl Generator,
    segment: usize,
    a: f64,
    b: f64,
    tol: f64,
    total: f64,
    meta: &mut PropagatorMeta,
) -> Result<CMatrix> {
    let n = gen.dim();
    let mut u = CMatrix::identity(n, n);
    let mut t = a;
    let mut h = (b - a).min(0.05);
    while t < b {
        let last = t + h >= b;
        if last {
            h = b - t;
        }
        let (full, k_norm) = magnus_step(gen, segment, t, h);
        let half = matmul(&magnus_step(gen, segment, t + 0.5 * h, 0.5 * h).0, &magnus_step(gen, segment, t, 0.5 * h).0);
        let err = (&full - &half).norm();
        if !err.is_finite() {
            return Err(Error::InvalidArgument(format!("generator is not finite near t = {t}")));
        }
        let allowed = (tol * h / total).max(roundoff_floor(n, k_norm));
        if err <= allowed {
            u = matmul(&half, &u);
            t = if last { b } else { t + h };
            meta.magnus_steps += 1;
        } else {
            meta.rejected_steps += 1;
        }
        let factor = if err == 0.0 { 2.0 } else { (0.9 * (allowed / err).powf(0.2)).clamp(0.2, 2.0) };
        h *= factor;
        if h < STEP_FLOOR && t < b && b - t > STEP_FLOOR {
            return Err(Error::StepUnderflow { t, floor: STEP_FLOOR, tol });
        }
    }
    Ok(u)
}

/// `U(t, s)` of a generic piecewise generator. Constant segments are exact;
/// the rest use adaptive Magnus with global tolerance `tol`.
pub fn propagate_generator(gen: &impl Generator, t: f64, s: f64, tol: f64) -> Result<Propagator> {
    let bps = gen.breakpoints();
    let horizon = *bps.last().expect("breakpoints");
    for time in [t, s] {
        if !(0.0..=horizon).contains(&time) {
            return Err(Error::OutsideHorizon { t: time, horizon });
        }
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    if t == s {
        return Ok(Propagator::identity(gen.dim(), t));
    }
    if t < s {
        return Ok(propagate_generator(gen, s, t, tol)?.adjoint());
    }
    let n = gen.dim();
    let mut meta = PropagatorMeta { integrator: "magnus4".into(), tol: Some(tol), ..Default::default() };
    let mut u = CMatrix::identity(n, n);
    let total = t - s;
    for j in 0..bps.len() - 1 {
        let a = bps[j].max(s);
        let b = bps[j + 1].min(t);
        if b <= a {
            continue;
        }
        let step = match gen.constant_eigen(j) {
            Some(eig) => {
                meta.exact_segments += 1;
                eig.unitary_exp(b - a)
            }
            None => magnus_interval(gen, j, a, b, tol, total, &mut meta)?,
        };
        u = matmul(&step, &u);
    }
    if meta.magnus_steps == 0 {
        meta.integrator = "exact".into();
        meta.tol = None;
    }
    meta.cleaned = polar_cleanup(&mut u);
    Ok(Propagator { matrix: u, t, s, meta })
}

/// Propagation of one system with a shared exponential cache.
pub struct Evolver<'a> {
    system: &'a FormLinearSystem,
    cache: ExpCache,
}

impl<'a> Evolver<'a> {
    pub fn new(system: &'a FormLinearSystem) -> Self {
        Self { system, cache: ExpCache::new() }
    }

    pub fn system(&self) -> &FormLinearSystem {
        self.system
    }

    pub fn cache(&self) -> &ExpCache {
        &self.cache
    }

    /// Exact product of segment exponentials for a piecewise-constant schedule.
    pub fn pc(&self, schedule: &ControlSchedule, t: f64, s: f64) -> Result<Propagator> {
        if !schedule.is_piecewise_constant() {
            return Err(Error::WrongClass { expected: "piecewise_constant", found: schedule.class().name() });
        }
        propagate_generator(&ScheduleGenerator::new(self.system, schedule, &self.cache)?, t, s, DEFAULT_TOL)
    }

    /// Any schedule class; constant segments are exact.
    pub fn smooth(&self, schedule: &ControlSchedule, t: f64, s: f64, tol: f64) -> Result<Propagator> {
        propagate_generator(&ScheduleGenerator::new(self.system, schedule, &self.cache)?, t, s, tol)
    }

    /// Dispatches on the schedule class.
    pub fn propagate(&self, schedule: &ControlSchedule, t: f64, s: f64, tol: f64) -> Result<Propagator> {
        if schedule.is_piecewise_constant() {
            self.pc(schedule, t, s)
        } else {
            self.smooth(schedule, t, s, tol)
        }
    }

    pub fn evolve_state(&self, schedule: &ControlSchedule, phi: &CVector, t: f64, s: f64, tol: f64) -> Result<CVector> {
        if phi.len() != self.system.dim() {
            return Err(Error::DimensionMismatch { expected: self.system.dim(), found: phi.len() });
        }
        self.propagate(schedule, t, s, tol)?.apply(phi)
    }
}

pub fn propagate_pc(system: &FormLinearSystem, schedule: &ControlSchedule, t: f64, s: f64) -> Result<Propagator> {
    Evolver::new(system).pc(schedule, t, s)
}

pub fn propagate_smooth(system: &FormLinearSystem, schedule: &ControlSchedule, t: f64, s: f64, tol: f64) -> Result<Propagator> {
    Evolver::new(system).smooth(schedule, t, s, tol)
}

pub fn evolve_state(
    system: &FormLinearSystem,
    schedule: &ControlSchedule,
    phi: &CVector,
    t: f64,
    s: f64,
) -> Result<CVector> {
    Evolver::new(system).evolve_state(schedule, phi, t, s, DEFAULT_TOL)
}

/// `e^{itH₀}·U(t, s)·e^{−isH₀}`.
pub fn interaction_picture(u: &Propagator, system: &FormLinearSystem) -> Result<Propagator> {
    if u.dim() != system.dim() {
        return Err(Error::DimensionMismatch { expected: system.dim(), found: u.dim() });
    }
    let eig = system.h0().eigen();
    let left = eig.unitary_exp(-u.t());
    let right = eig.unitary_exp(u.s());
    let mut meta = u.meta.clone();
    meta.integrator = format!("{}+interaction", meta.integrator);
    Ok(Propagator { matrix: left * u.matrix() * right, t: u.t(), s: u.s(), meta })
}
