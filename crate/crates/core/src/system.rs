//! Form-linear systems `H(u) = H₀ + Σ uᵢHᵢ` over a control box, and the
//! constants `m`, `c`, `M`, `L` that drive every stability bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::{ChannelFn, ControlSchedule, RampKind};
use crate::error::{Error, Result};
use crate::linops::{CMatrix, HermitianMatrix, ScaleFrame};
use crate::quad::adaptive_simpson;
use crate::Complex64;

/// Slack on control-box membership.
pub const BOX_TOLERANCE: f64 = 1e-9;
/// Vertex enumeration limit (2²⁰ vertices).
pub const MAX_VERTEX_CHANNELS: usize = 20;
/// Halton points added to the vertices by [`FormLinearSystem::default_samples`].
pub const DEFAULT_HALTON_POINTS: usize = 64;
/// Absolute quadrature tolerance for `M`.
pub const M_TOLERANCE: f64 = 1e-8;

/// Generator name and parameters a system was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTag {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct FormLinearSystem {
    h0: HermitianMatrix,
    interactions: Vec<HermitianMatrix>,
    control_box: Vec<(f64, f64)>,
    m: f64,
    frame: ScaleFrame,
    /// `A₀^{-½}HᵢA₀^{-½}`, the interactions read in `B(H⁺, H⁻)`.
    weighted: Vec<HermitianMatrix>,
    model: Option<ModelTag>,
}

#[derive(Serialize, Deserialize)]
struct SystemJson {
    dim: usize,
    h0: HermitianMatrix,
    interactions: Vec<HermitianMatrix>,
    control_box: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelTag>,
}

impl Serialize for FormLinearSystem {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SystemJson {
            dim: self.dim(),
            h0: self.h0.clone(),
            interactions: self.interactions.clone(),
            control_box: self.control_box.iter().map(|&(a, b)| [a, b]).collect(),
            model: self.model.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FormLinearSystem {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = SystemJson::deserialize(deserializer)?;
        if raw.h0.dim() != raw.dim {
            return Err(serde::de::Error::custom(format!("dim is {} but h0 is {}x{0}", raw.dim, raw.h0.dim())));
        }
        let control_box = raw.control_box.iter().map(|b| (b[0], b[1])).collect();
        let system = FormLinearSystem::new(raw.h0, raw.interactions, control_box).map_err(serde::de::Error::custom)?;
        Ok(system.with_model(raw.model))
    }
}

fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const PRIMES: [usize; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];

impl FormLinearSystem {
    /// Assembles a system and sets `m` to [`lower_bound`](Self::lower_bound).
    pub fn new(h0: HermitianMatrix, interactions: Vec<HermitianMatrix>, control_box: Vec<(f64, f64)>) -> Result<Self> {
        let n = h0.dim();
        if n == 0 {
            return Err(Error::InvalidArgument("system dimension must be positive".into()));
        }
        if let Some(h) = interactions.iter().find(|h| h.dim() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: h.dim() });
        }
        if control_box.len() != interactions.len() {
            return Err(Error::InvalidControlBox(format!(
                "{} interval(s) for {} interaction(s)",
                control_box.len(),
                interactions.len()
            )));
        }
        for (i, &(lo, hi)) in control_box.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidControlBox(format!("channel {i}: [{lo}, {hi}] is not a bounded interval")));
            }
        }
        let h0_min = h0.min_eigenvalue();
        if h0_min < -1e-10 * h0.spectral_norm().max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: h0_min });
        }
        let m = lower_bound_of(&h0, &interactions, &control_box)?;
        let frame = ScaleFrame::new(&h0, m)?;
        let weighted = interactions.iter().map(|h| HermitianMatrix::symmetrized(frame.to_plus_minus(h.matrix()))).collect();
        Ok(Self { h0, interactions, control_box, m, frame, weighted, model: None })
    }

    pub fn with_model(mut self, model: Option<ModelTag>) -> Self {
        self.model = model;
        self
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn channels(&self) -> usize {
        self.interactions.len()
    }

    pub fn h0(&self) -> &HermitianMatrix {
        &self.h0
    }

    pub fn interactions(&self) -> &[HermitianMatrix] {
        &self.interactions
    }

    pub fn control_box(&self) -> &[(f64, f64)] {
        &self.control_box
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn frame(&self) -> &ScaleFrame {
        &self.frame
    }

    pub fn model(&self) -> Option<&ModelTag> {
        self.model.as_ref()
    }

    /// `A₀^{-½}HᵢA₀^{-½}`.
    pub fn weighted_interaction(&self, i: usize) -> &HermitianMatrix {
        &self.weighted[i]
    }

    /// `‖Hᵢ‖₊,₋` for every channel.
    pub fn interaction_norms(&self) -> Vec<f64> {
        self.weighted.iter().map(HermitianMatrix::spectral_norm).collect()
    }

    pub fn check_control(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.channels() {
            return Err(Error::ChannelMismatch { system: self.channels(), schedule: u.len() });
        }
        for (index, (&value, &(lo, hi))) in u.iter().zip(&self.control_box).enumerate() {
            if !(value >= lo - BOX_TOLERANCE && value <= hi + BOX_TOLERANCE) {
                return Err(Error::OutsideControlBox { index, value, lo, hi });
            }
        }
        Ok(())
    }

    /// Checks channel count and that every value of `schedule` lies in the box.
    pub fn check_schedule(&self, schedule: &ControlSchedule) -> Result<()> {
        if schedule.channels() != self.channels() {
            return Err(Error::ChannelMismatch { system: self.channels(), schedule: schedule.channels() });
        }
        for (index, (&(vlo, vhi), &(lo, hi))) in schedule.channel_ranges().iter().zip(&self.control_box).enumerate() {
            for value in [vlo, vhi] {
                if !(value >= lo - BOX_TOLERANCE && value <= hi + BOX_TOLERANCE) {
                    return Err(Error::OutsideControlBox { index, value, lo, hi });
                }
            }
        }
        Ok(())
    }

    /// `H₀ + Σ uᵢHᵢ`.
    pub fn assemble(&self, u: &[f64]) -> Result<HermitianMatrix> {
        self.check_control(u)?;
        Ok(self.assemble_unchecked(u))
    }

    pub(crate) fn assemble_unchecked(&self, u: &[f64]) -> HermitianMatrix {
        combine(&self.h0, &self.interactions, u)
    }

    /// `Σ vᵢHᵢ` without the drift.
    pub fn interaction_sum(&self, v: &[f64]) -> HermitianMatrix {
        combine(&HermitianMatrix::zeros(self.dim()), &self.interactions, v)
    }

    /// `A(u) = H(u) + (m + 1)·I`.
    pub fn generator(&self, u: &[f64]) -> Result<HermitianMatrix> {
        Ok(self.assemble(u)?.shifted(self.m + 1.0))
    }

    /// `‖H(u) − H(v)‖₊,₋ = ‖Σ (uᵢ − vᵢ)·A₀^{-½}HᵢA₀^{-½}‖`.
    pub fn difference_norm(&self, u: &[f64], v: &[f64]) -> f64 {
        let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        self.weighted_combination_norm(&d)
    }

    /// `‖Σ vᵢ·A₀^{-½}HᵢA₀^{-½}‖`.
    pub fn weighted_combination_norm(&self, v: &[f64]) -> f64 {
        let nonzero: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
        match nonzero.as_slice() {
            [] => 0.0,
            [i] => v[*i].abs() * self.weighted[*i].spectral_norm(),
            _ => combine(&HermitianMatrix::zeros(self.dim()), &self.weighted, v).spectral_norm(),
        }
    }

    /// All `2ᵖ` vertices of the control box (a single point for `p = 0`).
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        box_vertices(&self.control_box)
    }

    /// `max(0, −min over vertices of λ_min(H(u)))`.
    pub fn lower_bound(&self) -> Result<f64> {
        lower_bound_of(&self.h0, &self.interactions, &self.control_box)
    }

    /// Box vertices followed by [`DEFAULT_HALTON_POINTS`] Halton points.
    pub fn default_samples(&self) -> Result<Vec<Vec<f64>>> {
        self.samples_with_halton(DEFAULT_HALTON_POINTS)
    }

    pub fn samples_with_halton(&self, points: usize) -> Result<Vec<Vec<f64>>> {
        let mut samples = self.vertices()?;
        let p = self.channels();
        for k in 1..=points {
            samples.push(
                self.control_box
                    .iter()
                    .enumerate()
                    .map(|(i, &(lo, hi))| lo + (hi - lo) * halton(k, PRIMES[i.min(PRIMES.len() - 1)]))
                    .collect(),
            );
        }
        if p == 0 {
            samples.truncate(1);
        }
        Ok(samples)
    }

    /// `c(u) = max(‖T‖, ‖T⁻¹‖)` for `T = A(u)^{½}A₀^{-½}`, computed as
    /// `√max(λ_max(W), 1/λ_min(W))` with `W = A₀^{-½}A(u)A₀^{-½} = T†T`.
    pub fn equivalence_at(&self, u: &[f64]) -> Result<f64> {
        let a = self.generator(u)?;
        let w = HermitianMatrix::symmetrized(self.frame.to_plus_minus(a.matrix()));
        let eig = w.eigen();
        if eig.min() <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: eig.min() });
        }
        Ok(eig.max().max(1.0 / eig.min()).sqrt().max(1.0))
    }

    /// Maximum of [`equivalence_at`](Self::equivalence_at) over `samples`.
    ///
    /// `c(u)²` is convex in `u` (largest eigenvalue of an affine family, and the
    /// reciprocal of a positive concave one), so once the samples include all
    /// box vertices the value is valid for the whole box.
    pub fn equivalence_constant(&self, samples: &[Vec<f64>]) -> Result<f64> {
        for u in samples {
            self.check_control(u)?;
        }
        let values = samples.par_iter().map(|u| self.equivalence_at(u)).collect::<Result<Vec<f64>>>()?;
        Ok(values.into_iter().fold(1.0, f64::max))
    }

    /// `Σⱼ ∫_{Iⱼ} ‖Σᵢ fᵢ′(t)Hᵢ‖₊,₋ dt`.
    ///
    /// Segments whose moving channels share one monotone ramp profile are
    /// exact: the integrand factors as `s′(x)/w · ‖Σ ΔᵢHᵢ‖₊,₋`.
    pub fn derivative_bound_m(&self, schedule: &ControlSchedule) -> Result<f64> {
        if schedule.channels() != self.channels() {
            return Err(Error::ChannelMismatch { system: self.channels(), schedule: schedule.channels() });
        }
        if schedule.is_piecewise_constant() {
            return Ok(0.0);
        }
        let horizon = schedule.horizon();
        let mut total = 0.0;
        for (j, seg) in schedule.segments().iter().enumerate() {
            if seg.is_constant() {
                continue;
            }
            let (a, b) = schedule.segment_bounds(j);
            if let Some(jumps) = shared_ramp_jumps(&seg.channels) {
                total += self.weighted_combination_norm(&jumps);
                continue;
            }
            let integrand = |t: f64| {
                let d = schedule.derivative_on(j, t);
                if d.iter().any(|v| !v.is_finite()) {
                    f64::NAN
                } else {
                    self.weighted_combination_norm(&d)
                }
            };
            total += adaptive_simpson(integrand, a, b, M_TOLERANCE * (b - a) / horizon)?;
        }
        Ok(total)
    }

    /// Constants covering `schedules`: `m` of the system, `c` over `samples`
    /// (the default sample set when `None`), and `M` the largest derivative
    /// budget among the schedules.
    pub fn constants_for(&self, schedules: &[&ControlSchedule], samples: Option<&[Vec<f64>]>) -> Result<SystemConstants> {
        let default;
        let samples = match samples {
            Some(s) => s,
            None => {
                default = self.default_samples()?;
                &default
            }
        };
        let c = self.equivalence_constant(samples)?;
        let mut m_budget = 0.0f64;
        for s in schedules {
            self.check_schedule(s)?;
            m_budget = m_budget.max(self.derivative_bound_m(s)?);
        }
        Ok(SystemConstants::new(self.m, c, m_budget))
    }
}

fn combine(base: &HermitianMatrix, terms: &[HermitianMatrix], u: &[f64]) -> HermitianMatrix {
    let mut acc: CMatrix = base.matrix().clone();
    for (h, &ui) in terms.iter().zip(u) {
        if ui != 0.0 {
            acc.zip_apply(h.matrix(), |a, b| *a += b * Complex64::new(ui, 0.0));
        }
    }
    HermitianMatrix::symmetrized(acc)
}

fn shared_ramp_jumps(channels: &[ChannelFn]) -> Option<Vec<f64>> {
    let mut kind: Option<RampKind> = None;
    let mut jumps = Vec::with_capacity(channels.len());
    for c in channels {
        match c {
            ChannelFn::Const { .. } => jumps.push(0.0),
            ChannelFn::Ramp(r) => {
                if kind.is_some_and(|k| k != r.ramp) {
                    return None;
                }
                kind = Some(r.ramp);
                jumps.push(r.to - r.from);
            }
            _ => return None,
        }
    }
    Some(jumps)
}

fn box_vertices(control_box: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    let p = control_box.len();
    if p > MAX_VERTEX_CHANNELS {
        return Err(Error::TooManyVertices { channels: p });
    }
    let mut out = Vec::with_capacity(1 << p);
    for mask in 0usize..(1 << p) {
        let v: Vec<f64> = control_box
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| if mask >> i & 1 == 1 { hi } else { lo })
            .collect();
        // degenerate intervals repeat vertices
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

fn lower_bound_of(h0: &HermitianMatrix, interactions: &[HermitianMatrix], control_box: &[(f64, f64)]) -> Result<f64> {
    let vertices = box_vertices(control_box)?;
    let least = vertices
        .par_iter()
        .map(|u| combine(h0, interactions, u).min_eigenvalue())
        .reduce(|| f64::INFINITY, f64::min);
    Ok((-least).max(0.0))
}

/// `L = c¹¹·exp(4c²M)`.
pub fn stability_constant_l(c: f64, m_budget: f64) -> f64 {
    c.powi(11) * (4.0 * c * c * m_budget).exp()
}

/// `c⁸·exp(2c²M)`, the constant reached for a single C² segment.
pub fn stability_constant_l_c2(c: f64, m_budget: f64) -> f64 {
    c.powi(8) * (2.0 * c * c * m_budget).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    pub m: f64,
    pub c: f64,
    #[serde(rename = "M")]
    pub m_budget: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L_c2")]
    pub l_c2: f64,
}

impl SystemConstants {
    pub fn new(m: f64, c: f64, m_budget: f64) -> Self {
        Self { m, c, m_budget, l: stability_constant_l(c, m_budget), l_c2: stability_constant_l_c2(c, m_budget) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{mollify, MollifierParams, PolyParams, Segment};
    use crate::controls::ScheduleClass;
    use crate::linops::weighted_norm;
    use crate::linops::Side;
    use crate::CVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oscillator(n: usize) -> FormLinearSystem {
        let h0 = HermitianMatrix::from_real_diagonal(&(0..n).map(|k| k as f64 + 0.5).collect::<Vec<_>>());
        let x = HermitianMatrix::from_real_fn(n, |i, j| if j == i + 1 { ((i + 1) as f64 / 2.0).sqrt() } else { 0.0 });
        FormLinearSystem::new(h0, vec![x], vec![(-1.0, 1.0)]).unwrap()
    }

    fn scalar(lo: f64, hi: f64) -> FormLinearSystem {
        FormLinearSystem::new(HermitianMatrix::zeros(1), vec![HermitianMatrix::identity(1)], vec![(lo, hi)]).unwrap()
    }

    #[test]
    fn assemble_examples() {
        let s = oscillator(4);
        assert_eq!(s.assemble(&[0.0]).unwrap(), *s.h0());
        let h = s.assemble(&[0.5]).unwrap();
        assert!((h.matrix()[(0, 1)].re - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        let id = FormLinearSystem::new(s.h0().clone(), vec![HermitianMatrix::identity(4)], vec![(0.0, 3.0)]).unwrap();
        assert_eq!(id.assemble(&[2.0]).unwrap(), s.h0().shifted(2.0));
        match s.assemble(&[1.5]) {
            Err(Error::OutsideControlBox { index: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(s.assemble(&[1.0 + 5e-10]).is_ok());
    }

    #[test]
    fn lower_bound_examples() {
        let free = FormLinearSystem::new(HermitianMatrix::from_real_diagonal(&[0.0, 1.0]), vec![], vec![]).unwrap();
        assert_eq!(free.lower_bound().unwrap(), 0.0);
        let s = FormLinearSystem::new(
            HermitianMatrix::from_real_diagonal(&[0.0, 1.0]),
            vec![HermitianMatrix::from_real_diagonal(&[1.0, 0.0])],
            vec![(-2.0, 2.0)],
        )
        .unwrap();
        assert_eq!(s.lower_bound().unwrap(), 2.0);
        assert_eq!(s.m(), 2.0);
        let many = vec![(0.0, 1.0); 21];
        assert!(matches!(box_vertices(&many), Err(Error::TooManyVertices { channels: 21 })));
    }

    #[test]
    fn lower_bound_dominates_sampling() {
        let s = oscillator(32);
        let m = s.lower_bound().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sampled = 0.0f64;
        for _ in 0..10_000 {
            let u = rng.random_range(-1.0..=1.0);
            sampled = sampled.max(-s.assemble_unchecked(&[u]).min_eigenvalue());
        }
        assert!(m >= sampled - 1e-12, "{m} < {sampled}");
    }

    #[test]
    fn equivalence_examples() {
        let s = oscillator(6);
        assert_eq!(s.equivalence_constant(&[vec![0.0]]).unwrap(), 1.0);
        let sc = scalar(0.0, 3.0);
        assert!((sc.equivalence_constant(&[vec![0.0], vec![3.0]]).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn equivalence_refines_stably() {
        let s = oscillator(32);
        let c64 = s.equivalence_constant(&s.samples_with_halton(64).unwrap()).unwrap();
        let c256 = s.equivalence_constant(&s.samples_with_halton(256).unwrap()).unwrap();
        assert!(c64 >= 1.0);
        assert!(c256 >= c64);
        assert!((c256 - c64) / c64 < 0.05);
        // vertices already carry the box maximum
        let vertices = s.equivalence_constant(&s.vertices().unwrap()).unwrap();
        assert!((vertices - c256).abs() < 1e-12);
    }

    #[test]
    fn equivalence_via_t_matches_eigen_route() {
        let s = oscillator(8);
        let u = [0.7];
        let a = s.generator(&u).unwrap();
        let t = crate::linops::hermitian_power(&a, 0.5).unwrap().matrix() * s.frame().a0_inv_sqrt().matrix();
        let t_inv = t.clone().try_inverse().unwrap();
        let direct = crate::linops::spectral_norm(&t).max(crate::linops::spectral_norm(&t_inv));
        assert!((direct - s.equivalence_at(&u).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn stability_constant_examples() {
        assert_eq!(stability_constant_l(1.0, 0.0), 1.0);
        assert!((stability_constant_l(1.0, 0.7) - (2.8f64).exp()).abs() < 1e-12);
        assert_eq!(stability_constant_l(2.0, 0.0), 2048.0);
        let k = SystemConstants::new(0.0, 1.3, 0.2);
        assert!((k.l / (1.3f64.powi(11) * (4.0 * 1.69 * 0.2f64).exp()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_bound_examples() {
        let s = oscillator(8);
        let pc = ControlSchedule::piecewise_constant(vec![0.0, 1.0, 2.0], &[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(s.derivative_bound_m(&pc).unwrap(), 0.0);
        // f(t) = t on [0, 1]: integrand is the constant ‖H₁‖₊,₋
        let lin = ControlSchedule::new(
            vec![0.0, 1.0],
            vec![Segment { channels: vec![ChannelFn::Poly(PolyParams { coeffs: vec![0.0, 1.0] })] }],
            ScheduleClass::SmoothCinf,
        )
        .unwrap();
        let k = s.interaction_norms()[0];
        assert!((s.derivative_bound_m(&lin).unwrap() - k).abs() < 1e-12);
    }

    #[test]
    fn derivative_bound_matches_dense_midpoint() {
        let s = oscillator(8);
        let pc = ControlSchedule::piecewise_constant(vec![0.0, 1.0, 2.0], &[vec![-0.4], vec![0.9]]).unwrap();
        for ramp in [RampKind::Quintic, RampKind::Bump] {
            let m = mollify(&pc, &MollifierParams::new(0.2, ramp)).unwrap();
            let got = s.derivative_bound_m(&m).unwrap();
            // midpoint rule over [0, T] with the full spectral norm at every node
            let n = 100_000;
            let h = 2.0 / n as f64;
            let oracle: f64 = (0..n)
                .map(|k| {
                    let t = (k as f64 + 0.5) * h;
                    let d = m.derivative(t).unwrap()[0];
                    let v = s.interactions()[0].scaled(d);
                    crate::linops::norm_plus_minus(v.matrix(), s.frame()).unwrap()
                })
                .sum::<f64>()
                * h;
            assert!(((got - oracle) / oracle).abs() < 1e-6, "{ramp:?}: {got} vs {oracle}");
        }
    }

    #[test]
    fn json_round_trip() {
        let s = oscillator(5).with_model(Some(ModelTag { name: "oscillator".into(), params: serde_json::json!({"coupling": 1.0}) }));
        let text = serde_json::to_string(&s).unwrap();
        let back: FormLinearSystem = serde_json::from_str(&text).unwrap();
        assert_eq!(back.h0(), s.h0());
        assert_eq!(back.interactions(), s.interactions());
        assert_eq!(back.control_box(), s.control_box());
        assert_eq!(back.model(), s.model());
        assert!(serde_json::from_str::<FormLinearSystem>(r#"{"dim": 2, "h0": 3}"#).is_err());
    }

    #[test]
    fn schedule_box_checks() {
        let s = oscillator(4);
        let ok = ControlSchedule::piecewise_constant(vec![0.0, 1.0], &[vec![0.9]]).unwrap();
        assert!(s.check_schedule(&ok).is_ok());
        let bad = ControlSchedule::piecewise_constant(vec![0.0, 1.0], &[vec![1.1]]).unwrap();
        assert!(matches!(s.check_schedule(&bad), Err(Error::OutsideControlBox { .. })));
        let two = ControlSchedule::piecewise_constant(vec![0.0, 1.0], &[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(s.check_schedule(&two), Err(Error::ChannelMismatch { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn two_channel(seed: u64) -> FormLinearSystem {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let h0 = HermitianMatrix::from_real_diagonal(&(0..n).map(|k| (k * k) as f64).collect::<Vec<_>>());
            let mut rand_h = || {
                let m = CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                HermitianMatrix::symmetrized(m)
            };
            let hs = vec![rand_h(), rand_h()];
            FormLinearSystem::new(h0, hs, vec![(-1.0, 1.0), (-0.5, 2.0)]).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn assemble_is_affine(seed in any::<u64>(), a in 0.0f64..1.0, u0 in -1.0f64..1.0, u1 in -0.5f64..2.0, v0 in -1.0f64..1.0, v1 in -0.5f64..2.0) {
                let s = two_channel(seed);
                let mix = [a * u0 + (1.0 - a) * v0, a * u1 + (1.0 - a) * v1];
                let lhs = s.assemble(&mix).unwrap();
                let rhs = s.assemble(&[u0, u1]).unwrap().scaled(a).add(&s.assemble(&[v0, v1]).unwrap().scaled(1.0 - a));
                prop_assert!((lhs.matrix() - rhs.matrix()).camax() < 1e-12);
            }

            #[test]
            fn equivalence_is_monotone_under_inclusion(seed in any::<u64>(), k in 1usize..20, extra in 1usize..20) {
                let s = two_channel(seed);
                let all = s.samples_with_halton(k + extra).unwrap();
                let vertices = s.vertices().unwrap().len();
                let small = s.equivalence_constant(&all[vertices..vertices + k]).unwrap();
                let large = s.equivalence_constant(&all).unwrap();
                prop_assert!(large >= small);
            }

            #[test]
            fn sampled_norm_equivalence(seed in any::<u64>(), u0 in -1.0f64..1.0, u1 in -0.5f64..2.0) {
                let s = two_channel(seed);
                let c = s.equivalence_constant(&[vec![u0, u1]]).unwrap();
                let a = s.generator(&[u0, u1]).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
                for _ in 0..10 {
                    let phi = CVector::from_fn(s.dim(), |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                    let at_u = weighted_norm(&phi, &a, Side::Plus).unwrap();
                    let reference = s.frame().norm_plus(&phi);
                    prop_assert!(at_u / c <= reference * (1.0 + 1e-12));
                    prop_assert!(reference <= c * at_u * (1.0 + 1e-12));
                }
            }

            #[test]
            fn vertex_c_covers_the_box(seed in any::<u64>(), u0 in -1.0f64..1.0, u1 in -0.5f64..2.0) {
                let s = two_channel(seed);
                let c = s.equivalence_constant(&s.vertices().unwrap()).unwrap();
                prop_assert!(s.equivalence_at(&[u0, u1]).unwrap() <= c * (1.0 + 1e-12));
            }
        }
    }
}
