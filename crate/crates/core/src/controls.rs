//! Piecewise-smooth control schedules, their L¹ geometry, and mollification of
//! piecewise-constant controls into smooth ones.
//!
//! A schedule on `[0, T]` is split by breakpoints `0 = t₁ < … < t_{ν+1} = T`
//! into segments; on each segment every channel is a smooth function of time.
//! Evaluation is right-continuous at interior breakpoints and left-continuous
//! at `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, gauss_legendre_64_unit};

/// Breakpoints closer than this are treated as one when schedules are merged.
pub const BREAKPOINT_COINCIDENCE: f64 = 1e-12;
/// Absolute quadrature tolerance for L¹ distances.
pub const L1_TOLERANCE: f64 = 1e-9;
/// Maximal value jump accepted at a breakpoint of a continuous class.
pub const CONTINUITY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleClass {
    PiecewiseConstant,
    #[serde(rename = "piecewise_C2")]
    PiecewiseC2,
    #[serde(rename = "smooth_C2")]
    SmoothC2,
    #[serde(rename = "smooth_Cinf")]
    SmoothCinf,
}

impl ScheduleClass {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleClass::PiecewiseConstant => "piecewise_constant",
            ScheduleClass::PiecewiseC2 => "piecewise_C2",
            ScheduleClass::SmoothC2 => "smooth_C2",
            ScheduleClass::SmoothCinf => "smooth_Cinf",
        }
    }

    /// Whether values must agree across breakpoints.
    pub fn is_continuous(self) -> bool {
        matches!(self, ScheduleClass::SmoothC2 | ScheduleClass::SmoothCinf)
    }
}

/// Monotone transition profiles `s: [0, 1] → [0, 1]` with `s(0) = 0`, `s(1) = 1`
/// and `s(1 - x) = 1 - s(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    /// `6x⁵ − 15x⁴ + 10x³`, C² with vanishing first and second derivative at both ends.
    Quintic,
    /// Normalized integral of `exp(−1/(x(1−x)))`, C^∞.
    Bump,
}

fn bump(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        (-1.0 / (x * (1.0 - x))).exp()
    }
}

/// `∫₀ˣ bump` for `x ∈ [0, ½]` by 64-point Gauss–Legendre on `[0, x]`.
fn bump_integral(x: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_64_unit();
    x * nodes.iter().zip(weights).map(|(t, w)| w * bump(x * t)).sum::<f64>()
}

fn bump_normalizer() -> f64 {
    static Z: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
    *Z.get_or_init(|| 2.0 * bump_integral(0.5))
}

impl RampKind {
    pub fn value(self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            RampKind::Quintic => x * x * x * (10.0 + x * (-15.0 + 6.0 * x)),
            RampKind::Bump => {
                if x <= 0.5 {
                    bump_integral(x) / bump_normalizer()
                } else {
                    1.0 - bump_integral(1.0 - x) / bump_normalizer()
                }
            }
        }
    }

    /// `ds/dx`.
    pub fn slope(self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            RampKind::Quintic => 30.0 * x * x * (1.0 - x) * (1.0 - x),
            RampKind::Bump => bump(x) / bump_normalizer(),
        }
    }

    /// `d²s/dx²`.
    pub fn curvature(self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            RampKind::Quintic => 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
            RampKind::Bump => {
                if x <= 0.0 || x >= 1.0 {
                    0.0
                } else {
                    let q = x * (1.0 - x);
                    bump(x) * (1.0 - 2.0 * x) / (q * q) / bump_normalizer()
                }
            }
        }
    }

    /// `∫₀¹ |s(x) − 1[x ≥ ½]| dx`, the L¹ cost of smoothing a unit jump over a
    /// unit-width window.
    pub fn step_deviation(self) -> f64 {
        match self {
            RampKind::Quintic => 5.0 / 32.0,
            RampKind::Bump => {
                // 2∫₀^½ s = 2∫₀^½ (½ − x) bump(x) dx / Z after integrating by parts
                let (nodes, weights) = gauss_legendre_64_unit();
                let inner: f64 = nodes
                    .iter()
                    .zip(weights)
                    .map(|(t, w)| {
                        let x = 0.5 * t;
                        w * (0.5 - x) * bump(x)
                    })
                    .sum::<f64>()
                    * 0.5;
                2.0 * inner / bump_normalizer()
            }
        }
    }

    pub fn class(self) -> ScheduleClass {
        match self {
            RampKind::Quintic => ScheduleClass::SmoothC2,
            RampKind::Bump => ScheduleClass::SmoothCinf,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampParams {
    pub from: f64,
    pub to: f64,
    pub ramp: RampKind,
}

/// Polynomial in absolute time, `Σ coeffs[k]·tᵏ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyParams {
    pub coeffs: Vec<f64>,
}

/// `offset + amplitude·sin(omega·t + phase)` in absolute time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineParams {
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

/// One channel of one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum ChannelFn {
    Const { value: f64 },
    /// Monotone ramp spanning the whole owning segment.
    Ramp(RampParams),
    Poly(PolyParams),
    Sine(SineParams),
}

impl ChannelFn {
    /// Value, first and second time derivative at `t` on the segment `[a, b]`.
    pub fn jet(&self, t: f64, a: f64, b: f64) -> (f64, f64, f64) {
        match self {
            ChannelFn::Const { value } => (*value, 0.0, 0.0),
            ChannelFn::Ramp(r) => {
                let w = b - a;
                let x = (t - a) / w;
                let jump = r.to - r.from;
                (
                    r.from + jump * r.ramp.value(x),
                    jump * r.ramp.slope(x) / w,
                    jump * r.ramp.curvature(x) / (w * w),
                )
            }
            ChannelFn::Poly(p) => {
                let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for &c in p.coeffs.iter().rev() {
                    d2 = d2 * t + 2.0 * d1;
                    d1 = d1 * t + v;
                    v = v * t + c;
                }
                (v, d1, d2)
            }
            ChannelFn::Sine(s) => {
                let arg = s.omega * t + s.phase;
                (
                    s.offset + s.amplitude * arg.sin(),
                    s.amplitude * s.omega * arg.cos(),
                    -s.amplitude * s.omega * s.omega * arg.sin(),
                )
            }
        }
    }

    pub fn value(&self, t: f64, a: f64, b: f64) -> f64 {
        self.jet(t, a, b).0
    }

    pub fn derivative(&self, t: f64, a: f64, b: f64) -> f64 {
        self.jet(t, a, b).1
    }

    fn is_finite(&self) -> bool {
        match self {
            ChannelFn::Const { value } => value.is_finite(),
            ChannelFn::Ramp(r) => r.from.is_finite() && r.to.is_finite(),
            ChannelFn::Poly(p) => p.coeffs.iter().all(|c| c.is_finite()),
            ChannelFn::Sine(s) => [s.amplitude, s.omega, s.phase, s.offset].iter().all(|v| v.is_finite()),
        }
    }

    fn kind(&self) -> SegmentKind {
        match self {
            ChannelFn::Const { .. } => SegmentKind::Const,
            ChannelFn::Ramp(_) => SegmentKind::Ramp,
            ChannelFn::Poly(_) => SegmentKind::Poly,
            ChannelFn::Sine(_) => SegmentKind::Sine,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub channels: Vec<ChannelFn>,
}

impl Segment {
    pub fn constant(values: &[f64]) -> Self {
        Self { channels: values.iter().map(|&value| ChannelFn::Const { value }).collect() }
    }

    /// The value vector when every channel is constant.
    pub fn constant_value(&self) -> Option<Vec<f64>> {
        self.channels
            .iter()
            .map(|c| match c {
                ChannelFn::Const { value } => Some(*value),
                _ => None,
            })
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        self.channels.iter().all(|c| matches!(c, ChannelFn::Const { .. }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SegmentKind {
    Const,
    Ramp,
    Poly,
    Sine,
    Mixed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SegmentJson {
    Const {
        #[serde(rename = "const")]
        values: Vec<f64>,
    },
    Kind {
        kind: SegmentKind,
        params: Vec<serde_json::Value>,
    },
}

impl From<&Segment> for SegmentJson {
    fn from(seg: &Segment) -> Self {
        if let Some(values) = seg.constant_value() {
            return SegmentJson::Const { values };
        }
        let first = seg.channels[0].kind();
        let uniform = seg.channels.iter().all(|c| c.kind() == first);
        let kind = if uniform { first } else { SegmentKind::Mixed };
        let params = seg
            .channels
            .iter()
            .map(|c| match (kind, c) {
                (SegmentKind::Ramp, ChannelFn::Ramp(r)) => serde_json::to_value(r),
                (SegmentKind::Poly, ChannelFn::Poly(p)) => serde_json::to_value(p),
                (SegmentKind::Sine, ChannelFn::Sine(s)) => serde_json::to_value(s),
                _ => serde_json::to_value(c),
            })
            .map(|v| v.expect("segment parameters serialize"))
            .collect();
        SegmentJson::Kind { kind, params }
    }
}

impl TryFrom<SegmentJson> for Segment {
    type Error = Error;

    fn try_from(raw: SegmentJson) -> Result<Self> {
        match raw {
            SegmentJson::Const { values } => Ok(Segment::constant(&values)),
            SegmentJson::Kind { kind, params } => {
                let channels = params
                    .into_iter()
                    .map(|p| {
                        Ok(match kind {
                            SegmentKind::Const => ChannelFn::Const { value: serde_json::from_value(p)? },
                            SegmentKind::Ramp => ChannelFn::Ramp(serde_json::from_value(p)?),
                            SegmentKind::Poly => ChannelFn::Poly(serde_json::from_value(p)?),
                            SegmentKind::Sine => ChannelFn::Sine(serde_json::from_value(p)?),
                            SegmentKind::Mixed => serde_json::from_value(p)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Segment { channels })
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ScheduleJson {
    #[serde(rename = "T")]
    horizon: f64,
    channels: usize,
    class: ScheduleClass,
    breakpoints: Vec<f64>,
    segments: Vec<SegmentJson>,
}

/// Piecewise-smooth vector-valued control on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleJson", into = "ScheduleJson")]
pub struct ControlSchedule {
    channels: usize,
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
    class: ScheduleClass,
}

impl From<ControlSchedule> for ScheduleJson {
    fn from(s: ControlSchedule) -> Self {
        ScheduleJson {
            horizon: s.horizon(),
            channels: s.channels,
            class: s.class,
            segments: s.segments.iter().map(SegmentJson::from).collect(),
            breakpoints: s.breakpoints,
        }
    }
}

impl TryFrom<ScheduleJson> for ControlSchedule {
    type Error = Error;

    fn try_from(raw: ScheduleJson) -> Result<Self> {
        let segments = raw.segments.into_iter().map(Segment::try_from).collect::<Result<Vec<_>>>()?;
        let schedule = ControlSchedule::new(raw.breakpoints, segments, raw.class)?;
        if schedule.channels != raw.channels {
            return Err(Error::InvalidSchedule(format!(
                "declared {} channels, segments carry {}",
                raw.channels, schedule.channels
            )));
        }
        if (schedule.horizon() - raw.horizon).abs() > BREAKPOINT_COINCIDENCE * raw.horizon.abs().max(1.0) {
            return Err(Error::InvalidSchedule(format!(
                "declared T = {} but the last breakpoint is {}",
                raw.horizon,
                schedule.horizon()
            )));
        }
        Ok(schedule)
    }
}

impl ControlSchedule {
    pub fn new(breakpoints: Vec<f64>, segments: Vec<Segment>, class: ScheduleClass) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidSchedule("need at least the breakpoints 0 and T".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidSchedule(format!("first breakpoint must be 0, found {}", breakpoints[0])));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule("breakpoints must be finite and strictly increasing".into()));
        }
        if segments.len() != breakpoints.len() - 1 {
            return Err(Error::InvalidSchedule(format!(
                "{} breakpoints delimit {} segments, found {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                segments.len()
            )));
        }
        let channels = segments[0].channels.len();
        if channels == 0 {
            return Err(Error::InvalidSchedule("a schedule needs at least one channel".into()));
        }
        for (j, seg) in segments.iter().enumerate() {
            if seg.channels.len() != channels {
                return Err(Error::InvalidSchedule(format!(
                    "segment {j} has {} channels, expected {channels}",
                    seg.channels.len()
                )));
            }
            if !seg.channels.iter().all(ChannelFn::is_finite) {
                return Err(Error::InvalidSchedule(format!("segment {j} has non-finite parameters")));
            }
            if class == ScheduleClass::PiecewiseConstant && !seg.is_constant() {
                return Err(Error::InvalidSchedule(format!(
                    "segment {j} is not constant in a piecewise_constant schedule"
                )));
            }
        }
        let schedule = Self { channels, breakpoints, segments, class };
        if class.is_continuous() {
            for j in 1..schedule.segments.len() {
                let t = schedule.breakpoints[j];
                let left = schedule.eval_on(j - 1, t);
                let right = schedule.eval_on(j, t);
                if let Some(i) = (0..channels).find(|&i| (left[i] - right[i]).abs() > CONTINUITY_TOLERANCE) {
                    return Err(Error::InvalidSchedule(format!(
                        "{} schedule jumps from {} to {} at t = {t} on channel {i}",
                        class.name(),
                        left[i],
                        right[i]
                    )));
                }
            }
        }
        Ok(schedule)
    }

    /// Piecewise-constant schedule with `values[j]` on `[breakpoints[j], breakpoints[j+1])`.
    pub fn piecewise_constant(breakpoints: Vec<f64>, values: &[Vec<f64>]) -> Result<Self> {
        let segments = values.iter().map(|v| Segment::constant(v)).collect();
        Self::new(breakpoints, segments, ScheduleClass::PiecewiseConstant)
    }

    /// Piecewise-constant schedule from consecutive segment durations.
    pub fn from_durations(durations: &[f64], values: &[Vec<f64>]) -> Result<Self> {
        let mut breakpoints = Vec::with_capacity(durations.len() + 1);
        let mut t = 0.0;
        breakpoints.push(t);
        for &d in durations {
            t += d;
            breakpoints.push(t);
        }
        Self::piecewise_constant(breakpoints, values)
    }

    pub fn constant(horizon: f64, value: Vec<f64>) -> Result<Self> {
        Self::piecewise_constant(vec![0.0, horizon], &[value])
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().expect("schedules have breakpoints")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn class(&self) -> ScheduleClass {
        self.class
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_piecewise_constant(&self) -> bool {
        self.class == ScheduleClass::PiecewiseConstant
    }

    /// `[tⱼ, tⱼ₊₁]` of segment `j`.
    pub fn segment_bounds(&self, j: usize) -> (f64, f64) {
        (self.breakpoints[j], self.breakpoints[j + 1])
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::OutsideHorizon { t, horizon });
        }
        Ok(())
    }

    /// Index of the segment owning `t`: the right one at interior breakpoints,
    /// the last one at `T`.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        let k = self.breakpoints.partition_point(|&b| b <= t);
        Ok(k.saturating_sub(1).min(self.segments.len() - 1))
    }

    /// Index of the segment owning the open interval around `t` from the left.
    pub fn segment_index_left(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        let k = self.breakpoints.partition_point(|&b| b < t);
        Ok(k.saturating_sub(1).min(self.segments.len() - 1))
    }

    /// Whether `t` lies within `tol` of a breakpoint (including `0` and `T`).
    pub fn is_breakpoint(&self, t: f64, tol: f64) -> bool {
        let k = self.breakpoints.partition_point(|&b| b < t);
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter_map(|i| self.breakpoints.get(i))
            .any(|b| (b - t).abs() <= tol)
    }

    /// Values of segment `j`'s functions at `t`, extended past the segment ends.
    pub fn eval_on(&self, j: usize, t: f64) -> Vec<f64> {
        let (a, b) = self.segment_bounds(j);
        self.segments[j].channels.iter().map(|c| c.value(t, a, b)).collect()
    }

    /// First derivatives of segment `j`'s functions at `t`.
    pub fn derivative_on(&self, j: usize, t: f64) -> Vec<f64> {
        let (a, b) = self.segment_bounds(j);
        self.segments[j].channels.iter().map(|c| c.derivative(t, a, b)).collect()
    }

    pub fn channel_on(&self, j: usize, channel: usize, t: f64) -> f64 {
        let (a, b) = self.segment_bounds(j);
        self.segments[j].channels[channel].value(t, a, b)
    }

    pub fn channel_derivative_on(&self, j: usize, channel: usize, t: f64) -> f64 {
        let (a, b) = self.segment_bounds(j);
        self.segments[j].channels[channel].derivative(t, a, b)
    }

    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval_on(self.segment_index(t)?, t))
    }

    /// Derivative of the owning segment's functions (right-sided at breakpoints).
    pub fn derivative(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.derivative_on(self.segment_index(t)?, t))
    }

    /// Per-channel `[min, max]` of the schedule's values. Exact for constant,
    /// ramp and sine pieces; polynomial pieces are sampled at 1025 points.
    pub fn channel_ranges(&self) -> Vec<(f64, f64)> {
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); self.channels];
        let mut push = |i: usize, v: f64| {
            ranges[i].0 = ranges[i].0.min(v);
            ranges[i].1 = ranges[i].1.max(v);
        };
        for (j, seg) in self.segments.iter().enumerate() {
            let (a, b) = self.segment_bounds(j);
            for (i, c) in seg.channels.iter().enumerate() {
                match c {
                    ChannelFn::Const { value } => push(i, *value),
                    ChannelFn::Ramp(r) => {
                        push(i, r.from);
                        push(i, r.to);
                    }
                    ChannelFn::Sine(s) => {
                        push(i, c.value(a, a, b));
                        push(i, c.value(b, a, b));
                        if s.omega != 0.0 {
                            // interior extrema where omega t + phase = pi/2 + k pi
                            let (lo, hi) = if s.omega > 0.0 {
                                (s.omega * a + s.phase, s.omega * b + s.phase)
                            } else {
                                (s.omega * b + s.phase, s.omega * a + s.phase)
                            };
                            let half_pi = std::f64::consts::FRAC_PI_2;
                            let pi = std::f64::consts::PI;
                            let mut k = ((lo - half_pi) / pi).ceil();
                            while half_pi + k * pi <= hi {
                                let arg = half_pi + k * pi;
                                push(i, s.offset + s.amplitude * arg.sin());
                                k += 1.0;
                            }
                        }
                    }
                    ChannelFn::Poly(_) => {
                        for k in 0..=1024 {
                            let t = a + (b - a) * k as f64 / 1024.0;
                            push(i, c.value(t, a, b));
                        }
                    }
                }
            }
        }
        ranges
    }

    /// Per-channel `∫₀ᵀ |uᵢ|`.
    pub fn l1_norms(&self) -> Result<Vec<f64>> {
        let mut norms = vec![0.0; self.channels];
        for (j, seg) in self.segments.iter().enumerate() {
            let (a, b) = self.segment_bounds(j);
            for (i, c) in seg.channels.iter().enumerate() {
                norms[i] += match c {
                    ChannelFn::Const { value } => value.abs() * (b - a),
                    _ => adaptive_simpson(|t| c.value(t, a, b).abs(), a, b, L1_TOLERANCE * (b - a))?,
                };
            }
        }
        Ok(norms)
    }
}

/// Sorted union of two breakpoint lists, merging points closer than
/// [`BREAKPOINT_COINCIDENCE`].
pub fn merge_breakpoints(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        match merged.last() {
            Some(&last) if (t - last).abs() <= BREAKPOINT_COINCIDENCE * last.abs().max(1.0) => {}
            _ => merged.push(t),
        }
    }
    merged
}

fn check_compatible(s1: &ControlSchedule, s2: &ControlSchedule) -> Result<()> {
    let (t1, t2) = (s1.horizon(), s2.horizon());
    if (t1 - t2).abs() > BREAKPOINT_COINCIDENCE * t1.max(1.0) {
        return Err(Error::HorizonMismatch(t1, t2));
    }
    if s1.channels() != s2.channels() {
        return Err(Error::ChannelMismatch { system: s1.channels(), schedule: s2.channels() });
    }
    Ok(())
}

/// Pieces `(a, b, j1, j2)` of the merged partition of two schedules, with the
/// segment index of each schedule owning the open piece.
pub fn merged_pieces(s1: &ControlSchedule, s2: &ControlSchedule) -> Result<Vec<(f64, f64, usize, usize)>> {
    check_compatible(s1, s2)?;
    let merged = merge_breakpoints(s1.breakpoints(), s2.breakpoints());
    let horizon = s1.horizon().min(s2.horizon());
    merged
        .windows(2)
        .map(|w| {
            let mid = (0.5 * (w[0] + w[1])).min(horizon);
            Ok((w[0], w[1], s1.segment_index(mid)?, s2.segment_index(mid)?))
        })
        .collect()
}

/// Per-channel `∫₀ᵀ |s1ᵢ − s2ᵢ|`, split at the union of breakpoints.
pub fn l1_distance(s1: &ControlSchedule, s2: &ControlSchedule) -> Result<Vec<f64>> {
    l1_distance_on(s1, s2, 0.0, s1.horizon())
}

/// Per-channel `∫_from^to |s1ᵢ − s2ᵢ|` for `0 ≤ from ≤ to ≤ T`.
pub fn l1_distance_on(s1: &ControlSchedule, s2: &ControlSchedule, from: f64, to: f64) -> Result<Vec<f64>> {
    let pieces = merged_pieces(s1, s2)?;
    let horizon = s1.horizon();
    if !(0.0 <= from && from <= to && to <= horizon) {
        return Err(Error::InvalidArgument(format!("window [{from}, {to}] is not inside [0, {horizon}]")));
    }
    let mut out = vec![0.0; s1.channels()];
    let width = (to - from).max(f64::MIN_POSITIVE);
    for &(a, b, j1, j2) in &pieces {
        let (a, b) = (a.max(from), b.min(to));
        if b <= a {
            continue;
        }
        let seg1 = &s1.segments()[j1];
        let seg2 = &s2.segments()[j2];
        for (i, acc) in out.iter_mut().enumerate() {
            *acc += match (&seg1.channels[i], &seg2.channels[i]) {
                (ChannelFn::Const { value: v1 }, ChannelFn::Const { value: v2 }) => (v1 - v2).abs() * (b - a),
                _ => adaptive_simpson(
                    |t| (s1.channel_on(j1, i, t) - s2.channel_on(j2, i, t)).abs(),
                    a,
                    b,
                    L1_TOLERANCE * (b - a) / width,
                )?,
            };
        }
    }
    Ok(out)
}

/// Per-channel `Σⱼ ∫_{Iⱼ} |uᵢ′|`. Monotone ramps contribute their jump exactly.
pub fn derivative_l1(schedule: &ControlSchedule) -> Result<Vec<f64>> {
    let mut out = vec![0.0; schedule.channels()];
    if schedule.is_piecewise_constant() {
        return Ok(out);
    }
    for (j, seg) in schedule.segments().iter().enumerate() {
        let (a, b) = schedule.segment_bounds(j);
        for (i, c) in seg.channels.iter().enumerate() {
            out[i] += match c {
                ChannelFn::Const { .. } => 0.0,
                ChannelFn::Ramp(r) => (r.to - r.from).abs(),
                _ => adaptive_simpson(|t| c.derivative(t, a, b).abs(), a, b, 1e-10 * (b - a))?,
            };
        }
    }
    Ok(out)
}

fn require_piecewise_constant(schedule: &ControlSchedule) -> Result<()> {
    if !schedule.is_piecewise_constant() {
        return Err(Error::WrongClass { expected: "piecewise_constant", found: schedule.class().name() });
    }
    Ok(())
}

/// Per-channel sum of `|jump|` over interior breakpoints.
pub fn total_variation(pc: &ControlSchedule) -> Result<Vec<f64>> {
    require_piecewise_constant(pc)?;
    let mut out = vec![0.0; pc.channels()];
    for w in pc.segments().windows(2) {
        let left = w[0].constant_value().expect("piecewise constant");
        let right = w[1].constant_value().expect("piecewise constant");
        for (acc, (l, r)) in out.iter_mut().zip(left.iter().zip(&right)) {
            *acc += (r - l).abs();
        }
    }
    Ok(out)
}

/// Half-width `δ` and profile of the ramps replacing jumps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierParams {
    pub delta: f64,
    pub ramp: RampKind,
}

impl MollifierParams {
    pub fn new(delta: f64, ramp: RampKind) -> Self {
        Self { delta, ramp }
    }

    /// `δ` must stay below half the shortest segment of `schedule`.
    pub fn validate(&self, schedule: &ControlSchedule) -> Result<()> {
        let shortest = schedule.breakpoints().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let limit = 0.5 * shortest;
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidArgument(format!("mollifier half-width {} must be positive", self.delta)));
        }
        if self.delta >= limit {
            return Err(Error::DeltaTooLarge { delta: self.delta, limit });
        }
        Ok(())
    }
}

/// Replaces each jump of a piecewise-constant schedule at `tⱼ` by a monotone
/// ramp on `[tⱼ − δ, tⱼ + δ]`; the schedule is unchanged elsewhere.
///
/// Each unit of jump costs `2δ·step_deviation` in L¹ distance, and the
/// derivative L¹ norm equals the total variation of the source.
pub fn mollify(pc: &ControlSchedule, params: &MollifierParams) -> Result<ControlSchedule> {
    require_piecewise_constant(pc)?;
    params.validate(pc)?;
    let delta = params.delta;
    let values: Vec<Vec<f64>> = pc.segments().iter().map(|s| s.constant_value().expect("piecewise constant")).collect();
    let mut breakpoints = vec![0.0];
    let mut segments = Vec::new();
    let mut current = values[0].clone();
    for j in 1..values.len() {
        if values[j] == current {
            continue;
        }
        let t = pc.breakpoints()[j];
        breakpoints.push(t - delta);
        segments.push(Segment::constant(&current));
        breakpoints.push(t + delta);
        segments.push(Segment {
            channels: current
                .iter()
                .zip(&values[j])
                .map(|(&from, &to)| ChannelFn::Ramp(RampParams { from, to, ramp: params.ramp }))
                .collect(),
        });
        current = values[j].clone();
    }
    breakpoints.push(pc.horizon());
    segments.push(Segment::constant(&current));
    ControlSchedule::new(breakpoints, segments, params.ramp.class())
}

/// Random piecewise-constant schedule on `[0, horizon]` with `segments`
/// pieces of random positive length (each at least `horizon/(4·segments)`)
/// and values uniform in `control_box`.
pub fn random_piecewise_constant(
    rng: &mut impl rand::Rng,
    control_box: &[(f64, f64)],
    horizon: f64,
    segments: usize,
) -> Result<ControlSchedule> {
    if segments == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("need at least one segment and a positive horizon".into()));
    }
    let weights: Vec<f64> = (0..segments).map(|_| rng.random_range(0.25..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut breakpoints = vec![0.0];
    let mut acc = 0.0;
    for w in &weights[..segments - 1] {
        acc += w;
        breakpoints.push(horizon * acc / total);
    }
    breakpoints.push(horizon);
    let values: Vec<Vec<f64>> = (0..segments)
        .map(|_| control_box.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect())
        .collect();
    ControlSchedule::piecewise_constant(breakpoints, &values)
}
