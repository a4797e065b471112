use formctrl::controls::{derivative_l1, l1_distance, mollify, total_variation, ControlSchedule, MollifierParams, RampKind};
use formctrl::galerkin::{basis_state, compactness_profile, tail_norm_profile};
use formctrl::models::{ModelKind, ModelSpec};
use formctrl::propagate::Evolver;
use formctrl::system::FormLinearSystem;
use serde::Serialize;

const SAMPLES: usize = 401;
/// Largest dimension the page may request.
pub const MAX_DIM: usize = 64;

#[derive(Serialize)]
struct Curve {
    delta: f64,
    l1_distance: f64,
    derivative_l1: f64,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct MollificationView {
    t: Vec<f64>,
    source: Vec<f64>,
    total_variation: f64,
    curves: Vec<Curve>,
}

fn to_json(v: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn ramp(name: &str) -> Result<RampKind, String> {
    match name {
        "quintic" => Ok(RampKind::Quintic),
        "bump" => Ok(RampKind::Bump),
        other => Err(format!("unknown ramp {other:?}")),
    }
}

fn sample(schedule: &ControlSchedule, t: &[f64]) -> Result<Vec<f64>, String> {
    t.iter().map(|&x| schedule.evaluate(x).map(|v| v[0]).map_err(|e| e.to_string())).collect()
}

pub fn mollification_curve(before: f64, after: f64, deltas: &[f64], ramp_name: &str) -> Result<String, String> {
    let kind = ramp(ramp_name)?;
    let pc = ControlSchedule::piecewise_constant(vec![0.0, 1.0, 2.0], &[vec![before], vec![after]]).map_err(|e| e.to_string())?;
    let t: Vec<f64> = (0..SAMPLES).map(|k| 2.0 * k as f64 / (SAMPLES - 1) as f64).collect();
    let curves = deltas
        .iter()
        .map(|&delta| {
            let smooth = mollify(&pc, &MollifierParams::new(delta, kind)).map_err(|e| e.to_string())?;
            Ok(Curve {
                delta,
                l1_distance: l1_distance(&smooth, &pc).map_err(|e| e.to_string())?[0],
                derivative_l1: derivative_l1(&smooth).map_err(|e| e.to_string())?[0],
                values: sample(&smooth, &t)?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let view = MollificationView {
        source: sample(&pc, &t)?,
        total_variation: total_variation(&pc).map_err(|e| e.to_string())?[0],
        t,
        curves,
    };
    to_json(&view)
}

fn model(kind: &str, dim: usize) -> Result<FormLinearSystem, String> {
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(format!("dimension must lie in 2..={MAX_DIM}"));
    }
    let kind: ModelKind = kind.parse().map_err(|e: formctrl::Error| e.to_string())?;
    let mut spec = ModelSpec::new(kind, dim);
    if kind == ModelKind::Random {
        spec.seed = Some(1);
    }
    spec.build().map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct PopulationView {
    t: Vec<f64>,
    amplitude: f64,
    /// `populations[k][j]`: weight of level `j` at time `t[k]`.
    populations: Vec<Vec<f64>>,
}

/// The amplitude is clamped into the model's control box.
pub fn populations(kind: &str, dim: usize, amplitude: f64, horizon: f64, frames: usize) -> Result<String, String> {
    let system = model(kind, dim)?;
    if !(horizon > 0.0) || frames == 0 || frames > 2000 {
        return Err("need a positive horizon and 1..=2000 frames".into());
    }
    let (lo, hi) = system.control_box()[0];
    let amplitude = amplitude.clamp(lo, hi);
    let schedule = ControlSchedule::constant(horizon, vec![amplitude]).map_err(|e| e.to_string())?;
    let evolver = Evolver::new(&system);
    let t: Vec<f64> = (0..=frames).map(|k| horizon * k as f64 / frames as f64).collect();
    let phi = basis_state(dim, 0);
    let populations = t
        .iter()
        .map(|&time| {
            let u = evolver.pc(&schedule, time, 0.0).map_err(|e| e.to_string())?;
            let state = u.apply(&phi).map_err(|e| e.to_string())?;
            Ok(state.iter().map(|z| z.norm_sqr()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, String>>()?;
    to_json(&PopulationView { t, amplitude, populations })
}

#[derive(Serialize)]
struct CompactnessView {
    ranks: Vec<usize>,
    interaction: Vec<f64>,
    reference: Vec<f64>,
}

pub fn compactness(kind: &str, dim: usize) -> Result<String, String> {
    let system = model(kind, dim)?;
    let ranks: Vec<usize> = (1..dim).collect();
    let interaction = compactness_profile(&system, 0, &ranks).map_err(|e| e.to_string())?;
    let reference = tail_norm_profile(&system, system.frame().a0().matrix(), &ranks).map_err(|e| e.to_string())?;
    to_json(&CompactnessView { ranks, interaction, reference })
}
