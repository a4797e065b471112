//! Browser bindings. Each export returns a JSON string for the page to plot;
//! the plain functions in [`demo`] carry the logic and are what native tests call.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Two-step control `before → after` on `[0, 2]`, mollified at each `δ`.
#[wasm_bindgen]
pub fn mollification_curve(before: f64, after: f64, deltas: &[f64], ramp: &str) -> Result<String, JsValue> {
    js(demo::mollification_curve(before, after, deltas, ramp))
}

/// Level populations from the ground state under a constant control.
#[wasm_bindgen]
pub fn populations(kind: &str, dim: usize, amplitude: f64, horizon: f64, frames: usize) -> Result<String, JsValue> {
    js(demo::populations(kind, dim, amplitude, horizon, frames))
}

/// Tail norms `‖PₙH₁Pₙ − H₁‖₊,₋` and the same for `A₀`, for `n = 1..dim`.
#[wasm_bindgen]
pub fn compactness(kind: &str, dim: usize) -> Result<String, JsValue> {
    js(demo::compactness(kind, dim))
}
