//! Concrete finite truncations: the dipole-driven harmonic oscillator, the
//! particle in a box with dipole coupling, and seeded random systems.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{CMatrix, HermitianMatrix};
use crate::system::{FormLinearSystem, ModelTag};
use crate::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Oscillator,
    #[serde(rename = "box")]
    ParticleInBox,
    Random,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oscillator" => Ok(ModelKind::Oscillator),
            "box" => Ok(ModelKind::ParticleInBox),
            "random" => Ok(ModelKind::Random),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?} (oscillator, box, random)"))),
        }
    }
}

fn default_channels() -> usize {
    1
}

fn default_coupling() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dim: usize) -> Self {
        Self { kind, dim, channels: 1, coupling: 1.0, seed: None }
    }

    pub fn build(&self) -> Result<FormLinearSystem> {
        match self.kind {
            ModelKind::Oscillator => oscillator_with_channels(self.dim, self.coupling, self.channels),
            ModelKind::ParticleInBox => {
                if self.channels != 1 {
                    return Err(Error::InvalidArgument("the box model has exactly one channel".into()));
                }
                particle_in_box(self.dim, self.coupling)
            }
            ModelKind::Random => {
                let seed = self.seed.ok_or_else(|| Error::InvalidArgument("the random model needs a seed".into()))?;
                random_system(self.dim, self.channels, seed)
            }
        }
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("model dimension must be at least 2, got {n}")));
    }
    Ok(())
}

/// Position operator in the first `n` number states, `X_{k,k+1} = √((k+1)/2)`.
pub fn position_matrix(n: usize) -> HermitianMatrix {
    HermitianMatrix::from_real_fn(n, |i, j| if j == i + 1 { ((i + 1) as f64 / 2.0).sqrt() } else { 0.0 })
}

/// Compression of `X²` onto the first `n` number states.
pub fn position_squared_matrix(n: usize) -> HermitianMatrix {
    HermitianMatrix::from_real_fn(n, |i, j| {
        if i == j {
            i as f64 + 0.5
        } else if j == i + 2 {
            (((i + 1) * (i + 2)) as f64).sqrt() / 2.0
        } else {
            0.0
        }
    })
}

/// `h0 = diag(k + ½)`, `H₁ = coupling·X`, box `[−1, 1]`.
pub fn harmonic_oscillator(n: usize, coupling: f64) -> Result<FormLinearSystem> {
    oscillator_with_channels(n, coupling, 1)
}

/// One or two channels; the second is `coupling·X²` on `[0, 1]`, which keeps
/// the family bounded below by the one-channel bound.
pub fn oscillator_with_channels(n: usize, coupling: f64, channels: usize) -> Result<FormLinearSystem> {
    check_dim(n)?;
    let h0 = HermitianMatrix::from_real_diagonal(&(0..n).map(|k| k as f64 + 0.5).collect::<Vec<_>>());
    let (interactions, control_box) = match channels {
        1 => (vec![position_matrix(n).scaled(coupling)], vec![(-1.0, 1.0)]),
        2 => (
            vec![position_matrix(n).scaled(coupling), position_squared_matrix(n).scaled(coupling)],
            vec![(-1.0, 1.0), (0.0, 1.0)],
        ),
        p => return Err(Error::InvalidArgument(format!("the oscillator model supports 1 or 2 channels, got {p}"))),
    };
    Ok(FormLinearSystem::new(h0, interactions, control_box)?.with_model(Some(ModelTag {
        name: "oscillator".into(),
        params: serde_json::json!({"dim": n, "coupling": coupling, "channels": channels}),
    })))
}

/// Dipole matrix of the unit box, `X_kk = ½`, `X_kl = −8kl/(π²(k²−l²)²)` for odd `k − l`.
pub fn box_dipole_matrix(n: usize) -> HermitianMatrix {
    HermitianMatrix::from_real_fn(n, |i, j| {
        let (k, l) = ((i + 1) as f64, (j + 1) as f64);
        if i == j {
            0.5
        } else if (i + j) % 2 == 1 {
            let d = k * k - l * l;
            -8.0 * k * l / (PI * PI * d * d)
        } else {
            0.0
        }
    })
}

/// `h0 = diag(k²π²)` for `k = 1..N`, `H₁ = coupling·X`, box `[−1, 1]`.
pub fn particle_in_box(n: usize, coupling: f64) -> Result<FormLinearSystem> {
    check_dim(n)?;
    let h0 = HermitianMatrix::from_real_diagonal(&(1..=n).map(|k| (k * k) as f64 * PI * PI).collect::<Vec<_>>());
    Ok(FormLinearSystem::new(h0, vec![box_dipole_matrix(n).scaled(coupling)], vec![(-1.0, 1.0)])?.with_model(Some(ModelTag {
        name: "box".into(),
        params: serde_json::json!({"dim": n, "coupling": coupling}),
    })))
}

/// Bandwidth of the random cores.
const RANDOM_BAND: usize = 4;

/// `λ_k = k^{3/2}(1 + 0.1·ξ_k)`, `ξ_k ∈ [0, 1)`, sorted; each
/// `Hᵢ = D^{¼}RᵢD^{¼}` with `D = h0 + 1` and `Rᵢ` banded Hermitian with
/// entries damped by `e^{−|k−l|}`. Each `Hᵢ` is scaled to
/// `‖Hᵢ‖₊,₋ = 1/(2p)` in the frame `h0 + 1`, so every box vertex keeps
/// `h0 + ΣuᵢHᵢ ≥ ½(h0 − 1) ≥ 0` and `m = 0`.
pub fn random_system(n: usize, p: usize, seed: u64) -> Result<FormLinearSystem> {
    check_dim(n)?;
    if p == 0 {
        return Err(Error::InvalidArgument("the random model needs at least one channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels: Vec<f64> = (1..=n).map(|k| (k as f64).powf(1.5) * (1.0 + 0.1 * rng.random::<f64>())).collect();
    levels.sort_by(f64::total_cmp);
    let h0 = HermitianMatrix::from_real_diagonal(&levels);
    let quarter: Vec<f64> = levels.iter().map(|l| (l + 1.0).powf(0.25)).collect();
    let inv_half: Vec<f64> = levels.iter().map(|l| (l + 1.0).powf(-0.5)).collect();
    let mut interactions = Vec::with_capacity(p);
    for _ in 0..p {
        let mut core = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..(i + RANDOM_BAND + 1).min(n) {
                let damp = (-((j - i) as f64)).exp();
                let z = if i == j {
                    Complex64::new(rng.random_range(-1.0..1.0), 0.0)
                } else {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                };
                core[(i, j)] = z * damp;
                core[(j, i)] = (z * damp).conj();
            }
        }
        let tempered = CMatrix::from_fn(n, n, |i, j| core[(i, j)] * (quarter[i] * quarter[j]));
        let weighted = HermitianMatrix::symmetrized(CMatrix::from_fn(n, n, |i, j| tempered[(i, j)] * (inv_half[i] * inv_half[j])));
        let scale = 0.5 / p as f64 / weighted.spectral_norm();
        interactions.push(HermitianMatrix::symmetrized(tempered * Complex64::new(scale, 0.0)));
    }
    Ok(FormLinearSystem::new(h0, interactions, vec![(-1.0, 1.0); p])?.with_model(Some(ModelTag {
        name: "random".into(),
        params: serde_json::json!({"dim": n, "channels": p, "seed": seed}),
    })))
}
