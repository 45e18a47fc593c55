//! Gaussian random fields by the randomization method.
//!
//! The covariance `k(r) = σ² exp(-π r² / (4ℓ²))` equals `σ² exp(-r²/(2s²))`
//! with `s² = 2ℓ²/π`. Its spectral density, normalized by `σ²`, is the
//! density of `Normal(0, I/s²)`, so every wave-vector component is drawn
//! i.i.d. with standard deviation `sqrt(π/2)/ℓ`. The field
//! `sqrt(σ²/M) Σ [Z₁ cos(k·x) + Z₂ sin(k·x)]` then has exactly the target
//! covariance in expectation, and is Gaussian in the limit of many modes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fem::{Discretization, FemError, SpdSolver};
use crate::mesh::Mesh;

pub const DEFAULT_GRF_MODES: usize = 512;
/// Words of keystream reserved per mode; far more than any draw consumes.
const WORDS_PER_MODE: u128 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum GrfError {
    #[error("invalid GRF parameters: {0}")]
    InvalidSpec(String),
    #[error("mesh has no interior nodes")]
    NoInterior,
    #[error(transparent)]
    Fem(#[from] FemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    pub variance: f64,
    pub length_scale: f64,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    pub seed: u64,
}

fn default_modes() -> usize {
    DEFAULT_GRF_MODES
}

impl GrfSpec {
    pub fn new(variance: f64, length_scale: f64, seed: u64) -> Self {
        GrfSpec { variance, length_scale, n_modes: DEFAULT_GRF_MODES, seed }
    }

    pub fn validate(&self) -> Result<(), GrfError> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(GrfError::InvalidSpec(format!("variance must be positive, got {}", self.variance)));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(GrfError::InvalidSpec(format!("length scale must be positive, got {}", self.length_scale)));
        }
        if self.n_modes == 0 {
            return Err(GrfError::InvalidSpec("at least one mode is required".into()));
        }
        Ok(())
    }

    /// Same field statistics on an independent random stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        GrfSpec { seed, ..*self }
    }

    /// Covariance `k(r)` of the target field.
    pub fn covariance(&self, r: f64) -> f64 {
        self.variance * (-std::f64::consts::PI * r * r / (4.0 * self.length_scale * self.length_scale)).exp()
    }

    /// Standard deviation of each wave-vector component.
    pub fn wave_number_std(&self) -> f64 {
        (std::f64::consts::FRAC_PI_2).sqrt() / self.length_scale
    }
}

/// Random amplitudes and wave vectors of one field sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfRealization {
    pub dim: usize,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Row-major `n_modes × dim`.
    pub wave_vectors: Vec<f64>,
    pub scale: f64,
}

impl GrfRealization {
    /// Draws mode `m` from its own keystream position, so realizations do
    /// not depend on generation order.
    pub fn draw(spec: &GrfSpec, sample_index: u64, dim: usize) -> Self {
        let std = spec.wave_number_std();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(sample_index);
        let n = spec.n_modes;
        let mut z1 = Vec::with_capacity(n);
        let mut z2 = Vec::with_capacity(n);
        let mut wave_vectors = Vec::with_capacity(n * dim);
        for m in 0..n {
            rng.set_word_pos(m as u128 * WORDS_PER_MODE);
            for _ in 0..dim {
                let k: f64 = StandardNormal.sample(&mut rng);
                wave_vectors.push(std * k);
            }
            z1.push(StandardNormal.sample(&mut rng));
            z2.push(StandardNormal.sample(&mut rng));
        }
        GrfRealization { dim, z1, z2, wave_vectors, scale: (spec.variance / n as f64).sqrt() }
    }

    pub fn n_modes(&self) -> usize {
        self.z1.len()
    }

    /// Field value at one point.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for m in 0..self.n_modes() {
            let k = &self.wave_vectors[m * self.dim..(m + 1) * self.dim];
            let phase: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
            let (sin, cos) = phase.sin_cos();
            s += self.z1[m] * cos + self.z2[m] * sin;
        }
        self.scale * s
    }
}

/// Field values at row-major points of dimension `dim`.
pub fn sample_field(spec: &GrfSpec, sample_index: u64, dim: usize, points: &[f64]) -> Vec<f64> {
    let r = GrfRealization::draw(spec, sample_index, dim);
    points.chunks_exact(dim).map(|x| r.evaluate(x)).collect()
}

/// Field values at every mesh node.
pub fn sample_on_mesh(spec: &GrfSpec, sample_index: u64, mesh: &Mesh) -> Vec<f64> {
    sample_field(spec, sample_index, mesh.dim(), mesh.coordinates())
}

/// Discrete solution of `-Δd = 1`, `d = 0` on the boundary, scaled to
/// maximum 1.
pub fn compute_cutoff_field(mesh: &Mesh) -> Result<Vec<f64>, GrfError> {
    Ok(cutoff_with_peak(mesh)?.0)
}

/// Scaled cutoff field and the peak value before scaling.
pub fn cutoff_with_peak(mesh: &Mesh) -> Result<(Vec<f64>, f64), GrfError> {
    let disc = Discretization::new(mesh)?;
    if disc.n_interior() == 0 {
        return Err(GrfError::NoInterior);
    }
    let rhs = disc.mass_times_restricted(&vec![1.0; mesh.n_nodes()]);
    let d_int = SpdSolver::new(&disc.stiffness_int)?.solve(&rhs)?;
    let mut d = disc.dofs.extend(&d_int);
    let peak = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in d.iter_mut() {
        *v /= peak;
    }
    Ok((d, peak))
}

/// `u_grf ⊙ d`.
pub fn make_admissible_ic(u_grf: &[f64], d: &[f64]) -> Vec<f64> {
    assert_eq!(u_grf.len(), d.len(), "field and cutoff lengths differ");
    u_grf.iter().zip(d).map(|(a, b)| a * b).collect()
}
