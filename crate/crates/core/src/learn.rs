//! Affine branch network from sensor values to spectral coordinates.
//!
//! Predictions in normalized output space are `Φ a(t)` with
//! `a(t) = s(t) ⊙ (W x̂ + b) + g(t) ⊙ f̂` (see [`ReconstructionRule`]), where
//! `Φ` holds the unscaled eigenfunctions at the nodes. Physical fields are
//! recovered by de-normalizing.
//!
//! The trainer uses the quadratic form of the squared error: with
//! `G = ΦᵀΦ`, `p_e = Φᵀ y_e` and `y_e` the normalized target minus the fixed
//! forced response, `‖Φ v − y_e‖² = vᵀGv − 2vᵀp_e + ‖y_e‖²`. Per-iteration
//! cost is then independent of the node count apart from the input layer.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eig::EigenBasis;
use crate::fem::SparseMatrix;
use crate::mesh::{Mesh, MeshError};
use crate::sim::{Dataset, ProblemKind};
use crate::spectral::{self, ReconstructionRule, SpectralError};

pub const MIN_STD: f64 = 1e-12;
pub const HISTORY_INTERVAL: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset and basis come from different meshes ({dataset} vs {basis})")]
    MeshMismatch { dataset: String, basis: String },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Zscore,
    Identity,
}

/// Per-sensor affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mode: NormMode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(p: usize) -> Self {
        Normalizer { mode: NormMode::Identity, mean: vec![0.0; p], std: vec![1.0; p] }
    }

    /// Statistics of the rows yielded by `rows` (population standard
    /// deviation, clamped below at [`MIN_STD`]).
    pub fn fit<'a>(mode: NormMode, p: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        if mode == NormMode::Identity {
            return Self::identity(p);
        }
        let mut n = 0usize;
        let mut mean = vec![0.0; p];
        let mut m2 = vec![0.0; p];
        for row in rows {
            assert_eq!(row.len(), p);
            n += 1;
            for i in 0..p {
                let d = row[i] - mean[i];
                mean[i] += d / n as f64;
                m2[i] += d * (row[i] - mean[i]);
            }
        }
        let std = m2.iter().map(|s| if n > 0 { (s / n as f64).sqrt().max(MIN_STD) } else { 1.0 }).collect();
        Normalizer { mode, mean, std }
    }

    /// Z-score with one mean and standard deviation pooled over every
    /// sensor whose values vary, stored per sensor. Sensors that are
    /// constant in the data (Dirichlet nodes) keep their own statistics, so
    /// they de-normalize to that constant.
    pub fn fit_pooled<'a>(p: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let per_node = Self::fit(NormMode::Zscore, p, rows.clone());
        let varying: Vec<bool> = per_node.std.iter().map(|&s| s > MIN_STD).collect();
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for row in rows {
            for (&x, _) in row.iter().zip(&varying).filter(|(_, &v)| v) {
                n += 1;
                let d = x - mean;
                mean += d / n as f64;
                m2 += d * (x - mean);
            }
        }
        if n == 0 {
            return per_node;
        }
        let std = (m2 / n as f64).sqrt().max(MIN_STD);
        let pick = |v: bool, pooled: f64, own: f64| if v { pooled } else { own };
        Normalizer {
            mode: NormMode::Zscore,
            mean: varying.iter().zip(&per_node.mean).map(|(&v, &m)| pick(v, mean, m)).collect(),
            std: varying.iter().zip(&per_node.std).map(|(&v, &s)| pick(v, std, s)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchModel {
    /// `M × P`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub input_normalizer: Normalizer,
    pub output_normalizer: Normalizer,
    pub rule: ReconstructionRule,
    /// Eigenvalues of the bound basis.
    pub eigenvalues: Vec<f64>,
    pub basis_id: String,
}

/// Glorot-normal weights (variance `2/(P+M)`), zero bias, identity
/// normalizers and no bound basis.
pub fn init_model(p: usize, m: usize, rule: ReconstructionRule, seed: u64) -> BranchModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = (2.0 / (p + m) as f64).sqrt();
    let weights = DMatrix::from_fn(m, p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        std * z
    });
    BranchModel {
        weights,
        bias: DVector::zeros(m),
        input_normalizer: Normalizer::identity(p),
        output_normalizer: Normalizer::identity(0),
        rule,
        eigenvalues: Vec::new(),
        basis_id: String::new(),
    }
}

impl BranchModel {
    pub fn n_inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_modes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn bind(&mut self, basis: &EigenBasis) -> Result<(), LearnError> {
        if basis.n_modes() != self.n_modes() {
            return Err(LearnError::ShapeMismatch(format!(
                "model has {} modes, basis has {}",
                self.n_modes(),
                basis.n_modes()
            )));
        }
        self.eigenvalues = basis.eigenvalues.clone();
        self.basis_id = basis.content_hash();
        Ok(())
    }

    /// `W · normalize(x) + b`.
    pub fn coordinates(&self, sensor_values: &[f64]) -> Result<Vec<f64>, LearnError> {
        if sensor_values.len() != self.n_inputs() {
            return Err(LearnError::ShapeMismatch(format!(
                "expected {} sensor values, got {}",
                self.n_inputs(),
                sensor_values.len()
            )));
        }
        let x = DVector::from_vec(self.input_normalizer.normalize(sensor_values));
        Ok((&self.weights * x + &self.bias).data.into())
    }

    /// SHA-256 over parameters, normalizers, rule and basis id.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"feen-model");
        h.update(serde_json::to_vec(&(&self.rule, self.input_normalizer.mode, self.output_normalizer.mode)).expect("rule serializes"));
        h.update(self.basis_id.as_bytes());
        h.update((self.n_modes() as u64).to_le_bytes());
        h.update((self.n_inputs() as u64).to_le_bytes());
        let n = &self.input_normalizer;
        let o = &self.output_normalizer;
        for v in [&n.mean, &n.std, &o.mean, &o.std, &self.eigenvalues] {
            h.update((v.len() as u64).to_le_bytes());
            v.iter().for_each(|x| h.update(x.to_le_bytes()));
        }
        self.weights.iter().chain(self.bias.iter()).for_each(|x| h.update(x.to_le_bytes()));
        hex::encode(h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Evaluation target of [`forward`]: mesh nodes, or points located in the
/// mesh. Predictions are denormalized at the nodes and then interpolated, so
/// off-grid values are the P1 function the nodal prediction defines.
#[derive(Debug, Clone)]
pub struct QueryEval {
    /// `N × M`, unscaled eigenfunctions at the nodes.
    pub eval: DMatrix<f64>,
    pub output_normalizer: Normalizer,
    /// Element vertices and barycentric weights per query point.
    pub points: Option<Vec<(Vec<usize>, Vec<f64>)>>,
}

impl QueryEval {
    pub fn at_nodes(model: &BranchModel, basis: &EigenBasis) -> Self {
        QueryEval { eval: basis.nodal_matrix(), output_normalizer: model.output_normalizer.clone(), points: None }
    }

    pub fn at_points(model: &BranchModel, basis: &EigenBasis, mesh: &Mesh, points: &[Vec<f64>]) -> Result<Self, LearnError> {
        let located = points
            .iter()
            .map(|x| {
                let loc = mesh.locate_point(x)?;
                Ok((mesh.element(loc.element).to_vec(), loc.barycentric().to_vec()))
            })
            .collect::<Result<Vec<_>, MeshError>>()?;
        Ok(QueryEval { points: Some(located), ..Self::at_nodes(model, basis) })
    }

    pub fn n_points(&self) -> usize {
        self.points.as_ref().map_or(self.eval.nrows(), Vec::len)
    }
}

/// Physical prediction at the query points.
pub fn forward(
    model: &BranchModel,
    sensor_values: &[f64],
    t: Option<f64>,
    f_coeffs: Option<&[f64]>,
    query: &QueryEval,
) -> Result<Vec<f64>, LearnError> {
    if model.eigenvalues.len() != model.n_modes() {
        return Err(LearnError::ShapeMismatch("model is not bound to a basis".into()));
    }
    let c = model.coordinates(sensor_values)?;
    let z = spectral::reconstruct(&model.rule, &model.eigenvalues, &c, f_coeffs, t, &query.eval)?;
    if query.output_normalizer.len() != z.len() {
        return Err(LearnError::ShapeMismatch("output statistics do not match the basis".into()));
    }
    let nodal = query.output_normalizer.denormalize(&z);
    Ok(match &query.points {
        None => nodal,
        Some(pts) => pts.iter().map(|(v, w)| v.iter().zip(w).map(|(&i, &b)| b * nodal[i]).sum()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_batch() -> usize {
    256
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_train_fraction() -> f64 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 4e-5,
            iterations: 20_000,
            batch_size: default_batch(),
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            train_fraction: default_train_fraction(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam parameters out of range");
        }
        Ok(())
    }
}

/// Seeded shuffle of sample indices into (train, test). Both parts are
/// non-empty whenever there are at least two samples.
pub fn split_samples(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5_9117));
    let mut n_train = (n as f64 * train_fraction).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    } else {
        n_train = n;
    }
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Normalization choice per problem: inputs are Z-scored; outputs are
/// Z-scored except for the forced heat problem, which stays in physical
/// units so the forced response is exact.
pub fn default_norm_modes(problem: ProblemKind) -> (NormMode, NormMode) {
    match problem {
        ProblemKind::HeatForced => (NormMode::Zscore, NormMode::Identity),
        _ => (NormMode::Zscore, NormMode::Zscore),
    }
}

/// Branch input of sample `i`: `u0` for heat problems, `f` for Poisson.
pub fn sensor_input(dataset: &Dataset, i: usize) -> &[f64] {
    if dataset.problem.problem.is_heat() {
        dataset.u0(i)
    } else {
        dataset.f(i)
    }
}

/// Rule implied by a dataset's problem.
pub fn rule_for(dataset: &Dataset) -> ReconstructionRule {
    match dataset.problem.problem {
        ProblemKind::Poisson => ReconstructionRule::poisson(),
        ProblemKind::HeatHomogeneous => ReconstructionRule::heat_decay(dataset.problem.diffusivity),
        ProblemKind::HeatForced => ReconstructionRule::heat_forced(dataset.problem.diffusivity),
    }
}

/// Fits both normalizers on the given samples. Inputs get per-sensor
/// statistics; Z-scored outputs use [`Normalizer::fit_pooled`], with every
/// snapshot of every sample counted as one observation.
pub fn fit_normalizers(model: &mut BranchModel, dataset: &Dataset, samples: &[usize], modes: (NormMode, NormMode)) {
    let n = dataset.n_nodes;
    model.input_normalizer = Normalizer::fit(modes.0, n, samples.iter().map(|&i| sensor_input(dataset, i)));
    let ns = dataset.n_snapshots();
    let outputs = samples.iter().flat_map(|&i| (0..ns).map(move |j| dataset.output(i, j)));
    model.output_normalizer = match modes.1 {
        NormMode::Zscore => Normalizer::fit_pooled(n, outputs),
        NormMode::Identity => Normalizer::identity(n),
    };
}

/// Dataset arranged for training against a bound model: normalized
/// inputs, normalized targets and the quadratic-form terms.
pub struct TrainingData {
    pub rule: ReconstructionRule,
    pub n_snapshots: usize,
    pub n_nodes: usize,
    /// `N × M` nodal eigenfunctions.
    pub phi: DMatrix<f64>,
    /// `ΦᵀΦ`
    pub gram: DMatrix<f64>,
    /// `P × n_samples`
    pub inputs: DMatrix<f64>,
    /// `M × n_samples`, forcing coefficients `φ_kᵀ M f`.
    pub f_coeffs: Option<DMatrix<f64>>,
    /// Row-major `n_examples × N` normalized targets.
    pub targets: Vec<f64>,
    /// Per snapshot: `s(t)` and `g(t)`.
    pub scale: Vec<Vec<f64>>,
    pub forcing: Vec<Vec<f64>>,
    /// `M × n_examples`, `Φᵀ y_e`.
    pub proj: DMatrix<f64>,
    /// `‖y_e‖²`
    pub yy: Vec<f64>,
}

impl TrainingData {
    pub fn new(model: &BranchModel, dataset: &Dataset, basis: &EigenBasis, mass: &SparseMatrix) -> Result<Self, LearnError> {
        if dataset.mesh_id != basis.mesh_id {
            return Err(LearnError::MeshMismatch { dataset: dataset.mesh_id.clone(), basis: basis.mesh_id.clone() });
        }
        let n = dataset.n_nodes;
        let m = basis.n_modes();
        if model.n_inputs() != n || model.n_modes() != m || model.eigenvalues.len() != m {
            return Err(LearnError::ShapeMismatch("model, dataset and basis disagree".into()));
        }
        if model.output_normalizer.len() != n {
            return Err(LearnError::ShapeMismatch("output normalizer is not fitted".into()));
        }
        let ns = dataset.n_snapshots();
        let phi = basis.nodal_matrix();
        let gram = phi.transpose() * &phi;
        let mut inputs = DMatrix::zeros(n, dataset.n_samples);
        for i in 0..dataset.n_samples {
            inputs.set_column(i, &DVector::from_vec(model.input_normalizer.normalize(sensor_input(dataset, i))));
        }
        let f_coeffs = (model.rule.kind == spectral::RuleKind::HeatForcedOde).then(|| {
            let mut fc = DMatrix::zeros(m, dataset.n_samples);
            for i in 0..dataset.n_samples {
                fc.set_column(i, &DVector::from_vec(spectral::project(basis, mass, dataset.f(i))));
            }
            fc
        });
        let times: Vec<Option<f64>> = (0..ns).map(|j| dataset.time(j)).collect();
        let mut scale = Vec::with_capacity(ns);
        let mut forcing = Vec::with_capacity(ns);
        for t in &times {
            scale.push(model.rule.scale_factors(&model.eigenvalues, *t)?);
            forcing.push(model.rule.forcing_factors(&model.eigenvalues, *t)?);
        }
        let n_ex = dataset.n_samples * ns;
        let mut targets = Vec::with_capacity(n_ex * n);
        let mut proj = DMatrix::zeros(m, n_ex);
        let mut yy = Vec::with_capacity(n_ex);
        for i in 0..dataset.n_samples {
            for j in 0..ns {
                let z = model.output_normalizer.normalize(dataset.output(i, j));
                let mut y = DVector::from_column_slice(&z);
                if let Some(fc) = &f_coeffs {
                    let gf = DVector::from_iterator(m, (0..m).map(|k| forcing[j][k] * fc[(k, i)]));
                    y -= &phi * gf;
                }
                proj.set_column(i * ns + j, &(phi.transpose() * &y));
                yy.push(y.norm_squared());
                targets.extend(z);
            }
        }
        Ok(TrainingData { rule: model.rule, n_snapshots: ns, n_nodes: n, phi, gram, inputs, f_coeffs, targets, scale, forcing, proj, yy })
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.ncols()
    }

    /// Example indices `sample * n_snapshots + snapshot` for the samples.
    pub fn examples_of(&self, samples: &[usize]) -> Vec<usize> {
        samples.iter().flat_map(|&i| (0..self.n_snapshots).map(move |j| i * self.n_snapshots + j)).collect()
    }

    /// Normalized nodal prediction for one example.
    pub fn predict_example(&self, model: &BranchModel, e: usize) -> DVector<f64> {
        let (i, j) = (e / self.n_snapshots, e % self.n_snapshots);
        let c = &model.weights * self.inputs.column(i) + &model.bias;
        let a = self.amplitudes(c.as_slice(), i, j);
        &self.phi * DVector::from_vec(a)
    }

    fn amplitudes(&self, c: &[f64], i: usize, j: usize) -> Vec<f64> {
        let mut a: Vec<f64> = c.iter().zip(&self.scale[j]).map(|(c, s)| c * s).collect();
        if let Some(fc) = &self.f_coeffs {
            for (k, ak) in a.iter_mut().enumerate() {
                *ak += self.forcing[j][k] * fc[(k, i)];
            }
        }
        a
    }
}

/// Loss and gradients of a batch.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// MSE over (example, node) in normalized output space with exact
/// gradients, computed from explicit nodal predictions.
pub fn loss_and_grad(model: &BranchModel, data: &TrainingData, batch: &[usize]) -> Result<Gradient, LearnError> {
    check_model(model, data)?;
    let (m, p) = (model.n_modes(), model.n_inputs());
    let denom = (batch.len() * data.n_nodes) as f64;
    let mut loss = 0.0;
    let mut gw = DMatrix::zeros(m, p);
    let mut gb = DVector::zeros(m);
    for &e in batch {
        let (i, j) = (e / data.n_snapshots, e % data.n_snapshots);
        let pred = data.predict_example(model, e);
        let target = DVector::from_column_slice(&data.targets[e * data.n_nodes..(e + 1) * data.n_nodes]);
        let r = pred - target;
        loss += r.norm_squared();
        let mut dc = data.phi.transpose() * &r * (2.0 / denom);
        for k in 0..m {
            dc[k] *= data.scale[j][k];
        }
        gw.ger(1.0, &dc, &data.inputs.column(i), 1.0);
        gb += &dc;
    }
    Ok(Gradient { loss: loss / denom, weights: gw, bias: gb })
}

/// Same quantity as [`loss_and_grad`] evaluated through the quadratic form.
pub fn loss_and_grad_gram(model: &BranchModel, data: &TrainingData, batch: &[usize]) -> Result<Gradient, LearnError> {
    check_model(model, data)?;
    let mut ws = Workspace::new(model.n_modes(), model.n_inputs(), batch.len());
    let loss = ws.evaluate(model, data, batch, true);
    Ok(Gradient { loss, weights: ws.grad_w.clone(), bias: ws.grad_b.clone() })
}

fn check_model(model: &BranchModel, data: &TrainingData) -> Result<(), LearnError> {
    if model.n_inputs() != data.inputs.nrows() || model.n_modes() != data.gram.nrows() {
        return Err(LearnError::ShapeMismatch("model does not match the training data".into()));
    }
    Ok(())
}

/// Buffers for the quadratic-form objective.
struct Workspace {
    x: DMatrix<f64>,
    c: DMatrix<f64>,
    v: DMatrix<f64>,
    gv: DMatrix<f64>,
    grad_w: DMatrix<f64>,
    grad_b: DVector<f64>,
}

impl Workspace {
    fn new(m: usize, p: usize, b: usize) -> Self {
        Workspace {
            x: DMatrix::zeros(p, b),
            c: DMatrix::zeros(m, b),
            v: DMatrix::zeros(m, b),
            gv: DMatrix::zeros(m, b),
            grad_w: DMatrix::zeros(m, p),
            grad_b: DVector::zeros(m),
        }
    }

    fn evaluate(&mut self, model: &BranchModel, data: &TrainingData, batch: &[usize], with_grad: bool) -> f64 {
        let b = batch.len();
        if self.x.ncols() != b {
            *self = Workspace::new(model.n_modes(), model.n_inputs(), b);
        }
        let ns = data.n_snapshots;
        for (col, &e) in batch.iter().enumerate() {
            self.x.set_column(col, &data.inputs.column(e / ns));
        }
        self.c.gemm(1.0, &model.weights, &self.x, 0.0);
        let m = model.n_modes();
        for (col, &e) in batch.iter().enumerate() {
            let s = &data.scale[e % ns];
            for k in 0..m {
                self.v[(k, col)] = s[k] * (self.c[(k, col)] + model.bias[k]);
            }
        }
        self.gv.gemm(1.0, &data.gram, &self.v, 0.0);
        let denom = (b * data.n_nodes) as f64;
        let mut loss = 0.0;
        for (col, &e) in batch.iter().enumerate() {
            let s = &data.scale[e % ns];
            let mut term = data.yy[e];
            for k in 0..m {
                let v = self.v[(k, col)];
                let p = data.proj[(k, e)];
                term += v * (self.gv[(k, col)] - 2.0 * p);
                // Reuse `c` for the coordinate gradient.
                self.c[(k, col)] = 2.0 / denom * s[k] * (self.gv[(k, col)] - p);
            }
            loss += term;
        }
        if with_grad {
            self.grad_w.gemm(1.0, &self.c, &self.x.transpose(), 0.0);
            for k in 0..m {
                self.grad_b[k] = self.c.row(k).sum();
            }
        }
        loss / denom
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m_w: DMatrix<f64>,
    v_w: DMatrix<f64>,
    m_b: DVector<f64>,
    v_b: DVector<f64>,
}

impl Adam {
    pub fn new(config: &TrainConfig, m: usize, p: usize) -> Self {
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m_w: DMatrix::zeros(m, p),
            v_w: DMatrix::zeros(m, p),
            m_b: DVector::zeros(m),
            v_b: DVector::zeros(m),
        }
    }

    pub fn update(&mut self, model: &mut BranchModel, grad_w: &DMatrix<f64>, grad_b: &DVector<f64>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let upd = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *theta -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((t, &g), m), v) in model.weights.iter_mut().zip(grad_w.iter()).zip(self.m_w.iter_mut()).zip(self.v_w.iter_mut()) {
            upd(t, g, m, v);
        }
        for (((t, &g), m), v) in model.bias.iter_mut().zip(grad_b.iter()).zip(self.m_b.iter_mut()).zip(self.v_b.iter_mut()) {
            upd(t, g, m, v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(iteration, batch loss)` every [`HISTORY_INTERVAL`] iterations and
    /// at the last iteration.
    pub history: Vec<(usize, f64)>,
    pub initial_mse: f64,
    pub final_mse: f64,
}

/// Mean normalized MSE over the given examples.
pub fn dataset_mse(model: &BranchModel, data: &TrainingData, examples: &[usize]) -> f64 {
    let mut ws = Workspace::new(model.n_modes(), model.n_inputs(), 0);
    let mut total = 0.0;
    for chunk in examples.chunks(1024) {
        total += ws.evaluate(model, data, chunk, false) * chunk.len() as f64;
    }
    total / examples.len().max(1) as f64
}

/// Adam on mini-batches drawn from epoch-wise shuffles of the training
/// examples.
pub fn train(
    model: &mut BranchModel,
    data: &TrainingData,
    train_samples: &[usize],
    config: &TrainConfig,
) -> Result<TrainReport, LearnError> {
    config.validate()?;
    check_model(model, data)?;
    let examples = data.examples_of(train_samples);
    if examples.is_empty() {
        return Err(LearnError::InvalidConfig("no training examples".into()));
    }
    let initial_mse = dataset_mse(model, data, &examples);
    let b = config.batch_size.min(examples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = examples.clone();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut batch = Vec::with_capacity(b);
    let mut ws = Workspace::new(model.n_modes(), model.n_inputs(), b);
    let mut adam = Adam::new(config, model.n_modes(), model.n_inputs());
    let mut history = Vec::new();
    for it in 0..config.iterations {
        batch.clear();
        while batch.len() < b {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let loss = ws.evaluate(model, data, &batch, true);
        if !loss.is_finite() {
            return Err(LearnError::NonFiniteLoss { iteration: it });
        }
        if it % HISTORY_INTERVAL == 0 || it + 1 == config.iterations {
            history.push((it, loss));
        }
        adam.update(model, &ws.grad_w, &ws.grad_b);
    }
    let final_mse = dataset_mse(model, data, &examples);
    if !final_mse.is_finite() || !model.is_finite() {
        return Err(LearnError::NonFiniteLoss { iteration: config.iterations });
    }
    Ok(TrainReport { history, initial_mse, final_mse })
}

/// Trained model with its data split.
pub struct FitResult {
    pub model: BranchModel,
    pub report: TrainReport,
    pub train_samples: Vec<usize>,
    pub test_samples: Vec<usize>,
}

/// Split, normalize, initialize and train on a dataset with the given
/// basis.
pub fn fit(
    dataset: &Dataset,
    basis: &EigenBasis,
    mass: &SparseMatrix,
    config: &TrainConfig,
) -> Result<(FitResult, TrainingData), LearnError> {
    config.validate()?;
    if dataset.n_samples < 2 {
        return Err(LearnError::InvalidConfig("at least two samples are needed for a train/test split".into()));
    }
    let (train_samples, test_samples) = split_samples(dataset.n_samples, config.train_fraction, config.seed);
    let mut model = init_model(dataset.n_nodes, basis.n_modes(), rule_for(dataset), config.seed);
    model.bind(basis)?;
    fit_normalizers(&mut model, dataset, &train_samples, default_norm_modes(dataset.problem.problem));
    let data = TrainingData::new(&model, dataset, basis, mass)?;
    let report = train(&mut model, &data, &train_samples, config)?;
    Ok((FitResult { model, report, train_samples, test_samples }, data))
}
