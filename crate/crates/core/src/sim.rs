//! Ground-truth solvers and dataset generation.
//!
//! Steady problems solve `K_int u = (M f)_int`; heat problems march
//! `(M + dt·D·K)_int u_next = (M u_prev + dt·M f)_int` with implicit Euler.
//! Both operators are factorized once and reused for every sample.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fem::{Discretization, FemError, SpdSolver};
use crate::grf::{self, GrfError, GrfSpec};
use crate::mesh::Mesh;

/// Samples solved together per block solve.
const SOLVE_CHUNK: usize = 32;
/// Offset between the initial-condition and forcing GRF seeds.
pub const FORCING_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid problem specification: {0}")]
    InvalidSpec(String),
    #[error("field has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Grf(#[from] GrfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Poisson,
    HeatHomogeneous,
    HeatForced,
}

impl ProblemKind {
    pub fn is_heat(self) -> bool {
        !matches!(self, ProblemKind::Poisson)
    }

    pub fn has_forcing(self) -> bool {
        !matches!(self, ProblemKind::HeatHomogeneous)
    }

    pub fn has_initial_condition(self) -> bool {
        self.is_heat()
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Poisson => "poisson",
            ProblemKind::HeatHomogeneous => "heat_homogeneous",
            ProblemKind::HeatForced => "heat_forced",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "poisson" => Ok(ProblemKind::Poisson),
            "heat_homogeneous" | "heat" => Ok(ProblemKind::HeatHomogeneous),
            "heat_forced" => Ok(ProblemKind::HeatForced),
            other => Err(format!("unknown problem `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub problem: ProblemKind,
    #[serde(default = "default_diffusivity")]
    pub diffusivity: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_snapshots")]
    pub snapshot_times: Vec<f64>,
}

fn default_diffusivity() -> f64 {
    0.02
}
fn default_t_final() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.0025
}
fn default_snapshots() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

impl ProblemSpec {
    pub fn poisson() -> Self {
        ProblemSpec { problem: ProblemKind::Poisson, ..Self::heat(ProblemKind::Poisson) }
    }

    /// Defaults: `D = 0.02`, `T = 1`, `dt = 0.0025`, snapshots `0.1, ..., 1.0`.
    pub fn heat(problem: ProblemKind) -> Self {
        ProblemSpec {
            problem,
            diffusivity: default_diffusivity(),
            t_final: default_t_final(),
            dt: default_dt(),
            snapshot_times: default_snapshots(),
        }
    }

    /// Step count and the step index of every snapshot.
    pub fn schedule(&self) -> Result<(usize, Vec<usize>), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if !(self.diffusivity > 0.0 && self.dt > 0.0 && self.t_final >= self.dt) {
            return bad(format!(
                "need D > 0, dt > 0 and T >= dt (D={}, dt={}, T={})",
                self.diffusivity, self.dt, self.t_final
            ));
        }
        let steps_of = |t: f64| -> Option<usize> {
            let k = (t / self.dt).round();
            ((t - k * self.dt).abs() <= 1e-12 * t.abs().max(1.0) && k >= 1.0).then_some(k as usize)
        };
        let Some(n_steps) = steps_of(self.t_final) else {
            return bad(format!("T = {} is not a multiple of dt = {}", self.t_final, self.dt));
        };
        let mut idx = Vec::with_capacity(self.snapshot_times.len());
        for &t in &self.snapshot_times {
            match steps_of(t) {
                Some(k) if t > 0.0 && k <= n_steps => {
                    if idx.last().is_some_and(|&p| p >= k) {
                        return bad("snapshot times must be strictly increasing".into());
                    }
                    idx.push(k);
                }
                _ => return bad(format!("snapshot time {t} is not a multiple of dt in (0, T]")),
            }
        }
        if idx.is_empty() {
            return bad("at least one snapshot time is required".into());
        }
        Ok((n_steps, idx))
    }
}

fn check_len(v: &[f64], n: usize) -> Result<(), SimError> {
    if v.len() != n {
        return Err(SimError::Length { expected: n, got: v.len() });
    }
    Ok(())
}

/// Factorized `K_int` for repeated steady solves.
pub struct PoissonSolver<'a> {
    disc: &'a Discretization,
    solver: SpdSolver,
}

impl<'a> PoissonSolver<'a> {
    pub fn new(disc: &'a Discretization) -> Result<Self, SimError> {
        Ok(PoissonSolver { disc, solver: SpdSolver::new(&disc.stiffness_int)? })
    }

    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>, SimError> {
        check_len(f, self.disc.n_nodes())?;
        let rhs = self.disc.mass_times_restricted(f);
        Ok(self.disc.dofs.extend(&self.solver.solve(&rhs)?))
    }

    /// Solves for every row of `fs` (row-major, `N_nodes` columns).
    pub fn solve_rows(&self, fs: &[f64]) -> Result<Vec<f64>, SimError> {
        let n = self.disc.n_nodes();
        let mut out = vec![0.0; fs.len()];
        for (chunk_in, chunk_out) in fs.chunks(n * SOLVE_CHUNK).zip(out.chunks_mut(n * SOLVE_CHUNK)) {
            let rows: Vec<&[f64]> = chunk_in.chunks_exact(n).collect();
            let mut block = interior_block(self.disc, &rows, |f| self.disc.mass.mul_vec(f));
            self.solver.solve_many_in_place(&mut block, rows.len())?;
            scatter_block(self.disc, &block, rows.len(), chunk_out);
        }
        Ok(out)
    }
}

/// Interior rows of `op(row)` gathered into a row-major `n_int × k` block.
fn interior_block(disc: &Discretization, rows: &[&[f64]], op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let k = rows.len();
    let mut block = vec![0.0; disc.n_interior() * k];
    for (c, row) in rows.iter().enumerate() {
        let full = op(row);
        for (i, &node) in disc.dofs.interior_to_node().iter().enumerate() {
            block[i * k + c] = full[node];
        }
    }
    block
}

fn scatter_block(disc: &Discretization, block: &[f64], k: usize, out: &mut [f64]) {
    let n = disc.n_nodes();
    for (c, row) in out.chunks_exact_mut(n).enumerate().take(k) {
        row.fill(0.0);
        for (i, &node) in disc.dofs.interior_to_node().iter().enumerate() {
            row[node] = block[i * k + c];
        }
    }
}

/// Solution of `-Δu = f`, `u = 0` on the boundary.
pub fn solve_poisson(mesh: &Mesh, f: &[f64]) -> Result<Vec<f64>, SimError> {
    let disc = Discretization::new(mesh)?;
    PoissonSolver::new(&disc)?.solve(f)
}

/// Implicit Euler stepper with a factorized `(M + dt·D·K)_int`.
pub struct HeatStepper<'a> {
    disc: &'a Discretization,
    solver: SpdSolver,
    pub dt: f64,
    pub diffusivity: f64,
}

impl<'a> HeatStepper<'a> {
    pub fn new(disc: &'a Discretization, dt: f64, diffusivity: f64) -> Result<Self, SimError> {
        if !(dt > 0.0 && diffusivity > 0.0) {
            return Err(SimError::InvalidSpec("dt and D must be positive".into()));
        }
        let a = disc.mass_int.add_scaled(dt * diffusivity, &disc.stiffness_int);
        Ok(HeatStepper { disc, solver: SpdSolver::new(&a)?, dt, diffusivity })
    }

    /// One step from `u_prev` (zero on the boundary) with forcing `f`.
    pub fn step(&self, u_prev: &[f64], f: Option<&[f64]>) -> Result<Vec<f64>, SimError> {
        let n = self.disc.n_nodes();
        check_len(u_prev, n)?;
        let mut rhs = self.disc.mass_times_restricted(u_prev);
        if let Some(f) = f {
            check_len(f, n)?;
            for (r, mf) in rhs.iter_mut().zip(self.disc.mass_times_restricted(f)) {
                *r += self.dt * mf;
            }
        }
        Ok(self.disc.dofs.extend(&self.solver.solve(&rhs)?))
    }

    /// Snapshots of one trajectory, row-major `n_snapshots × N_nodes`.
    pub fn trajectory(&self, spec: &ProblemSpec, u0: &[f64], f: Option<&[f64]>) -> Result<Vec<f64>, SimError> {
        self.trajectories(spec, &[u0], f.map(|f| vec![f]).as_deref())
    }

    /// Snapshots for several trajectories at once, stacked as
    /// `n_traj × n_snapshots × N_nodes`.
    pub fn trajectories(&self, spec: &ProblemSpec, u0s: &[&[f64]], fs: Option<&[&[f64]]>) -> Result<Vec<f64>, SimError> {
        let (n_steps, snaps) = spec.schedule()?;
        let n = self.disc.n_nodes();
        let ns = snaps.len();
        let mut out = vec![0.0; u0s.len() * ns * n];
        for start in (0..u0s.len()).step_by(SOLVE_CHUNK) {
            let end = (start + SOLVE_CHUNK).min(u0s.len());
            let k = end - start;
            for u in &u0s[start..end] {
                check_len(u, n)?;
            }
            let n_int = self.disc.n_interior();
            let mut state = interior_block(self.disc, &u0s[start..end], |u| u.to_vec());
            let forcing = match fs {
                Some(fs) => {
                    for f in &fs[start..end] {
                        check_len(f, n)?;
                    }
                    let mut b = interior_block(self.disc, &fs[start..end], |f| self.disc.mass.mul_vec(f));
                    b.iter_mut().for_each(|v| *v *= self.dt);
                    Some(b)
                }
                None => None,
            };
            let mut rhs = vec![0.0; n_int * k];
            let mut next_snap = 0;
            for step in 1..=n_steps {
                self.disc.mass_int.mul_block_row_major(&state, k, &mut rhs);
                if let Some(b) = &forcing {
                    for (r, v) in rhs.iter_mut().zip(b) {
                        *r += v;
                    }
                }
                self.solver.solve_many_in_place(&mut rhs, k)?;
                std::mem::swap(&mut state, &mut rhs);
                if next_snap < ns && snaps[next_snap] == step {
                    for c in 0..k {
                        let row = &mut out[((start + c) * ns + next_snap) * n..][..n];
                        for (i, &node) in self.disc.dofs.interior_to_node().iter().enumerate() {
                            row[node] = state[i * k + c];
                        }
                    }
                    next_snap += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Implicit Euler trajectory recorded at `spec.snapshot_times`.
pub fn run_trajectory(mesh: &Mesh, spec: &ProblemSpec, u0: &[f64], f: Option<&[f64]>) -> Result<Vec<f64>, SimError> {
    let disc = Discretization::new(mesh)?;
    HeatStepper::new(&disc, spec.dt, spec.diffusivity)?.trajectory(spec, u0, f)
}

/// Input fields and ground-truth solutions for one problem on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub problem: ProblemSpec,
    pub n_samples: usize,
    pub n_nodes: usize,
    /// `n_samples × N_nodes`; empty for steady problems.
    pub inputs_u0: Vec<f64>,
    /// `n_samples × N_nodes`; empty for homogeneous heat.
    pub inputs_f: Vec<f64>,
    /// `n_samples × N_nodes` (steady) or `n_samples × n_snapshots × N_nodes`.
    pub outputs: Vec<f64>,
    /// GRF used for `u0` (heat) and the one used for `f`.
    pub grf_u0: Option<GrfSpec>,
    pub grf_f: Option<GrfSpec>,
    pub mesh_id: String,
}

impl Dataset {
    pub fn n_snapshots(&self) -> usize {
        if self.problem.problem.is_heat() {
            self.problem.snapshot_times.len()
        } else {
            1
        }
    }

    pub fn u0(&self, i: usize) -> &[f64] {
        &self.inputs_u0[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn f(&self, i: usize) -> &[f64] {
        &self.inputs_f[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    /// Ground truth of sample `i` at snapshot `j` (`j = 0` for steady).
    pub fn output(&self, i: usize, j: usize) -> &[f64] {
        let ns = self.n_snapshots();
        &self.outputs[(i * ns + j) * self.n_nodes..][..self.n_nodes]
    }

    /// Time of snapshot `j`, or `None` for steady problems.
    pub fn time(&self, j: usize) -> Option<f64> {
        self.problem.problem.is_heat().then(|| self.problem.snapshot_times[j])
    }

    /// SHA-256 over the specs, mesh id and every array.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"feen-dataset");
        h.update(serde_json::to_vec(&(&self.problem, &self.grf_u0, &self.grf_f)).expect("specs serialize"));
        h.update(self.mesh_id.as_bytes());
        for n in [self.n_samples, self.n_nodes, self.inputs_u0.len(), self.inputs_f.len(), self.outputs.len()] {
            h.update((n as u64).to_le_bytes());
        }
        for v in self.inputs_u0.iter().chain(&self.inputs_f).chain(&self.outputs) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Samples inputs and solves for outputs. Heat initial conditions are
/// `GRF ⊙ cutoff`; forcing fields are raw GRF samples drawn with a seed
/// offset by [`FORCING_SEED_OFFSET`].
pub fn build_dataset(
    mesh: &Mesh,
    cutoff: &[f64],
    spec: &ProblemSpec,
    grf_spec: &GrfSpec,
    n_samples: usize,
) -> Result<Dataset, SimError> {
    grf_spec.validate()?;
    let kind = spec.problem;
    if kind.is_heat() {
        spec.schedule()?;
    }
    let n = mesh.n_nodes();
    check_len(cutoff, n)?;
    let disc = Discretization::new(mesh)?;
    let f_spec = grf_spec.with_seed(grf_spec.seed.wrapping_add(FORCING_SEED_OFFSET));

    let mut inputs_u0 = Vec::new();
    if kind.has_initial_condition() {
        inputs_u0.reserve(n_samples * n);
        for i in 0..n_samples {
            let u = grf::sample_on_mesh(grf_spec, i as u64, mesh);
            let mut u = grf::make_admissible_ic(&u, cutoff);
            for &b in mesh.boundary_nodes() {
                u[b] = 0.0;
            }
            inputs_u0.extend(u);
        }
    }
    let mut inputs_f = Vec::new();
    if kind.has_forcing() {
        inputs_f.reserve(n_samples * n);
        for i in 0..n_samples {
            inputs_f.extend(grf::sample_on_mesh(&f_spec, i as u64, mesh));
        }
    }

    let outputs = match kind {
        ProblemKind::Poisson => PoissonSolver::new(&disc)?.solve_rows(&inputs_f)?,
        _ => {
            let stepper = HeatStepper::new(&disc, spec.dt, spec.diffusivity)?;
            let u0s: Vec<&[f64]> = inputs_u0.chunks_exact(n).collect();
            let fs: Vec<&[f64]> = inputs_f.chunks_exact(n).collect();
            stepper.trajectories(spec, &u0s, kind.has_forcing().then_some(fs.as_slice()))?
        }
    };

    Ok(Dataset {
        problem: spec.clone(),
        n_samples,
        n_nodes: n,
        inputs_u0,
        inputs_f,
        outputs,
        grf_u0: kind.has_initial_condition().then_some(*grf_spec),
        grf_f: kind.has_forcing().then_some(f_spec),
        mesh_id: mesh.content_hash(),
    })
}
