//! Smallest eigenpairs of the pencil `K φ = λ M φ` on interior DOFs.
//!
//! Large problems use thick-restart block Lanczos in shift-invert mode at
//! zero: the operator `K⁻¹M` is self-adjoint in the `M` inner product and its
//! largest eigenvalues `θ = 1/λ` are the wanted ones. The Krylov basis is kept
//! fully `M`-orthonormal (two passes of classical Gram-Schmidt) and
//! Rayleigh-Ritz is applied to `H = Vᵀ M K⁻¹ M V`, which makes clustered and
//! repeated eigenvalues unproblematic. Small problems are solved densely.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::fem::{Discretization, DofMap, FemError, SparseMatrix, SpdSolver};
use crate::mesh::{Mesh, MeshError};

pub const DEFAULT_TOL_EIG: f64 = 1e-8;
/// Problems up to this many DOFs are solved with a dense eigensolver.
pub const DENSE_LIMIT: usize = 400;
const MAX_RESTARTS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum EigError {
    #[error("requested {requested} modes but only {available} interior DOFs exist")]
    InsufficientDofs { requested: usize, available: usize },
    #[error("eigensolver did not converge: {0}")]
    NotConverged(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense for small systems, Lanczos otherwise.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub tol: f64,
    pub method: EigenMethod,
    /// Block size; `None` uses `min(m_modes, 32)`.
    pub block_size: Option<usize>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { tol: DEFAULT_TOL_EIG, method: EigenMethod::Auto, block_size: None, seed: 0x5eed }
    }
}

/// Eigenvalues in ascending order with `M`-orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub eigenvalues: Vec<f64>,
    pub modes: DMatrix<f64>,
}

pub fn compute_eigenpairs(
    k: &SparseMatrix,
    m: &SparseMatrix,
    m_modes: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs, EigError> {
    let n = k.n_rows();
    if m.n_rows() != n || k.n_cols() != n || m.n_cols() != n {
        return Err(FemError::Shape("K and M must be square and of equal size".into()).into());
    }
    if m_modes > n {
        return Err(EigError::InsufficientDofs { requested: m_modes, available: n });
    }
    if m_modes == 0 {
        return Ok(EigenPairs { eigenvalues: vec![], modes: DMatrix::zeros(n, 0) });
    }
    let dense = match opts.method {
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
        EigenMethod::Auto => n <= DENSE_LIMIT,
    };
    let mut pairs = if dense { dense_pencil(k, m, m_modes)? } else { block_lanczos(k, m, m_modes, opts)? };
    normalize_signs(&mut pairs.modes);
    Ok(pairs)
}

/// Flips each column so its largest-magnitude entry (first one on ties) is
/// positive.
fn normalize_signs(modes: &mut DMatrix<f64>) {
    for mut col in modes.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Dense solve via `M = L Lᵀ` and the standard problem `L⁻¹ K L⁻ᵀ`.
fn dense_pencil(k: &SparseMatrix, m: &SparseMatrix, m_modes: usize) -> Result<EigenPairs, EigError> {
    let kd = k.to_dense();
    let md = m.to_dense();
    let chol = md
        .cholesky()
        .ok_or_else(|| FemError::NotPositiveDefinite("mass matrix in dense eigensolve".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(k.n_rows(), k.n_rows()))
        .ok_or_else(|| EigError::NotConverged("singular Cholesky factor".into()))?;
    let c = &linv * &kd * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let order = &order[..m_modes];
    let y = DMatrix::from_fn(k.n_rows(), m_modes, |r, c| eig.eigenvectors[(r, order[c])]);
    let modes = linv.transpose() * y;
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok(EigenPairs { eigenvalues, modes })
}

struct Krylov {
    v: DMatrix<f64>,
    mv: DMatrix<f64>,
    w: DMatrix<f64>,
    h: DMatrix<f64>,
    /// Columns with `w` and `h` filled.
    done: usize,
    /// Columns in use.
    used: usize,
}

impl Krylov {
    /// Orthogonalizes the columns of `x` against the basis and each other in
    /// the `M` inner product; columns that collapse are replaced by random
    /// directions.
    fn append(&mut self, m: &SparseMatrix, mut x: DMatrix<f64>, rng: &mut ChaCha8Rng) -> usize {
        let n = x.nrows();
        let mut added = 0;
        for c in 0..x.ncols() {
            if self.used == self.v.ncols() {
                break;
            }
            let mut col = x.column(c).clone_owned();
            for attempt in 0..4 {
                let before = m_norm(m, col.as_slice());
                for _ in 0..2 {
                    let vb = self.v.columns(0, self.used);
                    let mvb = self.mv.columns(0, self.used);
                    let coef = mvb.transpose() * &col;
                    col -= vb * coef;
                }
                let mcol = m.mul_vec(col.as_slice());
                let after = crate::fem::dot(col.as_slice(), &mcol).max(0.0).sqrt();
                if after > 1e-8 * before && after > 0.0 {
                    col /= after;
                    let mcol = m.mul_vec(col.as_slice());
                    self.v.set_column(self.used, &col);
                    self.mv.column_mut(self.used).copy_from_slice(&mcol);
                    self.used += 1;
                    added += 1;
                    break;
                }
                if attempt == 3 {
                    break;
                }
                col = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(rng)).column(0).clone_owned();
            }
        }
        x.fill(0.0);
        added
    }

    /// Applies the operator to the pending columns and fills `H`.
    fn expand(&mut self, solver: &SpdSolver) -> Result<(), FemError> {
        let (lo, hi) = (self.done, self.used);
        if lo == hi {
            return Ok(());
        }
        let n = self.v.nrows();
        let k = hi - lo;
        let mut block = vec![0.0; n * k];
        for c in 0..k {
            for (i, &v) in self.mv.column(lo + c).iter().enumerate() {
                block[i * k + c] = v;
            }
        }
        solver.solve_many_in_place(&mut block, k)?;
        for c in 0..k {
            for i in 0..n {
                self.w[(i, lo + c)] = block[i * k + c];
            }
        }
        let coupling = self.mv.columns(0, hi).transpose() * self.w.columns(lo, k);
        for c in 0..k {
            for r in 0..hi {
                let val = coupling[(r, c)];
                if r >= lo && r < hi {
                    let avg = if r - lo < c { 0.5 * (val + self.h[(lo + c, r)]) } else { val };
                    self.h[(r, lo + c)] = avg;
                    self.h[(lo + c, r)] = avg;
                } else {
                    self.h[(r, lo + c)] = val;
                    self.h[(lo + c, r)] = val;
                }
            }
        }
        self.done = hi;
        Ok(())
    }
}

fn m_norm(m: &SparseMatrix, x: &[f64]) -> f64 {
    crate::fem::dot(x, &m.mul_vec(x)).max(0.0).sqrt()
}

struct Ritz {
    /// Descending θ, i.e. ascending λ.
    theta: Vec<f64>,
    vectors: DMatrix<f64>,
}

fn rayleigh_ritz(h: &DMatrix<f64>, used: usize) -> Ritz {
    let hh = h.view((0, 0), (used, used)).clone_owned();
    let eig = SymmetricEigen::new(hh);
    let mut order: Vec<usize> = (0..used).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let theta = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(used, used, |r, c| eig.eigenvectors[(r, order[c])]);
    Ritz { theta, vectors }
}

fn block_lanczos(
    k: &SparseMatrix,
    m: &SparseMatrix,
    nev: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs, EigError> {
    let n = k.n_rows();
    let block = opts.block_size.unwrap_or(nev.min(32)).clamp(1, n);
    let max_basis = (2 * nev + 2 * block).max(nev + 4 * block).min(n);
    let keep = (nev + block).min(max_basis.saturating_sub(block)).max(nev);
    let solver = SpdSolver::new(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut kr = Krylov {
        v: DMatrix::zeros(n, max_basis),
        mv: DMatrix::zeros(n, max_basis),
        w: DMatrix::zeros(n, max_basis),
        h: DMatrix::zeros(max_basis, max_basis),
        done: 0,
        used: 0,
    };
    let start = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut rng));
    kr.append(m, start, &mut rng);

    let mut restarts = 0;
    loop {
        kr.expand(&solver)?;
        let used = kr.used;
        if used >= nev {
            let ritz = rayleigh_ritz(&kr.h, used);
            let s = ritz.vectors.columns(0, nev);
            let y = kr.v.columns(0, used) * s;
            let my = kr.mv.columns(0, used) * s;
            let ky = k.mul_dense(&y);
            let mut converged = true;
            let mut lambdas = Vec::with_capacity(nev);
            for c in 0..nev {
                let lam = crate::fem::dot(y.column(c).as_slice(), ky.column(c).as_slice());
                let r = ky.column(c) - my.column(c) * lam;
                let yn = crate::fem::dot(y.column(c).as_slice(), my.column(c).as_slice()).sqrt();
                if !(r.norm() <= opts.tol * lam.abs() * yn) {
                    converged = false;
                }
                lambdas.push(lam);
            }
            if converged || used == n {
                let mut order: Vec<usize> = (0..nev).collect();
                order.sort_by(|&a, &b| lambdas[a].partial_cmp(&lambdas[b]).unwrap());
                let modes = DMatrix::from_fn(n, nev, |r, c| y[(r, order[c])]);
                let eigenvalues = order.iter().map(|&i| lambdas[i]).collect();
                return Ok(EigenPairs { eigenvalues, modes });
            }
            if used + block > max_basis {
                restarts += 1;
                if restarts > MAX_RESTARTS {
                    return Err(EigError::NotConverged(format!("{MAX_RESTARTS} restarts exhausted")));
                }
                // Residual block of the current factorization, then compress
                // the basis onto the leading Ritz vectors.
                let mut pending = kr.w.columns(used - block, block).clone_owned();
                for _ in 0..2 {
                    let coef = kr.mv.columns(0, used).transpose() * &pending;
                    pending -= kr.v.columns(0, used) * coef;
                }
                let s = ritz.vectors.columns(0, keep).clone_owned();
                let v = kr.v.columns(0, used) * &s;
                let mv = kr.mv.columns(0, used) * &s;
                let w = kr.w.columns(0, used) * &s;
                kr.v.columns_mut(0, keep).copy_from(&v);
                kr.mv.columns_mut(0, keep).copy_from(&mv);
                kr.w.columns_mut(0, keep).copy_from(&w);
                kr.h.fill(0.0);
                for i in 0..keep {
                    kr.h[(i, i)] = ritz.theta[i];
                }
                kr.used = keep;
                kr.done = keep;
                kr.append(m, pending, &mut rng);
                continue;
            }
        }
        let next = kr.w.columns(kr.used - block.min(kr.used), block.min(kr.used)).clone_owned();
        let added = kr.append(m, next, &mut rng);
        if added == 0 {
            return Err(EigError::NotConverged("Krylov space could not be extended".into()));
        }
    }
}

/// Dirichlet Laplacian eigenbasis of a mesh.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// Ascending `λ₁ ≤ … ≤ λ_M`.
    pub eigenvalues: Vec<f64>,
    /// `N_interior × M`, columns `M`-orthonormal.
    pub modes: DMatrix<f64>,
    pub dofs: DofMap,
    pub mesh_id: String,
}

impl EigenBasis {
    /// Assembles, restricts and solves for the `m_modes` smallest eigenpairs.
    pub fn compute(mesh: &Mesh, m_modes: usize, opts: &EigenOptions) -> Result<Self, EigError> {
        let disc = Discretization::new(mesh)?;
        Self::from_discretization(mesh, &disc, m_modes, opts)
    }

    pub fn from_discretization(
        mesh: &Mesh,
        disc: &Discretization,
        m_modes: usize,
        opts: &EigenOptions,
    ) -> Result<Self, EigError> {
        let pairs = compute_eigenpairs(&disc.stiffness_int, &disc.mass_int, m_modes, opts)?;
        Ok(EigenBasis {
            eigenvalues: pairs.eigenvalues,
            modes: pairs.modes,
            dofs: disc.dofs.clone(),
            mesh_id: mesh.content_hash(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// First `m` modes.
    pub fn truncated(&self, m: usize) -> EigenBasis {
        let m = m.min(self.n_modes());
        EigenBasis {
            eigenvalues: self.eigenvalues[..m].to_vec(),
            modes: self.modes.columns(0, m).clone_owned(),
            dofs: self.dofs.clone(),
            mesh_id: self.mesh_id.clone(),
        }
    }

    /// Mode `k` as a nodal vector, zero on the boundary.
    pub fn nodal_mode(&self, k: usize) -> Vec<f64> {
        self.dofs.extend(self.modes.column(k).as_slice())
    }

    /// `N_nodes × M` matrix of nodal mode values (boundary rows zero).
    pub fn nodal_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dofs.n_nodes(), self.n_modes());
        for (r, &node) in self.dofs.interior_to_node().iter().enumerate() {
            for c in 0..self.n_modes() {
                out[(node, c)] = self.modes[(r, c)];
            }
        }
        out
    }

    /// Hex SHA-256 over eigenvalues, modes and the source mesh hash.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"feen-basis");
        h.update(self.mesh_id.as_bytes());
        h.update((self.modes.nrows() as u64).to_le_bytes());
        h.update((self.n_modes() as u64).to_le_bytes());
        for v in &self.eigenvalues {
            h.update(v.to_le_bytes());
        }
        for v in self.modes.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// P1 interpolation of every mode at arbitrary points (`n_points × M`).
pub fn evaluate_basis_at_points(basis: &EigenBasis, mesh: &Mesh, points: &[Vec<f64>]) -> Result<DMatrix<f64>, MeshError> {
    let nodal = basis.nodal_matrix();
    let mut out = DMatrix::zeros(points.len(), basis.n_modes());
    for (p, x) in points.iter().enumerate() {
        let loc = mesh.locate_point(x)?;
        for (&v, &w) in mesh.element(loc.element).iter().zip(loc.barycentric()) {
            for c in 0..basis.n_modes() {
                out[(p, c)] += w * nodal[(v, c)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_square;

    fn orth_error(pairs: &EigenPairs, m: &SparseMatrix) -> f64 {
        let g = pairs.modes.transpose() * m.mul_dense(&pairs.modes);
        (g - DMatrix::identity(pairs.modes.ncols(), pairs.modes.ncols())).abs().max()
    }

    #[test]
    fn identity_pencil() {
        let id = SparseMatrix::identity(60);
        for method in [EigenMethod::Dense, EigenMethod::Lanczos] {
            let opts = EigenOptions { method, ..Default::default() };
            let p = compute_eigenpairs(&id, &id, 3, &opts).unwrap();
            for &l in &p.eigenvalues {
                assert!((l - 1.0).abs() < 1e-12);
            }
            assert!(orth_error(&p, &id) < 1e-12);
        }
    }

    #[test]
    fn too_many_modes() {
        let id = SparseMatrix::identity(4);
        assert!(matches!(
            compute_eigenpairs(&id, &id, 5, &EigenOptions::default()),
            Err(EigError::InsufficientDofs { requested: 5, available: 4 })
        ));
    }

    #[test]
    fn lanczos_matches_dense_on_square() {
        let mesh = generate_unit_square(17).unwrap();
        let d = Discretization::new(&mesh).unwrap();
        let dense = compute_eigenpairs(
            &d.stiffness_int,
            &d.mass_int,
            12,
            &EigenOptions { method: EigenMethod::Dense, ..Default::default() },
        )
        .unwrap();
        for block in [Some(1), Some(4), None] {
            let opts = EigenOptions { method: EigenMethod::Lanczos, block_size: block, ..Default::default() };
            let lz = compute_eigenpairs(&d.stiffness_int, &d.mass_int, 12, &opts).unwrap();
            for (a, b) in lz.eigenvalues.iter().zip(&dense.eigenvalues) {
                assert!((a - b).abs() < 1e-8 * b, "block {block:?}: {a} vs {b}");
            }
            assert!(orth_error(&lz, &d.mass_int) < 1e-10);
        }
    }

    #[test]
    fn restarts_still_converge() {
        let mesh = generate_unit_square(21).unwrap();
        let d = Discretization::new(&mesh).unwrap();
        // Block of 2 forces a small basis and repeated thick restarts.
        let opts = EigenOptions { method: EigenMethod::Lanczos, block_size: Some(2), ..Default::default() };
        let lz = compute_eigenpairs(&d.stiffness_int, &d.mass_int, 20, &opts).unwrap();
        let dense = compute_eigenpairs(&d.stiffness_int, &d.mass_int, 20, &EigenOptions { method: EigenMethod::Dense, ..Default::default() }).unwrap();
        for (a, b) in lz.eigenvalues.iter().zip(&dense.eigenvalues) {
            assert!((a - b).abs() < 1e-8 * b);
        }
    }

    #[test]
    fn sign_convention() {
        let mesh = generate_unit_square(9).unwrap();
        let basis = EigenBasis::compute(&mesh, 5, &EigenOptions::default()).unwrap();
        for col in basis.modes.column_iter() {
            let big = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn nodal_evaluation() {
        let mesh = generate_unit_square(6).unwrap();
        let basis = EigenBasis::compute(&mesh, 4, &EigenOptions::default()).unwrap();
        let interior: Vec<Vec<f64>> = basis.dofs.interior_to_node().iter().map(|&i| mesh.node(i).to_vec()).collect();
        let e = evaluate_basis_at_points(&basis, &mesh, &interior).unwrap();
        assert!((e - &basis.modes).abs().max() < 1e-14);
        let bnd: Vec<Vec<f64>> = mesh.boundary_nodes().iter().map(|&i| mesh.node(i).to_vec()).collect();
        assert!(evaluate_basis_at_points(&basis, &mesh, &bnd).unwrap().abs().max() == 0.0);
        // Midpoint of an interior edge: average of the endpoints.
        let (a, b) = (7, 8);
        let mid = vec![0.5 * (mesh.node(a)[0] + mesh.node(b)[0]), 0.5 * (mesh.node(a)[1] + mesh.node(b)[1])];
        let e = evaluate_basis_at_points(&basis, &mesh, &[mid]).unwrap();
        let nm = basis.nodal_matrix();
        for c in 0..4 {
            assert!((e[(0, c)] - 0.5 * (nm[(a, c)] + nm[(b, c)])).abs() < 1e-14);
        }
        assert!(evaluate_basis_at_points(&basis, &mesh, &[vec![2.0, 0.0]]).is_err());
    }

    fn sin_mode(mesh: &Mesh, dofs: &DofMap, m: f64, n: f64) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        dofs.interior_to_node().iter().map(|&i| {
            let x = mesh.node(i);
            (m * pi * x[0]).sin() * (n * pi * x[1]).sin()
        }).collect()
    }

    #[test]
    fn invariants_and_upper_bounds() {
        let mesh = generate_unit_square(25).unwrap();
        let d = Discretization::new(&mesh).unwrap();
        let opts = EigenOptions { method: EigenMethod::Lanczos, ..Default::default() };
        let basis = EigenBasis::from_discretization(&mesh, &d, 10, &opts).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        let mut analytic: Vec<f64> = (1..6).flat_map(|m| (1..6).map(move |n| pi2 * (m * m + n * n) as f64)).collect();
        analytic.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(basis.eigenvalues[0] > 0.0);
        for k in 0..10 {
            assert!(basis.eigenvalues[k] >= analytic[k], "mode {k}");
            if k > 0 {
                assert!(basis.eigenvalues[k] >= basis.eigenvalues[k - 1]);
            }
            let phi = basis.modes.column(k);
            let r = d.stiffness_int.mul_vec(phi.as_slice());
            let mphi = d.mass_int.mul_vec(phi.as_slice());
            let res: f64 = r.iter().zip(&mphi).map(|(a, b)| (a - basis.eigenvalues[k] * b).powi(2)).sum::<f64>().sqrt();
            assert!(res <= DEFAULT_TOL_EIG * basis.eigenvalues[k]);
        }
        let g = basis.modes.transpose() * d.mass_int.mul_dense(&basis.modes);
        assert!((g - DMatrix::identity(10, 10)).abs().max() <= 1e-8);
    }

    #[test]
    fn degenerate_pair_spans_analytic_eigenspace() {
        let mesh = generate_unit_square(33).unwrap();
        let d = Discretization::new(&mesh).unwrap();
        let basis = EigenBasis::from_discretization(&mesh, &d, 3, &EigenOptions::default()).unwrap();
        // M-orthonormalize the analytic pair, then compare subspaces.
        let a = sin_mode(&mesh, &d.dofs, 1.0, 2.0);
        let b = sin_mode(&mesh, &d.dofs, 2.0, 1.0);
        let mut q = DMatrix::from_fn(a.len(), 2, |r, c| if c == 0 { a[r] } else { b[r] });
        let gram = q.transpose() * d.mass_int.mul_dense(&q);
        let l = gram.cholesky().unwrap().l();
        q = q * l.transpose().try_inverse().unwrap();
        let u = basis.modes.columns(1, 2).clone_owned();
        let c = u.transpose() * d.mass_int.mul_dense(&q);
        let sv = c.singular_values();
        for s in sv.iter() {
            assert!(s.min(1.0).acos() < 0.05, "singular value {s}");
        }
    }

    #[test]
    fn full_spectrum_trace() {
        let mesh = generate_unit_square(8).unwrap();
        let d = Discretization::new(&mesh).unwrap();
        let n = d.dofs.n_interior();
        let basis = EigenBasis::from_discretization(&mesh, &d, n, &EigenOptions::default()).unwrap();
        let minv_k = d.mass_int.to_dense().try_inverse().unwrap() * d.stiffness_int.to_dense();
        let sum: f64 = basis.eigenvalues.iter().sum();
        assert!((sum - minv_k.trace()).abs() < 1e-9 * sum);
    }

    #[test]
    fn first_eigenvalue_converges_quadratically() {
        let target = 2.0 * std::f64::consts::PI.powi(2);
        let errs: Vec<f64> = [9, 17, 33, 65]
            .iter()
            .map(|&n| {
                let mesh = generate_unit_square(n).unwrap();
                EigenBasis::compute(&mesh, 1, &EigenOptions::default()).unwrap().eigenvalues[0] - target
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((1.7..=2.3).contains(&rate), "rate {rate}");
        }
    }
}
