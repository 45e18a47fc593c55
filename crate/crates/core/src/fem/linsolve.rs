//! Sparse SPD linear solvers: Jacobi-preconditioned conjugate gradients and a
//! direct envelope Cholesky factorization under reverse Cuthill-McKee
//! ordering, used where one operator is solved against many right-hand sides.

use std::collections::VecDeque;

use super::{FemError, SparseMatrix};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Solves `A x = b` for SPD `A` with `‖Ax − b‖₂ ≤ tol·‖b‖₂`.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>, FemError> {
    pcg(a, b, tol, 10 * a.n_rows() + 1000)
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, FemError> {
    let n = a.n_rows();
    if b.len() != n || a.n_cols() != n {
        return Err(FemError::Shape(format!("system {}x{} with rhs of length {}", n, a.n_cols(), b.len())));
    }
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = tol * b_norm;
    let mut res = b_norm;
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(FemError::NotPositiveDefinite(format!("pᵀAp = {pap:e} at CG iteration {it}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        if res <= target {
            // Confirm against the true residual; the recurrence drifts.
            a.mul_vec_into(&x, &mut ap);
            let true_res = norm(&ap.iter().zip(b).map(|(ax, bi)| bi - ax).collect::<Vec<_>>());
            if true_res <= target {
                return Ok(x);
            }
            r = ap.iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NotConverged { iterations: max_iter, residual: res / b_norm })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reverse Cuthill-McKee permutation: `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();

    let bfs_levels = |start: usize| -> (usize, usize) {
        // Returns (eccentricity, a node in the last level with minimum degree).
        let mut level = vec![usize::MAX; n];
        let mut q = VecDeque::from([start]);
        level[start] = 0;
        let mut last = (0, start);
        while let Some(u) = q.pop_front() {
            let lu = level[u];
            if lu > last.0 || (lu == last.0 && degree[u] < degree[last.1]) {
                last = (lu, u);
            }
            for &v in a.row(u).0 {
                if level[v] == usize::MAX {
                    level[v] = lu + 1;
                    q.push_back(v);
                }
            }
        }
        last
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start node (George-Liu).
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start);
        for _ in 0..8 {
            let (e2, far2) = bfs_levels(far);
            if e2 <= ecc {
                break;
            }
            start = far;
            ecc = e2;
            far = far2;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a.row(u).0.iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` stored row-wise over the envelope.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self, FemError> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return Err(FemError::Shape(format!("{}x{} matrix is not square", n, a.n_cols())));
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for &j in a.row(old).0 {
                let nj = inv[j];
                if nj < first[new] {
                    first[new] = nj;
                }
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        for i in 0..n {
            row_start.push(row_start[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; row_start[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (&j, &v) in cols.iter().zip(vals) {
                let nj = inv[j];
                if nj <= new {
                    values[row_start[new] + nj - first[new]] = v;
                }
            }
        }
        // Row-oriented (bordering) factorization.
        for i in 0..n {
            let fi = first[i];
            let base_i = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let base_j = row_start[j];
                let k0 = fi.max(fj);
                let mut s = values[base_i + j - fi];
                let li = &values[base_i + k0 - fi..base_i + j - fi];
                let lj = &values[base_j + k0 - fj..base_j + j - fj];
                s -= li.iter().zip(lj).map(|(a, b)| a * b).sum::<f64>();
                values[base_i + j - fi] = s / values[base_j + j - fj];
            }
            let row = &values[base_i..base_i + i - fi];
            let d = values[base_i + i - fi] - row.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) {
                return Err(FemError::NotPositiveDefinite(format!("pivot {d:e} at row {i}")));
            }
            values[base_i + i - fi] = d.sqrt();
        }
        Ok(CholeskyFactor { n, perm, first, row_start, values })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_many_in_place(&mut x, 1);
        x
    }

    /// Solves for a row-major block of `k` right-hand sides in place.
    pub fn solve_many_in_place(&self, rhs: &mut [f64], k: usize) {
        let n = self.n;
        assert_eq!(rhs.len(), n * k);
        let mut y = vec![0.0; n * k];
        for (new, &old) in self.perm.iter().enumerate() {
            y[new * k..(new + 1) * k].copy_from_slice(&rhs[old * k..(old + 1) * k]);
        }
        // L y = b
        for i in 0..n {
            let fi = self.first[i];
            let base = self.row_start[i];
            let (done, rest) = y.split_at_mut(i * k);
            let yi = &mut rest[..k];
            for j in fi..i {
                let l = self.values[base + j - fi];
                let yj = &done[j * k..(j + 1) * k];
                for (a, &b) in yi.iter_mut().zip(yj) {
                    *a -= l * b;
                }
            }
            let d = self.values[base + i - fi];
            yi.iter_mut().for_each(|v| *v /= d);
        }
        // Lᵀ x = y, column sweep over rows of L.
        for i in (0..n).rev() {
            let fi = self.first[i];
            let base = self.row_start[i];
            let d = self.values[base + i - fi];
            let (head, rest) = y.split_at_mut(i * k);
            let yi = &mut rest[..k];
            yi.iter_mut().for_each(|v| *v /= d);
            for j in fi..i {
                let l = self.values[base + j - fi];
                let yj = &mut head[j * k..(j + 1) * k];
                for (a, &b) in yj.iter_mut().zip(yi.iter()) {
                    *a -= l * b;
                }
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            rhs[old * k..(old + 1) * k].copy_from_slice(&y[new * k..(new + 1) * k]);
        }
    }
}

/// Envelope size above which [`SpdSolver::new`] falls back to CG.
pub const MAX_DIRECT_ENVELOPE: usize = 60_000_000;

/// A reusable solver for one SPD operator.
#[derive(Debug, Clone)]
pub enum SpdSolver {
    Direct(CholeskyFactor),
    Iterative { matrix: SparseMatrix, tol: f64 },
}

impl SpdSolver {
    /// Direct factorization when the envelope is affordable, CG otherwise.
    pub fn new(a: &SparseMatrix) -> Result<Self, FemError> {
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut envelope = 0usize;
        for (new, &old) in perm.iter().enumerate() {
            let f = a.row(old).0.iter().map(|&j| inv[j]).min().unwrap_or(new).min(new);
            envelope += new - f + 1;
        }
        if envelope <= MAX_DIRECT_ENVELOPE {
            Ok(SpdSolver::Direct(CholeskyFactor::new(a)?))
        } else {
            Ok(SpdSolver::Iterative { matrix: a.clone(), tol: DEFAULT_TOL * 1e-2 })
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdSolver::Direct(f) => f.dim(),
            SpdSolver::Iterative { matrix, .. } => matrix.n_rows(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, FemError> {
        match self {
            SpdSolver::Direct(f) => Ok(f.solve(b)),
            SpdSolver::Iterative { matrix, tol } => solve_spd(matrix, b, *tol),
        }
    }

    /// Row-major block of `k` right-hand sides, solved in place.
    pub fn solve_many_in_place(&self, rhs: &mut [f64], k: usize) -> Result<(), FemError> {
        match self {
            SpdSolver::Direct(f) => {
                f.solve_many_in_place(rhs, k);
                Ok(())
            }
            SpdSolver::Iterative { matrix, tol } => {
                let n = matrix.n_rows();
                let mut col = vec![0.0; n];
                for c in 0..k {
                    for i in 0..n {
                        col[i] = rhs[i * k + c];
                    }
                    let x = solve_spd(matrix, &col, *tol)?;
                    for i in 0..n {
                        rhs[i * k + c] = x[i];
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn laplacian_1d(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn identity_system() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(solve_spd(&SparseMatrix::identity(3), &b, 1e-12).unwrap(), b);
    }

    #[test]
    fn two_by_two() {
        let a = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let x = solve_spd(&a, &[3.0, 3.0], 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        let c = CholeskyFactor::new(&a).unwrap();
        let y = c.solve(&[3.0, 3.0]);
        assert!((y[0] - 1.0).abs() < 1e-14 && (y[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        assert_eq!(solve_spd(&laplacian_1d(5), &[0.0; 5], 1e-10).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn not_converged_reports_iterations() {
        let a = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        match pcg(&a, &b, 1e-14, 3) {
            Err(FemError::NotConverged { iterations: 3, residual }) => assert!(residual > 1e-14),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(CholeskyFactor::new(&a), Err(FemError::NotPositiveDefinite(_))));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_1d(17);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }

    proptest::proptest! {
        #[test]
        fn direct_and_iterative_agree(seed in 0u64..200, n in 2usize..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // Random sparse SPD: graph Laplacian plus a positive diagonal.
            let mut t = Vec::new();
            for i in 0..n {
                t.push((i, i, rng.gen_range(0.1..1.0)));
                for _ in 0..2 {
                    let j = rng.gen_range(0..n);
                    if j != i {
                        let w = rng.gen_range(0.1..2.0);
                        t.extend_from_slice(&[(i, i, w), (j, j, w), (i, j, -w), (j, i, -w)]);
                    }
                }
            }
            let a = SparseMatrix::from_triplets(n, n, t);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x_cg = solve_spd(&a, &b, 1e-12).unwrap();
            let chol = CholeskyFactor::new(&a).unwrap();
            let x_ch = chol.solve(&b);
            let r: Vec<f64> = a.mul_vec(&x_ch).iter().zip(&b).map(|(p, q)| p - q).collect();
            proptest::prop_assert!(norm(&r) <= 1e-12 * norm(&b).max(1e-300));
            for (p, q) in x_cg.iter().zip(&x_ch) {
                proptest::prop_assert!((p - q).abs() <= 1e-8 * (1.0 + q.abs()));
            }
            // Block solve equals column-by-column solve bit for bit.
            let mut block: Vec<f64> = b.iter().flat_map(|&v| [v, 2.0 * v]).collect();
            chol.solve_many_in_place(&mut block, 2);
            for i in 0..n {
                proptest::prop_assert_eq!(block[2 * i], x_ch[i]);
            }
        }
    }
}
