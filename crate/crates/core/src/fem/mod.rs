//! P1 finite element operators: stiffness and consistent mass assembly,
//! homogeneous Dirichlet conditions by interior restriction, and SPD solves.

mod linsolve;
mod sparse;

pub use linsolve::{pcg, reverse_cuthill_mckee, solve_spd, CholeskyFactor, SpdSolver, DEFAULT_TOL};
pub(crate) use linsolve::dot;
pub use sparse::SparseMatrix;

use crate::mesh::Mesh;

/// Elements with volume below this are rejected by assembly.
pub const MIN_ELEMENT_VOLUME: f64 = 1e-14;

#[derive(Debug, thiserror::Error)]
pub enum FemError {
    #[error("element {element} is degenerate (volume {volume:e})")]
    DegenerateElement { element: usize, volume: f64 },
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Gradients of the barycentric basis functions on element `e` (row `i` is
/// ∇λᵢ) and the element volume.
fn element_gradients(mesh: &Mesh, e: usize) -> Result<([[f64; 3]; 4], f64), FemError> {
    let dim = mesh.dim();
    let conn = mesh.element(e);
    let volume = mesh.element_volume(e);
    if volume < MIN_ELEMENT_VOLUME {
        return Err(FemError::DegenerateElement { element: e, volume });
    }
    let x0 = mesh.node(conn[0]);
    let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for c in 0..dim {
        let xc = mesh.node(conn[c + 1]);
        for r in 0..dim {
            jac[(r, c)] = xc[r] - x0[r];
        }
    }
    let inv = jac.try_inverse().ok_or(FemError::DegenerateElement { element: e, volume })?;
    let mut grads = [[0.0; 3]; 4];
    for i in 0..dim {
        for d in 0..dim {
            // ∇λ_{i+1} is row i of J⁻¹.
            grads[i + 1][d] = inv[(i, d)];
            grads[0][d] -= inv[(i, d)];
        }
    }
    Ok((grads, volume))
}

/// Local P1 stiffness matrix `vol · ∇λᵢ·∇λⱼ`.
pub fn local_stiffness(mesh: &Mesh, e: usize) -> Result<Vec<f64>, FemError> {
    let dim = mesh.dim();
    let nv = dim + 1;
    let (g, vol) = element_gradients(mesh, e)?;
    let mut k = vec![0.0; nv * nv];
    for i in 0..nv {
        for j in i..nv {
            let v = vol * (0..dim).map(|d| g[i][d] * g[j][d]).sum::<f64>();
            k[i * nv + j] = v;
            k[j * nv + i] = v;
        }
    }
    Ok(k)
}

/// Local consistent mass matrix `vol/((d+1)(d+2)) · (1 + δᵢⱼ)`.
pub fn local_mass(mesh: &Mesh, e: usize) -> Result<Vec<f64>, FemError> {
    let dim = mesh.dim();
    let nv = dim + 1;
    let vol = mesh.element_volume(e);
    if vol < MIN_ELEMENT_VOLUME {
        return Err(FemError::DegenerateElement { element: e, volume: vol });
    }
    let scale = vol / ((dim + 1) * (dim + 2)) as f64;
    Ok((0..nv * nv).map(|k| if k / nv == k % nv { 2.0 * scale } else { scale }).collect())
}

fn assemble(
    mesh: &Mesh,
    local: impl Fn(&Mesh, usize) -> Result<Vec<f64>, FemError>,
) -> Result<SparseMatrix, FemError> {
    let nv = mesh.nodes_per_element();
    let mut triplets = Vec::with_capacity(mesh.n_elements() * nv * nv);
    for e in 0..mesh.n_elements() {
        let conn = mesh.element(e);
        let a = local(mesh, e)?;
        for i in 0..nv {
            for j in 0..nv {
                triplets.push((conn[i], conn[j], a[i * nv + j]));
            }
        }
    }
    let n = mesh.n_nodes();
    Ok(SparseMatrix::from_triplets(n, n, triplets))
}

/// Global stiffness matrix, the discrete `∫∇u·∇v`.
pub fn assemble_stiffness(mesh: &Mesh) -> Result<SparseMatrix, FemError> {
    assemble(mesh, local_stiffness)
}

/// Global consistent mass matrix, the discrete `∫uv`.
pub fn assemble_mass(mesh: &Mesh) -> Result<SparseMatrix, FemError> {
    assemble(mesh, local_mass)
}

/// Map between interior degrees of freedom and mesh nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    interior_to_node: Vec<usize>,
    node_to_interior: Vec<Option<usize>>,
}

impl DofMap {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let interior: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| !mesh.is_boundary(i)).collect();
        Self::from_interior(mesh.n_nodes(), interior)
    }

    /// `interior` must be strictly increasing node indices.
    pub fn from_interior(n_nodes: usize, interior: Vec<usize>) -> Self {
        let mut node_to_interior = vec![None; n_nodes];
        for (k, &i) in interior.iter().enumerate() {
            node_to_interior[i] = Some(k);
        }
        DofMap { interior_to_node: interior, node_to_interior }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_interior(n, (0..n).collect())
    }

    pub fn n_interior(&self) -> usize {
        self.interior_to_node.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_to_interior.len()
    }

    pub fn interior_to_node(&self) -> &[usize] {
        &self.interior_to_node
    }

    pub fn node_to_interior(&self, node: usize) -> Option<usize> {
        self.node_to_interior[node]
    }

    /// Interior entries of a nodal vector.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.interior_to_node.iter().map(|&i| nodal[i]).collect()
    }

    /// Nodal vector from interior values, zero on the boundary.
    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes()];
        for (&i, &v) in self.interior_to_node.iter().zip(interior) {
            out[i] = v;
        }
        out
    }
}

/// Principal submatrix of a nodal operator on the interior DOFs.
pub fn restrict_interior(a: &SparseMatrix, dofs: &DofMap) -> SparseMatrix {
    assert_eq!(a.n_rows(), dofs.n_nodes());
    a.principal_submatrix(dofs.interior_to_node(), &dofs.node_to_interior)
}

/// Assembled operators of one mesh with their interior restrictions.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub stiffness: SparseMatrix,
    pub mass: SparseMatrix,
    pub dofs: DofMap,
    pub stiffness_int: SparseMatrix,
    pub mass_int: SparseMatrix,
}

impl Discretization {
    pub fn new(mesh: &Mesh) -> Result<Self, FemError> {
        let stiffness = assemble_stiffness(mesh)?;
        let mass = assemble_mass(mesh)?;
        let dofs = DofMap::from_mesh(mesh);
        let stiffness_int = restrict_interior(&stiffness, &dofs);
        let mass_int = restrict_interior(&mass, &dofs);
        Ok(Discretization { stiffness, mass, dofs, stiffness_int, mass_int })
    }

    pub fn n_nodes(&self) -> usize {
        self.dofs.n_nodes()
    }

    pub fn n_interior(&self) -> usize {
        self.dofs.n_interior()
    }

    /// Interior part of `M u` for a nodal field `u` (boundary values included
    /// through the coupling).
    pub fn mass_times_restricted(&self, nodal: &[f64]) -> Vec<f64> {
        self.dofs.restrict(&self.mass.mul_vec(nodal))
    }
}
