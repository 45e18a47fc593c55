//! Simplicial meshes (triangles in 2D, tetrahedra in 3D).
//!
//! A [`Mesh`] owns flat node and element arrays, detects its boundary from
//! facet incidence and carries a lazily built point locator for queries at
//! arbitrary coordinates.

mod generate;
mod locate;
mod msh;

use std::collections::HashMap;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

pub use generate::{generate, generate_fins, generate_unit_square, FinsParams, GeometryKind, GeometrySpec};
pub use locate::{PointLocation, PointLocator, TOL_BC};
pub use msh::{parse_msh, read_msh};

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("mesh dimension must be 2 or 3, got {0}")]
    InvalidDimension(usize),
    #[error("element {element} references node {node}, but the mesh has {n_nodes} nodes")]
    IndexOutOfRange { element: usize, node: usize, n_nodes: usize },
    #[error("malformed array: {0}")]
    Shape(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported element type {element_type}")]
    UnsupportedElement { line: usize, element_type: i64 },
    #[error("point {0:?} is not inside the domain")]
    NotInDomain(Vec<f64>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Signed volume of a simplex given its vertex coordinates (`dim + 1` rows of
/// `dim` coordinates). Positive for counter-clockwise triangles and
/// right-handed tetrahedra.
pub fn signed_volume(dim: usize, verts: &[&[f64]]) -> f64 {
    match dim {
        2 => {
            let (a, b, c) = (verts[0], verts[1], verts[2]);
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
        3 => {
            let a = verts[0];
            let u = [verts[1][0] - a[0], verts[1][1] - a[1], verts[1][2] - a[2]];
            let v = [verts[2][0] - a[0], verts[2][1] - a[1], verts[2][2] - a[2]];
            let w = [verts[3][0] - a[0], verts[3][1] - a[1], verts[3][2] - a[2]];
            let det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
                + u[2] * (v[0] * w[1] - v[1] * w[0]);
            det / 6.0
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

#[derive(Debug)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<f64>,
    elements: Vec<usize>,
    boundary: Vec<usize>,
    on_boundary: Vec<bool>,
    locator: OnceLock<PointLocator>,
}

impl Clone for Mesh {
    fn clone(&self) -> Self {
        Mesh {
            dim: self.dim,
            nodes: self.nodes.clone(),
            elements: self.elements.clone(),
            boundary: self.boundary.clone(),
            on_boundary: self.on_boundary.clone(),
            locator: OnceLock::new(),
        }
    }
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.nodes == other.nodes && self.elements == other.elements
    }
}

impl Mesh {
    /// Builds a mesh from flat coordinate (`dim` per node) and connectivity
    /// (`dim + 1` per element) arrays.
    ///
    /// Elements with negative signed volume are reoriented by swapping their
    /// first two vertices. Zero-volume elements are kept as given; assembly
    /// rejects them.
    pub fn new(dim: usize, nodes: Vec<f64>, mut elements: Vec<usize>) -> Result<Self, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::InvalidDimension(dim));
        }
        if nodes.len() % dim != 0 {
            return Err(MeshError::Shape(format!(
                "{} coordinates is not a multiple of dimension {dim}",
                nodes.len()
            )));
        }
        let nv = dim + 1;
        if elements.len() % nv != 0 {
            return Err(MeshError::Shape(format!(
                "{} element indices is not a multiple of {nv}",
                elements.len()
            )));
        }
        let n_nodes = nodes.len() / dim;
        for (e, conn) in elements.chunks(nv).enumerate() {
            if let Some(&node) = conn.iter().find(|&&i| i >= n_nodes) {
                return Err(MeshError::IndexOutOfRange { element: e, node, n_nodes });
            }
        }
        for conn in elements.chunks_mut(nv) {
            let verts: Vec<&[f64]> = conn.iter().map(|&i| &nodes[i * dim..(i + 1) * dim]).collect();
            if signed_volume(dim, &verts) < 0.0 {
                conn.swap(0, 1);
            }
        }
        let boundary = detect_boundary(dim, n_nodes, &elements);
        let mut on_boundary = vec![false; n_nodes];
        for &b in &boundary {
            on_boundary[b] = true;
        }
        Ok(Mesh { dim, nodes, elements, boundary, on_boundary, locator: OnceLock::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    /// Vertices per element.
    pub fn nodes_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[e * nv..(e + 1) * nv]
    }

    pub fn coordinates(&self) -> &[f64] {
        &self.nodes
    }

    pub fn connectivity(&self) -> &[usize] {
        &self.elements
    }

    /// Sorted indices of nodes on the domain boundary.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.on_boundary[node]
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        let verts: Vec<&[f64]> = self.element(e).iter().map(|&i| self.node(i)).collect();
        signed_volume(self.dim, &verts)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_volume(e)).sum()
    }

    /// Hex SHA-256 over dimension, coordinates and connectivity.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"feen-mesh");
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.n_nodes() as u64).to_le_bytes());
        for x in &self.nodes {
            h.update(x.to_le_bytes());
        }
        for &i in &self.elements {
            h.update((i as i64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn locator(&self) -> &PointLocator {
        self.locator.get_or_init(|| PointLocator::new(self))
    }

    /// Finds an element containing `x` with its barycentric coordinates.
    pub fn locate_point(&self, x: &[f64]) -> Result<PointLocation, MeshError> {
        if x.len() != self.dim {
            return Err(MeshError::Shape(format!(
                "query point has {} coordinates, mesh dimension is {}",
                x.len(),
                self.dim
            )));
        }
        self.locator().locate(self, x).ok_or_else(|| MeshError::NotInDomain(x.to_vec()))
    }

    /// Uniform refinement: every triangle split into four through edge
    /// midpoints. Only implemented for 2D meshes.
    pub fn refine_uniform(&self) -> Result<Mesh, MeshError> {
        if self.dim != 2 {
            return Err(MeshError::InvalidDimension(self.dim));
        }
        let mut nodes = self.nodes.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<f64>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let id = nodes.len() / 2;
                let x = 0.5 * (nodes[2 * a] + nodes[2 * b]);
                let y = 0.5 * (nodes[2 * a + 1] + nodes[2 * b + 1]);
                nodes.push(x);
                nodes.push(y);
                id
            })
        };
        let mut elements = Vec::with_capacity(self.elements.len() * 4);
        for e in 0..self.n_elements() {
            let t = self.element(e);
            let (a, b, c) = (t[0], t[1], t[2]);
            let ab = midpoint(a, b, &mut nodes);
            let bc = midpoint(b, c, &mut nodes);
            let ca = midpoint(c, a, &mut nodes);
            elements.extend_from_slice(&[a, ab, ca, ab, b, bc, ca, bc, c, ab, bc, ca]);
        }
        Mesh::new(2, nodes, elements)
    }
}

/// Nodes incident to a facet that belongs to exactly one element.
fn detect_boundary(dim: usize, n_nodes: usize, elements: &[usize]) -> Vec<usize> {
    let nv = dim + 1;
    let mut count: HashMap<[usize; 3], u32> = HashMap::with_capacity(elements.len());
    for conn in elements.chunks(nv) {
        for skip in 0..nv {
            let mut key = [usize::MAX; 3];
            let mut k = 0;
            for (j, &v) in conn.iter().enumerate() {
                if j != skip {
                    key[k] = v;
                    k += 1;
                }
            }
            key[..dim].sort_unstable();
            *count.entry(key).or_insert(0) += 1;
        }
    }
    let mut flag = vec![false; n_nodes];
    for (key, c) in count {
        if c == 1 {
            for &v in &key[..dim] {
                flag[v] = true;
            }
        }
    }
    flag.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}
