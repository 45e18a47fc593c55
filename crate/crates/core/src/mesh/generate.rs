use serde::{Deserialize, Serialize};

use super::{read_msh, Mesh, MeshError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    UnitSquare,
    Fins,
    ExternalFile,
}

/// Rectangle with evenly spaced rectangular fins standing on its top edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinsParams {
    pub base_width: f64,
    pub base_height: f64,
    pub fin_count: usize,
    pub fin_width: f64,
    pub fin_length: f64,
}

impl Default for FinsParams {
    fn default() -> Self {
        FinsParams { base_width: 2.0, base_height: 1.0, fin_count: 4, fin_width: 0.1, fin_length: 0.5 }
    }
}

impl FinsParams {
    /// Horizontal extents `(left, right)` of each fin.
    pub fn fin_spans(&self) -> Vec<(f64, f64)> {
        let pitch = self.base_width / self.fin_count.max(1) as f64;
        (0..self.fin_count)
            .map(|i| {
                let c = (i as f64 + 0.5) * pitch;
                (c - 0.5 * self.fin_width, c + 0.5 * self.fin_width)
            })
            .collect()
    }

    pub fn area(&self) -> f64 {
        self.base_width * self.base_height + self.fin_count as f64 * self.fin_width * self.fin_length
    }

    fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: &str| Err(MeshError::InvalidGeometry(m.to_string()));
        if !(self.base_width > 0.0 && self.base_height > 0.0) {
            return bad("base rectangle must have positive width and height");
        }
        if self.fin_count == 0 {
            return Ok(());
        }
        if !(self.fin_width > 0.0 && self.fin_length > 0.0) {
            return bad("fins must have positive width and length");
        }
        // Adjacent fins (and the outer fins and the base corners) must be separated.
        if self.fin_width >= self.base_width / self.fin_count as f64 {
            return bad("fins overlap or reach the base corners");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    /// Target element size `h`.
    pub resolution: f64,
    #[serde(default)]
    pub fins: Option<FinsParams>,
    #[serde(default)]
    pub path: Option<String>,
}

impl GeometrySpec {
    pub fn unit_square(resolution: f64) -> Self {
        GeometrySpec { kind: GeometryKind::UnitSquare, resolution, fins: None, path: None }
    }

    pub fn fins(resolution: f64, params: FinsParams) -> Self {
        GeometrySpec { kind: GeometryKind::Fins, resolution, fins: Some(params), path: None }
    }
}

/// Builds the mesh described by a [`GeometrySpec`].
pub fn generate(spec: &GeometrySpec) -> Result<Mesh, MeshError> {
    match spec.kind {
        GeometryKind::UnitSquare => {
            if !(spec.resolution > 0.0) {
                return Err(MeshError::InvalidGeometry("resolution must be positive".into()));
            }
            // Tolerance keeps h = 1/k from rounding up to k + 1 cells.
            let n = (1.0 / spec.resolution - 1e-9).ceil() as usize + 1;
            generate_unit_square(n)
        }
        GeometryKind::Fins => generate_fins(&spec.fins.unwrap_or_default(), spec.resolution),
        GeometryKind::ExternalFile => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| MeshError::InvalidGeometry("external_file geometry needs a path".into()))?;
            read_msh(path)
        }
    }
}

/// Structured triangulation of `[0,1]^2` with `n_per_side` nodes per side.
/// Each cell is split along its lower-left to upper-right diagonal.
pub fn generate_unit_square(n_per_side: usize) -> Result<Mesh, MeshError> {
    if n_per_side < 2 {
        return Err(MeshError::InvalidGeometry(format!(
            "unit square needs at least 2 nodes per side, got {n_per_side}"
        )));
    }
    let n = n_per_side;
    let step = 1.0 / (n - 1) as f64;
    let coord = |i: usize| if i == n - 1 { 1.0 } else { i as f64 * step };
    let mut nodes = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            nodes.push(coord(i));
            nodes.push(coord(j));
        }
    }
    let mut elements = Vec::with_capacity(6 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let v00 = i + j * n;
            let v10 = v00 + 1;
            let v01 = v00 + n;
            let v11 = v01 + 1;
            elements.extend_from_slice(&[v00, v10, v11, v00, v11, v01]);
        }
    }
    Mesh::new(2, nodes, elements)
}

/// Splits `[a, b]` into equal pieces no longer than `h`, returning interior
/// breakpoints and `b` (but not `a`).
fn subdivide(a: f64, b: f64, h: f64, out: &mut Vec<f64>) {
    let pieces = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
    for k in 1..pieces {
        out.push(a + (b - a) * k as f64 / pieces as f64);
    }
    out.push(b);
}

/// Conforming triangulation of the fins polygon on a rectilinear grid whose
/// lines pass through every polygon corner, refined so no cell edge exceeds
/// `h`. Cells are split like [`generate_unit_square`].
pub fn generate_fins(params: &FinsParams, h: f64) -> Result<Mesh, MeshError> {
    if !(h > 0.0) {
        return Err(MeshError::InvalidGeometry("resolution must be positive".into()));
    }
    params.validate()?;
    let spans = params.fin_spans();
    let (w, hb) = (params.base_width, params.base_height);

    let mut breaks = vec![0.0, w];
    for &(l, r) in &spans {
        breaks.push(l);
        breaks.push(r);
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut xs = vec![0.0];
    for pair in breaks.windows(2) {
        subdivide(pair[0], pair[1], h, &mut xs);
    }
    let mut ys = vec![0.0];
    subdivide(0.0, hb, h, &mut ys);
    let n_base_rows = ys.len() - 1;
    if !spans.is_empty() {
        subdivide(hb, hb + params.fin_length, h, &mut ys);
    }

    let (nx, ny) = (xs.len(), ys.len());
    let inside = |ci: usize, cj: usize| -> bool {
        if cj < n_base_rows {
            return true;
        }
        let xc = 0.5 * (xs[ci] + xs[ci + 1]);
        spans.iter().any(|&(l, r)| xc > l && xc < r)
    };

    let grid_id = |i: usize, j: usize| i + j * nx;
    let mut node_of = vec![usize::MAX; nx * ny];
    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    let mut id = |i: usize, j: usize, nodes: &mut Vec<f64>| -> usize {
        let g = grid_id(i, j);
        if node_of[g] == usize::MAX {
            node_of[g] = nodes.len() / 2;
            nodes.push(xs[i]);
            nodes.push(ys[j]);
        }
        node_of[g]
    };
    for cj in 0..ny - 1 {
        for ci in 0..nx - 1 {
            if !inside(ci, cj) {
                continue;
            }
            let v00 = id(ci, cj, &mut nodes);
            let v10 = id(ci + 1, cj, &mut nodes);
            let v01 = id(ci, cj + 1, &mut nodes);
            let v11 = id(ci + 1, cj + 1, &mut nodes);
            elements.extend_from_slice(&[v00, v10, v11, v00, v11, v01]);
        }
    }
    Mesh::new(2, nodes, elements)
}
