use super::Mesh;

/// Barycentric slack accepted when locating points; slightly outside points
/// snap to the nearest element.
pub const TOL_BC: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLocation {
    pub element: usize,
    bary: [f64; 4],
    n: usize,
}

impl PointLocation {
    pub fn barycentric(&self) -> &[f64] {
        &self.bary[..self.n]
    }

    /// Interpolates a nodal field at the located point.
    pub fn interpolate(&self, mesh: &Mesh, nodal: &[f64]) -> f64 {
        mesh.element(self.element)
            .iter()
            .zip(self.barycentric())
            .map(|(&v, &w)| w * nodal[v])
            .sum()
    }
}

/// Uniform bucket grid over the mesh bounding box; each bucket lists the
/// elements whose bounding boxes overlap it.
#[derive(Debug)]
pub struct PointLocator {
    dim: usize,
    lo: [f64; 3],
    cell: [f64; 3],
    counts: [usize; 3],
    bucket_start: Vec<usize>,
    bucket_items: Vec<usize>,
    /// Per element: origin vertex then row-major inverse Jacobian.
    affine: Vec<f64>,
}

impl PointLocator {
    pub fn new(mesh: &Mesh) -> Self {
        let dim = mesh.dim();
        let ne = mesh.n_elements();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for d in 0..dim {
            lo[d] = f64::INFINITY;
            hi[d] = f64::NEG_INFINITY;
        }
        for i in 0..mesh.n_nodes() {
            for (d, &c) in mesh.node(i).iter().enumerate() {
                lo[d] = lo[d].min(c);
                hi[d] = hi[d].max(c);
            }
        }
        let mut extent = [1.0; 3];
        let mut vol = 1.0;
        for d in 0..dim {
            extent[d] = (hi[d] - lo[d]).max(1e-300);
            vol *= extent[d];
        }
        let target = (vol / ne.max(1) as f64).powf(1.0 / dim as f64);
        let mut counts = [1usize; 3];
        let mut cell = [1.0; 3];
        for d in 0..dim {
            counts[d] = ((extent[d] / target).ceil() as usize).clamp(1, 4096);
            cell[d] = extent[d] / counts[d] as f64;
        }

        let stride = 1 + dim + dim * dim;
        let mut affine = vec![0.0; ne * stride];
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); counts[..dim].iter().product()];
        for e in 0..ne {
            let conn = mesh.element(e);
            let x0 = mesh.node(conn[0]);
            let slot = &mut affine[e * stride..(e + 1) * stride];
            slot[1..1 + dim].copy_from_slice(x0);
            let inv = inverse_jacobian(mesh, conn);
            slot[1 + dim..].copy_from_slice(&inv[..dim * dim]);
            slot[0] = if inv[..dim * dim].iter().all(|v| v.is_finite()) { 1.0 } else { 0.0 };

            let mut blo = [0usize; 3];
            let mut bhi = [0usize; 3];
            for d in 0..dim {
                let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in conn {
                    a = a.min(mesh.node(v)[d]);
                    b = b.max(mesh.node(v)[d]);
                }
                let pad = 1e-9 * extent[d];
                blo[d] = Self::bucket_coord(a - pad, lo[d], cell[d], counts[d]);
                bhi[d] = Self::bucket_coord(b + pad, lo[d], cell[d], counts[d]);
            }
            for k in blo[2]..=bhi[2] {
                for j in blo[1]..=bhi[1] {
                    for i in blo[0]..=bhi[0] {
                        lists[i + counts[0] * (j + counts[1] * k)].push(e);
                    }
                }
            }
        }
        let mut bucket_start = Vec::with_capacity(lists.len() + 1);
        let mut bucket_items = Vec::new();
        bucket_start.push(0);
        for l in lists {
            bucket_items.extend(l);
            bucket_start.push(bucket_items.len());
        }
        PointLocator { dim, lo, cell, counts, bucket_start, bucket_items, affine }
    }

    fn bucket_coord(x: f64, lo: f64, cell: f64, count: usize) -> usize {
        let c = ((x - lo) / cell).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(count - 1)
        }
    }

    fn barycentric(&self, e: usize, x: &[f64]) -> Option<[f64; 4]> {
        let dim = self.dim;
        let stride = 1 + dim + dim * dim;
        let slot = &self.affine[e * stride..(e + 1) * stride];
        if slot[0] == 0.0 {
            return None;
        }
        let x0 = &slot[1..1 + dim];
        let inv = &slot[1 + dim..];
        let mut b = [0.0; 4];
        let mut rest = 1.0;
        for r in 0..dim {
            let mut s = 0.0;
            for c in 0..dim {
                s += inv[r * dim + c] * (x[c] - x0[c]);
            }
            b[r + 1] = s;
            rest -= s;
        }
        b[0] = rest;
        Some(b)
    }

    /// Element containing `x` (within [`TOL_BC`]) with clamped, renormalized
    /// barycentric coordinates.
    pub fn locate(&self, mesh: &Mesh, x: &[f64]) -> Option<PointLocation> {
        let dim = self.dim;
        let mut idx = [0usize; 3];
        for d in 0..dim {
            let rel = (x[d] - self.lo[d]) / self.cell[d];
            let slack = 1e-9;
            if rel < -slack || rel > self.counts[d] as f64 + slack {
                return None;
            }
            idx[d] = Self::bucket_coord(x[d], self.lo[d], self.cell[d], self.counts[d]);
        }
        let b = idx[0] + self.counts[0] * (idx[1] + self.counts[1] * idx[2]);
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for &e in &self.bucket_items[self.bucket_start[b]..self.bucket_start[b + 1]] {
            let Some(bary) = self.barycentric(e, x) else { continue };
            let worst = bary[..=dim].iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                best = Some((e, bary, worst));
                break;
            }
            if best.map_or(true, |(_, _, w)| worst > w) {
                best = Some((e, bary, worst));
            }
        }
        let (element, mut bary, worst) = best?;
        if worst < -TOL_BC {
            return None;
        }
        let mut sum = 0.0;
        for w in bary[..=dim].iter_mut() {
            *w = w.max(0.0);
            sum += *w;
        }
        for w in bary[..=dim].iter_mut() {
            *w /= sum;
        }
        debug_assert_eq!(mesh.dim(), dim);
        Some(PointLocation { element, bary, n: dim + 1 })
    }
}

/// Row-major inverse of `[x1 - x0, ..., xd - x0]` (columns are edge vectors).
fn inverse_jacobian(mesh: &Mesh, conn: &[usize]) -> [f64; 9] {
    let dim = mesh.dim();
    let x0 = mesh.node(conn[0]);
    let mut j = [[0.0; 3]; 3];
    for c in 0..dim {
        let xc = mesh.node(conn[c + 1]);
        for r in 0..dim {
            j[r][c] = xc[r] - x0[r];
        }
    }
    let mut inv = [f64::NAN; 9];
    if dim == 2 {
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            return inv;
        }
        inv[0] = j[1][1] / det;
        inv[1] = -j[0][1] / det;
        inv[2] = -j[1][0] / det;
        inv[3] = j[0][0] / det;
    } else {
        let m = nalgebra::Matrix3::from_fn(|r, c| j[r][c]);
        if let Some(mi) = m.try_inverse() {
            for r in 0..3 {
                for c in 0..3 {
                    inv[r * 3 + c] = mi[(r, c)];
                }
            }
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::super::{generate_unit_square, Mesh, MeshError};
    use super::*;

    fn reconstruct(mesh: &Mesh, loc: &PointLocation) -> Vec<f64> {
        let mut x = vec![0.0; mesh.dim()];
        for (&v, &w) in mesh.element(loc.element).iter().zip(loc.barycentric()) {
            for (d, xd) in x.iter_mut().enumerate() {
                *xd += w * mesh.node(v)[d];
            }
        }
        x
    }

    #[test]
    fn centroid_gives_equal_weights() {
        let mesh = generate_unit_square(5).unwrap();
        for e in [0, 7, 31] {
            let conn = mesh.element(e);
            let c: Vec<f64> = (0..2).map(|d| conn.iter().map(|&v| mesh.node(v)[d]).sum::<f64>() / 3.0).collect();
            let loc = mesh.locate_point(&c).unwrap();
            assert_eq!(loc.element, e);
            for &w in loc.barycentric() {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nodes_are_reproduced() {
        let mesh = generate_unit_square(9).unwrap();
        for i in 0..mesh.n_nodes() {
            let loc = mesh.locate_point(mesh.node(i)).unwrap();
            assert!(mesh.element(loc.element).contains(&i));
            let k = mesh.element(loc.element).iter().position(|&v| v == i).unwrap();
            assert!((loc.barycentric()[k] - 1.0).abs() < 1e-12);
            let x = reconstruct(&mesh, &loc);
            for d in 0..2 {
                assert!((x[d] - mesh.node(i)[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outside_points_rejected() {
        let mesh = generate_unit_square(4).unwrap();
        for p in [[1.5, 0.5], [-0.1, 0.2], [0.5, 1.0 + 1e-6]] {
            assert!(matches!(mesh.locate_point(&p), Err(MeshError::NotInDomain(_))));
        }
        // Round-off outside the frame snaps.
        assert!(mesh.locate_point(&[1.0 + 1e-13, 0.3]).is_ok());
    }

    #[test]
    fn non_convex_notch_is_outside() {
        let mesh = super::super::generate_fins(&Default::default(), 0.05).unwrap();
        // Between the first two fins, above the base.
        assert!(mesh.locate_point(&[0.5, 1.2]).is_err());
        assert!(mesh.locate_point(&[0.25, 1.2]).is_ok());
    }

    #[test]
    fn tetra_location() {
        let nodes = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mesh = Mesh::new(3, nodes, vec![0, 1, 2, 3]).unwrap();
        let loc = mesh.locate_point(&[0.1, 0.2, 0.3]).unwrap();
        let x = reconstruct(&mesh, &loc);
        assert!((x[0] - 0.1).abs() < 1e-14 && (x[1] - 0.2).abs() < 1e-14 && (x[2] - 0.3).abs() < 1e-14);
        assert!(mesh.locate_point(&[0.5, 0.5, 0.5]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn located_points_reconstruct(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let mesh = generate_unit_square(7).unwrap();
            let loc = mesh.locate_point(&[x, y]).unwrap();
            let s: f64 = loc.barycentric().iter().sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-12);
            proptest::prop_assert!(loc.barycentric().iter().all(|&w| w >= -TOL_BC));
            let r = reconstruct(&mesh, &loc);
            proptest::prop_assert!((r[0] - x).abs() < 1e-10 && (r[1] - y).abs() < 1e-10);
        }
    }
}
