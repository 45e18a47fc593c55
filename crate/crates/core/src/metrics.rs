//! Relative L² / H¹ errors by mesh quadrature and the evaluation studies.
//!
//! Nodal vectors are read as P1 functions, so `‖e‖²_{L²} = eᵀMe` and
//! `‖e‖²_{H¹} = eᵀ(M+K)e`. Off-mesh query points are integrated on a
//! triangulation of the points themselves.

use serde::{Deserialize, Serialize};

use crate::eig::{EigenBasis, EigenOptions, EigError};
use crate::fem::{Discretization, FemError};
use crate::learn::{self, BranchModel, LearnError, QueryEval, TrainConfig};
use crate::mesh::{Mesh, MeshError, PointLocation};
use crate::sim::Dataset;
use crate::spectral;

pub const ZERO_REFERENCE: f64 = 1e-14;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("query grid cannot be triangulated: {0}")]
    Triangulation(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Eig(#[from] EigError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    pub rel_l2: f64,
    pub rel_h1: f64,
}

/// Relative errors using the full (boundary-inclusive) mass and stiffness.
pub fn relative_errors(disc: &Discretization, u_true: &[f64], u_pred: &[f64]) -> Result<RelativeErrors, MetricsError> {
    let n = disc.n_nodes();
    for len in [u_true.len(), u_pred.len()] {
        if len != n {
            return Err(MetricsError::Length { expected: n, got: len });
        }
    }
    let e: Vec<f64> = u_pred.iter().zip(u_true).map(|(p, t)| p - t).collect();
    let ref_l2 = disc.mass.bilinear(u_true, u_true);
    let ref_h1 = ref_l2 + disc.stiffness.bilinear(u_true, u_true);
    if ref_l2 < ZERO_REFERENCE || ref_h1 < ZERO_REFERENCE {
        return Err(MetricsError::ZeroReference);
    }
    let el2 = disc.mass.bilinear(&e, &e);
    let eh1 = el2 + disc.stiffness.bilinear(&e, &e);
    Ok(RelativeErrors { rel_l2: (el2 / ref_l2).max(0.0).sqrt(), rel_h1: (eh1 / ref_h1).max(0.0).sqrt() })
}

pub fn relative_errors_on_mesh(mesh: &Mesh, u_true: &[f64], u_pred: &[f64]) -> Result<RelativeErrors, MetricsError> {
    relative_errors(&Discretization::new(mesh)?, u_true, u_pred)
}

/// Held-out errors; per-sample values are snapshot averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rel_l2: f64,
    pub rel_h1: f64,
    pub samples: Vec<usize>,
    pub per_sample_l2: Vec<f64>,
    pub per_sample_h1: Vec<f64>,
    pub n_points: usize,
    /// How snapshot errors were combined.
    pub aggregation: String,
}

impl ErrorReport {
    fn from_samples(samples: Vec<usize>, l2: Vec<f64>, h1: Vec<f64>, n_points: usize) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        ErrorReport {
            rel_l2: mean(&l2),
            rel_h1: mean(&h1),
            samples,
            per_sample_l2: l2,
            per_sample_h1: h1,
            n_points,
            aggregation: "uniform mean over snapshots, then over samples".into(),
        }
    }
}

/// Point set with the triangulation used to integrate over it.
#[derive(Debug)]
pub struct QueryGrid {
    pub mesh: Mesh,
}

impl QueryGrid {
    /// The training mesh itself.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        QueryGrid { mesh: mesh.clone() }
    }

    /// `levels` uniform refinements of the mesh (each halves the spacing).
    pub fn refined(mesh: &Mesh, levels: usize) -> Result<Self, MetricsError> {
        let mut m = mesh.clone();
        for _ in 0..levels {
            m = m.refine_uniform()?;
        }
        Ok(QueryGrid { mesh: m })
    }

    /// Delaunay triangulation of planar points. Zero-area triangles from
    /// collinear hull points are dropped.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, MetricsError> {
        if points.iter().any(|p| p.len() != 2) {
            return Err(MetricsError::Triangulation("only planar point sets are supported".into()));
        }
        let pts: Vec<delaunator::Point> = points.iter().map(|p| delaunator::Point { x: p[0], y: p[1] }).collect();
        let tri = delaunator::triangulate(&pts);
        if tri.triangles.is_empty() {
            return Err(MetricsError::Triangulation("points are collinear".into()));
        }
        let (lo, hi) = points.iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        });
        let tol = 1e-12 * (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let mut elements = Vec::with_capacity(tri.triangles.len());
        for t in tri.triangles.chunks_exact(3) {
            let (a, b, c) = (&points[t[0]], &points[t[1]], &points[t[2]]);
            let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
            if area.abs() > tol {
                elements.extend_from_slice(t);
            }
        }
        let nodes = points.iter().flatten().copied().collect();
        Ok(QueryGrid { mesh: Mesh::new(2, nodes, elements)? })
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.mesh.n_nodes()).map(|i| self.mesh.node(i).to_vec()).collect()
    }

    pub fn n_points(&self) -> usize {
        self.mesh.n_nodes()
    }
}

fn f_coeffs(model: &BranchModel, basis: &EigenBasis, disc: &Discretization, dataset: &Dataset, i: usize) -> Option<Vec<f64>> {
    (model.rule.kind == spectral::RuleKind::HeatForcedOde).then(|| spectral::project(basis, &disc.mass, dataset.f(i)))
}

/// Held-out errors at the training nodes.
pub fn evaluate_model(
    model: &BranchModel,
    basis: &EigenBasis,
    disc: &Discretization,
    dataset: &Dataset,
    samples: &[usize],
) -> Result<ErrorReport, MetricsError> {
    let query = QueryEval::at_nodes(model, basis);
    let (mut l2, mut h1) = (Vec::new(), Vec::new());
    for &i in samples {
        let fk = f_coeffs(model, basis, disc, dataset, i);
        let (mut a, mut b) = (0.0, 0.0);
        let ns = dataset.n_snapshots();
        for j in 0..ns {
            let u = learn::forward(model, learn::sensor_input(dataset, i), dataset.time(j), fk.as_deref(), &query)?;
            let r = relative_errors(disc, dataset.output(i, j), &u)?;
            a += r.rel_l2;
            b += r.rel_h1;
        }
        l2.push(a / ns as f64);
        h1.push(b / ns as f64);
    }
    Ok(ErrorReport::from_samples(samples.to_vec(), l2, h1, disc.n_nodes()))
}

/// Held-out errors on a query grid. Predictions use the basis evaluated at
/// the grid points; references are P1 interpolants of the ground truth.
pub fn evaluate_on_grid(
    model: &BranchModel,
    basis: &EigenBasis,
    mesh: &Mesh,
    disc: &Discretization,
    dataset: &Dataset,
    samples: &[usize],
    grid: &QueryGrid,
) -> Result<ErrorReport, MetricsError> {
    let points = grid.points();
    let query = QueryEval::at_points(model, basis, mesh, &points)?;
    let locations: Vec<PointLocation> = points.iter().map(|x| mesh.locate_point(x)).collect::<Result<_, _>>()?;
    let grid_disc = Discretization::new(&grid.mesh)?;
    let (mut l2, mut h1) = (Vec::new(), Vec::new());
    for &i in samples {
        let fk = f_coeffs(model, basis, disc, dataset, i);
        let (mut a, mut b) = (0.0, 0.0);
        let ns = dataset.n_snapshots();
        for j in 0..ns {
            let u = learn::forward(model, learn::sensor_input(dataset, i), dataset.time(j), fk.as_deref(), &query)?;
            let truth = dataset.output(i, j);
            let t: Vec<f64> = locations.iter().map(|loc| loc.interpolate(mesh, truth)).collect();
            let r = relative_errors(&grid_disc, &t, &u)?;
            a += r.rel_l2;
            b += r.rel_h1;
        }
        l2.push(a / ns as f64);
        h1.push(b / ns as f64);
    }
    Ok(ErrorReport::from_samples(samples.to_vec(), l2, h1, points.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub m: usize,
    pub n_points: usize,
    pub rel_l2: f64,
    pub rel_h1: f64,
}

/// Same trained model evaluated on each grid, without retraining.
#[allow(clippy::too_many_arguments)]
pub fn resolution_study(
    model: &BranchModel,
    basis: &EigenBasis,
    mesh: &Mesh,
    disc: &Discretization,
    dataset: &Dataset,
    samples: &[usize],
    grids: &[QueryGrid],
) -> Result<Vec<StudyRow>, MetricsError> {
    grids
        .iter()
        .map(|g| {
            let r = evaluate_on_grid(model, basis, mesh, disc, dataset, samples, g)?;
            Ok(StudyRow { m: model.n_modes(), n_points: r.n_points, rel_l2: r.rel_l2, rel_h1: r.rel_h1 })
        })
        .collect()
}

/// One independently trained model per mode count, evaluated on its
/// held-out split; sorted by `M`.
pub fn mode_count_study(
    mesh: &Mesh,
    disc: &Discretization,
    dataset: &Dataset,
    m_values: &[usize],
    config: &TrainConfig,
    eig_opts: &EigenOptions,
) -> Result<Vec<StudyRow>, MetricsError> {
    let mut ms = m_values.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let Some(&m_max) = ms.last() else { return Ok(Vec::new()) };
    let full = EigenBasis::from_discretization(mesh, disc, m_max, eig_opts)?;
    let mut rows = Vec::with_capacity(ms.len());
    for m in ms {
        let basis = full.truncated(m);
        let (fit, _) = learn::fit(dataset, &basis, &disc.mass, config)?;
        let r = evaluate_model(&fit.model, &basis, disc, dataset, &fit.test_samples)?;
        rows.push(StudyRow { m, n_points: r.n_points, rel_l2: r.rel_l2, rel_h1: r.rel_h1 });
    }
    Ok(rows)
}

/// One line of a CSV error report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub problem: String,
    pub geometry: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub n_points: usize,
    pub rel_l2: f64,
    pub rel_h1: f64,
    pub seed: u64,
}

pub fn write_report_csv<W: std::io::Write>(rows: &[ReportRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn format_report_text(rows: &[ReportRow]) -> String {
    let mut s = format!("{:<17} {:<10} {:>5} {:>9} {:>12} {:>12} {:>8}\n", "problem", "geometry", "M", "n_points", "rel_l2", "rel_h1", "seed");
    for r in rows {
        s += &format!(
            "{:<17} {:<10} {:>5} {:>9} {:>12.4e} {:>12.4e} {:>8}\n",
            r.problem, r.geometry, r.m, r.n_points, r.rel_l2, r.rel_h1, r.seed
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::{compute_cutoff_field, GrfSpec};
    use crate::learn::{init_model, Normalizer};
    use crate::mesh::generate_unit_square;
    use crate::sim::{build_dataset, ProblemSpec};
    use crate::spectral::ReconstructionRule;
    use proptest::prelude::*;

    #[test]
    fn trivial_cases() {
        let mesh = generate_unit_square(9).unwrap();
        let disc = Discretization::new(&mesh).unwrap();
        let u: Vec<f64> = (0..81).map(|i| mesh.node(i)[0] * (1.0 - mesh.node(i)[0]) * mesh.node(i)[1]).collect();
        assert_eq!(relative_errors(&disc, &u, &u).unwrap(), RelativeErrors { rel_l2: 0.0, rel_h1: 0.0 });
        let two: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        let r = relative_errors(&disc, &u, &two).unwrap();
        assert!((r.rel_l2 - 1.0).abs() < 1e-14 && (r.rel_h1 - 1.0).abs() < 1e-14);
        assert!(matches!(relative_errors(&disc, &[0.0; 81], &u), Err(MetricsError::ZeroReference)));
        assert!(matches!(relative_errors(&disc, &u, &[0.0; 3]), Err(MetricsError::Length { .. })));
    }

    #[test]
    fn orthogonal_perturbation() {
        let mesh = generate_unit_square(17).unwrap();
        let basis = EigenBasis::compute(&mesh, 2, &EigenOptions::default()).unwrap();
        let (p1, p2) = (basis.nodal_mode(0), basis.nodal_mode(1));
        let pred: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + 0.1 * b).collect();
        let r = relative_errors_on_mesh(&mesh, &p1, &pred).unwrap();
        let (l1, l2) = (basis.eigenvalues[0], basis.eigenvalues[1]);
        assert!((r.rel_l2 - 0.1).abs() < 1e-10);
        assert!((r.rel_h1 - 0.1 * ((1.0 + l2) / (1.0 + l1)).sqrt()).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scale_invariance_and_h1_dominance(
            t in prop::collection::vec(-1.0f64..1.0, 25),
            p in prop::collection::vec(-1.0f64..1.0, 25),
            alpha in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        ) {
            let mesh = generate_unit_square(5).unwrap();
            let disc = Discretization::new(&mesh).unwrap();
            let r = relative_errors(&disc, &t, &p).unwrap();
            let ts: Vec<f64> = t.iter().map(|v| alpha * v).collect();
            let ps: Vec<f64> = p.iter().map(|v| alpha * v).collect();
            let s = relative_errors(&disc, &ts, &ps).unwrap();
            prop_assert!((r.rel_l2 - s.rel_l2).abs() <= 1e-12 * r.rel_l2.max(1.0));
            prop_assert!((r.rel_h1 - s.rel_h1).abs() <= 1e-12 * r.rel_h1.max(1.0));
            // Energy norm dominates the L² norm for non-zero errors.
            let e: Vec<f64> = p.iter().zip(&t).map(|(a, b)| a - b).collect();
            let el2 = disc.mass.bilinear(&e, &e);
            prop_assert!(el2 + disc.stiffness.bilinear(&e, &e) > el2);
        }
    }

    fn small_model(mesh: &Mesh, disc: &Discretization, m: usize) -> (BranchModel, EigenBasis, Dataset) {
        let basis = EigenBasis::from_discretization(mesh, disc, m, &EigenOptions::default()).unwrap();
        let cut = compute_cutoff_field(mesh).unwrap();
        let ds = build_dataset(mesh, &cut, &ProblemSpec::poisson(), &GrfSpec { n_modes: 64, ..GrfSpec::new(15.0, 0.3, 2) }, 6).unwrap();
        let mut model = init_model(mesh.n_nodes(), m, ReconstructionRule::poisson(), 1);
        model.bind(&basis).unwrap();
        learn::fit_normalizers(&mut model, &ds, &[0, 1, 2, 3], (learn::NormMode::Zscore, learn::NormMode::Zscore));
        (model, basis, ds)
    }

    #[test]
    fn training_grid_reproduces_nodal_errors() {
        let mesh = generate_unit_square(9).unwrap();
        let disc = Discretization::new(&mesh).unwrap();
        let (model, basis, ds) = small_model(&mesh, &disc, 6);
        let direct = evaluate_model(&model, &basis, &disc, &ds, &[4, 5]).unwrap();
        let rows = resolution_study(&model, &basis, &mesh, &disc, &ds, &[4, 5], &[QueryGrid::from_mesh(&mesh)]).unwrap();
        assert!((rows[0].rel_l2 - direct.rel_l2).abs() <= 1e-10);
        assert!((rows[0].rel_h1 - direct.rel_h1).abs() <= 1e-10);
        assert_eq!(rows[0].n_points, 81);
    }

    #[test]
    fn zero_model_is_grid_independent() {
        let mesh = generate_unit_square(9).unwrap();
        let disc = Discretization::new(&mesh).unwrap();
        let (mut model, basis, ds) = small_model(&mesh, &disc, 6);
        model.weights.fill(0.0);
        model.output_normalizer = Normalizer::identity(81);
        let grids = [QueryGrid::from_mesh(&mesh), QueryGrid::refined(&mesh, 1).unwrap(), QueryGrid::refined(&mesh, 2).unwrap()];
        let rows = resolution_study(&model, &basis, &mesh, &disc, &ds, &[4, 5], &grids).unwrap();
        for r in &rows {
            assert!((r.rel_l2 - 1.0).abs() < 1e-12, "{r:?}");
        }
        assert_eq!(rows.iter().map(|r| r.n_points).collect::<Vec<_>>(), vec![81, 289, 1089]);
    }

    #[test]
    fn scattered_points_are_triangulated() {
        let pts: Vec<Vec<f64>> = (0..7).flat_map(|i| (0..7).map(move |j| vec![i as f64 / 6.0, j as f64 / 6.0])).collect();
        let g = QueryGrid::from_points(&pts).unwrap();
        assert!((g.mesh.total_volume() - 1.0).abs() < 1e-12);
        assert!(QueryGrid::from_points(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn mode_study_table() {
        let mesh = generate_unit_square(6).unwrap();
        let disc = Discretization::new(&mesh).unwrap();
        let (_, _, ds) = small_model(&mesh, &disc, 3);
        let cfg = TrainConfig { iterations: 10, batch_size: 2, learning_rate: 1e-3, ..Default::default() };
        let rows = mode_count_study(&mesh, &disc, &ds, &[8, 3], &cfg, &EigenOptions::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.m).collect::<Vec<_>>(), vec![3, 8]);
        assert_eq!(mode_count_study(&mesh, &disc, &ds, &[4], &cfg, &EigenOptions::default()).unwrap().len(), 1);
    }

    #[test]
    fn csv_schema() {
        let row = ReportRow { problem: "poisson".into(), geometry: "square".into(), m: 100, n_points: 1225, rel_l2: 0.01, rel_h1: 0.05, seed: 0 };
        let mut buf = Vec::new();
        write_report_csv(&[row], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "problem,geometry,M,n_points,rel_l2,rel_h1,seed");
        assert!(format_report_text(&[]).starts_with("problem"));
    }
}
