use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use feenet::container::{self, file_hash, FeenContainer};
use feenet::eig::{EigenBasis, EigenOptions};
use feenet::mesh::generate_unit_square;

fn feenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feenet")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = feenet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    feenet(dir, args).status.code().unwrap()
}

fn csv_column(path: &Path, col: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == col).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

/// Small square pipeline up to a trained model.
fn pipeline(dir: &Path, problem: &str) {
    ok(dir, &["mesh", "--geometry", "square", "--n", "9", "-o", "mesh.feen"]);
    ok(dir, &["eigen", "--mesh", "mesh.feen", "--modes", "12", "-o", "basis.feen"]);
    ok(dir, &["data", "--mesh", "mesh.feen", "--problem", problem, "--samples", "12", "--grf-modes", "64", "--seed", "3", "--snapshots", "0.5,1.0", "-o", "data.feen"]);
    ok(dir, &["train", "--mesh", "mesh.feen", "--basis", "basis.feen", "--data", "data.feen", "--iterations", "300", "--batch-size", "8", "--lr", "1e-3", "-o", "model.feen"]);
}

#[test]
fn mesh_command() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["mesh", "--geometry", "square", "--n", "35", "-o", "m.feen"]);
    assert!(out.contains("nodes 1225"), "{out}");
    assert_eq!(code(d.path(), &["mesh", "--geometry", "square", "--n", "1", "-o", "x.feen"]), 2);
    assert!(!d.path().join("x.feen").exists());

    ok(d.path(), &["mesh", "--geometry", "fins", "--fins", "0", "--resolution", "0.25", "-o", "rect.feen"]);
    let mesh = container::mesh_from_container(&FeenContainer::read(d.path().join("rect.feen")).unwrap()).unwrap();
    assert!((mesh.total_volume() - 2.0).abs() < 1e-12);

    // Fin wider than its pitch.
    assert_eq!(code(d.path(), &["mesh", "--geometry", "fins", "--fin-width", "0.9", "-o", "bad.feen"]), 3);
    assert_eq!(code(d.path(), &["mesh", "--geometry", "file", "--path", "missing.msh", "-o", "f.feen"]), 3);
    assert_eq!(code(d.path(), &["mesh", "--geometry", "nope", "-o", "f.feen"]), 2);
    assert_eq!(code(d.path(), &["frobnicate"]), 2);

    let js = ok(d.path(), &["--json", "mesh", "--n", "5", "-o", "j.feen", "--export-vtk", "j.vtk"]);
    let v: serde_json::Value = serde_json::from_str(&js).unwrap();
    assert_eq!(v["nodes"], 25);
    assert_eq!(v["boundary_nodes"], 16);
    assert!(std::fs::read_to_string(d.path().join("j.vtk")).unwrap().starts_with("# vtk DataFile Version 3.0"));
}

#[test]
fn msh_file_geometry() {
    let d = tempfile::tempdir().unwrap();
    let msh = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$Nodes\n1 4 1 4\n2 1 0 4\n1\n2\n3\n4\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n$EndNodes\n$Elements\n1 2 1 2\n2 1 2 2\n1 1 2 3\n2 1 3 4\n$EndElements\n";
    std::fs::write(d.path().join("sq.msh"), msh).unwrap();
    let out = ok(d.path(), &["mesh", "--geometry", "file", "--path", "sq.msh", "-o", "m.feen"]);
    assert!(out.contains("nodes 4"));
}

#[test]
fn eigen_command() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["mesh", "--n", "65", "-o", "m.feen"]);
    let js = ok(d.path(), &["--json", "eigen", "--mesh", "m.feen", "--modes", "10", "-o", "b.feen"]);
    let v: serde_json::Value = serde_json::from_str(&js).unwrap();
    let l1 = v["eigenvalues"][0].as_f64().unwrap();
    let exact = 2.0 * std::f64::consts::PI.powi(2);
    assert!(l1 >= exact && l1 <= 1.02 * exact, "{l1}");
    ok(d.path(), &["eigen", "--mesh", "m.feen", "--modes", "10", "-o", "b2.feen"]);
    assert_eq!(file_hash(d.path().join("b.feen")).unwrap(), file_hash(d.path().join("b2.feen")).unwrap());

    ok(d.path(), &["mesh", "--n", "4", "-o", "tiny.feen"]);
    let out = feenet(d.path(), &["eigen", "--mesh", "tiny.feen", "--modes", "5", "-o", "t.feen"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4"));
}

#[test]
fn pipeline_and_reports() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    pipeline(p, "poisson");
    let hist = p.join("model.feen.loss.csv");
    let iters = csv_column(&hist, "iteration");
    assert_eq!(iters, vec![0.0, 100.0, 200.0, 299.0]);

    ok(p, &["eval", "--mesh", "mesh.feen", "--basis", "basis.feen", "--data", "data.feen", "--model", "model.feen", "--csv", "r.csv"]);
    let text = std::fs::read_to_string(p.join("r.csv")).unwrap();
    assert!(text.starts_with("problem,geometry,M,n_points,rel_l2,rel_h1,seed\npoisson,square,12,81,"), "{text}");

    ok(p, &["study", "resolution", "--mesh", "mesh.feen", "--basis", "basis.feen", "--data", "data.feen", "--model", "model.feen", "--levels", "0,1", "--csv", "s.csv"]);
    assert_eq!(csv_column(&p.join("s.csv"), "n_points"), vec![81.0, 289.0]);
    let l2 = csv_column(&p.join("s.csv"), "rel_l2");
    assert!((l2[0] - csv_column(&p.join("r.csv"), "rel_l2")[0]).abs() < 1e-10);

    ok(p, &["study", "modes", "--mesh", "mesh.feen", "--data", "data.feen", "--modes", "8,4", "--iterations", "50", "--batch-size", "8", "--csv", "m.csv"]);
    assert_eq!(csv_column(&p.join("m.csv"), "M"), vec![4.0, 8.0]);
}

#[test]
fn predict_boundary_points_are_zero() {
    for problem in ["poisson", "heat_homogeneous", "heat_forced"] {
        let d = tempfile::tempdir().unwrap();
        let p = d.path();
        pipeline(p, problem);
        std::fs::write(p.join("q.csv"), "x,y,t\n0,0.5,0.5\n1,0.25,1.0\n0.3,0,0.5\n0.5,0.5,1.0\n0.7,1,0.5\n").unwrap();
        ok(p, &["predict", "--mesh", "mesh.feen", "--basis", "basis.feen", "--model", "model.feen", "--data", "data.feen", "--sample", "1", "--points", "q.csv", "-o", "pred.csv"]);
        let u = csv_column(&p.join("pred.csv"), "u");
        assert_eq!(u.len(), 5);
        for i in [0, 1, 2, 4] {
            assert_eq!(u[i], 0.0, "{problem}: point {i}");
        }
        assert!(u[3] != 0.0);
        assert_eq!(code(p, &["predict", "--mesh", "mesh.feen", "--basis", "basis.feen", "--model", "model.feen", "--data", "data.feen", "--sample", "99", "-o", "x.csv"]), 2);
        std::fs::write(p.join("out.csv"), "x,y\n2,2\n").unwrap();
        assert_eq!(code(p, &["predict", "--mesh", "mesh.feen", "--basis", "basis.feen", "--model", "model.feen", "--data", "data.feen", "--sample", "1", "--points", "out.csv", "--time", "1", "-o", "x.csv"]), 2);
    }
}

#[test]
fn nodal_predict_with_vtk() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    pipeline(p, "heat_homogeneous");
    ok(p, &["predict", "--mesh", "mesh.feen", "--basis", "basis.feen", "--model", "model.feen", "--data", "data.feen", "--sample", "0", "--time", "0.5", "-o", "n.csv", "--export-vtk", "n.vtk"]);
    assert_eq!(csv_column(&p.join("n.csv"), "u").len(), 81);
    assert!(p.join("n.vtk").exists());
    // Heat models need a time.
    assert_eq!(code(p, &["predict", "--mesh", "mesh.feen", "--basis", "basis.feen", "--model", "model.feen", "--data", "data.feen", "--sample", "0", "-o", "n.csv"]), 2);
}

#[test]
fn apply_g_inverse_of_first_mode() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["mesh", "--n", "17", "-o", "mesh.feen"]);
    ok(p, &["eigen", "--mesh", "mesh.feen", "--modes", "6", "-o", "basis.feen"]);
    let mesh = generate_unit_square(17).unwrap();
    let basis = EigenBasis::compute(&mesh, 6, &EigenOptions::default()).unwrap();
    let phi = basis.nodal_mode(0);
    let body: String = std::iter::once("value\n".to_string()).chain(phi.iter().map(|v| format!("{v:e}\n"))).collect();
    std::fs::write(p.join("phi.csv"), body).unwrap();
    ok(p, &["apply-g", "--mesh", "mesh.feen", "--basis", "basis.feen", "--function", "pow:-1", "--input", "phi.csv", "-o", "out.csv"]);
    let out = csv_column(&p.join("out.csv"), "value");
    for (o, f) in out.iter().zip(&phi) {
        assert!((o - f / basis.eigenvalues[0]).abs() < 1e-12);
    }
    assert_eq!(code(p, &["apply-g", "--mesh", "mesh.feen", "--basis", "basis.feen", "--function", "cube", "--input", "phi.csv", "-o", "o.csv"]), 2);
}

#[test]
fn stale_artifacts_are_refused() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    pipeline(p, "poisson");
    ok(p, &["mesh", "--n", "10", "-o", "other.feen"]);
    ok(p, &["eigen", "--mesh", "other.feen", "--modes", "12", "-o", "other_basis.feen"]);
    // Dataset from the 9×9 mesh against a basis of the 10×10 mesh.
    assert_eq!(code(p, &["train", "--mesh", "mesh.feen", "--basis", "other_basis.feen", "--data", "data.feen", "-o", "x.feen"]), 5);
    assert_eq!(code(p, &["train", "--mesh", "other.feen", "--basis", "other_basis.feen", "--data", "data.feen", "-o", "x.feen"]), 5);
    assert_eq!(code(p, &["eval", "--mesh", "mesh.feen", "--basis", "basis.feen", "--data", "data.feen", "--model", "x.feen"]), 1);
    // Model bound to a different basis.
    ok(p, &["eigen", "--mesh", "mesh.feen", "--modes", "12", "--tol", "1e-6", "--method", "lanczos", "--block-size", "2", "-o", "basis2.feen"]);
    let b1 = file_hash(p.join("basis.feen")).unwrap();
    let b2 = file_hash(p.join("basis2.feen")).unwrap();
    if b1 != b2 {
        assert_eq!(code(p, &["eval", "--mesh", "mesh.feen", "--basis", "basis2.feen", "--data", "data.feen", "--model", "model.feen"]), 5);
    }
    // Corrupted payload.
    let mut bytes = std::fs::read(p.join("data.feen")).unwrap();
    let n = bytes.len();
    bytes[n - 8] ^= 0x40;
    std::fs::write(p.join("bad.feen"), bytes).unwrap();
    assert_eq!(code(p, &["train", "--mesh", "mesh.feen", "--basis", "basis.feen", "--data", "bad.feen", "-o", "x.feen"]), 5);
}

#[test]
fn non_finite_loss_exit_code() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["mesh", "--n", "6", "-o", "mesh.feen"]);
    ok(p, &["eigen", "--mesh", "mesh.feen", "--modes", "4", "-o", "basis.feen"]);
    ok(p, &["data", "--mesh", "mesh.feen", "--problem", "poisson", "--samples", "4", "--grf-modes", "16", "-o", "data.feen"]);
    let out = feenet(p, &["train", "--mesh", "mesh.feen", "--basis", "basis.feen", "--data", "data.feen", "--iterations", "5", "--lr", "1e308", "-o", "m.feen"]);
    assert_eq!(out.status.code(), Some(6), "{}", String::from_utf8_lossy(&out.stderr));
}

fn hashes(dir: &Path, names: &[&str]) -> Vec<String> {
    names.iter().map(|n| file_hash(dir.join(n)).unwrap()).collect()
}

#[test]
fn seeded_commands_are_bit_reproducible() {
    let files = ["mesh.feen", "basis.feen", "data.feen", "model.feen", "model.feen.loss.csv"];
    let runs: Vec<Vec<String>> = (0..2)
        .map(|_| {
            let d = tempfile::tempdir().unwrap();
            pipeline(d.path(), "heat_forced");
            hashes(d.path(), &files)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/square_poisson_small.json")
}

#[test]
fn run_from_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = config_path();
    let cfg = cfg.to_str().unwrap();
    let out = ok(d.path(), &["run", "--config", cfg, "--output-dir", "a"]);
    assert!(out.contains("poisson"), "{out}");
    ok(d.path(), &["run", "--config", cfg, "--output-dir", "b"]);
    let files = ["mesh.feen", "basis.feen", "data.feen", "model.feen", "loss.csv", "report.csv"];
    assert_eq!(hashes(&d.path().join("a"), &files), hashes(&d.path().join("b"), &files));

    let text = std::fs::read_to_string(config_path()).unwrap().replacen("\"modes\"", "\"mdoes\": 3, \"modes\"", 1);
    std::fs::write(d.path().join("bad.json"), text).unwrap();
    assert_eq!(code(d.path(), &["run", "--config", "bad.json"]), 2);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "json") {
            feenet::cli::load_run_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
