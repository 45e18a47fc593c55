//! Command-line pipeline: mesh → eigenbasis → dataset → model → reports.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::container::{self, ContainerError, FeenContainer};
use crate::eig::{EigError, EigenBasis, EigenMethod, EigenOptions, DEFAULT_TOL_EIG};
use crate::fem::{Discretization, FemError};
use crate::grf::{compute_cutoff_field, GrfError, GrfSpec, DEFAULT_GRF_MODES};
use crate::learn::{self, BranchModel, LearnError, QueryEval, TrainConfig};
use crate::mesh::{self, FinsParams, GeometryKind, GeometrySpec, Mesh, MeshError};
use crate::metrics::{self, MetricsError, QueryGrid, ReportRow};
use crate::sim::{build_dataset, Dataset, ProblemKind, ProblemSpec, SimError};
use crate::spectral::{self, SpectralError, SpectralFunction};
use crate::vtk::write_vtk;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_GEOMETRY: i32 = 3;
pub const EXIT_EIGEN: i32 = 4;
pub const EXIT_HASH: i32 = 5;
pub const EXIT_NON_FINITE: i32 = 6;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_FAILURE, e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::usage(format!("CSV input: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::usage(format!("JSON: {e}"))
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        let code = match e {
            ContainerError::HashMismatch { .. } => EXIT_HASH,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        let code = match e {
            MeshError::NotInDomain(_) | MeshError::Shape(_) => EXIT_USAGE,
            _ => EXIT_GEOMETRY,
        };
        Self::new(code, e.to_string())
    }
}

impl From<FemError> for CliError {
    fn from(e: FemError) -> Self {
        Self::new(EXIT_GEOMETRY, e.to_string())
    }
}

impl From<EigError> for CliError {
    fn from(e: EigError) -> Self {
        let code = match e {
            EigError::InsufficientDofs { .. } => EXIT_USAGE,
            _ => EXIT_EIGEN,
        };
        Self::new(code, e.to_string())
    }
}

impl From<GrfError> for CliError {
    fn from(e: GrfError) -> Self {
        let code = match e {
            GrfError::InvalidSpec(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Grf(g) => g.into(),
            SimError::InvalidSpec(_) | SimError::Length { .. } => Self::usage(e.to_string()),
            _ => Self::new(EXIT_FAILURE, e.to_string()),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        let code = match e {
            LearnError::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            LearnError::MeshMismatch { .. } => EXIT_HASH,
            LearnError::InvalidConfig(_) | LearnError::ShapeMismatch(_) | LearnError::Spectral(_) => EXIT_USAGE,
            LearnError::Mesh(m) => return m.into(),
        };
        Self::new(code, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Learn(l) => l.into(),
            MetricsError::Eig(x) => x.into(),
            MetricsError::Mesh(m) => m.into(),
            MetricsError::ZeroReference => Self::usage(e.to_string()),
            other => Self::new(EXIT_FAILURE, other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "feenet", version, about = "Finite element eigenfunction networks")]
pub struct Cli {
    /// Print reports as JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or import a mesh.
    Mesh(MeshArgs),
    /// Compute the Laplacian eigenbasis of a mesh.
    Eigen(EigenArgs),
    /// Sample input fields and solve for ground truth.
    Data(DataArgs),
    /// Train a branch model.
    Train(TrainArgs),
    /// Held-out relative errors of a model.
    Eval(EvalArgs),
    /// Predict at mesh nodes or query points.
    Predict(PredictArgs),
    /// Resolution and mode-count studies.
    Study(StudyArgs),
    /// Apply g(L) to a nodal field through the eigenbasis.
    ApplyG(ApplyGArgs),
    /// Run mesh, eigen, data, train and eval from a JSON config.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeometryArg {
    Square,
    Fins,
    File,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long, value_enum, default_value = "square")]
    pub geometry: GeometryArg,
    /// Nodes per side of the unit square.
    #[arg(long)]
    pub n: Option<usize>,
    /// Target element size.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Number of fins.
    #[arg(long)]
    pub fins: Option<usize>,
    #[arg(long)]
    pub fin_width: Option<f64>,
    #[arg(long)]
    pub fin_length: Option<f64>,
    #[arg(long)]
    pub base_width: Option<f64>,
    #[arg(long)]
    pub base_height: Option<f64>,
    /// Gmsh MSH file for `--geometry file`.
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub export_vtk: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Args)]
pub struct EigenOpts {
    #[arg(long, default_value_t = DEFAULT_TOL_EIG)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Seed of the Lanczos start block.
    #[arg(long, default_value_t = EigenOptions::default().seed)]
    pub eigen_seed: u64,
}

impl EigenOpts {
    fn options(&self) -> EigenOptions {
        let method = match self.method {
            MethodArg::Auto => EigenMethod::Auto,
            MethodArg::Dense => EigenMethod::Dense,
            MethodArg::Lanczos => EigenMethod::Lanczos,
        };
        EigenOptions { tol: self.tol, method, block_size: self.block_size, seed: self.eigen_seed }
    }
}

#[derive(Debug, Args)]
pub struct EigenArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub modes: usize,
    #[command(flatten)]
    pub eig: EigenOpts,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Export up to ten modes.
    #[arg(long)]
    pub export_vtk: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub problem: ProblemKind,
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 15.0)]
    pub variance: f64,
    #[arg(long, default_value_t = 0.3)]
    pub length_scale: f64,
    #[arg(long, default_value_t = DEFAULT_GRF_MODES)]
    pub grf_modes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub diffusivity: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<f64>>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Export the fields of sample 0.
    #[arg(long)]
    pub export_vtk: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 4e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed: self.seed,
            train_fraction: self.train_fraction,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Loss history CSV; defaults to `<output>.loss.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Samples to evaluate; `test` needs the dataset the model was trained on.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FieldSource {
    /// Nodal field CSV (one value per row, optional header).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Take the input from a dataset sample instead.
    #[arg(long, requires = "sample")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: FieldSource,
    /// Forcing field CSV for the forced heat problem.
    #[arg(long)]
    pub forcing: Option<PathBuf>,
    /// Query points CSV with columns x[,y[,z]][,t]; mesh nodes if omitted.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Time for heat problems when the points carry none.
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Nodal predictions only.
    #[arg(long)]
    pub export_vtk: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(subcommand)]
    pub kind: StudyKind,
}

#[derive(Debug, Subcommand)]
pub enum StudyKind {
    /// Evaluate one model on uniformly refined query grids.
    Resolution(ResolutionArgs),
    /// Train one model per mode count.
    Modes(ModesArgs),
}

#[derive(Debug, Args)]
pub struct ResolutionArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Refinement levels; level k halves the spacing k times.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub levels: Vec<usize>,
    /// Query point CSVs triangulated as extra grids.
    #[arg(long = "grid")]
    pub grids: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<usize>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub eig: EigenOpts,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyGArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    /// `identity`, `pow:<a>` or `exp-scale:<a>`.
    #[arg(long)]
    pub function: SpectralFunction,
    #[command(flatten)]
    pub source: FieldSource,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub export_vtk: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

/// Whole-pipeline configuration for `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub problem: ProblemSpec,
    pub grf: GrfSpec,
    pub modes: usize,
    pub samples: usize,
    pub train: TrainConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "feenet-run".into()
}

/// Result of a command: human-readable text and the JSON equivalent.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub json: Value,
}

/// Parses arguments, runs the command, prints the report and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(report) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report.json).expect("report serializes"));
            } else {
                print!("{}", report.text);
            }
            EXIT_OK
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({"error": e.message, "exit_code": e.code}));
            }
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: &Command) -> Result<Report, CliError> {
    match command {
        Command::Mesh(a) => cmd_mesh(a),
        Command::Eigen(a) => cmd_eigen(a),
        Command::Data(a) => cmd_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Study(StudyArgs { kind: StudyKind::Resolution(a) }) => cmd_study_resolution(a),
        Command::Study(StudyArgs { kind: StudyKind::Modes(a) }) => cmd_study_modes(a),
        Command::ApplyG(a) => cmd_apply_g(a),
        Command::Run(a) => cmd_run(a),
    }
}

fn geometry_name(kind: GeometryKind) -> &'static str {
    match kind {
        GeometryKind::UnitSquare => "square",
        GeometryKind::Fins => "fins",
        GeometryKind::ExternalFile => "file",
    }
}

fn geometry_spec(a: &MeshArgs) -> Result<GeometrySpec, CliError> {
    match a.geometry {
        GeometryArg::Square => {
            if let Some(n) = a.n {
                if n < 2 {
                    return Err(CliError::usage(format!("--n must be at least 2, got {n}")));
                }
                return Ok(GeometrySpec::unit_square(1.0 / (n - 1) as f64));
            }
            let h = a.resolution.unwrap_or(1.0 / 34.0);
            if !(h > 0.0) {
                return Err(CliError::usage("--resolution must be positive"));
            }
            Ok(GeometrySpec::unit_square(h))
        }
        GeometryArg::Fins => {
            let d = FinsParams::default();
            let p = FinsParams {
                base_width: a.base_width.unwrap_or(d.base_width),
                base_height: a.base_height.unwrap_or(d.base_height),
                fin_count: a.fins.unwrap_or(d.fin_count),
                fin_width: a.fin_width.unwrap_or(d.fin_width),
                fin_length: a.fin_length.unwrap_or(d.fin_length),
            };
            let h = a.resolution.unwrap_or(0.05);
            if !(h > 0.0) {
                return Err(CliError::usage("--resolution must be positive"));
            }
            Ok(GeometrySpec::fins(h, p))
        }
        GeometryArg::File => {
            let path = a.path.as_ref().ok_or_else(|| CliError::usage("--geometry file needs --path"))?;
            Ok(GeometrySpec { kind: GeometryKind::ExternalFile, resolution: 0.0, fins: None, path: Some(path.display().to_string()) })
        }
    }
}

fn build_mesh(spec: &GeometrySpec) -> Result<Mesh, CliError> {
    let mesh = mesh::generate(spec)?;
    // Every geometry must assemble before it is written.
    Discretization::new(&mesh)?;
    Ok(mesh)
}

fn save_mesh(mesh: &Mesh, spec: &GeometrySpec, path: &Path) -> Result<(), CliError> {
    let extra = json!({ "geometry": geometry_name(spec.kind), "geometry_spec": spec });
    container::mesh_to_container(mesh, extra)?.write(path)?;
    Ok(())
}

fn mesh_report(mesh: &Mesh, output: &Path) -> Report {
    let j = json!({
        "command": "mesh",
        "nodes": mesh.n_nodes(),
        "elements": mesh.n_elements(),
        "boundary_nodes": mesh.boundary_nodes().len(),
        "content_hash": mesh.content_hash(),
        "output": output.display().to_string(),
    });
    let text = format!(
        "nodes {}\nelements {}\nboundary nodes {}\nwrote {}\n",
        mesh.n_nodes(),
        mesh.n_elements(),
        mesh.boundary_nodes().len(),
        output.display()
    );
    Report { text, json: j }
}

fn export_vtk(path: &Path, mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vtk(mesh, fields, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_mesh(a: &MeshArgs) -> Result<Report, CliError> {
    let spec = geometry_spec(a)?;
    let mesh = build_mesh(&spec)?;
    save_mesh(&mesh, &spec, &a.output)?;
    if let Some(p) = &a.export_vtk {
        let b: Vec<f64> = (0..mesh.n_nodes()).map(|i| if mesh.is_boundary(i) { 1.0 } else { 0.0 }).collect();
        export_vtk(p, &mesh, &[("boundary", &b)])?;
    }
    Ok(mesh_report(&mesh, &a.output))
}

struct LoadedMesh {
    mesh: Mesh,
    geometry: String,
}

fn load_mesh(path: &Path) -> Result<LoadedMesh, CliError> {
    let c = FeenContainer::read(path)?;
    let mesh = container::mesh_from_container(&c)?;
    let geometry = c.meta()?["geometry"].as_str().unwrap_or("unknown").to_string();
    Ok(LoadedMesh { mesh, geometry })
}

fn load_basis(path: &Path, mesh: &Mesh) -> Result<EigenBasis, CliError> {
    let basis = container::basis_from_container(&FeenContainer::read(path)?)?;
    container::check_hash("mesh", &mesh.content_hash(), &basis.mesh_id)?;
    Ok(basis)
}

fn load_dataset(path: &Path, mesh: &Mesh) -> Result<(Dataset, Value), CliError> {
    let c = FeenContainer::read(path)?;
    let ds = container::dataset_from_container(&c)?;
    container::check_hash("mesh", &mesh.content_hash(), &ds.mesh_id)?;
    Ok((ds, c.meta()?))
}

fn load_model(path: &Path, basis: &EigenBasis) -> Result<(BranchModel, Value), CliError> {
    let c = FeenContainer::read(path)?;
    let model = container::model_from_container(&c)?;
    container::check_hash("basis", &basis.content_hash(), &model.basis_id)?;
    Ok((model, c.meta()?))
}

fn eigen_report(basis: &EigenBasis, output: &Path) -> Report {
    let first: Vec<f64> = basis.eigenvalues.iter().take(5).copied().collect();
    let mut text = format!("modes {}\n", basis.n_modes());
    for (k, l) in first.iter().enumerate() {
        text += &format!("lambda_{} {:.10e}\n", k + 1, l);
    }
    text += &format!("wrote {}\n", output.display());
    Report {
        text,
        json: json!({
            "command": "eigen",
            "modes": basis.n_modes(),
            "eigenvalues": first,
            "content_hash": basis.content_hash(),
            "output": output.display().to_string(),
        }),
    }
}

pub fn cmd_eigen(a: &EigenArgs) -> Result<Report, CliError> {
    let m = load_mesh(&a.mesh)?;
    let opts = a.eig.options();
    let basis = EigenBasis::compute(&m.mesh, a.modes, &opts)?;
    container::basis_to_container(&basis, json!({ "options": { "tol": opts.tol, "seed": opts.seed } }))?.write(&a.output)?;
    if let Some(p) = &a.export_vtk {
        let modes: Vec<Vec<f64>> = (0..basis.n_modes().min(10)).map(|k| basis.nodal_mode(k)).collect();
        let names: Vec<String> = (0..modes.len()).map(|k| format!("phi_{}", k + 1)).collect();
        let fields: Vec<(&str, &[f64])> = names.iter().map(|s| s.as_str()).zip(modes.iter().map(|v| v.as_slice())).collect();
        export_vtk(p, &m.mesh, &fields)?;
    }
    Ok(eigen_report(&basis, &a.output))
}

fn problem_spec(a: &DataArgs) -> ProblemSpec {
    let mut spec = if a.problem.is_heat() { ProblemSpec::heat(a.problem) } else { ProblemSpec::poisson() };
    if let Some(d) = a.diffusivity {
        spec.diffusivity = d;
    }
    if let Some(t) = a.t_final {
        spec.t_final = t;
    }
    if let Some(dt) = a.dt {
        spec.dt = dt;
    }
    if let Some(s) = &a.snapshots {
        spec.snapshot_times = s.clone();
    }
    spec
}

fn make_dataset(mesh: &Mesh, spec: &ProblemSpec, grf: &GrfSpec, samples: usize) -> Result<Dataset, CliError> {
    if samples == 0 {
        return Err(CliError::usage("--samples must be at least 1"));
    }
    grf.validate()?;
    if spec.problem.is_heat() {
        spec.schedule()?;
    }
    let cutoff = compute_cutoff_field(mesh)?;
    Ok(build_dataset(mesh, &cutoff, spec, grf, samples)?)
}

fn save_dataset(ds: &Dataset, geometry: &str, path: &Path) -> Result<(), CliError> {
    container::dataset_to_container(ds, json!({ "geometry": geometry }))?.write(path)?;
    Ok(())
}

fn data_report(ds: &Dataset, output: &Path) -> Report {
    Report {
        text: format!(
            "problem {}\nsamples {}\nsnapshots {}\nwrote {}\n",
            ds.problem.problem.name(),
            ds.n_samples,
            ds.n_snapshots(),
            output.display()
        ),
        json: json!({
            "command": "data",
            "problem": ds.problem.problem.name(),
            "samples": ds.n_samples,
            "snapshots": ds.n_snapshots(),
            "content_hash": ds.content_hash(),
            "output": output.display().to_string(),
        }),
    }
}

pub fn cmd_data(a: &DataArgs) -> Result<Report, CliError> {
    let m = load_mesh(&a.mesh)?;
    let spec = problem_spec(a);
    let grf = GrfSpec { variance: a.variance, length_scale: a.length_scale, n_modes: a.grf_modes, seed: a.seed };
    let ds = make_dataset(&m.mesh, &spec, &grf, a.samples)?;
    save_dataset(&ds, &m.geometry, &a.output)?;
    if let Some(p) = &a.export_vtk {
        let mut fields: Vec<(String, &[f64])> = Vec::new();
        if !ds.inputs_u0.is_empty() {
            fields.push(("u0".into(), ds.u0(0)));
        }
        if !ds.inputs_f.is_empty() {
            fields.push(("f".into(), ds.f(0)));
        }
        for j in 0..ds.n_snapshots() {
            let name = match ds.time(j) {
                Some(t) => format!("u_t{t}"),
                None => "u".into(),
            };
            fields.push((name, ds.output(0, j)));
        }
        let f: Vec<(&str, &[f64])> = fields.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        export_vtk(p, &m.mesh, &f)?;
    }
    Ok(data_report(&ds, &a.output))
}

struct Trained {
    fit: learn::FitResult,
}

fn train_model(mesh: &Mesh, basis: &EigenBasis, ds: &Dataset, config: &TrainConfig) -> Result<Trained, CliError> {
    let disc = Discretization::new(mesh)?;
    let (fit, _) = learn::fit(ds, basis, &disc.mass, config)?;
    Ok(Trained { fit })
}

fn save_model(t: &Trained, ds: &Dataset, geometry: &str, config: &TrainConfig, path: &Path, history: &Path) -> Result<(), CliError> {
    let extra = json!({
        "geometry": geometry,
        "problem": ds.problem.problem.name(),
        "dataset_hash": ds.content_hash(),
        "mesh_hash": ds.mesh_id,
        "train_config": config,
        "train_samples": t.fit.train_samples,
        "test_samples": t.fit.test_samples,
        "initial_mse": t.fit.report.initial_mse,
        "final_mse": t.fit.report.final_mse,
    });
    container::model_to_container(&t.fit.model, extra)?.write(path)?;
    let mut w = csv::Writer::from_path(history)?;
    w.write_record(["iteration", "loss"])?;
    for (it, loss) in &t.fit.report.history {
        w.write_record([it.to_string(), format!("{loss:e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn default_history(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn train_report(t: &Trained, output: &Path, history: &Path) -> Report {
    let r = &t.fit.report;
    Report {
        text: format!(
            "train samples {}\ntest samples {}\ninitial mse {:.6e}\nfinal mse {:.6e}\nwrote {}\nwrote {}\n",
            t.fit.train_samples.len(),
            t.fit.test_samples.len(),
            r.initial_mse,
            r.final_mse,
            output.display(),
            history.display()
        ),
        json: json!({
            "command": "train",
            "train_samples": t.fit.train_samples.len(),
            "test_samples": t.fit.test_samples.len(),
            "initial_mse": r.initial_mse,
            "final_mse": r.final_mse,
            "history": r.history,
            "output": output.display().to_string(),
            "history_csv": history.display().to_string(),
        }),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<Report, CliError> {
    let m = load_mesh(&a.mesh)?;
    let basis = load_basis(&a.basis, &m.mesh)?;
    let (ds, _) = load_dataset(&a.data, &m.mesh)?;
    let config = a.train.config();
    let t = train_model(&m.mesh, &basis, &ds, &config)?;
    let history = a.history.clone().unwrap_or_else(|| default_history(&a.output));
    save_model(&t, &ds, &m.geometry, &config, &a.output, &history)?;
    Ok(train_report(&t, &a.output, &history))
}

fn usize_list(v: &Value) -> Option<Vec<usize>> {
    v.as_array()?.iter().map(|x| x.as_u64().map(|u| u as usize)).collect()
}

fn select_samples(split: SplitArg, ds: &Dataset, model_meta: &Value) -> Result<Vec<usize>, CliError> {
    if split == SplitArg::All {
        return Ok((0..ds.n_samples).collect());
    }
    if model_meta["dataset_hash"].as_str() != Some(&ds.content_hash()) {
        return Err(CliError::usage("the model was not trained on this dataset; use --split all"));
    }
    let key = if split == SplitArg::Test { "test_samples" } else { "train_samples" };
    usize_list(&model_meta[key]).ok_or_else(|| CliError::new(EXIT_FAILURE, format!("model metadata lacks `{key}`")))
}

fn report_rows(problem: &str, geometry: &str, m: usize, seed: u64, rows: &[(usize, f64, f64)]) -> Vec<ReportRow> {
    rows.iter()
        .map(|&(n_points, rel_l2, rel_h1)| ReportRow {
            problem: problem.into(),
            geometry: geometry.into(),
            m,
            n_points,
            rel_l2,
            rel_h1,
            seed,
        })
        .collect()
}

fn rows_report(command: &str, rows: &[ReportRow], csv_path: Option<&Path>) -> Result<Report, CliError> {
    if let Some(p) = csv_path {
        metrics::write_report_csv(rows, BufWriter::new(File::create(p)?))?;
    }
    Ok(Report {
        text: metrics::format_report_text(rows),
        json: json!({
            "command": command,
            "rows": rows,
            "aggregation": "uniform mean over snapshots, then over samples",
        }),
    })
}

fn train_seed(meta: &Value) -> u64 {
    meta["train_config"]["seed"].as_u64().unwrap_or(0)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Report, CliError> {
    let m = load_mesh(&a.mesh)?;
    let basis = load_basis(&a.basis, &m.mesh)?;
    let (ds, _) = load_dataset(&a.data, &m.mesh)?;
    let (model, meta) = load_model(&a.model, &basis)?;
    let samples = select_samples(a.split, &ds, &meta)?;
    let disc = Discretization::new(&m.mesh)?;
    let r = metrics::evaluate_model(&model, &basis, &disc, &ds, &samples)?;
    let rows = report_rows(ds.problem.problem.name(), &m.geometry, model.n_modes(), train_seed(&meta), &[(r.n_points, r.rel_l2, r.rel_h1)]);
    let mut rep = rows_report("eval", &rows, a.csv.as_deref())?;
    rep.json["per_sample_l2"] = json!(r.per_sample_l2);
    rep.json["per_sample_h1"] = json!(r.per_sample_h1);
    rep.json["samples"] = json!(r.samples);
    Ok(rep)
}

/// Reads a single-column nodal field, skipping a non-numeric header.
pub fn read_field_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let rows = read_numeric_csv(path)?;
    rows.into_iter()
        .map(|r| match r.as_slice() {
            [v] => Ok(*v),
            _ => Err(CliError::usage(format!("{}: field files have one value per row", path.display()))),
        })
        .collect()
}

/// Rows of a numeric CSV; a first row that does not parse is a header.
pub fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(CliError::usage(format!("{}: row {} is not numeric", path.display(), i + 1))),
        }
    }
    Ok(rows)
}

fn write_field_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn input_field(src: &FieldSource, mesh: &Mesh, pick: impl Fn(&Dataset, usize) -> Vec<f64>) -> Result<Vec<f64>, CliError> {
    let v = match (&src.input, &src.data, src.sample) {
        (Some(p), None, _) => read_field_csv(p)?,
        (None, Some(d), Some(i)) => {
            let (ds, _) = load_dataset(d, mesh)?;
            if i >= ds.n_samples {
                return Err(CliError::usage(format!("--sample {i} out of range ({} samples)", ds.n_samples)));
            }
            pick(&ds, i)
        }
        _ => return Err(CliError::usage("give either --input or --data with --sample")),
    };
    if v.len() != mesh.n_nodes() {
        return Err(CliError::usage(format!("input field has {} values, mesh has {} nodes", v.len(), mesh.n_nodes())));
    }
    Ok(v)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<Report, CliError> {
    let m = load_mesh(&a.mesh)?;
    let basis = load_basis(&a.basis, &m.mesh)?;
    let (model, _) = load_model(&a.model, &basis)?;
    let sensors = input_field(&a.source, &m.mesh, |ds, i| learn::sensor_input(ds, i).to_vec())?;
    let forced = model.rule.kind == spectral::RuleKind::HeatForcedOde;
    let f_coeffs = if forced {
        let f = match (&a.forcing, &a.source.data, a.source.sample) {
            (Some(p), _, _) => read_field_csv(p)?,
            (None, Some(d), Some(i)) => load_dataset(d, &m.mesh)?.0.f(i).to_vec(),
            _ => return Err(CliError::usage("the forced heat model needs --forcing or a dataset sample")),
        };
        if f.len() != m.mesh.n_nodes() {
            return Err(CliError::usage("forcing field length does not match the mesh"));
        }
        let disc = Discretization::new(&m.mesh)?;
        Some(spectral::project(&basis, &disc.mass, &f))
    } else {
        None
    };
    let dim = m.mesh.dim();
    let (points, times): (Vec<Vec<f64>>, Vec<Option<f64>>) = match &a.points {
        None => ((0..m.mesh.n_nodes()).map(|i| m.mesh.node(i).to_vec()).collect(), vec![a.time; m.mesh.n_nodes()]),
        Some(p) => {
            let rows = read_numeric_csv(p)?;
            let mut pts = Vec::with_capacity(rows.len());
            let mut ts = Vec::with_capacity(rows.len());
            for r in rows {
                match r.len() {
                    l if l == dim => {
                        pts.push(r);
                        ts.push(a.time);
                    }
                    l if l == dim + 1 => {
                        ts.push(Some(r[dim]));
                        pts.push(r[..dim].to_vec());
                    }
                    l => return Err(CliError::usage(format!("query rows need {dim} or {} columns, got {l}", dim + 1))),
                }
            }
            (pts, ts)
        }
    };
    let query = if a.points.is_none() { QueryEval::at_nodes(&model, &basis) } else { QueryEval::at_points(&model, &basis, &m.mesh, &points)? };
    // Group identical times so each is reconstructed once.
    let mut values = vec![0.0; points.len()];
    let mut distinct: Vec<Option<f64>> = Vec::new();
    for t in &times {
        if !distinct.iter().any(|d| d.map(f64::to_bits) == t.map(f64::to_bits)) {
            distinct.push(*t);
        }
    }
    for t in distinct {
        let u = learn::forward(&model, &sensors, t, f_coeffs.as_deref(), &query)?;
        for (i, ti) in times.iter().enumerate() {
            if ti.map(f64::to_bits) == t.map(f64::to_bits) {
                values[i] = u[i];
            }
        }
    }
    let has_t = times.iter().any(|t| t.is_some());
    let mut header: Vec<&str> = ["x", "y", "z"][..dim].to_vec();
    if has_t {
        header.push("t");
    }
    header.push("u");
    write_field_csv(
        &a.output,
        &header,
        points.iter().zip(&times).zip(&values).map(|((p, t), v)| {
            let mut r = p.clone();
            if has_t {
                r.push(t.unwrap_or(f64::NAN));
            }
            r.push(*v);
            r
        }),
    )?;
    if let Some(p) = &a.export_vtk {
        if a.points.is_some() {
            return Err(CliError::usage("--export-vtk needs nodal predictions (omit --points)"));
        }
        export_vtk(p, &m.mesh, &[("u", &values)])?;
    }
    Ok(Report {
        text: format!("points {}\nwrote {}\n", values.len(), a.output.display()),
        json: json!({ "command": "predict", "points": values.len(), "output": a.output.display().to_string() }),
    })
}

pub fn cmd_study_resolution(a: &ResolutionArgs) -> Result<Report, CliError> {
    let m = load_mesh(&a.mesh)?;
    let basis = load_basis(&a.basis, &m.mesh)?;
    let (ds, _) = load_dataset(&a.data, &m.mesh)?;
    let (model, meta) = load_model(&a.model, &basis)?;
    let samples = select_samples(SplitArg::Test, &ds, &meta)?;
    let disc = Discretization::new(&m.mesh)?;
    let mut grids = Vec::new();
    for &l in &a.levels {
        grids.push(if l == 0 { QueryGrid::from_mesh(&m.mesh) } else { QueryGrid::refined(&m.mesh, l)? });
    }
    for p in &a.grids {
        grids.push(QueryGrid::from_points(&read_numeric_csv(p)?)?);
    }
    let study = metrics::resolution_study(&model, &basis, &m.mesh, &disc, &ds, &samples, &grids)?;
    let rows: Vec<(usize, f64, f64)> = study.iter().map(|r| (r.n_points, r.rel_l2, r.rel_h1)).collect();
    rows_report("study-resolution", &report_rows(ds.problem.problem.name(), &m.geometry, model.n_modes(), train_seed(&meta), &rows), a.csv.as_deref())
}

pub fn cmd_study_modes(a: &ModesArgs) -> Result<Report, CliError> {
    if a.modes.is_empty() {
        return Err(CliError::usage("--modes needs at least one value"));
    }
    let m = load_mesh(&a.mesh)?;
    let (ds, _) = load_dataset(&a.data, &m.mesh)?;
    let disc = Discretization::new(&m.mesh)?;
    let config = a.train.config();
    let study = metrics::mode_count_study(&m.mesh, &disc, &ds, &a.modes, &config, &a.eig.options())?;
    let rows: Vec<ReportRow> = study
        .iter()
        .flat_map(|r| report_rows(ds.problem.problem.name(), &m.geometry, r.m, config.seed, &[(r.n_points, r.rel_l2, r.rel_h1)]))
        .collect();
    rows_report("study-modes", &rows, a.csv.as_deref())
}

pub fn cmd_apply_g(a: &ApplyGArgs) -> Result<Report, CliError> {
    let m = load_mesh(&a.mesh)?;
    let basis = load_basis(&a.basis, &m.mesh)?;
    let u = input_field(&a.source, &m.mesh, |ds, i| learn::sensor_input(ds, i).to_vec())?;
    let disc = Discretization::new(&m.mesh)?;
    let out = spectral::apply_spectral_function(&basis, &disc.mass, &a.function, &u)?;
    write_field_csv(&a.output, &["value"], out.iter().map(|v| vec![*v]))?;
    if let Some(p) = &a.export_vtk {
        export_vtk(p, &m.mesh, &[("input", &u), ("output", &out)])?;
    }
    Ok(Report {
        text: format!("function {}\nmodes {}\nwrote {}\n", a.function, basis.n_modes(), a.output.display()),
        json: json!({
            "command": "apply-g",
            "function": a.function.to_string(),
            "modes": basis.n_modes(),
            "output": a.output.display().to_string(),
        }),
    })
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    if cfg.modes == 0 || cfg.samples < 2 {
        return Err(CliError::usage("config needs modes ≥ 1 and samples ≥ 2"));
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn cmd_run(a: &RunArgs) -> Result<Report, CliError> {
    let cfg = load_run_config(&a.config)?;
    let dir = a.output_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&dir)?;
    let geometry = geometry_name(cfg.geometry.kind);

    let mesh = build_mesh(&cfg.geometry)?;
    let mesh_path = dir.join("mesh.feen");
    save_mesh(&mesh, &cfg.geometry, &mesh_path)?;

    let basis = EigenBasis::compute(&mesh, cfg.modes, &EigenOptions::default())?;
    let basis_path = dir.join("basis.feen");
    container::basis_to_container(&basis, json!({ "options": { "tol": DEFAULT_TOL_EIG, "seed": EigenOptions::default().seed } }))?.write(&basis_path)?;

    let ds = make_dataset(&mesh, &cfg.problem, &cfg.grf, cfg.samples)?;
    let data_path = dir.join("data.feen");
    save_dataset(&ds, geometry, &data_path)?;

    let t = train_model(&mesh, &basis, &ds, &cfg.train)?;
    let model_path = dir.join("model.feen");
    let history = dir.join("loss.csv");
    save_model(&t, &ds, geometry, &cfg.train, &model_path, &history)?;

    let disc = Discretization::new(&mesh)?;
    let r = metrics::evaluate_model(&t.fit.model, &basis, &disc, &ds, &t.fit.test_samples)?;
    let rows = report_rows(ds.problem.problem.name(), geometry, cfg.modes, cfg.train.seed, &[(r.n_points, r.rel_l2, r.rel_h1)]);
    let mut rep = rows_report("run", &rows, Some(&dir.join("report.csv")))?;
    let mut text = format!(
        "mesh {} nodes\nlambda_1 {:.10e}\nfinal mse {:.6e}\n",
        mesh.n_nodes(),
        basis.eigenvalues[0],
        t.fit.report.final_mse
    );
    text += &rep.text;
    text += &format!("wrote {}\n", dir.display());
    rep.text = text;
    rep.json["output_dir"] = json!(dir.display().to_string());
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(CliError::from(EigError::InsufficientDofs { requested: 5, available: 1 }).code, EXIT_USAGE);
        assert_eq!(CliError::from(EigError::NotConverged("x".into())).code, EXIT_EIGEN);
        assert_eq!(CliError::from(LearnError::NonFiniteLoss { iteration: 3 }).code, EXIT_NON_FINITE);
        assert_eq!(CliError::from(LearnError::MeshMismatch { dataset: "a".into(), basis: "b".into() }).code, EXIT_HASH);
        let h = ContainerError::HashMismatch { what: "mesh".into(), expected: "a".into(), found: "b".into() };
        assert_eq!(CliError::from(h).code, EXIT_HASH);
        assert_eq!(CliError::from(MeshError::InvalidGeometry("x".into())).code, EXIT_GEOMETRY);
        assert_eq!(CliError::from(MeshError::NotInDomain(vec![2.0, 2.0])).code, EXIT_USAGE);
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        let good = r#"{
            "geometry": {"kind": "unit_square", "resolution": 0.25},
            "problem": {"problem": "poisson"},
            "grf": {"variance": 15.0, "length_scale": 0.3, "seed": 1},
            "modes": 4, "samples": 4,
            "train": {"learning_rate": 0.001, "iterations": 10}
        }"#;
        let cfg: RunConfig = serde_json::from_str(good).unwrap();
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.output_dir, "feenet-run");
        let bad = good.replace("\"modes\": 4", "\"modes\": 4, \"mode\": 3");
        assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
        let bad = good.replace("\"iterations\": 10", "\"iterations\": 10, \"momentum\": 0.9");
        assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
    }
}
