//! FEEN binary container and the artifact layouts stored in it.
//!
//! ```text
//! header (16 bytes)
//!   0  [u8; 4]  magic "FEEN"
//!   4  u32      format version (1)
//!   8  u32      number of sections
//!   12 u32      reserved, 0
//! section table, 88 bytes per entry
//!   0  [u8; 32] name, UTF-8, NUL padded
//!   32 u64      payload offset from the start of the file
//!   40 u64      payload length in bytes
//!   48 u32      element type: 1 = f64, 2 = i64, 3 = UTF-8 JSON
//!   52 u32      rank (0..=4)
//!   56 [u64; 4] shape, unused trailing entries 0
//! payloads, each starting on an 8-byte boundary, zero padded
//! ```
//!
//! All integers and floats are little-endian. JSON payloads have rank 1 and
//! shape `[byte length]`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::eig::EigenBasis;
use crate::fem::DofMap;
use crate::grf::GrfSpec;
use crate::learn::{BranchModel, NormMode, Normalizer};
use crate::mesh::{Mesh, MeshError};
use crate::sim::{Dataset, ProblemSpec};
use crate::spectral::ReconstructionRule;

pub const MAGIC: [u8; 4] = *b"FEEN";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const ENTRY_LEN: usize = 88;
pub const NAME_LEN: usize = 32;
pub const MAX_RANK: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a FEEN file")]
    BadMagic,
    #[error("unsupported FEEN version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("section `{name}` has the wrong type or shape")]
    WrongType { name: String },
    #[error("expected a {expected} artifact, found {found}")]
    WrongKind { expected: String, found: String },
    #[error("{what} hash mismatch: expected {expected}, found {found}")]
    HashMismatch { what: String, expected: String, found: String },
    #[error("invalid section name `{0}`")]
    InvalidName(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Dtype {
    F64 = 1,
    I64 = 2,
    Json = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    I64(Vec<i64>),
    Json(String),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F64(_) => Dtype::F64,
            Payload::I64(_) => Dtype::I64,
            Payload::Json(_) => Dtype::Json,
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Payload::F64(v) => 8 * v.len(),
            Payload::I64(v) => 8 * v.len(),
            Payload::Json(s) => s.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<u64>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeenContainer {
    pub sections: Vec<Section>,
}

fn align8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

impl FeenContainer {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, shape: Vec<u64>, payload: Payload) -> Result<(), ContainerError> {
        if name.is_empty() || name.len() > NAME_LEN || name.contains('\0') || self.get(name).is_some() {
            return Err(ContainerError::InvalidName(name.to_string()));
        }
        if shape.len() > MAX_RANK {
            return Err(ContainerError::WrongType { name: name.to_string() });
        }
        let count: u64 = shape.iter().product();
        let expected = match payload {
            Payload::Json(ref s) => s.len() as u64,
            _ => (payload.byte_len() / 8) as u64,
        };
        if count != expected {
            return Err(ContainerError::WrongType { name: name.to_string() });
        }
        self.sections.push(Section { name: name.to_string(), shape, payload });
        Ok(())
    }

    pub fn add_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<(), ContainerError> {
        self.push(name, shape.iter().map(|&s| s as u64).collect(), Payload::F64(data))
    }

    pub fn add_i64(&mut self, name: &str, shape: &[usize], data: Vec<i64>) -> Result<(), ContainerError> {
        self.push(name, shape.iter().map(|&s| s as u64).collect(), Payload::I64(data))
    }

    pub fn add_json(&mut self, name: &str, value: &Value) -> Result<(), ContainerError> {
        let s = serde_json::to_string(value)?;
        self.push(name, vec![s.len() as u64], Payload::Json(s))
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn section(&self, name: &str) -> Result<&Section, ContainerError> {
        self.get(name).ok_or_else(|| ContainerError::MissingSection(name.to_string()))
    }

    pub fn f64(&self, name: &str) -> Result<(&[u64], &[f64]), ContainerError> {
        match self.section(name)? {
            Section { shape, payload: Payload::F64(v), .. } => Ok((shape, v)),
            _ => Err(ContainerError::WrongType { name: name.to_string() }),
        }
    }

    pub fn i64(&self, name: &str) -> Result<(&[u64], &[i64]), ContainerError> {
        match self.section(name)? {
            Section { shape, payload: Payload::I64(v), .. } => Ok((shape, v)),
            _ => Err(ContainerError::WrongType { name: name.to_string() }),
        }
    }

    pub fn json(&self, name: &str) -> Result<Value, ContainerError> {
        match self.section(name)? {
            Section { payload: Payload::Json(s), .. } => Ok(serde_json::from_str(s)?),
            _ => Err(ContainerError::WrongType { name: name.to_string() }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.sections.len();
        let mut offset = align8(HEADER_LEN + n * ENTRY_LEN);
        let mut out = Vec::with_capacity(offset + self.sections.iter().map(|s| align8(s.payload.byte_len())).sum::<usize>());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for s in &self.sections {
            let mut name = [0u8; NAME_LEN];
            name[..s.name.len()].copy_from_slice(s.name.as_bytes());
            out.extend_from_slice(&name);
            out.extend_from_slice(&(offset as u64).to_le_bytes());
            let len = s.payload.byte_len();
            out.extend_from_slice(&(len as u64).to_le_bytes());
            out.extend_from_slice(&(s.payload.dtype() as u32).to_le_bytes());
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for k in 0..MAX_RANK {
                out.extend_from_slice(&s.shape.get(k).copied().unwrap_or(0).to_le_bytes());
            }
            offset += align8(len);
        }
        out.resize(align8(out.len()), 0);
        for s in &self.sections {
            match &s.payload {
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Json(j) => out.extend_from_slice(j.as_bytes()),
            }
            out.resize(align8(out.len()), 0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let corrupt = |m: &str| ContainerError::Corrupt(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(4)]) && bytes.len() >= 4 { corrupt("truncated header") } else { ContainerError::BadMagic });
        }
        if bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let n = u32_at(8) as usize;
        let table_end = n.checked_mul(ENTRY_LEN).and_then(|t| t.checked_add(HEADER_LEN)).ok_or_else(|| corrupt("section count"))?;
        if table_end > bytes.len() {
            return Err(corrupt("truncated section table"));
        }
        let mut sections = Vec::with_capacity(n);
        let mut spans: Vec<(u64, u64)> = Vec::with_capacity(n);
        for i in 0..n {
            let e = HEADER_LEN + i * ENTRY_LEN;
            let raw = &bytes[e..e + NAME_LEN];
            let end = raw.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
            let name = std::str::from_utf8(&raw[..end]).map_err(|_| corrupt("section name is not UTF-8"))?.to_string();
            let (offset, len) = (u64_at(e + 32), u64_at(e + 40));
            let dtype = u32_at(e + 48);
            let rank = u32_at(e + 52) as usize;
            if rank > MAX_RANK {
                return Err(corrupt("rank"));
            }
            let shape: Vec<u64> = (0..rank).map(|k| u64_at(e + 56 + 8 * k)).collect();
            let stop = offset.checked_add(len).ok_or_else(|| corrupt("section span"))?;
            if offset < table_end as u64 || stop > bytes.len() as u64 || offset % 8 != 0 {
                return Err(corrupt(&format!("section `{name}` lies outside the payload area")));
            }
            if spans.iter().any(|&(a, b)| offset < b && a < stop) {
                return Err(corrupt(&format!("section `{name}` overlaps another section")));
            }
            spans.push((offset, stop));
            let data = &bytes[offset as usize..stop as usize];
            let count = shape.iter().try_fold(1u64, |a, &s| a.checked_mul(s)).ok_or_else(|| corrupt("shape"))?;
            let payload = match dtype {
                1 | 2 => {
                    if count.checked_mul(8) != Some(len) {
                        return Err(corrupt(&format!("section `{name}` length does not match its shape")));
                    }
                    let words = data.chunks_exact(8).map(|c| c.try_into().unwrap());
                    if dtype == 1 {
                        Payload::F64(words.map(f64::from_le_bytes).collect())
                    } else {
                        Payload::I64(words.map(i64::from_le_bytes).collect())
                    }
                }
                3 => {
                    if count != len {
                        return Err(corrupt(&format!("section `{name}` length does not match its shape")));
                    }
                    Payload::Json(String::from_utf8(data.to_vec()).map_err(|_| corrupt("JSON section is not UTF-8"))?)
                }
                other => return Err(corrupt(&format!("unknown element type {other}"))),
            };
            sections.push(Section { name, shape, payload });
        }
        Ok(FeenContainer { sections })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Artifact metadata stored in the `meta` section.
    pub fn meta(&self) -> Result<Value, ContainerError> {
        self.json("meta")
    }

    pub fn kind(&self) -> Result<String, ContainerError> {
        Ok(self.meta()?["kind"].as_str().unwrap_or_default().to_string())
    }

    fn expect_kind(&self, expected: &str) -> Result<Value, ContainerError> {
        let meta = self.meta()?;
        let found = meta["kind"].as_str().unwrap_or_default();
        if found != expected {
            return Err(ContainerError::WrongKind { expected: expected.into(), found: found.into() });
        }
        Ok(meta)
    }
}

fn meta_str(meta: &Value, key: &str) -> Result<String, ContainerError> {
    meta[key].as_str().map(str::to_string).ok_or_else(|| ContainerError::Corrupt(format!("metadata lacks `{key}`")))
}

fn dims(shape: &[u64], rank: usize, name: &str) -> Result<Vec<usize>, ContainerError> {
    if shape.len() != rank {
        return Err(ContainerError::WrongType { name: name.to_string() });
    }
    Ok(shape.iter().map(|&s| s as usize).collect())
}

/// Fails unless `found` equals `expected`.
pub fn check_hash(what: &str, expected: &str, found: &str) -> Result<(), ContainerError> {
    if expected != found {
        return Err(ContainerError::HashMismatch { what: what.into(), expected: expected.into(), found: found.into() });
    }
    Ok(())
}

fn verify_content(meta: &Value, what: &str, actual: &str) -> Result<(), ContainerError> {
    check_hash(what, &meta_str(meta, "content_hash")?, actual)
}

pub fn mesh_to_container(mesh: &Mesh, extra: Value) -> Result<FeenContainer, ContainerError> {
    let mut c = FeenContainer::new();
    let mut meta = json!({
        "kind": "mesh",
        "content_hash": mesh.content_hash(),
        "dim": mesh.dim(),
        "n_nodes": mesh.n_nodes(),
        "n_elements": mesh.n_elements(),
        "n_boundary": mesh.boundary_nodes().len(),
    });
    merge(&mut meta, extra);
    c.add_json("meta", &meta)?;
    c.add_f64("nodes", &[mesh.n_nodes(), mesh.dim()], mesh.coordinates().to_vec())?;
    let k = mesh.dim() + 1;
    c.add_i64("elements", &[mesh.n_elements(), k], mesh.connectivity().iter().map(|&i| i as i64).collect())?;
    c.add_i64("boundary", &[mesh.boundary_nodes().len()], mesh.boundary_nodes().iter().map(|&i| i as i64).collect())?;
    Ok(c)
}

pub fn mesh_from_container(c: &FeenContainer) -> Result<Mesh, ContainerError> {
    let meta = c.expect_kind("mesh")?;
    let (shape, nodes) = c.f64("nodes")?;
    let d = dims(shape, 2, "nodes")?;
    let (eshape, elements) = c.i64("elements")?;
    dims(eshape, 2, "elements")?;
    let elements = elements.iter().map(|&i| usize::try_from(i).map_err(|_| ContainerError::Corrupt("negative node index".into()))).collect::<Result<Vec<_>, _>>()?;
    let mesh = Mesh::new(d[1], nodes.to_vec(), elements)?;
    verify_content(&meta, "mesh", &mesh.content_hash())?;
    Ok(mesh)
}

pub fn basis_to_container(basis: &EigenBasis, extra: Value) -> Result<FeenContainer, ContainerError> {
    let mut c = FeenContainer::new();
    let mut meta = json!({
        "kind": "basis",
        "content_hash": basis.content_hash(),
        "mesh_hash": basis.mesh_id,
        "n_modes": basis.n_modes(),
        "n_interior": basis.modes.nrows(),
        "n_nodes": basis.dofs.n_nodes(),
    });
    merge(&mut meta, extra);
    c.add_json("meta", &meta)?;
    c.add_f64("eigenvalues", &[basis.n_modes()], basis.eigenvalues.clone())?;
    // Row-major N_interior × M.
    c.add_f64("modes", &[basis.modes.nrows(), basis.n_modes()], basis.modes.transpose().as_slice().to_vec())?;
    c.add_i64("interior", &[basis.dofs.n_interior()], basis.dofs.interior_to_node().iter().map(|&i| i as i64).collect())?;
    Ok(c)
}

pub fn basis_from_container(c: &FeenContainer) -> Result<EigenBasis, ContainerError> {
    let meta = c.expect_kind("basis")?;
    let (_, lambda) = c.f64("eigenvalues")?;
    let (shape, modes) = c.f64("modes")?;
    let d = dims(shape, 2, "modes")?;
    let (_, interior) = c.i64("interior")?;
    let n_nodes = meta["n_nodes"].as_u64().ok_or_else(|| ContainerError::Corrupt("metadata lacks `n_nodes`".into()))? as usize;
    if lambda.len() != d[1] || interior.len() != d[0] || interior.iter().any(|&i| i < 0 || i as usize >= n_nodes) {
        return Err(ContainerError::Corrupt("basis arrays disagree".into()));
    }
    let basis = EigenBasis {
        eigenvalues: lambda.to_vec(),
        modes: DMatrix::from_row_slice(d[0], d[1], modes),
        dofs: DofMap::from_interior(n_nodes, interior.iter().map(|&i| i as usize).collect()),
        mesh_id: meta_str(&meta, "mesh_hash")?,
    };
    verify_content(&meta, "basis", &basis.content_hash())?;
    Ok(basis)
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    problem: ProblemSpec,
    n_samples: usize,
    n_nodes: usize,
    grf_u0: Option<GrfSpec>,
    grf_f: Option<GrfSpec>,
}

pub fn dataset_to_container(ds: &Dataset, extra: Value) -> Result<FeenContainer, ContainerError> {
    let mut c = FeenContainer::new();
    let mut meta = json!({
        "kind": "dataset",
        "content_hash": ds.content_hash(),
        "mesh_hash": ds.mesh_id,
        "spec": DatasetMeta { problem: ds.problem.clone(), n_samples: ds.n_samples, n_nodes: ds.n_nodes, grf_u0: ds.grf_u0, grf_f: ds.grf_f },
    });
    merge(&mut meta, extra);
    c.add_json("meta", &meta)?;
    let (n, p) = (ds.n_samples, ds.n_nodes);
    if !ds.inputs_u0.is_empty() {
        c.add_f64("inputs_u0", &[n, p], ds.inputs_u0.clone())?;
    }
    if !ds.inputs_f.is_empty() {
        c.add_f64("inputs_f", &[n, p], ds.inputs_f.clone())?;
    }
    if ds.problem.problem.is_heat() {
        c.add_f64("outputs", &[n, ds.n_snapshots(), p], ds.outputs.clone())?;
    } else {
        c.add_f64("outputs", &[n, p], ds.outputs.clone())?;
    }
    Ok(c)
}

pub fn dataset_from_container(c: &FeenContainer) -> Result<Dataset, ContainerError> {
    let meta = c.expect_kind("dataset")?;
    let spec: DatasetMeta = serde_json::from_value(meta["spec"].clone())?;
    let opt = |name: &str| -> Result<Vec<f64>, ContainerError> {
        match c.get(name) {
            Some(_) => Ok(c.f64(name)?.1.to_vec()),
            None => Ok(Vec::new()),
        }
    };
    let ds = Dataset {
        problem: spec.problem,
        n_samples: spec.n_samples,
        n_nodes: spec.n_nodes,
        inputs_u0: opt("inputs_u0")?,
        inputs_f: opt("inputs_f")?,
        outputs: c.f64("outputs")?.1.to_vec(),
        grf_u0: spec.grf_u0,
        grf_f: spec.grf_f,
        mesh_id: meta_str(&meta, "mesh_hash")?,
    };
    if ds.outputs.len() != ds.n_samples * ds.n_snapshots() * ds.n_nodes {
        return Err(ContainerError::Corrupt("dataset outputs have the wrong length".into()));
    }
    verify_content(&meta, "dataset", &ds.content_hash())?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    rule: ReconstructionRule,
    input_mode: NormMode,
    output_mode: NormMode,
    n_inputs: usize,
    n_modes: usize,
}

pub fn model_to_container(model: &BranchModel, extra: Value) -> Result<FeenContainer, ContainerError> {
    let mut c = FeenContainer::new();
    let (m, p) = (model.n_modes(), model.n_inputs());
    let mut meta = json!({
        "kind": "model",
        "content_hash": model.content_hash(),
        "basis_hash": model.basis_id,
        "spec": ModelMeta {
            rule: model.rule,
            input_mode: model.input_normalizer.mode,
            output_mode: model.output_normalizer.mode,
            n_inputs: p,
            n_modes: m,
        },
    });
    merge(&mut meta, extra);
    c.add_json("meta", &meta)?;
    c.add_f64("weights", &[m, p], model.weights.transpose().as_slice().to_vec())?;
    c.add_f64("bias", &[m], model.bias.as_slice().to_vec())?;
    c.add_f64("eigenvalues", &[model.eigenvalues.len()], model.eigenvalues.clone())?;
    c.add_f64("input_mean", &[model.input_normalizer.len()], model.input_normalizer.mean.clone())?;
    c.add_f64("input_std", &[model.input_normalizer.len()], model.input_normalizer.std.clone())?;
    c.add_f64("output_mean", &[model.output_normalizer.len()], model.output_normalizer.mean.clone())?;
    c.add_f64("output_std", &[model.output_normalizer.len()], model.output_normalizer.std.clone())?;
    Ok(c)
}

pub fn model_from_container(c: &FeenContainer) -> Result<BranchModel, ContainerError> {
    let meta = c.expect_kind("model")?;
    let spec: ModelMeta = serde_json::from_value(meta["spec"].clone())?;
    let (shape, w) = c.f64("weights")?;
    let d = dims(shape, 2, "weights")?;
    if d != [spec.n_modes, spec.n_inputs] {
        return Err(ContainerError::Corrupt("weight shape disagrees with metadata".into()));
    }
    let vec = |name: &str| -> Result<Vec<f64>, ContainerError> { Ok(c.f64(name)?.1.to_vec()) };
    let model = BranchModel {
        weights: DMatrix::from_row_slice(d[0], d[1], w),
        bias: DVector::from_vec(vec("bias")?),
        input_normalizer: Normalizer { mode: spec.input_mode, mean: vec("input_mean")?, std: vec("input_std")? },
        output_normalizer: Normalizer { mode: spec.output_mode, mean: vec("output_mean")?, std: vec("output_std")? },
        rule: spec.rule,
        eigenvalues: vec("eigenvalues")?,
        basis_id: meta_str(&meta, "basis_hash")?,
    };
    verify_content(&meta, "model", &model.content_hash())?;
    Ok(model)
}

fn merge(meta: &mut Value, extra: Value) {
    if let (Value::Object(m), Value::Object(e)) = (meta, extra) {
        for (k, v) in e {
            m.entry(k).or_insert(v);
        }
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: impl AsRef<Path>) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eig::EigenOptions;
    use crate::grf::compute_cutoff_field;
    use crate::learn::init_model;
    use crate::mesh::generate_unit_square;
    use crate::sim::{build_dataset, ProblemKind};
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut c = FeenContainer::new();
        c.add_json("meta", &json!({"kind": "x"})).unwrap();
        c.add_f64("a", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"FEEN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        let e = HEADER_LEN + ENTRY_LEN;
        assert_eq!(&b[e..e + 2], b"a\0");
        let off = u64::from_le_bytes(b[e + 32..e + 40].try_into().unwrap()) as usize;
        assert_eq!(off % 8, 0);
        assert_eq!(u64::from_le_bytes(b[e + 40..e + 48].try_into().unwrap()), 24);
        assert_eq!(u32::from_le_bytes(b[e + 48..e + 52].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[off + 8..off + 16].try_into().unwrap()), 2.0);
        assert_eq!(b.len() % 8, 0);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(FeenContainer::from_bytes(b"NOPE0000000000000000"), Err(ContainerError::BadMagic)));
        let mut c = FeenContainer::new();
        c.add_f64("a", &[2], vec![1.0, 2.0]).unwrap();
        assert!(c.add_f64("a", &[1], vec![1.0]).is_err());
        assert!(c.add_f64("b", &[3], vec![1.0]).is_err());
        assert!(c.add_f64(&"x".repeat(33), &[1], vec![1.0]).is_err());
        let mut b = c.to_bytes();
        b[4] = 9;
        assert!(matches!(FeenContainer::from_bytes(&b), Err(ContainerError::UnsupportedVersion(9))));
        let b = c.to_bytes();
        assert!(matches!(FeenContainer::from_bytes(&b[..b.len() - 8]), Err(ContainerError::Corrupt(_))));
        let mut b = c.to_bytes();
        b[HEADER_LEN + 40] = 24;
        assert!(FeenContainer::from_bytes(&b).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sections_round_trip_bit_exact(
            a in prop::collection::vec(prop::num::f64::ANY, 0..40),
            b in prop::collection::vec(any::<i64>(), 0..40),
            s in "\\PC{0,40}",
        ) {
            let mut c = FeenContainer::new();
            c.add_f64("floats", &[a.len()], a.clone()).unwrap();
            c.add_i64("ints", &[1, b.len()], b.clone()).unwrap();
            c.add_json("text", &json!({ "s": s })).unwrap();
            let back = FeenContainer::from_bytes(&c.to_bytes()).unwrap();
            let (_, fa) = back.f64("floats").unwrap();
            prop_assert_eq!(fa.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), a.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            let ints = back.i64("ints").unwrap();
            prop_assert_eq!(ints.0, &[1u64, b.len() as u64][..]);
            prop_assert_eq!(ints.1, &b[..]);
        }
    }

    #[test]
    fn artifacts_round_trip() {
        let mesh = generate_unit_square(6).unwrap();
        let back = mesh_from_container(&FeenContainer::from_bytes(&mesh_to_container(&mesh, json!({})).unwrap().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, mesh);

        let basis = EigenBasis::compute(&mesh, 4, &EigenOptions::default()).unwrap();
        let bb = basis_from_container(&FeenContainer::from_bytes(&basis_to_container(&basis, json!({})).unwrap().to_bytes()).unwrap()).unwrap();
        assert_eq!(bb.modes, basis.modes);
        assert_eq!(bb.eigenvalues, basis.eigenvalues);
        assert_eq!(bb.dofs.interior_to_node(), basis.dofs.interior_to_node());

        let cut = compute_cutoff_field(&mesh).unwrap();
        for kind in [ProblemKind::Poisson, ProblemKind::HeatForced] {
            let spec = if kind.is_heat() { ProblemSpec { snapshot_times: vec![0.5, 1.0], ..ProblemSpec::heat(kind) } } else { ProblemSpec::poisson() };
            let ds = build_dataset(&mesh, &cut, &spec, &GrfSpec { n_modes: 16, ..GrfSpec::new(15.0, 0.3, 3) }, 3).unwrap();
            let c = dataset_to_container(&ds, json!({"seed": 3})).unwrap();
            assert_eq!(dataset_from_container(&FeenContainer::from_bytes(&c.to_bytes()).unwrap()).unwrap(), ds);
        }

        let mut model = init_model(36, 4, ReconstructionRule::heat_forced(0.02), 1);
        model.bind(&basis).unwrap();
        model.output_normalizer = Normalizer::identity(36);
        let mb = model_from_container(&FeenContainer::from_bytes(&model_to_container(&model, json!({})).unwrap().to_bytes()).unwrap()).unwrap();
        assert_eq!(mb, model);
    }

    #[test]
    fn tampered_payload_fails_hash_check() {
        let mesh = generate_unit_square(4).unwrap();
        let mut c = mesh_to_container(&mesh, json!({})).unwrap();
        if let Payload::F64(v) = &mut c.sections[1].payload {
            v[5] += 1e-3;
        }
        assert!(matches!(mesh_from_container(&c), Err(ContainerError::HashMismatch { .. })));
        assert!(matches!(basis_from_container(&c), Err(ContainerError::WrongKind { .. })));
    }
}
