//! Reader for the ASCII subset of Gmsh MSH 4.1.
//!
//! Only `$MeshFormat`, `$Nodes` and `$Elements` are interpreted; other
//! sections are skipped. Points (type 15) and lines (type 1) are ignored, as
//! are triangles when tetrahedra are present (they are boundary facets).
//! Nodes not referenced by any retained element are dropped and the rest
//! renumbered from zero in file order.

use std::collections::HashMap;
use std::path::Path;

use super::{Mesh, MeshError};

const MSH_LINE: i64 = 1;
const MSH_TRIANGLE: i64 = 2;
const MSH_TETRA: i64 = 4;
const MSH_POINT: i64 = 15;

pub fn read_msh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_msh(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str, MeshError> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    let t = l.trim();
                    if !t.is_empty() {
                        return Ok(t);
                    }
                }
                None => {
                    return Err(MeshError::Parse { line: self.line + 1, message: "unexpected end of file".into() })
                }
            }
        }
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse { line: self.line, message: message.into() }
    }

    fn numbers<T: std::str::FromStr>(&mut self, expect: Option<usize>) -> Result<Vec<T>, MeshError> {
        let l = self.next_line()?;
        let out: Result<Vec<T>, _> = l.split_whitespace().map(str::parse).collect();
        let out = out.map_err(|_| self.err(format!("expected numbers, found `{l}`")))?;
        if let Some(n) = expect {
            if out.len() != n {
                return Err(self.err(format!("expected {n} values, found {}", out.len())));
            }
        }
        Ok(out)
    }

    fn expect(&mut self, tag: &str) -> Result<(), MeshError> {
        let l = self.next_line()?;
        if l != tag {
            return Err(self.err(format!("expected `{tag}`, found `{l}`")));
        }
        Ok(())
    }
}

pub fn parse_msh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    let mut saw_format = false;
    let mut coords: Vec<[f64; 3]> = Vec::new();
    let mut tag_to_index: HashMap<u64, usize> = HashMap::new();
    let mut triangles: Vec<[u64; 3]> = Vec::new();
    let mut tets: Vec<[u64; 4]> = Vec::new();

    loop {
        let header = match lines.inner.next() {
            Some((i, l)) => {
                lines.line = i + 1;
                l.trim()
            }
            None => break,
        };
        match header {
            "" => continue,
            "$MeshFormat" => {
                let l = lines.next_line()?;
                let parts: Vec<&str> = l.split_whitespace().collect();
                if parts.len() < 3 {
                    return Err(lines.err("malformed $MeshFormat line"));
                }
                if parts[0] != "4.1" {
                    return Err(lines.err(format!("unsupported MSH version {}", parts[0])));
                }
                if parts[1] != "0" {
                    return Err(lines.err("binary MSH files are not supported"));
                }
                lines.expect("$EndMeshFormat")?;
                saw_format = true;
            }
            "$Nodes" => {
                let head: Vec<u64> = lines.numbers(Some(4))?;
                let n_blocks = head[0] as usize;
                for _ in 0..n_blocks {
                    let b: Vec<i64> = lines.numbers(Some(4))?;
                    if b[2] != 0 {
                        return Err(lines.err("parametric node coordinates are not supported"));
                    }
                    let count = b[3] as usize;
                    let mut tags = Vec::with_capacity(count);
                    for _ in 0..count {
                        let t: Vec<u64> = lines.numbers(Some(1))?;
                        tags.push(t[0]);
                    }
                    for tag in tags {
                        let c: Vec<f64> = lines.numbers(Some(3))?;
                        if tag_to_index.insert(tag, coords.len()).is_some() {
                            return Err(lines.err(format!("duplicate node tag {tag}")));
                        }
                        coords.push([c[0], c[1], c[2]]);
                    }
                }
                lines.expect("$EndNodes")?;
            }
            "$Elements" => {
                let head: Vec<u64> = lines.numbers(Some(4))?;
                for _ in 0..head[0] {
                    let b: Vec<i64> = lines.numbers(Some(4))?;
                    let (ty, count) = (b[2], b[3] as usize);
                    let block_line = lines.line;
                    let width = match ty {
                        MSH_POINT => 1,
                        MSH_LINE => 2,
                        MSH_TRIANGLE => 3,
                        MSH_TETRA => 4,
                        other => {
                            return Err(MeshError::UnsupportedElement { line: block_line, element_type: other })
                        }
                    };
                    for _ in 0..count {
                        let v: Vec<u64> = lines.numbers(Some(width + 1))?;
                        match ty {
                            MSH_TRIANGLE => triangles.push([v[1], v[2], v[3]]),
                            MSH_TETRA => tets.push([v[1], v[2], v[3], v[4]]),
                            _ => {}
                        }
                    }
                }
                lines.expect("$EndElements")?;
            }
            other if other.starts_with('$') && !other.starts_with("$End") => {
                let end = format!("$End{}", &other[1..]);
                loop {
                    if lines.next_line()? == end {
                        break;
                    }
                }
            }
            other => return Err(lines.err(format!("unexpected content `{other}`"))),
        }
    }

    if !saw_format {
        return Err(MeshError::Parse { line: 1, message: "missing $MeshFormat section".into() });
    }
    let (dim, raw): (usize, Vec<u64>) = if !tets.is_empty() {
        (3, tets.iter().flatten().copied().collect())
    } else if !triangles.is_empty() {
        (2, triangles.iter().flatten().copied().collect())
    } else {
        return Err(MeshError::Parse { line: lines.line, message: "no triangle or tetrahedron elements".into() });
    };

    let mut used = vec![usize::MAX; coords.len()];
    let mut nodes = Vec::new();
    let mut elements = Vec::with_capacity(raw.len());
    for tag in raw {
        let src = *tag_to_index.get(&tag).ok_or_else(|| MeshError::Parse {
            line: lines.line,
            message: format!("element references unknown node tag {tag}"),
        })?;
        elements.push(src);
    }
    // Renumber in file order of the nodes.
    let mut order: Vec<usize> = elements.clone();
    order.sort_unstable();
    order.dedup();
    for (new, &src) in order.iter().enumerate() {
        used[src] = new;
        nodes.extend_from_slice(&coords[src][..dim]);
    }
    for e in elements.iter_mut() {
        *e = used[*e];
    }
    Mesh::new(dim, nodes, elements)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$Nodes\n1 3 1 3\n2 1 0 3\n1\n2\n3\n0 0 0\n1 0 0\n0 1 0\n$EndNodes\n$Elements\n1 1 1 1\n2 1 2 1\n1 1 2 3\n$EndElements\n";

    #[test]
    fn single_triangle() {
        let m = parse_msh(TRIANGLE).unwrap();
        assert_eq!((m.dim(), m.n_nodes(), m.n_elements()), (2, 3, 1));
        assert_eq!(m.boundary_nodes().len(), 3);
    }

    #[test]
    fn quads_are_rejected() {
        let text = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$Nodes\n1 4 1 4\n2 1 0 4\n1\n2\n3\n4\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n$EndNodes\n$Elements\n2 2 1 2\n2 1 2 1\n1 1 2 3\n2 1 3 1\n2 2 4 3 1\n$EndElements\n";
        let err = parse_msh(text).unwrap_err();
        assert!(matches!(err, MeshError::UnsupportedElement { element_type: 3, line: 20 }), "{err:?}");
    }

    #[test]
    fn two_tets_with_boundary_triangles_and_sparse_tags() {
        let text = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$PhysicalNames\n1\n3 1 \"vol\"\n$EndPhysicalNames\n\
$Nodes\n1 5 10 50\n3 1 0 5\n10\n20\n30\n40\n50\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 0 -1\n$EndNodes\n\
$Elements\n2 3 1 3\n2 1 2 1\n1 10 20 40\n3 1 4 2\n2 10 20 30 40\n3 10 30 20 50\n$EndElements\n";
        let m = parse_msh(text).unwrap();
        assert_eq!((m.dim(), m.n_nodes(), m.n_elements()), (3, 5, 2));
        assert_eq!(m.boundary_nodes().len(), 5);
        assert!((m.total_volume() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$Nodes\n1 3 1 3\n2 1 0 3\n1\n2\n3\n0 0 0\n1 zero 0\n";
        match parse_msh(text).unwrap_err() {
            MeshError::Parse { line, .. } => assert_eq!(line, 11),
            e => panic!("{e:?}"),
        }
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n";
        assert!(matches!(parse_msh(text), Err(MeshError::Parse { line: 2, .. })));
    }
}
