//! Legacy ASCII VTK export of nodal fields.

use std::io::{self, Write};

use crate::mesh::Mesh;

/// Writes the mesh as an unstructured grid with one scalar point field per
/// entry of `fields`.
pub fn write_vtk<W: Write>(mesh: &Mesh, fields: &[(&str, &[f64])], mut out: W) -> io::Result<()> {
    let n = mesh.n_nodes();
    let k = mesh.dim() + 1;
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "feenet")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {n} double")?;
    for i in 0..n {
        let x = mesh.node(i);
        writeln!(out, "{:e} {:e} {:e}", x[0], x[1], x.get(2).copied().unwrap_or(0.0))?;
    }
    let ne = mesh.n_elements();
    writeln!(out, "CELLS {ne} {}", ne * (k + 1))?;
    for e in 0..ne {
        write!(out, "{k}")?;
        for v in mesh.element(e) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    let cell_type = if mesh.dim() == 2 { 5 } else { 10 };
    for _ in 0..ne {
        writeln!(out, "{cell_type}")?;
    }
    if !fields.is_empty() {
        writeln!(out, "POINT_DATA {n}")?;
    }
    for (name, values) in fields {
        if values.len() != n {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("field `{name}` has {} values for {n} nodes", values.len())));
        }
        let name: String = name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in *values {
            writeln!(out, "{v:e}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_square;

    #[test]
    fn layout() {
        let mesh = generate_unit_square(2).unwrap();
        let mut buf = Vec::new();
        write_vtk(&mesh, &[("u field", &[0.0, 1.0, 2.0, 3.0])], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("POINTS 4 double\n"));
        assert!(s.contains("CELLS 2 8\n"));
        assert!(s.contains("CELL_TYPES 2\n5\n5\n"));
        assert!(s.contains("SCALARS u_field double 1\nLOOKUP_TABLE default\n0e0\n1e0\n"));
        assert!(write_vtk(&mesh, &[("bad", &[1.0])], Vec::new()).is_err());
    }
}
