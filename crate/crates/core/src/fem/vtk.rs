//! Legacy ASCII VTK output (unstructured grid).

use std::io::{self, Write};

use super::{Mesh2D, StressField, VelocityField};

/// Writes the mesh with optional nodal velocity (`POINT_DATA` vectors) and
/// element stresses (`CELL_DATA` tensors, padded to 3x3).
pub fn write_vtk<W: Write>(
    out: &mut W,
    title: &str,
    mesh: &Mesh2D,
    velocity: Option<&VelocityField>,
    stresses: &[(&str, &StressField)],
) -> io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.n_nodes())?;
    for p in mesh.nodes() {
        writeln!(out, "{:e} {:e} 0", p[0], p[1])?;
    }
    let ne = mesh.n_elements();
    writeln!(out, "CELLS {} {}", ne, 4 * ne)?;
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(out, "5")?;
    }
    if !stresses.is_empty() {
        writeln!(out, "CELL_DATA {ne}")?;
        for (name, field) in stresses {
            writeln!(out, "TENSORS {name} double")?;
            for s in field.values() {
                writeln!(out, "{:e} {:e} 0", s.get(0, 0), s.get(0, 1))?;
                writeln!(out, "{:e} {:e} 0", s.get(1, 0), s.get(1, 1))?;
                writeln!(out, "0 0 0")?;
            }
        }
    }
    if let Some(v) = velocity {
        writeln!(out, "POINT_DATA {}", mesh.n_nodes())?;
        writeln!(out, "VECTORS velocity double")?;
        for i in 0..mesh.n_nodes() {
            let [x, y] = v.node(i);
            writeln!(out, "{x:e} {y:e} 0")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_rect_mesh, Side, SideSet};
    use crate::tensor::SymMat;

    #[test]
    fn sections_and_counts() {
        let mesh = build_rect_mesh(2, 1, 1.0, 1.0, SideSet::only(Side::Left)).unwrap();
        let v = VelocityField::interpolate_free(&mesh, |x| [x[0], 1.0]);
        let s = StressField::uniform(mesh.n_elements(), SymMat::new2(1.0, 2.0, 3.0));
        let mut buf = Vec::new();
        write_vtk(&mut buf, "t", &mesh, Some(&v), &[("sigma", &s)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\nt\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 6 double\n"));
        assert!(text.contains("CELLS 4 16\n"));
        assert!(text.contains("CELL_TYPES 4\n"));
        assert!(text.contains("CELL_DATA 4\nTENSORS sigma double\n1e0 2e0 0\n2e0 3e0 0\n0 0 0\n"));
        assert!(text.contains("POINT_DATA 6\nVECTORS velocity double\n0e0 1e0 0\n"));
    }
}
