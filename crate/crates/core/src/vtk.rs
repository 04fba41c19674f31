//! Legacy VTK (ASCII) export of nodal fields and their level curves.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// A straight piece of a level curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoSegment {
    pub level: f64,
    pub a: [f64; 2],
    pub b: [f64; 2],
}

/// Writes the mesh with any number of named point scalars.
pub fn write_field(mut w: impl Write, mesh: &TriMesh, title: &str, fields: &[(&str, &[f64])]) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.vertex_count())?;
    for v in mesh.vertices() {
        writeln!(w, "{:.17e} {:.17e} 0", v[0], v[1])?;
    }
    let nt = mesh.triangle_count();
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.vertex_count())?;
        for (name, values) in fields {
            writeln!(w, "SCALARS {} double 1", name.replace(' ', "_"))?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in *values {
                writeln!(w, "{v:.17e}")?;
            }
        }
    }
    Ok(())
}

pub fn write_field_file(path: &Path, mesh: &TriMesh, title: &str, fields: &[(&str, &[f64])]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_field(&mut w, mesh, title, fields)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Marching triangles: level curves of a P1 field.
pub fn isolines(mesh: &TriMesh, values: &[f64], levels: &[f64]) -> Vec<IsoSegment> {
    let verts = mesh.vertices();
    let mut out = Vec::new();
    for &level in levels {
        for tri in mesh.triangles() {
            let mut pts: Vec<[f64; 2]> = Vec::with_capacity(2);
            for e in 0..3 {
                let (i, j) = (tri[e], tri[(e + 1) % 3]);
                let (fi, fj) = (values[i] - level, values[j] - level);
                // half-open test so a crossing at a vertex is counted once
                if (fi < 0.0) != (fj < 0.0) {
                    let theta = fi / (fi - fj);
                    pts.push([
                        verts[i][0] + theta * (verts[j][0] - verts[i][0]),
                        verts[i][1] + theta * (verts[j][1] - verts[i][1]),
                    ]);
                }
            }
            if pts.len() == 2 && pts[0] != pts[1] {
                out.push(IsoSegment {
                    level,
                    a: pts[0],
                    b: pts[1],
                });
            }
        }
    }
    out
}

/// `count` levels evenly spaced strictly inside the range of `values`.
pub fn even_levels(values: &[f64], count: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Vec::new();
    }
    (1..=count).map(|k| lo + (hi - lo) * k as f64 / (count + 1) as f64).collect()
}

/// Writes level-curve segments as VTK_LINE cells carrying their level.
pub fn write_isolines(mut w: impl Write, title: &str, segments: &[IsoSegment]) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", 2 * segments.len())?;
    for s in segments {
        writeln!(w, "{:.17e} {:.17e} 0", s.a[0], s.a[1])?;
        writeln!(w, "{:.17e} {:.17e} 0", s.b[0], s.b[1])?;
    }
    writeln!(w, "CELLS {} {}", segments.len(), 3 * segments.len())?;
    for k in 0..segments.len() {
        writeln!(w, "2 {} {}", 2 * k, 2 * k + 1)?;
    }
    writeln!(w, "CELL_TYPES {}", segments.len())?;
    for _ in segments {
        writeln!(w, "3")?;
    }
    writeln!(w, "CELL_DATA {}", segments.len())?;
    writeln!(w, "SCALARS level double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for s in segments {
        writeln!(w, "{:.17e}", s.level)?;
    }
    Ok(())
}

pub fn write_isolines_file(path: &Path, title: &str, segments: &[IsoSegment]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_isolines(&mut w, title, segments)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
