//! Legacy ASCII VTK output of mesh fields, CSV reports and particle dumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pmhdg_core::particles::ParticleSet;
use pmhdg_core::{CellLocation, DiscreteField, Triangulation};

use crate::diagnostics::DiagnosticsReport;
use crate::BenchError;

/// How discontinuous cell fields become point data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointData {
    /// Every cell gets its own copy of its three vertices.
    Broken,
    /// Shared vertices carry the mean of the adjacent cell values.
    Averaged,
}

fn vertex_value(field: &DiscreteField, c: usize, corner: usize) -> Result<[f64; 2], BenchError> {
    let mut barycentric = [0.0; 3];
    barycentric[corner] = 1.0;
    Ok(field.evaluate(&CellLocation {
        cell: c,
        barycentric,
    })?)
}

pub fn write_vtk(
    mut w: impl Write,
    tri: &Triangulation,
    fields: &[(&str, &DiscreteField)],
    mode: PointData,
) -> Result<(), BenchError> {
    let nc = tri.n_cells();
    writeln!(
        w,
        "# vtk DataFile Version 3.0\npmhdg output\nASCII\nDATASET UNSTRUCTURED_GRID"
    )?;
    let points: Vec<_> = match mode {
        PointData::Broken => tri
            .cells()
            .iter()
            .flat_map(|c| c.map(|v| tri.vertices()[v]))
            .collect(),
        PointData::Averaged => tri.vertices().to_vec(),
    };
    writeln!(w, "POINTS {} double", points.len())?;
    for p in &points {
        writeln!(w, "{:.12e} {:.12e} 0", p.x, p.y)?;
    }
    writeln!(w, "CELLS {} {}", nc, 4 * nc)?;
    for (c, cell) in tri.cells().iter().enumerate() {
        let ids = match mode {
            PointData::Broken => [3 * c, 3 * c + 1, 3 * c + 2],
            PointData::Averaged => *cell,
        };
        writeln!(w, "3 {} {} {}", ids[0], ids[1], ids[2])?;
    }
    writeln!(w, "CELL_TYPES {nc}")?;
    for _ in 0..nc {
        writeln!(w, "5")?;
    }
    if fields.is_empty() {
        return Ok(());
    }
    writeln!(w, "POINT_DATA {}", points.len())?;
    for (name, field) in fields {
        let mut values = vec![[0.0; 2]; points.len()];
        let mut counts = vec![0usize; points.len()];
        for (c, cell) in tri.cells().iter().enumerate() {
            for corner in 0..3 {
                let v = vertex_value(field, c, corner)?;
                let idx = match mode {
                    PointData::Broken => 3 * c + corner,
                    PointData::Averaged => cell[corner],
                };
                values[idx][0] += v[0];
                values[idx][1] += v[1];
                counts[idx] += 1;
            }
        }
        for (v, &n) in values.iter_mut().zip(&counts) {
            let n = n.max(1) as f64;
            *v = [v[0] / n, v[1] / n];
        }
        if field.components() == 1 {
            writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
            for v in &values {
                writeln!(w, "{:.12e}", v[0])?;
            }
        } else {
            writeln!(w, "VECTORS {name} double")?;
            for v in &values {
                writeln!(w, "{:.12e} {:.12e} 0", v[0], v[1])?;
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_vtk_file(
    path: &Path,
    tri: &Triangulation,
    fields: &[(&str, &DiscreteField)],
    mode: PointData,
) -> Result<(), BenchError> {
    let mut w = create(path)?;
    write_vtk(&mut w, tri, fields, mode)?;
    w.flush()?;
    Ok(())
}

pub fn write_report(path: &Path, report: &DiagnosticsReport) -> Result<(), BenchError> {
    let mut w = create(path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_particles(path: &Path, set: &ParticleSet) -> Result<(), BenchError> {
    let mut w = create(path)?;
    set.write_dump(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pmhdg_core::mesh::generate_rectangle;
    use pmhdg_core::{Diagonal, DofLayout, Point};
    use std::sync::Arc;

    fn setup() -> (Triangulation, DiscreteField, DiscreteField) {
        let tri = generate_rectangle(
            2,
            3,
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Diagonal::Right,
        )
        .unwrap();
        let s =
            DiscreteField::interpolate(Arc::new(DofLayout::cell(&tri, 2, 1).unwrap()), &tri, |p| {
                [p.x + 2.0 * p.y, 0.0]
            })
            .unwrap();
        let v =
            DiscreteField::interpolate(Arc::new(DofLayout::cell(&tri, 1, 2).unwrap()), &tri, |p| {
                [p.y, -p.x]
            })
            .unwrap();
        (tri, s, v)
    }

    fn text(tri: &Triangulation, fields: &[(&str, &DiscreteField)], mode: PointData) -> String {
        let mut buf = Vec::new();
        write_vtk(&mut buf, tri, fields, mode).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn vtk_sections_match_mesh() {
        let (tri, s, v) = setup();
        let out = text(&tri, &[("phi", &s), ("u", &v)], PointData::Broken);
        assert!(out.contains(&format!("POINTS {} double", 3 * tri.n_cells())));
        assert!(out.contains(&format!("CELLS {} {}", tri.n_cells(), 4 * tri.n_cells())));
        assert_eq!(out.lines().filter(|l| *l == "5").count(), tri.n_cells());
        assert!(out.contains("SCALARS phi double 1") && out.contains("VECTORS u double"));
        let avg = text(&tri, &[("phi", &s)], PointData::Averaged);
        assert!(avg.contains(&format!("POINTS {} double", tri.n_vertices())));
    }

    #[test]
    fn averaged_continuous_field_reproduces_vertex_values() {
        let (tri, s, _) = setup();
        let out = text(&tri, &[("phi", &s)], PointData::Averaged);
        let values: Vec<f64> = out
            .lines()
            .skip_while(|l| !l.starts_with("LOOKUP_TABLE"))
            .skip(1)
            .map(|l| l.parse().unwrap())
            .collect();
        for (v, p) in values.iter().zip(tri.vertices()) {
            assert!((v - (p.x + 2.0 * p.y)).abs() < 1e-11);
        }
    }

    #[test]
    fn files_are_written_and_io_errors_surface() {
        let (tri, s, _) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/phi_0.vtk");
        write_vtk_file(&path, &tri, &[("phi", &s)], PointData::Broken).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("# vtk"));
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert!(matches!(
            write_report(&blocker.join("r.csv"), &DiagnosticsReport::default()),
            Err(BenchError::Io(_))
        ));
    }
}
