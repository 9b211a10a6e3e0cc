//! Files written by a run: `diagnostics.csv`, interface polylines in the
//! `.poly` format and bulk snapshots as legacy ASCII VTK unstructured grids.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::bulk_mesh::{CellClass, Triangulation};
use crate::diagnostics::DiagnosticsRow;
use crate::error::Result;
use crate::fem::FEFunction;
use crate::interface::PolygonalCurve;

/// Appends rows to `diagnostics.csv`, flushing after each one so an aborted
/// run keeps what it computed.
pub struct DiagnosticsWriter {
    inner: csv::Writer<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { inner: csv::Writer::from_path(path)? })
    }

    pub fn push(&mut self, row: &DiagnosticsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_csv(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    let mut w = DiagnosticsWriter::create(path)?;
    for r in rows {
        w.push(r)?;
    }
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<DiagnosticsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn interface_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("interface_{step:06}.poly"))
}

pub fn bulk_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("bulk_{step:06}.vtk"))
}

/// Closed polyline: vertex block, then segment block, no holes.
pub fn write_poly(path: &Path, curve: &PolygonalCurve, t: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = curve.len();
    writeln!(w, "# t = {t:.10e}")?;
    writeln!(w, "{n} 2 0 0")?;
    for (k, p) in curve.vertices().iter().enumerate() {
        writeln!(w, "{} {:.17e} {:.17e}", k + 1, p[0], p[1])?;
    }
    writeln!(w, "{n} 0")?;
    for k in 0..n {
        writeln!(w, "{} {} {}", k + 1, k + 1, (k + 1) % n + 1)?;
    }
    writeln!(w, "0")?;
    w.flush()?;
    Ok(())
}

pub fn read_poly(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let bad = || crate::Error::InvalidConfig(format!("malformed poly file {}", path.display()));
    let n: usize = lines.next().and_then(|l| l.split_whitespace().next()?.parse().ok()).ok_or_else(bad)?;
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next().ok_or_else(bad)?;
        let f: Vec<f64> = l.split_whitespace().skip(1).filter_map(|s| s.parse().ok()).collect();
        if f.len() < 2 {
            return Err(bad());
        }
        pts.push([f[0], f[1]]);
    }
    Ok(pts)
}

/// Bulk fields at one step. Velocity is written at the mesh vertices.
pub struct BulkSnapshot<'a> {
    pub mesh: &'a Triangulation,
    pub u: &'a FEFunction,
    pub b: &'a FEFunction,
    /// P1 part of the pressure
    pub p1: &'a [f64],
    pub rho: &'a [f64],
    pub classes: &'a [CellClass],
}

pub fn write_vtk(path: &Path, s: &BulkSnapshot, t: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let nv = s.mesh.n_vertices();
    let nt = s.mesh.n_triangles();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "t = {t:.10e}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for p in &s.mesh.vertices {
        writeln!(w, "{:.17e} {:.17e} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for tri in &s.mesh.triangles {
        writeln!(w, "3 {} {} {}", tri[0], tri[1], tri[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    writeln!(w, "VECTORS u double")?;
    for k in 0..nv {
        // P2 vertex nodes share the mesh vertex numbering
        let (ux, uy) = (s.u.coeffs[s.u.space.dof(k, 0)], s.u.coeffs[s.u.space.dof(k, 1)]);
        writeln!(w, "{ux:.17e} {uy:.17e} 0")?;
    }
    for (c, name) in ["B11", "B12", "B22"].iter().enumerate() {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for k in 0..nv {
            writeln!(w, "{:.17e}", s.b.coeffs[3 * k + c])?;
        }
    }
    writeln!(w, "SCALARS p double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in s.p1 {
        writeln!(w, "{v:.17e}")?;
    }
    writeln!(w, "CELL_DATA {nt}")?;
    writeln!(w, "SCALARS rho double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in s.rho {
        writeln!(w, "{v:.17e}")?;
    }
    writeln!(w, "SCALARS class int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for c in s.classes {
        let id = match c {
            CellClass::Minus => -1,
            CellClass::Interfacial => 0,
            CellClass::Plus => 1,
        };
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interface::{build_polygon, Shape};

    #[test]
    fn poly_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = build_polygon(Shape::Circle { center: [1.0, 0.8], r: 0.3 }, 17).unwrap();
        let p = interface_path(dir.path(), 3);
        assert!(p.ends_with("interface_000003.poly"));
        write_poly(&p, &c, 0.5).unwrap();
        assert_eq!(read_poly(&p).unwrap(), c.vertices());
    }
}
