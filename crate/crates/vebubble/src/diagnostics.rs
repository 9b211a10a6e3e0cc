//! Benchmark quantities: energies, the dissipation increment, rise velocity,
//! centre of mass, circularity, volume loss and the element ratio.

use serde::{Deserialize, Serialize};

use crate::bulk_mesh::{CellClass, ElementClassification, Triangulation};
use crate::error::Result;
use crate::fem::{FEFunction, TRI_RULE};
use crate::interface::{circularity, quality_ratio, PolygonalCurve};
use crate::matfun::{elastic_energy_density, SymMat2};

/// One row of `diagnostics.csv`; the field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    #[serde(rename = "E_kin")]
    pub e_kin: f64,
    #[serde(rename = "E_el")]
    pub e_el: f64,
    #[serde(rename = "E_int")]
    pub e_int: f64,
    #[serde(rename = "E_total")]
    pub e_total: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "V_c")]
    pub v_c: f64,
    pub y_c: f64,
    pub circ: f64,
    pub vol_loss: f64,
    pub r: f64,
    pub fp_iters: usize,
    #[serde(rename = "min_eig_B")]
    pub min_eig_b: f64,
}

pub const CSV_HEADER: [&str; 13] =
    ["t", "E_kin", "E_el", "E_int", "E_total", "D", "V_c", "y_c", "circ", "vol_loss", "r", "fp_iters", "min_eig_B"];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyReport {
    pub kinetic: f64,
    pub elastic: f64,
    pub interfacial: f64,
}

impl EnergyReport {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic + self.interfacial
    }
}

/// `½ ∫ ρ |u|²` with a piecewise constant density.
pub fn kinetic_energy(mesh: &Triangulation, u: &FEFunction, rho: &[f64]) -> f64 {
    let mut e = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.area(t);
        let mut s = 0.0;
        for (l, w) in TRI_RULE {
            let v = u.eval_in(t, l);
            s += w * (v[0] * v[0] + v[1] * v[1]);
        }
        e += 0.5 * rho[t] * area * s;
    }
    e
}

/// Lumped `(W(B), 1)` with `W = G/2 tr(B - ln B - I)` and one modulus per
/// element.
pub fn elastic_energy(mesh: &Triangulation, b: &FEFunction, g: &[f64]) -> Result<f64> {
    let mut e = 0.0;
    for t in 0..mesh.n_triangles() {
        if g[t] == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for &k in &mesh.triangles[t] {
            let c = &b.coeffs[3 * k..3 * k + 3];
            s += elastic_energy_density(SymMat2::new(c[0], c[1], c[2]), g[t], None)?;
        }
        e += mesh.area(t) / 3.0 * s;
    }
    Ok(e)
}

pub fn energy_report(
    mesh: &Triangulation,
    u: &FEFunction,
    b: &FEFunction,
    rho: &[f64],
    g: &[f64],
    curve: &PolygonalCurve,
    gamma: f64,
) -> Result<EnergyReport> {
    Ok(EnergyReport {
        kinetic: kinetic_energy(mesh, u, rho),
        elastic: elastic_energy(mesh, b, g)?,
        interfacial: gamma * curve.length(),
    })
}

/// `(ρ f1 + f2, u)` with a piecewise constant density.
pub fn forcing_work(mesh: &Triangulation, u: &FEFunction, rho: &[f64], f1: [f64; 2], f2: [f64; 2]) -> f64 {
    let mut s = 0.0;
    for t in 0..mesh.n_triangles() {
        let f = [rho[t] * f1[0] + f2[0], rho[t] * f1[1] + f2[1]];
        if f == [0.0, 0.0] {
            continue;
        }
        let mut cell = 0.0;
        for (l, w) in TRI_RULE {
            let v = u.eval_in(t, l);
            cell += w * (f[0] * v[0] + f[1] * v[1]);
        }
        s += mesh.area(t) * cell;
    }
    s
}

/// `D = -(E_new - E_before - Δt (ρ f1 + f2, u_new))`, where `E_before` is the
/// energy of the previous step's fields after transfer to the current mesh.
pub fn dissipation_increment(e_new: f64, e_before: f64, dt: f64, work: f64) -> f64 {
    -(e_new - e_before - dt * work)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BubbleMetrics {
    pub v_c: f64,
    pub y_c: f64,
    pub circ: f64,
    pub vol_loss: f64,
    pub r: f64,
}

/// Rise velocity `(ρ₋ u, e₂)/(ρ₋, 1)` where `ρ₋` is the density field with the
/// outer density replaced by zero (interfacial cells carry half the inner
/// density); the rest is read off the polygon.
pub fn bubble_metrics(
    mesh: &Triangulation,
    cls: &ElementClassification,
    u: &FEFunction,
    rho_minus: f64,
    curve: &PolygonalCurve,
    area0: f64,
) -> BubbleMetrics {
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..mesh.n_triangles() {
        let rho = match cls.classes[t] {
            CellClass::Minus => rho_minus,
            CellClass::Interfacial => 0.5 * rho_minus,
            CellClass::Plus => continue,
        };
        let area = mesh.area(t);
        let mut s = 0.0;
        for (l, w) in TRI_RULE {
            s += w * u.eval_in(t, l)[1];
        }
        num += rho * area * s;
        den += rho * area;
    }
    BubbleMetrics {
        v_c: if den > 0.0 { num / den } else { 0.0 },
        y_c: curve.centroid()[1],
        circ: circularity(curve),
        vol_loss: (area0 - curve.area()) / area0,
        r: quality_ratio(curve),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bulk_mesh::{classify_elements, uniform_mesh};
    use crate::fem::{build_space, interpolate, Kind, Rank};
    use crate::interface::{build_polygon, Shape};
    use std::sync::Arc;

    #[test]
    fn equilibrium_energies() {
        let mesh = uniform_mesh([0.0, 0.0, 2.0, 2.0], 8).unwrap();
        let c = build_polygon(Shape::Circle { center: [1.0, 1.0], r: 0.3 }, 64).unwrap();
        let v = Arc::new(build_space(&mesh, Kind::P2, Rank::Vector, &[]));
        let tsp = Arc::new(build_space(&mesh, Kind::P1, Rank::SymTensor, &[]));
        let u = FEFunction::zeros(v.clone());
        let b = interpolate(&mesh, tsp.clone(), |_| [1.0, 0.0, 1.0]);
        let n = mesh.n_triangles();
        let e = energy_report(&mesh, &u, &b, &vec![1.0; n], &vec![1.0; n], &c, 10.0).unwrap();
        assert_eq!(e.kinetic, 0.0);
        assert!(e.elastic.abs() < 1e-15);
        assert!((e.interfacial - 10.0 * c.length()).abs() < 1e-14);

        let u = interpolate(&mesh, v, |_| [1.0, 0.0, 0.0]);
        assert!((kinetic_energy(&mesh, &u, &vec![1.0; n]) - 2.0).abs() < 1e-13);

        let ee = std::f64::consts::E;
        let b = interpolate(&mesh, tsp, |_| [ee, 0.0, 1.0]);
        assert!((elastic_energy(&mesh, &b, &vec![2.0; n]).unwrap() - (ee - 2.0) * 4.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_of_simple_shapes() {
        let mesh = uniform_mesh([0.0, 0.0, 2.0, 2.0], 16).unwrap();
        let sq = PolygonalCurve::new(vec![[0.5, 0.5], [1.5, 0.5], [1.5, 1.5], [0.5, 1.5]]).unwrap();
        let cls = classify_elements(&mesh, &sq).unwrap();
        let v = Arc::new(build_space(&mesh, Kind::P2, Rank::Vector, &[]));
        let u = interpolate(&mesh, v, |_| [0.0, 1.0, 0.0]);
        let m = bubble_metrics(&mesh, &cls, &u, 0.1, &sq, 1.0);
        assert!((m.circ - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-14);
        assert!((m.v_c - 1.0).abs() < 1e-13);
        assert!((m.y_c - 1.0).abs() < 1e-14);
        assert_eq!(m.vol_loss, 0.0);
        assert_eq!(m.r, 1.0);

        let mut prev = 0.0;
        for n in [16, 32, 64, 128] {
            let c = build_polygon(Shape::Circle { center: [1.0, 0.8], r: 0.3 }, n).unwrap();
            let circ = circularity(&c);
            assert!(circ < 1.0 && circ > prev);
            prev = circ;
            assert!((c.centroid()[1] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn dissipation_sign_convention() {
        assert_eq!(dissipation_increment(1.0, 1.5, 0.1, 0.0), 0.5);
        // energy gained from forcing is not counted as negative dissipation
        assert!((dissipation_increment(1.1, 1.0, 0.1, 2.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn header_matches_row() {
        let row = DiagnosticsRow {
            t: 0.0,
            e_kin: 0.0,
            e_el: 0.0,
            e_int: 0.0,
            e_total: 0.0,
            d: 0.0,
            v_c: 0.0,
            y_c: 0.0,
            circ: 1.0,
            vol_loss: 0.0,
            r: 1.0,
            fp_iters: 1,
            min_eig_b: 1.0,
        };
        let mut w = csv::Writer::from_writer(vec![]);
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    }
}
