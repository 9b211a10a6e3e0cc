//! Fixed-point iteration of one time step, the time step itself (mesh
//! adaptation, field transfer, interface update) and the time loop.

use std::path::Path;
use std::sync::Arc;

use crate::assembly::{
    assemble_interface_schur, check_spd, full_residual, InterfaceOperators, NsOperator, ResidualParts, ShearModulus,
    SweepState, VeOperator,
};
use crate::bulk_mesh::{
    adapt_to_interface, classify_with_locator, phase_field, uniform_mesh_tagged, ElementClassification, Locator,
    Triangulation,
};
use crate::config::RunConfig;
use crate::diagnostics::{
    bubble_metrics, dissipation_increment, elastic_energy, energy_report, forcing_work, kinetic_energy, DiagnosticsRow,
    EnergyReport,
};
use crate::error::{Error, Result};
use crate::fem::{build_space, interpolate, p0_transfer, transfer, xfem_enrich, FEFunction, Kind, PressureSpace, Rank};
use crate::interface::{build_polygon, refine_long_elements, Point, PolygonalCurve};
use crate::output::{bulk_path, interface_path, write_poly, write_vtk, BulkSnapshot, DiagnosticsWriter};
use crate::sparse::{inf_norm, SparseLu};

/// The unknowns after a step, living on that step's mesh.
#[derive(Clone)]
pub struct StateFields {
    pub t: f64,
    pub step: usize,
    pub mesh: Arc<Triangulation>,
    pub locator: Arc<Locator>,
    pub cls: ElementClassification,
    pub u: FEFunction,
    /// pressure unknowns: P1, optional P0, optional enrichment
    pub p: Vec<f64>,
    pub b: FEFunction,
    pub curve: PolygonalCurve,
    pub kappa: Vec<f64>,
    /// density on `mesh`, needed as the lagged density of the next step
    pub rho: Vec<f64>,
}

/// Result of the fixed-point iteration of one step.
pub struct FixedPoint {
    pub x: Vec<f64>,
    pub b: FEFunction,
    pub iters: usize,
    pub residual: ResidualParts,
}

/// Iterates NS sweep and tensor sweep until the full residual drops below
/// `tol`. Both matrices are fixed within a step and factored once.
pub fn fixed_point_solve(
    sweep: &SweepState,
    ops: &InterfaceOperators,
    elastic: bool,
    cfg: &RunConfig,
    dump: Option<(&Path, usize)>,
) -> Result<FixedPoint> {
    let ns = NsOperator::assemble(sweep, Some(ops))?;
    let ns_lu = SparseLu::factor(&ns.matrix)?;
    let n_u = ns.layout.n_u;
    let mut b_l = sweep.b_old.clone();
    let mut rhs_ns = ns.rhs(sweep, &b_l);
    if let Some((dir, step)) = dump {
        let sys = crate::sparse::SparseSystem { matrix: ns.matrix.clone(), rhs: rhs_ns.clone(), blocks: vec![] };
        sys.write_matrix_market(dir, &format!("ns_{step:06}"))?;
    }

    if !elastic {
        let x = ns_lu.solve(&rhs_ns)?;
        let residual = full_residual(sweep, &ns, None, None, &x, &b_l, None)?;
        return Ok(FixedPoint { x, b: b_l, iters: 1, residual });
    }

    let ve = VeOperator::assemble(sweep);
    let ve_lu = SparseLu::factor(&ve.matrix)?;
    let nv = sweep.mesh.n_vertices();
    let mut u_l = sweep.u_old.clone();
    check_spd(&b_l)?;
    let mut rhs_b = ve.rhs(sweep, &u_l, &b_l)?;
    if let Some((dir, step)) = dump {
        ve.system(rhs_b.clone()).write_matrix_market(dir, &format!("ve_{step:06}"))?;
    }
    let mut last = f64::INFINITY;
    for iter in 1..=cfg.max_fp_iters {
        let x = ns_lu.solve(&rhs_ns)?;
        let mut u_new = FEFunction::zeros(sweep.velocity.clone());
        u_new.coeffs.copy_from_slice(&x[..n_u]);
        if cfg.gauss_seidel {
            rhs_b = ve.rhs(sweep, &u_new, &b_l)?;
        }
        let mut b_new = FEFunction::zeros(sweep.tensor.clone());
        for c in 0..3 {
            let comp: Vec<f64> = (0..nv).map(|k| rhs_b[3 * k + c]).collect();
            let sol = ve_lu.solve(&comp)?;
            for k in 0..nv {
                b_new.coeffs[3 * k + c] = sol[k];
            }
        }
        check_spd(&b_new)?;

        // residual at the candidate; its right-hand sides drive the next sweep
        let next_ns = ns.rhs(sweep, &b_new);
        let next_b = ve.rhs(sweep, &u_new, &b_new)?;
        let r_ns = inf_norm(&ns.matrix.mul_vec(&x).iter().zip(&next_ns).map(|(a, b)| a - b).collect::<Vec<_>>());
        let r_b = ve.residual(&b_new, &next_b);
        let residual = ResidualParts { navier_stokes: r_ns, tensor: r_b, interface: 0.0 };
        last = residual.max();
        if last <= cfg.tol {
            return Ok(FixedPoint { x, b: b_new, iters: iter, residual });
        }
        if !last.is_finite() {
            break;
        }
        rhs_ns = next_ns;
        rhs_b = next_b;
        u_l = u_new;
        b_l = b_new;
    }
    let _ = u_l;
    Err(Error::NoConvergence { iters: cfg.max_fp_iters, residual: last })
}

/// Per-step report besides the diagnostics row.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub row: DiagnosticsRow,
    pub residual: ResidualParts,
    /// energy of the previous fields on the new mesh, the reference for `D`
    pub energy_before: EnergyReport,
    pub energy: EnergyReport,
    /// `⟨X - id, ω⟩` summed over vertices: the discrete volume flux
    pub normal_displacement: f64,
    pub max_displacement: f64,
    pub n_triangles: usize,
    pub n_interface: usize,
}

/// Everything that stays fixed during a run.
pub struct Simulation {
    pub cfg: RunConfig,
    pub coarse: Triangulation,
    /// reference segment length for interface refinement
    pub vol_max: f64,
    pub area0: f64,
    pub state: StateFields,
}

fn shear_field(cfg: &RunConfig, cls: &ElementClassification) -> (ShearModulus, Vec<f64>) {
    let (gm, gp) = cfg.shear_moduli();
    if cfg.variable_g {
        let f = phase_field(cls, gm, gp).values;
        (ShearModulus::per_cell(f.clone()), f)
    } else {
        (ShearModulus::Constant(gm), vec![gm; cls.classes.len()])
    }
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.domain;
        let cells = ((d[2] - d[0]) / cfg.h_coarse()).round().max(1.0) as usize;
        let coarse = uniform_mesh_tagged(d, cells, cfg.boundary)?;
        let curve = build_polygon(cfg.shape, cfg.interface_n)?;
        let vol_max = curve.lengths().iter().cloned().fold(0.0, f64::max);
        let area0 = curve.area();
        let mesh = Arc::new(adapt_to_interface(&coarse, &curve, cfg.h_fine())?);
        let locator = Arc::new(Locator::new(&mesh));
        let cls = classify_with_locator(&mesh, &locator, &curve)?;
        check_inside(&curve, &mesh)?;
        let velocity =
            Arc::new(build_space(&mesh, Kind::P2, Rank::Vector, &[crate::bulk_mesh::BoundaryTag::Dirichlet]));
        let tensor = Arc::new(build_space(&mesh, Kind::P1, Rank::SymTensor, &[]));
        let rho = phase_field(&cls, cfg.params.rho_minus, cfg.params.rho_plus).values;
        let state = StateFields {
            t: 0.0,
            step: 0,
            u: FEFunction::zeros(velocity),
            p: Vec::new(),
            b: interpolate(&mesh, tensor, |_| [1.0, 0.0, 1.0]),
            kappa: vec![0.0; curve.len()],
            curve,
            rho,
            cls,
            locator,
            mesh,
        };
        Ok(Self { cfg, coarse, vol_max, area0, state })
    }

    /// Energy of the current state with its own density and modulus.
    pub fn energy(&self) -> Result<EnergyReport> {
        let s = &self.state;
        let (_, g) = shear_field(&self.cfg, &s.cls);
        energy_report(&s.mesh, &s.u, &s.b, &s.rho, &g, &s.curve, self.cfg.params.gamma)
    }

    /// Builds the mesh and spaces of the next step and transfers the fields.
    pub fn prepare_step(&self) -> Result<(SweepState, ElementClassification, PolygonalCurve)> {
        let cfg = &self.cfg;
        let s = &self.state;
        let curve = refine_long_elements(&s.curve, self.vol_max);
        let mesh = Arc::new(adapt_to_interface(&self.coarse, &curve, cfg.h_fine())?);
        let locator = Arc::new(Locator::new(&mesh));
        let cls = classify_with_locator(&mesh, &locator, &curve)?;
        let dirichlet = [crate::bulk_mesh::BoundaryTag::Dirichlet];
        let velocity = Arc::new(build_space(&mesh, Kind::P2, Rank::Vector, &dirichlet));
        let tensor = Arc::new(build_space(&mesh, Kind::P1, Rank::SymTensor, &[]));
        let mut pressure = PressureSpace::new(&mesh, cfg.pressure_p0);
        if cfg.xfem {
            pressure = pressure.with_xfem(xfem_enrich(&mesh, &velocity, &curve, &cls)?);
        }
        let mut u_old = transfer(&s.u, &s.mesh, &s.locator, &mesh, velocity.clone())?;
        for (c, fixed) in u_old.coeffs.iter_mut().zip(&velocity.dirichlet) {
            if *fixed {
                *c = 0.0;
            }
        }
        let b_old = transfer(&s.b, &s.mesh, &s.locator, &mesh, tensor.clone())?;
        let rho_prev = p0_transfer(&s.mesh, &s.locator, &s.rho, &mesh)?;
        let p = &cfg.params;
        let (g, _) = shear_field(cfg, &cls);
        let sweep = SweepState {
            rho: phase_field(&cls, p.rho_minus, p.rho_plus).values,
            mu: phase_field(&cls, p.mu_minus, p.mu_plus).values,
            lambda: phase_field(&cls, p.lambda_minus, p.lambda_plus).values,
            g,
            gamma: p.gamma,
            alpha: p.alpha,
            dt: cfg.dt,
            f1: p.f1,
            f2: p.f2,
            mesh,
            locator,
            velocity,
            tensor,
            pressure,
            u_old,
            b_old,
            rho_prev,
        };
        Ok((sweep, cls, curve))
    }

    /// One time step; on success the state is replaced.
    pub fn advance(&mut self, dump_dir: Option<&Path>) -> Result<StepReport> {
        let cfg = self.cfg.clone();
        let (sweep, cls, curve) = self.prepare_step()?;
        let ops = assemble_interface_schur(&curve, cfg.dt, &sweep.mesh, &sweep.locator, &sweep.velocity)?;
        let step = self.state.step + 1;
        let dump = if cfg.dump_matrices { dump_dir.map(|d| (d, step)) } else { None };
        let fp = fixed_point_solve(&sweep, &ops, cfg.elastic(), &cfg, dump)?;
        let n_u = sweep.velocity.n_dofs();
        let mut u = FEFunction::zeros(sweep.velocity.clone());
        u.coeffs.copy_from_slice(&fp.x[..n_u]);
        let (x, kappa) = ops.recover(&u.coeffs)?;
        let mut residual = fp.residual;
        residual.interface = ops.sub.residual(&x, &kappa, &ops.flux(&u.coeffs));

        let mut normal_displacement = 0.0;
        let mut max_displacement = 0.0f64;
        for (k, (a, q)) in x.iter().zip(curve.vertices()).enumerate() {
            let d = [a[0] - q[0], a[1] - q[1]];
            normal_displacement += d[0] * ops.sub.omega[k][0] + d[1] * ops.sub.omega[k][1];
            max_displacement = max_displacement.max(d[0].hypot(d[1]));
        }
        let new_curve = PolygonalCurve::new(x)?;
        check_inside(&new_curve, &sweep.mesh)?;
        if let Some((i, j)) = new_curve.self_intersection() {
            return Err(Error::SelfIntersectingInterface(i, j));
        }
        let min_eig_b = if cfg.elastic() { check_spd(&fp.b)? } else { 1.0 };

        let (_, g) = shear_field(&cfg, &cls);
        let p = &cfg.params;
        let energy_before = EnergyReport {
            kinetic: kinetic_energy(&sweep.mesh, &sweep.u_old, &sweep.rho_prev),
            elastic: elastic_energy(&sweep.mesh, &sweep.b_old, &g)?,
            interfacial: p.gamma * curve.length(),
        };
        let energy = energy_report(&sweep.mesh, &u, &fp.b, &sweep.rho, &g, &new_curve, p.gamma)?;
        let work = forcing_work(&sweep.mesh, &u, &sweep.rho, p.f1, p.f2);
        let d = dissipation_increment(energy.total(), energy_before.total(), cfg.dt, work);
        let m = bubble_metrics(&sweep.mesh, &cls, &u, p.rho_minus, &new_curve, self.area0);
        let t = step as f64 * cfg.dt;
        let row = DiagnosticsRow {
            t,
            e_kin: energy.kinetic,
            e_el: energy.elastic,
            e_int: energy.interfacial,
            e_total: energy.total(),
            d,
            v_c: m.v_c,
            y_c: m.y_c,
            circ: m.circ,
            vol_loss: m.vol_loss,
            r: m.r,
            fp_iters: fp.iters,
            min_eig_b,
        };
        let report = StepReport {
            row,
            residual,
            energy_before,
            energy,
            normal_displacement,
            max_displacement,
            n_triangles: sweep.mesh.n_triangles(),
            n_interface: new_curve.len(),
        };
        self.state = StateFields {
            t,
            step,
            mesh: sweep.mesh.clone(),
            locator: sweep.locator.clone(),
            cls,
            u,
            p: fp.x[n_u..n_u + sweep.pressure.n_dofs()].to_vec(),
            b: fp.b,
            curve: new_curve,
            kappa,
            rho: sweep.rho,
        };
        Ok(report)
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let s = &self.state;
        write_poly(&interface_path(dir, s.step), &s.curve, s.t)?;
        let n_p1 = s.mesh.n_vertices();
        let zeros;
        let p1 = if s.p.len() >= n_p1 {
            &s.p[..n_p1]
        } else {
            zeros = vec![0.0; n_p1];
            &zeros[..]
        };
        let snap = BulkSnapshot { mesh: &s.mesh, u: &s.u, b: &s.b, p1, rho: &s.rho, classes: &s.cls.classes };
        write_vtk(&bulk_path(dir, s.step), &snap, s.t)
    }
}

/// Every vertex strictly inside the domain.
fn check_inside(curve: &PolygonalCurve, mesh: &Triangulation) -> Result<()> {
    let [x0, y0, x1, y1] = mesh.bounds;
    for (k, p) in curve.vertices().iter().enumerate() {
        let q: Point = *p;
        if !(q[0] > x0 && q[0] < x1 && q[1] > y0 && q[1] < y1) {
            return Err(Error::InterfaceLeftDomain(k));
        }
    }
    Ok(())
}

/// Diagnostics of a whole run plus the final state.
pub struct RunOutput {
    pub rows: Vec<DiagnosticsRow>,
    pub reports: Vec<StepReport>,
    pub initial_energy: EnergyReport,
    pub state: StateFields,
}

/// Runs `T/Δt` steps. With an output directory, writes `diagnostics.csv`
/// row by row and snapshots at step 0, every `snapshot_cadence` steps and at
/// the last step; a failing step leaves the last accepted state on disk.
pub fn run_simulation(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg.clone())?;
    let n = cfg.n_steps();
    let cadence = cfg.snapshot_cadence;
    let snap = |k: usize| cadence > 0 && (k.is_multiple_of(cadence) || k == n);
    let mut writer = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(DiagnosticsWriter::create(&dir.join("diagnostics.csv"))?)
        }
        None => None,
    };
    if let Some(dir) = out {
        if snap(0) {
            sim.write_snapshot(dir)?;
        }
    }
    let initial_energy = sim.energy()?;
    let mut rows = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    for k in 1..=n {
        let rep = match sim.advance(out) {
            Ok(r) => r,
            Err(e) => {
                if let Some(dir) = out {
                    sim.write_snapshot(dir)?;
                }
                return Err(e);
            }
        };
        if let Some(w) = writer.as_mut() {
            w.push(&rep.row)?;
        }
        if let Some(dir) = out {
            if snap(k) {
                sim.write_snapshot(dir)?;
            }
        }
        rows.push(rep.row.clone());
        reports.push(rep);
    }
    Ok(RunOutput { rows, reports, initial_energy, state: sim.state })
}
