//! Linear systems of one fixed-point sweep: the interface subsystem and its
//! Schur complement, the Navier–Stokes block and the viscoelastic block.

use std::sync::Arc;

use faer::Mat;

use crate::bulk_mesh::{Locator, Triangulation};
use crate::error::{Error, Result};
use crate::fem::{
    basis_grads, basis_values, interface_quadrature, ElementGeom, FEFunction, FESpace, Kind, PressureSpace, TRI_RULE,
};
use crate::interface::{lumped_vertex_normals, vertex_normals_span, Point, PolygonalCurve};
use crate::lambda::{assemble_lambda, RefMapping};
use crate::matfun::SymMat2;
pub use crate::sparse::SparseSystem;
use crate::sparse::{inf_norm, CsrMatrix, DenseLu, TripletBuilder};

/// Saddle-point system for `(X, κ)` on a polygonal curve:
///
/// ```text
/// [ A   N ] [X]   [        0        ]
/// [ Nᵀ  0 ] [κ] = [ Nᵀ q + Δt flux  ]
/// ```
///
/// with `A` the surface stiffness, `N` the lumped vertex normals and
/// `flux_k = ⟨u·ν, φ_k⟩`. Unknown order: X interleaved, then κ.
pub struct InterfaceSubsystem {
    pub curve: PolygonalCurve,
    pub omega: Vec<Point>,
    pub dt: f64,
    matrix: Mat<f64>,
    lu: DenseLu,
}

impl InterfaceSubsystem {
    pub fn new(curve: &PolygonalCurve, dt: f64) -> Result<Self> {
        let (_, rank) = vertex_normals_span(curve);
        if rank < 2 {
            return Err(Error::SpanDeficient(rank));
        }
        let n = curve.len();
        let omega = lumped_vertex_normals(curve);
        let mut s = Mat::<f64>::zeros(3 * n, 3 * n);
        for k in 0..n {
            let k1 = (k + 1) % n;
            let w = 1.0 / curve.lengths()[k];
            for a in 0..2 {
                let (i, j) = (2 * k + a, 2 * k1 + a);
                s[(i, i)] += w;
                s[(j, j)] += w;
                s[(i, j)] -= w;
                s[(j, i)] -= w;
            }
            for a in 0..2 {
                s[(2 * k + a, 2 * n + k)] = omega[k][a];
                s[(2 * n + k, 2 * k + a)] = omega[k][a];
            }
        }
        let lu = DenseLu::factor(s.clone());
        Ok(Self { curve: curve.clone(), omega, dt, matrix: s, lu })
    }

    pub fn len(&self) -> usize {
        self.curve.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curve.len() == 0
    }

    fn rhs(&self, flux: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut b = vec![0.0; 3 * n];
        for k in 0..n {
            let q = self.curve.vertices()[k];
            b[2 * n + k] = self.omega[k][0] * q[0] + self.omega[k][1] * q[1] + self.dt * flux[k];
        }
        b
    }

    /// New vertex positions and curvature for the given normal fluxes.
    pub fn solve(&self, flux: &[f64]) -> Result<(Vec<Point>, Vec<f64>)> {
        let n = self.len();
        if flux.len() != n {
            return Err(Error::ShapeMismatch(format!("{} fluxes for {} vertices", flux.len(), n)));
        }
        let x = self.lu.solve(&self.rhs(flux))?;
        let pos = (0..n).map(|k| [x[2 * k], x[2 * k + 1]]).collect();
        Ok((pos, x[2 * n..].to_vec()))
    }

    /// ℓ∞ residual of both equation blocks at `(x, kappa)`.
    pub fn residual(&self, x: &[Point], kappa: &[f64], flux: &[f64]) -> f64 {
        let n = self.len();
        let mut v = vec![0.0; 3 * n];
        for k in 0..n {
            v[2 * k] = x[k][0];
            v[2 * k + 1] = x[k][1];
            v[2 * n + k] = kappa[k];
        }
        let b = self.rhs(flux);
        let mut r = 0.0f64;
        for i in 0..3 * n {
            let mut acc = -b[i];
            for j in 0..3 * n {
                acc += self.matrix[(i, j)] * v[j];
            }
            r = r.max(acc.abs());
        }
        r
    }

    /// Responses of `(X, κ)` to a unit flux at each vertex: columns of the
    /// lower-right and lower-left blocks of the inverse, each scaled by Δt.
    fn responses(&self) -> Result<Mat<f64>> {
        let n = self.len();
        let mut rhs = Mat::<f64>::zeros(3 * n, n);
        for k in 0..n {
            rhs[(2 * n + k, k)] = 1.0;
        }
        self.lu.solve_mat(rhs)
    }
}

/// Interface operators on the current bulk mesh: the subsystem, the
/// coupling `C[k, dof] = ⟨φ_k ν, φ_dof⟩` and the affine map `u ↦ κ(u)`.
pub struct InterfaceOperators {
    pub sub: InterfaceSubsystem,
    pub coupling: CsrMatrix,
    /// κ at zero flux
    pub kappa0: Vec<f64>,
    /// `dκ/dflux`, K×K and symmetric
    pub r: Mat<f64>,
}

pub fn assemble_interface_schur(
    curve: &PolygonalCurve,
    dt: f64,
    mesh: &Triangulation,
    locator: &Locator,
    velocity: &FESpace,
) -> Result<InterfaceOperators> {
    let sub = InterfaceSubsystem::new(curve, dt)?;
    let coupling = interface_coupling_matrix(mesh, locator, velocity, curve)?;
    let (_, kappa0) = sub.solve(&vec![0.0; curve.len()])?;
    let resp = sub.responses()?;
    let n = curve.len();
    let r = Mat::<f64>::from_fn(n, n, |i, j| resp[(2 * n + i, j)]);
    Ok(InterfaceOperators { sub, coupling, kappa0, r })
}

/// `C[k, (node, a)] = ∫_Γ φ_k ν_a φ_node`, with `φ_k` the hat functions on
/// the curve.
pub fn interface_coupling_matrix(
    mesh: &Triangulation,
    locator: &Locator,
    velocity: &FESpace,
    curve: &PolygonalCurve,
) -> Result<CsrMatrix> {
    let n = curve.len();
    let mut b = TripletBuilder::new(n, velocity.n_dofs());
    for sp in interface_quadrature(mesh, locator, curve, 3)? {
        let k = sp.segment;
        let nu = curve.normals()[k];
        let phi = basis_values(velocity.kind, sp.bary);
        let nodes = velocity.nodes(sp.cell);
        for (vtx, hat) in [(k, 1.0 - sp.s), ((k + 1) % n, sp.s)] {
            for (m, &node) in nodes.iter().enumerate() {
                for a in 0..2 {
                    b.add(vtx, velocity.dof(node, a), sp.weight * hat * nu[a] * phi[m]);
                }
            }
        }
    }
    Ok(b.build())
}

impl InterfaceOperators {
    pub fn flux(&self, u: &[f64]) -> Vec<f64> {
        self.coupling.mul_vec(u)
    }

    pub fn recover(&self, u: &[f64]) -> Result<(Vec<Point>, Vec<f64>)> {
        self.sub.solve(&self.flux(u))
    }
}

/// Shear modulus: one value, or one value per element in the variable
/// formulation where it also weights every term of the tensor equation.
#[derive(Clone, Debug, PartialEq)]
pub enum ShearModulus {
    Constant(f64),
    /// per-cell moduli and their maximum
    PerCell(Vec<f64>, f64),
}

impl ShearModulus {
    pub fn per_cell(g: Vec<f64>) -> Self {
        let max = g.iter().fold(0.0f64, |m, &v| m.max(v));
        ShearModulus::PerCell(g, max)
    }

    /// Factor of the elastic load in the momentum equation.
    pub fn load(&self, t: usize) -> f64 {
        match self {
            ShearModulus::Constant(g) => *g,
            ShearModulus::PerCell(v, _) => v[t],
        }
    }

    /// Factor of the tensor equation. Per-cell moduli enter relative to the
    /// largest one: the whole equation is scaled by a constant, which leaves
    /// the solution alone but keeps the rows, and so the rounding floor of
    /// their residual, at the size they have for a constant modulus.
    pub fn weight(&self, t: usize) -> f64 {
        match self {
            ShearModulus::Constant(_) => 1.0,
            ShearModulus::PerCell(v, max) => v[t] / max,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ShearModulus::Constant(g) => *g == 0.0,
            ShearModulus::PerCell(_, max) => *max == 0.0,
        }
    }
}

/// Everything one time step's sweeps depend on, living on the current mesh.
#[derive(Clone)]
pub struct SweepState {
    pub mesh: Arc<Triangulation>,
    pub locator: Arc<Locator>,
    pub velocity: Arc<FESpace>,
    pub tensor: Arc<FESpace>,
    pub pressure: PressureSpace,
    /// previous velocity interpolated onto the current mesh
    pub u_old: FEFunction,
    /// previous tensor interpolated onto the current mesh
    pub b_old: FEFunction,
    pub rho: Vec<f64>,
    /// previous density projected onto the current mesh
    pub rho_prev: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub g: ShearModulus,
    pub gamma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub f1: Point,
    pub f2: Point,
}

/// Sizes of the Navier–Stokes unknown blocks, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NsLayout {
    pub n_u: usize,
    pub n_p1: usize,
    pub n_p0: usize,
    pub xfem: bool,
    pub n_mult: usize,
}

impl NsLayout {
    pub fn n_p(&self) -> usize {
        self.n_p1 + self.n_p0 + usize::from(self.xfem)
    }

    pub fn len(&self) -> usize {
        self.n_u + self.n_p() + self.n_mult
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn p_offset(&self) -> usize {
        self.n_u
    }

    pub fn xfem_index(&self) -> Option<usize> {
        self.xfem.then_some(self.n_u + self.n_p1 + self.n_p0)
    }

    pub fn mult_offset(&self) -> usize {
        self.n_u + self.n_p()
    }
}

/// Which velocity-block terms to assemble; tests isolate single terms.
#[derive(Clone, Copy, Debug)]
pub struct VelocityTerms {
    pub mass: bool,
    pub advection: bool,
    pub viscous: bool,
}

impl VelocityTerms {
    pub const ALL: Self = Self { mass: true, advection: true, viscous: true };
}

/// Velocity block over all velocity dofs, without boundary conditions.
pub fn velocity_block(state: &SweepState, terms: VelocityTerms) -> CsrMatrix {
    let v = &*state.velocity;
    let mesh = &*state.mesh;
    let mut b = TripletBuilder::new(v.n_dofs(), v.n_dofs());
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeom::new(mesh, t);
        let nodes = v.nodes(t);
        let cm = (state.rho[t] + state.rho_prev[t]) / (2.0 * state.dt);
        let (rho, mu) = (state.rho[t], state.mu[t]);
        let mut local = [[0.0; 12]; 12];
        for (l, wq) in TRI_RULE {
            let w = wq * geom.area;
            let phi = basis_values(Kind::P2, l);
            let g = basis_grads(Kind::P2, l, &geom.grad_l);
            let ub = state.u_old.eval_in(t, l);
            for i in 0..6 {
                let adv_i = ub[0] * g[i][0] + ub[1] * g[i][1];
                for j in 0..6 {
                    let mut diag = 0.0;
                    if terms.mass {
                        diag += cm * phi[i] * phi[j];
                    }
                    if terms.advection {
                        let adv_j = ub[0] * g[j][0] + ub[1] * g[j][1];
                        diag += 0.5 * rho * (adv_j * phi[i] - phi[j] * adv_i);
                    }
                    if terms.viscous {
                        diag += mu * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    }
                    for a in 0..2 {
                        local[2 * i + a][2 * j + a] += w * diag;
                        if terms.viscous {
                            for c in 0..2 {
                                local[2 * i + a][2 * j + c] += w * mu * g[j][a] * g[i][c];
                            }
                        }
                    }
                }
            }
        }
        for i in 0..12 {
            for j in 0..12 {
                b.add(v.dof(nodes[i / 2], i % 2), v.dof(nodes[j / 2], j % 2), local[i][j]);
            }
        }
    }
    b.build()
}

/// `-(q, div w)` for the P1 and P0 pressure parts: triplets (pressure index,
/// velocity dof, value), pressure indices counted from zero.
fn divergence_triplets(state: &SweepState) -> Vec<(usize, usize, f64)> {
    let v = &*state.velocity;
    let mesh = &*state.mesh;
    let n_p1 = state.pressure.p1.n_dofs();
    let mut out = Vec::new();
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeom::new(mesh, t);
        let nodes = v.nodes(t);
        let tri = mesh.triangles[t];
        let mut local = [[[0.0; 2]; 6]; 3];
        let mut cell = [[0.0; 2]; 6];
        for (l, wq) in TRI_RULE {
            let w = wq * geom.area;
            let g = basis_grads(Kind::P2, l, &geom.grad_l);
            for j in 0..6 {
                for c in 0..2 {
                    for k in 0..3 {
                        local[k][j][c] -= w * l[k] * g[j][c];
                    }
                    cell[j][c] -= w * g[j][c];
                }
            }
        }
        for j in 0..6 {
            for c in 0..2 {
                let dof = v.dof(nodes[j], c);
                for k in 0..3 {
                    out.push((tri[k], dof, local[k][j][c]));
                }
                if state.pressure.p0 {
                    out.push((n_p1 + t, dof, cell[j][c]));
                }
            }
        }
    }
    out
}

/// The Navier–Stokes operator of one time step. The matrix does not change
/// between sweeps; only the elastic load in the right-hand side does.
pub struct NsOperator {
    pub layout: NsLayout,
    pub matrix: CsrMatrix,
    /// right-hand side without the elastic load
    pub base_rhs: Vec<f64>,
}

impl NsOperator {
    pub fn assemble(state: &SweepState, ops: Option<&InterfaceOperators>) -> Result<Self> {
        let v = &*state.velocity;
        let mesh = &*state.mesh;
        let all_dirichlet = mesh.boundary.values().all(|&t| t == crate::bulk_mesh::BoundaryTag::Dirichlet);
        let layout = NsLayout {
            n_u: v.n_dofs(),
            n_p1: state.pressure.p1.n_dofs(),
            n_p0: state.pressure.n_p0(),
            xfem: state.pressure.xfem.is_some(),
            n_mult: usize::from(all_dirichlet) + usize::from(state.pressure.p0),
        };
        let n = layout.len();
        let fixed = &v.dirichlet;
        let mut b = TripletBuilder::new(n, n);

        let vel = velocity_block(state, VelocityTerms::ALL);
        for i in 0..layout.n_u {
            if fixed[i] {
                continue;
            }
            for (j, val) in vel.row(i) {
                if !fixed[j] {
                    b.add(i, j, val);
                }
            }
        }
        for i in 0..layout.n_u {
            if fixed[i] {
                b.add(i, i, 1.0);
            }
        }
        let po = layout.p_offset();
        for (p, dof, val) in divergence_triplets(state) {
            if !fixed[dof] {
                b.add(po + p, dof, val);
                b.add(dof, po + p, val);
            }
        }
        if let (Some(xi), Some(x)) = (layout.xfem_index(), state.pressure.xfem.as_ref()) {
            for &(dof, val) in &x.column {
                if !fixed[dof] {
                    b.add(xi, dof, -val);
                    b.add(dof, xi, -val);
                }
            }
        }
        // mean-value constraints, as means rather than integrals so that the
        // row weights sum to one and the row's rounding floor does not grow
        // with the domain
        let mo = layout.mult_offset();
        let mut m = mo;
        let inv_area = 1.0 / mesh.domain_area();
        if all_dirichlet {
            let mut integrals = vec![0.0; layout.n_p1];
            for t in 0..mesh.n_triangles() {
                for &k in &mesh.triangles[t] {
                    integrals[k] += mesh.area(t) / 3.0;
                }
            }
            for (k, w) in integrals.into_iter().enumerate() {
                b.add(m, po + k, w * inv_area);
                b.add(po + k, m, w * inv_area);
            }
            if let (Some(xi), Some(x)) = (layout.xfem_index(), state.pressure.xfem.as_ref()) {
                b.add(m, xi, x.volume * inv_area);
                b.add(xi, m, x.volume * inv_area);
            }
            m += 1;
        }
        if state.pressure.p0 {
            for t in 0..mesh.n_triangles() {
                let a = mesh.area(t) * inv_area;
                b.add(m, po + layout.n_p1 + t, a);
                b.add(po + layout.n_p1 + t, m, a);
            }
        }

        let mut rhs = vec![0.0; n];
        for t in 0..mesh.n_triangles() {
            let geom = ElementGeom::new(mesh, t);
            let nodes = v.nodes(t);
            let force = [state.rho[t] * state.f1[0] + state.f2[0], state.rho[t] * state.f1[1] + state.f2[1]];
            let cm = state.rho_prev[t] / state.dt;
            for (l, wq) in TRI_RULE {
                let w = wq * geom.area;
                let phi = basis_values(Kind::P2, l);
                let ub = state.u_old.eval_in(t, l);
                for i in 0..6 {
                    for a in 0..2 {
                        rhs[v.dof(nodes[i], a)] += w * phi[i] * (cm * ub[a] + force[a]);
                    }
                }
            }
        }

        if let Some(ops) = ops {
            if state.gamma != 0.0 {
                add_surface_tension(&mut b, &mut rhs, ops, state.gamma, state.dt, fixed)?;
            }
        }
        for i in 0..layout.n_u {
            if fixed[i] {
                rhs[i] = 0.0;
            }
        }
        Ok(Self { layout, matrix: b.build(), base_rhs: rhs })
    }

    /// Right-hand side with the elastic load of `b_lag`.
    pub fn rhs(&self, state: &SweepState, b_lag: &FEFunction) -> Vec<f64> {
        let mut rhs = self.base_rhs.clone();
        if !state.g.is_zero() {
            let load = elastic_load(state, b_lag);
            for (i, l) in load.into_iter().enumerate() {
                if !state.velocity.dirichlet[i] {
                    rhs[i] += l;
                }
            }
        }
        rhs
    }

    pub fn system(&self, state: &SweepState, b_lag: &FEFunction) -> SparseSystem {
        SparseSystem {
            matrix: self.matrix.clone(),
            rhs: self.rhs(state, b_lag),
            blocks: vec![("u", self.layout.n_u), ("p", self.layout.n_p()), ("multiplier", self.layout.n_mult)],
        }
    }
}

/// Adds `γ Cᵀ κ(u)` with `κ(u) = κ0 + Δt R C u`: the constant part to the
/// right-hand side and the dense Schur term to the velocity block.
fn add_surface_tension(
    b: &mut TripletBuilder,
    rhs: &mut [f64],
    ops: &InterfaceOperators,
    gamma: f64,
    dt: f64,
    fixed: &[bool],
) -> Result<()> {
    let c = &ops.coupling;
    let k = c.n_rows;
    for i in 0..k {
        for (dof, val) in c.row(i) {
            rhs[dof] += gamma * val * ops.kappa0[i];
        }
    }
    let mut dofs: Vec<usize> = (0..k).flat_map(|i| c.row(i).map(|(d, _)| d)).filter(|&d| !fixed[d]).collect();
    dofs.sort_unstable();
    dofs.dedup();
    let nd = dofs.len();
    let pos: std::collections::HashMap<usize, usize> = dofs.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut cd = Mat::<f64>::zeros(k, nd);
    for i in 0..k {
        for (dof, val) in c.row(i) {
            if let Some(&j) = pos.get(&dof) {
                cd[(i, j)] += val;
            }
        }
    }
    let rc = &ops.r * &cd;
    let schur = cd.transpose() * &rc;
    let s = -gamma * dt;
    for i in 0..nd {
        for j in 0..nd {
            let v = s * schur[(i, j)];
            if v != 0.0 {
                b.add(dofs[i], dofs[j], v);
            }
        }
    }
    if !(0..nd).all(|i| schur[(i, i)].is_finite()) {
        return Err(Error::SingularSystem("non-finite Schur complement".into()));
    }
    Ok(())
}

/// `-(G (B - I), ∇w)` for every velocity dof, with `∇w_ab = ∂_b w_a`.
pub fn elastic_load(state: &SweepState, b_lag: &FEFunction) -> Vec<f64> {
    let v = &*state.velocity;
    let mesh = &*state.mesh;
    let mut out = vec![0.0; v.n_dofs()];
    for t in 0..mesh.n_triangles() {
        let gk = state.g.load(t);
        if gk == 0.0 {
            continue;
        }
        let geom = ElementGeom::new(mesh, t);
        let nodes = v.nodes(t);
        for (l, wq) in TRI_RULE {
            let w = wq * geom.area * gk;
            let bv = b_lag.eval_in(t, l);
            let s = [[bv[0] - 1.0, bv[1]], [bv[1], bv[2] - 1.0]];
            let g = basis_grads(Kind::P2, l, &geom.grad_l);
            for i in 0..6 {
                for a in 0..2 {
                    out[v.dof(nodes[i], a)] -= w * (s[a][0] * g[i][0] + s[a][1] * g[i][1]);
                }
            }
        }
    }
    out
}

pub fn assemble_ns_sweep(
    state: &SweepState,
    ops: Option<&InterfaceOperators>,
    b_lag: &FEFunction,
) -> Result<SparseSystem> {
    Ok(NsOperator::assemble(state, ops)?.system(state, b_lag))
}

/// The tensor operator of one time step: one scalar P1 matrix shared by the
/// three components (tested with E11, (E12 + E21)/2 and E22).
pub struct VeOperator {
    pub matrix: CsrMatrix,
}

fn tensor_at(b: &FEFunction, node: usize) -> SymMat2<f64> {
    SymMat2::new(b.coeffs[3 * node], b.coeffs[3 * node + 1], b.coeffs[3 * node + 2])
}

impl VeOperator {
    pub fn assemble(state: &SweepState) -> Self {
        let mesh = &*state.mesh;
        let nv = mesh.n_vertices();
        let mut b = TripletBuilder::new(nv, nv);
        for t in 0..mesh.n_triangles() {
            let geom = ElementGeom::new(mesh, t);
            let g = state.g.weight(t);
            let tri = mesh.triangles[t];
            let lump = g * geom.area / 3.0 * (1.0 / state.dt + 1.0 / state.lambda[t]);
            for i in 0..3 {
                b.add(tri[i], tri[i], lump);
                if state.alpha != 0.0 {
                    for j in 0..3 {
                        let s = geom.grad_l[i][0] * geom.grad_l[j][0] + geom.grad_l[i][1] * geom.grad_l[j][1];
                        b.add(tri[i], tri[j], state.alpha * g * geom.area * s);
                    }
                }
            }
        }
        // vertices only touching cells with zero weight keep their old value
        let mut matrix = b.build();
        let empty: Vec<usize> = (0..nv).filter(|&i| matrix.get(i, i) == 0.0).collect();
        if !empty.is_empty() {
            let mut b = TripletBuilder::new(nv, nv);
            for i in 0..nv {
                for (j, v) in matrix.row(i) {
                    b.add(i, j, v);
                }
            }
            for &i in &empty {
                b.add(i, i, 1.0);
            }
            matrix = b.build();
        }
        Self { matrix }
    }

    /// Right-hand sides of the three components, interleaved per vertex like
    /// the tensor coefficients.
    pub fn rhs(&self, state: &SweepState, u_lag: &FEFunction, b_lag: &FEFunction) -> Result<Vec<f64>> {
        let mesh = &*state.mesh;
        let v = &*state.velocity;
        let nv = mesh.n_vertices();
        let mut rhs = vec![0.0; 3 * nv];
        let mut touched = vec![false; nv];
        for t in 0..mesh.n_triangles() {
            let g = state.g.weight(t);
            if g == 0.0 {
                continue;
            }
            let geom = ElementGeom::new(mesh, t);
            let tri = mesh.triangles[t];
            let bl = [tensor_at(b_lag, tri[0]), tensor_at(b_lag, tri[1]), tensor_at(b_lag, tri[2])];
            let lump = g * geom.area / 3.0;
            for i in 0..3 {
                touched[tri[i]] = true;
                let bo = tensor_at(&state.b_old, tri[i]);
                let inv_l = 1.0 / state.lambda[t];
                rhs[3 * tri[i]] += lump * (bo.a11 / state.dt + inv_l);
                rhs[3 * tri[i] + 1] += lump * (bo.a12 / state.dt);
                rhs[3 * tri[i] + 2] += lump * (bo.a22 / state.dt + inv_l);
            }

            // transport: Σ_ij (∫_K u_i) (Λ_ij : E_c) ∂_j λ_k
            let nodes = v.nodes(t);
            let mut ubar = [0.0; 2];
            for e in 3..6 {
                for a in 0..2 {
                    ubar[a] += geom.area / 3.0 * u_lag.coeffs[v.dof(nodes[e], a)];
                }
            }
            if ubar != [0.0, 0.0] {
                let lam = assemble_lambda(&bl, &RefMapping::from_vertices(geom.pts), None)?;
                for k in 0..3 {
                    let mut acc = SymMat2::zero();
                    for i in 0..2 {
                        for j in 0..2 {
                            acc = acc + lam.l[i][j] * (ubar[i] * geom.grad_l[k][j]);
                        }
                    }
                    rhs[3 * tri[k]] += g * acc.a11;
                    rhs[3 * tri[k] + 1] += g * acc.a12;
                    rhs[3 * tri[k] + 2] += g * acc.a22;
                }
            }

            // stretching: 2 J_k : (E_c B_k), J_k = ∫_K λ_k ∇u
            let mut jk = [[[0.0; 2]; 2]; 3];
            for (l, wq) in TRI_RULE {
                let w = wq * geom.area;
                let gu = u_lag.grad_in(&geom, t, l);
                for k in 0..3 {
                    for a in 0..2 {
                        for b in 0..2 {
                            jk[k][a][b] += w * l[k] * gu[a][b];
                        }
                    }
                }
            }
            for k in 0..3 {
                let j = &jk[k];
                let bk = bl[k];
                let e11 = j[0][0] * bk.a11 + j[0][1] * bk.a12;
                let e22 = j[1][0] * bk.a12 + j[1][1] * bk.a22;
                let e12 = 0.5 * (j[0][0] * bk.a12 + j[0][1] * bk.a22 + j[1][0] * bk.a11 + j[1][1] * bk.a12);
                rhs[3 * tri[k]] += 2.0 * g * e11;
                rhs[3 * tri[k] + 1] += 2.0 * g * e12;
                rhs[3 * tri[k] + 2] += 2.0 * g * e22;
            }
        }
        for k in 0..nv {
            if !touched[k] {
                rhs[3 * k..3 * k + 3].copy_from_slice(&state.b_old.coeffs[3 * k..3 * k + 3]);
            }
        }
        Ok(rhs)
    }

    /// Block system over the interleaved tensor coefficients.
    pub fn system(&self, rhs: Vec<f64>) -> SparseSystem {
        let n = self.matrix.n_rows;
        let mut b = TripletBuilder::new(3 * n, 3 * n);
        for i in 0..n {
            for (j, v) in self.matrix.row(i) {
                for c in 0..3 {
                    b.add(3 * i + c, 3 * j + c, v);
                }
            }
        }
        SparseSystem { matrix: b.build(), rhs, blocks: vec![("B", 3 * n)] }
    }

    /// ℓ∞ residual of the three component equations.
    pub fn residual(&self, b: &FEFunction, rhs: &[f64]) -> f64 {
        let n = self.matrix.n_rows;
        let mut r = 0.0f64;
        for c in 0..3 {
            let x: Vec<f64> = (0..n).map(|k| b.coeffs[3 * k + c]).collect();
            let ax = self.matrix.mul_vec(&x);
            for k in 0..n {
                r = r.max((ax[k] - rhs[3 * k + c]).abs());
            }
        }
        r
    }
}

/// Minimum nodal eigenvalue; `NotPositiveDefinite` if it is not positive.
pub fn check_spd(b: &FEFunction) -> Result<f64> {
    let n = b.coeffs.len() / 3;
    let mut m = f64::INFINITY;
    for k in 0..n {
        m = m.min(tensor_at(b, k).min_eig());
    }
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::NotPositiveDefinite(m))
    }
}

pub fn assemble_visco_sweep(state: &SweepState, u_lag: &FEFunction, b_lag: &FEFunction) -> Result<SparseSystem> {
    check_spd(b_lag)?;
    let op = VeOperator::assemble(state);
    let rhs = op.rhs(state, u_lag, b_lag)?;
    Ok(op.system(rhs))
}

/// Residuals of the three equation blocks at a candidate, each in ℓ∞.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResidualParts {
    pub navier_stokes: f64,
    pub tensor: f64,
    pub interface: f64,
}

impl ResidualParts {
    pub fn max(&self) -> f64 {
        self.navier_stokes.max(self.tensor).max(self.interface)
    }
}

/// Residual of the full nonlinear step system at `(x_ns, b, X, κ)`, with
/// every nonlinear term evaluated at the candidate itself.
#[allow(clippy::too_many_arguments)]
pub fn full_residual(
    state: &SweepState,
    ns: &NsOperator,
    ve: Option<&VeOperator>,
    ops: Option<&InterfaceOperators>,
    x_ns: &[f64],
    b: &FEFunction,
    interface: Option<(&[Point], &[f64])>,
) -> Result<ResidualParts> {
    let rhs = ns.rhs(state, b);
    let r_ns = inf_norm(&ns.matrix.mul_vec(x_ns).iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
    let u = &x_ns[..ns.layout.n_u];
    let r_b = match ve {
        Some(ve) => {
            let mut uf = FEFunction::zeros(state.velocity.clone());
            uf.coeffs.copy_from_slice(u);
            ve.residual(b, &ve.rhs(state, &uf, b)?)
        }
        None => 0.0,
    };
    let r_i = match (ops, interface) {
        (Some(ops), Some((x, k))) => ops.sub.residual(x, k, &ops.flux(u)),
        _ => 0.0,
    };
    Ok(ResidualParts { navier_stokes: r_ns, tensor: r_b, interface: r_i })
}
