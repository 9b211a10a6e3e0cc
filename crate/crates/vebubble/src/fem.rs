//! Lagrange spaces on a triangulation, quadrature, interpolation, bulk inner
//! products, interface sampling and the XFEM pressure enrichment.

use std::sync::Arc;

use crate::bulk_mesh::{barycentric, BoundaryTag, CellClass, EdgeTable, ElementClassification, Locator, Triangulation};
use crate::error::{Error, Result};
use crate::interface::{orient, Point, PolygonalCurve};

/// Degree-5 rule on the reference triangle: barycentric points, weights
/// summing to one.
pub const TRI_RULE: [([f64; 3], f64); 7] = {
    // (6 -+ sqrt 15) / 21 and (155 -+ sqrt 15) / 1200, written out as literals
    const B1: f64 = 0.101_286_507_323_456_34;
    const B2: f64 = 0.470_142_064_105_115_1;
    const W1: f64 = 0.125_939_180_544_827_15;
    const W2: f64 = 0.132_394_152_788_506_18;
    const A1: f64 = 1.0 - 2.0 * B1;
    const A2: f64 = 1.0 - 2.0 * B2;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Gauss–Legendre points on [0, 1] and weights summing to one.
pub fn gauss_1d(n: usize) -> Result<Vec<(f64, f64)>> {
    let s = match n {
        1 => vec![(0.5, 1.0)],
        2 => {
            let d = 0.5 / 3f64.sqrt();
            vec![(0.5 - d, 0.5), (0.5 + d, 0.5)]
        }
        3 => {
            let d = 0.5 * 0.6f64.sqrt();
            vec![(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
        }
        _ => return Err(Error::InvalidConfig(format!("unsupported interface quadrature order {n}"))),
    };
    Ok(s)
}

/// Geometry of one triangle: vertices, area and barycentric gradients.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeom {
    pub pts: [Point; 3],
    pub area: f64,
    pub grad_l: [[f64; 2]; 3],
}

impl ElementGeom {
    pub fn new(mesh: &Triangulation, t: usize) -> Self {
        let pts = mesh.points(t);
        let two_a = orient(pts[0], pts[1], pts[2]);
        let mut grad_l = [[0.0; 2]; 3];
        for i in 0..3 {
            let (a, b) = (pts[(i + 1) % 3], pts[(i + 2) % 3]);
            grad_l[i] = [-(b[1] - a[1]) / two_a, (b[0] - a[0]) / two_a];
        }
        Self { pts, area: 0.5 * two_a, grad_l }
    }

    pub fn point(&self, l: [f64; 3]) -> Point {
        let p = &self.pts;
        [l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0], l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    P0,
    P1,
    P2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rank {
    Scalar,
    Vector,
    /// components (a11, a12, a22)
    SymTensor,
}

impl Kind {
    pub fn nodes_per_cell(self) -> usize {
        match self {
            Kind::P0 => 1,
            Kind::P1 => 3,
            Kind::P2 => 6,
        }
    }
}

impl Rank {
    pub fn ncomp(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 2,
            Rank::SymTensor => 3,
        }
    }

    /// Weights turning a component-wise sum into the Frobenius product.
    pub fn weights(self) -> &'static [f64] {
        match self {
            Rank::Scalar => &[1.0],
            Rank::Vector => &[1.0, 1.0],
            Rank::SymTensor => &[1.0, 2.0, 1.0],
        }
    }
}

/// Basis values at barycentric `l`. P2 ordering: vertices, then the edges
/// (v0,v1), (v1,v2), (v2,v0).
pub fn basis_values(kind: Kind, l: [f64; 3]) -> [f64; 6] {
    match kind {
        Kind::P0 => [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        Kind::P1 => [l[0], l[1], l[2], 0.0, 0.0, 0.0],
        Kind::P2 => [
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[0] * l[1],
            4.0 * l[1] * l[2],
            4.0 * l[2] * l[0],
        ],
    }
}

pub fn basis_grads(kind: Kind, l: [f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut out = [[0.0; 2]; 6];
    match kind {
        Kind::P0 => {}
        Kind::P1 => out[..3].copy_from_slice(g),
        Kind::P2 => {
            for i in 0..3 {
                let c = 4.0 * l[i] - 1.0;
                out[i] = [c * g[i][0], c * g[i][1]];
            }
            for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                out[3 + k] = [4.0 * (l[j] * g[i][0] + l[i] * g[j][0]), 4.0 * (l[j] * g[i][1] + l[i] * g[j][1])];
            }
        }
    }
    out
}

/// Barycentric coordinates of the local nodes.
pub fn local_nodes(kind: Kind) -> &'static [[f64; 3]] {
    const P0: [[f64; 3]; 1] = [[1.0 / 3.0; 3]];
    const P1: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    const P2: [[f64; 3]; 6] =
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
    match kind {
        Kind::P0 => &P0,
        Kind::P1 => &P1,
        Kind::P2 => &P2,
    }
}

#[derive(Clone, Debug)]
pub struct FESpace {
    pub kind: Kind,
    pub rank: Rank,
    pub n_nodes: usize,
    /// Global node of each local node; only the first `nodes_per_cell` are used.
    pub cell_nodes: Vec<[usize; 6]>,
    pub node_coords: Vec<Point>,
    /// Per dof, `node * ncomp + comp`.
    pub dirichlet: Vec<bool>,
}

impl FESpace {
    pub fn ncomp(&self) -> usize {
        self.rank.ncomp()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes * self.ncomp()
    }

    pub fn nodes(&self, t: usize) -> &[usize] {
        &self.cell_nodes[t][..self.kind.nodes_per_cell()]
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * self.ncomp() + comp
    }
}

pub fn build_space(mesh: &Triangulation, kind: Kind, rank: Rank, dirichlet_tags: &[BoundaryTag]) -> FESpace {
    build_space_with_edges(mesh, &EdgeTable::new(mesh), kind, rank, dirichlet_tags)
}

pub fn build_space_with_edges(
    mesh: &Triangulation,
    edges: &EdgeTable,
    kind: Kind,
    rank: Rank,
    dirichlet_tags: &[BoundaryTag],
) -> FESpace {
    let nv = mesh.n_vertices();
    let (n_nodes, cell_nodes, node_coords) = match kind {
        Kind::P0 => {
            let cells = (0..mesh.n_triangles()).map(|t| [t, 0, 0, 0, 0, 0]).collect();
            let coords = (0..mesh.n_triangles()).map(|t| mesh.centroid(t)).collect();
            (mesh.n_triangles(), cells, coords)
        }
        Kind::P1 => {
            let cells = mesh.triangles.iter().map(|t| [t[0], t[1], t[2], 0, 0, 0]).collect();
            (nv, cells, mesh.vertices.clone())
        }
        Kind::P2 => {
            let cells = mesh
                .triangles
                .iter()
                .zip(&edges.cell_edges)
                .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
                .collect();
            let mut coords = mesh.vertices.clone();
            for e in &edges.edges {
                let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
                coords.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
            }
            (nv + edges.edges.len(), cells, coords)
        }
    };
    let nc = rank.ncomp();
    let mut dirichlet = vec![false; n_nodes * nc];
    if kind != Kind::P0 {
        let mut mark = |node: usize| {
            for c in 0..nc {
                dirichlet[node * nc + c] = true;
            }
        };
        let edge_index: std::collections::HashMap<(usize, usize), usize> =
            edges.edges.iter().enumerate().map(|(i, e)| ((e[0], e[1]), i)).collect();
        for (&(a, b), tag) in &mesh.boundary {
            if dirichlet_tags.contains(tag) {
                mark(a);
                mark(b);
                if kind == Kind::P2 {
                    mark(nv + edge_index[&(a, b)]);
                }
            }
        }
    }
    FESpace { kind, rank, n_nodes, cell_nodes, node_coords, dirichlet }
}

#[derive(Clone, Debug)]
pub struct FEFunction {
    pub space: Arc<FESpace>,
    pub coeffs: Vec<f64>,
}

impl FEFunction {
    pub fn zeros(space: Arc<FESpace>) -> Self {
        let n = space.n_dofs();
        Self { space, coeffs: vec![0.0; n] }
    }

    /// Component values at barycentric `l` in cell `t`.
    pub fn eval_in(&self, t: usize, l: [f64; 3]) -> [f64; 3] {
        let s = &self.space;
        let phi = basis_values(s.kind, l);
        let nc = s.ncomp();
        let mut out = [0.0; 3];
        for (k, &node) in s.nodes(t).iter().enumerate() {
            for c in 0..nc {
                out[c] += phi[k] * self.coeffs[node * nc + c];
            }
        }
        out
    }

    /// Gradients of each component in cell `t`.
    pub fn grad_in(&self, geom: &ElementGeom, t: usize, l: [f64; 3]) -> [[f64; 2]; 3] {
        let s = &self.space;
        let g = basis_grads(s.kind, l, &geom.grad_l);
        let nc = s.ncomp();
        let mut out = [[0.0; 2]; 3];
        for (k, &node) in s.nodes(t).iter().enumerate() {
            for c in 0..nc {
                let v = self.coeffs[node * nc + c];
                out[c][0] += g[k][0] * v;
                out[c][1] += g[k][1] * v;
            }
        }
        out
    }

    pub fn eval_at(&self, mesh: &Triangulation, locator: &Locator, p: Point) -> Result<[f64; 3]> {
        let (t, l) = locator.locate(mesh, p)?;
        Ok(self.eval_in(t, l))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Nodal interpolation for P1/P2, element means for P0. `f` returns the
/// components of the field at a point.
pub fn interpolate(mesh: &Triangulation, space: Arc<FESpace>, f: impl Fn(Point) -> [f64; 3]) -> FEFunction {
    let nc = space.ncomp();
    let mut coeffs = vec![0.0; space.n_dofs()];
    if space.kind == Kind::P0 {
        for t in 0..mesh.n_triangles() {
            let geom = ElementGeom::new(mesh, t);
            let mut acc = [0.0; 3];
            for (l, w) in TRI_RULE {
                let v = f(geom.point(l));
                for c in 0..nc {
                    acc[c] += w * v[c];
                }
            }
            coeffs[t * nc..t * nc + nc].copy_from_slice(&acc[..nc]);
        }
    } else {
        for (node, &p) in space.node_coords.iter().enumerate() {
            let v = f(p);
            coeffs[node * nc..node * nc + nc].copy_from_slice(&v[..nc]);
        }
    }
    FEFunction { space, coeffs }
}

/// Evaluates `old` (living on `old_mesh`) at the nodes of `space`: I₁ or I₂
/// depending on the target kind. P0 targets go through [`p0_transfer`].
pub fn transfer(
    old: &FEFunction,
    old_mesh: &Triangulation,
    old_locator: &Locator,
    new_mesh: &Triangulation,
    space: Arc<FESpace>,
) -> Result<FEFunction> {
    let nc = space.ncomp();
    if nc != old.space.ncomp() {
        return Err(Error::ShapeMismatch("transfer between spaces of different rank".into()));
    }
    if space.kind == Kind::P0 {
        let mut coeffs = vec![0.0; space.n_dofs()];
        for c in 0..nc {
            let comp: Vec<f64> = (0..old_mesh.n_triangles()).map(|t| old.eval_in(t, [1.0 / 3.0; 3])[c]).collect();
            let moved = p0_transfer(old_mesh, old_locator, &comp, new_mesh)?;
            for (t, v) in moved.into_iter().enumerate() {
                coeffs[t * nc + c] = v;
            }
        }
        return Ok(FEFunction { space, coeffs });
    }
    let mut coeffs = vec![0.0; space.n_dofs()];
    for (node, &p) in space.node_coords.iter().enumerate() {
        let v = old.eval_at(old_mesh, old_locator, p)?;
        coeffs[node * nc..node * nc + nc].copy_from_slice(&v[..nc]);
    }
    Ok(FEFunction { space, coeffs })
}

/// Element-mean projection of a piecewise constant field between two
/// triangulations. For meshes refined from a common coarse mesh every new
/// cell either lies inside one old cell or is a union of old cells, and the
/// result is exact; otherwise the mean is approximated by quadrature.
pub fn p0_transfer(
    old_mesh: &Triangulation,
    old_locator: &Locator,
    old_vals: &[f64],
    new_mesh: &Triangulation,
) -> Result<Vec<f64>> {
    if old_vals.len() != old_mesh.n_triangles() {
        return Err(Error::ShapeMismatch(format!("{} values for {} cells", old_vals.len(), old_mesh.n_triangles())));
    }
    let mut out = Vec::with_capacity(new_mesh.n_triangles());
    for t in 0..new_mesh.n_triangles() {
        let area = new_mesh.area(t);
        let (s, _) = old_locator.locate(old_mesh, new_mesh.centroid(t))?;
        if old_mesh.area(s) >= area * (1.0 - 1e-10) {
            out.push(old_vals[s]);
            continue;
        }
        let pts = new_mesh.points(t);
        let lo = [pts[0][0].min(pts[1][0]).min(pts[2][0]), pts[0][1].min(pts[1][1]).min(pts[2][1])];
        let hi = [pts[0][0].max(pts[1][0]).max(pts[2][0]), pts[0][1].max(pts[1][1]).max(pts[2][1])];
        let mut acc = 0.0;
        let mut covered = 0.0;
        for s in old_locator.candidates(lo, hi) {
            let l = barycentric(pts, old_mesh.centroid(s));
            if l.iter().all(|&x| x >= -1e-12) {
                acc += old_mesh.area(s) * old_vals[s];
                covered += old_mesh.area(s);
            }
        }
        if (covered - area).abs() <= 1e-10 * area {
            out.push(acc / covered);
        } else {
            let geom = ElementGeom::new(new_mesh, t);
            let mut v = 0.0;
            for (l, w) in TRI_RULE {
                let (s, _) = old_locator.locate(old_mesh, geom.point(l))?;
                v += w * old_vals[s];
            }
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductMode {
    Lumped,
    Exact,
}

/// `(a, b)` over the mesh, Frobenius-weighted for tensors. Lumped mode uses
/// the vertex rule `|K|/3 Σ_k a(p_k) b(p_k)` with one-sided vertex values.
pub fn bulk_products(mesh: &Triangulation, a: &FEFunction, b: &FEFunction, mode: ProductMode) -> Result<f64> {
    if a.space.rank != b.space.rank {
        return Err(Error::ShapeMismatch(format!("{:?} against {:?}", a.space.rank, b.space.rank)));
    }
    if a.space.cell_nodes.len() != mesh.n_triangles() || b.space.cell_nodes.len() != mesh.n_triangles() {
        return Err(Error::ShapeMismatch("functions live on a different mesh".into()));
    }
    let w = a.space.rank.weights();
    let vertex_rule = [([1.0, 0.0, 0.0], 1.0 / 3.0), ([0.0, 1.0, 0.0], 1.0 / 3.0), ([0.0, 0.0, 1.0], 1.0 / 3.0)];
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.area(t);
        let mut cell = 0.0;
        let mut add = |l: [f64; 3], q: f64| {
            let (va, vb) = (a.eval_in(t, l), b.eval_in(t, l));
            for c in 0..w.len() {
                cell += q * w[c] * va[c] * vb[c];
            }
        };
        match mode {
            ProductMode::Lumped => vertex_rule.iter().for_each(|&(l, q)| add(l, q)),
            ProductMode::Exact => TRI_RULE.iter().for_each(|&(l, q)| add(l, q)),
        }
        total += area * cell;
    }
    Ok(total)
}

/// One quadrature point on the interface, located in the bulk mesh.
#[derive(Clone, Copy, Debug)]
pub struct SurfacePoint {
    pub segment: usize,
    /// position along the segment in [0, 1]
    pub s: f64,
    /// quadrature weight including the sub-segment length
    pub weight: f64,
    pub point: Point,
    pub cell: usize,
    pub bary: [f64; 3],
}

/// Parameter interval of the segment `a + s (b - a)` inside a closed
/// triangle, if any.
fn clip_segment(pts: [Point; 3], a: Point, b: Point) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let scale = (b[0] - a[0]).abs() + (b[1] - a[1]).abs() + 1e-300;
    for i in 0..3 {
        let (p, q) = (pts[i], pts[(i + 1) % 3]);
        let f0 = orient(p, q, a);
        let f1 = orient(p, q, b);
        let el = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        let tol = 1e-13 * el * scale;
        if f0 < -tol && f1 < -tol {
            return None;
        }
        if (f1 - f0).abs() <= tol {
            continue;
        }
        let s = -f0 / (f1 - f0);
        if f1 > f0 {
            lo = lo.max(s);
        } else {
            hi = hi.min(s);
        }
    }
    (hi >= lo).then_some((lo, hi))
}

/// Gauss points along every segment of `curve`, after splitting segments at
/// the bulk element boundaries they cross.
pub fn interface_quadrature(
    mesh: &Triangulation,
    locator: &Locator,
    curve: &PolygonalCurve,
    n_gauss: usize,
) -> Result<Vec<SurfacePoint>> {
    let rule = gauss_1d(n_gauss)?;
    let mut out = Vec::with_capacity(curve.len() * 2 * rule.len());
    for k in 0..curve.len() {
        let (a, b) = curve.segment(k);
        let len = curve.lengths()[k];
        let lo = [a[0].min(b[0]), a[1].min(b[1])];
        let hi = [a[0].max(b[0]), a[1].max(b[1])];
        let mut hits = Vec::new();
        let mut breaks = vec![0.0, 1.0];
        for t in locator.candidates(lo, hi) {
            if let Some((s0, s1)) = clip_segment(mesh.points(t), a, b) {
                breaks.push(s0);
                breaks.push(s1);
                hits.push((t, s0, s1));
            }
        }
        breaks.sort_by(|x, y| x.total_cmp(y));
        breaks.dedup_by(|x, y| (*x - *y).abs() <= 1e-12);
        for w in breaks.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            if s1 - s0 <= 1e-14 {
                continue;
            }
            let sm = 0.5 * (s0 + s1);
            let pm = [a[0] + sm * (b[0] - a[0]), a[1] + sm * (b[1] - a[1])];
            let cell = hits.iter().filter(|h| h.1 <= sm && sm <= h.2).map(|h| h.0).max_by(|&x, &y| {
                let mx = barycentric(mesh.points(x), pm).into_iter().fold(f64::INFINITY, f64::min);
                let my = barycentric(mesh.points(y), pm).into_iter().fold(f64::INFINITY, f64::min);
                mx.total_cmp(&my)
            });
            let cell = match cell {
                Some(c) => c,
                None => locator.locate(mesh, pm)?.0,
            };
            let pts = mesh.points(cell);
            for &(g, wg) in &rule {
                let s = s0 + g * (s1 - s0);
                let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                if !mesh.contains_point(p, 1e-12) {
                    return Err(Error::PointOutsideMesh(p[0], p[1]));
                }
                out.push(SurfacePoint {
                    segment: k,
                    s,
                    weight: wg * (s1 - s0) * len,
                    point: p,
                    cell,
                    bary: barycentric(pts, p),
                });
            }
        }
    }
    Ok(out)
}

/// Values of `f` at the interface quadrature points.
pub fn interface_coupling_eval(
    mesh: &Triangulation,
    locator: &Locator,
    f: &FEFunction,
    curve: &PolygonalCurve,
    n_gauss: usize,
) -> Result<Vec<(SurfacePoint, [f64; 3])>> {
    Ok(interface_quadrature(mesh, locator, curve, n_gauss)?
        .into_iter()
        .map(|sp| (sp, f.eval_in(sp.cell, sp.bary)))
        .collect())
}

/// Sutherland–Hodgman clipping of `subject` against a counter-clockwise
/// triangle. Works for non-convex subjects; the result may contain zero-width
/// bridges, which do not affect signed integrals.
pub fn clip_polygon_by_triangle(subject: &[Point], tri: [Point; 3]) -> Vec<Point> {
    let mut poly = subject.to_vec();
    for i in 0..3 {
        if poly.is_empty() {
            break;
        }
        let (p, q) = (tri[i], tri[(i + 1) % 3]);
        let inside = |x: Point| orient(p, q, x) >= 0.0;
        let cut = |x: Point, y: Point| {
            let (fx, fy) = (orient(p, q, x), orient(p, q, y));
            let s = fx / (fx - fy);
            [x[0] + s * (y[0] - x[0]), x[1] + s * (y[1] - x[1])]
        };
        let input = std::mem::take(&mut poly);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(cur), inside(prev)) {
                (true, true) => poly.push(cur),
                (true, false) => {
                    poly.push(cut(prev, cur));
                    poly.push(cur);
                }
                (false, true) => poly.push(cut(prev, cur)),
                (false, false) => {}
            }
        }
    }
    poly
}

/// `∫_P f` for a linear `f` over a polygon, by fan triangulation.
pub fn integrate_linear_over_polygon(poly: &[Point], f: impl Fn(Point) -> f64) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let o = poly[0];
    let mut acc = 0.0;
    for w in poly[1..].windows(2) {
        let a = 0.5 * orient(o, w[0], w[1]);
        let c = [(o[0] + w[0][0] + w[1][0]) / 3.0, (o[1] + w[0][1] + w[1][1]) / 3.0];
        acc += a * f(c);
    }
    acc
}

/// The enrichment function is the indicator of the region enclosed by the
/// interface. `column[dof] = ∫_{Ω₋} div(φ_dof)`, so that
/// `Σ column[dof] u[dof] = ∮ u·ν ds`.
#[derive(Clone, Debug)]
pub struct XfemDof {
    pub column: Vec<(usize, f64)>,
    /// `|Ω₋|`, the integral of the enrichment function
    pub volume: f64,
}

pub fn xfem_enrich(
    mesh: &Triangulation,
    velocity: &FESpace,
    curve: &PolygonalCurve,
    cls: &ElementClassification,
) -> Result<XfemDof> {
    if velocity.rank != Rank::Vector || velocity.kind != Kind::P2 {
        return Err(Error::ShapeMismatch("enrichment needs the P2 velocity space".into()));
    }
    let mut dense = vec![0.0; velocity.n_dofs()];
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeom::new(mesh, t);
        let region = match cls.classes[t] {
            CellClass::Plus => continue,
            CellClass::Minus => geom.pts.to_vec(),
            CellClass::Interfacial => clip_polygon_by_triangle(curve.vertices(), geom.pts),
        };
        if region.len() < 3 {
            continue;
        }
        let nodes = velocity.nodes(t);
        // ∂_c φ_n is linear, so the fan rule is exact
        let mut vals = [[0.0; 2]; 6];
        let o = region[0];
        for w in region[1..].windows(2) {
            let a = 0.5 * orient(o, w[0], w[1]);
            let c = [(o[0] + w[0][0] + w[1][0]) / 3.0, (o[1] + w[0][1] + w[1][1]) / 3.0];
            let l = barycentric(geom.pts, c);
            let g = basis_grads(Kind::P2, l, &geom.grad_l);
            for n in 0..6 {
                vals[n][0] += a * g[n][0];
                vals[n][1] += a * g[n][1];
            }
        }
        for n in 0..6 {
            dense[velocity.dof(nodes[n], 0)] += vals[n][0];
            dense[velocity.dof(nodes[n], 1)] += vals[n][1];
        }
    }
    let column = dense.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
    Ok(XfemDof { column, volume: curve.area() })
}

/// Pressure space: continuous P1, optionally a P0 part and the XFEM dof.
/// Unknown order: P1 values, P0 values, XFEM coefficient.
#[derive(Clone, Debug)]
pub struct PressureSpace {
    pub p1: FESpace,
    pub p0: bool,
    pub xfem: Option<XfemDof>,
    pub n_cells: usize,
}

impl PressureSpace {
    pub fn new(mesh: &Triangulation, p0: bool) -> Self {
        Self { p1: build_space(mesh, Kind::P1, Rank::Scalar, &[]), p0, xfem: None, n_cells: mesh.n_triangles() }
    }

    pub fn with_xfem(mut self, dof: XfemDof) -> Self {
        self.xfem = Some(dof);
        self
    }

    pub fn n_p0(&self) -> usize {
        if self.p0 {
            self.n_cells
        } else {
            0
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.p1.n_dofs() + self.n_p0() + usize::from(self.xfem.is_some())
    }

    pub fn xfem_index(&self) -> Option<usize> {
        self.xfem.as_ref().map(|_| self.p1.n_dofs() + self.n_p0())
    }
}
