//! The closed polygonal interface: construction, normals, geometry, local
//! refinement and mass-lumped surface products.

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub(crate) fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

/// Closed segments `[a,b]` and `[c,d]` share at least one point.
pub(crate) fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point, q: Point, r: Point| {
        r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    (d1 == 0.0 && on(c, d, a)) || (d2 == 0.0 && on(c, d, b)) || (d3 == 0.0 && on(a, b, c)) || (d4 == 0.0 && on(a, b, d))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Circle { center: Point, r: f64 },
    Ellipse { center: Point, a: f64, b: f64 },
}

/// Closed polygon, counter-clockwise; segment `k` joins vertex `k` and `k+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolygonalCurve {
    vertices: Vec<Point>,
    normals: Vec<Point>,
    lengths: Vec<f64>,
}

impl PolygonalCurve {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::ShapeMismatch("a closed curve needs at least two vertices".into()));
        }
        let n = vertices.len();
        let mut normals = Vec::with_capacity(n);
        let mut lengths = Vec::with_capacity(n);
        for k in 0..n {
            let t = sub(vertices[(k + 1) % n], vertices[k]);
            let l = t[0].hypot(t[1]);
            if !(l >= 1e-14) {
                return Err(Error::DegenerateSegment(k));
            }
            normals.push([t[1] / l, -t[0] / l]);
            lengths.push(l);
        }
        Ok(Self { vertices, normals, lengths })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn normals(&self) -> &[Point] {
        &self.normals
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn segment(&self, k: usize) -> (Point, Point) {
        (self.vertices[k], self.vertices[(k + 1) % self.len()])
    }

    pub fn length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Signed shoelace area, positive for counter-clockwise curves.
    pub fn area(&self) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for k in 0..n {
            s += cross(self.vertices[k], self.vertices[(k + 1) % n]);
        }
        0.5 * s
    }

    /// Centroid of the enclosed region via Green's theorem.
    pub fn centroid(&self) -> Point {
        let n = self.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for k in 0..n {
            let (p, q) = self.segment(k);
            let c = cross(p, q);
            cx += (p[0] + q[0]) * c;
            cy += (p[1] + q[1]) * c;
        }
        let a6 = 6.0 * self.area();
        [cx / a6, cy / a6]
    }

    pub fn bounding_box(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.vertices {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.len();
        let mut inside = false;
        for k in 0..n {
            let (a, b) = self.segment(k);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// First pair of non-adjacent segments that touch, if any.
    pub fn self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.len();
        if n < 4 {
            return None;
        }
        let bbox: Vec<[f64; 4]> = (0..n)
            .map(|k| {
                let (a, b) = self.segment(k);
                [a[0].min(b[0]), a[1].min(b[1]), a[0].max(b[0]), a[1].max(b[1])]
            })
            .collect();
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (bi, bj) = (bbox[i], bbox[j]);
                if bi[0] > bj[2] || bj[0] > bi[2] || bi[1] > bj[3] || bj[1] > bi[3] {
                    continue;
                }
                let (a, b) = self.segment(i);
                let (c, d) = self.segment(j);
                if segments_intersect(a, b, c, d) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Same polygon traversed in the opposite direction.
    pub fn reversed(&self) -> Result<Self> {
        let mut v = self.vertices.clone();
        v.reverse();
        Self::new(v)
    }
}

pub fn build_polygon(shape: Shape, n: usize) -> Result<PolygonalCurve> {
    if n < 3 {
        return Err(Error::ShapeMismatch(format!("polygon needs n >= 3, got {n}")));
    }
    let (c, a, b) = match shape {
        Shape::Circle { center, r } => (center, r, r),
        Shape::Ellipse { center, a, b } => (center, a, b),
    };
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::ShapeMismatch("radii must be positive".into()));
    }
    let v = (0..n)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            [c[0] + a * phi.cos(), c[1] + b * phi.sin()]
        })
        .collect();
    PolygonalCurve::new(v)
}

/// Unit normals of the segments: right-hand rotation of the tangent.
pub fn element_normals(curve: &PolygonalCurve) -> Vec<Point> {
    curve.normals.clone()
}

/// `sum_{sigma ni q_k} |sigma|/2 nu_sigma`, the lumped normal weight of vertex `k`.
pub fn lumped_vertex_normals(curve: &PolygonalCurve) -> Vec<Point> {
    let n = curve.len();
    (0..n)
        .map(|k| {
            let prev = (k + n - 1) % n;
            let (lp, lk) = (curve.lengths[prev], curve.lengths[k]);
            let (np, nk) = (curve.normals[prev], curve.normals[k]);
            [0.5 * (lp * np[0] + lk * nk[0]), 0.5 * (lp * np[1] + lk * nk[1])]
        })
        .collect()
}

/// Length-weighted vertex normals and the numerical rank of their span.
pub fn vertex_normals_span(curve: &PolygonalCurve) -> (Vec<Point>, usize) {
    let n = curve.len();
    let lumped = lumped_vertex_normals(curve);
    let omega: Vec<Point> = (0..n)
        .map(|k| {
            let w = 0.5 * (curve.lengths[(k + n - 1) % n] + curve.lengths[k]);
            [lumped[k][0] / w, lumped[k][1] / w]
        })
        .collect();
    let max_norm = omega.iter().map(|w| w[0].hypot(w[1])).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return (omega, 0);
    }
    // singular values of the stacked n x 2 matrix
    let (mut g11, mut g12, mut g22) = (0.0, 0.0, 0.0);
    for w in &omega {
        let (x, y) = (w[0] / max_norm, w[1] / max_norm);
        g11 += x * x;
        g12 += x * y;
        g22 += y * y;
    }
    let sd = crate::matfun::eig_sym2(crate::matfun::SymMat2::new(g11, g12, g22));
    let tol = 1e-10;
    let rank = [sd.eig1, sd.eig2].iter().filter(|&&e| e.max(0.0).sqrt() > tol).count();
    (omega, rank)
}

/// Enclosed area and length; fails on self-intersecting curves.
pub fn polygon_geometry(curve: &PolygonalCurve) -> Result<(f64, f64)> {
    if let Some((i, j)) = curve.self_intersection() {
        return Err(Error::SelfIntersectingInterface(i, j));
    }
    Ok((curve.area(), curve.length()))
}

/// Bisects every segment of length at least `1.5 vol_max`.
pub fn refine_long_elements(curve: &PolygonalCurve, vol_max: f64) -> PolygonalCurve {
    let n = curve.len();
    if curve.lengths.iter().all(|&l| l < 1.5 * vol_max) {
        return curve.clone();
    }
    let mut v = Vec::with_capacity(n + 8);
    for k in 0..n {
        let (a, b) = curve.segment(k);
        v.push(a);
        if curve.lengths[k] >= 1.5 * vol_max {
            v.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
    }
    PolygonalCurve::new(v).expect("midpoint insertion keeps segments non-degenerate")
}

/// Longest over shortest segment.
pub fn quality_ratio(curve: &PolygonalCurve) -> f64 {
    let max = curve.lengths.iter().cloned().fold(0.0, f64::max);
    let min = curve.lengths.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// `2 sqrt(pi A) / L`.
pub fn circularity(curve: &PolygonalCurve) -> f64 {
    2.0 * (std::f64::consts::PI * curve.area().abs()).sqrt() / curve.length()
}

/// Data on the curve: one value per vertex (continuous piecewise linear) or
/// one per segment (piecewise constant).
#[derive(Clone, Copy, Debug)]
pub enum SurfaceData<'a> {
    Vertex(&'a [f64]),
    Segment(&'a [f64]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductMode {
    Lumped,
    Exact,
}

impl SurfaceData<'_> {
    fn check(&self, n: usize) -> Result<()> {
        let len = match self {
            SurfaceData::Vertex(v) | SurfaceData::Segment(v) => v.len(),
        };
        if len != n {
            return Err(Error::ShapeMismatch(format!("expected {n} values, got {len}")));
        }
        Ok(())
    }

    /// Values at the start, midpoint and end of segment `k`.
    fn on_segment(&self, k: usize, n: usize) -> [f64; 3] {
        match self {
            SurfaceData::Vertex(v) => {
                let (a, b) = (v[k], v[(k + 1) % n]);
                [a, 0.5 * (a + b), b]
            }
            SurfaceData::Segment(v) => [v[k]; 3],
        }
    }
}

/// Lumped (vertex) or exact (Simpson) surface inner product.
pub fn surface_products(curve: &PolygonalCurve, a: SurfaceData, b: SurfaceData, mode: ProductMode) -> Result<f64> {
    let n = curve.len();
    a.check(n)?;
    b.check(n)?;
    let mut s = 0.0;
    for k in 0..n {
        let fa = a.on_segment(k, n);
        let fb = b.on_segment(k, n);
        let l = curve.lengths[k];
        s += match mode {
            ProductMode::Lumped => 0.5 * l * (fa[0] * fb[0] + fa[2] * fb[2]),
            ProductMode::Exact => l / 6.0 * (fa[0] * fb[0] + 4.0 * fa[1] * fb[1] + fa[2] * fb[2]),
        };
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: Point, b: Point) -> f64 {
        a[0] * b[0] + a[1] * b[1]
    }
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit_square() -> PolygonalCurve {
        PolygonalCurve::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn square_normals_and_geometry() {
        let sq = unit_square();
        assert_eq!(element_normals(&sq)[0], [0.0, -1.0]);
        assert_eq!(polygon_geometry(&sq).unwrap(), (1.0, 4.0));
        let rev = sq.reversed().unwrap();
        // reversed segment k traverses original segment n-2-k backwards
        let n = sq.len();
        for k in 0..n {
            let (a, b) = (sq.normals()[(2 * n - 2 - k) % n], rev.normals()[k]);
            assert_eq!(a, [-b[0], -b[1]]);
        }
        assert!((circularity(&sq) - PI.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn circle_is_outward_and_inscribed() {
        let (r, n) = (0.3, 400);
        let c = build_polygon(Shape::Circle { center: [1.0, 0.8], r }, n).unwrap();
        for k in 0..n {
            let (a, b) = c.segment(k);
            let m = [0.5 * (a[0] + b[0]) - 1.0, 0.5 * (a[1] + b[1]) - 0.8];
            assert!(dot(c.normals()[k], m) > 0.0);
        }
        let (area, len) = polygon_geometry(&c).unwrap();
        let nf = n as f64;
        assert!((area - nf / 2.0 * r * r * (2.0 * PI / nf).sin()).abs() < 1e-14);
        assert!((len - 2.0 * nf * r * (PI / nf).sin()).abs() < 1e-13);
        let cen = c.centroid();
        assert!((cen[1] - 0.8).abs() < 1e-12);
        assert_eq!(vertex_normals_span(&c).1, 2);
        let sq = build_polygon(Shape::Circle { center: [0.0, 0.0], r: 1.0 }, 4).unwrap();
        for v in sq.vertices() {
            assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ellipse_area() {
        let e = build_polygon(Shape::Ellipse { center: [1.0, 1.0], a: 0.8, b: 0.2 }, 400).unwrap();
        assert!((e.area() - PI * 0.8 * 0.2).abs() < 1e-4);
    }

    #[test]
    fn vertex_normals_of_regular_polygon_bisect() {
        let c = build_polygon(Shape::Circle { center: [0.0, 0.0], r: 1.0 }, 12).unwrap();
        let (om, rank) = vertex_normals_span(&c);
        assert_eq!(rank, 2);
        for (k, w) in om.iter().enumerate() {
            let v = c.vertices()[k];
            // radial, length cos(pi/n)
            assert!(cross(*w, v).abs() < 1e-14);
            assert!((w[0].hypot(w[1]) - (PI / 12.0).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn collinear_curve_has_deficient_span() {
        let c = PolygonalCurve::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(vertex_normals_span(&c).1, 1);
    }

    #[test]
    fn self_intersection_detected() {
        let bow = PolygonalCurve::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(polygon_geometry(&bow), Err(Error::SelfIntersectingInterface(_, _))));
        assert!(PolygonalCurve::new(vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn refinement_examples() {
        let sq = unit_square();
        assert_eq!(refine_long_elements(&sq, 1.0), sq);
        let tri = PolygonalCurve::new(vec![[0.0, 0.0], [2.0, 0.0], [1.0, 0.5]]).unwrap();
        let r = refine_long_elements(&tri, 1.0);
        assert_eq!(r.len(), 4);
        assert_eq!(&r.lengths()[..2], &[1.0, 1.0]);
        assert!((r.length() - tri.length()).abs() < 1e-15);
        assert_eq!(quality_ratio(&sq), 1.0);
    }

    #[test]
    fn quality_ratio_direct() {
        // segment lengths 1, 2, 4 and sqrt(13)
        let c = PolygonalCurve::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 2.0], [-3.0, 2.0]]).unwrap();
        assert_eq!(quality_ratio(&c), 4.0);
    }

    #[test]
    fn surface_product_examples() {
        let c = build_polygon(Shape::Circle { center: [0.0, 0.0], r: 1.0 }, 10).unwrap();
        let ones = vec![1.0; 10];
        for mode in [ProductMode::Lumped, ProductMode::Exact] {
            let v = surface_products(&c, SurfaceData::Vertex(&ones), SurfaceData::Vertex(&ones), mode).unwrap();
            assert!((v - c.length()).abs() < 1e-14);
        }
        let mut hat = vec![0.0; 10];
        hat[3] = 1.0;
        let v =
            surface_products(&c, SurfaceData::Vertex(&hat), SurfaceData::Vertex(&hat), ProductMode::Lumped).unwrap();
        assert!((v - 0.5 * (c.lengths()[2] + c.lengths()[3])).abs() < 1e-15);
        let seg: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let l =
            surface_products(&c, SurfaceData::Segment(&seg), SurfaceData::Segment(&seg), ProductMode::Lumped).unwrap();
        let e =
            surface_products(&c, SurfaceData::Segment(&seg), SurfaceData::Segment(&seg), ProductMode::Exact).unwrap();
        assert!((l - e).abs() < 1e-12);
        assert!(surface_products(&c, SurfaceData::Vertex(&ones[..3]), SurfaceData::Vertex(&ones), ProductMode::Exact)
            .is_err());
    }

    fn star_curve() -> impl Strategy<Value = PolygonalCurve> {
        prop::collection::vec(0.5..1.5f64, 5..40).prop_map(|radii| {
            let n = radii.len();
            let v = radii
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let t = 2.0 * PI * k as f64 / n as f64;
                    [r * t.cos(), r * t.sin()]
                })
                .collect();
            PolygonalCurve::new(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn refinement_preserves_area_length_and_ratio(c in star_curve(), f in 0.3..1.0f64) {
            let vmax = c.lengths().iter().cloned().fold(0.0, f64::max) * f;
            let r = refine_long_elements(&c, vmax);
            prop_assert!((r.area() - c.area()).abs() < 1e-13);
            prop_assert!((r.length() - c.length()).abs() < 1e-13);
            // halves of split segments are at least 0.75 vol_max while kept
            // segments are shorter than 1.5 vol_max
            prop_assert!(quality_ratio(&r) <= quality_ratio(&c).max(2.0) * (1.0 + 1e-14));
        }

        #[test]
        fn star_curves_are_simple_and_subcircular(c in star_curve()) {
            prop_assert!(c.self_intersection().is_none());
            prop_assert!(circularity(&c) <= 1.0);
            prop_assert!(c.area() > 0.0);
        }
    }
}
