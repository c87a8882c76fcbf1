//! Planar polygon primitives in projected meters.
//!
//! Rings are stored open (the closing vertex is implied), exteriors are
//! counter-clockwise and holes clockwise. [`Polygon::new`] rejects rings that
//! are degenerate, have zero area, or self-intersect.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned rectangle, `x_min < x_max` and `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let ok = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite())
            && x_max > x_min
            && y_max > y_min;
        if !ok {
            return Err(Error::InvalidGeometry(format!(
                "box [{x_min}, {y_min}, {x_max}, {y_max}] must have positive width and height"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Counter-clockwise corner ring.
    pub fn ring(&self) -> Vec<Point> {
        vec![
            Point::new(self.x_min, self.y_min),
            Point::new(self.x_max, self.y_min),
            Point::new(self.x_max, self.y_max),
            Point::new(self.x_min, self.y_max),
        ]
    }
}

/// A polygon with one exterior ring and zero or more holes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polygon {
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

impl Polygon {
    /// Validate and normalize rings.
    ///
    /// A trailing vertex equal to the first is dropped, repeated consecutive
    /// vertices collapse, and ring orientation is fixed up. Self-intersecting
    /// rings, rings with fewer than three distinct vertices, zero-area rings
    /// and holes that escape the exterior are rejected.
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let exterior = normalize_ring(exterior, true).map_err(|e| ring_error("exterior", e))?;
        let mut normalized_holes = Vec::with_capacity(holes.len());
        for (idx, hole) in holes.into_iter().enumerate() {
            let hole = normalize_ring(hole, false).map_err(|e| ring_error(&format!("hole {idx}"), e))?;
            if rings_cross(&hole, &exterior) || !ring_contains(&exterior, hole[0]) {
                return Err(Error::InvalidGeometry(format!(
                    "hole {idx} is not inside the exterior ring"
                )));
            }
            normalized_holes.push(hole);
        }
        Ok(Self {
            exterior,
            holes: normalized_holes,
        })
    }

    /// Axis-aligned rectangle as a polygon.
    pub fn from_rect(rect: &Rect) -> Self {
        Self {
            exterior: rect.ring(),
            holes: Vec::new(),
        }
    }

    /// Build from rings already known to be valid and oriented; used for
    /// clipping output, which may carry zero-width bridges along the clip box.
    pub(crate) fn from_parts_unchecked(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Self {
        Self { exterior, holes }
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    pub fn bbox(&self) -> Rect {
        let mut r = Rect {
            x_min: f64::INFINITY,
            y_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for p in &self.exterior {
            r.x_min = r.x_min.min(p.x);
            r.y_min = r.y_min.min(p.y);
            r.x_max = r.x_max.max(p.x);
            r.y_max = r.y_max.max(p.y);
        }
        r
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        let shift = |ring: &[Point]| ring.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
        Polygon {
            exterior: shift(&self.exterior),
            holes: self.holes.iter().map(|h| shift(h)).collect(),
        }
    }

    /// Area-weighted centroid of the polygon (holes subtracted).
    pub fn centroid(&self) -> Point {
        let o = self.exterior[0];
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for ring in self.rings() {
            let n = ring.len();
            for i in 0..n {
                let p = Point::new(ring[i].x - o.x, ring[i].y - o.y);
                let q = Point::new(ring[(i + 1) % n].x - o.x, ring[(i + 1) % n].y - o.y);
                let cross = p.x * q.y - q.x * p.y;
                a += cross;
                cx += (p.x + q.x) * cross;
                cy += (p.y + q.y) * cross;
            }
        }
        Point::new(o.x + cx / (3.0 * a), o.y + cy / (3.0 * a))
    }

    /// Even-odd containment over every ring, casting a ray towards +x.
    ///
    /// Points exactly on an edge are classified by the half-open crossing
    /// rule; callers that need a tie-break perturb the query point.
    pub fn contains(&self, p: Point) -> bool {
        self.rings().fold(false, |inside, ring| inside ^ ring_contains(ring, p))
    }
}

/// Shoelace area of a polygon: exterior area minus hole areas.
pub fn polygon_area(polygon: &Polygon) -> f64 {
    let outer = signed_ring_area(&polygon.exterior).abs();
    let holes: f64 = polygon.holes.iter().map(|h| signed_ring_area(h).abs()).sum();
    outer - holes
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn signed_ring_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    // Shift to the first vertex to limit cancellation at large coordinates.
    let o = ring[0];
    let mut twice = 0.0;
    for i in 1..n - 1 {
        let a = ring[i];
        let b = ring[i + 1];
        twice += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    twice * 0.5
}

/// Clip a polygon against an axis-aligned box (Sutherland-Hodgman on the
/// exterior and on every hole).
///
/// Returns at most one polygon: concave inputs that leave and re-enter the
/// box come back as a single ring joined by zero-width bridges on the box
/// boundary, which leaves area and interior containment intact. The result
/// is empty exactly when the intersection has zero area.
pub fn clip_polygon_to_box(polygon: &Polygon, rect: &Rect) -> Vec<Polygon> {
    let bb = polygon.bbox();
    if !bb.intersects(rect) {
        return Vec::new();
    }
    let exterior = clip_ring_to_box(&polygon.exterior, rect);
    let outer_area = signed_ring_area(&exterior);
    if exterior.len() < 3 || outer_area <= 0.0 {
        return Vec::new();
    }
    let mut holes = Vec::new();
    let mut hole_area = 0.0;
    for hole in &polygon.holes {
        let clipped = clip_ring_to_box(hole, rect);
        let a = signed_ring_area(&clipped);
        if clipped.len() >= 3 && a < 0.0 {
            hole_area += -a;
            holes.push(clipped);
        }
    }
    if outer_area - hole_area <= 1e-12 * rect.area() {
        return Vec::new();
    }
    vec![Polygon::from_parts_unchecked(exterior, holes)]
}

#[derive(Clone, Copy)]
enum BoxEdge {
    Left(f64),
    Right(f64),
    Bottom(f64),
    Top(f64),
}

impl BoxEdge {
    fn inside(self, p: Point) -> bool {
        match self {
            BoxEdge::Left(x) => p.x >= x,
            BoxEdge::Right(x) => p.x <= x,
            BoxEdge::Bottom(y) => p.y >= y,
            BoxEdge::Top(y) => p.y <= y,
        }
    }

    // The crossing coordinate on the edge line is set exactly so clipped
    // vertices land on the box.
    fn intersect(self, a: Point, b: Point) -> Point {
        match self {
            BoxEdge::Left(x) | BoxEdge::Right(x) => {
                let t = (x - a.x) / (b.x - a.x);
                Point::new(x, a.y + t * (b.y - a.y))
            }
            BoxEdge::Bottom(y) | BoxEdge::Top(y) => {
                let t = (y - a.y) / (b.y - a.y);
                Point::new(a.x + t * (b.x - a.x), y)
            }
        }
    }
}

pub(crate) fn clip_ring_to_box(ring: &[Point], rect: &Rect) -> Vec<Point> {
    let edges = [
        BoxEdge::Left(rect.x_min),
        BoxEdge::Right(rect.x_max),
        BoxEdge::Bottom(rect.y_min),
        BoxEdge::Top(rect.y_max),
    ];
    let mut output: Vec<Point> = ring.to_vec();
    for edge in edges {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().expect("non-empty");
        for &cur in &input {
            match (edge.inside(prev), edge.inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(edge.intersect(prev, cur)),
                (false, true) => {
                    output.push(edge.intersect(prev, cur));
                    output.push(cur);
                }
                (false, false) => {}
            }
            prev = cur;
        }
    }
    output
}

/// Sutherland-Hodgman against a convex counter-clockwise clip ring.
pub(crate) fn clip_ring_to_convex(ring: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = ring.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: Point| orient(a, b, p);
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().expect("non-empty");
        for &cur in &input {
            let (sp, sc) = (side(prev), side(cur));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(lerp(prev, cur, sp / (sp - sc)));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(lerp(prev, cur, sp / (sp - sc)));
            }
            prev = cur;
        }
    }
    output
}

pub(crate) fn is_convex(ring: &[Point]) -> bool {
    let n = ring.len();
    (0..n).all(|i| orient(ring[i], ring[(i + 1) % n], ring[(i + 2) % n]) >= 0.0)
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

/// Twice the signed area of triangle (a, b, c); positive when counter-clockwise.
pub(crate) fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// x coordinate where edge (a, b) crosses the horizontal line at `y`, using
/// the half-open rule `(a.y > y) != (b.y > y)`.
#[inline]
pub(crate) fn edge_crossing(a: Point, b: Point, y: f64) -> Option<f64> {
    ((a.y > y) != (b.y > y)).then(|| a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x))
}

pub(crate) fn ring_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        if let Some(x) = edge_crossing(ring[i], ring[j], p.y) {
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug)]
enum RingDefect {
    TooFewVertices(usize),
    ZeroArea,
    SelfIntersecting,
    NonFinite,
}

fn ring_error(which: &str, defect: RingDefect) -> Error {
    let msg = match defect {
        RingDefect::TooFewVertices(n) => format!("{which} ring has {n} distinct vertices (need 3)"),
        RingDefect::ZeroArea => format!("{which} ring has zero area"),
        RingDefect::SelfIntersecting => format!("{which} ring is self-intersecting"),
        RingDefect::NonFinite => format!("{which} ring has non-finite coordinates"),
    };
    Error::InvalidGeometry(msg)
}

fn normalize_ring(mut ring: Vec<Point>, ccw: bool) -> Result<Vec<Point>, RingDefect> {
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(RingDefect::NonFinite);
    }
    ring.dedup();
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(RingDefect::TooFewVertices(ring.len()));
    }
    let collinear = ring.iter().all(|&p| orient(ring[0], ring[1], p) == 0.0);
    if collinear {
        return Err(RingDefect::ZeroArea);
    }
    if !ring_is_simple(&ring) {
        return Err(RingDefect::SelfIntersecting);
    }
    let area = signed_ring_area(&ring);
    if area == 0.0 {
        return Err(RingDefect::ZeroArea);
    }
    if (area > 0.0) != ccw {
        ring.reverse();
    }
    Ok(ring)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching and collinear overlap included.
fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn ring_is_simple(ring: &[Point]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        // Adjacent edges may only share their common vertex: reject spikes
        // where the next edge folds back over this one.
        let c = ring[(i + 2) % n];
        if orient(a, b, c) == 0.0 {
            let back = (c.x - b.x) * (a.x - b.x) + (c.y - b.y) * (a.y - b.y);
            if back > 0.0 {
                return false;
            }
        }
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, ring[j], ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

fn rings_cross(r1: &[Point], r2: &[Point]) -> bool {
    let (n, m) = (r1.len(), r2.len());
    (0..n).any(|i| {
        (0..m).any(|j| segments_intersect(r1[i], r1[(i + 1) % n], r2[j], r2[(j + 1) % m]))
    })
}

/// True when the interiors of two polygons share positive area (above
/// `tol` square meters). `None` when neither polygon is convex and hole-free,
/// in which case the exact test is not available.
pub(crate) fn polygons_overlap(a: &Polygon, b: &Polygon, tol: f64) -> Option<bool> {
    if !a.bbox().intersects(&b.bbox()) {
        return Some(false);
    }
    let (subject, clip) = if b.holes.is_empty() && is_convex(&b.exterior) {
        (a, b)
    } else if a.holes.is_empty() && is_convex(&a.exterior) {
        (b, a)
    } else {
        return None;
    };
    let outer = signed_ring_area(&clip_ring_to_convex(&subject.exterior, &clip.exterior));
    let holes: f64 = subject
        .holes
        .iter()
        .map(|h| -signed_ring_area(&clip_ring_to_convex(h, &clip.exterior)))
        .sum();
    Some(outer - holes > tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point> {
        pts(&[(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)])
    }

    #[test]
    fn unit_square_area() {
        let p = Polygon::new(square(0.0, 0.0, 1.0), vec![]).unwrap();
        assert_eq!(polygon_area(&p), 1.0);
    }

    #[test]
    fn square_with_hole_area() {
        let hole = square(0.25, 0.25, 0.5);
        let p = Polygon::new(square(0.0, 0.0, 1.0), vec![hole]).unwrap();
        assert_eq!(polygon_area(&p), 0.75);
        assert!(signed_ring_area(&p.holes()[0]) < 0.0);
        assert!(!p.contains(Point::new(0.5, 0.5)));
        assert!(p.contains(Point::new(0.1, 0.5)));
    }

    #[test]
    fn closing_vertex_dropped_and_orientation_fixed() {
        let cw = pts(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0), (0.0, 0.0)]);
        let p = Polygon::new(cw, vec![]).unwrap();
        assert_eq!(p.exterior().len(), 4);
        assert!(signed_ring_area(p.exterior()) > 0.0);
        // idempotent
        let again = Polygon::new(p.exterior().to_vec(), vec![]).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn bowtie_rejected() {
        let bowtie = pts(&[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]);
        let err = Polygon::new(bowtie, vec![]).unwrap_err();
        assert!(err.to_string().contains("self-intersecting"), "{err}");
    }

    #[test]
    fn degenerate_rings_rejected() {
        assert!(Polygon::new(pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]), vec![]).is_err());
        let collinear = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert!(Polygon::new(collinear, vec![])
            .unwrap_err()
            .to_string()
            .contains("zero area"));
        let spike = pts(&[(0.0, 0.0), (2.0, 0.0), (1.0, 0.0), (1.0, 1.0)]);
        assert!(Polygon::new(spike, vec![]).is_err());
    }

    #[test]
    fn hole_outside_exterior_rejected() {
        let r = Polygon::new(square(0.0, 0.0, 1.0), vec![square(2.0, 2.0, 0.5)]);
        assert!(r.is_err());
    }

    #[test]
    fn clip_inside_unchanged() {
        let p = Polygon::new(square(1.0, 1.0, 2.0), vec![]).unwrap();
        let rect = Rect::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let out = clip_polygon_to_box(&p, &rect);
        assert_eq!(out.len(), 1);
        assert_eq!(polygon_area(&out[0]), 4.0);
    }

    #[test]
    fn clip_disjoint_empty() {
        let p = Polygon::new(square(20.0, 20.0, 2.0), vec![]).unwrap();
        let rect = Rect::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert!(clip_polygon_to_box(&p, &rect).is_empty());
        // sharing only an edge has zero-area intersection
        let touching = Polygon::new(square(10.0, 0.0, 2.0), vec![]).unwrap();
        assert!(clip_polygon_to_box(&touching, &rect).is_empty());
    }

    #[test]
    fn clip_halves_rectangle() {
        let p = Polygon::new(pts(&[(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (0.0, 1.0)]), vec![]).unwrap();
        let rect = Rect::new(1.0, -5.0, 10.0, 5.0).unwrap();
        let out = clip_polygon_to_box(&p, &rect);
        assert_eq!(polygon_area(&out[0]), polygon_area(&p) / 2.0);
    }

    #[test]
    fn clip_hole_covering_box_is_empty() {
        let p = Polygon::new(square(0.0, 0.0, 10.0), vec![square(2.0, 2.0, 6.0)]).unwrap();
        let rect = Rect::new(3.0, 3.0, 5.0, 5.0).unwrap();
        assert!(clip_polygon_to_box(&p, &rect).is_empty());
    }

    #[test]
    fn clip_concave_keeps_area() {
        // U shape; box cuts across both arms
        let u = pts(&[
            (0.0, 0.0),
            (3.0, 0.0),
            (3.0, 3.0),
            (2.0, 3.0),
            (2.0, 1.0),
            (1.0, 1.0),
            (1.0, 3.0),
            (0.0, 3.0),
        ]);
        let p = Polygon::new(u, vec![]).unwrap();
        let rect = Rect::new(-1.0, 2.0, 4.0, 4.0).unwrap();
        let out = clip_polygon_to_box(&p, &rect);
        assert!((polygon_area(&out[0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn convex_overlap_detection() {
        let a = Polygon::new(square(0.0, 0.0, 2.0), vec![]).unwrap();
        let b = Polygon::new(square(1.0, 1.0, 2.0), vec![]).unwrap();
        let c = Polygon::new(square(2.0, 0.0, 2.0), vec![]).unwrap();
        assert_eq!(polygons_overlap(&a, &b, 1e-9), Some(true));
        assert_eq!(polygons_overlap(&a, &c, 1e-9), Some(false));
    }

    #[test]
    fn centroid_of_square() {
        let p = Polygon::new(square(2.0, 4.0, 2.0), vec![]).unwrap();
        let c = p.centroid();
        assert!((c.x - 3.0).abs() < 1e-12 && (c.y - 5.0).abs() < 1e-12);
    }
}
