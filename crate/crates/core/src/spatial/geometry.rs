//! Simple polygons in a site-local planar frame (meters).

use geo::{Area as _, BooleanOps, Coord, LineString};

use super::SpatialError;

/// Overlaps with less area than this are treated as boundary contact.
pub const AREA_TOLERANCE: f64 = 1e-9;

/// A simple polygon: at least three vertices, non-zero area, no edge crossing
/// or touching a non-adjacent edge. Stored as an open ring.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    ring: Vec<[f64; 2]>,
}

impl Polygon {
    /// Accepts an open or closed ring; repeated consecutive vertices are dropped.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, String> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        let mut ring: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if ring.last() != Some(&p) {
                ring.push(p);
            }
        }
        while ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(format!(
                "polygon needs at least 3 distinct vertices, got {}",
                ring.len()
            ));
        }
        if let Some((i, j)) = first_self_intersection(&ring) {
            return Err(format!("edges {i} and {j} intersect"));
        }
        let poly = Self { ring };
        if poly.area() <= AREA_TOLERANCE {
            return Err("polygon has zero area".into());
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.ring
    }

    /// Shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.ring.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let [x0, y0] = self.ring[i];
                let [x1, y1] = self.ring[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        twice.abs() / 2.0
    }

    /// Closed ring, the form GeoJSON expects.
    pub fn closed_ring(&self) -> Vec<Vec<f64>> {
        self.ring
            .iter()
            .chain(self.ring.first())
            .map(|p| p.to_vec())
            .collect()
    }

    fn to_geo(&self) -> geo::Polygon<f64> {
        let coords: Vec<Coord<f64>> = self.ring.iter().map(|&[x, y]| Coord { x, y }).collect();
        geo::Polygon::new(LineString::new(coords), vec![])
    }

    /// Area of the intersection of the two polygons.
    pub fn overlap_area(&self, other: &Polygon) -> f64 {
        self.to_geo().intersection(&other.to_geo()).unsigned_area()
    }

    /// Whether the polygons share more than a boundary.
    pub fn overlaps(&self, other: &Polygon) -> bool {
        self.overlap_area(other) > AREA_TOLERANCE
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = SpatialError;

    fn try_from(points: Vec<[f64; 2]>) -> Result<Self, SpatialError> {
        Polygon::new(points).map_err(|reason| SpatialError::InvalidGeometry {
            what: "polygon".into(),
            reason,
        })
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test, touching included.
fn segments_meet(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
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

fn first_self_intersection(ring: &[[f64; 2]]) -> Option<(usize, usize)> {
    let n = ring.len();
    let edge = |i: usize| (ring[i], ring[(i + 1) % n]);
    for i in 0..n {
        // consecutive edges may only share their common vertex
        let (a, b) = edge(i);
        let c = ring[(i + 2) % n];
        if orient(a, b, c) == 0.0 {
            let dot = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1]);
            if dot < 0.0 {
                return Some((i, (i + 1) % n));
            }
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (p, q) = edge(j);
            if segments_meet(a, b, p, q) {
                return Some((i, j));
            }
        }
    }
    None
}
