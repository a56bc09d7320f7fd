//! Spherical distance and local planar projection helpers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Meters spanned by one degree of latitude.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Point reached by moving `north_m` and `east_m` meters in the local
    /// tangent plane. Only meaningful for offsets of a few kilometers.
    pub fn offset(&self, north_m: f64, east_m: f64) -> GeoPoint {
        let lat = self.lat + north_m / METERS_PER_DEGREE;
        let lon = self.lon + east_m / (METERS_PER_DEGREE * self.lat.to_radians().cos());
        GeoPoint { lat, lon }
    }

    fn lerp(&self, other: &GeoPoint, t: f64) -> GeoPoint {
        GeoPoint {
            lat: self.lat + (other.lat - self.lat) * t,
            lon: self.lon + (other.lon - self.lon) * t,
        }
    }
}

/// Haversine great-circle distance in meters.
pub fn geodesic_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Length of a polyline, summing consecutive geodesic distances.
pub fn polyline_length(points: &[GeoPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| geodesic_distance(w[0], w[1]))
        .sum()
}

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("degenerate segment: start and end coincide")]
    DegenerateSegment,
}

/// Closest point of a segment to a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub foot: GeoPoint,
    /// Geodesic distance from the query point to `foot`.
    pub dist: f64,
    /// Position of `foot` along the segment as a fraction of its length.
    pub frac: f64,
}

/// Projects `p` onto the segment `seg_start -> seg_end`.
///
/// The closest point is found in an equirectangular plane centered at `p`.
/// `frac` is the arc-length fraction of the foot, so `frac * length` agrees
/// with the geodesic distance from `seg_start` to the foot.
pub fn project_point_to_segment(
    p: GeoPoint,
    seg_start: GeoPoint,
    seg_end: GeoPoint,
) -> Result<Projection, GeoError> {
    if seg_start == seg_end {
        return Err(GeoError::DegenerateSegment);
    }
    let kx = p.lat.to_radians().cos();
    let to_plane = |q: GeoPoint| ((q.lon - p.lon) * kx, q.lat - p.lat);
    let (ax, ay) = to_plane(seg_start);
    let (bx, by) = to_plane(seg_end);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let (foot, frac) = if t <= 0.0 {
        (seg_start, 0.0)
    } else if t >= 1.0 {
        (seg_end, 1.0)
    } else {
        let foot = seg_start.lerp(&seg_end, t);
        let total = geodesic_distance(seg_start, seg_end);
        let frac = if total > 0.0 {
            (geodesic_distance(seg_start, foot) / total).clamp(0.0, 1.0)
        } else {
            t
        };
        (foot, frac)
    };
    Ok(Projection {
        foot,
        dist: geodesic_distance(p, foot),
        frac,
    })
}

/// Point at arc-length fraction `frac` along a segment, the inverse of the
/// fraction produced by [`project_point_to_segment`].
pub fn interpolate(seg_start: GeoPoint, seg_end: GeoPoint, frac: f64) -> GeoPoint {
    if frac <= 0.0 {
        seg_start
    } else if frac >= 1.0 {
        seg_end
    } else {
        let target = frac * geodesic_distance(seg_start, seg_end);
        let mut t = frac;
        for _ in 0..4 {
            let d = geodesic_distance(seg_start, seg_start.lerp(&seg_end, t));
            if d <= 0.0 || (d - target).abs() <= 1e-12 * target {
                break;
            }
            t = (t * target / d).clamp(0.0, 1.0);
        }
        seg_start.lerp(&seg_end, t)
    }
}

/// Axis-aligned bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl BoundingBox {
    pub fn new(a: GeoPoint, b: GeoPoint) -> Self {
        Self {
            min: GeoPoint::new(a.lat.min(b.lat), a.lon.min(b.lon)),
            max: GeoPoint::new(a.lat.max(b.lat), a.lon.max(b.lon)),
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min.lat..=self.max.lat).contains(&p.lat)
            && (self.min.lon..=self.max.lon).contains(&p.lon)
    }

    /// Box around `p` guaranteed to contain every point within `radius_m`.
    pub fn around(p: GeoPoint, radius_m: f64) -> Self {
        // 1% slack plus a meter covers the haversine/planar mismatch.
        let r = radius_m * 1.01 + 1.0;
        let dlat = r / METERS_PER_DEGREE;
        let worst_lat = (p.lat.abs() + dlat).min(89.999_999);
        let dlon = (r / (METERS_PER_DEGREE * worst_lat.to_radians().cos())).min(360.0);
        Self {
            min: GeoPoint::new(p.lat - dlat, p.lon - dlon),
            max: GeoPoint::new(p.lat + dlat, p.lon + dlon),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_points_have_zero_distance() {
        let p = GeoPoint::new(45.46, 9.19);
        assert_eq!(geodesic_distance(p, p), 0.0);
    }

    #[test]
    fn one_degree_on_equator() {
        let expected = std::f64::consts::PI / 180.0 * 6_371_008.8;
        let d = geodesic_distance(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 1.0));
        assert!((d - 111_195.0).abs() < 5.0, "{d}");
        assert!((d - expected).abs() < 1e-6);
        let d2 = geodesic_distance(GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 0.0));
        assert!((d - d2).abs() < 1e-6);
    }

    #[test]
    fn degenerate_segment_is_rejected() {
        let a = GeoPoint::new(1.0, 1.0);
        assert_eq!(
            project_point_to_segment(GeoPoint::new(1.0, 1.001), a, a),
            Err(GeoError::DegenerateSegment)
        );
    }

    #[test]
    fn point_on_segment_interior() {
        let a = GeoPoint::new(0.0, 0.0);
        let b = GeoPoint::new(0.0, 0.005);
        let p = GeoPoint::new(0.0, 0.002);
        let pr = project_point_to_segment(p, a, b).unwrap();
        assert!(pr.dist < 1e-6);
        assert!((pr.foot.lon - p.lon).abs() < 1e-12 && pr.foot.lat.abs() < 1e-12);
        assert!((pr.frac - 0.4).abs() < 1e-9);
    }

    #[test]
    fn point_beyond_end_clamps() {
        let a = GeoPoint::new(10.0, 10.0);
        let b = GeoPoint::new(10.001, 10.001);
        let p = GeoPoint::new(10.003, 10.003);
        let pr = project_point_to_segment(p, a, b).unwrap();
        assert_eq!(pr.foot, b);
        assert_eq!(pr.frac, 1.0);
    }

    #[test]
    fn perpendicular_offset_from_midpoint() {
        // 500 m equatorial segment, query 10 m north of its midpoint.
        let a = GeoPoint::new(0.0, 0.0);
        let b = a.offset(0.0, 500.0);
        let mid = GeoPoint::new(0.0, b.lon / 2.0);
        let p = mid.offset(10.0, 0.0);
        let pr = project_point_to_segment(p, a, b).unwrap();
        assert!((pr.dist - 10.0).abs() < 0.01, "{}", pr.dist);
        assert!((pr.frac - 0.5).abs() < 1e-6, "{}", pr.frac);
    }

    #[test]
    fn frac_matches_geodesic_offset_on_diagonal() {
        let a = GeoPoint::new(45.0, 9.0);
        let b = a.offset(70.0, 70.0);
        let p = a.offset(30.0, 50.0);
        let pr = project_point_to_segment(p, a, b).unwrap();
        let len = geodesic_distance(a, b);
        let along = geodesic_distance(a, pr.foot);
        assert!((pr.frac * len - along).abs() < 1e-9);
        assert!(geodesic_distance(interpolate(a, b, pr.frac), pr.foot) < 1e-6);
        let half = interpolate(a, b, 0.5);
        assert!((geodesic_distance(a, half) - 0.5 * len).abs() < 1e-9);
    }

    fn coord() -> impl Strategy<Value = GeoPoint> {
        (-60.0f64..60.0, -170.0f64..170.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon))
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_non_negative(a in coord(), b in coord()) {
            let ab = geodesic_distance(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - geodesic_distance(b, a)).abs() <= 1e-9 * ab.max(1.0));
        }

        #[test]
        fn triangle_inequality(a in coord(), b in coord(), c in coord()) {
            let ab = geodesic_distance(a, b);
            let bc = geodesic_distance(b, c);
            let ac = geodesic_distance(a, c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-9);
        }

        #[test]
        fn projection_not_farther_than_endpoints(
            base in coord(),
            n1 in -800.0f64..800.0, e1 in -800.0f64..800.0,
            n2 in -800.0f64..800.0, e2 in -800.0f64..800.0,
            np in -800.0f64..800.0, ep in -800.0f64..800.0,
        ) {
            let a = base.offset(n1, e1);
            let b = base.offset(n2, e2);
            prop_assume!(geodesic_distance(a, b) > 1.0);
            let p = base.offset(np, ep);
            let pr = project_point_to_segment(p, a, b).unwrap();
            let bound = geodesic_distance(p, a).min(geodesic_distance(p, b));
            prop_assert!(pr.dist <= bound * (1.0 + 1e-6) + 1e-6);
            prop_assert!((0.0..=1.0).contains(&pr.frac));
        }

        #[test]
        fn frac_tracks_parallel_slide(base in coord(), off in -50.0f64..50.0, s1 in -100.0f64..400.0, ds in 0.1f64..100.0) {
            let a = base;
            let b = base.offset(0.0, 300.0);
            let p1 = base.offset(off, s1);
            let p2 = base.offset(off, s1 + ds);
            let f1 = project_point_to_segment(p1, a, b).unwrap().frac;
            let f2 = project_point_to_segment(p2, a, b).unwrap().frac;
            prop_assert!(f2 >= f1);
        }
    }
}
