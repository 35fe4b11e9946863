//! Geodesic helpers shared by snapping, cleaning and sampling.
//!
//! All distances are haversine meters on a sphere of radius 6 371 000 m.
//! Points are `(lat, lon)` in degrees WGS84.

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Haversine distance in meters between two (lat, lon) points.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial bearing from `a` to `b` in degrees, 0 = north, clockwise in [0, 360).
pub fn bearing_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlon = lon2 - lon1;
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    let deg = y.atan2(x).to_degrees();
    (deg + 360.0) % 360.0
}

/// Point reached from `origin` going `bearing_deg` for `distance_m` meters.
pub fn destination(origin: (f64, f64), bearing_deg: f64, distance_m: f64) -> (f64, f64) {
    let lat1 = origin.0.to_radians();
    let lon1 = origin.1.to_radians();
    let brg = bearing_deg.to_radians();
    let ang = distance_m / EARTH_RADIUS_M;
    let lat2 = (lat1.sin() * ang.cos() + lat1.cos() * ang.sin() * brg.cos()).asin();
    let lon2 = lon1
        + (brg.sin() * ang.sin() * lat1.cos()).atan2(ang.cos() - lat1.sin() * lat2.sin());
    (lat2.to_degrees(), lon2.to_degrees())
}

/// Total haversine length of a polyline in meters.
pub fn polyline_length_m(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Outcome of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Closest point on the polyline.
    pub point: (f64, f64),
    /// Haversine distance from the query point to `point`, meters.
    pub distance_m: f64,
    /// Arc-length position of `point` as a fraction of the polyline length, in [0, 1].
    pub fraction: f64,
    /// Index of the segment (between points i and i+1) holding the projection.
    pub segment: usize,
    /// Parameter within that segment, in [0, 1].
    pub segment_t: f64,
}

/// Projects `p` onto the polyline using a local equirectangular plane
/// centered on `p`; distances are re-measured with haversine.
pub fn project_onto_polyline(p: (f64, f64), line: &[(f64, f64)]) -> Option<Projection> {
    if line.len() < 2 {
        return None;
    }
    let lat0 = p.0.to_radians();
    let to_xy = |q: (f64, f64)| -> (f64, f64) {
        (
            (q.1 - p.1).to_radians() * lat0.cos() * EARTH_RADIUS_M,
            (q.0 - p.0).to_radians() * EARTH_RADIUS_M,
        )
    };

    let mut best: Option<Projection> = None;
    let mut cum = 0.0;
    let total = polyline_length_m(line).max(f64::MIN_POSITIVE);
    for (i, w) in line.windows(2).enumerate() {
        let seg_len = haversine_m(w[0], w[1]);
        let (x1, y1) = to_xy(w[0]);
        let (x2, y2) = to_xy(w[1]);
        let dx = x2 - x1;
        let dy = y2 - y1;
        let denom = dx * dx + dy * dy;
        let t = if denom == 0.0 {
            0.0
        } else {
            (-(x1 * dx + y1 * dy) / denom).clamp(0.0, 1.0)
        };
        let gp = (
            w[0].0 + t * (w[1].0 - w[0].0),
            w[0].1 + t * (w[1].1 - w[0].1),
        );
        let d = haversine_m(p, gp);
        let replace = match best {
            None => true,
            Some(ref b) => d < b.distance_m,
        };
        if replace {
            best = Some(Projection {
                point: gp,
                distance_m: d,
                fraction: ((cum + t * seg_len) / total).clamp(0.0, 1.0),
                segment: i,
                segment_t: t,
            });
        }
        cum += seg_len;
    }
    best
}

/// Point at arc-length fraction `f` of the polyline, with the containing
/// segment index and the parameter inside it.
pub fn point_at_fraction(line: &[(f64, f64)], f: f64) -> ((f64, f64), usize, f64) {
    assert!(line.len() >= 2, "polyline needs at least two points");
    let total = polyline_length_m(line);
    let target = f.clamp(0.0, 1.0) * total;
    let mut cum = 0.0;
    for (i, w) in line.windows(2).enumerate() {
        let seg_len = haversine_m(w[0], w[1]);
        if cum + seg_len >= target || i == line.len() - 2 {
            let t = if seg_len > 0.0 {
                ((target - cum) / seg_len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let p = (
                w[0].0 + t * (w[1].0 - w[0].0),
                w[0].1 + t * (w[1].1 - w[0].1),
            );
            return (p, i, t);
        }
        cum += seg_len;
    }
    unreachable!()
}
