//! Small-distance geodesy on a spherical Earth.

/// Mean Earth radius, meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Shift a point by `east`/`north` meters. Longitude wraps, latitude clamps.
pub fn offset_m(lat: f64, lon: f64, east: f64, north: f64) -> (f64, f64) {
    let dlat = (north / EARTH_RADIUS_M).to_degrees();
    let cos = lat.to_radians().cos().max(1e-9);
    let dlon = (east / (EARTH_RADIUS_M * cos)).to_degrees();
    let new_lat = (lat + dlat).clamp(-90.0, 90.0);
    let mut new_lon = lon + dlon;
    if new_lon > 180.0 {
        new_lon -= 360.0;
    } else if new_lon < -180.0 {
        new_lon += 360.0;
    }
    (new_lat, new_lon)
}

/// Linear interpolation in degrees; fine for legs of a few kilometers.
pub fn lerp(a: (f64, f64), b: (f64, f64), f: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_round_trip_through_haversine() {
        for (lat, lon) in [(5.41, 118.037), (0.0, 0.0), (60.0, 10.0), (-33.9, 151.2)] {
            for (e, n) in [(3.0, 4.0), (-10.0, 0.0), (0.0, 7.5), (100.0, -100.0)] {
                let (la, lo) = offset_m(lat, lon, e, n);
                let d = haversine_m(lat, lon, la, lo);
                let want = (e * e + n * n).sqrt();
                assert!((d - want).abs() < want * 1e-3, "{lat},{lon} {e},{n}: {d} vs {want}");
            }
        }
    }

    #[test]
    fn one_degree_of_latitude() {
        let d = haversine_m(0.0, 0.0, 1.0, 0.0);
        assert!((d - 111_195.08).abs() < 0.1, "{d}");
    }
}
