//! WGS84 positions, great-circle distances and a local equal-area projection.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Haversine distance in meters.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s1 = libm::sin(dphi / 2.0);
    let s2 = libm::sin(dlambda / 2.0);
    let h = s1 * s1 + libm::cos(phi1) * libm::cos(phi2) * s2 * s2;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Lambert cylindrical equal-area projection with its standard parallel at
/// the origin latitude. Planar areas are true areas; distances are accurate
/// to well under a percent across a county-sized region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub origin: LatLon,
    cos0: f64,
    sin0: f64,
}

impl LocalProjection {
    pub fn new(origin: LatLon) -> Self {
        let phi0 = origin.lat.to_radians();
        LocalProjection {
            origin,
            cos0: libm::cos(phi0),
            sin0: libm::sin(phi0),
        }
    }

    /// Projected `(x, y)` in meters, east and north of the origin.
    pub fn project(&self, p: LatLon) -> (f64, f64) {
        let x = EARTH_RADIUS_M * (p.lon - self.origin.lon).to_radians() * self.cos0;
        let y = EARTH_RADIUS_M * (libm::sin(p.lat.to_radians()) - self.sin0) / self.cos0;
        (x, y)
    }

    pub fn unproject(&self, x: f64, y: f64) -> LatLon {
        let s = (y * self.cos0 / EARTH_RADIUS_M + self.sin0).clamp(-1.0, 1.0);
        let lat = libm::asin(s).to_degrees();
        let lon = self.origin.lon + (x / (EARTH_RADIUS_M * self.cos0)).to_degrees();
        LatLon { lat, lon }
    }
}

/// Axis-aligned lat/lon rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn contains(&self, p: LatLon) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max_lat > self.min_lat && self.max_lon > self.min_lon)
    }

    pub fn center(&self) -> LatLon {
        LatLon::new((self.min_lat + self.max_lat) / 2.0, (self.min_lon + self.max_lon) / 2.0)
    }

    /// Smallest box covering all points, `None` for an empty iterator.
    pub fn covering<I: IntoIterator<Item = LatLon>>(points: I) -> Option<BBox> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox {
            min_lat: first.lat,
            min_lon: first.lon,
            max_lat: first.lat,
            max_lon: first.lon,
        };
        for p in it {
            b.min_lat = b.min_lat.min(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lat = b.max_lat.max(p.lat);
            b.max_lon = b.max_lon.max(p.lon);
        }
        Some(b)
    }
}

/// Area-weighted centroid and absolute area (m²) of a ring given in projected
/// coordinates. Falls back to the vertex mean for degenerate rings.
pub fn ring_centroid(ring: &[(f64, f64)]) -> ((f64, f64), f64) {
    let n = ring.len();
    if n == 0 {
        return ((0.0, 0.0), 0.0);
    }
    let mut a2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        a2 += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    if libm::fabs(a2) < 1e-9 {
        let mx = ring.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let my = ring.iter().map(|p| p.1).sum::<f64>() / n as f64;
        return ((mx, my), 0.0);
    }
    ((cx / (3.0 * a2), cy / (3.0 * a2)), libm::fabs(a2) / 2.0)
}
