//! Equal-area latitude/longitude boxes with a margin for the fitting window.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A reference box; the fitting window extends it by `margin` on every side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub id: usize,
    /// Degrees, `(south, north)`.
    pub lat_range: (f64, f64),
    /// Degrees, `(west, east)` with `east > west`; may extend past 360.
    pub lon_range: (f64, f64),
    pub margin: f64,
}

/// Longitude difference wrapped into `[−180, 180)`.
pub fn wrap_lon(d: f64) -> f64 {
    (d + 180.0).rem_euclid(360.0) - 180.0
}

impl GridBox {
    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.lat_range.0 + self.lat_range.1),
            wrap_lon(0.5 * (self.lon_range.0 + self.lon_range.1)),
        )
    }

    pub fn width(&self) -> f64 {
        self.lon_range.1 - self.lon_range.0
    }

    pub fn height(&self) -> f64 {
        self.lat_range.1 - self.lat_range.0
    }

    fn offsets(&self, lat: f64, lon: f64) -> (f64, f64) {
        let (clat, clon) = self.center();
        (lat - clat, wrap_lon(lon - clon))
    }

    /// Inside the reference box (south and west edges inclusive).
    pub fn contains_ref(&self, lat: f64, lon: f64) -> bool {
        let (dy, dx) = self.offsets(lat, lon);
        let (hh, hw) = (0.5 * self.height(), 0.5 * self.width());
        dy >= -hh && dy < hh && dx >= -hw && dx < hw
    }

    /// Inside the reference box extended by the margin.
    pub fn contains_window(&self, lat: f64, lon: f64) -> bool {
        let (dy, dx) = self.offsets(lat, lon);
        let (hh, hw) = (0.5 * self.height() + self.margin, 0.5 * self.width() + self.margin);
        dy.abs() <= hh && dx.abs() <= hw
    }

    /// Planar coordinates centered on the box: longitude offsets are scaled
    /// by the cosine of the center latitude, so both axes are in degrees of
    /// latitude.
    pub fn to_local(&self, lat: f64, lon: f64) -> [f64; 2] {
        let (dy, dx) = self.offsets(lat, lon);
        [dx * self.center().0.to_radians().cos(), dy]
    }

    /// Half extents of the window in local coordinates.
    pub fn window_half_extent(&self) -> [f64; 2] {
        [
            (0.5 * self.width() + self.margin) * self.center().0.to_radians().cos(),
            0.5 * self.height() + self.margin,
        ]
    }

    /// Area on the unit sphere, in degree-scaled units: `Δλ (sin φ₂ − sin φ₁)`
    /// with `Δλ` in degrees.
    pub fn area(&self) -> f64 {
        self.width() * (self.lat_range.1.to_radians().sin() - self.lat_range.0.to_radians().sin())
    }
}

/// Tiles `lat_span × lon_span` with bands of height `ref_size`; each band is
/// cut into `round(span · cos φ_c / ref_size)` equal boxes so that their areas
/// match a `ref_size × ref_size` equatorial box. Boxes are ordered south to
/// north, then west to east.
pub fn build_grid(lat_span: (f64, f64), lon_span: (f64, f64), ref_size: f64, margin: f64) -> Result<Vec<GridBox>> {
    let (s, n) = lat_span;
    let (w, e) = lon_span;
    if !(ref_size > 0.0 && margin >= 0.0 && s < n && s >= -90.0 && n <= 90.0 && w < e && e - w <= 360.0) {
        return Err(Error::Config(format!(
            "invalid grid: lat {lat_span:?}, lon {lon_span:?}, box {ref_size}, margin {margin}"
        )));
    }
    let bands = ((n - s) / ref_size).round().max(1.0) as usize;
    let mut out = Vec::new();
    for b in 0..bands {
        let lo = s + b as f64 * ref_size;
        let hi = (lo + ref_size).min(n);
        let c = 0.5 * (lo + hi);
        let count = ((e - w) * c.to_radians().cos() / ref_size).round().max(1.0) as usize;
        let width = (e - w) / count as f64;
        for k in 0..count {
            out.push(GridBox {
                id: out.len(),
                lat_range: (lo, hi),
                lon_range: (w + k as f64 * width, w + (k + 1) as f64 * width),
                margin,
            });
        }
    }
    Ok(out)
}
