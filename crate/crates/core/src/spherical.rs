//! Spherical chart and the equirectangular pixel grid.
//!
//! Longitude `theta` is measured from +Z toward +X, latitude `phi` is positive
//! toward +Y. ERP coordinates follow `u = theta / 2pi + 0.5`,
//! `v = phi / pi + 0.5`; image row 0 holds the north pole (`v = 1`).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;

use crate::error::{domain, Result};
use crate::raster::{Raster, Texel};

/// Tolerance on `|d| - 1` accepted by [`Direction::new`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    theta: f64,
    phi: f64,
}

impl SphericalCoord {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(-PI..=PI).contains(&theta) {
            return domain(format!("longitude {theta} outside [-pi, pi]"));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&phi) {
            return domain(format!("latitude {phi} outside [-pi/2, pi/2]"));
        }
        Ok(Self { theta, phi })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Unit vector on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    /// Wraps an already-normalized vector; rejects norms off by more than
    /// [`UNIT_TOLERANCE`]. The stored vector is renormalized.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return domain(format!("({x}, {y}, {z}) is not a unit vector (norm {n})"));
        }
        Ok(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn normalize(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return domain("cannot normalize a zero or non-finite vector");
        }
        Ok(Self {
            x: v.x / n,
            y: v.y / n,
            z: v.z / n,
        })
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

pub fn erp_uv_from_angles(c: SphericalCoord) -> Result<(f64, f64)> {
    // Re-validate: fields are private, but keep the contract local.
    let c = SphericalCoord::new(c.theta, c.phi)?;
    Ok((c.theta / TAU + 0.5, c.phi / PI + 0.5))
}

pub fn angles_from_erp_uv(u: f64, v: f64) -> Result<SphericalCoord> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return domain(format!("erp coordinate ({u}, {v}) outside [0, 1]^2"));
    }
    SphericalCoord::new((u - 0.5) * TAU, (v - 0.5) * PI)
}

pub fn direction_from_angles(c: SphericalCoord) -> Direction {
    let (st, ct) = c.theta.sin_cos();
    let (sp, cp) = c.phi.sin_cos();
    Direction {
        x: cp * st,
        y: sp,
        z: cp * ct,
    }
}

pub fn angles_from_direction(d: Direction) -> Result<SphericalCoord> {
    let d = Direction::new(d.x, d.y, d.z)?;
    let phi = d.y.clamp(-1.0, 1.0).asin();
    let horizontal = d.x.hypot(d.z);
    // atan2(0, 0) is 0 in IEEE arithmetic, which already gives the theta = 0
    // pole convention; the explicit branch also catches rounding residue.
    let theta = if horizontal == 0.0 { 0.0 } else { d.x.atan2(d.z) };
    let phi = if horizontal == 0.0 {
        FRAC_PI_2.copysign(d.y)
    } else {
        phi
    };
    SphericalCoord::new(theta, phi)
}

/// Direction for an ERP `(u, v)` without range checks; `u` may lie outside
/// `[0, 1]`, `v` is clamped.
pub(crate) fn direction_from_uv_unchecked(u: f64, v: f64) -> Vector3<f64> {
    let theta = (u - 0.5) * TAU;
    let phi = ((v - 0.5) * PI).clamp(-FRAC_PI_2, FRAC_PI_2);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(cp * st, sp, cp * ct)
}

/// ERP `(u, v)` of a (not necessarily unit) direction, `u` in `[0, 1]`.
pub(crate) fn uv_from_vector_unchecked(d: &Vector3<f64>) -> (f64, f64) {
    let n = d.norm();
    let horizontal = d.x.hypot(d.z);
    let theta = if horizontal == 0.0 { 0.0 } else { d.x.atan2(d.z) };
    let phi = (d.y / n).clamp(-1.0, 1.0).asin();
    (theta / TAU + 0.5, phi / PI + 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    /// Image row 0 maps to `v = 1`.
    NorthPoleTop,
}

/// Pixel layout of an equirectangular raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErpGrid {
    width: usize,
    height: usize,
    row0: RowOrigin,
}

impl ErpGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 2 || width != 2 * height {
            return domain(format!(
                "erp grid must be 2:1 with width >= 2, got {width}x{height}"
            ));
        }
        Ok(Self {
            width,
            height,
            row0: RowOrigin::NorthPoleTop,
        })
    }

    pub fn from_width(width: usize) -> Result<Self> {
        if width % 2 != 0 {
            return domain(format!("erp width {width} must be even"));
        }
        Self::new(width, width / 2)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn row_origin(&self) -> RowOrigin {
        self.row0
    }

    /// `(u, v)` of the center of pixel `(col, row)`.
    pub fn pixel_center_uv(&self, col: usize, row: usize) -> (f64, f64) {
        let u = (col as f64 + 0.5) / self.width as f64;
        let v = 1.0 - (row as f64 + 0.5) / self.height as f64;
        (u, v)
    }

    pub fn pixel_center_direction(&self, col: usize, row: usize) -> Direction {
        let (u, v) = self.pixel_center_uv(col, row);
        let d = direction_from_uv_unchecked(u, v);
        Direction {
            x: d.x,
            y: d.y,
            z: d.z,
        }
    }
}

/// Bilinear sample of an ERP raster at `(u, v)`.
///
/// Pixel centers sit at `(i + 0.5) / W`; columns wrap modulo `W`, rows clamp at
/// the poles.
pub fn bilinear_sample_erp<T: Texel>(img: &Raster<T>, u: f64, v: f64) -> Result<T> {
    if img.is_empty() {
        return domain("cannot sample an empty raster");
    }
    if !u.is_finite() {
        return domain(format!("non-finite erp u {u}"));
    }
    if !(0.0..=1.0).contains(&v) {
        return domain(format!("erp v {v} outside [0, 1]"));
    }
    Ok(sample_erp_unchecked(img, u, v))
}

pub(crate) fn sample_erp_unchecked<T: Texel>(img: &Raster<T>, u: f64, v: f64) -> T {
    let w = img.width();
    let h = img.height();
    let x = u * w as f64 - 0.5;
    let y = (1.0 - v) * h as f64 - 0.5;
    let x0 = x.floor();
    let fx = x - x0;
    let c0 = (x0 as i64).rem_euclid(w as i64) as usize;
    let c1 = (c0 + 1) % w;
    let y = y.clamp(0.0, (h - 1) as f64);
    let r0 = (y.floor() as usize).min(h.saturating_sub(2));
    let fy = if h == 1 { 0.0 } else { y - r0 as f64 };
    let r1 = (r0 + 1).min(h - 1);
    let top = img.at(c0, r0).lerp(img.at(c1, r0), fx);
    let bottom = img.at(c0, r1).lerp(img.at(c1, r1), fx);
    top.lerp(bottom, fy)
}
