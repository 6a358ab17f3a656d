//! Closed-form scenes raycast from the origin (or an interior camera) to
//! produce exact depth and normal fields.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::cubemap::{FaceCamera, FaceId};
use crate::error::{domain, Result};
use crate::geometry::{DepthCube, DepthKind, DepthMap, Frame, NormalCube, NormalFrame, NormalMap};
use crate::raster::Raster;
use crate::spherical::{ErpGrid, UNIT_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scene {
    /// Camera at the center of a sphere of this radius.
    SphereInterior { radius: f64 },
    /// Axis-aligned box `[-a, a] x [-b, b] x [-c, c]` with the camera at an
    /// interior point.
    BoxRoom { half_extents: [f64; 3], camera: [f64; 3] },
    /// The plane `normal . x = offset` with the camera at the origin; `offset`
    /// must be positive so the origin lies strictly on one side.
    Plane { normal: [f64; 3], offset: f64 },
}

impl Scene {
    pub fn sphere(radius: f64) -> Result<Self> {
        let s = Scene::SphereInterior { radius };
        s.validate()?;
        Ok(s)
    }

    pub fn box_room(half_extents: [f64; 3], camera: [f64; 3]) -> Result<Self> {
        let s = Scene::BoxRoom { half_extents, camera };
        s.validate()?;
        Ok(s)
    }

    pub fn plane(normal: [f64; 3], offset: f64) -> Result<Self> {
        let s = Scene::Plane { normal, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Scene::SphereInterior { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return domain(format!("sphere radius must be finite and > 0, got {radius}"));
                }
            }
            Scene::BoxRoom { half_extents, camera } => {
                for axis in 0..3 {
                    let (h, p) = (half_extents[axis], camera[axis]);
                    if !(h > 0.0 && h.is_finite()) {
                        return domain(format!("box half extent {axis} must be finite and > 0, got {h}"));
                    }
                    if !(p.is_finite() && p.abs() < h) {
                        return domain(format!("camera coordinate {axis} = {p} is not strictly inside +-{h}"));
                    }
                }
            }
            Scene::Plane { normal, offset } => {
                let n = Vector3::from(normal);
                if !n.iter().all(|v| v.is_finite()) || (n.norm() - 1.0).abs() > UNIT_TOLERANCE {
                    return domain(format!("plane normal {normal:?} is not unit length"));
                }
                if !(offset > 0.0 && offset.is_finite()) {
                    return domain(format!("plane offset must be finite and > 0, got {offset}"));
                }
            }
        }
        Ok(())
    }

    /// Distance along the unit ray `dir` to the first surface and the surface
    /// normal facing the camera, or `None` when the ray escapes.
    pub fn intersect(&self, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match *self {
            Scene::SphereInterior { radius } => Some((radius, -dir)),
            Scene::BoxRoom { half_extents, camera } => {
                let mut best: Option<(f64, usize)> = None;
                for axis in 0..3 {
                    let d = dir[axis];
                    if d == 0.0 {
                        continue;
                    }
                    let wall = half_extents[axis].copysign(d);
                    let t = (wall - camera[axis]) / d;
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, axis));
                    }
                }
                best.map(|(t, axis)| {
                    let mut n = Vector3::zeros();
                    n[axis] = -dir[axis].signum();
                    (t, n)
                })
            }
            Scene::Plane { normal, offset } => {
                let m = Vector3::from(normal);
                let cos = m.dot(dir);
                (cos > 0.0).then(|| (offset / cos, -m))
            }
        }
    }

    /// Point the rays start from.
    pub fn camera(&self) -> [f64; 3] {
        match *self {
            Scene::BoxRoom { camera, .. } => camera,
            _ => [0.0; 3],
        }
    }
}

type Rendered = (Raster<f64>, Raster<bool>, Raster<[f64; 3]>);

fn render_rays(s: &Scene, w: usize, h: usize, ray: impl Fn(usize, usize) -> Vector3<f64> + Sync) -> Result<Rendered> {
    let mut depth = vec![f64::NAN; w * h];
    let mut valid = vec![false; w * h];
    let mut normals = vec![[0.0; 3]; w * h];
    depth
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .zip(normals.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, ((drow, vrow), nrow))| {
            for col in 0..w {
                if let Some((t, n)) = s.intersect(&ray(col, row)) {
                    if t.is_finite() && t > 0.0 {
                        drow[col] = t;
                        vrow[col] = true;
                        nrow[col] = [n.x, n.y, n.z];
                    }
                }
            }
        });
    Ok((
        Raster::from_vec(w, h, depth)?,
        Raster::from_vec(w, h, valid)?,
        Raster::from_vec(w, h, normals)?,
    ))
}

/// Euclidean depth and world-frame normals on the six faces.
pub fn render_scene_faces(s: &Scene, side: usize) -> Result<(DepthCube, NormalCube)> {
    s.validate()?;
    let mut depths = Vec::with_capacity(6);
    let mut normals = Vec::with_capacity(6);
    for face in FaceId::ALL {
        let cam = FaceCamera::new(face, side)?;
        let (d, v, n) = render_rays(s, side, side, |c, r| cam.world_ray(c, r).normalize())?;
        depths.push(DepthMap::from_parts_unchecked(d, v.clone(), DepthKind::Euclidean, Frame::Face(face)));
        normals.push(NormalMap::from_parts_unchecked(n, v, NormalFrame::World));
    }
    Ok((
        DepthCube::new(depths.try_into().expect("six faces"))?,
        NormalCube::new(normals.try_into().expect("six faces"))?,
    ))
}

/// Euclidean ERP depth and world-frame normals at `width x width / 2`.
pub fn render_scene_erp(s: &Scene, width: usize) -> Result<(DepthMap, NormalMap)> {
    s.validate()?;
    let grid = ErpGrid::from_width(width)?;
    let (d, v, n) = render_rays(s, grid.width(), grid.height(), |c, r| grid.pixel_center_direction(c, r).to_vector())?;
    Ok((
        DepthMap::from_parts_unchecked(d, v.clone(), DepthKind::Euclidean, Frame::Erp),
        NormalMap::from_parts_unchecked(n, v, NormalFrame::World),
    ))
}
