//! Depth representations, normals from depth, point clouds and sky masking.

use std::fmt;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::cubemap::{face_taps, sample_face, uv_face_from_vector, FaceCamera, FaceId};
use crate::error::{domain, Error, Result};
use crate::raster::Raster;
use crate::spherical::{direction_from_uv_unchecked, ErpGrid};

/// Default probability above which a pixel counts as sky.
pub const DEFAULT_SKY_THRESHOLD: f64 = 0.5;

/// Unit-norm tolerance for valid normals.
pub const NORMAL_UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepthKind {
    /// Distance along the face optical axis, meters.
    PlanarLinear,
    /// Natural log of planar depth.
    PlanarLog,
    /// Length of the full ray, meters.
    Euclidean,
}

impl DepthKind {
    pub fn name(self) -> &'static str {
        match self {
            DepthKind::PlanarLinear => "planar_linear",
            DepthKind::PlanarLog => "planar_log",
            DepthKind::Euclidean => "euclidean",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "planar_linear" => Some(DepthKind::PlanarLinear),
            "planar_log" => Some(DepthKind::PlanarLog),
            "euclidean" => Some(DepthKind::Euclidean),
            _ => None,
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, DepthKind::PlanarLog)
    }
}

impl fmt::Display for DepthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    Face(FaceId),
    Erp,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Face(f) => f.name(),
            Frame::Erp => "erp",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        if s == "erp" {
            Some(Frame::Erp)
        } else {
            FaceId::from_name(s).map(Frame::Face)
        }
    }
}

fn value_ok(kind: DepthKind, v: f64) -> bool {
    match kind {
        DepthKind::PlanarLog => v.is_finite(),
        _ => v.is_finite() && v > 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    data: Raster<f64>,
    valid: Raster<bool>,
    kind: DepthKind,
    frame: Frame,
}

impl DepthMap {
    pub fn new(data: Raster<f64>, valid: Raster<bool>, kind: DepthKind, frame: Frame) -> Result<Self> {
        if !data.same_shape(&valid) {
            return domain("depth and validity rasters differ in shape");
        }
        if let Some(bad) = data
            .data()
            .iter()
            .zip(valid.data())
            .find(|(v, ok)| **ok && !value_ok(kind, **v))
        {
            return domain(format!("valid {kind} depth has illegal value {}", bad.0));
        }
        Ok(Self {
            data,
            valid,
            kind,
            frame,
        })
    }

    /// Validity inferred from the values: finite, and positive for linear
    /// kinds.
    pub fn from_values(data: Raster<f64>, kind: DepthKind, frame: Frame) -> Self {
        let valid = data.map(|&v| value_ok(kind, v));
        Self {
            data,
            valid,
            kind,
            frame,
        }
    }

    pub fn data(&self) -> &Raster<f64> {
        &self.data
    }

    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }

    pub fn kind(&self) -> DepthKind {
        self.kind
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }

    #[inline]
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.valid.at(col, row)
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data.at(col, row)
    }

    /// Replaces invalid values by NaN, the in-band sentinel used by PFM files.
    pub fn to_nan_filled(&self) -> Raster<f64> {
        let mut out = self.data.clone();
        for (v, ok) in out.data_mut().iter_mut().zip(self.valid.data()) {
            if !ok {
                *v = f64::NAN;
            }
        }
        out
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub(crate) fn from_parts_unchecked(
        data: Raster<f64>,
        valid: Raster<bool>,
        kind: DepthKind,
        frame: Frame,
    ) -> Self {
        Self {
            data,
            valid,
            kind,
            frame,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalFrame {
    Local(FaceId),
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    data: Raster<[f64; 3]>,
    valid: Raster<bool>,
    frame: NormalFrame,
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl NormalMap {
    /// Requires unit vectors (within [`NORMAL_UNIT_TOLERANCE`]) where valid.
    pub fn new(data: Raster<[f64; 3]>, valid: Raster<bool>, frame: NormalFrame) -> Result<Self> {
        let n = Self::from_raw(data, valid, frame)?;
        n.check_unit(NORMAL_UNIT_TOLERANCE)?;
        Ok(n)
    }

    /// Accepts arbitrary vectors, e.g. raw network outputs awaiting
    /// renormalization.
    pub fn from_raw(data: Raster<[f64; 3]>, valid: Raster<bool>, frame: NormalFrame) -> Result<Self> {
        if !data.same_shape(&valid) {
            return domain("normal and validity rasters differ in shape");
        }
        Ok(Self { data, valid, frame })
    }

    pub fn check_unit(&self, tol: f64) -> Result<()> {
        for (v, ok) in self.data.data().iter().zip(self.valid.data()) {
            if *ok && (norm3(*v) - 1.0).abs() > tol {
                return domain(format!("normal {v:?} is not unit length (tolerance {tol})"));
            }
        }
        Ok(())
    }

    /// Unit-normalizes every valid vector; zero or non-finite vectors become
    /// invalid.
    pub fn renormalized(&self) -> NormalMap {
        let mut data = self.data.clone();
        let mut valid = self.valid.clone();
        for (v, ok) in data.data_mut().iter_mut().zip(valid.data_mut()) {
            if !*ok {
                continue;
            }
            let n = norm3(*v);
            if n > 0.0 && n.is_finite() {
                *v = [v[0] / n, v[1] / n, v[2] / n];
            } else {
                *ok = false;
            }
        }
        NormalMap {
            data,
            valid,
            frame: self.frame,
        }
    }

    pub fn data(&self) -> &Raster<[f64; 3]> {
        &self.data
    }

    pub fn valid(&self) -> &Raster<bool> {
        &self.valid
    }

    pub fn frame(&self) -> NormalFrame {
        self.frame
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }

    #[inline]
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.valid.at(col, row)
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> [f64; 3] {
        self.data.at(col, row)
    }

    pub(crate) fn from_parts_unchecked(
        data: Raster<[f64; 3]>,
        valid: Raster<bool>,
        frame: NormalFrame,
    ) -> Self {
        Self { data, valid, frame }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: PointCloud) {
        match (&mut self.colors, other.colors) {
            (Some(a), Some(b)) => a.extend(b),
            (None, None) => {}
            _ => self.colors = None,
        }
        self.points.extend(other.points);
    }
}

/// Per-pixel sky probabilities with a decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyMask {
    prob: Raster<f64>,
    threshold: f64,
}

impl SkyMask {
    pub fn new(prob: Raster<f64>, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return domain(format!("sky threshold {threshold} outside (0, 1)"));
        }
        if let Some(p) = prob.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return domain(format!("sky probability {p} outside [0, 1]"));
        }
        Ok(Self { prob, threshold })
    }

    pub fn prob(&self) -> &Raster<f64> {
        &self.prob
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[inline]
    pub fn is_sky(&self, col: usize, row: usize) -> bool {
        self.prob.at(col, row) > self.threshold
    }
}

fn camera_for(d: &DepthMap, cam: Option<&FaceCamera>) -> Result<FaceCamera> {
    let cam = match cam {
        Some(c) => *c,
        None => match d.frame {
            Frame::Face(f) => FaceCamera::new(f, d.width())?,
            Frame::Erp => return domain("planar depth requires a face camera, got an erp map"),
        },
    };
    if d.width() != cam.side() || d.height() != cam.side() {
        return domain(format!(
            "depth map is {}x{}, camera face side is {}",
            d.width(),
            d.height(),
            cam.side()
        ));
    }
    Ok(cam)
}

/// Converts between depth kinds. Planar <-> Euclidean uses the per-pixel ray
/// scale `|(u_c, v_c, 1)|`; `cam` defaults to the map's face frame. Invalid
/// pixels are carried over unchanged.
pub fn convert_depth(d: &DepthMap, to: DepthKind, cam: Option<&FaceCamera>) -> Result<DepthMap> {
    use DepthKind::*;
    if d.kind == to {
        return Ok(d.clone());
    }
    for (v, ok) in d.data.data().iter().zip(d.valid.data()) {
        if *ok && !value_ok(d.kind, *v) {
            return domain(format!("valid {} depth has illegal value {v}", d.kind));
        }
    }
    let needs_cam = matches!((d.kind, to), (Euclidean, _) | (_, Euclidean));
    let cam = if needs_cam { Some(camera_for(d, cam)?) } else { None };
    let ray_scale = |col: usize, row: usize| cam.expect("camera resolved").local_ray(col, row).norm();

    let w = d.width();
    let mut out = d.data.clone();
    for (i, (v, ok)) in out.data_mut().iter_mut().zip(d.valid.data()).enumerate() {
        if !ok {
            continue;
        }
        let (col, row) = (i % w, i / w);
        *v = match (d.kind, to) {
            (PlanarLog, PlanarLinear) => v.exp(),
            (PlanarLinear, PlanarLog) => v.ln(),
            (PlanarLinear, Euclidean) => *v * ray_scale(col, row),
            (PlanarLog, Euclidean) => v.exp() * ray_scale(col, row),
            (Euclidean, PlanarLinear) => *v / ray_scale(col, row),
            (Euclidean, PlanarLog) => (*v / ray_scale(col, row)).ln(),
            _ => unreachable!("same-kind handled above"),
        };
    }
    Ok(DepthMap {
        data: out,
        valid: d.valid.clone(),
        kind: to,
        frame: d.frame,
    })
}

/// Lifts valid pixels of a face depth map to world-frame points
/// `pose * (Z * (u_c, v_c, 1))`. Non-planar kinds are converted first.
pub fn depth_to_points(d: &DepthMap, cam: &FaceCamera) -> Result<PointCloud> {
    let planar = convert_depth(d, DepthKind::PlanarLinear, Some(cam))?;
    let mut points = Vec::with_capacity(planar.valid_count());
    for row in 0..planar.height() {
        for col in 0..planar.width() {
            if planar.is_valid(col, row) {
                let p = cam.world_ray(col, row) * planar.at(col, row);
                points.push([p.x, p.y, p.z]);
            }
        }
    }
    Ok(PointCloud {
        points,
        colors: None,
    })
}

/// Lifts an ERP Euclidean depth map to points along the pixel-center rays.
pub fn erp_depth_to_points(d: &DepthMap) -> Result<PointCloud> {
    if d.kind != DepthKind::Euclidean {
        return domain(format!("erp point lifting needs euclidean depth, got {}", d.kind));
    }
    let grid = ErpGrid::new(d.width(), d.height())?;
    let mut points = Vec::with_capacity(d.valid_count());
    for row in 0..d.height() {
        for col in 0..d.width() {
            if d.is_valid(col, row) {
                let r = d.at(col, row);
                let dir = grid.pixel_center_direction(col, row);
                points.push([dir.x * r, dir.y * r, dir.z * r]);
            }
        }
    }
    Ok(PointCloud {
        points,
        colors: None,
    })
}

/// Tangent along one raster axis at index `i` of `n`: central difference in
/// the interior, second-order one-sided stencil at the borders. Returns the
/// stencil as `(index, weight)` pairs.
#[inline]
fn stencil(i: usize, n: usize) -> [(usize, f64); 3] {
    if i == 0 {
        [(0, -3.0), (1, 4.0), (2, -1.0)]
    } else if i == n - 1 {
        [(n - 1, 3.0), (n - 2, -4.0), (n - 3, 1.0)]
    } else {
        [(i + 1, 1.0), (i - 1, -1.0), (i, 0.0)]
    }
}

/// Surface normals of a face depth map in the world frame, oriented toward
/// the camera (`n . ray < 0`). A pixel is invalid when any stencil tap is.
pub fn depth_to_normals(d: &DepthMap, cam: &FaceCamera) -> Result<NormalMap> {
    let planar = convert_depth(d, DepthKind::PlanarLinear, Some(cam))?;
    let side = cam.side();
    if side < 3 {
        return domain(format!("normals need a face side >= 3, got {side}"));
    }
    let points: Vec<Vector3<f64>> = (0..side * side)
        .map(|i| {
            let (col, row) = (i % side, i / side);
            cam.world_ray(col, row) * planar.at(col, row)
        })
        .collect();
    let valid = planar.valid();

    let mut data = vec![[0.0; 3]; side * side];
    let mut mask = vec![false; side * side];
    data.par_chunks_mut(side)
        .zip(mask.par_chunks_mut(side))
        .enumerate()
        .for_each(|(row, (drow, mrow))| {
            for col in 0..side {
                if !valid.at(col, row) {
                    continue;
                }
                let sx = stencil(col, side);
                let sy = stencil(row, side);
                let taps_ok = sx.iter().all(|&(c, _)| valid.at(c, row))
                    && sy.iter().all(|&(r, _)| valid.at(col, r));
                if !taps_ok {
                    continue;
                }
                let tx: Vector3<f64> = sx
                    .iter()
                    .map(|&(c, w)| points[row * side + c] * w)
                    .sum();
                let ty: Vector3<f64> = sy
                    .iter()
                    .map(|&(r, w)| points[r * side + col] * w)
                    .sum();
                let n = tx.cross(&ty);
                let len = n.norm();
                if !(len > 0.0) || !len.is_finite() {
                    continue;
                }
                let mut n = n / len;
                if n.dot(&cam.world_ray(col, row)) > 0.0 {
                    n = -n;
                }
                drow[col] = [n.x, n.y, n.z];
                mrow[col] = true;
            }
        });
    Ok(NormalMap {
        data: Raster::from_vec(side, side, data)?,
        valid: Raster::from_vec(side, side, mask)?,
        frame: NormalFrame::World,
    })
}

/// Invalidates sky pixels (probability above the mask threshold) in depth and,
/// when given, normals.
pub fn apply_sky_mask(
    d: &DepthMap,
    n: Option<&NormalMap>,
    m: &SkyMask,
) -> Result<(DepthMap, Option<NormalMap>)> {
    if !d.data.same_shape(&m.prob) {
        return domain("sky mask and depth map differ in shape");
    }
    if let Some(n) = n {
        if !n.data.same_shape(&m.prob) {
            return domain("sky mask and normal map differ in shape");
        }
    }
    let sky: Vec<bool> = m.prob.data().iter().map(|p| *p > m.threshold).collect();
    let mut depth = d.clone();
    for (ok, s) in depth.valid.data_mut().iter_mut().zip(&sky) {
        *ok &= !s;
    }
    let normals = n.map(|n| {
        let mut n = n.clone();
        for (ok, s) in n.valid.data_mut().iter_mut().zip(&sky) {
            *ok &= !s;
        }
        n
    });
    Ok((depth, normals))
}

/// Six per-face depth maps of one kind and resolution, in [`FaceId::ALL`]
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCube {
    faces: [DepthMap; 6],
}

impl DepthCube {
    pub fn new(faces: [DepthMap; 6]) -> Result<Self> {
        let side = faces[0].width();
        let kind = faces[0].kind;
        if side < 2 {
            return domain(format!("cube faces must have side >= 2, got {side}"));
        }
        for (id, f) in FaceId::ALL.iter().zip(&faces) {
            if f.shape() != (side, side) {
                return domain(format!(
                    "face {id} is {}x{}, expected {side}x{side}",
                    f.width(),
                    f.height()
                ));
            }
            if f.kind != kind {
                return domain(format!("face {id} is {}, expected {kind}", f.kind));
            }
        }
        let mut faces = faces;
        for (id, f) in FaceId::ALL.iter().zip(faces.iter_mut()) {
            f.frame = Frame::Face(*id);
        }
        Ok(Self { faces })
    }

    pub fn side(&self) -> usize {
        self.faces[0].width()
    }

    pub fn kind(&self) -> DepthKind {
        self.faces[0].kind
    }

    pub fn face(&self, id: FaceId) -> &DepthMap {
        &self.faces[id.index()]
    }

    pub fn faces(&self) -> &[DepthMap; 6] {
        &self.faces
    }

    pub fn into_faces(self) -> [DepthMap; 6] {
        self.faces
    }

    pub fn camera(&self, id: FaceId) -> FaceCamera {
        FaceCamera::new(id, self.side()).expect("side validated")
    }

    pub fn to_kind(&self, kind: DepthKind) -> Result<DepthCube> {
        let faces: Vec<DepthMap> = FaceId::ALL
            .iter()
            .map(|&id| convert_depth(self.face(id), kind, Some(&self.camera(id))))
            .collect::<Result<_>>()?;
        DepthCube::new(faces.try_into().expect("six faces"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalCube {
    faces: [NormalMap; 6],
}

impl NormalCube {
    pub fn new(faces: [NormalMap; 6]) -> Result<Self> {
        let side = faces[0].shape().0;
        if side < 2 {
            return domain(format!("cube faces must have side >= 2, got {side}"));
        }
        if let Some((id, f)) = FaceId::ALL
            .iter()
            .zip(&faces)
            .find(|(_, f)| f.shape() != (side, side))
        {
            return domain(format!("face {id} has shape {:?}, expected {side}x{side}", f.shape()));
        }
        Ok(Self { faces })
    }

    pub fn side(&self) -> usize {
        self.faces[0].shape().0
    }

    pub fn face(&self, id: FaceId) -> &NormalMap {
        &self.faces[id.index()]
    }

    pub fn faces(&self) -> &[NormalMap; 6] {
        &self.faces
    }
}

/// Resamples Euclidean face depths to an ERP depth map. An output pixel is
/// valid only when all four bilinear taps are valid.
pub fn faces_to_erp_depth(cube: &DepthCube, width: usize) -> Result<DepthMap> {
    if cube.kind() != DepthKind::Euclidean {
        return Err(Error::Domain(format!(
            "erp assembly needs euclidean faces, got {}",
            cube.kind()
        )));
    }
    let grid = ErpGrid::from_width(width)?;
    let (w, h) = (grid.width(), grid.height());
    let side = cube.side();
    let mut data = vec![f64::NAN; w * h];
    let mut valid = vec![false; w * h];
    data.par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (drow, vrow))| {
            for col in 0..w {
                let (u, v) = grid.pixel_center_uv(col, row);
                let dir = direction_from_uv_unchecked(u, v);
                let (face, uc, vc) = uv_face_from_vector(&dir);
                let f = cube.face(face);
                if face_taps(side, uc, vc)
                    .iter()
                    .all(|&(c, r)| f.is_valid(c, r))
                {
                    drow[col] = sample_face(f.data(), uc, vc);
                    vrow[col] = true;
                }
            }
        });
    Ok(DepthMap {
        data: Raster::from_vec(w, h, data)?,
        valid: Raster::from_vec(w, h, valid)?,
        kind: DepthKind::Euclidean,
        frame: Frame::Erp,
    })
}
