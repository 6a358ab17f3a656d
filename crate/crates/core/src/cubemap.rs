//! Cubemap faces, ERP <-> cubemap resampling, the face adjacency table and
//! cross-face padding.
//!
//! Every face is a 90 degree pinhole view from the cube center. Face-local
//! coordinates `(u_c, v_c)` span `[-1, 1]` with `u_c` to the right and `v_c`
//! up; raster column 0 is `u_c = -1` and raster row 0 is `v_c = +1`.
//!
//! Face poses (right, up, forward in world coordinates):
//!
//! | face | right | up | forward |
//! |------|-------|----|---------|
//! | PosX | -Z | +Y | +X |
//! | NegX | +Z | +Y | -X |
//! | PosY | +X | -Z | +Y |
//! | NegY | +X | +Z | -Y |
//! | PosZ | +X | +Y | +Z |
//! | NegZ | -X | +Y | -Z |

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::raster::{Raster, Texel};
use crate::spherical::{
    direction_from_uv_unchecked, sample_erp_unchecked, uv_from_vector_unchecked, Direction,
    ErpGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaceId {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl FaceId {
    /// Canonical order, also used for every serialized six-face stack.
    pub const ALL: [FaceId; 6] = [
        FaceId::PosX,
        FaceId::NegX,
        FaceId::PosY,
        FaceId::NegY,
        FaceId::PosZ,
        FaceId::NegZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FaceId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FaceId::PosX => "posx",
            FaceId::NegX => "negx",
            FaceId::PosY => "posy",
            FaceId::NegY => "negy",
            FaceId::PosZ => "posz",
            FaceId::NegZ => "negz",
        }
    }

    pub fn from_name(name: &str) -> Option<FaceId> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// `[right, up, forward]` of the face in world coordinates.
    pub fn basis(self) -> [Vector3<f64>; 3] {
        let x = Vector3::x();
        let y = Vector3::y();
        let z = Vector3::z();
        match self {
            FaceId::PosX => [-z, y, x],
            FaceId::NegX => [z, y, -x],
            FaceId::PosY => [x, -z, y],
            FaceId::NegY => [x, z, -y],
            FaceId::PosZ => [x, y, z],
            FaceId::NegZ => [-x, y, -z],
        }
    }

    /// Rotation taking face-local `(u_c, v_c, 1)` rays to world rays.
    pub fn rotation(self) -> Matrix3<f64> {
        let [r, u, f] = self.basis();
        Matrix3::from_columns(&[r, u, f])
    }
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pinhole model of one 90 degree face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceCamera {
    face: FaceId,
    side: usize,
    focal: f64,
    center: f64,
    rotation: Matrix3<f64>,
}

impl FaceCamera {
    pub fn new(face: FaceId, side: usize) -> Result<Self> {
        if side < 2 {
            return domain(format!("face side must be >= 2, got {side}"));
        }
        let half = side as f64 / 2.0;
        Ok(Self {
            face,
            side,
            focal: half,
            center: half,
            rotation: face.rotation(),
        })
    }

    pub fn face(&self) -> FaceId {
        self.face
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// `K` for image coordinates with rows growing downward, so the local
    /// camera `y` axis in this matrix is `-v_c`.
    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal,
            0.0,
            self.center,
            0.0,
            self.focal,
            self.center,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn pose(&self) -> Matrix3<f64> {
        self.rotation
    }

    /// Horizontal field of view in radians (always pi/2).
    pub fn fov(&self) -> f64 {
        2.0 * (self.center / self.focal).atan()
    }

    /// Face-local coordinates of the center of pixel `(col, row)`.
    #[inline]
    pub fn pixel_uv(&self, col: usize, row: usize) -> (f64, f64) {
        let u = (col as f64 + 0.5 - self.center) / self.focal;
        let v = (self.center - (row as f64 + 0.5)) / self.focal;
        (u, v)
    }

    /// Unnormalized face-local ray `(u_c, v_c, 1)` through a pixel center.
    #[inline]
    pub fn local_ray(&self, col: usize, row: usize) -> Vector3<f64> {
        let (u, v) = self.pixel_uv(col, row);
        Vector3::new(u, v, 1.0)
    }

    /// World-frame ray with unit forward component (planar depth 1).
    #[inline]
    pub fn world_ray(&self, col: usize, row: usize) -> Vector3<f64> {
        self.rotation * self.local_ray(col, row)
    }

    /// Continuous pixel coordinates `(x, y)` of a face-local point; pixel
    /// centers are at integers.
    #[inline]
    pub fn uv_to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        (
            u * self.focal + self.center - 0.5,
            self.center - v * self.focal - 0.5,
        )
    }
}

/// World direction of the ray through face-local point `(u_c, v_c)`.
pub fn face_dir_from_uv(face: FaceId, u_c: f64, v_c: f64) -> Direction {
    let [r, u, f] = face.basis();
    let d = (r * u_c + u * v_c + f).normalize();
    Direction {
        x: d.x,
        y: d.y,
        z: d.z,
    }
}

/// Face selection by largest absolute component; ties resolve in
/// [`FaceId::ALL`] order.
pub fn uv_face_from_dir(d: Direction) -> Result<(FaceId, f64, f64)> {
    let v = Vector3::new(d.x, d.y, d.z);
    if !(v.norm() > 0.0) || !v.iter().all(|c| c.is_finite()) {
        return domain("cannot project a zero or non-finite direction onto the cube");
    }
    Ok(uv_face_from_vector(&v))
}

#[inline]
pub(crate) fn face_of_vector(d: &Vector3<f64>) -> FaceId {
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    if ax >= ay && ax >= az {
        if d.x >= 0.0 {
            FaceId::PosX
        } else {
            FaceId::NegX
        }
    } else if ay >= az {
        if d.y >= 0.0 {
            FaceId::PosY
        } else {
            FaceId::NegY
        }
    } else if d.z >= 0.0 {
        FaceId::PosZ
    } else {
        FaceId::NegZ
    }
}

#[inline]
pub(crate) fn uv_face_from_vector(d: &Vector3<f64>) -> (FaceId, f64, f64) {
    let face = face_of_vector(d);
    let [r, u, f] = face.basis();
    let depth = d.dot(&f);
    let uc = (d.dot(&r) / depth).clamp(-1.0, 1.0);
    let vc = (d.dot(&u) / depth).clamp(-1.0, 1.0);
    (face, uc, vc)
}

/// Six square faces of equal side, stored in [`FaceId::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cubemap<T> {
    faces: [Raster<T>; 6],
}

impl<T> Cubemap<T> {
    pub fn new(faces: [Raster<T>; 6]) -> Result<Self> {
        let side = faces[0].width();
        if side < 2 {
            return domain(format!("cubemap faces must have side >= 2, got {side}"));
        }
        for (face, r) in FaceId::ALL.iter().zip(&faces) {
            if r.width() != side || r.height() != side {
                return domain(format!(
                    "face {face} is {}x{}, expected {side}x{side}",
                    r.width(),
                    r.height()
                ));
            }
        }
        Ok(Self { faces })
    }

    pub fn side(&self) -> usize {
        self.faces[0].width()
    }

    pub fn face(&self, id: FaceId) -> &Raster<T> {
        &self.faces[id.index()]
    }

    pub fn face_mut(&mut self, id: FaceId) -> &mut Raster<T> {
        &mut self.faces[id.index()]
    }

    pub fn faces(&self) -> &[Raster<T>; 6] {
        &self.faces
    }

    pub fn into_faces(self) -> [Raster<T>; 6] {
        self.faces
    }

    pub fn map<U>(&self, mut f: impl FnMut(FaceId, &Raster<T>) -> Raster<U>) -> Result<Cubemap<U>> {
        let faces: [Raster<U>; 6] = std::array::from_fn(|i| f(FaceId::ALL[i], &self.faces[i]));
        Cubemap::new(faces)
    }
}

impl<T: Clone> Cubemap<T> {
    pub fn filled(side: usize, value: T) -> Result<Self> {
        Cubemap::new(std::array::from_fn(|_| Raster::filled(side, side, value.clone())))
    }
}

/// Bilinear taps `(col, row, weight)` for a face-local point, clamped to the
/// face (no cross-face blending).
/// Continuous, clamped pixel position of a face-local point: base pixel and
/// fractional offsets.
#[inline]
fn face_position(side: usize, u_c: f64, v_c: f64) -> (usize, usize, f64, f64) {
    let half = side as f64 / 2.0;
    let max = (side - 1) as f64;
    let x = (u_c * half + half - 0.5).clamp(0.0, max);
    let y = (half - v_c * half - 0.5).clamp(0.0, max);
    let c0 = (x.floor() as usize).min(side - 2);
    let r0 = (y.floor() as usize).min(side - 2);
    (c0, r0, x - c0 as f64, y - r0 as f64)
}

/// The four bilinear taps `(col, row)` for a face-local point, clamped to the
/// face (no cross-face blending).
#[inline]
pub(crate) fn face_taps(side: usize, u_c: f64, v_c: f64) -> [(usize, usize); 4] {
    let (c0, r0, _, _) = face_position(side, u_c, v_c);
    [(c0, r0), (c0 + 1, r0), (c0, r0 + 1), (c0 + 1, r0 + 1)]
}

#[inline]
pub(crate) fn sample_face<T: Texel>(face: &Raster<T>, u_c: f64, v_c: f64) -> T {
    let (c0, r0, fx, fy) = face_position(face.width(), u_c, v_c);
    let top = face.at(c0, r0).lerp(face.at(c0 + 1, r0), fx);
    let bottom = face.at(c0, r0 + 1).lerp(face.at(c0 + 1, r0 + 1), fx);
    top.lerp(bottom, fy)
}

/// Resamples an ERP raster onto six `side x side` faces.
pub fn erp_to_cubemap<T: Texel>(erp: &Raster<T>, side: usize) -> Result<Cubemap<T>> {
    if erp.is_empty() {
        return domain("cannot resample an empty erp raster");
    }
    ErpGrid::new(erp.width(), erp.height())?;
    if side < 2 {
        return domain(format!("face side must be >= 2, got {side}"));
    }
    let faces: Vec<Raster<T>> = FaceId::ALL
        .par_iter()
        .map(|&face| {
            let cam = FaceCamera::new(face, side).expect("side checked above");
            let mut data = vec![T::zero(); side * side];
            data.par_chunks_mut(side).enumerate().for_each(|(row, out)| {
                for (col, px) in out.iter_mut().enumerate() {
                    let (u, v) = uv_from_vector_unchecked(&cam.world_ray(col, row));
                    *px = sample_erp_unchecked(erp, u, v);
                }
            });
            Raster::from_vec(side, side, data).expect("sized above")
        })
        .collect();
    Cubemap::new(faces.try_into().expect("six faces"))
}

/// Resamples a cubemap onto a `width x width/2` ERP raster. Each ERP pixel is
/// sampled from exactly one face.
pub fn cubemap_to_erp<T: Texel>(cm: &Cubemap<T>, width: usize) -> Result<Raster<T>> {
    let grid = ErpGrid::from_width(width)?;
    let (w, h) = (grid.width(), grid.height());
    let mut data = vec![T::zero(); w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for (col, px) in out.iter_mut().enumerate() {
            let (u, v) = grid.pixel_center_uv(col, row);
            let d = direction_from_uv_unchecked(u, v);
            let (face, uc, vc) = uv_face_from_vector(&d);
            *px = sample_face(cm.face(face), uc, vc);
        }
    });
    Raster::from_vec(w, h, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Top, Edge::Bottom, Edge::Left, Edge::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Edge::Top => "top",
            Edge::Bottom => "bottom",
            Edge::Left => "left",
            Edge::Right => "right",
        }
    }
}

/// Pixel `(col, row)` at position `i` along `edge` and `depth` pixels inward
/// from it. Positions run left to right on top/bottom edges and top to bottom
/// on left/right edges.
#[inline]
pub fn edge_pixel(edge: Edge, side: usize, i: usize, depth: usize) -> (usize, usize) {
    match edge {
        Edge::Top => (i, depth),
        Edge::Bottom => (i, side - 1 - depth),
        Edge::Left => (depth, i),
        Edge::Right => (side - 1 - depth, i),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRef {
    pub face: FaceId,
    pub edge: Edge,
}

impl fmt::Display for EdgeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.face, self.edge.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjacencyEntry {
    pub from: EdgeRef,
    pub to: EdgeRef,
    /// Position `i` on `from` meets position `side - 1 - i` on `to`.
    pub reversed: bool,
}

impl AdjacencyEntry {
    #[inline]
    pub fn map_index(&self, i: usize, side: usize) -> usize {
        if self.reversed {
            side - 1 - i
        } else {
            i
        }
    }
}

/// The 24 directed face-edge adjacencies (12 shared cube edges).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeAdjacency {
    entries: [AdjacencyEntry; 24],
}

impl EdgeAdjacency {
    pub fn entry(&self, face: FaceId, edge: Edge) -> &AdjacencyEntry {
        &self.entries[face.index() * 4 + edge.index()]
    }

    pub fn entries(&self) -> &[AdjacencyEntry; 24] {
        &self.entries
    }

    /// One entry per shared cube edge, keeping the direction whose `from`
    /// sorts first.
    pub fn undirected(&self) -> Vec<AdjacencyEntry> {
        self.entries
            .iter()
            .filter(|e| e.from < e.to)
            .copied()
            .collect()
    }

    pub fn partner(&self, e: &AdjacencyEntry) -> &AdjacencyEntry {
        self.entry(e.to.face, e.to.edge)
    }
}

const DERIVATION_SIDE: usize = 16;

/// Where the pixel one step outside `edge` at position `i` lands: neighbor
/// face and continuous pixel coordinates there.
fn continue_across(face: FaceId, edge: Edge, side: usize, i: usize) -> (FaceId, f64, f64) {
    let (col, row) = match edge {
        Edge::Top => (i as f64, -1.0),
        Edge::Bottom => (i as f64, side as f64),
        Edge::Left => (-1.0, i as f64),
        Edge::Right => (side as f64, i as f64),
    };
    let half = side as f64 / 2.0;
    let u = (col + 0.5 - half) / half;
    let v = (half - (row + 0.5)) / half;
    let d = face_dir_from_uv(face, u, v).to_vector();
    let (nf, nu, nv) = uv_face_from_vector(&d);
    let ncam = FaceCamera::new(nf, side).expect("side >= 2");
    let (x, y) = ncam.uv_to_pixel(nu, nv);
    (nf, x, y)
}

/// Derives the adjacency table by casting rays just past each face edge and
/// locating them on the neighboring face.
pub fn build_adjacency() -> EdgeAdjacency {
    let side = DERIVATION_SIDE;
    let last = (side - 1) as f64;
    let mut entries = Vec::with_capacity(24);
    for face in FaceId::ALL {
        for edge in Edge::ALL {
            let (nf, mx, my) = continue_across(face, edge, side, side / 2);
            let candidates = [
                (Edge::Top, my.abs()),
                (Edge::Bottom, (my - last).abs()),
                (Edge::Left, mx.abs()),
                (Edge::Right, (mx - last).abs()),
            ];
            let nedge = candidates
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|c| c.0)
                .expect("non-empty");
            let position = |i: usize| {
                let (f, x, y) = continue_across(face, edge, side, i);
                assert_eq!(f, nf, "edge {face}.{} spans two faces", edge.name());
                match nedge {
                    Edge::Top | Edge::Bottom => x,
                    Edge::Left | Edge::Right => y,
                }
            };
            let reversed = position(0) > position(side - 1);
            entries.push(AdjacencyEntry {
                from: EdgeRef { face, edge },
                to: EdgeRef {
                    face: nf,
                    edge: nedge,
                },
                reversed,
            });
        }
    }
    EdgeAdjacency {
        entries: entries.try_into().expect("24 entries"),
    }
}

/// Memoized [`build_adjacency`].
pub fn adjacency() -> &'static EdgeAdjacency {
    static TABLE: OnceLock<EdgeAdjacency> = OnceLock::new();
    TABLE.get_or_init(build_adjacency)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacencyCheck {
    /// Largest distance in pixels between a continued border ray and the
    /// neighbor pixel the table maps it to.
    pub max_pixel_error: f64,
    pub wrong_face: usize,
    pub involution_ok: bool,
    pub undirected_edges: usize,
}

/// Raycast verification of an adjacency table at resolution `side`.
pub fn verify_adjacency(table: &EdgeAdjacency, side: usize) -> Result<AdjacencyCheck> {
    if side < 2 {
        return domain(format!("face side must be >= 2, got {side}"));
    }
    let mut max_err = 0.0f64;
    let mut wrong_face = 0;
    for e in table.entries() {
        for i in 0..side {
            let (nf, x, y) = continue_across(e.from.face, e.from.edge, side, i);
            if nf != e.to.face {
                wrong_face += 1;
                continue;
            }
            let (col, row) = edge_pixel(e.to.edge, side, e.map_index(i, side), 0);
            let err = (x - col as f64).hypot(y - row as f64);
            max_err = max_err.max(err);
        }
    }
    let involution_ok = table.entries().iter().all(|e| {
        let p = table.partner(e);
        p.to == e.from && p.reversed == e.reversed && p.from == e.to
    });
    Ok(AdjacencyCheck {
        max_pixel_error: max_err,
        wrong_face,
        involution_ok,
        undirected_edges: table.undirected().len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Pad strips gathered from the adjacent faces.
    CrossFace,
    /// Pad strips are zero (single perspective view).
    Zero,
}

/// Pads every face by `pad` pixels on each side.
///
/// In [`PadMode::CrossFace`], pad row `k` (counted outward from the border)
/// copies the neighbor's `k`-th row or column inward from the shared edge.
/// Corner blocks replicate the nearest pixel of the top or bottom strip in the
/// same row.
pub fn cross_face_pad<T: Texel>(
    cm: &Cubemap<T>,
    pad: usize,
    mode: PadMode,
) -> Result<[Raster<T>; 6]> {
    let side = cm.side();
    if pad > side {
        return domain(format!("pad {pad} exceeds face side {side}"));
    }
    let table = adjacency();
    let padded = side + 2 * pad;
    let faces: Vec<Raster<T>> = FaceId::ALL
        .par_iter()
        .map(|&face| {
            let src = cm.face(face);
            let mut out = Raster::filled(padded, padded, T::zero());
            for row in 0..side {
                for col in 0..side {
                    out.set(col + pad, row + pad, src.at(col, row));
                }
            }
            if mode == PadMode::Zero || pad == 0 {
                return out;
            }
            for edge in Edge::ALL {
                let e = table.entry(face, edge);
                let nsrc = cm.face(e.to.face);
                for k in 0..pad {
                    for i in 0..side {
                        let (nc, nr) = edge_pixel(e.to.edge, side, e.map_index(i, side), k);
                        let (c, r) = match edge {
                            Edge::Top => (pad + i, pad - 1 - k),
                            Edge::Bottom => (pad + i, pad + side + k),
                            Edge::Left => (pad - 1 - k, pad + i),
                            Edge::Right => (pad + side + k, pad + i),
                        };
                        out.set(c, r, nsrc.at(nc, nr));
                    }
                }
            }
            let corner_rows = (0..pad).chain(pad + side..padded);
            for r in corner_rows {
                let left = out.at(pad, r);
                let right = out.at(pad + side - 1, r);
                for c in 0..pad {
                    out.set(c, r, left);
                    out.set(pad + side + c, r, right);
                }
            }
            out
        })
        .collect();
    Ok(faces.try_into().expect("six faces"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spherical::{angles_from_direction, erp_uv_from_angles};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn vclose(d: Direction, e: [f64; 3], tol: f64) -> bool {
        (d.x - e[0]).abs() <= tol && (d.y - e[1]).abs() <= tol && (d.z - e[2]).abs() <= tol
    }

    #[test]
    fn face_centers() {
        assert!(vclose(face_dir_from_uv(FaceId::PosZ, 0.0, 0.0), [0.0, 0.0, 1.0], 0.0));
        assert!(vclose(face_dir_from_uv(FaceId::PosX, 0.0, 0.0), [1.0, 0.0, 0.0], 0.0));
        let s = 1.0 / 3f64.sqrt();
        assert!(vclose(face_dir_from_uv(FaceId::PosZ, 1.0, 1.0), [s, s, s], 1e-15));
        for f in FaceId::ALL {
            let [r, u, fw] = f.basis();
            assert_eq!(r.cross(&u), fw, "{f} basis is not right-handed");
            assert!((f.rotation().determinant() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn face_selection_and_tie_break() {
        let (f, u, v) = uv_face_from_dir(Direction::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!((f, u, v), (FaceId::PosZ, 0.0, 0.0));
        let s = 1.0 / 3f64.sqrt();
        let (f, u, v) = uv_face_from_dir(Direction { x: s, y: s, z: s }).unwrap();
        assert_eq!(f, FaceId::PosX);
        assert!((u.abs() - 1.0).abs() < 1e-15 && (v.abs() - 1.0).abs() < 1e-15);
        let zero = Direction {
            x: 0.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(uv_face_from_dir(zero).is_err());
        // |y| == |z| ties go to the Y faces.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (f, _, _) = uv_face_from_dir(Direction { x: 0.0, y: -h, z: h }).unwrap();
        assert_eq!(f, FaceId::NegY);
    }

    #[test]
    fn gnomonic_round_trip() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for n in 0..10_000 {
            let face = FaceId::ALL[n % 6];
            let u = rng.random_range(-0.999..0.999);
            let v = rng.random_range(-0.999..0.999);
            let (f, u2, v2) = uv_face_from_dir(face_dir_from_uv(face, u, v)).unwrap();
            assert_eq!(f, face);
            worst = worst.max((u - u2).abs()).max((v - v2).abs());
        }
        assert!(worst < 1e-10, "worst {worst}");
    }

    #[test]
    fn camera_model() {
        let cam = FaceCamera::new(FaceId::PosZ, 504).unwrap();
        assert!((cam.fov() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let k = cam.intrinsics();
        assert_eq!((k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]), (252.0, 252.0, 252.0, 252.0));
        assert!(FaceCamera::new(FaceId::PosZ, 1).is_err());
        let cam = FaceCamera::new(FaceId::NegX, 4).unwrap();
        assert_eq!(cam.pixel_uv(0, 0), (-0.75, 0.75));
        let (x, y) = cam.uv_to_pixel(-0.75, 0.75);
        assert_eq!((x, y), (0.0, 0.0));
    }

    #[test]
    fn constant_resampling() {
        let erp = Raster::filled(64, 32, 3.5);
        let cm = erp_to_cubemap(&erp, 16).unwrap();
        for f in cm.faces() {
            assert!(f.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
        }
        let back = cubemap_to_erp(&cm, 32).unwrap();
        assert_eq!(back.shape(), (32, 16));
        assert!(back.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn resampling_input_validation() {
        let erp: Raster<f64> = Raster::filled(0, 0, 0.0);
        assert!(erp_to_cubemap(&erp, 8).is_err());
        let erp = Raster::filled(10, 4, 0.0);
        assert!(erp_to_cubemap(&erp, 8).is_err());
        let cm = Cubemap::filled(4, 1.0).unwrap();
        assert!(cubemap_to_erp(&cm, 31).is_err());
    }

    #[test]
    fn linear_field_to_faces() {
        let a = Vector3::new(0.3, -0.5, 0.8);
        let grid = ErpGrid::new(1024, 512).unwrap();
        let erp = Raster::from_fn(1024, 512, |c, r| {
            a.dot(&grid.pixel_center_direction(c, r).to_vector())
        });
        let cm = erp_to_cubemap(&erp, 256).unwrap();
        let mut worst = 0.0f64;
        for face in FaceId::ALL {
            let cam = FaceCamera::new(face, 256).unwrap();
            for row in 0..256 {
                for col in 0..256 {
                    let d = cam.world_ray(col, row).normalize();
                    worst = worst.max((cm.face(face).at(col, row) - a.dot(&d)).abs());
                }
            }
        }
        assert!(worst < 5e-3, "worst {worst}");
    }

    #[test]
    fn training_face_size() {
        let erp = Raster::filled(2016, 1008, 1.0);
        let cm = erp_to_cubemap(&erp, 504).unwrap();
        assert_eq!(cm.side(), 504);
    }

    #[test]
    fn face_id_erp_is_voronoi_partition() {
        let cm = Cubemap::new(std::array::from_fn(|i| Raster::filled(8, 8, i as f64))).unwrap();
        let erp = cubemap_to_erp(&cm, 128).unwrap();
        let grid = ErpGrid::from_width(128).unwrap();
        for row in 0..64 {
            for col in 0..128 {
                let d = grid.pixel_center_direction(col, row);
                let (f, _, _) = uv_face_from_dir(d).unwrap();
                assert_eq!(erp.at(col, row), f.index() as f64);
            }
        }
    }

    #[test]
    fn adjacency_table_shape() {
        let t = build_adjacency();
        assert_eq!(t.entries().len(), 24);
        assert_eq!(t.undirected().len(), 12);
        for e in t.entries() {
            let p = t.partner(e);
            assert_eq!(p.to, e.from);
            assert_eq!(p.reversed, e.reversed);
            assert_ne!(e.to.face, e.from.face);
        }
        // Front face: top neighbor is PosY's bottom edge, same orientation.
        let e = t.entry(FaceId::PosZ, Edge::Top);
        assert_eq!(e.to, EdgeRef { face: FaceId::PosY, edge: Edge::Bottom });
        assert!(!e.reversed);
        let e = t.entry(FaceId::PosZ, Edge::Right);
        assert_eq!(e.to, EdgeRef { face: FaceId::PosX, edge: Edge::Left });
        assert!(std::ptr::eq(adjacency(), adjacency()));
    }

    #[test]
    fn adjacency_raycast_check() {
        for side in [2, 3, 8, 64] {
            let c = verify_adjacency(adjacency(), side).unwrap();
            assert_eq!(c.wrong_face, 0);
            assert!(c.involution_ok);
            assert!(c.max_pixel_error <= 0.75, "side {side}: {}", c.max_pixel_error);
        }
    }

    #[test]
    fn pad_zero_width_is_identity() {
        let mut rng = StdRng::seed_from_u64(5);
        let cm = Cubemap::new(std::array::from_fn(|_| {
            Raster::from_fn(6, 6, |_, _| rng.random::<f64>())
        }))
        .unwrap();
        let p = cross_face_pad(&cm, 0, PadMode::CrossFace).unwrap();
        for f in FaceId::ALL {
            assert_eq!(&p[f.index()], cm.face(f));
        }
        assert!(cross_face_pad(&cm, 7, PadMode::CrossFace).is_err());
    }

    #[test]
    fn pad_constant() {
        let cm = Cubemap::filled(5, 2.0).unwrap();
        for f in cross_face_pad(&cm, 3, PadMode::CrossFace).unwrap() {
            assert!(f.data().iter().all(|&v| v == 2.0));
            assert_eq!(f.shape(), (11, 11));
        }
    }

    #[test]
    fn pad_strips_carry_neighbor_ids() {
        let side = 6;
        let cm =
            Cubemap::new(std::array::from_fn(|i| Raster::filled(side, side, i as f64))).unwrap();
        let padded = cross_face_pad(&cm, 1, PadMode::CrossFace).unwrap();
        for face in FaceId::ALL {
            let p = &padded[face.index()];
            for edge in Edge::ALL {
                let want = adjacency().entry(face, edge).to.face.index() as f64;
                for i in 0..side {
                    let (c, r) = match edge {
                        Edge::Top => (1 + i, 0),
                        Edge::Bottom => (1 + i, side + 1),
                        Edge::Left => (0, 1 + i),
                        Edge::Right => (side + 1, 1 + i),
                    };
                    assert_eq!(p.at(c, r), want, "{face}.{}", edge.name());
                }
            }
        }
    }

    #[test]
    fn pad_follows_sphere_geometry() {
        // A smooth field padded across faces should continue smoothly: the
        // pad value matches the field at the padded pixel's own direction.
        let a = Vector3::new(0.2, 0.9, -0.4);
        let side = 64;
        let cm = Cubemap::new(std::array::from_fn(|i| {
            let cam = FaceCamera::new(FaceId::ALL[i], side).unwrap();
            Raster::from_fn(side, side, |c, r| a.dot(&cam.world_ray(c, r).normalize()))
        }))
        .unwrap();
        let pad = 2;
        let padded = cross_face_pad(&cm, pad, PadMode::CrossFace).unwrap();
        let half = side as f64 / 2.0;
        for face in FaceId::ALL {
            let p = &padded[face.index()];
            for i in 0..side {
                for k in 0..pad {
                    let (col, row) = (pad + i, pad - 1 - k);
                    let u = (col as f64 - pad as f64 + 0.5 - half) / half;
                    let v = (half - (row as f64 - pad as f64 + 0.5)) / half;
                    let d = face_dir_from_uv(face, u, v).to_vector();
                    // ~1.5 px misalignment worst case at depth 2 near corners
                    assert!((p.at(col, row) - a.dot(&d)).abs() < 0.1);
                }
            }
        }
    }

    #[test]
    fn erp_uv_chart_agrees_with_face_rays() {
        let cam = FaceCamera::new(FaceId::PosZ, 4).unwrap();
        let d = Direction::normalize(cam.world_ray(2, 2)).unwrap();
        let (u, v) = erp_uv_from_angles(angles_from_direction(d).unwrap()).unwrap();
        let (u2, v2) = uv_from_vector_unchecked(&cam.world_ray(2, 2));
        assert!((u - u2).abs() < 1e-15 && (v - v2).abs() < 1e-15);
    }
}
