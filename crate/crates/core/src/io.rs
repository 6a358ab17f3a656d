//! File formats: PFM float maps, 16-bit PNG depth, PLY point clouds, key-value
//! sidecars and six-face cubemap stacks.
//!
//! Invalid pixels are stored as NaN in PFM files and as raw 0 in png16 files.
//! PFM rows are stored bottom to top on disk, as the format requires; in
//! memory every raster is top to bottom.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};

use crate::cubemap::FaceId;
use crate::error::{domain, Error, Result};
use crate::geometry::{DepthCube, DepthKind, DepthMap, Frame, NormalCube, NormalFrame, NormalMap, PointCloud};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Decoded PFM payload, rows top to bottom, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    /// 1 for `Pf`, 3 for `PF`.
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn from_raster(r: &Raster<f64>) -> Self {
        Self {
            width: r.width(),
            height: r.height(),
            channels: 1,
            data: r.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_raster3(r: &Raster<[f64; 3]>) -> Self {
        Self {
            width: r.width(),
            height: r.height(),
            channels: 3,
            data: r.data().iter().flat_map(|v| v.map(|x| x as f32)).collect(),
        }
    }

    pub fn to_raster(&self) -> Result<Raster<f64>> {
        if self.channels != 1 {
            return Err(Error::Format(format!("expected a 1-channel PFM, got {} channels", self.channels)));
        }
        Raster::from_vec(self.width, self.height, self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn to_raster3(&self) -> Result<Raster<[f64; 3]>> {
        if self.channels != 3 {
            return Err(Error::Format(format!("expected a 3-channel PFM, got {} channels", self.channels)));
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect();
        Raster::from_vec(self.width, self.height, data)
    }
}

/// Whitespace-separated header tokens with their byte offsets.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                msg: format!("missing {what}"),
            });
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Parse {
            offset: start,
            msg: format!("{what} is not ASCII"),
        })?;
        Ok((start, tok))
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let (off, magic) = cur.token("magic")?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::Parse {
                offset: off,
                msg: format!("bad magic {other:?}, expected \"Pf\" or \"PF\""),
            })
        }
    };
    let mut dim = |what: &str| -> Result<usize> {
        let (off, tok) = cur.token(what)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Parse {
                offset: off,
                msg: format!("{what} {tok:?} is not a positive integer"),
            }),
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (off, tok) = cur.token("scale")?;
    let scale: f64 = tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::Parse {
            offset: off,
            msg: format!("scale {tok:?} is not a finite non-zero number"),
        })?;
    let endian = if scale < 0.0 { Endian::Little } else { Endian::Big };
    // Exactly one whitespace byte separates the header from the payload.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::Parse {
            offset: cur.pos,
            msg: "missing newline after scale".into(),
        });
    }
    let payload = cur.pos + 1;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Parse {
            offset: off,
            msg: "dimensions overflow".into(),
        })?;
    let expected = count * 4;
    let actual = bytes.len() - payload;
    if actual != expected {
        let what = if actual < expected { "truncated" } else { "oversized" };
        return Err(Error::Parse {
            offset: payload,
            msg: format!("{what} payload: expected {expected} bytes, found {actual}"),
        });
    }
    let mut data = vec![0f32; count];
    let row_len = width * channels;
    for (file_row, chunk) in bytes[payload..].chunks_exact(row_len * 4).enumerate() {
        let row = height - 1 - file_row;
        for (k, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[row * row_len + k] = match endian {
                Endian::Little => f32::from_le_bytes(raw),
                Endian::Big => f32::from_be_bytes(raw),
            };
        }
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode_pfm(p: &Pfm, endian: Endian) -> Result<Vec<u8>> {
    if p.channels != 1 && p.channels != 3 {
        return domain(format!("PFM supports 1 or 3 channels, got {}", p.channels));
    }
    if p.data.len() != p.width * p.height * p.channels || p.width == 0 || p.height == 0 {
        return domain("PFM data length does not match its dimensions");
    }
    let magic = if p.channels == 1 { "Pf" } else { "PF" };
    let scale = if endian == Endian::Little { "-1.0" } else { "1.0" };
    let mut out = format!("{magic}\n{} {}\n{scale}\n", p.width, p.height).into_bytes();
    out.reserve(p.data.len() * 4);
    let row_len = p.width * p.channels;
    for row in (0..p.height).rev() {
        for v in &p.data[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&match endian {
                Endian::Little => v.to_le_bytes(),
                Endian::Big => v.to_be_bytes(),
            });
        }
    }
    Ok(out)
}

/// Attaches the path to an I/O error.
fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    decode_pfm(&fs::read(path).map_err(with_path(path))?).map_err(|e| match e {
        Error::Parse { offset, msg } => Error::Parse {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

/// Writes little-endian PFM.
pub fn write_pfm(path: &Path, p: &Pfm) -> Result<()> {
    fs::write(path, encode_pfm(p, Endian::Little)?).map_err(with_path(path))?;
    Ok(())
}

/// Metric depth from 16-bit PNG values: `depth = raw * scale`, raw 0 invalid.
pub fn read_png16(path: &Path, scale: f64, kind: DepthKind, frame: Frame) -> Result<DepthMap> {
    check_scale(scale)?;
    if !kind.is_linear() {
        return domain("png16 stores linear depth only");
    }
    let img = image::open(path)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::Format(format!(
            "{}: expected 16-bit grayscale PNG, got {:?}",
            path.display(),
            img.color()
        )));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let data = Raster::from_vec(w, h, raw.iter().map(|&r| r as f64 * scale).collect())?;
    let valid = Raster::from_vec(w, h, raw.iter().map(|&r| r != 0).collect())?;
    DepthMap::new(data, valid, kind, frame)
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return domain(format!("png16 scale must be finite and > 0, got {scale}"));
    }
    Ok(())
}

/// Quantizes to `round(depth / scale)`. Depths that would saturate or
/// collapse onto the invalid sentinel are rejected.
pub fn write_png16(path: &Path, d: &DepthMap, scale: f64) -> Result<()> {
    check_scale(scale)?;
    if !d.kind().is_linear() {
        return domain("png16 stores linear depth only");
    }
    let mut raw = Vec::with_capacity(d.data().len());
    for row in 0..d.height() {
        for col in 0..d.width() {
            if !d.is_valid(col, row) {
                raw.push(0u16);
                continue;
            }
            let v = d.at(col, row);
            let q = (v / scale).round();
            if q > u16::MAX as f64 {
                return domain(format!(
                    "depth {v} at ({col}, {row}) saturates png16 at scale {scale} (max {})",
                    u16::MAX as f64 * scale
                ));
            }
            if q < 1.0 {
                return domain(format!("depth {v} at ({col}, {row}) quantizes to the invalid value 0 at scale {scale}"));
            }
            raw.push(q as u16);
        }
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(d.width() as u32, d.height() as u32, raw)
        .ok_or_else(|| Error::Format("png16 buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLe,
}

impl PlyEncoding {
    pub fn name(self) -> &'static str {
        match self {
            PlyEncoding::Ascii => "ascii",
            PlyEncoding::BinaryLe => "binary_little_endian",
        }
    }
}

pub fn encode_ply(pc: &PointCloud, encoding: PlyEncoding) -> Result<Vec<u8>> {
    if let Some(c) = &pc.colors {
        if c.len() != pc.points.len() {
            return domain(format!("{} colors for {} points", c.len(), pc.points.len()));
        }
    }
    if let Some(i) = pc.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return domain(format!("point {i} is not finite"));
    }
    let mut header = String::new();
    let _ = writeln!(header, "ply\nformat {} 1.0", encoding.name());
    let _ = writeln!(header, "element vertex {}", pc.points.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if pc.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for (i, p) in pc.points.iter().enumerate() {
        let f = p.map(|v| v as f32);
        let color = pc.colors.as_ref().map(|c| c[i]);
        match encoding {
            PlyEncoding::Ascii => {
                let mut line = format!("{} {} {}", f[0], f[1], f[2]);
                if let Some(c) = color {
                    let _ = write!(line, " {} {} {}", c[0], c[1], c[2]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyEncoding::BinaryLe => {
                for v in f {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = color {
                    out.extend_from_slice(&c);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_ply(pc: &PointCloud, path: &Path, encoding: PlyEncoding) -> Result<()> {
    let bytes = encode_ply(pc, encoding)?;
    let mut f = BufWriter::new(fs::File::create(path).map_err(with_path(path))?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Ordered `key = value` document. Unknown keys are kept in place.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SidecarMeta {
    entries: Vec<(String, String)>,
}

impl SidecarMeta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Self::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim();
            if !body.is_empty() && !body.starts_with('#') {
                let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                    offset,
                    msg: format!("expected `key = value`, got {body:?}"),
                })?;
                let k = k.trim();
                if k.is_empty() {
                    return Err(Error::Parse {
                        offset,
                        msg: "empty key".into(),
                    });
                }
                meta.set(k, v.trim());
            }
            offset += line.len();
        }
        Ok(meta)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Replaces an existing value in place or appends a new key.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(with_path(path))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(with_path(path))?;
        Ok(())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("sidecar lacks required key {key:?}")))
    }

    pub fn depth_kind(&self) -> Result<DepthKind> {
        let v = self.require("kind")?;
        DepthKind::from_name(v).ok_or_else(|| Error::Format(format!("unknown depth kind {v:?}")))
    }

    pub fn frame(&self) -> Result<Frame> {
        let v = self.require("frame")?;
        Frame::from_name(v).ok_or_else(|| Error::Format(format!("unknown frame {v:?}")))
    }

    pub fn normal_frame(&self) -> Result<NormalFrame> {
        match self.require("normal_frame")? {
            "world" => Ok(NormalFrame::World),
            v => FaceId::from_name(v)
                .map(NormalFrame::Local)
                .ok_or_else(|| Error::Format(format!("unknown normal frame {v:?}"))),
        }
    }
}

impl std::fmt::Display for SidecarMeta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

fn normal_frame_name(frame: NormalFrame) -> &'static str {
    match frame {
        NormalFrame::World => "world",
        NormalFrame::Local(face) => face.name(),
    }
}

/// Sidecar path for a single raster file: `<file>.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// File name of the sidecar inside a cubemap stack directory.
pub const STACK_META: &str = "meta.txt";

fn depth_meta(d: &DepthMap) -> SidecarMeta {
    let mut m = SidecarMeta::new();
    m.set("content", "depth");
    m.set("format", "pfm_float32");
    m.set("kind", d.kind().name());
    m.set("frame", d.frame().name());
    m.set("invalid", "nan");
    m
}

fn depth_from_pfm(p: &Pfm, kind: DepthKind, frame: Frame) -> Result<DepthMap> {
    let data = p.to_raster()?;
    let valid = data.map(|v| !v.is_nan());
    DepthMap::new(data, valid, kind, frame)
}

/// Writes a depth map as PFM (NaN where invalid) plus its `<file>.meta`.
pub fn write_depth(path: &Path, d: &DepthMap) -> Result<()> {
    write_pfm(path, &Pfm::from_raster(&d.to_nan_filled()))?;
    depth_meta(d).write(&sidecar_path(path))
}

/// Reads a PFM depth map. Kind and frame come from the sidecar when present,
/// otherwise from `default`.
/// Stack sidecar and face of a file named `<face>.pfm` inside a stack
/// directory.
fn stack_member(path: &Path) -> Result<Option<(SidecarMeta, FaceId)>> {
    let face = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".pfm"))
        .and_then(FaceId::from_name);
    let dir = path.parent().unwrap_or(Path::new("."));
    match face {
        Some(f) if dir.join(STACK_META).is_file() => Ok(Some((read_stack_meta(dir)?, f))),
        _ => Ok(None),
    }
}

/// Kind and frame come from `<file>.meta`, else from the stack's `meta.txt`
/// when the file is one face of a stack, else from `default`.
pub fn read_depth(path: &Path, default: (DepthKind, Frame)) -> Result<DepthMap> {
    let pfm = read_pfm(path)?;
    let meta_path = sidecar_path(path);
    let (kind, frame) = if meta_path.exists() {
        let meta = SidecarMeta::read(&meta_path)?;
        (meta.depth_kind()?, meta.frame()?)
    } else if let Some((meta, face)) = stack_member(path)? {
        (meta.depth_kind()?, Frame::Face(face))
    } else {
        default
    };
    depth_from_pfm(&pfm, kind, frame)
}

fn normals_meta(n: &NormalMap) -> SidecarMeta {
    let mut m = SidecarMeta::new();
    m.set("content", "normals");
    m.set("format", "pfm_float32");
    m.set("normal_frame", normal_frame_name(n.frame()));
    m.set("invalid", "nan");
    m
}

fn normals_nan_filled(n: &NormalMap) -> Raster<[f64; 3]> {
    let (w, h) = n.shape();
    Raster::from_fn(w, h, |c, r| if n.is_valid(c, r) { n.at(c, r) } else { [f64::NAN; 3] })
}

fn normals_from_pfm(p: &Pfm, frame: NormalFrame) -> Result<NormalMap> {
    let data = p.to_raster3()?;
    let valid = data.map(|v| v.iter().all(|x| !x.is_nan()));
    let data = data.map(|v| if v.iter().any(|x| x.is_nan()) { [0.0; 3] } else { *v });
    NormalMap::from_raw(data, valid, frame)
}

/// Writes a normal map as 3-channel PFM plus its `<file>.meta`.
pub fn write_normals(path: &Path, n: &NormalMap) -> Result<()> {
    write_pfm(path, &Pfm::from_raster3(&normals_nan_filled(n)))?;
    normals_meta(n).write(&sidecar_path(path))
}

pub fn read_normals(path: &Path, default: NormalFrame) -> Result<NormalMap> {
    let pfm = read_pfm(path)?;
    let meta_path = sidecar_path(path);
    let frame = if meta_path.exists() {
        SidecarMeta::read(&meta_path)?.normal_frame()?
    } else if let Some((meta, _)) = stack_member(path)? {
        meta.normal_frame()?
    } else {
        default
    };
    normals_from_pfm(&pfm, frame)
}

fn face_path(dir: &Path, face: FaceId) -> PathBuf {
    dir.join(format!("{}.pfm", face.name()))
}

fn face_order() -> String {
    FaceId::ALL.map(|f| f.name()).join(",")
}

fn stack_files(dir: &Path) -> Result<[Pfm; 6]> {
    let missing: Vec<String> = FaceId::ALL
        .iter()
        .filter(|&&f| !face_path(dir, f).is_file())
        .map(|f| f.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFaces(missing));
    }
    let faces: Vec<Pfm> = FaceId::ALL
        .iter()
        .map(|&f| read_pfm(&face_path(dir, f)))
        .collect::<Result<_>>()?;
    let side = faces[0].width;
    for (f, p) in FaceId::ALL.iter().zip(&faces) {
        if p.width != side || p.height != side {
            return Err(Error::Format(format!(
                "face {f} is {}x{}, expected {side}x{side} like posx",
                p.width, p.height
            )));
        }
    }
    Ok(faces.try_into().expect("six faces"))
}

/// Six single-channel faces without a sidecar, e.g. sky probabilities.
pub fn read_raster_stack(dir: &Path) -> Result<[Raster<f64>; 6]> {
    let faces: Vec<Raster<f64>> = stack_files(dir)?
        .iter()
        .map(Pfm::to_raster)
        .collect::<Result<_>>()?;
    Ok(faces.try_into().expect("six faces"))
}

fn read_stack_meta(dir: &Path) -> Result<SidecarMeta> {
    let path = dir.join(STACK_META);
    if !path.is_file() {
        return Err(Error::Format(format!("{} is missing", path.display())));
    }
    let meta = SidecarMeta::read(&path)?;
    if let Some(order) = meta.get("face_order") {
        if order != face_order() {
            return Err(Error::Format(format!("unsupported face order {order:?}, expected {}", face_order())));
        }
    }
    Ok(meta)
}

/// Writes `posx.pfm` .. `negz.pfm` and `meta.txt` into `dir`, creating it.
pub fn write_depth_cube(dir: &Path, cube: &DepthCube) -> Result<()> {
    fs::create_dir_all(dir).map_err(with_path(dir))?;
    for face in FaceId::ALL {
        write_pfm(&face_path(dir, face), &Pfm::from_raster(&cube.face(face).to_nan_filled()))?;
    }
    let mut meta = SidecarMeta::new();
    meta.set("content", "depth");
    meta.set("format", "pfm_float32");
    meta.set("kind", cube.kind().name());
    meta.set("frame", "cube");
    meta.set("face_order", face_order());
    meta.set("side", cube.side().to_string());
    meta.set("invalid", "nan");
    meta.write(&dir.join(STACK_META))
}

/// Reads a depth stack. The depth kind is taken verbatim from the sidecar.
pub fn read_depth_cube(dir: &Path) -> Result<(DepthCube, SidecarMeta)> {
    let faces = stack_files(dir)?;
    let meta = read_stack_meta(dir)?;
    let kind = meta.depth_kind()?;
    let maps: Vec<DepthMap> = FaceId::ALL
        .iter()
        .zip(&faces)
        .map(|(&f, p)| depth_from_pfm(p, kind, Frame::Face(f)))
        .collect::<Result<_>>()?;
    Ok((DepthCube::new(maps.try_into().expect("six faces"))?, meta))
}

pub fn write_normal_cube(dir: &Path, cube: &NormalCube) -> Result<()> {
    fs::create_dir_all(dir).map_err(with_path(dir))?;
    for face in FaceId::ALL {
        write_pfm(&face_path(dir, face), &Pfm::from_raster3(&normals_nan_filled(cube.face(face))))?;
    }
    let mut meta = normals_meta(cube.face(FaceId::PosX));
    meta.set("frame", "cube");
    meta.set("face_order", face_order());
    meta.set("side", cube.side().to_string());
    meta.write(&dir.join(STACK_META))
}

pub fn read_normal_cube(dir: &Path) -> Result<(NormalCube, SidecarMeta)> {
    let faces = stack_files(dir)?;
    let meta = read_stack_meta(dir)?;
    let frame = meta.normal_frame()?;
    let maps: Vec<NormalMap> = faces
        .iter()
        .map(|p| normals_from_pfm(p, frame))
        .collect::<Result<_>>()?;
    Ok((NormalCube::new(maps.try_into().expect("six faces"))?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_scene_faces, Scene};
    use tempfile::tempdir;

    #[test]
    fn pfm_round_trip_bits() {
        let p = Pfm {
            width: 2,
            height: 2,
            channels: 1,
            data: vec![1.5, -0.0, f32::NAN, 3.25e-20],
        };
        for endian in [Endian::Little, Endian::Big] {
            let back = decode_pfm(&encode_pfm(&p, endian).unwrap()).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back.data), bits(&p.data));
        }
    }

    #[test]
    fn pfm_hand_encoded_big_endian() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&[0x3F, 0x80, 0x00, 0x00]);
        let p = decode_pfm(&bytes).unwrap();
        assert_eq!(p.data, vec![1.0]);
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        assert_eq!(decode_pfm(&bytes).unwrap().data, vec![1.0]);
    }

    #[test]
    fn pfm_rows_bottom_to_top_on_disk() {
        let p = Pfm {
            width: 1,
            height: 2,
            channels: 1,
            data: vec![1.0, 2.0],
        };
        let bytes = encode_pfm(&p, Endian::Little).unwrap();
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[..4], &2f32.to_le_bytes());
        assert_eq!(&payload[4..], &1f32.to_le_bytes());
    }

    #[test]
    fn pfm_three_channels() {
        let r = Raster::from_fn(3, 2, |c, r| [c as f64, r as f64, 0.5]);
        let p = decode_pfm(&encode_pfm(&Pfm::from_raster3(&r), Endian::Little).unwrap()).unwrap();
        assert_eq!(p.to_raster3().unwrap(), r);
        assert!(p.to_raster().is_err());
    }

    #[test]
    fn pfm_malformed() {
        let full = encode_pfm(&Pfm::from_raster(&Raster::filled(2, 2, 1.0)), Endian::Little).unwrap();
        let header = full.len() - 16;
        match decode_pfm(&full[..full.len() - 3]) {
            Err(Error::Parse { offset, msg }) => {
                assert_eq!(offset, header);
                assert!(msg.contains("expected 16 bytes, found 13"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_pfm(b"P6\n1 1\n-1\n\0\0\0\0"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode_pfm(b"Pf\nx 1\n-1\n\0\0\0\0"), Err(Error::Parse { offset: 3, .. })));
        assert!(matches!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0"), Err(Error::Parse { offset: 7, .. })));
        assert!(matches!(decode_pfm(b"Pf\n1 1"), Err(Error::Parse { .. })));
        assert!(matches!(decode_pfm(b""), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn png16_quantization() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.png");
        let scale = 1.0 / 4000.0;
        let mut valid = Raster::filled(3, 2, true);
        valid.set(2, 1, false);
        let data = Raster::from_vec(3, 2, vec![1.0, 2.5, 0.123456, 16.0, 7.77777, 5.0]).unwrap();
        let d = DepthMap::new(data, valid, DepthKind::Euclidean, Frame::Erp).unwrap();
        write_png16(&path, &d, scale).unwrap();
        let back = read_png16(&path, scale, DepthKind::Euclidean, Frame::Erp).unwrap();
        assert_eq!(back.valid(), d.valid());
        assert_eq!(back.at(0, 0), 1.0);
        for r in 0..2 {
            for c in 0..3 {
                if d.is_valid(c, r) {
                    assert!((back.at(c, r) - d.at(c, r)).abs() <= scale / 2.0 + 1e-15);
                }
            }
        }
        let img = image::open(&path).unwrap().into_luma16();
        assert_eq!(img.get_pixel(0, 0).0[0], 4000);
        assert_eq!(img.get_pixel(2, 1).0[0], 0);
    }

    #[test]
    fn png16_range_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.png");
        let d = DepthMap::from_values(Raster::filled(1, 1, 17.0), DepthKind::Euclidean, Frame::Erp);
        assert!(matches!(write_png16(&path, &d, 1.0 / 4000.0), Err(Error::Domain(_))));
        assert!(!path.exists());
        let tiny = DepthMap::from_values(Raster::filled(1, 1, 1e-6), DepthKind::Euclidean, Frame::Erp);
        assert!(write_png16(&path, &tiny, 1e-3).is_err());
        let ok = DepthMap::from_values(Raster::filled(1, 1, 1.0), DepthKind::Euclidean, Frame::Erp);
        assert!(write_png16(&path, &ok, 0.0).is_err());
    }

    #[test]
    fn png16_rejects_other_formats() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let img: ImageBuffer<image::Rgb<u8>, Vec<u8>> = ImageBuffer::new(2, 2);
        img.save(&path).unwrap();
        assert!(matches!(read_png16(&path, 1.0, DepthKind::Euclidean, Frame::Erp), Err(Error::Format(_))));
        let path = dir.path().join("gray8.png");
        let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::new(2, 2);
        img.save(&path).unwrap();
        assert!(matches!(read_png16(&path, 1.0, DepthKind::Euclidean, Frame::Erp), Err(Error::Format(_))));
    }

    fn cloud(colored: bool) -> PointCloud {
        PointCloud {
            points: vec![[0.0, 1.0, 2.0], [-1.5, 0.25, 3.0], [1e-3, -2.0, 0.5]],
            colors: colored.then(|| vec![[255, 0, 0], [0, 255, 0], [1, 2, 3]]),
        }
    }

    #[test]
    fn ply_ascii() {
        let text = String::from_utf8(encode_ply(&cloud(false), PlyEncoding::Ascii).unwrap()).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\n"));
        assert!(text.contains("element vertex 3\n"));
        let body = text.split("end_header\n").nth(1).unwrap();
        assert_eq!(body.lines().count(), 3);
        assert_eq!(body.lines().next().unwrap(), "0 1 2");
        let colored = String::from_utf8(encode_ply(&cloud(true), PlyEncoding::Ascii).unwrap()).unwrap();
        for p in ["red", "green", "blue"] {
            assert!(colored.contains(&format!("property uchar {p}\n")));
        }
        assert!(colored.contains("\n0 1 2 255 0 0\n"));
    }

    #[test]
    fn ply_binary_layout() {
        let bytes = encode_ply(&cloud(true), PlyEncoding::BinaryLe).unwrap();
        let marker = b"end_header\n";
        let start = bytes.windows(marker.len()).position(|w| w == marker).unwrap() + marker.len();
        assert_eq!(bytes.len() - start, 3 * 15);
        let x1 = f32::from_le_bytes(bytes[start + 15..start + 19].try_into().unwrap());
        assert_eq!(x1, -1.5);
        assert_eq!(&bytes[start + 12..start + 15], &[255, 0, 0]);
        let bad = PointCloud {
            points: vec![[f64::NAN, 0.0, 0.0]],
            colors: None,
        };
        assert!(encode_ply(&bad, PlyEncoding::Ascii).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let text = "kind = planar_log\n# comment\nfuture_key = keep me\nframe = posz\n";
        let m = SidecarMeta::parse(text).unwrap();
        assert_eq!(m.get("future_key"), Some("keep me"));
        let again = SidecarMeta::parse(&m.to_string()).unwrap();
        assert_eq!(again, m);
        assert_eq!(m.entries()[1].0, "future_key");
        assert_eq!(m.depth_kind().unwrap(), DepthKind::PlanarLog);
        assert_eq!(m.frame().unwrap(), Frame::Face(FaceId::PosZ));
        match SidecarMeta::parse("a = 1\nbroken line\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_depth_with_sidecar() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let mut valid = Raster::filled(4, 2, true);
        valid.set(1, 1, false);
        let d = DepthMap::new(Raster::from_fn(4, 2, |c, r| 0.5 * (1 + c + r) as f64), valid, DepthKind::PlanarLog, Frame::Face(FaceId::NegY)).unwrap();
        write_depth(&path, &d).unwrap();
        let back = read_depth(&path, (DepthKind::Euclidean, Frame::Erp)).unwrap();
        assert_eq!(back.kind(), DepthKind::PlanarLog);
        assert_eq!(back.frame(), Frame::Face(FaceId::NegY));
        assert_eq!(back.valid(), d.valid());
        fs::remove_file(sidecar_path(&path)).unwrap();
        let plain = read_depth(&path, (DepthKind::Euclidean, Frame::Erp)).unwrap();
        assert_eq!(plain.kind(), DepthKind::Euclidean);
    }

    #[test]
    fn depth_stack_round_trip() {
        let dir = tempdir().unwrap();
        let faces = FaceId::ALL.map(|f| DepthMap::from_values(Raster::filled(4, 4, 1.0 + f.index() as f64), DepthKind::Euclidean, Frame::Face(f)));
        let cube = DepthCube::new(faces).unwrap();
        write_depth_cube(dir.path(), &cube).unwrap();
        let (back, meta) = read_depth_cube(dir.path()).unwrap();
        assert_eq!(back, cube);
        assert_eq!(meta.get("face_order"), Some("posx,negx,posy,negy,posz,negz"));
    }

    #[test]
    fn stack_kind_honored() {
        let dir = tempdir().unwrap();
        let faces = FaceId::ALL.map(|f| DepthMap::from_values(Raster::filled(4, 4, -0.5), DepthKind::PlanarLog, Frame::Face(f)));
        write_depth_cube(dir.path(), &DepthCube::new(faces).unwrap()).unwrap();
        let (back, _) = read_depth_cube(dir.path()).unwrap();
        assert_eq!(back.kind(), DepthKind::PlanarLog);
        assert!(back.face(FaceId::PosY).data().data().iter().all(|&v| v == -0.5));

        // A lone face file picks up the stack's kind and its own face frame.
        let d = read_depth(&dir.path().join("negx.pfm"), (DepthKind::Euclidean, Frame::Erp)).unwrap();
        assert_eq!((d.kind(), d.frame()), (DepthKind::PlanarLog, Frame::Face(FaceId::NegX)));
        fs::copy(dir.path().join("negx.pfm"), dir.path().join("other.pfm")).unwrap();
        let d = read_depth(&dir.path().join("other.pfm"), (DepthKind::PlanarLog, Frame::Erp)).unwrap();
        assert_eq!(d.frame(), Frame::Erp);
    }

    #[test]
    fn stack_missing_and_mixed() {
        let dir = tempdir().unwrap();
        let (cube, normals) = render_scene_faces(&Scene::sphere(2.0).unwrap(), 4).unwrap();
        write_depth_cube(dir.path(), &cube).unwrap();
        fs::remove_file(dir.path().join("negy.pfm")).unwrap();
        match read_depth_cube(dir.path()) {
            Err(e @ Error::MissingFaces(_)) => assert!(e.to_string().contains("negy")),
            other => panic!("{other:?}"),
        }
        write_pfm(&dir.path().join("negy.pfm"), &Pfm::from_raster(&Raster::filled(5, 5, 2.0))).unwrap();
        assert!(matches!(read_depth_cube(dir.path()), Err(Error::Format(_))));

        let ndir = dir.path().join("normals");
        write_normal_cube(&ndir, &normals).unwrap();
        let (back, meta) = read_normal_cube(&ndir).unwrap();
        assert_eq!(meta.normal_frame().unwrap(), NormalFrame::World);
        for f in FaceId::ALL {
            for (a, b) in back.face(f).data().data().iter().zip(normals.face(f).data().data()) {
                for k in 0..3 {
                    assert_eq!(a[k], b[k] as f32 as f64);
                }
            }
        }
    }
}
