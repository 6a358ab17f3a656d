//! Supervised loss kernels with analytic gradients.
//!
//! Depth losses operate on log-depth rasters with an optional validity mask.
//! Every `*_grad` function returns the gradient of the matching scalar loss;
//! [`numerical_gradient`] is the central-difference oracle they are checked
//! against.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::cubemap::FaceCamera;
use crate::error::{domain, Error, Result};
use crate::geometry::{depth_to_normals, DepthMap, NormalFrame, NormalMap};
use crate::raster::Raster;

/// Lower/upper clamp for probabilities entering log terms.
pub const PROB_CLAMP: f64 = 1e-7;
/// Additive smoothing in the dice ratio.
pub const DICE_EPS: f64 = 1.0;
/// Unit-length tolerance of [`cosine_loss`] inputs.
pub const COSINE_UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_c: f64,
    pub lambda_grad: f64,
    pub lambda_norm: f64,
    pub lambda_cos: f64,
    /// Perceptual term weight. Parsed and carried, never used here.
    pub lambda_perc: f64,
    pub lambda_bce: f64,
    pub lambda_focal: f64,
    pub lambda_dice: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 1.0,
            lambda_c: 0.2,
            lambda_grad: 40.0,
            lambda_norm: 0.6,
            lambda_cos: 1.0,
            lambda_perc: 0.5,
            lambda_bce: 1.0,
            lambda_focal: 0.4,
            lambda_dice: 1.0,
            focal_gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub const KEYS: [&'static str; 10] = [
        "lambda_l1",
        "lambda_c",
        "lambda_grad",
        "lambda_norm",
        "lambda_cos",
        "lambda_perc",
        "lambda_bce",
        "lambda_focal",
        "lambda_dice",
        "focal_gamma",
    ];

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "lambda_l1" => &mut self.lambda_l1,
            "lambda_c" => &mut self.lambda_c,
            "lambda_grad" => &mut self.lambda_grad,
            "lambda_norm" => &mut self.lambda_norm,
            "lambda_cos" => &mut self.lambda_cos,
            "lambda_perc" => &mut self.lambda_perc,
            "lambda_bce" => &mut self.lambda_bce,
            "lambda_focal" => &mut self.lambda_focal,
            "lambda_dice" => &mut self.lambda_dice,
            "focal_gamma" => &mut self.focal_gamma,
            _ => return None,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        let mut copy = *self;
        copy.slot(key).map(|v| *v)
    }

    /// Sets one weight. Returns `Ok(false)` for keys that are not weights.
    pub fn set(&mut self, key: &str, value: f64) -> Result<bool> {
        if !value.is_finite() || value < 0.0 {
            return domain(format!("{key} must be finite and >= 0, got {value}"));
        }
        match self.slot(key) {
            Some(v) => {
                *v = value;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for key in Self::KEYS {
            let v = self.get(key).unwrap_or(f64::NAN);
            if !v.is_finite() || v < 0.0 {
                return domain(format!("{key} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// `key = value` lines in [`Self::KEYS`] order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or(f64::NAN));
        }
        out
    }

    /// Overrides defaults with the weight keys found in `entries`; other keys
    /// are ignored.
    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut w = Self::default();
        for (k, v) in entries {
            if w.get(k).is_none() {
                continue;
            }
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("{k}: cannot parse {v:?} as a number")))?;
            w.set(k, value)?;
        }
        Ok(w)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Domain(format!("line {}: expected key = value", i + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_entries(&entries)
    }
}

/// Per-pixel aleatoric confidence. Positivity is checked where a loss uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub c: Raster<f64>,
}

impl ConfidenceMap {
    pub fn new(c: Raster<f64>) -> Self {
        Self { c }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::new(Raster::filled(width, height, value))
    }
}

fn check_shape<A, B>(what: &str, a: &Raster<A>, b: &Raster<B>) -> Result<()> {
    if a.shape() != b.shape() {
        return domain(format!(
            "{what}: shapes differ ({:?} vs {:?})",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn mask_at(mask: Option<&Raster<bool>>, i: usize) -> bool {
    mask.is_none_or(|m| m.data()[i])
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct L1Setup<'a> {
    pred: &'a [f64],
    gt: &'a [f64],
    c: &'a [f64],
    weights: Option<&'a [f64]>,
    used: Vec<usize>,
}

fn l1_setup<'a>(
    pred: &'a Raster<f64>,
    gt: &'a Raster<f64>,
    conf: &'a ConfidenceMap,
    weights: Option<&'a Raster<f64>>,
    mask: Option<&Raster<bool>>,
) -> Result<L1Setup<'a>> {
    check_shape("confidence_l1 pred/gt", pred, gt)?;
    check_shape("confidence_l1 pred/confidence", pred, &conf.c)?;
    if let Some(w) = weights {
        check_shape("confidence_l1 pred/weights", pred, w)?;
    }
    if let Some(m) = mask {
        check_shape("confidence_l1 pred/mask", pred, m)?;
    }
    let used: Vec<usize> = (0..pred.len()).filter(|&i| mask_at(mask, i)).collect();
    if used.is_empty() {
        return domain("confidence_l1: no valid pixels");
    }
    for &i in &used {
        let c = conf.c.data()[i];
        if !(c > 0.0) || !c.is_finite() {
            return domain(format!("confidence must be > 0 at valid pixels, got {c} at index {i}"));
        }
    }
    Ok(L1Setup {
        pred: pred.data(),
        gt: gt.data(),
        c: conf.c.data(),
        weights: weights.map(|w| w.data()),
        used,
    })
}

/// Mean over valid pixels of `w * (c * |pred - gt| - lambda_c * ln c)`.
pub fn confidence_l1(
    pred: &Raster<f64>,
    gt: &Raster<f64>,
    conf: &ConfidenceMap,
    lambda_c: f64,
    weights: Option<&Raster<f64>>,
    mask: Option<&Raster<bool>>,
) -> Result<f64> {
    let s = l1_setup(pred, gt, conf, weights, mask)?;
    let mut sum = 0.0;
    for &i in &s.used {
        let w = s.weights.map_or(1.0, |w| w[i]);
        sum += w * (s.c[i] * (s.pred[i] - s.gt[i]).abs() - lambda_c * s.c[i].ln());
    }
    Ok(sum / s.used.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceL1Grad {
    pub pred: Raster<f64>,
    pub conf: Raster<f64>,
}

pub fn confidence_l1_grad(
    pred: &Raster<f64>,
    gt: &Raster<f64>,
    conf: &ConfidenceMap,
    lambda_c: f64,
    weights: Option<&Raster<f64>>,
    mask: Option<&Raster<bool>>,
) -> Result<ConfidenceL1Grad> {
    let s = l1_setup(pred, gt, conf, weights, mask)?;
    let n = s.used.len() as f64;
    let mut gp = vec![0.0; pred.len()];
    let mut gc = vec![0.0; pred.len()];
    for &i in &s.used {
        let w = s.weights.map_or(1.0, |w| w[i]);
        let r = s.pred[i] - s.gt[i];
        gp[i] = w * s.c[i] * sign(r) / n;
        gc[i] = w * (r.abs() - lambda_c / s.c[i]) / n;
    }
    Ok(ConfidenceL1Grad {
        pred: Raster::from_vec(pred.width(), pred.height(), gp)?,
        conf: Raster::from_vec(pred.width(), pred.height(), gc)?,
    })
}

/// Forward-difference pairs `(i, j)` (j the right or lower neighbor) with
/// both ends valid, and the valid pixel count.
fn difference_pairs(w: usize, h: usize, mask: Option<&Raster<bool>>) -> (Vec<(usize, usize)>, usize) {
    let mut pairs = Vec::new();
    let ok = |i: usize| mask_at(mask, i);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !ok(i) {
                continue;
            }
            if col + 1 < w && ok(i + 1) {
                pairs.push((i, i + 1));
            }
            if row + 1 < h && ok(i + w) {
                pairs.push((i, i + w));
            }
        }
    }
    let n = (0..w * h).filter(|&i| ok(i)).count();
    (pairs, n)
}

fn gradient_setup(pred: &Raster<f64>, gt: &Raster<f64>, mask: Option<&Raster<bool>>) -> Result<()> {
    check_shape("gradient_loss pred/gt", pred, gt)?;
    if let Some(m) = mask {
        check_shape("gradient_loss pred/mask", pred, m)?;
    }
    if pred.width() < 2 || pred.height() < 2 {
        return domain(format!("gradient_loss needs at least 2x2 pixels, got {:?}", pred.shape()));
    }
    Ok(())
}

/// `(1/N) sum_p sum_{x,y} |d pred - d gt|` with forward differences; `N` is the
/// valid pixel count and a difference enters only when both ends are valid.
/// Zero when no pixel is valid.
pub fn gradient_loss(pred: &Raster<f64>, gt: &Raster<f64>, mask: Option<&Raster<bool>>) -> Result<f64> {
    gradient_setup(pred, gt, mask)?;
    let (pairs, n) = difference_pairs(pred.width(), pred.height(), mask);
    if n == 0 {
        return Ok(0.0);
    }
    let (p, g) = (pred.data(), gt.data());
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| ((p[j] - p[i]) - (g[j] - g[i])).abs())
        .sum();
    Ok(sum / n as f64)
}

pub fn gradient_loss_grad(
    pred: &Raster<f64>,
    gt: &Raster<f64>,
    mask: Option<&Raster<bool>>,
) -> Result<Raster<f64>> {
    gradient_setup(pred, gt, mask)?;
    let (pairs, n) = difference_pairs(pred.width(), pred.height(), mask);
    let mut grad = vec![0.0; pred.len()];
    if n > 0 {
        let (p, g) = (pred.data(), gt.data());
        for &(i, j) in &pairs {
            let s = sign((p[j] - p[i]) - (g[j] - g[i])) / n as f64;
            grad[j] += s;
            grad[i] -= s;
        }
    }
    Raster::from_vec(pred.width(), pred.height(), grad)
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Mean of `1 - n_pred . n_gt` over pixels valid in both fields.
fn mean_cosine_gap(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return domain(format!("normal maps differ in shape: {:?} vs {:?}", pred.shape(), gt.shape()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..pred.data().len() {
        if pred.valid().data()[i] && gt.valid().data()[i] {
            sum += 1.0 - dot3(pred.data().data()[i], gt.data().data()[i]);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `1 - n . n*` averaged over pixels where both the normals derived from
/// `pred_depth` and `gt_normals` are valid. Ground truth in a face-local frame
/// must belong to the camera's face.
pub fn normal_consistency_loss(pred_depth: &DepthMap, gt_normals: &NormalMap, cam: &FaceCamera) -> Result<f64> {
    gt_normals.check_unit(COSINE_UNIT_TOLERANCE)?;
    let world = depth_to_normals(pred_depth, cam)?;
    let pred = match gt_normals.frame() {
        NormalFrame::World => world,
        NormalFrame::Local(face) => {
            if face != cam.face() {
                return domain(format!("ground-truth normals are local to {face}, camera is {}", cam.face()));
            }
            let rt = cam.pose().transpose();
            let data = world.data().map(|n| {
                let v = rt * Vector3::new(n[0], n[1], n[2]);
                [v.x, v.y, v.z]
            });
            NormalMap::from_raw(data, world.valid().clone(), gt_normals.frame())?
        }
    };
    mean_cosine_gap(&pred, gt_normals)
}

fn cosine_setup(pred: &NormalMap, gt: &NormalMap) -> Result<()> {
    pred.check_unit(COSINE_UNIT_TOLERANCE)?;
    gt.check_unit(COSINE_UNIT_TOLERANCE)?;
    if pred.frame() != gt.frame() {
        return domain(format!("normal frames differ: {:?} vs {:?}", pred.frame(), gt.frame()));
    }
    Ok(())
}

/// Mean of `1 - n_pred . n_gt` over jointly valid pixels.
pub fn cosine_loss(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    cosine_setup(pred, gt)?;
    mean_cosine_gap(pred, gt)
}

/// Gradient of [`cosine_loss`] with respect to the predicted vectors, holding
/// them unnormalized (no projection onto the tangent plane).
pub fn cosine_loss_grad(pred: &NormalMap, gt: &NormalMap) -> Result<Raster<[f64; 3]>> {
    cosine_setup(pred, gt)?;
    mean_cosine_gap(pred, gt)?;
    let (w, h) = pred.shape();
    let joint: Vec<bool> = pred
        .valid()
        .data()
        .iter()
        .zip(gt.valid().data())
        .map(|(a, b)| *a && *b)
        .collect();
    let n = joint.iter().filter(|v| **v).count();
    let mut out = vec![[0.0; 3]; w * h];
    if n > 0 {
        for (i, ok) in joint.iter().enumerate() {
            if *ok {
                let g = gt.data().data()[i];
                out[i] = [-g[0] / n as f64, -g[1] / n as f64, -g[2] / n as f64];
            }
        }
    }
    Raster::from_vec(w, h, out)
}

fn seg_setup(prob: &Raster<f64>, target: &Raster<f64>) -> Result<()> {
    check_shape("segmentation prob/target", prob, target)?;
    if prob.is_empty() {
        return domain("segmentation loss on an empty raster");
    }
    for (i, &t) in target.data().iter().enumerate() {
        if t != 0.0 && t != 1.0 {
            return domain(format!("target must be 0 or 1, got {t} at index {i}"));
        }
    }
    for (i, &p) in prob.data().iter().enumerate() {
        if !p.is_finite() {
            return domain(format!("non-finite probability at index {i}"));
        }
    }
    Ok(())
}

/// Clamped probability and the derivative of the clamp (0 where it binds).
fn clamp_prob(p: f64) -> (f64, f64) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, 0.0)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, 0.0)
    } else {
        (p, 1.0)
    }
}

pub fn bce_loss(prob: &Raster<f64>, target: &Raster<f64>) -> Result<f64> {
    seg_setup(prob, target)?;
    let sum: f64 = prob
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, _) = clamp_prob(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / prob.len() as f64)
}

pub fn bce_loss_grad(prob: &Raster<f64>, target: &Raster<f64>) -> Result<Raster<f64>> {
    seg_setup(prob, target)?;
    let n = prob.len() as f64;
    let data = prob
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, dp) = clamp_prob(p);
            dp * (-(t / p) + (1.0 - t) / (1.0 - p)) / n
        })
        .collect();
    Raster::from_vec(prob.width(), prob.height(), data)
}

/// `p_t`, its sign relative to `p`, and the clamp derivative.
fn focal_terms(p: f64, t: f64) -> (f64, f64, f64) {
    let (p, dp) = clamp_prob(p);
    if t == 1.0 {
        (p, 1.0, dp)
    } else {
        (1.0 - p, -1.0, dp)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma < 0.0 {
        return domain(format!("focal gamma must be finite and >= 0, got {gamma}"));
    }
    Ok(())
}

/// `-mean[(1 - p_t)^gamma ln p_t]`.
pub fn focal_loss(prob: &Raster<f64>, target: &Raster<f64>, gamma: f64) -> Result<f64> {
    seg_setup(prob, target)?;
    check_gamma(gamma)?;
    let sum: f64 = prob
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (pt, _, _) = focal_terms(p, t);
            -(1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(sum / prob.len() as f64)
}

pub fn focal_loss_grad(prob: &Raster<f64>, target: &Raster<f64>, gamma: f64) -> Result<Raster<f64>> {
    seg_setup(prob, target)?;
    check_gamma(gamma)?;
    let n = prob.len() as f64;
    let data = prob
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (pt, s, dp) = focal_terms(p, t);
            let q = 1.0 - pt;
            let mut d = -q.powf(gamma) / pt;
            if gamma != 0.0 {
                d += gamma * q.powf(gamma - 1.0) * pt.ln();
            }
            dp * s * d / n
        })
        .collect();
    Raster::from_vec(prob.width(), prob.height(), data)
}

fn dice_sums(prob: &Raster<f64>, target: &Raster<f64>) -> (f64, f64) {
    let (mut inter, mut total) = (0.0, 0.0);
    for (&p, &t) in prob.data().iter().zip(target.data()) {
        let (p, _) = clamp_prob(p);
        inter += p * t;
        total += p + t;
    }
    (inter, total)
}

/// `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)`.
pub fn dice_loss(prob: &Raster<f64>, target: &Raster<f64>) -> Result<f64> {
    seg_setup(prob, target)?;
    let (inter, total) = dice_sums(prob, target);
    Ok(1.0 - (2.0 * inter + DICE_EPS) / (total + DICE_EPS))
}

pub fn dice_loss_grad(prob: &Raster<f64>, target: &Raster<f64>) -> Result<Raster<f64>> {
    seg_setup(prob, target)?;
    let (inter, total) = dice_sums(prob, target);
    let num = 2.0 * inter + DICE_EPS;
    let den = total + DICE_EPS;
    let data = prob
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (_, dp) = clamp_prob(p);
            -dp * (2.0 * t * den - num) / (den * den)
        })
        .collect();
    Raster::from_vec(prob.width(), prob.height(), data)
}

/// Inputs of the depth objective. `pred_log` should already carry the
/// log-shift alignment.
#[derive(Debug, Clone, Copy)]
pub struct DepthLossInputs<'a> {
    pub pred_log: &'a DepthMap,
    pub gt_log: &'a DepthMap,
    pub conf: &'a ConfidenceMap,
    pub gt_normals: &'a NormalMap,
    pub camera: &'a FaceCamera,
    /// Optional per-pixel weights on the confidence L1 term.
    pub coverage: Option<&'a Raster<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub grad: f64,
    pub norm: f64,
    pub weighted_l1: f64,
    pub weighted_grad: f64,
    pub weighted_norm: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_components(l1: f64, grad: f64, norm: f64, w: &LossWeights) -> Self {
        let weighted_l1 = w.lambda_l1 * l1;
        let weighted_grad = w.lambda_grad * grad;
        let weighted_norm = w.lambda_norm * norm;
        Self {
            l1,
            grad,
            norm,
            weighted_l1,
            weighted_grad,
            weighted_norm,
            total: weighted_l1 + weighted_grad + weighted_norm,
        }
    }
}

/// `lambda_l1 * L1 + lambda_grad * Lgrad + lambda_norm * Lnorm` over the
/// pixels valid in both depth maps.
pub fn depth_composite_loss(inp: &DepthLossInputs<'_>, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let (pred, gt) = (inp.pred_log, inp.gt_log);
    if pred.shape() != gt.shape() {
        return domain(format!("depth maps differ in shape: {:?} vs {:?}", pred.shape(), gt.shape()));
    }
    let mask = Raster::from_vec(
        pred.width(),
        pred.height(),
        pred.valid()
            .data()
            .iter()
            .zip(gt.valid().data())
            .map(|(a, b)| *a && *b)
            .collect(),
    )?;
    let l1 = confidence_l1(pred.data(), gt.data(), inp.conf, w.lambda_c, inp.coverage, Some(&mask))?;
    let grad = gradient_loss(pred.data(), gt.data(), Some(&mask))?;
    let norm = normal_consistency_loss(pred, inp.gt_normals, inp.camera)?;
    Ok(LossBreakdown::from_components(l1, grad, norm, w))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element.
pub fn numerical_gradient(f: impl Fn(&Raster<f64>) -> f64, x: &Raster<f64>, h: f64) -> Result<Raster<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Oracle(format!("step must be finite and > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let x0 = x.data()[i];
        probe.data_mut()[i] = x0 + h;
        let fp = f(&probe);
        probe.data_mut()[i] = x0 - h;
        let fm = f(&probe);
        probe.data_mut()[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle(format!("function is not finite around element {i}")));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Raster::from_vec(x.width(), x.height(), out)
}

/// `|a - b| / |b|` in the Euclidean norm over all elements; `|a - b|` when `b`
/// vanishes.
pub fn relative_error(a: &Raster<f64>, b: &Raster<f64>) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        diff += (x - y) * (x - y);
        norm += y * y;
    }
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}
