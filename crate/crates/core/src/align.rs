//! Scale and shift alignment of depth predictions.
//!
//! Three estimators are provided:
//!
//! - [`log_shift_beta_star`]: the closed-form log-space shift minimizing
//!   `sum((pred + beta - gt)^2)`, i.e. the mean log residual.
//! - [`median_metric_scale`]: the median of `coarse - pool(si)` over an anchor
//!   grid, robust to local outliers. The metric depth is `exp(beta) * si`.
//! - [`lstsq_scale_shift`]: affine `(s, t)` least squares in linear depth, used
//!   before scoring scale-invariant predictions.
//!
//! All reductions run sequentially in raster order, so results do not depend on
//! the thread count.

use crate::error::{domain, Error, Result};
use crate::geometry::{DepthKind, DepthMap};
use crate::raster::Raster;

/// Default anchor downsampling factor.
pub const DEFAULT_ANCHOR_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    /// Additive shift in log depth; multiplicative `exp(beta)` in linear depth.
    LogShift(f64),
    /// Aligned prediction is `scale * pred + shift`.
    Affine { scale: f64, shift: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub beta: Beta,
    /// Pixels (or anchors) that entered the estimate.
    pub n_used: usize,
    /// Set when the least-squares system was singular and only a shift was
    /// fitted.
    pub shift_only: bool,
}

impl AlignmentResult {
    pub fn log_shift(&self) -> Option<f64> {
        match self.beta {
            Beta::LogShift(b) => Some(b),
            Beta::Affine { .. } => None,
        }
    }

    pub fn scale_shift(&self) -> Option<(f64, f64)> {
        match self.beta {
            Beta::Affine { scale, shift } => Some((scale, shift)),
            Beta::LogShift(_) => None,
        }
    }

    /// Applies the alignment to a depth map of the matching representation.
    pub fn apply(&self, d: &DepthMap) -> Result<DepthMap> {
        match self.beta {
            Beta::LogShift(b) => apply_metric_scale(d, b),
            Beta::Affine { scale, shift } => {
                if !d.kind().is_linear() {
                    return domain("affine alignment applies to linear depth only");
                }
                let data = d.data().map(|v| scale * v + shift);
                let valid = d.valid().clone();
                // Affine maps may push values to <= 0; those pixels drop out.
                let valid = Raster::from_vec(
                    d.width(),
                    d.height(),
                    valid
                        .data()
                        .iter()
                        .zip(data.data())
                        .map(|(ok, v)| *ok && v.is_finite() && *v > 0.0)
                        .collect(),
                )?;
                DepthMap::new(data, valid, d.kind(), d.frame())
            }
        }
    }
}

fn same_shape(a: &DepthMap, b: &DepthMap) -> Result<()> {
    if a.shape() != b.shape() {
        return domain(format!(
            "depth maps differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn jointly_valid<'a>(
    a: &'a DepthMap,
    b: &'a DepthMap,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.data()
        .data()
        .iter()
        .zip(b.data().data())
        .zip(a.valid().data().iter().zip(b.valid().data()))
        .filter(|(_, (va, vb))| **va && **vb)
        .map(|((x, y), _)| (*x, *y))
}

/// Closed-form minimizer of `sum((pred + beta - gt)^2)` over jointly valid
/// pixels of two log-depth maps.
pub fn log_shift_beta_star(pred_log: &DepthMap, gt_log: &DepthMap) -> Result<AlignmentResult> {
    same_shape(pred_log, gt_log)?;
    if pred_log.kind() != DepthKind::PlanarLog || gt_log.kind() != DepthKind::PlanarLog {
        return domain("log shift needs planar_log inputs");
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in jointly_valid(pred_log, gt_log) {
        sum += g - p;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Alignment("no jointly valid pixels".into()));
    }
    Ok(AlignmentResult {
        beta: Beta::LogShift(sum / n as f64),
        n_used: n,
        shift_only: false,
    })
}

/// Depth averaged over `factor x factor` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub factor: usize,
    /// Mean of the valid source pixels in each cell; NaN where none.
    pub values: Raster<f64>,
    /// Fraction of the cell's in-bounds source pixels that were valid.
    pub valid_fraction: Raster<f64>,
}

impl AnchorGrid {
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.valid_fraction.at(col, row) > 0.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

pub fn pool_average(d: &DepthMap, factor: usize) -> Result<AnchorGrid> {
    if factor == 0 {
        return domain("anchor factor must be >= 1");
    }
    let (w, h) = d.shape();
    let (aw, ah) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut values = Raster::filled(aw, ah, f64::NAN);
    let mut fraction = Raster::filled(aw, ah, 0.0);
    for ar in 0..ah {
        for ac in 0..aw {
            let (mut sum, mut n, mut total) = (0.0, 0usize, 0usize);
            for row in ar * factor..((ar + 1) * factor).min(h) {
                for col in ac * factor..((ac + 1) * factor).min(w) {
                    total += 1;
                    if d.is_valid(col, row) {
                        sum += d.at(col, row);
                        n += 1;
                    }
                }
            }
            if n > 0 {
                values.set(ac, ar, sum / n as f64);
                fraction.set(ac, ar, n as f64 / total as f64);
            }
        }
    }
    Ok(AnchorGrid {
        factor,
        values,
        valid_fraction: fraction,
    })
}

/// Median of a non-empty slice; even counts average the two central values.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Robust log-space metric scale: the median over anchors of
/// `coarse(a) - pool[si](a)`.
///
/// `coarse_metric_log` may be given on the anchor grid itself or at the
/// resolution of `si_log`, in which case it is pooled with the same factor.
pub fn median_metric_scale(
    coarse_metric_log: &DepthMap,
    si_log: &DepthMap,
    factor: usize,
) -> Result<AlignmentResult> {
    if coarse_metric_log.kind() != DepthKind::PlanarLog || si_log.kind() != DepthKind::PlanarLog {
        return domain("metric scale needs planar_log inputs");
    }
    let si = pool_average(si_log, factor)?;
    let coarse = if coarse_metric_log.shape() == si.shape() {
        let valid = coarse_metric_log.valid();
        let fraction = valid.map(|v| if *v { 1.0 } else { 0.0 });
        AnchorGrid {
            factor: 1,
            values: coarse_metric_log.data().clone(),
            valid_fraction: fraction,
        }
    } else if coarse_metric_log.shape() == si_log.shape() {
        pool_average(coarse_metric_log, factor)?
    } else {
        return domain(format!(
            "coarse map {:?} matches neither the anchor grid {:?} nor the input {:?}",
            coarse_metric_log.shape(),
            si.shape(),
            si_log.shape()
        ));
    };
    let (aw, ah) = si.shape();
    let mut diffs = Vec::with_capacity(aw * ah);
    for row in 0..ah {
        for col in 0..aw {
            if si.is_valid(col, row) && coarse.is_valid(col, row) {
                diffs.push(coarse.values.at(col, row) - si.values.at(col, row));
            }
        }
    }
    let n = diffs.len();
    let beta = median(&mut diffs).ok_or_else(|| Error::Alignment("no jointly valid anchors".into()))?;
    Ok(AlignmentResult {
        beta: Beta::LogShift(beta),
        n_used: n,
        shift_only: false,
    })
}

/// Recovers metric depth: linear kinds are multiplied by `exp(beta)`, log
/// depth is shifted by `beta`.
pub fn apply_metric_scale(si: &DepthMap, beta: f64) -> Result<DepthMap> {
    if !beta.is_finite() {
        return domain(format!("non-finite log shift {beta}"));
    }
    let data = match si.kind() {
        DepthKind::PlanarLog => si.data().map(|v| v + beta),
        _ => {
            let s = beta.exp();
            si.data().map(|v| v * s)
        }
    };
    DepthMap::new(data, si.valid().clone(), si.kind(), si.frame())
}

/// Least-squares `(s, t)` minimizing `sum((s * pred + t - gt)^2)` over jointly
/// valid pixels. A constant prediction falls back to a pure shift (`s = 1`)
/// and sets `shift_only`.
pub fn lstsq_scale_shift(pred: &DepthMap, gt: &DepthMap) -> Result<AlignmentResult> {
    same_shape(pred, gt)?;
    if !pred.kind().is_linear() || !gt.kind().is_linear() {
        return domain("least-squares alignment works in linear depth");
    }
    let pairs: Vec<(f64, f64)> = jointly_valid(pred, gt).collect();
    let n = pairs.len();
    if n == 0 {
        return Err(Error::Alignment("no jointly valid pixels".into()));
    }
    let nf = n as f64;
    let mean_p = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_g = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    // Centered normal equations.
    let (mut spp, mut spg) = (0.0, 0.0);
    for &(p, g) in &pairs {
        let dp = p - mean_p;
        spp += dp * dp;
        spg += dp * (g - mean_g);
    }
    let scale_ref = pairs.iter().map(|p| p.0 * p.0).sum::<f64>();
    if n < 2 || spp <= 1e-14 * scale_ref.max(f64::MIN_POSITIVE) {
        return Ok(AlignmentResult {
            beta: Beta::Affine {
                scale: 1.0,
                shift: mean_g - mean_p,
            },
            n_used: n,
            shift_only: true,
        });
    }
    let scale = spg / spp;
    Ok(AlignmentResult {
        beta: Beta::Affine {
            scale,
            shift: mean_g - scale * mean_p,
        },
        n_used: n,
        shift_only: false,
    })
}
