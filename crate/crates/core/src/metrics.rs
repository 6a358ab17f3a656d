//! Depth, normal and seam-consistency metrics.
//!
//! Ratios (`abs_rel`, `delta1`, normal threshold fractions, seam scores) are
//! fractions in `[0, 1]`; reports multiply by 100 where a percentage is wanted.

use crate::cubemap::{adjacency, edge_pixel, EdgeRef, FaceId};
use crate::error::{Error, Result};
use crate::geometry::{DepthCube, DepthKind, DepthMap, NormalMap};

pub const DEFAULT_RANGE: (f64, f64) = (0.0, 75.0);
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 0.10;
/// An edge is prevalent when more than this fraction of its pairs are defects.
pub const PREVALENCE_FRACTION: f64 = 0.1;
pub const EDGE_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub n_used: usize,
}

/// AbsRel, RMSE and delta1 over pixels valid in both maps whose ground truth
/// lies in `[range.0, range.1]`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, range: (f64, f64)) -> Result<DepthMetrics> {
    if pred.shape() != gt.shape() {
        return Err(Error::Metric(format!(
            "depth maps differ in shape: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if !pred.kind().is_linear() || pred.kind() != gt.kind() {
        return Err(Error::Metric(format!(
            "depth metrics need matching linear kinds, got {} and {}",
            pred.kind(),
            gt.kind()
        )));
    }
    let (lo, hi) = range;
    if !(lo <= hi) {
        return Err(Error::Metric(format!("empty range [{lo}, {hi}]")));
    }
    let (mut abs_rel, mut sq, mut inliers, mut n) = (0.0, 0.0, 0usize, 0usize);
    let (p, g) = (pred.data().data(), gt.data().data());
    for i in 0..p.len() {
        if !(pred.valid().data()[i] && gt.valid().data()[i]) {
            continue;
        }
        let (dp, dg) = (p[i], g[i]);
        if !(dg >= lo && dg <= hi) || dg <= 0.0 {
            continue;
        }
        abs_rel += (dp - dg).abs() / dg;
        sq += (dp - dg) * (dp - dg);
        if (dp / dg).max(dg / dp) < 1.25 {
            inliers += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metric("no valid in-range pixels to evaluate".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        rmse: (sq / nf).sqrt(),
        delta1: inliers as f64 / nf,
        n_used: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMetrics {
    pub mean_deg: f64,
    pub mse_deg2: f64,
    pub delta_5: f64,
    pub delta_22_5: f64,
    pub n_used: usize,
}

/// Angular error statistics after renormalizing both fields. Thresholds are
/// strict (`angle < 5`).
pub fn normal_metrics(pred: &NormalMap, gt: &NormalMap) -> Result<NormalMetrics> {
    if pred.shape() != gt.shape() {
        return Err(Error::Metric(format!(
            "normal maps differ in shape: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (pred, gt) = (pred.renormalized(), gt.renormalized());
    let (mut sum, mut sq, mut d5, mut d22, mut n) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for i in 0..pred.data().len() {
        if !(pred.valid().data()[i] && gt.valid().data()[i]) {
            continue;
        }
        let (a, b) = (pred.data().data()[i], gt.data().data()[i]);
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let angle = dot.clamp(-1.0, 1.0).acos().to_degrees();
        sum += angle;
        sq += angle * angle;
        d5 += usize::from(angle < 5.0);
        d22 += usize::from(angle < 22.5);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metric("no jointly valid normals to evaluate".into()));
    }
    let nf = n as f64;
    Ok(NormalMetrics {
        mean_deg: sum / nf,
        mse_deg2: sq / nf,
        delta_5: d5 as f64 / nf,
        delta_22_5: d22 as f64 / nf,
        n_used: n,
    })
}

/// One cross-face pixel pair: `(face, col, row)` on each side.
pub type SeamPair = ((FaceId, usize, usize), (FaceId, usize, usize));

/// Border pixel pairs of each of the 12 shared cube edges, in the order of
/// the undirected adjacency table.
pub fn seam_pairs(side: usize) -> Vec<(EdgeRef, EdgeRef, Vec<SeamPair>)> {
    adjacency()
        .undirected()
        .iter()
        .map(|e| {
            let pairs = (0..side)
                .map(|i| {
                    let (c0, r0) = edge_pixel(e.from.edge, side, i, 0);
                    let (c1, r1) = edge_pixel(e.to.edge, side, e.map_index(i, side), 0);
                    ((e.from.face, c0, r0), (e.to.face, c1, r1))
                })
                .collect();
            (e.from, e.to, pairs)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSeamStats {
    pub from: EdgeRef,
    pub to: EdgeRef,
    pub pairs: usize,
    pub defects: usize,
    pub mean_jump: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeamMetrics {
    pub sdd: f64,
    pub sp: f64,
    pub ss: f64,
    pub tau: f64,
    pub gamma: f64,
    pub edges: Vec<EdgeSeamStats>,
}

/// Seam defect density, prevalence and severity of a depth cubemap.
///
/// A pair is a defect when its log-depth jump exceeds `tau`. Pairs with an
/// invalid end are skipped; an edge without pairs counts as clean. Planar
/// depth is converted to euclidean first, since planar values of two faces do
/// not agree on a shared ray.
pub fn seam_metrics(cube: &DepthCube, tau: f64, gamma: f64) -> Result<SeamMetrics> {
    if !(tau > 0.0 && tau.is_finite() && gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Metric(format!(
            "tau and gamma must be finite and > 0, got {tau} and {gamma}"
        )));
    }
    let euclid;
    let cube = if cube.kind() == DepthKind::Euclidean {
        cube
    } else {
        euclid = cube.to_kind(DepthKind::Euclidean)?;
        &euclid
    };
    let side = cube.side();
    let log_at = |(f, c, r): (FaceId, usize, usize)| -> Option<f64> {
        let d = cube.face(f);
        (d.is_valid(c, r) && d.at(c, r) > 0.0).then(|| d.at(c, r).ln())
    };
    let mut edges = Vec::with_capacity(EDGE_COUNT);
    let (mut total_pairs, mut total_defects) = (0usize, 0usize);
    for (from, to, pairs) in seam_pairs(side) {
        let (mut n, mut defects, mut sum) = (0usize, 0usize, 0.0);
        for (p, q) in pairs {
            if let (Some(a), Some(b)) = (log_at(p), log_at(q)) {
                let jump = (a - b).abs();
                n += 1;
                sum += jump;
                defects += usize::from(jump > tau);
            }
        }
        total_pairs += n;
        total_defects += defects;
        edges.push(EdgeSeamStats {
            from,
            to,
            pairs: n,
            defects,
            mean_jump: if n == 0 { 0.0 } else { sum / n as f64 },
        });
    }
    if total_pairs == 0 {
        return Err(Error::Metric("no valid cross-face pixel pairs".into()));
    }
    let prevalent = edges
        .iter()
        .filter(|e| e.pairs > 0 && e.defects as f64 / e.pairs as f64 > PREVALENCE_FRACTION)
        .count();
    let severe = edges.iter().filter(|e| e.pairs > 0 && e.mean_jump > gamma).count();
    Ok(SeamMetrics {
        sdd: total_defects as f64 / total_pairs as f64,
        sp: prevalent as f64 / EDGE_COUNT as f64,
        ss: severe as f64 / EDGE_COUNT as f64,
        tau,
        gamma,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, NormalFrame};
    use crate::raster::Raster;
    use std::collections::HashMap;

    fn lin(data: Raster<f64>) -> DepthMap {
        DepthMap::from_values(data, DepthKind::Euclidean, Frame::Erp)
    }

    fn dyadic_gt() -> DepthMap {
        lin(Raster::from_fn(8, 4, |c, r| 0.5 + 0.25 * (c + 8 * r) as f64))
    }

    #[test]
    fn depth_identity_and_scaled() {
        let gt = dyadic_gt();
        let m = depth_metrics(&gt, &gt, DEFAULT_RANGE).unwrap();
        assert_eq!((m.abs_rel, m.rmse, m.delta1, m.n_used), (0.0, 0.0, 1.0, 32));

        for (k, delta) in [(2.0, 0.0), (0.5, 0.0), (1.125, 1.0), (1.25, 0.0), (0.875, 1.0)] {
            let pred = lin(gt.data().map(|v| v * k));
            let m = depth_metrics(&pred, &gt, DEFAULT_RANGE).unwrap();
            assert_eq!(m.abs_rel, (k - 1.0f64).abs(), "k = {k}");
            assert_eq!(m.delta1, delta, "k = {k}");
        }
        let pred = lin(gt.data().map(|v| v * 1.2));
        let m = depth_metrics(&pred, &gt, DEFAULT_RANGE).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-12);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn depth_rmse_closed_form() {
        let gt = lin(Raster::filled(4, 2, 3.0));
        let pred = lin(Raster::from_fn(4, 2, |c, _| if c % 2 == 0 { 4.0 } else { 1.0 }));
        let m = depth_metrics(&pred, &gt, DEFAULT_RANGE).unwrap();
        assert!((m.rmse - (2.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn range_mask_on_gt_only() {
        let gt = lin(Raster::from_fn(10, 1, |c, _| 10.0 * c as f64 + 5.0));
        let pred = lin(gt.data().map(|v| v * 100.0));
        let m = depth_metrics(&pred, &gt, DEFAULT_RANGE).unwrap();
        // gt = 5, 15, ..., 95: values up to 75 are kept.
        assert_eq!(m.n_used, 8);
        let m = depth_metrics(&pred, &gt, (15.0, 25.0)).unwrap();
        assert_eq!(m.n_used, 2);
        assert!(matches!(depth_metrics(&pred, &gt, (200.0, 300.0)), Err(Error::Metric(_))));
    }

    #[test]
    fn depth_metric_errors() {
        let gt = dyadic_gt();
        let log = DepthMap::from_values(gt.data().clone(), DepthKind::PlanarLog, Frame::Erp);
        assert!(depth_metrics(&log, &log, DEFAULT_RANGE).is_err());
        let planar = DepthMap::from_values(gt.data().clone(), DepthKind::PlanarLinear, Frame::Erp);
        assert!(depth_metrics(&planar, &gt, DEFAULT_RANGE).is_err());
        let small = lin(Raster::filled(2, 2, 1.0));
        assert!(depth_metrics(&small, &gt, DEFAULT_RANGE).is_err());
    }

    fn normals(w: usize, h: usize, f: impl FnMut(usize, usize) -> [f64; 3]) -> NormalMap {
        NormalMap::new(Raster::from_fn(w, h, f), Raster::filled(w, h, true), NormalFrame::World).unwrap()
    }

    #[test]
    fn normal_closed_forms() {
        let z = normals(4, 4, |_, _| [0.0, 0.0, 1.0]);
        let m = normal_metrics(&z, &z).unwrap();
        assert_eq!((m.mean_deg, m.mse_deg2, m.delta_5, m.delta_22_5), (0.0, 0.0, 1.0, 1.0));

        let x = normals(4, 4, |_, _| [1.0, 0.0, 0.0]);
        let m = normal_metrics(&x, &z).unwrap();
        assert_eq!((m.mean_deg, m.mse_deg2, m.delta_5, m.delta_22_5), (90.0, 8100.0, 0.0, 0.0));

        let t = 10f64.to_radians();
        let mixed = normals(4, 4, |c, _| if c < 2 { [0.0, 0.0, 1.0] } else { [t.sin(), 0.0, t.cos()] });
        let m = normal_metrics(&mixed, &z).unwrap();
        assert!((m.mean_deg - 5.0).abs() < 1e-12);
        assert_eq!((m.delta_5, m.delta_22_5), (0.5, 1.0));

        let flipped = normals(4, 4, |_, _| [0.0, 0.0, -1.0]);
        assert_eq!(normal_metrics(&flipped, &z).unwrap().mean_deg, 180.0);
    }

    #[test]
    fn normal_inputs_renormalized() {
        let z = normals(2, 2, |_, _| [0.0, 0.0, 1.0]);
        let long = NormalMap::from_raw(Raster::filled(2, 2, [0.0, 0.0, 3.0]), Raster::filled(2, 2, true), NormalFrame::World).unwrap();
        assert_eq!(normal_metrics(&long, &z).unwrap().mean_deg, 0.0);
        let none = NormalMap::from_raw(Raster::filled(2, 2, [0.0, 0.0, 1.0]), Raster::filled(2, 2, false), NormalFrame::World).unwrap();
        assert!(matches!(normal_metrics(&none, &z), Err(Error::Metric(_))));
    }

    fn constant_cube(side: usize, value: f64) -> DepthCube {
        let faces = FaceId::ALL.map(|f| DepthMap::from_values(Raster::filled(side, side, value), DepthKind::Euclidean, Frame::Face(f)));
        DepthCube::new(faces).unwrap()
    }

    fn cube_from(side: usize, values: &HashMap<(FaceId, usize, usize), f64>, base: f64) -> DepthCube {
        let faces = FaceId::ALL.map(|f| {
            DepthMap::from_values(
                Raster::from_fn(side, side, |c, r| *values.get(&(f, c, r)).unwrap_or(&base)),
                DepthKind::Euclidean,
                Frame::Face(f),
            )
        });
        DepthCube::new(faces).unwrap()
    }

    #[test]
    fn pair_set_shape() {
        let side = 6;
        let edges = seam_pairs(side);
        assert_eq!(edges.len(), 12);
        assert!(edges.iter().all(|e| e.2.len() == side));
        // Every border pixel shows up once per cube edge it lies on.
        let mut count: HashMap<(FaceId, usize, usize), usize> = HashMap::new();
        for (_, _, pairs) in &edges {
            for (p, q) in pairs {
                *count.entry(*p).or_default() += 1;
                *count.entry(*q).or_default() += 1;
            }
        }
        assert_eq!(count.len(), 6 * (4 * side - 4));
        let corners = count.values().filter(|&&n| n == 2).count();
        assert_eq!(corners, 6 * 4);
    }

    #[test]
    fn continuous_cube_is_clean() {
        let m = seam_metrics(&constant_cube(16, 2.0), 1e-9, 1e-9).unwrap();
        assert_eq!((m.sdd, m.sp, m.ss), (0.0, 0.0, 0.0));
        assert_eq!(m.edges.iter().map(|e| e.pairs).sum::<usize>(), 12 * 16);
    }

    /// Offsets the whole border strip of one side of a cube edge by `jump` in
    /// log depth. Pixels of the third face at the two cube corners are raised
    /// by half the jump so the neighboring edges stay below `tau`.
    fn one_edge_offset(side: usize, jump: f64, base: f64) -> DepthCube {
        let edges = seam_pairs(side);
        let (_, _, pairs) = &edges[0];
        let mut values = HashMap::new();
        for (p, _) in pairs {
            values.insert(*p, base * jump.exp());
        }
        let strip: Vec<_> = pairs.iter().map(|(p, _)| *p).collect();
        for (k, (_, _, other)) in edges.iter().enumerate() {
            if k == 0 {
                continue;
            }
            for (p, q) in other {
                if strip.contains(p) {
                    values.insert(*q, base * (0.5 * jump).exp());
                } else if strip.contains(q) {
                    values.insert(*p, base * (0.5 * jump).exp());
                }
            }
        }
        cube_from(side, &values, base)
    }

    #[test]
    fn one_edge_offset_scores_one_twelfth() {
        let (tau, gamma) = (0.05, 0.08);
        for side in [8, 17, 32] {
            let cube = one_edge_offset(side, 1.8 * tau, 2.0);
            let m = seam_metrics(&cube, tau, gamma).unwrap();
            assert_eq!(m.sdd, side as f64 / (12 * side) as f64);
            assert_eq!((m.sp, m.ss), (1.0 / 12.0, 1.0 / 12.0));
            assert_eq!(m.edges[0].defects, side);
        }
    }

    #[test]
    fn sparse_defects_below_prevalence() {
        let (tau, gamma): (f64, f64) = (0.05, 0.10);
        let side = 40;
        let edges = seam_pairs(side);
        let mut values = HashMap::new();
        // Two interior positions (5%) of one edge jump by 10 tau.
        for i in [10, 20] {
            values.insert(edges[3].2[i].0, 2.0 * (10.0 * tau).exp());
        }
        let m = seam_metrics(&cube_from(side, &values, 2.0), tau, gamma).unwrap();
        assert!((m.sdd - 0.05 / 12.0).abs() < 1e-15);
        assert_eq!((m.sp, m.ss), (0.0, 0.0));
    }

    #[test]
    fn invalid_pairs_skipped_and_errors() {
        let side = 8;
        let faces = FaceId::ALL.map(|f| {
            DepthMap::new(Raster::filled(side, side, 1.0), Raster::filled(side, side, false), DepthKind::Euclidean, Frame::Face(f)).unwrap()
        });
        let dead = DepthCube::new(faces).unwrap();
        assert!(matches!(seam_metrics(&dead, 0.05, 0.1), Err(Error::Metric(_))));
        assert!(seam_metrics(&constant_cube(4, 1.0), 0.0, 0.1).is_err());
        assert!(seam_metrics(&constant_cube(4, 1.0), 0.05, f64::NAN).is_err());
    }

    #[test]
    fn planar_cube_is_converted() {
        // A constant euclidean sphere is not constant in planar depth, but the
        // seam metrics see through the representation.
        let side = 16;
        let euclid = constant_cube(side, 3.0);
        let planar = euclid.to_kind(DepthKind::PlanarLinear).unwrap();
        let m = seam_metrics(&planar, 1e-9, 1e-9).unwrap();
        assert_eq!((m.sdd, m.sp, m.ss), (0.0, 0.0, 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};

        proptest! {
            #[test]
            fn sp_ss_are_twelfths(seed in any::<u64>(), side in 2usize..12, tau in 0.01f64..1.0, gamma in 0.01f64..1.0) {
                let mut rng = StdRng::seed_from_u64(seed);
                let faces = FaceId::ALL.map(|f| {
                    let data = Raster::from_fn(side, side, |_, _| rng.random_range(0.5..3.0));
                    let valid = Raster::from_fn(side, side, |_, _| rng.random_bool(0.9));
                    DepthMap::new(data, valid, DepthKind::Euclidean, Frame::Face(f)).unwrap()
                });
                let cube = DepthCube::new(faces).unwrap();
                if let Ok(m) = seam_metrics(&cube, tau, gamma) {
                    for v in [m.sp, m.ss] {
                        let k = v * 12.0;
                        prop_assert!((k - k.round()).abs() < 1e-12 && (0.0..=1.0).contains(&v));
                        prop_assert_eq!(v, k.round() / 12.0);
                    }
                    prop_assert!((0.0..=1.0).contains(&m.sdd));
                }
            }

            #[test]
            fn depth_metrics_permutation_invariant(seed in any::<u64>()) {
                let mut rng = StdRng::seed_from_u64(seed);
                let g: Vec<f64> = (0..24).map(|_| rng.random_range(0.5..80.0)).collect();
                let p: Vec<f64> = (0..24).map(|_| rng.random_range(0.5..80.0)).collect();
                let mut order: Vec<usize> = (0..24).collect();
                for i in (1..24).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                let mk = |v: Vec<f64>| lin(Raster::from_vec(6, 4, v).unwrap());
                let a = depth_metrics(&mk(p.clone()), &mk(g.clone()), DEFAULT_RANGE).unwrap();
                let b = depth_metrics(
                    &mk(order.iter().map(|&i| p[i]).collect()),
                    &mk(order.iter().map(|&i| g[i]).collect()),
                    DEFAULT_RANGE,
                ).unwrap();
                prop_assert_eq!(a.n_used, b.n_used);
                prop_assert_eq!(a.delta1, b.delta1);
                prop_assert!((a.abs_rel - b.abs_rel).abs() < 1e-12);
                prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
            }
        }
    }
}
