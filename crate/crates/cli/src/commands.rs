use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use panogeo::align::{log_shift_beta_star, lstsq_scale_shift, median_metric_scale, AlignmentResult, Beta};
use panogeo::cubemap::{erp_to_cubemap, FaceCamera, FaceId};
use panogeo::geometry::{
    apply_sky_mask, convert_depth, depth_to_normals, depth_to_points, erp_depth_to_points, faces_to_erp_depth,
    DepthCube, DepthKind, DepthMap, Frame, NormalCube, NormalFrame, PointCloud, SkyMask,
};
use panogeo::io::{
    read_depth, read_depth_cube, read_normals, read_pfm, read_raster_stack, write_depth, write_depth_cube,
    write_normal_cube, write_normals, write_ply, PlyEncoding,
};
use panogeo::losses::{bce_loss, confidence_l1, dice_loss, focal_loss, gradient_loss, normal_consistency_loss, ConfidenceMap, LossBreakdown};
use panogeo::metrics::{depth_metrics, normal_metrics, seam_metrics, DepthMetrics};
use panogeo::synth::{render_scene_erp, render_scene_faces, Scene};
use panogeo::{Error, Raster, Result};

use crate::config::RunConfig;
use crate::report::Report;
use crate::{
    AlignArgs, AlignMode, Command, Cube2erpArgs, Erp2cubeArgs, EvalAlign, EvalArgs, LossesArgs, NormalsArgs, PclArgs,
    PlyFormat, SceneKind, SeamsArgs, SkyArgs, SynthArgs,
};

fn invalid(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub fn dispatch(cmd: Command, cfg: RunConfig) -> Result<String> {
    let report = match cmd {
        Command::Erp2cube(a) => erp2cube(a, &cfg)?,
        Command::Cube2erp(a) => cube2erp(a, &cfg)?,
        Command::Normals(a) => normals(a, &cfg)?,
        Command::Pcl(a) => pcl(a, &cfg)?,
        Command::Align(a) => align(a, &cfg)?,
        Command::Eval(a) => eval(a, &cfg)?,
        Command::Seams(a) => seams(a, &cfg)?,
        Command::Synth(a) => synth(a, &cfg)?,
        Command::Losses(a) => losses(a, &cfg)?,
    };
    Ok(report.render(cfg.report))
}

const ERP_DEFAULT: (DepthKind, Frame) = (DepthKind::Euclidean, Frame::Erp);

fn erp2cube(a: Erp2cubeArgs, cfg: &RunConfig) -> Result<Report> {
    let side = a.side.unwrap_or(cfg.side);
    let erp = read_depth(&a.input, ERP_DEFAULT)?;
    if erp.kind() != DepthKind::Euclidean || erp.frame() != Frame::Erp {
        return Err(invalid(format!(
            "erp2cube needs euclidean ERP depth, got {} in frame {}",
            erp.kind(),
            erp.frame().name()
        )));
    }
    // NaN marks invalid pixels, so any face pixel touching one stays invalid.
    let faces = erp_to_cubemap(&erp.to_nan_filled(), side)?;
    let maps = FaceId::ALL.map(|f| DepthMap::from_values(faces.face(f).clone(), DepthKind::Euclidean, Frame::Face(f)));
    let cube = DepthCube::new(maps)?;
    write_depth_cube(&a.output, &cube)?;
    let mut r = Report::new("erp2cube");
    r.text("output", a.output.display().to_string());
    r.num("side", side as f64);
    r.num("valid_pixels", cube.faces().iter().map(|f| f.valid_count()).sum::<usize>() as f64);
    Ok(r)
}

fn cube2erp(a: Cube2erpArgs, cfg: &RunConfig) -> Result<Report> {
    let width = a.width.unwrap_or(cfg.width);
    let (cube, _) = read_depth_cube(&a.input)?;
    let cube = cube.to_kind(DepthKind::Euclidean)?;
    let erp = faces_to_erp_depth(&cube, width)?;
    write_depth(&a.output, &erp)?;
    let mut r = Report::new("cube2erp");
    r.text("output", a.output.display().to_string());
    r.num("width", width as f64);
    r.num("valid_pixels", erp.valid_count() as f64);
    Ok(r)
}

fn sky_threshold(s: &SkyArgs, cfg: &RunConfig) -> f64 {
    s.sky_threshold.unwrap_or(cfg.sky_threshold)
}

fn masked_cube(cube: DepthCube, sky: &SkyArgs, cfg: &RunConfig) -> Result<DepthCube> {
    let Some(dir) = &sky.sky else { return Ok(cube) };
    let probs = read_raster_stack(dir)?;
    let threshold = sky_threshold(sky, cfg);
    let faces: Vec<DepthMap> = FaceId::ALL
        .iter()
        .zip(probs)
        .map(|(&f, p)| Ok(apply_sky_mask(cube.face(f), None, &SkyMask::new(p, threshold)?)?.0))
        .collect::<Result<_>>()?;
    DepthCube::new(faces.try_into().expect("six faces"))
}

fn normals(a: NormalsArgs, cfg: &RunConfig) -> Result<Report> {
    let (cube, _) = read_depth_cube(&a.input)?;
    let cube = masked_cube(cube, &a.sky, cfg)?;
    let faces: Vec<_> = FaceId::ALL
        .iter()
        .map(|&f| depth_to_normals(cube.face(f), &cube.camera(f)))
        .collect::<Result<_>>()?;
    let normals = NormalCube::new(faces.try_into().expect("six faces"))?;
    write_normal_cube(&a.output, &normals)?;
    let mut r = Report::new("normals");
    r.text("output", a.output.display().to_string());
    r.num("valid_pixels", normals.faces().iter().map(|n| n.valid_count()).sum::<usize>() as f64);
    Ok(r)
}

fn pcl(a: PclArgs, cfg: &RunConfig) -> Result<Report> {
    let cloud = if a.input.is_dir() {
        let (cube, _) = read_depth_cube(&a.input)?;
        let cube = masked_cube(cube, &a.sky, cfg)?;
        let mut cloud = PointCloud::default();
        for f in FaceId::ALL {
            cloud.extend(depth_to_points(cube.face(f), &cube.camera(f))?);
        }
        cloud
    } else {
        let mut d = read_depth(&a.input, ERP_DEFAULT)?;
        if let Some(path) = &a.sky.sky {
            let mask = SkyMask::new(read_pfm(path)?.to_raster()?, sky_threshold(&a.sky, cfg))?;
            d = apply_sky_mask(&d, None, &mask)?.0;
        }
        erp_depth_to_points(&d)?
    };
    let encoding = match a.encoding {
        PlyFormat::Ascii => PlyEncoding::Ascii,
        PlyFormat::Binary => PlyEncoding::BinaryLe,
    };
    write_ply(&cloud, &a.output, encoding)?;
    let mut r = Report::new("pcl");
    r.text("output", a.output.display().to_string());
    r.num("points", cloud.len() as f64);
    Ok(r)
}

/// Log-depth view of a map. Linear values are replaced by their logarithm;
/// only the values matter to the log-space estimators.
fn as_log(d: DepthMap) -> Result<DepthMap> {
    if d.kind() == DepthKind::PlanarLog {
        return Ok(d);
    }
    let data = Raster::from_fn(d.width(), d.height(), |c, r| if d.is_valid(c, r) { d.at(c, r).ln() } else { 0.0 });
    DepthMap::new(data, d.valid().clone(), DepthKind::PlanarLog, d.frame())
}

fn report_alignment(r: &mut Report, res: &AlignmentResult) {
    match res.beta {
        Beta::LogShift(b) => {
            r.fixed("beta", b, 6);
            r.fixed("scale", b.exp(), 6);
        }
        Beta::Affine { scale, shift } => {
            r.fixed("scale", scale, 6);
            r.fixed("shift", shift, 6);
            r.text("shift_only", res.shift_only.to_string());
        }
    }
    r.num("n_used", res.n_used as f64);
}

fn align(a: AlignArgs, cfg: &RunConfig) -> Result<Report> {
    let factor = a.anchor_factor.unwrap_or(cfg.anchor_factor);
    let mut r = Report::new("align");
    let (res, pred) = match a.mode {
        AlignMode::Beta | AlignMode::Metric => {
            let default = (DepthKind::PlanarLog, Frame::Erp);
            let pred = read_depth(&a.pred, default)?;
            let pred_log = as_log(pred.clone())?;
            let reference = as_log(read_depth(&a.reference, default)?)?;
            let res = if a.mode == AlignMode::Beta {
                r.text("mode", "beta");
                log_shift_beta_star(&pred_log, &reference)?
            } else {
                r.text("mode", "metric");
                r.num("F", factor as f64);
                median_metric_scale(&reference, &pred_log, factor)?
            };
            (res, pred)
        }
        AlignMode::Lstsq => {
            r.text("mode", "lstsq");
            let pred = read_depth(&a.pred, ERP_DEFAULT)?;
            let gt = read_depth(&a.reference, ERP_DEFAULT)?;
            (lstsq_scale_shift(&pred, &gt)?, pred)
        }
    };
    report_alignment(&mut r, &res);
    if let Some(out) = &a.output {
        write_depth(out, &res.apply(&pred)?)?;
    }
    Ok(r)
}

fn percent(r: &mut Report, key: &str, v: f64) {
    r.fixed(key, 100.0 * v, 2);
}

fn depth_rows(r: &mut Report, prefix: &str, m: &DepthMetrics) {
    percent(r, &format!("{prefix}abs_rel"), m.abs_rel);
    r.fixed(&format!("{prefix}rmse"), m.rmse, 4);
    percent(r, &format!("{prefix}delta1"), m.delta1);
    r.num(&format!("{prefix}n_used"), m.n_used as f64);
}

fn eval_pair(pred: &Path, gt: &Path, mode: EvalAlign, range: (f64, f64)) -> Result<DepthMetrics> {
    let gt = read_depth(gt, ERP_DEFAULT)?;
    let mut pred = read_depth(pred, ERP_DEFAULT)?;
    if mode == EvalAlign::Lstsq {
        pred = lstsq_scale_shift(&pred, &gt)?.apply(&pred)?;
    }
    depth_metrics(&pred, &gt, range)
}

fn pfm_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".pfm"))
        .collect();
    names.sort();
    Ok(names)
}

fn eval(a: EvalArgs, cfg: &RunConfig) -> Result<Report> {
    let range = match &a.range {
        Some(v) => (v[0], v[1]),
        None => cfg.range,
    };
    let mut r = Report::new("eval");
    if a.pred.is_dir() {
        let names = pfm_files(&a.pred)?;
        if names.is_empty() {
            return Err(invalid(format!("{} holds no .pfm files", a.pred.display())));
        }
        let results: Vec<Result<DepthMetrics>> = names
            .par_iter()
            .map(|n| eval_pair(&a.pred.join(n), &a.gt.join(n), a.align, range))
            .collect();
        let mut all = Vec::with_capacity(names.len());
        for (name, m) in names.iter().zip(results) {
            let m = m?;
            depth_rows(&mut r, &format!("{}.", name.trim_end_matches(".pfm")), &m);
            all.push(m);
        }
        let k = all.len() as f64;
        let mean = DepthMetrics {
            abs_rel: all.iter().map(|m| m.abs_rel).sum::<f64>() / k,
            rmse: all.iter().map(|m| m.rmse).sum::<f64>() / k,
            delta1: all.iter().map(|m| m.delta1).sum::<f64>() / k,
            n_used: all.iter().map(|m| m.n_used).sum(),
        };
        depth_rows(&mut r, "mean.", &mean);
    } else {
        let m = eval_pair(&a.pred, &a.gt, a.align, range)?;
        depth_rows(&mut r, "", &m);
    }
    if let (Some(p), Some(g)) = (&a.pred_normals, &a.gt_normals) {
        let m = normal_metrics(&read_normals(p, NormalFrame::World)?, &read_normals(g, NormalFrame::World)?)?;
        r.fixed("normal_mean_deg", m.mean_deg, 2);
        r.fixed("normal_mse_deg2", m.mse_deg2, 2);
        percent(&mut r, "normal_delta_5", m.delta_5);
        percent(&mut r, "normal_delta_22_5", m.delta_22_5);
        r.num("normal_n_used", m.n_used as f64);
    }
    Ok(r)
}

/// A synth output directory keeps its stack under `depth/`.
fn stack_dir(input: &Path) -> PathBuf {
    let nested = input.join("depth");
    if !input.join("posx.pfm").exists() && nested.join("posx.pfm").exists() {
        nested
    } else {
        input.to_path_buf()
    }
}

fn seams(a: SeamsArgs, cfg: &RunConfig) -> Result<Report> {
    let tau = a.tau.unwrap_or(cfg.tau);
    let gamma = a.gamma.unwrap_or(cfg.gamma);
    RunConfig { tau, gamma, ..cfg.clone() }.validate()?;
    let (cube, _) = read_depth_cube(&stack_dir(&a.input))?;
    let m = seam_metrics(&cube, tau, gamma)?;
    let mut r = Report::new("seams");
    r.fraction("sdd", m.sdd);
    r.fraction("sp", m.sp);
    r.fraction("ss", m.ss);
    r.num("tau", m.tau);
    r.num("gamma", m.gamma);
    for e in &m.edges {
        let key = format!("edge.{}-{}", e.from, e.to);
        r.text(&key, format!("pairs:{} defects:{} mean_jump:{}", e.pairs, e.defects, e.mean_jump));
    }
    Ok(r)
}

fn triple(name: &str, s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| invalid(format!("--{name} expects three comma-separated numbers, got {s:?}")))?;
    parts
        .try_into()
        .map_err(|_| invalid(format!("--{name} expects three comma-separated numbers, got {s:?}")))
}

fn synth(a: SynthArgs, cfg: &RunConfig) -> Result<Report> {
    let scene = match a.scene {
        SceneKind::Sphere => Scene::sphere(a.radius)?,
        SceneKind::Box => Scene::box_room(triple("half-extents", &a.half_extents)?, triple("camera", &a.camera)?)?,
        SceneKind::Plane => Scene::plane(triple("normal", &a.normal)?, a.offset)?,
    };
    let side = a.side.unwrap_or(cfg.side);
    let (depth, normals) = render_scene_faces(&scene, side)?;
    write_depth_cube(&a.output.join("depth"), &depth)?;
    write_normal_cube(&a.output.join("normals"), &normals)?;
    let mut r = Report::new("synth");
    r.text("output", a.output.display().to_string());
    r.num("side", side as f64);
    if let Some(width) = a.width {
        let (d, n) = render_scene_erp(&scene, width)?;
        write_depth(&a.output.join("erp_depth.pfm"), &d)?;
        write_normals(&a.output.join("erp_normals.pfm"), &n)?;
        r.num("width", width as f64);
    }
    Ok(r)
}

fn losses(a: LossesArgs, cfg: &RunConfig) -> Result<Report> {
    let w = &cfg.weights;
    let mut r = Report::new("losses");
    if a.pred.is_none() && a.prob.is_none() {
        return Err(invalid("losses needs --pred/--gt and/or --prob/--target"));
    }
    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let face = match &a.face {
            Some(name) => Some(FaceId::from_name(name).ok_or_else(|| invalid(format!("unknown face {name:?}")))?),
            None => None,
        };
        let default = (DepthKind::PlanarLog, face.map_or(Frame::Erp, Frame::Face));
        let load = |p: &Path| -> Result<DepthMap> {
            let d = read_depth(p, default)?;
            let d = match face {
                Some(f) => d.with_frame(Frame::Face(f)),
                None => d,
            };
            match (d.kind(), d.frame()) {
                (DepthKind::PlanarLog, _) => Ok(d),
                (_, Frame::Face(f)) => convert_depth(&d, DepthKind::PlanarLog, Some(&FaceCamera::new(f, d.width())?)),
                _ => as_log(d),
            }
        };
        let (pred, gt) = (load(pred)?, load(gt)?);
        let beta = log_shift_beta_star(&pred, &gt)?;
        let aligned = beta.apply(&pred)?;
        let mask = Raster::from_fn(gt.width(), gt.height(), |c, row| aligned.is_valid(c, row) && gt.is_valid(c, row));
        let conf = match &a.conf {
            Some(p) => ConfidenceMap::new(read_pfm(p)?.to_raster()?),
            None => ConfidenceMap::constant(gt.width(), gt.height(), 1.0),
        };
        let l1 = confidence_l1(aligned.data(), gt.data(), &conf, w.lambda_c, None, Some(&mask))?;
        let grad = gradient_loss(aligned.data(), gt.data(), Some(&mask))?;
        let norm = match (&a.gt_normals, aligned.frame()) {
            (Some(path), Frame::Face(f)) => {
                let n = read_normals(path, NormalFrame::World)?;
                Some(normal_consistency_loss(&aligned, &n, &FaceCamera::new(f, aligned.width())?)?)
            }
            (Some(_), Frame::Erp) => return Err(invalid("the normal term needs face depth; pass --face")),
            (None, _) => None,
        };
        let b = LossBreakdown::from_components(l1, grad, norm.unwrap_or(0.0), w);
        r.num("beta_star", beta.log_shift().unwrap_or(f64::NAN));
        r.num("l1", b.l1);
        r.num("grad", b.grad);
        match norm {
            Some(_) => r.num("norm", b.norm),
            None => r.text("norm", "skipped"),
        }
        r.num("depth_total", b.total);
    }
    if let (Some(prob), Some(target)) = (&a.prob, &a.target) {
        let p = read_pfm(prob)?.to_raster()?;
        let t = read_pfm(target)?.to_raster()?;
        let bce = bce_loss(&p, &t)?;
        let focal = focal_loss(&p, &t, w.focal_gamma)?;
        let dice = dice_loss(&p, &t)?;
        r.num("bce", bce);
        r.num("focal", focal);
        r.num("dice", dice);
        r.num("sky_total", w.lambda_bce * bce + w.lambda_focal * focal + w.lambda_dice * dice);
    }
    Ok(r)
}
