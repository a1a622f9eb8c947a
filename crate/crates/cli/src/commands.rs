//! One function per subcommand.

use std::path::{Path, PathBuf};

use gsanim_core::assets::{
    load_checkpoint, load_gaussians, load_image, load_json, load_mesh, load_model, load_pose, load_rig, parse_mesh_ply,
    parse_splat_ply, read_bytes, save_checkpoint, save_gaussians, save_image, save_json, save_mesh, save_model,
    save_pose, AssetError,
};
use gsanim_core::body_model::{BodyModel, Pose, Shape, SyntheticConfig};
use gsanim_core::fixtures::{
    avatar_fixture, bounds, demo_pose, dominated_by, procedural_texture, refine_input, scattered_gaussians, LEFT_ELBOW,
};
use gsanim_core::gaussian::{animate, bind_gaussians, canonicalize_scan, AvatarState, GaussianSet, Stage};
use gsanim_core::mesh::Mesh;
use gsanim_core::metrics::{gaussian_samples, write_csv, GeometryReport, ImageReport, TimingReport};
use gsanim_core::nnet::{NetConfig, NetworkParams, ShareMode};
use gsanim_core::refine::{pose_target_body, refine, train_refiner, RefineConfig, RefineInput, TrainConfig};
use gsanim_core::render::{four_view_rig, rasterize, rasterize_mesh_geometry, Camera, Image, RenderOutput};
use gsanim_core::template::{build_template, TemplateConfig};
use serde::{Deserialize, Serialize};

use crate::args::{
    AnimateArgs, BenchArgs, CanonicalizeArgs, EvaluateArgs, RenderArgs, Stage as BenchStage, SynthArgs, TemplateArgs,
    TrainArgs,
};
use crate::error::{CliError, CliResult, Context};
use crate::manifest::Recorder;

fn model_and_shape(path: &Path, rec: &mut Recorder) -> CliResult<(BodyModel, Shape)> {
    rec.input(path);
    let model = load_model(path).context(&format!("model {}", path.display()))?;
    let shape = Shape::zeros(model.shape_dim);
    Ok((model, shape))
}

fn input<T>(rec: &mut Recorder, path: &Path, load: impl FnOnce(&Path) -> Result<T, AssetError>) -> CliResult<T> {
    rec.input(path);
    load(path).context(&path.display().to_string())
}

fn output(rec: &mut Recorder, path: &Path, save: impl FnOnce(&Path) -> Result<(), AssetError>) -> CliResult<()> {
    save(path).context(&path.display().to_string())?;
    rec.output(path);
    Ok(())
}

pub fn canonicalize(a: &CanonicalizeArgs, rec: &mut Recorder) -> CliResult<()> {
    let scan = input(rec, &a.scan, load_mesh)?;
    let (model, shape) = model_and_shape(&a.model, rec)?;
    let pose = input(rec, &a.pose, load_pose)?;
    let canon = rec.time("canonicalize", || canonicalize_scan(&scan, &model, &pose, &shape))?;
    output(rec, &a.out, |p| save_mesh(&canon, p))
}

pub fn template(a: &TemplateArgs, rec: &mut Recorder) -> CliResult<()> {
    let canon = input(rec, &a.canon, load_mesh)?;
    let texture = input(rec, &a.texture, load_image)?;
    let (model, shape) = model_and_shape(&a.model, rec)?;
    let params = input(rec, &a.ckpt, load_checkpoint)?;
    let cfg = TemplateConfig {
        uv_resolution: a.uv_resolution,
        max_offset: a.max_offset,
        ..TemplateConfig::default()
    };
    rec.config(cfg);
    let set = rec.time("template", || {
        build_template(&canon, &texture, &model, &shape, &params, &cfg)
    })?;
    println!("{} Gaussians", set.len());
    output(rec, &a.out, |p| save_gaussians(&set, p))
}

/// Four-view refinement input around the body posed at `pose`.
fn refinement_input(
    coarse: GaussianSet,
    model: &BodyModel,
    shape: &Shape,
    pose: &Pose,
    resolution: usize,
) -> CliResult<RefineInput> {
    let target_body = pose_target_body(model, shape, pose)?;
    let (c, r) = bounds(&target_body.vertices);
    let rig = four_view_rig(r * 1.1, resolution, c)?;
    Ok(RefineInput {
        coarse: AvatarState {
            gaussians: coarse,
            pose: pose.clone(),
            shape: shape.clone(),
            stage: Stage::CoarseTarget,
        },
        target_body,
        target_pose: pose.clone(),
        rig,
    })
}

pub fn animate_cmd(a: &AnimateArgs, rec: &mut Recorder) -> CliResult<()> {
    let mut set = input(rec, &a.template, load_gaussians)?;
    let (model, shape) = model_and_shape(&a.model, rec)?;
    let pose = input(rec, &a.pose, load_pose)?;
    if set.binding.is_none() {
        let diag = rec.time("bind", || bind_gaussians(&mut set, &model, &shape))?;
        eprintln!("template carried no skinning; bound to the model ({diag:?})");
    }
    let mut posed = rec.time("animate", || animate(&set, &model, &shape, &pose, a.rotate_frames))?;
    let cfg = RefineConfig {
        max_offset: a.max_offset,
        opacity_threshold: a.opacity_threshold,
        top_k: a.top_k,
        ..RefineConfig::default()
    };
    rec.config(serde_json::json!({
        "rotate_frames": a.rotate_frames,
        "refine": a.refine.then_some(&cfg),
        "resolution": a.resolution,
    }));
    if a.refine {
        let ckpt = a
            .ckpt
            .as_deref()
            .ok_or_else(|| CliError::usage("--refine needs --ckpt"))?;
        let params = input(rec, ckpt, load_checkpoint)?;
        let ri = refinement_input(posed, &model, &shape, &pose, a.resolution)?;
        let out = rec.time("refine", || refine(&ri, &params, &cfg))?;
        posed = out.refined.gaussians;
    }
    output(rec, &a.out, |p| save_gaussians(&posed, p))
}

pub fn render_cmd(a: &RenderArgs, rec: &mut Recorder) -> CliResult<()> {
    let set = input(rec, &a.gaussians, load_gaussians)?;
    let cam: Camera = input(rec, &a.camera, gsanim_core::assets::load_camera)?;
    let bg: [f64; 3] = a
        .background
        .as_slice()
        .try_into()
        .map_err(|_| CliError::usage("--background takes three values"))?;
    if bg.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(CliError::usage("--background values must lie in [0, 1]"));
    }
    let out: RenderOutput<f32> = rec.time("render", || rasterize(&set, &cam, bg));
    output(rec, &a.out, |p| save_image(&out.color, p))?;
    if let Some(m) = &a.mask {
        output(rec, m, |p| save_image(&out.mask, p))?;
    }
    Ok(())
}

/// Training config file. Every field is optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Bound on the center correction, meters.
    pub max_offset: f64,
    pub opacity_threshold: f64,
    pub top_k: usize,
    /// Rig resolution of the training renders.
    pub resolution: usize,
    /// Seed of the synthetic body.
    pub fixture_seed: u64,
    pub uv_resolution: usize,
    /// Displacement of each limb along +y, meters.
    pub limb_shift: f64,
    /// Joints whose dominated Gaussians are displaced, one example each.
    pub limbs: Vec<usize>,
    /// Pose files, relative to the config; empty means one built-in pose.
    pub poses: Vec<PathBuf>,
    /// Networks that train; empty trains every trainable tensor.
    pub train_only: Vec<String>,
    pub share_mode: ShareMode,
    pub net: NetConfig,
}

impl Default for TrainFile {
    fn default() -> Self {
        TrainFile {
            lr: 1e-3,
            epochs: 200,
            seed: 0,
            max_offset: 0.02,
            opacity_threshold: 0.0,
            top_k: 0,
            resolution: 64,
            fixture_seed: 6,
            uv_resolution: 32,
            limb_shift: 0.01,
            limbs: vec![LEFT_ELBOW],
            poses: Vec::new(),
            train_only: Vec::new(),
            share_mode: ShareMode::Shared,
            net: NetConfig::default(),
        }
    }
}

pub fn train(a: &TrainArgs, seed: Option<u64>, rec: &mut Recorder) -> CliResult<()> {
    let mut cfg: TrainFile = input(rec, &a.config, load_json)?;
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.resolution = a.resolution.unwrap_or(cfg.resolution);
    cfg.seed = seed.unwrap_or(cfg.seed);
    if !(cfg.lr > 0.0) || cfg.epochs == 0 || cfg.limbs.is_empty() {
        return Err(CliError::usage(
            "training needs lr > 0, epochs ≥ 1 and at least one limb",
        ));
    }
    rec.config(&cfg);

    let fx = avatar_fixture(cfg.fixture_seed, cfg.uv_resolution)?;
    let dir = a.config.parent().unwrap_or(Path::new("."));
    let poses = if cfg.poses.is_empty() {
        vec![demo_pose(&fx.model)]
    } else {
        let mut v = Vec::new();
        for p in &cfg.poses {
            v.push(input(rec, &dir.join(p), load_pose)?);
        }
        v
    };
    let refine_cfg = RefineConfig {
        max_offset: cfg.max_offset,
        opacity_threshold: cfg.opacity_threshold,
        top_k: cfg.top_k,
        ..RefineConfig::default()
    };
    let mut data = Vec::new();
    for pose in &poses {
        let correct = refine_input(&fx, pose, cfg.resolution)?;
        let truth: Vec<RenderOutput<f32>> = correct
            .rig
            .iter()
            .map(|c| rasterize(&correct.coarse.gaussians, c, refine_cfg.background).without_workspace())
            .collect();
        for &joint in &cfg.limbs {
            let mut displaced = correct.clone();
            let limb = dominated_by(&displaced.coarse.gaussians, joint as u32);
            if limb.is_empty() {
                return Err(CliError::usage(format!("no Gaussians follow joint {joint}")));
            }
            for i in limb {
                displaced.coarse.gaussians.centers[i].y += cfg.limb_shift;
            }
            data.push((displaced, truth.clone()));
        }
    }

    let mut params = match &a.init {
        Some(p) => input(rec, p, load_checkpoint)?.transfer_weights(cfg.share_mode)?,
        None => NetworkParams::<f32>::new(cfg.net, cfg.share_mode),
    };
    if !cfg.train_only.is_empty() {
        params.train_only(&cfg.train_only)?;
    }
    let tc = TrainConfig {
        lr: cfg.lr,
        epochs: cfg.epochs,
        seed: cfg.seed,
        refine: refine_cfg,
    };
    let (trained, curve) = rec.time("train", || train_refiner(&data, &params, &tc))?;
    let first = curve.first().map_or(f64::NAN, |r| r.total);
    let last = curve.last().map_or(f64::NAN, |r| r.total);
    println!(
        "{} examples, {} steps, {} trainable parameters, loss {first:.4e} -> {last:.4e}",
        data.len(),
        curve.len(),
        params.trainable_parameter_count()
    );
    output(rec, &a.out, |p| save_checkpoint(&trained, p))?;
    write_csv(&a.curve, &curve).context(&a.curve.display().to_string())?;
    rec.output(&a.curve);
    Ok(())
}

/// A prediction or ground truth: Gaussians or a surface.
enum Subject {
    Gaussians(GaussianSet),
    Surface(Mesh),
}

fn load_subject(path: &Path) -> Result<Subject, AssetError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext != "ply" {
        return load_mesh(path).map(Subject::Surface);
    }
    let bytes = read_bytes(path)?;
    match parse_splat_ply(&bytes) {
        Ok(g) => Ok(Subject::Gaussians(g)),
        Err(splat_err) => parse_mesh_ply(&bytes).map(Subject::Surface).map_err(|_| splat_err),
    }
}

impl Subject {
    fn samples(&self, count: usize, seed: u64) -> (Vec<gsanim_core::math::Vec3>, Vec<gsanim_core::math::Vec3>, String) {
        match self {
            Subject::Gaussians(g) => {
                let (p, n) = gaussian_samples(g);
                (p, n, "gaussian centers".into())
            }
            Subject::Surface(m) => {
                let (p, n) = m.sample_surface(count, seed);
                (p, n, format!("{count} area-weighted surface samples (seed {seed})"))
            }
        }
    }

    /// Color and coverage seen by `cam`; a surface has no color.
    fn view(&self, cam: &Camera) -> (Option<Image>, Image) {
        match self {
            Subject::Gaussians(g) => {
                let out: RenderOutput<f32> = rasterize(g, cam, [0.0; 3]);
                (Some(out.color), out.mask)
            }
            Subject::Surface(m) => (None, rasterize_mesh_geometry(m, cam).silhouette),
        }
    }
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    pred: String,
    truth: String,
    views: usize,
    geometry: GeometryReport,
    /// Coverage against coverage or silhouette.
    mask: ImageReport,
    /// Only when both sides are Gaussians.
    color: Option<ImageReport>,
}

#[derive(Debug, Serialize)]
struct EvaluationRow {
    cd_p2s_cm: f64,
    cd_s2p_cm: f64,
    nc: f64,
    fscore: f64,
    tau_cm: f64,
    mask_psnr: f64,
    mask_ssim: f64,
    color_psnr: Option<f64>,
    color_ssim: Option<f64>,
}

pub fn evaluate(a: &EvaluateArgs, seed: u64, rec: &mut Recorder) -> CliResult<()> {
    let pred = input(rec, &a.pred, load_subject)?;
    let truth = input(rec, &a.truth, load_subject)?;
    let rig = input(rec, &a.views, load_rig)?;
    if !(a.tau > 0.0) || a.samples == 0 {
        return Err(CliError::usage("--tau must be positive and --samples nonzero"));
    }
    rec.config(serde_json::json!({ "samples": a.samples, "tau_cm": a.tau }));
    let (pp, pn, ps) = pred.samples(a.samples, seed);
    let (tp, tn, ts) = truth.samples(a.samples, seed);
    let geometry = rec.time("geometry", || {
        GeometryReport::evaluate((&pp, &pn), (&tp, &tn), a.tau, &format!("pred: {ps}; truth: {ts}"))
    })?;
    let views: Vec<_> = rec.time("render", || rig.iter().map(|c| (pred.view(c), truth.view(c))).collect());
    let masks: Vec<(&Image, &Image)> = views.iter().map(|(p, t)| (&p.1, &t.1)).collect();
    let mask = ImageReport::evaluate(&masks)?;
    let colors: Option<Vec<(&Image, &Image)>> = views
        .iter()
        .map(|(p, t)| Some((p.0.as_ref()?, t.0.as_ref()?)))
        .collect();
    let color = colors.map(|c| ImageReport::evaluate(&c)).transpose()?;
    let report = EvaluationReport {
        pred: a.pred.display().to_string(),
        truth: a.truth.display().to_string(),
        views: rig.len(),
        geometry,
        mask,
        color,
    };
    println!(
        "CD {:.4}/{:.4} cm, NC {:.4}, F@{} cm {:.2}, mask PSNR {:.2} dB",
        report.geometry.cd_p2s,
        report.geometry.cd_s2p,
        report.geometry.nc,
        a.tau,
        report.geometry.fscore,
        report.mask.psnr
    );
    output(rec, &a.report, |p| save_json(&report, p))?;
    if let Some(csv) = &a.csv {
        let row = EvaluationRow {
            cd_p2s_cm: report.geometry.cd_p2s,
            cd_s2p_cm: report.geometry.cd_s2p,
            nc: report.geometry.nc,
            fscore: report.geometry.fscore,
            tau_cm: report.geometry.tau_cm,
            mask_psnr: report.mask.psnr,
            mask_ssim: report.mask.ssim,
            color_psnr: report.color.map(|c| c.psnr),
            color_ssim: report.color.map(|c| c.ssim),
        };
        write_csv(csv, &[row]).context(&csv.display().to_string())?;
        rec.output(csv);
    }
    Ok(())
}

pub fn bench_cmd(a: &BenchArgs, seed: u64, rec: &mut Recorder) -> CliResult<()> {
    if a.gaussians == 0 || a.iters == 0 || a.resolution == 0 {
        return Err(CliError::usage(
            "--gaussians, --iters and --resolution must be positive",
        ));
    }
    let (model, _) = gsanim_core::body_model::make_synthetic_body(seed, &SyntheticConfig::default());
    let shape = Shape::zeros(model.shape_dim);
    let mut set = scattered_gaussians(&model, a.gaussians, seed);
    bind_gaussians(&mut set, &model, &shape)?;
    let pose = demo_pose(&model);
    let posed = animate(&set, &model, &shape, &pose, true)?;
    let (c, r) = bounds(&posed.centers);
    let rig = four_view_rig(r * 1.1, a.resolution, c)?;
    let render_all = |g: &GaussianSet| {
        for cam in &rig {
            std::hint::black_box(rasterize::<f32>(g, cam, [0.0; 3]).without_workspace());
        }
    };
    let mut report = TimingReport::new();
    let name = format!("{:?}", a.stage).to_lowercase();
    match a.stage {
        BenchStage::Skin => report.run(&name, a.warmup, a.iters, || animate(&set, &model, &shape, &pose, false))?,
        BenchStage::Animate => report.run(&name, a.warmup, a.iters, || animate(&set, &model, &shape, &pose, true))?,
        BenchStage::Render => report.run(&name, a.warmup, a.iters, || render_all(&posed))?,
        BenchStage::Pipeline => report.run(&name, a.warmup, a.iters, || -> Result<(), gsanim_core::error::Error> {
            render_all(&animate(&set, &model, &shape, &pose, true)?);
            Ok(())
        })?,
    };
    rec.config(serde_json::json!({
        "stage": name,
        "gaussians": a.gaussians,
        "iters": a.iters,
        "warmup": a.warmup,
        "resolution": a.resolution,
    }));
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable report")
    );
    if let Some(p) = &a.report {
        output(rec, p, |p| save_json(&report, p))?;
    }
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64, rec: &mut Recorder) -> CliResult<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| AssetError::io(e, &a.out))?;
    let fx = avatar_fixture(seed, a.uv_resolution)?;
    let model = &fx.model;
    let shape = &fx.shape;
    let at = |name: &str| a.out.join(name);

    let source = model.rest_pose();
    let target = demo_pose(model);
    let scan = pose_target_body(model, shape, &source)?;
    let truth = pose_target_body(model, shape, &target)?;
    let (c, r) = bounds(&truth.vertices);
    let rig = four_view_rig(r * 1.1, 128, c)?;
    let camera = four_view_rig(r * 1.1, 256, c)?[0].clone();
    let params = NetworkParams::<f32>::new(
        NetConfig {
            seed,
            ..NetConfig::default()
        },
        ShareMode::Shared,
    );
    let train = TrainFile {
        seed,
        fixture_seed: seed,
        uv_resolution: a.uv_resolution,
        ..TrainFile::default()
    };

    output(rec, &at("model.json"), |p| save_model(model, p))?;
    output(rec, &at("scan.obj"), |p| save_mesh(&scan, p))?;
    output(rec, &at("source_pose.json"), |p| save_pose(&source, p))?;
    output(rec, &at("target_pose.json"), |p| save_pose(&target, p))?;
    output(rec, &at("canonical_pose.json"), |p| {
        save_pose(model.canonical_pose(), p)
    })?;
    output(rec, &at("texture.png"), |p| save_image(&procedural_texture(64), p))?;
    output(rec, &at("canonical.obj"), |p| save_mesh(&fx.canonical_mesh, p))?;
    output(rec, &at("truth.obj"), |p| save_mesh(&truth, p))?;
    output(rec, &at("rig.json"), |p| save_json(&rig.to_vec(), p))?;
    output(rec, &at("camera.json"), |p| save_json(&camera, p))?;
    output(rec, &at("init.ckpt"), |p| save_checkpoint(&params, p))?;
    output(rec, &at("train.json"), |p| save_json(&train, p))?;
    rec.config(serde_json::json!({ "uv_resolution": a.uv_resolution }));
    println!("wrote synthetic inputs to {}", a.out.display());
    Ok(())
}
