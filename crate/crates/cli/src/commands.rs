use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::json;
use stereo_completion::calib::calibrate as run_calibration;
use stereo_completion::camera::rotation_to_degrees;
use stereo_completion::cost::CostContext;
use stereo_completion::geometry::{project_points, sparse_map_from_projection};
use stereo_completion::io::{read_depth, read_image, read_ply, write_depth, write_image, write_ply};
use stereo_completion::metrics::evaluate;
use stereo_completion::pipeline::{complete as run_pipeline, with_workers, PipelineInputs, StageTiming};
use stereo_completion::ssm::SourceMap;
use stereo_completion::synth::{perturb_and_project, render_scene, scene_points, SceneSpec};
use stereo_completion::{Error, Result};

use crate::config::{CameraConfig, PoseConfig, RunConfig};
use crate::manifest::{self, to_value, Manifest};
use crate::{CalibrateArgs, CommonArgs, CompleteArgs, EvalArgs, Switch, SynthArgs};

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.override_camera(common.fx, common.baseline)?;
    if common.workers.is_some() {
        cfg.pipeline.workers = common.workers;
    }
    Ok(cfg)
}

fn same_size(a: &Path, (w, h): (usize, usize), b: &Path, (w2, h2): (usize, usize)) -> Result<()> {
    if (w, h) != (w2, h2) {
        return Err(Error::Dimension(format!("{} is {w}x{h} but {} is {w2}x{h2}", a.display(), b.display())));
    }
    Ok(())
}

fn sources_csv(sources: &SourceMap) -> String {
    let mut s = String::from("x,y,source_x,source_y\n");
    for y in 0..sources.height() {
        for x in 0..sources.width() {
            let p = sources.get(x, y);
            let _ = writeln!(s, "{x},{y},{},{}", p.x, p.y);
        }
    }
    s
}

pub fn complete(a: CompleteArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let p = &mut cfg.pipeline;
    p.skip_smoothing |= a.skip_smoothing;
    if let Some(g) = a.ground_mask {
        p.ground_mask = g == Switch::On;
    }
    if a.radius.is_some() {
        p.radius = a.radius;
    }
    if let Some(t) = a.theta_calib {
        p.theta_calib_deg = t;
    }
    p.validate()?;
    let geometry = cfg.geometry()?;

    let mut manifest = Manifest::new("complete", &cfg)?;
    let i1 = read_image(&a.left)?;
    let i2 = read_image(&a.right)?;
    let (w, h) = (i1.width(), i1.height());
    same_size(&a.left, (w, h), &a.right, (i2.width(), i2.height()))?;
    let k = cfg.intrinsics(w, h)?;
    manifest.input(&a.left)?;
    manifest.input(&a.right)?;
    let sparse = match (&a.sparse, &a.points) {
        (Some(path), _) => {
            let map = read_depth(path)?;
            same_size(&a.left, (w, h), path, (map.width(), map.height()))?;
            manifest.input(path)?;
            map
        }
        (None, Some(path)) => {
            let cloud = read_ply(path)?;
            manifest.input(path)?;
            let projected = project_points(&cloud.points, &k, &cfg.extrinsics(), w, h, &geometry)?;
            sparse_map_from_projection(&projected, w, h)
        }
        (None, None) => return Err(Error::Config("one of --sparse or --points is required".into())),
    };

    let inputs = PipelineInputs { i1, i2, sparse, k, geometry };
    let out = run_pipeline(&inputs, &cfg.pipeline)?;

    write_depth(&a.output, &out.depth)?;
    manifest.output(&a.output)?;
    if let Some(path) = &a.ssm_output {
        write_depth(path, &out.d_ssm)?;
        manifest.output(path)?;
    }
    if let Some(path) = &a.sources_output {
        fs::write(path, sources_csv(&out.sources))?;
        manifest.output(path)?;
    }
    manifest.seeds.insert("ransac", cfg.pipeline.ransac.seed);
    manifest.timings = out.timings.clone();
    manifest.summary = json!({
        "width": w,
        "height": h,
        "intrinsics": to_value(&k)?,
        "radius_px": out.radius,
        "sparse_pixels": inputs.sparse.count_valid(),
        "ssm_iterations": out.ssm_iterations,
        "ssm_converged": out.ssm_converged,
        "ground_plane": out.plane.map(|p| json!({ "normal": [p.normal.x, p.normal.y, p.normal.z], "offset": p.offset })),
        "ground_pixels": out.ground.count(),
        "tgv_energy": out.tgv_energy.map(|(before, after)| json!({ "initial": before, "final": after })),
    });
    manifest.write(&a.manifest.clone().unwrap_or_else(|| manifest::default_path(&a.output)))
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    cfg.calibration.options.use_background &= !a.no_background_term;
    cfg.calibration.grid.validate()?;
    let geometry = cfg.geometry()?;

    let mut manifest = Manifest::new("calibrate", &cfg)?;
    let i1 = read_image(&a.left)?;
    let i2 = read_image(&a.right)?;
    let (w, h) = (i1.width(), i1.height());
    same_size(&a.left, (w, h), &a.right, (i2.width(), i2.height()))?;
    let k = cfg.intrinsics(w, h)?;
    let cloud = read_ply(&a.points)?;
    for path in [&a.left, &a.right, &a.points] {
        manifest.input(path)?;
    }

    let start = Instant::now();
    let ctx = CostContext::new(i1, i2, geometry, cfg.pipeline.cost)?;
    let initial = cfg.extrinsics();
    let result = with_workers(cfg.pipeline.workers, || {
        run_calibration(&cloud.points, &ctx, &k, &initial, &cfg.calibration.grid, &cfg.calibration.options)
    })?;
    manifest.timings.push(StageTiming { stage: "calibrate", seconds: start.elapsed().as_secs_f64() });

    let r = result.extrinsics.rotation;
    let t = result.extrinsics.translation;
    let best = json!({
        "rotation_deg": rotation_to_degrees(&r),
        "rotation_matrix": [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]],
        "translation": [t.x, t.y, t.z],
        "score": result.score,
        "points_used": result.points_used,
        "candidates": result.table.len(),
        "background_term": cfg.calibration.options.use_background,
    });
    let text = serde_json::to_string_pretty(&best).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&a.output, text + "\n")?;
    manifest.output(&a.output)?;
    if let Some(path) = &a.table {
        fs::write(path, result.table_csv())?;
        manifest.output(path)?;
    }
    manifest.seeds.insert("subsample", cfg.calibration.options.seed);
    manifest.summary = best;
    manifest.write(&a.manifest.clone().unwrap_or_else(|| manifest::default_path(&a.output)))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.scene {
        Some(path) => SceneSpec::from_toml(&fs::read_to_string(path)?)?,
        None => {
            let spec = SceneSpec::default();
            spec.validate()?;
            spec
        }
    };
    let mut manifest = Manifest::new("synth", &spec)?;
    if let Some(path) = &a.scene {
        manifest.input(path)?;
    }
    let start = Instant::now();
    let scene = render_scene(&spec, a.seed)?;
    let points = scene_points(&spec, &scene)?;
    let (sparse, _) = perturb_and_project(
        &points,
        &scene.k,
        &spec.perturbation.extrinsics(),
        spec.width,
        spec.height,
        &scene.geometry,
    )?;
    manifest.timings.push(StageTiming { stage: "render", seconds: start.elapsed().as_secs_f64() });

    fs::create_dir_all(&a.out_dir)?;
    let camera = RunConfig {
        camera: Some(CameraConfig {
            fx: scene.k.fx,
            fy: Some(scene.k.fy),
            cx: Some(scene.k.cx),
            cy: Some(scene.k.cy),
            baseline: spec.baseline,
        }),
        extrinsics: PoseConfig {
            rotation_deg: spec.perturbation.rotation_deg,
            translation: spec.perturbation.translation,
        },
        ..RunConfig::default()
    };
    let d = &a.out_dir;
    write_image(&d.join("left.pgm"), &scene.i1)?;
    write_image(&d.join("right.pgm"), &scene.i2)?;
    write_depth(&d.join("gt.pfm"), &scene.gt)?;
    write_depth(&d.join("sparse.pfm"), &sparse)?;
    write_ply(&d.join("points.ply"), &points, None)?;
    fs::write(d.join("config.toml"), camera.to_toml()?)?;
    for name in ["left.pgm", "right.pgm", "gt.pfm", "sparse.pfm", "points.ply", "config.toml"] {
        manifest.output(&d.join(name))?;
    }
    manifest.seeds.insert("scene", a.seed);
    manifest.summary = json!({ "lidar_points": points.len(), "sparse_pixels": sparse.count_valid() });
    manifest.write(&d.join("manifest.json"))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(b) = a.buckets {
        cfg.eval.buckets = b;
    }
    let geometry = cfg.geometry()?;
    let est = read_depth(&a.estimate)?;
    let gt = read_depth(&a.gt)?;
    let report = evaluate(&est, &gt, &geometry, &cfg.eval.buckets)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    println!("{text}");
    let Some(path) = &a.output else { return Ok(()) };
    let mut manifest = Manifest::new("eval", &cfg)?;
    manifest.input(&a.estimate)?;
    manifest.input(&a.gt)?;
    fs::write(path, text + "\n")?;
    manifest.output(path)?;
    manifest.summary = to_value(&report)?;
    manifest.write(&manifest::default_path(path))
}
