use stereo_completion::geometry::Extrinsics;
use stereo_completion::grid::{ImageGrid, InvDepthMap};
use stereo_completion::metrics::mae;
use stereo_completion::pipeline::{complete, ignns_completion, PipelineConfig, PipelineInputs};
use stereo_completion::smoothing::Tensor;
use stereo_completion::synth::{perturb_and_project, render_scene, scene_points, Perturbation, Rect, SceneSpec};
use stereo_completion::Error;

fn inputs(seed: u64) -> (PipelineInputs, InvDepthMap) {
    perturbed_inputs(seed, Extrinsics::identity())
}

fn perturbed_inputs(seed: u64, perturbation: Extrinsics) -> (PipelineInputs, InvDepthMap) {
    let spec = SceneSpec {
        width: 128,
        height: 80,
        f: 200.0,
        rectangles: vec![
            Rect { depth: 6.0, x0: 20, y0: 10, x1: 60, y1: 50 },
            Rect { depth: 14.0, x0: 75, y0: 15, x1: 115, y1: 45 },
        ],
        ..SceneSpec::default()
    };
    let scene = render_scene(&spec, seed).unwrap();
    let points = scene_points(&spec, &scene).unwrap();
    let (sparse, _) =
        perturb_and_project(&points, &scene.k, &perturbation, spec.width, spec.height, &scene.geometry).unwrap();
    let gt = scene.gt.clone();
    (PipelineInputs { i1: scene.i1, i2: scene.i2, sparse, k: scene.k, geometry: scene.geometry }, gt)
}

fn config() -> PipelineConfig {
    PipelineConfig { radius: Some(3.0), ..PipelineConfig::default() }
}

#[test]
fn end_to_end_beats_interpolation_only_under_misprojection() {
    let yaw = Perturbation { rotation_deg: [0.0, 1.0, 0.0], translation: [0.0; 3] }.extrinsics();
    let (inp, gt) = perturbed_inputs(1, yaw);
    let out = complete(&inp, &PipelineConfig { theta_calib_deg: 1.0, ..PipelineConfig::default() }).unwrap();
    assert!(out.depth.is_dense() && out.d_ssm.is_dense());
    let (e, b) =
        (mae(&out.depth, &gt).unwrap(), mae(&ignns_completion(&inp.sparse, &inp.i1, 0.04).unwrap(), &gt).unwrap());
    assert!(e < b, "{e} vs {b}");
    let (before, after) = out.tgv_energy.unwrap();
    assert!(after <= before);
    let stages: Vec<_> = out.timings.iter().map(|t| t.stage).collect();
    assert_eq!(stages, ["assign", "interpolate", "correspondences", "selection", "ground", "tensor", "smoothing"]);
}

#[test]
fn skip_smoothing_returns_selection() {
    let (inp, _) = inputs(2);
    let out = complete(&inp, &PipelineConfig { skip_smoothing: true, ..config() }).unwrap();
    assert_eq!(out.depth, out.d_ssm);
    assert!(out.tgv_energy.is_none());
}

#[test]
fn ground_mask_off_leaves_tensors_to_depth_jumps() {
    let (inp, _) = inputs(3);
    let on = complete(&inp, &PipelineConfig { skip_smoothing: true, ..config() }).unwrap();
    let off = complete(&inp, &PipelineConfig { skip_smoothing: true, ground_mask: false, ..config() }).unwrap();
    assert!(on.plane.is_some() && on.ground.count() > 0 && on.ground_sparse.count() > 0);
    assert!(off.plane.is_none() && off.ground.count() == 0 && off.ground_sparse.count() == 0);
    assert_eq!(on.d_ssm, off.d_ssm);
    // Ground forces the identity tensor; without it some ground pixels keep a cut.
    let (w, h) = (on.badt.width(), on.badt.height());
    for y in 0..h {
        for x in 0..w {
            if on.ground.get(x, y) {
                assert_eq!(on.badt.get(x, y), Tensor::Identity);
            } else {
                assert_eq!(on.badt.get(x, y), off.badt.get(x, y));
            }
        }
    }
    let cut_ground =
        (0..w * h).filter(|&i| on.ground.get(i % w, i / w) && off.badt.get(i % w, i / w) != Tensor::Identity).count();
    assert!(cut_ground > 0);
}

#[test]
fn input_errors() {
    let (inp, _) = inputs(4);
    let cfg = config();
    let small = PipelineInputs { i2: ImageGrid::constant(10, 10, 0.5).unwrap(), ..inp.clone() };
    assert!(matches!(complete(&small, &cfg), Err(Error::Dimension(_))));
    let empty = PipelineInputs { sparse: InvDepthMap::empty(128, 80), ..inp.clone() };
    assert!(matches!(complete(&empty, &cfg), Err(Error::NoData(_))));
    let bad = PipelineConfig { min_candidates: 0, ..cfg.clone() };
    assert!(matches!(complete(&inp, &bad), Err(Error::Config(_))));
    let no_radius = PipelineConfig { radius: None, theta_scan_deg: 0.0, ..cfg };
    assert!(matches!(complete(&inp, &no_radius), Err(Error::Config(_))));
}
