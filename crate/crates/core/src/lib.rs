//! Dense depth from sparse LiDAR and a stereo pair.
//!
//! Every LiDAR return within a small radius of a pixel is a candidate for that pixel's depth.
//! Pixels without candidates borrow them through image-guided interpolation. Each candidate is
//! scored by how well it explains the stereo pair, and loopy belief propagation picks one per
//! pixel. A fitted ground plane and depth discontinuities then shape an anisotropic TGV
//! smoothing of the result.
//!
//! Depth maps are [`InvDepthMap`]s holding inverse depth `1/D` in 1/m, with `None` for empty
//! pixels. [`pipeline::complete`] runs all stages.
//!
//! ```
//! use stereo_completion::pipeline::{complete, PipelineConfig, PipelineInputs};
//! use stereo_completion::synth::{perturb_and_project, render_scene, scene_points, SceneSpec};
//! use stereo_completion::geometry::Extrinsics;
//!
//! let spec = SceneSpec { width: 96, height: 64, rectangles: vec![], ..SceneSpec::default() };
//! let scene = render_scene(&spec, 7)?;
//! let points = scene_points(&spec, &scene)?;
//! let (sparse, _) = perturb_and_project(&points, &scene.k, &Extrinsics::identity(), 96, 64, &scene.geometry)?;
//! let inputs = PipelineInputs { i1: scene.i1, i2: scene.i2, sparse, k: scene.k, geometry: scene.geometry };
//! let cfg = PipelineConfig { radius: Some(2.0), ..PipelineConfig::default() };
//! let out = complete(&inputs, &cfg)?;
//! assert!(out.depth.is_dense());
//! # Ok::<(), stereo_completion::Error>(())
//! ```

// Negated comparisons such as `!(x > 0.0)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod camera;
pub mod candidates;
pub mod cost;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod ground;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod radius;
pub mod smoothing;
pub mod ssm;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{ImageGrid, InvDepthMap, Pixel};

#[cfg(doctest)]
mod book {
    macro_rules! chapters {
        ($($name:ident => $file:literal),* $(,)?) => {
            $(
                #[doc = include_str!(concat!("../../../book/src/", $file))]
                mod $name {}
            )*
        };
    }

    chapters! {
        introduction => "introduction.md",
        geometry => "geometry.md",
        candidates => "candidates.md",
        selection => "selection.md",
        smoothing => "smoothing.md",
        calibration => "calibration.md",
        evaluation => "evaluation.md",
        formats => "formats.md",
        cli => "cli.md",
    }
}
