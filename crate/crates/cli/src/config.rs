use std::path::Path;

use serde::{Deserialize, Serialize};
use stereo_completion::calib::{CalibOptions, SearchGrid};
use stereo_completion::camera::{CameraIntrinsics, StereoGeometry};
use stereo_completion::geometry::Extrinsics;
use stereo_completion::pipeline::PipelineConfig;
use stereo_completion::synth::Perturbation;
use stereo_completion::{Error, Result};

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub camera: Option<CameraConfig>,
    /// LiDAR-to-camera pose used to project `.ply` points and as the calibration start.
    pub extrinsics: PoseConfig,
    pub pipeline: PipelineConfig,
    pub calibration: CalibrationConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    /// Defaults to `fx`.
    pub fy: Option<f64>,
    /// Principal point; defaults to the image center `(W/2, H/2)`.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    /// Stereo baseline [m].
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    /// Rotation about x, y, z [deg], applied in that order.
    pub rotation_deg: [f64; 3],
    /// [m]
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub grid: SearchGrid,
    pub options: CalibOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Depth bucket edges [m]; buckets are `[lo, hi)`.
    pub buckets: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { buckets: vec![0.0, 20.0, 40.0, 80.0] }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn camera(&self) -> Result<CameraConfig> {
        self.camera
            .ok_or_else(|| Error::Config("camera parameters missing: set [camera] or pass --fx and --baseline".into()))
    }

    pub fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let c = self.camera()?;
        CameraIntrinsics::new(
            c.fx,
            c.fy.unwrap_or(c.fx),
            c.cx.unwrap_or(width as f64 / 2.0),
            c.cy.unwrap_or(height as f64 / 2.0),
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn geometry(&self) -> Result<StereoGeometry> {
        let c = self.camera()?;
        StereoGeometry::rectified(c.fx, c.baseline).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn extrinsics(&self) -> Extrinsics {
        Perturbation { rotation_deg: self.extrinsics.rotation_deg, translation: self.extrinsics.translation }
            .extrinsics()
    }

    /// Applies `--fx` / `--baseline`; a camera section is created when both are given.
    pub fn override_camera(&mut self, fx: Option<f64>, baseline: Option<f64>) -> Result<()> {
        match (&mut self.camera, fx, baseline) {
            (_, None, None) => {}
            (Some(c), fx, b) => {
                c.fx = fx.unwrap_or(c.fx);
                c.baseline = b.unwrap_or(c.baseline);
            }
            (None, Some(fx), Some(baseline)) => {
                self.camera = Some(CameraConfig { fx, fy: None, cx: None, cy: None, baseline });
            }
            (None, _, _) => {
                return Err(Error::Config(
                    "--fx and --baseline must be given together without a [camera] section".into(),
                ))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.override_camera(Some(300.0), Some(0.5)).unwrap();
        cfg.pipeline.radius = Some(3.0);
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn shipped_schema_lists_the_defaults() {
        let cfg: RunConfig = toml::from_str(include_str!("../../../configs/example.toml")).unwrap();
        let mut expected = RunConfig::default();
        expected.override_camera(Some(300.0), Some(0.54)).unwrap();
        assert_eq!(cfg, expected);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[pipeline]\nlambda = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[camera]\nfx = 1.0\n").is_err());
    }

    #[test]
    fn partial_camera_override() {
        let mut cfg = RunConfig::default();
        assert!(cfg.override_camera(Some(300.0), None).is_err());
        cfg.override_camera(Some(300.0), Some(0.5)).unwrap();
        cfg.override_camera(None, Some(0.25)).unwrap();
        assert_eq!(cfg.camera().unwrap().baseline, 0.25);
        assert_eq!(cfg.intrinsics(100, 50).unwrap().cx, 50.0);
    }
}
