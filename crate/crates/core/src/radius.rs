//! Candidate search radius from the expected calibration error and the scanline spacing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusInputs {
    /// Focal length [pixel].
    pub f: f64,
    /// Expected rotational calibration error [deg].
    pub theta_calib: f64,
    /// Angle between neighbouring scanlines [deg].
    pub theta_scan: f64,
}

/// Pixel footprint of an angular error `theta_deg` at focal length `f`.
pub fn angular_spread(f: f64, theta_deg: f64) -> Result<f64> {
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::Domain(format!("focal length must be positive, got {f}")));
    }
    if !(0.0..90.0).contains(&theta_deg) {
        return Err(Error::Domain(format!("angle must lie in [0, 90) degrees, got {theta_deg}")));
    }
    Ok(f * theta_deg.to_radians().tan())
}

/// Smallest radius covering both the calibration error and the gap between scanlines.
pub fn optimal_radius(inputs: &RadiusInputs) -> Result<f64> {
    let calib = angular_spread(inputs.f, inputs.theta_calib)?;
    let scan = angular_spread(inputs.f, inputs.theta_scan)?;
    Ok(calib.max(scan))
}
