//! Pinhole camera model and the interaction matrix (image Jacobian).
//!
//! The metric image plane uses coordinates `(x, y) = (lambda X / z_c,
//! lambda Y / z_c)`; pixel coordinates fold in the per-axis pixel focal
//! lengths and the principal point. The interaction matrix is expressed in
//! pixels per millimeter so that `d_feature = L_m * d_position` holds in the
//! units the controller works in.

use nalgebra::{Matrix2x3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("point depth must be positive, got {0}")]
    BehindCamera(f64),
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraIntrinsics {
    /// Focal length, x, in pixels.
    pub lambda_x: f64,
    /// Focal length, y, in pixels.
    pub lambda_y: f64,
    /// Principal point (pixels).
    pub c_x: f64,
    pub c_y: f64,
    /// Focal length in millimeters.
    pub lambda: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            lambda_x: 500.0,
            lambda_y: 500.0,
            c_x: 355.0,
            c_y: 355.0,
            lambda: 1.0,
            width: 710.0,
            height: 710.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda_x > 0.0 && self.lambda_y > 0.0 && self.lambda > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if !(0.0 <= self.c_x && self.c_x < self.width && 0.0 <= self.c_y && self.c_y < self.height)
        {
            return Err("principal point must lie inside the image".into());
        }
        Ok(())
    }

    pub fn principal_point(&self) -> PixelFeature {
        PixelFeature {
            u: self.c_x,
            v: self.c_y,
        }
    }
}

/// A tracked feature in pixel coordinates (real-valued).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelFeature {
    pub u: f64,
    pub v: f64,
}

impl PixelFeature {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { u: v[0], v: v[1] }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn in_image(&self, intr: &CameraIntrinsics) -> bool {
        (0.0..intr.width).contains(&self.u) && (0.0..intr.height).contains(&self.v)
    }
}

/// Interaction matrix evaluated at a feature and depth, in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    /// Full 2x6 matrix (translational | rotational blocks), pixel-scaled.
    pub l_o: SMatrix<f64, 2, 6>,
    /// Translational 2x3 block (pixels per mm); exactly the left block of `l_o`.
    pub l_m: Matrix2x3<f64>,
    /// Depth the matrix was evaluated at (mm).
    pub depth_used: f64,
}

/// Project a camera-frame point (mm) to pixel coordinates.
pub fn project(
    point_camera: &Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Result<PixelFeature, CameraError> {
    if !point_camera.iter().all(|x| x.is_finite()) {
        return Err(CameraError::NonFinite("project point"));
    }
    let z = point_camera.z;
    if z <= 0.0 {
        return Err(CameraError::BehindCamera(z));
    }
    let x = intr.lambda * point_camera.x / z;
    let y = intr.lambda * point_camera.y / z;
    Ok(PixelFeature {
        u: intr.lambda_x * x / intr.lambda + intr.c_x,
        v: intr.lambda_y * y / intr.lambda + intr.c_y,
    })
}

/// Invert [`project`] at a known depth.
pub fn back_project(
    feature: &PixelFeature,
    depth: f64,
    intr: &CameraIntrinsics,
) -> Result<Vector3<f64>, CameraError> {
    if !feature.is_finite() || !depth.is_finite() {
        return Err(CameraError::NonFinite("back_project"));
    }
    if depth <= 0.0 {
        return Err(CameraError::BehindCamera(depth));
    }
    Ok(Vector3::new(
        (feature.u - intr.c_x) * depth / intr.lambda_x,
        (feature.v - intr.c_y) * depth / intr.lambda_y,
        depth,
    ))
}

/// The 2x6 interaction matrix in metric image-plane units, before pixel
/// scaling. Rows map camera (v, omega) to image-plane velocity (mm focal
/// units).
pub(crate) fn metric_interaction(x: f64, y: f64, z_c: f64, lambda: f64) -> SMatrix<f64, 2, 6> {
    SMatrix::<f64, 2, 6>::from_row_slice(&[
        -lambda / z_c,
        0.0,
        x / z_c,
        x * y / lambda,
        -(lambda * lambda + x * x) / lambda,
        y,
        0.0,
        -lambda / z_c,
        y / z_c,
        -(lambda * lambda + y * y) / lambda,
        -x * y / lambda,
        -x,
    ])
}

/// Interaction matrix at a pixel feature and depth, with the pixel scale
/// factors folded into the rows so `l_m` outputs pixels per millimeter.
pub fn interaction_matrix(
    feature: &PixelFeature,
    depth: f64,
    intr: &CameraIntrinsics,
) -> Result<InteractionMatrix, CameraError> {
    if depth <= 0.0 {
        return Err(CameraError::BehindCamera(depth));
    }
    if !feature.is_finite() {
        return Err(CameraError::NonFinite("interaction_matrix feature"));
    }
    // back-projected metric image-plane coordinates
    let x = (feature.u - intr.c_x) * intr.lambda / intr.lambda_x;
    let y = (feature.v - intr.c_y) * intr.lambda / intr.lambda_y;
    let mut l_o = metric_interaction(x, y, depth, intr.lambda);
    let row_scale = [intr.lambda_x / intr.lambda, intr.lambda_y / intr.lambda];
    for (r, s) in row_scale.iter().enumerate() {
        for c in 0..6 {
            l_o[(r, c)] *= s;
        }
    }
    let l_m = Matrix2x3::from(l_o.fixed_view::<2, 3>(0, 0));
    Ok(InteractionMatrix {
        l_o,
        l_m,
        depth_used: depth,
    })
}

/// First-order feature-motion prediction from a camera translation.
pub fn predict_feature_motion(l_m: &Matrix2x3<f64>, dp: &Vector3<f64>) -> Vector2<f64> {
    l_m * dp
}
