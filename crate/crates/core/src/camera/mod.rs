//! Pinhole camera on a ground robot: 3-DOF pose, map-to-camera transform,
//! projection, and semantic view rendering.
//!
//! Map frame: z up. Robot frame: x forward, y left. Camera frame: X right,
//! Y down, Z forward, mounted `cam_height` above the robot base.

mod render;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::wrap_angle;
use crate::worldmodel::MapInstance;

pub use render::render_semantic_view;

/// Points closer than this along the optical axis are treated as behind the camera.
pub const Z_NEAR: f64 = 0.1;
/// Slack around the image used for instance visibility.
pub const VISIBILITY_MARGIN_PX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub cam_height: f64,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        cam_height: f64,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image size must be non-zero".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        if !cam_height.is_finite() {
            return Err(Error::InvalidParameter("camera height must be finite".into()));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            cam_height,
        })
    }

    /// Whether a pixel coordinate falls inside the image grown by `margin`.
    pub fn in_bounds(&self, u: f64, v: f64, margin: f64) -> bool {
        u >= -0.5 - margin
            && u <= self.width as f64 - 0.5 + margin
            && v >= -0.5 - margin
            && v <= self.height as f64 - 0.5 + margin
    }
}

/// Planar robot pose in the map frame; `theta` is kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2<f64> {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Point in the camera frame (X right, Y down, Z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFramePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Continuous pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl PixelBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        PixelBox {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(
            0.5 * (self.u_min + self.u_max),
            0.5 * (self.v_min + self.v_max),
        )
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn contains_box(&self, other: &PixelBox) -> bool {
        other.u_min >= self.u_min
            && other.u_max <= self.u_max
            && other.v_min >= self.v_min
            && other.v_max <= self.v_max
    }
}

#[inline]
pub fn map_to_camera(p: &Point3<f64>, pose: &Pose2D, cam: &CameraModel) -> CameraFramePoint {
    let (s, c) = pose.theta.sin_cos();
    let dx = p.x - pose.x;
    let dy = p.y - pose.y;
    let forward = c * dx + s * dy;
    let left = -s * dx + c * dy;
    CameraFramePoint {
        x: -left,
        y: cam.cam_height - p.z,
        z: forward,
    }
}

/// Pixel coordinates, or `None` when the point is behind the near plane.
#[inline]
pub fn project_point(pc: &CameraFramePoint, cam: &CameraModel) -> Option<Point2<f64>> {
    (pc.z > Z_NEAR).then(|| Point2::new(cam.cx + cam.fx * pc.x / pc.z, cam.cy + cam.fy * pc.y / pc.z))
}

pub fn project_map_point(p: &Point3<f64>, pose: &Pose2D, cam: &CameraModel) -> Option<Point2<f64>> {
    project_point(&map_to_camera(p, pose, cam), cam)
}

/// Bounding box of the projected member points of `inst`, or `None` when the
/// instance has no point in front of the camera inside the widened image.
pub fn project_instance_bbox(inst: &MapInstance, pose: &Pose2D, cam: &CameraModel) -> Option<PixelBox> {
    let mut bbox: Option<PixelBox> = None;
    let mut any_inside = false;
    for p in &inst.points {
        let Some(px) = project_map_point(p, pose, cam) else {
            continue;
        };
        any_inside |= cam.in_bounds(px.x, px.y, VISIBILITY_MARGIN_PX);
        bbox = Some(match bbox {
            None => PixelBox::new(px.x, px.y, px.x, px.y),
            Some(b) => PixelBox::new(
                b.u_min.min(px.x),
                b.v_min.min(px.y),
                b.u_max.max(px.x),
                b.v_max.max(px.y),
            ),
        });
    }
    bbox.filter(|_| any_inside)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::worldmodel::SemanticClass;
    use proptest::prelude::*;

    fn cam() -> CameraModel {
        CameraModel::new(500.0, 500.0, 400.0, 300.0, 800, 600, 1.5).unwrap()
    }

    fn close(a: &CameraFramePoint, b: (f64, f64, f64)) -> bool {
        (a.x - b.0).abs() < 1e-12 && (a.y - b.1).abs() < 1e-12 && (a.z - b.2).abs() < 1e-12
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 4, 4, 1.5).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 1.0, 4, 4, 1.5).is_err());
        assert!(CameraModel::new(1.0, 1.0, 1.0, -1.0, 4, 4, 1.5).is_err());
    }

    #[test]
    fn pose_normalizes_theta() {
        let p = Pose2D::new(0.0, 0.0, 3.0 * std::f64::consts::PI);
        assert!((p.theta - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn map_to_camera_examples() {
        let c = cam();
        let origin = Pose2D::new(0.0, 0.0, 0.0);
        assert!(close(&map_to_camera(&Point3::new(10.0, 0.0, 1.5), &origin, &c), (0.0, 0.0, 10.0)));
        assert!(close(&map_to_camera(&Point3::new(10.0, 3.0, 1.5), &origin, &c), (-3.0, 0.0, 10.0)));
        let turned = Pose2D::new(0.0, 0.0, FRAC_PI_2);
        assert!(close(&map_to_camera(&Point3::new(0.0, 10.0, 1.5), &turned, &c), (0.0, 0.0, 10.0)));
    }

    #[test]
    fn project_point_examples() {
        let c = cam();
        let p = project_point(&CameraFramePoint { x: 0.0, y: 0.0, z: 10.0 }, &c).unwrap();
        assert_eq!((p.x, p.y), (400.0, 300.0));
        let p = project_point(&CameraFramePoint { x: -3.0, y: 0.0, z: 10.0 }, &c).unwrap();
        assert_eq!((p.x, p.y), (250.0, 300.0));
        assert!(project_point(&CameraFramePoint { x: 0.0, y: 0.0, z: -5.0 }, &c).is_none());
        assert!(project_point(&CameraFramePoint { x: 0.0, y: 0.0, z: Z_NEAR }, &c).is_none());
    }

    fn pole_at(x: f64, y: f64) -> MapInstance {
        MapInstance::from_points(
            0,
            SemanticClass::Pole,
            vec![Point3::new(x, y, 0.0), Point3::new(x, y, 2.0)],
        )
    }

    #[test]
    fn instance_bbox_of_vertical_pole() {
        // endpoints by hand: v = 300 + 500 * (1.5 - z) / 10 for z = 2 and z = 0
        let b = project_instance_bbox(&pole_at(10.0, 0.0), &Pose2D::new(0.0, 0.0, 0.0), &cam()).unwrap();
        assert!((b.v_min - 275.0).abs() < 1e-9);
        assert!((b.v_max - 375.0).abs() < 1e-9);
        assert!((b.u_min - 400.0).abs() < 1e-9 && (b.u_max - 400.0).abs() < 1e-9);
    }

    #[test]
    fn instance_behind_or_beside_not_visible() {
        let c = cam();
        let origin = Pose2D::new(0.0, 0.0, 0.0);
        assert!(project_instance_bbox(&pole_at(-10.0, 0.0), &origin, &c).is_none());
        assert!(project_instance_bbox(&pole_at(0.0, 10.0), &origin, &c).is_none());
        // 85 degrees off axis is still in front but far outside the image
        let (s, co) = 85f64.to_radians().sin_cos();
        assert!(project_instance_bbox(&pole_at(10.0 * co, 10.0 * s), &origin, &c).is_none());
    }

    proptest! {
        #[test]
        fn projection_matches_closed_form(
            px in -50.0..50.0f64, py in -50.0..50.0f64, theta in -3.2..3.2f64,
            depth in 1.0..100.0f64, lateral in -0.6..0.6f64, z in -2.0..6.0f64,
        ) {
            let c = cam();
            let pose = Pose2D::new(px, py, theta);
            // build the point from camera-frame coordinates, then check the round trip
            let left = -lateral * depth;
            let (s, co) = pose.theta.sin_cos();
            let p = Point3::new(px + co * depth - s * left, py + s * depth + co * left, z);
            let pc = map_to_camera(&p, &pose, &c);
            prop_assert!((pc.z - depth).abs() <= 1e-9 * depth.max(1.0));
            prop_assert!((pc.x + left).abs() <= 1e-9 * depth.max(1.0));
            prop_assert!((pc.y - (1.5 - z)).abs() <= 1e-9);
            let uv = project_point(&pc, &c).unwrap();
            let u = 400.0 + 500.0 * (-left) / depth;
            let v = 300.0 + 500.0 * (1.5 - z) / depth;
            prop_assert!((uv.x - u).abs() <= 1e-9 * u.abs().max(1.0));
            prop_assert!((uv.y - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
