use nalgebra::Point2;

use super::{map_to_camera, project_point, CameraFramePoint, CameraModel, Pose2D, Z_NEAR};
use crate::worldmodel::{QueryImage, SemanticClass, SemanticMap};

/// Physical side of the square drawn for each foreground point.
const SPLAT_SIZE_M: f64 = 0.2;

const BOX_FACES: [[usize; 4]; 6] = [
    [0, 1, 2, 3],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
];

struct Face {
    depth: f64,
    class: SemanticClass,
    verts: [CameraFramePoint; 4],
}

/// Clips a convex polygon to the half-space `z > Z_NEAR`.
fn clip_near(poly: &[CameraFramePoint]) -> Vec<CameraFramePoint> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let a_in = a.z > Z_NEAR;
        let b_in = b.z > Z_NEAR;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            // nudge past the plane so the vertex projects
            let t = (Z_NEAR * (1.0 + 1e-9) - a.z) / (b.z - a.z);
            out.push(CameraFramePoint {
                x: a.x + t * (b.x - a.x),
                y: a.y + t * (b.y - a.y),
                z: a.z + t * (b.z - a.z),
            });
        }
    }
    out
}

/// Fills the convex polygon `pts` (pixel coordinates); a pixel is covered when
/// its center lies inside.
fn fill_convex(img: &mut QueryImage, pts: &[Point2<f64>], class: SemanticClass) {
    if pts.len() < 3 {
        return;
    }
    let (w, h) = (img.width as i64, img.height as i64);
    let vmin = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let vmax = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let row0 = (vmin.ceil() as i64).max(0);
    let row1 = (vmax.floor() as i64).min(h - 1);
    let id = class.id();
    for row in row0..=row1 {
        let y = row as f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..pts.len() {
            let a = pts[i];
            let b = pts[(i + 1) % pts.len()];
            if (a.y <= y && y <= b.y) || (b.y <= y && y <= a.y) {
                if a.y == b.y {
                    lo = lo.min(a.x.min(b.x));
                    hi = hi.max(a.x.max(b.x));
                } else {
                    let x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
        }
        if lo > hi {
            continue;
        }
        let c0 = (lo.ceil() as i64).max(0);
        let c1 = (hi.floor() as i64).min(w - 1);
        if c0 > c1 {
            continue;
        }
        let base = (row * w) as usize;
        img.labels[base + c0 as usize..=base + c1 as usize].fill(id);
    }
}

/// Rasterizes the map as seen from `pose`.
///
/// Background box faces are painted far-to-near by face-centroid depth, then
/// foreground points are splatted (also far-to-near) as squares of
/// `max(1, round(fx * 0.2 / Z))` pixels. Unwritten pixels stay unlabeled.
pub fn render_semantic_view(map: &SemanticMap, pose: &Pose2D, cam: &CameraModel) -> QueryImage {
    let mut img = QueryImage::blank(*cam);
    let (w, h) = (cam.width as f64, cam.height as f64);

    let mut faces: Vec<(usize, Face)> = Vec::new();
    for b in &map.background_boxes {
        let corners = b.corners().map(|c| map_to_camera(&c, pose, cam));
        if corners.iter().all(|c| c.z <= Z_NEAR) {
            continue;
        }
        // frustum cull when every corner is in front and off one image side
        if corners.iter().all(|c| c.z > Z_NEAR) {
            let px: Vec<_> = corners.iter().filter_map(|c| project_point(c, cam)).collect();
            if px.iter().all(|p| p.x < -0.5)
                || px.iter().all(|p| p.x > w - 0.5)
                || px.iter().all(|p| p.y < -0.5)
                || px.iter().all(|p| p.y > h - 0.5)
            {
                continue;
            }
        }
        for f in BOX_FACES {
            let verts = f.map(|i| corners[i]);
            let depth = verts.iter().map(|v| v.z).sum::<f64>() / 4.0;
            faces.push((
                faces.len(),
                Face {
                    depth,
                    class: b.class,
                    verts,
                },
            ));
        }
    }
    faces.sort_by(|a, b| b.1.depth.total_cmp(&a.1.depth).then(a.0.cmp(&b.0)));
    for (_, face) in &faces {
        let clipped = clip_near(&face.verts);
        let pts: Vec<_> = clipped.iter().filter_map(|c| project_point(c, cam)).collect();
        fill_convex(&mut img, &pts, face.class);
    }

    let mut splats: Vec<(f64, usize, Point2<f64>, SemanticClass)> = map
        .labeled_points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.class.is_foreground())
        .filter_map(|(i, p)| {
            let pc = map_to_camera(&p.position, pose, cam);
            project_point(&pc, cam).map(|uv| (pc.z, i, uv, p.class))
        })
        .collect();
    splats.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (z, _, uv, class) in splats {
        let side = (cam.fx * SPLAT_SIZE_M / z).round().max(1.0);
        let half = (side - 1.0) / 2.0;
        let u0 = (uv.x - half).round();
        let v0 = (uv.y - half).round();
        if u0 + side <= 0.0 || v0 + side <= 0.0 || u0 >= w || v0 >= h {
            continue;
        }
        let (u0, v0, side) = (u0 as i64, v0 as i64, side as i64);
        for v in v0.max(0)..(v0 + side).min(h as i64) {
            for u in u0.max(0)..(u0 + side).min(w as i64) {
                img.set(u as u32, v as u32, class);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use nalgebra::{Point3, Vector3};

    use super::*;
    use crate::worldmodel::{BackgroundBox, LabeledPoint};

    fn cam() -> CameraModel {
        CameraModel::new(200.0, 200.0, 200.0, 150.0, 400, 300, 1.5).unwrap()
    }

    #[test]
    fn empty_map_is_unlabeled() {
        let img = render_semantic_view(&SemanticMap::default(), &Pose2D::new(0.0, 0.0, 0.0), &cam());
        assert!(img.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn road_slab_fills_lower_rows() {
        let map = SemanticMap {
            labeled_points: vec![],
            background_boxes: vec![BackgroundBox {
                center: Point3::new(100.25, 0.0, -0.05),
                extents: Vector3::new(199.5, 400.0, 0.1),
                yaw: 0.0,
                class: SemanticClass::Road,
            }],
        };
        let c = cam();
        let img = render_semantic_view(&map, &Pose2D::new(0.0, 0.0, 0.0), &c);
        // the far edge (x = 200) of the top face sits at v = cy + fy * 1.5 / 200 = 151.5;
        // the near edge (x = 0.5) projects far below the image
        for v in 0..c.height {
            for u in [0, c.width / 2, c.width - 1] {
                let expected = if v as f64 >= 151.5 {
                    SemanticClass::Road
                } else {
                    SemanticClass::Unlabeled
                };
                // rows close to the horizon see the slab's side faces, skip them
                if (v as f64 - 151.5).abs() < 2.0 {
                    continue;
                }
                assert_eq!(img.label(u, v), expected, "pixel ({u}, {v})");
            }
        }
    }

    #[test]
    fn nearer_box_wins() {
        let wall = |x: f64, class| BackgroundBox {
            center: Point3::new(x, 0.0, 2.0),
            extents: Vector3::new(1.0, 10.0, 4.0),
            yaw: 0.0,
            class,
        };
        let map = SemanticMap {
            labeled_points: vec![],
            // listed near first to make sure ordering comes from depth
            background_boxes: vec![wall(10.0, SemanticClass::Wall), wall(20.0, SemanticClass::Building)],
        };
        let c = cam();
        let img = render_semantic_view(&map, &Pose2D::new(0.0, 0.0, 0.0), &c);
        assert_eq!(img.label(200, 140), SemanticClass::Wall);
        let bigger = SemanticMap {
            labeled_points: vec![],
            background_boxes: vec![
                wall(10.0, SemanticClass::Wall),
                BackgroundBox {
                    center: Point3::new(20.0, 0.0, 10.0),
                    extents: Vector3::new(1.0, 40.0, 20.0),
                    yaw: 0.0,
                    class: SemanticClass::Building,
                },
            ],
        };
        let img = render_semantic_view(&bigger, &Pose2D::new(0.0, 0.0, 0.0), &c);
        assert_eq!(img.label(200, 140), SemanticClass::Wall);
        // above the near wall's top edge (z = 4 at 9.5 m) only the building remains
        assert_eq!(img.label(200, 20), SemanticClass::Building);
    }

    #[test]
    fn pole_on_axis_is_centered() {
        let points = (0..=60)
            .map(|k| LabeledPoint {
                position: Point3::new(10.0, 0.0, k as f64 * 0.1),
                class: SemanticClass::Pole,
            })
            .collect();
        let map = SemanticMap {
            labeled_points: points,
            background_boxes: vec![],
        };
        let c = cam();
        let img = render_semantic_view(&map, &Pose2D::new(0.0, 0.0, 0.0), &c);
        // splat side round(200 * 0.2 / 10) = 4 px starting at round(200 - 1.5)
        for u in 199..=202 {
            assert_eq!(img.label(u, 150), SemanticClass::Pole);
        }
        assert_eq!(img.label(198, 150), SemanticClass::Unlabeled);
        assert_eq!(img.label(203, 150), SemanticClass::Unlabeled);
        let inst = crate::worldmodel::cluster_query_image(&img, 25);
        assert_eq!(inst.len(), 1);
    }
}
