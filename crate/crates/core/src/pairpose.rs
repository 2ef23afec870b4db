//! Camera pose from two instance correspondences.
//!
//! The angle between the two image bearings pins the camera to an
//! inscribed-angle circle through the two map instances. The pixel height of
//! one instance gives its distance through the pinhole scale relation
//! `s_i = f * s_m / Z`, and intersecting the two loci leaves at most two
//! positions. The one whose predicted size for the second instance is closer
//! to the observation wins.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Pose2D, Z_NEAR};
use crate::error::{Error, Result};
use crate::worldmodel::{MapInstance, QueryInstance, SemanticClass};

pub const MIN_CHORD_M: f64 = 0.5;
pub const MIN_ALPHA_RAD: f64 = 2.0 * std::f64::consts::PI / 180.0;
pub const MAX_ALPHA_RAD: f64 = 178.0 * std::f64::consts::PI / 180.0;
const TANGENCY_TOL_M: f64 = 1e-6;

/// Hypothesized pairing of a query instance with a same-class map instance.
/// Indices are instance ids, which are positions in their instance lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Correspondence {
    pub query_idx: usize,
    pub map_idx: usize,
    pub class: SemanticClass,
}

impl Correspondence {
    pub fn new(query: &QueryInstance, map: &MapInstance) -> Self {
        debug_assert_eq!(query.class, map.class);
        Correspondence {
            query_idx: query.id,
            map_idx: map.id,
            class: query.class,
        }
    }

    /// True when both share a query or a map instance.
    pub fn conflicts_with(&self, other: &Correspondence) -> bool {
        self.query_idx == other.query_idx || self.map_idx == other.map_idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPoseSolution {
    pub pose: Pose2D,
    /// Angle between the two bearings.
    pub alpha: f64,
    /// Horizontal camera-to-anchor distance.
    pub distance: f64,
    /// |predicted - observed| pixel height of the non-anchor instance.
    pub size_error_px: f64,
}

/// Horizontal angle of the instance's bbox center off the optical axis,
/// positive to the right.
pub fn bearing(inst: &QueryInstance, cam: &CameraModel) -> f64 {
    ((inst.bbox.center().x - cam.cx) / cam.fx).atan()
}

/// Depth along the optical axis from metric and pixel heights.
pub fn distance_from_scale(s_m: f64, s_i: f64, fy: f64) -> Result<f64> {
    if !(s_m > 0.0) || !(s_i >= 1.0) || !(fy > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scale relation needs s_m > 0, s_i >= 1, fy > 0 (got {s_m}, {s_i}, {fy})"
        )));
    }
    Ok(fy * s_m / s_i)
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

struct Side<'a> {
    corr: &'a Correspondence,
    query: &'a QueryInstance,
    map: &'a MapInstance,
    bearing: f64,
}

impl Side<'_> {
    fn ground(&self) -> Point2<f64> {
        self.map.ground_centroid()
    }
}

/// Solves the pose implied by correspondences `c1` and `c2`; `None` when the
/// pair is degenerate or geometrically infeasible. Symmetric in its arguments.
pub fn solve_pair_pose<'a>(
    c1: &'a Correspondence,
    c2: &'a Correspondence,
    query: &'a [QueryInstance],
    map: &'a [MapInstance],
    cam: &CameraModel,
) -> Option<PairPoseSolution> {
    if c1 == c2 {
        return None;
    }
    let make = |c: &'a Correspondence| -> Option<Side<'a>> {
        let q = query.get(c.query_idx)?;
        let m = map.get(c.map_idx)?;
        (q.class == m.class).then(|| Side {
            corr: c,
            query: q,
            map: m,
            bearing: bearing(q, cam),
        })
    };
    let s1 = make(c1)?;
    let s2 = make(c2)?;

    let alpha = (s1.bearing - s2.bearing).abs();
    if !(MIN_ALPHA_RAD..=MAX_ALPHA_RAD).contains(&alpha) {
        return None;
    }
    // left in the image = smaller bearing
    let (left, right) = if s1.bearing < s2.bearing { (&s1, &s2) } else { (&s2, &s1) };
    let chord = left.ground() - right.ground();
    let c = chord.norm();
    if c <= MIN_CHORD_M {
        return None;
    }

    // camera positions that see `right` -> `left` turning counterclockwise by
    // alpha lie on the arc left of the directed chord right -> left
    let n_left = Vector2::new(-chord.y, chord.x) / c;
    let mid = Point2::from((left.ground().coords + right.ground().coords) / 2.0);
    let radius = c / (2.0 * alpha.sin());
    let center = mid + n_left * (c / (2.0 * alpha.tan()));

    // anchor: larger pixel height, ties by correspondence order
    let (anchor, other) = match s1.query.size_px.total_cmp(&s2.query.size_px) {
        std::cmp::Ordering::Greater => (&s1, &s2),
        std::cmp::Ordering::Less => (&s2, &s1),
        std::cmp::Ordering::Equal if s1.corr <= s2.corr => (&s1, &s2),
        std::cmp::Ordering::Equal => (&s2, &s1),
    };
    let z = distance_from_scale(anchor.map.size_m, anchor.query.size_px, cam.fy).ok()?;
    let x = z * anchor.bearing.tan();
    let dist = x.hypot(z);

    // circle(center, radius) against circle(anchor, dist)
    let pa = anchor.ground();
    let to_anchor = pa - center;
    let d0 = to_anchor.norm();
    if d0 <= 0.0 || dist > radius + d0 + TANGENCY_TOL_M || dist < (radius - d0).abs() - TANGENCY_TOL_M {
        return None;
    }
    let a = (d0 * d0 + radius * radius - dist * dist) / (2.0 * d0);
    let h2 = radius * radius - a * a;
    let h = if h2 > 0.0 { h2.sqrt() } else { 0.0 };
    let axis = to_anchor / d0;
    let base = center + axis * a;
    let perp = Vector2::new(-axis.y, axis.x);
    let mut candidates = vec![base + perp * h];
    if h > TANGENCY_TOL_M {
        candidates.push(base - perp * h);
    }

    let mut best: Option<PairPoseSolution> = None;
    for cpos in candidates {
        let to_l = left.ground() - cpos;
        let to_r = right.ground() - cpos;
        if cross(to_r, to_l) <= 0.0 {
            continue;
        }
        let to_a = pa - cpos;
        let theta = to_a.y.atan2(to_a.x) + anchor.bearing;
        let pose = Pose2D::new(cpos.x, cpos.y, theta);
        let (s, co) = pose.theta.sin_cos();
        let depth = |p: Point2<f64>| co * (p.x - cpos.x) + s * (p.y - cpos.y);
        let z_other = depth(other.ground());
        if depth(pa) <= Z_NEAR || z_other <= Z_NEAR {
            continue;
        }
        let predicted = cam.fy * other.map.size_m / z_other;
        let err = (predicted - other.query.size_px).abs();
        if best.map_or(true, |b| err < b.size_error_px) {
            best = Some(PairPoseSolution {
                pose,
                alpha,
                distance: dist,
                size_error_px: err,
            });
        }
    }
    best
}
