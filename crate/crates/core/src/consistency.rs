//! Correspondence candidates, pairwise consistency and the consistency graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{map_to_camera, project_instance_bbox, CameraModel, PixelBox, Pose2D, Z_NEAR};
use crate::descriptor::{DescriptorDb, GridHistogramDescriptor, DEFAULT_MAX_XY_DIST_M};
use crate::error::{Error, Result};
use crate::mcp::Adjacency;
use crate::pairpose::{solve_pair_pose, Correspondence, PairPoseSolution};
use crate::worldmodel::{MapInstance, QueryInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyParams {
    pub bs_threshold: f64,
    /// Centroid distance limit in pixels at the reference depth.
    pub m_d: f64,
    /// Width and height difference limit in pixels at the reference depth.
    pub m_s: f64,
    pub d_ref: f64,
    pub m_min: f64,
    pub max_range: f64,
    /// Farthest DB entry accepted for a background lookup.
    pub db_max_xy_dist: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            bs_threshold: 0.9,
            m_d: 110.0,
            m_s: 50.0,
            d_ref: 8.0,
            m_min: 5.0,
            max_range: 200.0,
            db_max_xy_dist: DEFAULT_MAX_XY_DIST_M,
        }
    }
}

impl ConsistencyParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0..=1.0).contains(&self.bs_threshold) {
            return bad(format!("bs_threshold {} outside [0, 1]", self.bs_threshold));
        }
        if !(self.m_min >= 1.0) || !(self.m_d >= self.m_min) || !(self.m_s >= self.m_min) {
            return bad(format!(
                "need m_d, m_s >= m_min >= 1 (got {}, {}, {})",
                self.m_d, self.m_s, self.m_min
            ));
        }
        if !(self.d_ref > 0.0) || !(self.max_range > 0.0) || !(self.db_max_xy_dist >= 0.0) {
            return bad("d_ref, max_range must be positive".into());
        }
        Ok(())
    }
}

/// Every same-class (query, map) pairing, ordered by query id then map id.
pub fn generate_candidates(query: &[QueryInstance], map: &[MapInstance]) -> Vec<Correspondence> {
    let mut out: Vec<Correspondence> = query
        .iter()
        .flat_map(|q| map.iter().filter(move |m| m.class == q.class).map(move |m| Correspondence::new(q, m)))
        .collect();
    out.sort();
    out
}

/// Depth-adaptive `(θ_d, θ_s)` in pixels.
pub fn adaptive_thresholds(z_c: f64, p: &ConsistencyParams) -> Result<(f64, f64)> {
    if !(z_c > 0.0) {
        return Err(Error::InvalidParameter(format!("depth must be positive, got {z_c}")));
    }
    let law = |m: f64| (p.d_ref * m / z_c).max(p.m_min).min(m);
    Ok((law(p.m_d), law(p.m_s)))
}

/// Box comparison behind [`check_instance_proximity`].
pub fn boxes_proximate(projected: &PixelBox, observed: &PixelBox, z_c: f64, p: &ConsistencyParams) -> bool {
    let Ok((theta_d, theta_s)) = adaptive_thresholds(z_c, p) else {
        return false;
    };
    let dc = (projected.center() - observed.center()).norm();
    let dh = (projected.height() - observed.height()).abs();
    let dw = (projected.width() - observed.width()).abs();
    dc <= theta_d && dh <= theta_s && dw <= theta_s
}

fn clip_to_image(b: PixelBox, cam: &CameraModel) -> PixelBox {
    let (w, h) = (cam.width as f64 - 0.5, cam.height as f64 - 0.5);
    PixelBox::new(
        b.u_min.clamp(-0.5, w),
        b.v_min.clamp(-0.5, h),
        b.u_max.clamp(-0.5, w),
        b.v_max.clamp(-0.5, h),
    )
}

/// Projects the map instance from `pose` and compares its box with the
/// observed one. The projection is clipped to the image, since the observed
/// box can only cover the visible part.
pub fn check_instance_proximity(
    c: &Correspondence,
    pose: &Pose2D,
    query: &[QueryInstance],
    map: &[MapInstance],
    cam: &CameraModel,
    p: &ConsistencyParams,
) -> bool {
    let (Some(q), Some(m)) = (query.get(c.query_idx), map.get(c.map_idx)) else {
        return false;
    };
    instance_proximity(q, m, pose, cam, p)
}

pub(crate) fn instance_proximity(
    q: &QueryInstance,
    m: &MapInstance,
    pose: &Pose2D,
    cam: &CameraModel,
    p: &ConsistencyParams,
) -> bool {
    projected_box(m, pose, cam, p).is_some_and(|(bbox, z_c)| boxes_proximate(&bbox, &q.bbox, z_c, p))
}

/// Image-clipped projected box of `m` and its centroid depth, or `None` when
/// the instance is behind the camera, out of range or outside the view.
pub fn projected_box(
    m: &MapInstance,
    pose: &Pose2D,
    cam: &CameraModel,
    p: &ConsistencyParams,
) -> Option<(PixelBox, f64)> {
    let z_c = map_to_camera(&m.centroid, pose, cam).z;
    if z_c <= Z_NEAR || z_c > p.max_range {
        return None;
    }
    let bbox = project_instance_bbox(m, pose, cam)?;
    Some((clip_to_image(bbox, cam), z_c))
}

/// Read-only inputs shared by all pair evaluations of one query.
#[derive(Clone, Copy)]
pub struct MatchContext<'a> {
    pub query: &'a [QueryInstance],
    pub map: &'a [MapInstance],
    pub cam: &'a CameraModel,
    pub db: &'a DescriptorDb,
    pub query_descriptor: &'a GridHistogramDescriptor,
    pub params: &'a ConsistencyParams,
}

impl MatchContext<'_> {
    /// Background similarity test at `pose`.
    pub fn background_matches(&self, pose: &Pose2D) -> bool {
        let Some(i) = self.db.nearest(pose, self.params.db_max_xy_dist) else {
            return false;
        };
        self.db
            .similarity_to(i, self.query_descriptor)
            .is_ok_and(|s| s >= self.params.bs_threshold)
    }
}

/// The pair pose when `ci` and `cj` are mutually consistent.
pub fn is_consistent(ci: &Correspondence, cj: &Correspondence, ctx: &MatchContext) -> Option<PairPoseSolution> {
    if ci.conflicts_with(cj) {
        return None;
    }
    let sol = solve_pair_pose(ci, cj, ctx.query, ctx.map, ctx.cam)?;
    if !ctx.background_matches(&sol.pose) {
        return None;
    }
    let ip = |c: &Correspondence| check_instance_proximity(c, &sol.pose, ctx.query, ctx.map, ctx.cam, ctx.params);
    (ip(ci) && ip(cj)).then_some(sol)
}

#[derive(Debug, Clone)]
pub struct ConsistencyGraph {
    pub vertices: Vec<Correspondence>,
    pub adjacency: Adjacency,
    pair_pose: BTreeMap<(usize, usize), PairPoseSolution>,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

impl ConsistencyGraph {
    pub fn new(vertices: Vec<Correspondence>) -> Self {
        let n = vertices.len();
        ConsistencyGraph {
            vertices,
            adjacency: Adjacency::new(n),
            pair_pose: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn add_edge(&mut self, i: usize, j: usize, sol: PairPoseSolution) {
        if i == j {
            return;
        }
        self.adjacency.add_edge(i, j);
        self.pair_pose.insert(key(i, j), sol);
    }

    pub fn remove_edge(&mut self, i: usize, j: usize) {
        self.adjacency.remove_edge(i, j);
        self.pair_pose.remove(&key(i, j));
    }

    pub fn pair_pose(&self, i: usize, j: usize) -> Option<&PairPoseSolution> {
        self.pair_pose.get(&key(i, j))
    }

    pub fn edge_count(&self) -> usize {
        self.pair_pose.len()
    }

    /// One `i j` line per edge, `i < j`, ascending.
    pub fn edge_list(&self) -> String {
        let mut s = String::new();
        for (i, j) in self.adjacency.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.edge_list()).map_err(|e| Error::io(path, e))
    }
}

fn consistent_pairs(candidates: &[Correspondence], ctx: &MatchContext, i: usize) -> Vec<(usize, usize, PairPoseSolution)> {
    (i + 1..candidates.len())
        .filter_map(|j| is_consistent(&candidates[i], &candidates[j], ctx).map(|s| (i, j, s)))
        .collect()
}

/// Evaluates every unordered candidate pair in parallel.
pub fn build_graph(candidates: &[Correspondence], ctx: &MatchContext) -> ConsistencyGraph {
    let edges: Vec<Vec<_>> = (0..candidates.len())
        .into_par_iter()
        .map(|i| consistent_pairs(candidates, ctx, i))
        .collect();
    assemble(candidates, edges)
}

pub fn build_graph_sequential(candidates: &[Correspondence], ctx: &MatchContext) -> ConsistencyGraph {
    let edges: Vec<Vec<_>> = (0..candidates.len())
        .map(|i| consistent_pairs(candidates, ctx, i))
        .collect();
    assemble(candidates, edges)
}

fn assemble(candidates: &[Correspondence], edges: Vec<Vec<(usize, usize, PairPoseSolution)>>) -> ConsistencyGraph {
    let mut g = ConsistencyGraph::new(candidates.to_vec());
    for (i, j, s) in edges.into_iter().flatten() {
        g.add_edge(i, j, s);
    }
    tracing::debug!(vertices = g.len(), edges = g.edge_count(), "consistency graph");
    g
}
