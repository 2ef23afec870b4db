//! Pose estimation from consistency-graph cliques and end-to-end localization.

mod refine;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{map_to_camera, CameraModel, Pose2D, Z_NEAR};
use crate::consistency::{
    build_graph, generate_candidates, instance_proximity, ConsistencyGraph, ConsistencyParams, MatchContext,
};
use crate::descriptor::{compute_descriptor, DescriptorDb, GridSpec};
use crate::error::{Error, Result};
use crate::mcp::{max_clique_capped, remove_clique_edges, CliqueResult, DEFAULT_VERTEX_CAP};
use crate::pairpose::Correspondence;
use crate::util::round_sig;
use crate::worldmodel::{cluster_query_image, DEFAULT_MIN_AREA};
use crate::worldmodel::{MapInstance, QueryImage, QueryInstance, SemanticClass};

pub use refine::{huber, refine_pose, refine_pose_traced, RefineParams, RefineTrace, Reprojection};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseHypothesis {
    pub pose: Pose2D,
    pub correspondences: Vec<Correspondence>,
    pub support_count: usize,
    pub rank: usize,
}

/// Mean of the stored pair poses over all clique member pairs; the heading is
/// a circular mean.
pub fn initial_pose_from_clique(graph: &ConsistencyGraph, clique: &CliqueResult) -> Result<Pose2D> {
    if clique.size < 2 {
        return Err(Error::TooFewCorrespondences {
            needed: 2,
            got: clique.size,
        });
    }
    let (mut sx, mut sy, mut ss, mut sc, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &a) in clique.vertices.iter().enumerate() {
        for &b in &clique.vertices[k + 1..] {
            let sol = graph.pair_pose(a, b).ok_or_else(|| {
                Error::InvalidParameter(format!("no stored pose for clique pair ({a}, {b})"))
            })?;
            sx += sol.pose.x;
            sy += sol.pose.y;
            ss += sol.pose.theta.sin();
            sc += sol.pose.theta.cos();
            n += 1.0;
        }
    }
    Ok(Pose2D::new(sx / n, sy / n, ss.atan2(sc)))
}

/// Query instances explained at `pose` by some same-class, in-range map
/// instance in front of the camera.
pub fn support_count(
    pose: &Pose2D,
    query: &[QueryInstance],
    map: &[MapInstance],
    cam: &CameraModel,
    p: &ConsistencyParams,
) -> usize {
    let visible: Vec<&MapInstance> = map
        .iter()
        .filter(|m| {
            let z = map_to_camera(&m.centroid, pose, cam).z;
            z > Z_NEAR && z <= p.max_range
        })
        .collect();
    query
        .iter()
        .filter(|q| {
            visible
                .iter()
                .any(|m| m.class == q.class && instance_proximity(q, m, pose, cam, p))
        })
        .count()
}

/// Knobs for the verification loop beyond the consistency thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyParams {
    pub n_hypotheses: usize,
    pub refine: RefineParams,
    pub vertex_cap: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            n_hypotheses: 5,
            refine: RefineParams::default(),
            vertex_cap: DEFAULT_VERTEX_CAP,
        }
    }
}

/// Hypotheses plus the per-round refinement traces, in discovery order.
#[derive(Debug, Clone)]
pub struct Verification {
    pub hypotheses: Vec<PoseHypothesis>,
    pub traces: Vec<RefineTrace>,
}

/// Repeatedly takes the maximum clique, refines its pose, scores it and
/// removes its edges. Result sorted by support, earlier rounds first on ties.
pub fn verify_and_rank(
    graph: &ConsistencyGraph,
    query: &[QueryInstance],
    map: &[MapInstance],
    cam: &CameraModel,
    p: &ConsistencyParams,
    vp: &VerifyParams,
) -> Result<Verification> {
    if vp.n_hypotheses == 0 {
        return Err(Error::InvalidParameter("need at least one hypothesis".into()));
    }
    let mut g = graph.clone();
    let mut found = Vec::new();
    let mut traces = Vec::new();
    while found.len() < vp.n_hypotheses {
        let clique = max_clique_capped(&g.adjacency, vp.vertex_cap)?;
        if clique.size < 2 {
            break;
        }
        let init = initial_pose_from_clique(&g, &clique)?;
        let corrs: Vec<Correspondence> = clique.vertices.iter().map(|&v| g.vertices[v]).collect();
        let trace = refine_pose_traced(&init, &corrs, query, map, cam, &vp.refine)?;
        let pose = if trace.pose.is_finite() { trace.pose } else { init };
        found.push(PoseHypothesis {
            pose,
            support_count: support_count(&pose, query, map, cam, p),
            correspondences: corrs,
            rank: 0,
        });
        traces.push(trace);
        g = remove_clique_edges(g, &clique);
    }
    found.sort_by(|a, b| b.support_count.cmp(&a.support_count));
    for (k, h) in found.iter_mut().enumerate() {
        h.rank = k + 1;
    }
    Ok(Verification {
        hypotheses: found,
        traces,
    })
}

/// All parameters of one localization run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeParams {
    pub consistency: ConsistencyParams,
    pub verify: VerifyParams,
    pub bottom_cut: f64,
    pub min_area: usize,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        LocalizeParams {
            consistency: ConsistencyParams::default(),
            verify: VerifyParams::default(),
            bottom_cut: GridSpec::default().bottom_cut,
            min_area: DEFAULT_MIN_AREA,
        }
    }
}

impl LocalizeParams {
    pub fn validate(&self) -> Result<()> {
        self.consistency.validate()?;
        self.verify.refine.validate()?;
        if self.verify.n_hypotheses == 0 {
            return Err(Error::InvalidParameter("top-n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything produced by one call to [`localize_detailed`].
#[derive(Debug, Clone)]
pub struct Localization {
    pub hypotheses: Vec<PoseHypothesis>,
    pub query_instances: Vec<QueryInstance>,
    pub candidates: usize,
    pub edges: usize,
    pub traces: Vec<RefineTrace>,
}

/// Map-side inputs: clustered instances and the background descriptor DB.
pub struct MapArtifacts<'a> {
    pub instances: &'a [MapInstance],
    pub db: &'a DescriptorDb,
}

pub fn localize(art: &MapArtifacts, query: &QueryImage, p: &LocalizeParams) -> Result<Vec<PoseHypothesis>> {
    Ok(localize_detailed(art, query, p)?.hypotheses)
}

pub fn localize_detailed(art: &MapArtifacts, query: &QueryImage, p: &LocalizeParams) -> Result<Localization> {
    p.validate()?;
    if art.db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let (grid_h, grid_w) = art.db.grid();
    let grid = GridSpec {
        grid_h,
        grid_w,
        bottom_cut: p.bottom_cut,
    };
    grid.validate()?;
    let cam = &query.camera;
    let query_instances = cluster_query_image(query, p.min_area);
    let candidates = generate_candidates(&query_instances, art.instances);
    if candidates.len() > p.verify.vertex_cap {
        return Err(Error::GraphTooLarge {
            n: candidates.len(),
            cap: p.verify.vertex_cap,
        });
    }
    let desc = compute_descriptor(query, &grid);
    let ctx = MatchContext {
        query: &query_instances,
        map: art.instances,
        cam,
        db: art.db,
        query_descriptor: &desc,
        params: &p.consistency,
    };
    let graph = build_graph(&candidates, &ctx);
    let v = verify_and_rank(&graph, &query_instances, art.instances, cam, &p.consistency, &p.verify)?;
    tracing::debug!(
        instances = query_instances.len(),
        candidates = candidates.len(),
        edges = graph.edge_count(),
        hypotheses = v.hypotheses.len(),
        "localized"
    );
    Ok(Localization {
        hypotheses: v.hypotheses,
        candidates: candidates.len(),
        edges: graph.edge_count(),
        query_instances,
        traces: v.traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HypothesisRecord {
    rank: usize,
    x: f64,
    y: f64,
    theta_rad: f64,
    support_count: usize,
    correspondences: Vec<CorrespondenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorrespondenceRecord {
    query_id: usize,
    map_id: usize,
}

/// JSON array of hypotheses with floats rounded to nine significant digits.
pub fn hypotheses_to_json(hyps: &[PoseHypothesis]) -> String {
    let records: Vec<HypothesisRecord> = hyps
        .iter()
        .map(|h| HypothesisRecord {
            rank: h.rank,
            x: round_sig(h.pose.x, 9),
            y: round_sig(h.pose.y, 9),
            theta_rad: round_sig(h.pose.theta, 9),
            support_count: h.support_count,
            correspondences: h
                .correspondences
                .iter()
                .map(|c| CorrespondenceRecord {
                    query_id: c.query_idx,
                    map_id: c.map_idx,
                })
                .collect(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&records).expect("plain records serialize");
    s.push('\n');
    s
}

/// Parses [`hypotheses_to_json`] output. Correspondence classes are not
/// stored and come back as unlabeled.
pub fn hypotheses_from_json(text: &str, origin: &Path) -> Result<Vec<PoseHypothesis>> {
    let records: Vec<HypothesisRecord> = serde_json::from_str(text).map_err(|e| Error::Json {
        path: origin.to_path_buf(),
        source: e,
    })?;
    Ok(records
        .into_iter()
        .map(|r| PoseHypothesis {
            pose: Pose2D::new(r.x, r.y, r.theta_rad),
            support_count: r.support_count,
            rank: r.rank,
            correspondences: r
                .correspondences
                .into_iter()
                .map(|c| Correspondence {
                    query_idx: c.query_id,
                    map_idx: c.map_id,
                    class: SemanticClass::Unlabeled,
                })
                .collect(),
        })
        .collect())
}

pub fn write_hypotheses(hyps: &[PoseHypothesis], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, hypotheses_to_json(hyps)).map_err(|e| Error::io(path, e))
}

pub fn read_hypotheses(path: impl AsRef<Path>) -> Result<Vec<PoseHypothesis>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    hypotheses_from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::camera::render_semantic_view;
    use crate::descriptor::{build_descriptor_db, Region};
    use crate::pairpose::PairPoseSolution;
    use crate::worldmodel::{cluster_map_points, DEFAULT_MAP_CLUSTER_RADIUS};
    use crate::worldmodel::{BackgroundBox, LabeledPoint, SemanticMap};
    use nalgebra::{Point3, Vector3};

    fn sol(x: f64, y: f64, theta: f64) -> PairPoseSolution {
        PairPoseSolution {
            pose: Pose2D::new(x, y, theta),
            alpha: 0.5,
            distance: 10.0,
            size_error_px: 0.0,
        }
    }

    fn corr(q: usize, m: usize) -> Correspondence {
        Correspondence {
            query_idx: q,
            map_idx: m,
            class: SemanticClass::Pole,
        }
    }

    fn graph_with(poses: &[(usize, usize, PairPoseSolution)], n: usize) -> ConsistencyGraph {
        let mut g = ConsistencyGraph::new((0..n).map(|k| corr(k, k)).collect());
        for &(i, j, s) in poses {
            g.add_edge(i, j, s);
        }
        g
    }

    #[test]
    fn initial_pose_examples() {
        let g = graph_with(&[(0, 1, sol(3.0, 4.0, 0.1))], 2);
        let clique = CliqueResult { vertices: vec![0, 1], size: 2 };
        let p = initial_pose_from_clique(&g, &clique).unwrap();
        assert!((p.x - 3.0).abs() < 1e-12 && (p.y - 4.0).abs() < 1e-12 && (p.theta - 0.1).abs() < 1e-12);

        let a = 170f64.to_radians();
        let g = graph_with(&[(0, 1, sol(0.0, 0.0, a)), (0, 2, sol(0.0, 0.0, -a)), (1, 2, sol(0.0, 0.0, PI))], 3);
        let clique = CliqueResult { vertices: vec![0, 1, 2], size: 3 };
        let p = initial_pose_from_clique(&g, &clique).unwrap();
        assert!((p.theta.abs() - PI).abs() < 1e-9);

        let s = sol(1.0, 2.0, 0.3);
        let g = graph_with(&[(0, 1, s), (0, 2, s), (1, 2, s)], 3);
        let p = initial_pose_from_clique(&g, &clique).unwrap();
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12 && (p.theta - 0.3).abs() < 1e-12);

        let one = CliqueResult { vertices: vec![0], size: 1 };
        assert!(initial_pose_from_clique(&g, &one).is_err());
    }

    #[test]
    fn edgeless_graph_gives_no_hypotheses() {
        let g = graph_with(&[], 4);
        let cam = CameraModel::new(200.0, 200.0, 200.0, 150.0, 400, 300, 1.5).unwrap();
        let v = verify_and_rank(&g, &[], &[], &cam, &ConsistencyParams::default(), &VerifyParams::default()).unwrap();
        assert!(v.hypotheses.is_empty());
    }

    #[test]
    fn json_roundtrip() {
        let h = PoseHypothesis {
            pose: Pose2D::new(1.0 / 3.0, -2.5, 0.25),
            correspondences: vec![corr(0, 4), corr(2, 7)],
            support_count: 2,
            rank: 1,
        };
        let text = hypotheses_to_json(&[h]);
        assert!(text.contains("\"theta_rad\": 0.25"));
        assert!(text.contains("0.333333333"));
        let back = hypotheses_from_json(&text, Path::new("x.json")).unwrap();
        assert_eq!(back[0].correspondences[1].map_idx, 7);
        assert_eq!(back[0].rank, 1);
        assert_eq!(hypotheses_to_json(&[]), "[]\n");
    }

    fn column(points: &mut Vec<LabeledPoint>, class: SemanticClass, x: f64, y: f64, h: f64) {
        for p in crate::synthworld::point_column(x, y, h, crate::synthworld::COLUMN_SPACING_M) {
            points.push(LabeledPoint { position: p, class });
        }
    }

    /// A street with building walls on both sides and six poles.
    fn street() -> SemanticMap {
        let mut pts = Vec::new();
        let spots = [(8.0, 4.0, 4.0), (14.0, -4.0, 5.0), (20.0, 4.5, 3.5), (26.0, -4.5, 6.0), (12.0, 5.0, 3.0), (30.0, 3.5, 4.5)];
        for &(x, y, h) in &spots {
            column(&mut pts, SemanticClass::Pole, x, y, h);
        }
        let wall = |y: f64, class| BackgroundBox {
            center: Point3::new(20.0, y, 6.0),
            extents: Vector3::new(80.0, 4.0, 12.0),
            yaw: 0.0,
            class,
        };
        SemanticMap {
            labeled_points: pts,
            background_boxes: vec![
                wall(9.0, SemanticClass::Building),
                wall(-9.0, SemanticClass::Wall),
                BackgroundBox {
                    center: Point3::new(20.0, 0.0, -0.05),
                    extents: Vector3::new(80.0, 14.0, 0.1),
                    yaw: 0.0,
                    class: SemanticClass::Road,
                },
            ],
        }
    }

    #[test]
    fn end_to_end_on_a_street() {
        let map = street();
        let cam = CameraModel::new(200.0, 200.0, 200.0, 150.0, 400, 300, 1.5).unwrap();
        let instances = cluster_map_points(&map, DEFAULT_MAP_CLUSTER_RADIUS);
        assert_eq!(instances.len(), 6);
        let db = build_descriptor_db(&map, &cam, &Region::new(-4.0, -2.0, 6.0, 2.0), 2.0, PI / 6.0, &GridSpec::default()).unwrap();
        let art = MapArtifacts { instances: &instances, db: &db };
        let gt = Pose2D::new(0.7, 0.4, 0.05);
        let img = render_semantic_view(&map, &gt, &cam);
        let out = localize_detailed(&art, &img, &LocalizeParams::default()).unwrap();
        assert!(out.query_instances.len() >= 5, "{}", out.query_instances.len());
        let top = &out.hypotheses[0];
        assert!((top.pose.position() - gt.position()).norm() < 1.0, "{:?}", top.pose);
        assert!(out.hypotheses.windows(2).all(|w| w[0].support_count >= w[1].support_count));
        assert!(out.hypotheses.len() <= 5);
        for t in &out.traces {
            assert!(t.costs.windows(2).all(|w| w[1] <= w[0]));
        }
        let again = localize(&art, &img, &LocalizeParams::default()).unwrap();
        assert_eq!(again, out.hypotheses);

        let mut blank = QueryImage::blank(cam);
        blank.labels.fill(SemanticClass::Road.id());
        assert!(localize(&art, &blank, &LocalizeParams::default()).unwrap().is_empty());
    }
}
