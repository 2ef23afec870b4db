//! Comparison methods: exhaustive descriptor search and RANSAC over
//! correspondence pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{PixelBox, Pose2D};
use crate::consistency::{boxes_proximate, generate_candidates, projected_box, MatchContext};
use crate::descriptor::{compute_descriptor, DescriptorDb, GridSpec};
use crate::error::{Error, Result};
use crate::estimator::{refine_pose, support_count, LocalizeParams, MapArtifacts, PoseHypothesis, RefineParams};
use crate::pairpose::{solve_pair_pose, Correspondence};
use crate::worldmodel::{cluster_query_image, QueryImage};

pub const DEFAULT_RANSAC_ITERS: usize = 50_000;

/// Pose of the DB entry most similar to the query; ties go to the lowest
/// entry index.
pub fn brute_force_localize(db: &DescriptorDb, query: &QueryImage, bottom_cut: f64) -> Result<Pose2D> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let (grid_h, grid_w) = db.grid();
    let grid = GridSpec { grid_h, grid_w, bottom_cut };
    grid.validate()?;
    let desc = compute_descriptor(query, &grid);
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..db.len() {
        let s = db.similarity_to(i, &desc)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(db.pose(best.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub hypothesis: PoseHypothesis,
    /// Inlier count of the best pose so far, after every iteration.
    pub best_counts: Vec<usize>,
    /// Inlier count of the winning pose before refinement.
    pub inliers: usize,
}

/// Candidates whose projected map instance matches the observed box at `pose`.
fn inliers_at(pose: &Pose2D, candidates: &[Correspondence], ctx: &MatchContext, boxes: &mut Vec<Option<Option<(PixelBox, f64)>>>) -> Vec<usize> {
    boxes.iter_mut().for_each(|b| *b = None);
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let slot = &mut boxes[c.map_idx];
            let proj = *slot.get_or_insert_with(|| projected_box(&ctx.map[c.map_idx], pose, ctx.cam, ctx.params));
            proj.is_some_and(|(bbox, z)| boxes_proximate(&bbox, &ctx.query[c.query_idx].bbox, z, ctx.params))
        })
        .map(|(k, _)| k)
        .collect()
}

/// Samples candidate pairs, keeps the pair pose that passes the background
/// test and explains the most candidates, then refines it on a one-to-one
/// subset of its inliers.
pub fn ransac_localize(
    candidates: &[Correspondence],
    ctx: &MatchContext,
    iters: usize,
    seed: u64,
    refine: &RefineParams,
) -> Result<Option<RansacOutcome>> {
    let n = candidates.len();
    if n < 2 {
        return Err(Error::TooFewCorrespondences { needed: 2, got: n });
    }
    if iters == 0 {
        return Err(Error::InvalidParameter("RANSAC needs at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes = vec![None; ctx.map.len()];
    let mut best: Option<(Pose2D, Vec<usize>)> = None;
    let mut best_count = 0;
    let mut best_counts = Vec::with_capacity(iters);
    for _ in 0..iters {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if let Some(sol) = solve_pair_pose(&candidates[i], &candidates[j], ctx.query, ctx.map, ctx.cam) {
            if ctx.background_matches(&sol.pose) {
                let inl = inliers_at(&sol.pose, candidates, ctx, &mut boxes);
                if best.is_none() || inl.len() > best_count {
                    best_count = inl.len();
                    best = Some((sol.pose, inl));
                }
            }
        }
        best_counts.push(best_count);
    }
    let Some((pose, inl)) = best else {
        return Ok(None);
    };
    let mut chosen: Vec<Correspondence> = Vec::new();
    for &k in &inl {
        if chosen.iter().all(|c| !c.conflicts_with(&candidates[k])) {
            chosen.push(candidates[k]);
        }
    }
    let refined = if chosen.len() >= 2 {
        let (p, _) = refine_pose(&pose, &chosen, ctx.query, ctx.map, ctx.cam, refine)?;
        if p.is_finite() {
            p
        } else {
            pose
        }
    } else {
        pose
    };
    Ok(Some(RansacOutcome {
        hypothesis: PoseHypothesis {
            pose: refined,
            support_count: support_count(&refined, ctx.query, ctx.map, ctx.cam, ctx.params),
            correspondences: chosen,
            rank: 1,
        },
        best_counts,
        inliers: best_count,
    }))
}

/// [`ransac_localize`] on a label image, over the same candidate set the
/// proposed method sees. Fewer than two candidates gives `None`.
pub fn ransac_localize_image(
    art: &MapArtifacts,
    query: &QueryImage,
    p: &LocalizeParams,
    iters: usize,
    seed: u64,
) -> Result<Option<RansacOutcome>> {
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
    let instances = cluster_query_image(query, p.min_area);
    let candidates = generate_candidates(&instances, art.instances);
    if candidates.len() < 2 {
        return Ok(None);
    }
    let desc = compute_descriptor(query, &grid);
    let ctx = MatchContext {
        query: &instances,
        map: art.instances,
        cam: &query.camera,
        db: art.db,
        query_descriptor: &desc,
        params: &p.consistency,
    };
    ransac_localize(&candidates, &ctx, iters, seed, &p.verify.refine)
}
