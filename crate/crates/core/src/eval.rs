//! Pose errors, success conditions and Top-N reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Pose2D;
use crate::error::{Error, Result};
use crate::estimator::PoseHypothesis;
use crate::util::{round_sig, wrap_angle};

pub const YAW_BOUND_RAD: f64 = std::f64::consts::PI / 6.0;
/// Cut-offs reported for every condition.
pub const TOP_K: [usize; 3] = [1, 3, 5];
pub const FRAME_NOTE: &str =
    "position errors in the ground-truth robot frame (x forward, y left); yaw error within 30 deg for every condition";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    Pm5,
    Pm10,
    FrontDrift,
}

impl ConditionName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionName::Pm5 => "pm5",
            ConditionName::Pm10 => "pm10",
            ConditionName::FrontDrift => "front_drift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalCondition {
    pub name: ConditionName,
    /// Bound on |error| along the robot x axis.
    pub longitudinal_m: f64,
    /// Bound on |error| along the robot y axis.
    pub lateral_m: f64,
    pub yaw_rad: f64,
}

impl EvalCondition {
    pub fn pm5() -> Self {
        EvalCondition {
            name: ConditionName::Pm5,
            longitudinal_m: 5.0,
            lateral_m: 5.0,
            yaw_rad: YAW_BOUND_RAD,
        }
    }

    pub fn pm10() -> Self {
        EvalCondition {
            name: ConditionName::Pm10,
            longitudinal_m: 10.0,
            lateral_m: 10.0,
            yaw_rad: YAW_BOUND_RAD,
        }
    }

    pub fn front_drift() -> Self {
        EvalCondition {
            name: ConditionName::FrontDrift,
            longitudinal_m: 200.0,
            lateral_m: 5.0,
            yaw_rad: YAW_BOUND_RAD,
        }
    }

    pub fn all() -> [EvalCondition; 3] {
        [Self::pm5(), Self::pm10(), Self::front_drift()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Error of `est` expressed in the robot frame of `gt`.
pub fn pose_error(est: &Pose2D, gt: &Pose2D) -> PoseError {
    let (s, c) = gt.theta.sin_cos();
    let dx = est.x - gt.x;
    let dy = est.y - gt.y;
    PoseError {
        x: c * dx + s * dy,
        y: -s * dx + c * dy,
        yaw: wrap_angle(est.theta - gt.theta),
    }
}

pub fn check_condition(err: &PoseError, cond: &EvalCondition) -> bool {
    err.x.abs() <= cond.longitudinal_m && err.y.abs() <= cond.lateral_m && err.yaw.abs() <= cond.yaw_rad
}

/// Smallest rank among the hypotheses passing `cond`.
pub fn first_passing_rank(hyps: &[PoseHypothesis], gt: &Pose2D, cond: &EvalCondition) -> Option<usize> {
    hyps.iter()
        .filter(|h| check_condition(&pose_error(&h.pose, gt), cond))
        .map(|h| h.rank)
        .min()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCount {
    pub k: usize,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionName,
    pub longitudinal_m: f64,
    pub lateral_m: f64,
    pub yaw_deg: f64,
    pub top: Vec<TopCount>,
}

impl ConditionReport {
    pub fn count(&self, k: usize) -> Option<usize> {
        self.top.iter().find(|t| t.k == k).map(|t| t.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub index: usize,
    pub hypotheses: usize,
    /// Error of the rank-1 hypothesis, if any.
    pub top1_error: Option<PoseError>,
    /// First passing rank per condition, in report condition order.
    pub first_pass_rank: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frame: String,
    pub samples: usize,
    pub conditions: Vec<ConditionReport>,
    pub per_sample: Vec<SampleResult>,
}

impl EvalReport {
    pub fn condition(&self, name: ConditionName) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.condition == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Condition rows against T1/T3/T5 columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {FRAME_NOTE}");
        let _ = writeln!(out, "# samples: {}", self.samples);
        let _ = write!(out, "{:<12}", "condition");
        for k in TOP_K {
            let _ = write!(out, "  {:>14}", format!("T{k}"));
        }
        out.push('\n');
        for c in &self.conditions {
            let _ = write!(out, "{:<12}", c.condition.as_str());
            for t in &c.top {
                let _ = write!(out, "  {:>14}", format!("{} ({:.1}%)", t.count, t.percent));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, json: impl AsRef<Path>, table: impl AsRef<Path>) -> Result<()> {
        let (json, table) = (json.as_ref(), table.as_ref());
        std::fs::write(json, self.to_json()).map_err(|e| Error::io(json, e))?;
        std::fs::write(table, self.to_table()).map_err(|e| Error::io(table, e))
    }
}

/// Top-N success counts per condition. `hyps[i]` belongs to `gts[i]`; an
/// empty list fails everything.
pub fn evaluate_run(gts: &[Pose2D], hyps: &[Vec<PoseHypothesis>], conds: &[EvalCondition]) -> Result<EvalReport> {
    if gts.len() != hyps.len() {
        return Err(Error::InvalidParameter(format!(
            "{} ground-truth poses but {} hypothesis lists",
            gts.len(),
            hyps.len()
        )));
    }
    let per_sample: Vec<SampleResult> = gts
        .iter()
        .zip(hyps)
        .enumerate()
        .map(|(index, (gt, h))| SampleResult {
            index,
            hypotheses: h.len(),
            top1_error: h.iter().find(|x| x.rank == 1).map(|x| {
                let e = pose_error(&x.pose, gt);
                PoseError {
                    x: round_sig(e.x, 9),
                    y: round_sig(e.y, 9),
                    yaw: round_sig(e.yaw, 9),
                }
            }),
            first_pass_rank: conds.iter().map(|c| first_passing_rank(h, gt, c)).collect(),
        })
        .collect();
    let n = gts.len();
    let conditions = conds
        .iter()
        .enumerate()
        .map(|(ci, c)| ConditionReport {
            condition: c.name,
            longitudinal_m: c.longitudinal_m,
            lateral_m: c.lateral_m,
            yaw_deg: round_sig(c.yaw_rad.to_degrees(), 9),
            top: TOP_K
                .iter()
                .map(|&k| {
                    let count = per_sample
                        .iter()
                        .filter(|s| s.first_pass_rank[ci].is_some_and(|r| r <= k))
                        .count();
                    let percent = if n == 0 { 0.0 } else { round_sig(100.0 * count as f64 / n as f64, 9) };
                    TopCount { k, count, percent }
                })
                .collect(),
        })
        .collect();
    Ok(EvalReport {
        frame: FRAME_NOTE.to_string(),
        samples: n,
        conditions,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;
    use proptest::prelude::*;

    fn hyp(rank: usize, x: f64, y: f64, theta: f64) -> PoseHypothesis {
        PoseHypothesis {
            pose: Pose2D::new(x, y, theta),
            correspondences: vec![],
            support_count: 0,
            rank,
        }
    }

    #[test]
    fn pose_error_examples() {
        let gt = Pose2D::new(4.0, -2.0, 0.7);
        let e = pose_error(&gt, &gt);
        assert_eq!((e.x, e.y, e.yaw), (0.0, 0.0, 0.0));

        let gt = Pose2D::new(0.0, 0.0, FRAC_PI_2);
        let e = pose_error(&Pose2D::new(3.0, 0.0, FRAC_PI_2), &gt);
        assert!(e.x.abs() < 1e-12 && (e.y + 3.0).abs() < 1e-12);

        let e = pose_error(&Pose2D::new(0.0, 0.0, (-179f64).to_radians()), &Pose2D::new(0.0, 0.0, 179f64.to_radians()));
        assert!((e.yaw.abs() - 2f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn condition_examples() {
        let deg = |d: f64| d.to_radians();
        let pm5 = EvalCondition::pm5();
        assert!(check_condition(&PoseError { x: 3.0, y: 2.0, yaw: deg(10.0) }, &pm5));
        assert!(!check_condition(&PoseError { x: 0.0, y: 0.0, yaw: deg(35.0) }, &pm5));
        let far = PoseError { x: 150.0, y: 3.0, yaw: deg(20.0) };
        assert!(check_condition(&far, &EvalCondition::front_drift()));
        assert!(!check_condition(&far, &EvalCondition::pm10()));
    }

    #[test]
    fn report_examples() {
        let gts = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 10.0, PI / 2.0)];
        let exact: Vec<Vec<PoseHypothesis>> = gts.iter().map(|g| vec![hyp(1, g.x, g.y, g.theta)]).collect();
        let r = evaluate_run(&gts, &exact, &EvalCondition::all()).unwrap();
        for c in &r.conditions {
            assert!(c.top.iter().all(|t| t.count == 2 && t.percent == 100.0));
        }

        let r = evaluate_run(&gts, &[vec![], vec![]], &EvalCondition::all()).unwrap();
        for c in &r.conditions {
            assert!(c.top.iter().all(|t| t.count == 0 && t.percent == 0.0));
        }

        // only rank 3 is right
        let third = vec![
            hyp(1, 100.0, 0.0, 0.0),
            hyp(2, 0.0, 50.0, 0.0),
            hyp(3, 1.0, 1.0, 0.1),
        ];
        let r = evaluate_run(&gts[..1], &[third], &EvalCondition::all()).unwrap();
        let pm5 = r.condition(ConditionName::Pm5).unwrap();
        assert_eq!((pm5.count(1), pm5.count(3), pm5.count(5)), (Some(0), Some(1), Some(1)));
        // rank 1 is 100 m ahead on the right heading: front drift only
        let fd = r.condition(ConditionName::FrontDrift).unwrap();
        assert_eq!(fd.count(1), Some(1));
        assert_eq!(r.per_sample[0].first_pass_rank, vec![Some(3), Some(3), Some(1)]);

        assert!(evaluate_run(&gts, &[vec![]], &EvalCondition::all()).is_err());
    }

    #[test]
    fn table_layout() {
        let gts = vec![Pose2D::new(0.0, 0.0, 0.0)];
        let r = evaluate_run(&gts, &[vec![hyp(1, 0.0, 0.0, 0.0)]], &EvalCondition::all()).unwrap();
        let t = r.to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].contains("robot frame"));
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("condition") && lines[2].contains("T5"));
        assert!(lines[3].starts_with("pm5") && lines[3].ends_with("1 (100.0%)"));
        let widths: Vec<usize> = lines[2..].iter().map(|l| l.len()).collect();
        assert!(widths.iter().all(|&w| w == widths[0]));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    fn arb_pose() -> impl Strategy<Value = Pose2D> {
        (-300.0..300.0f64, -300.0..300.0f64, -PI..PI).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
    }

    proptest! {
        #[test]
        fn error_is_rigid_invariant(est in arb_pose(), gt in arb_pose(), tx in -100.0..100.0f64, ty in -100.0..100.0f64, rot in -PI..PI) {
            let (s, c) = rot.sin_cos();
            let move_pose = |p: &Pose2D| Pose2D::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.theta + rot);
            let a = pose_error(&est, &gt);
            let b = pose_error(&move_pose(&est), &move_pose(&gt));
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            prop_assert!(wrap_angle(a.yaw - b.yaw).abs() < 1e-9);
        }

        #[test]
        fn condition_implications(ex in -250.0..250.0f64, ey in -20.0..20.0f64, yaw in -PI..PI) {
            let e = PoseError { x: ex, y: ey, yaw };
            let [pm5, pm10, fd] = EvalCondition::all();
            if check_condition(&e, &pm5) {
                prop_assert!(check_condition(&e, &pm10));
                prop_assert!(check_condition(&e, &fd));
            }
            if check_condition(&e, &pm10) {
                prop_assert!(yaw.abs() <= YAW_BOUND_RAD);
            }
        }

        #[test]
        fn top_counts_monotone(
            gts in prop::collection::vec(arb_pose(), 1..8),
            offsets in prop::collection::vec(prop::collection::vec((-12.0..12.0f64, -12.0..12.0f64, -1.0..1.0f64), 0..6), 8),
        ) {
            let hyps: Vec<Vec<PoseHypothesis>> = gts.iter().zip(&offsets).map(|(g, o)| {
                o.iter().enumerate().map(|(k, d)| hyp(k + 1, g.x + d.0, g.y + d.1, g.theta + d.2)).collect()
            }).collect();
            let r = evaluate_run(&gts, &hyps, &EvalCondition::all()).unwrap();
            for c in &r.conditions {
                prop_assert!(c.count(1) <= c.count(3) && c.count(3) <= c.count(5));
            }
            let pm5 = r.condition(ConditionName::Pm5).unwrap();
            let pm10 = r.condition(ConditionName::Pm10).unwrap();
            for k in TOP_K {
                prop_assert!(pm5.count(k) <= pm10.count(k));
            }
        }
    }
}
