//! Robust reprojection refinement of a 3-DOF pose.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{project_map_point, CameraModel, Pose2D};
use crate::error::{Error, Result};
use crate::pairpose::Correspondence;
use crate::worldmodel::{MapInstance, QueryInstance};

const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    pub huber_delta: f64,
    pub max_iters: usize,
    pub lambda_init: f64,
    pub convergence_tol: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            huber_delta: 10.0,
            max_iters: 100,
            lambda_init: 1e-3,
            convergence_tol: 1e-6,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if self.huber_delta > 0.0 && self.max_iters > 0 && self.lambda_init > 0.0 && self.convergence_tol > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("refinement parameters must be positive".into()))
        }
    }
}

/// Result of [`refine_pose_traced`]: `costs[0]` is the initial cost and each
/// later entry the cost after an accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace {
    pub pose: Pose2D,
    pub cost: f64,
    pub costs: Vec<f64>,
    pub iterations: usize,
}

pub fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// Reprojection problem over a fixed correspondence set.
pub struct Reprojection<'a> {
    pairs: Vec<(&'a QueryInstance, &'a MapInstance)>,
    cam: &'a CameraModel,
    delta: f64,
}

impl<'a> Reprojection<'a> {
    pub fn new(
        corrs: &[Correspondence],
        query: &'a [QueryInstance],
        map: &'a [MapInstance],
        cam: &'a CameraModel,
        delta: f64,
    ) -> Result<Self> {
        let pairs = corrs
            .iter()
            .map(|c| match (query.get(c.query_idx), map.get(c.map_idx)) {
                (Some(q), Some(m)) => Ok((q, m)),
                _ => Err(Error::InvalidParameter(format!(
                    "correspondence ({}, {}) out of range",
                    c.query_idx, c.map_idx
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Reprojection { pairs, cam, delta })
    }

    fn residual(&self, k: usize, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        let (q, m) = self.pairs[k];
        let pose = Pose2D { x: x[0], y: x[1], theta: x[2] };
        let px = project_map_point(&m.representation_point, &pose, self.cam)?;
        Some(px - q.representation_point_px)
    }

    fn saturated(&self) -> f64 {
        huber(10.0 * self.delta, self.delta)
    }

    pub fn cost_at(&self, x: &Vector3<f64>) -> f64 {
        (0..self.pairs.len())
            .map(|k| match self.residual(k, x) {
                Some(r) => huber(r.norm(), self.delta),
                None => self.saturated(),
            })
            .sum()
    }

    pub fn cost(&self, pose: &Pose2D) -> f64 {
        self.cost_at(&Vector3::new(pose.x, pose.y, pose.theta))
    }

    /// Robust normal equations `(H, g)` from forward-difference Jacobians,
    /// with Huber weights applied per residual.
    fn normal_equations(&self, x: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for k in 0..self.pairs.len() {
            let Some(r) = self.residual(k, x) else {
                continue;
            };
            let mut jac = nalgebra::Matrix2x3::zeros();
            let mut ok = true;
            for d in 0..3 {
                let mut xs = *x;
                xs[d] += JACOBIAN_STEP;
                match self.residual(k, &xs) {
                    Some(rs) => jac.set_column(d, &((rs - r) / JACOBIAN_STEP)),
                    None => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let e = r.norm();
            let w = if e <= self.delta { 1.0 } else { self.delta / e };
            h += w * jac.transpose() * jac;
            g += w * jac.transpose() * r;
        }
        (h, g)
    }

    /// Cost gradient built from the numeric Jacobian.
    pub fn gradient(&self, pose: &Pose2D) -> Vector3<f64> {
        self.normal_equations(&Vector3::new(pose.x, pose.y, pose.theta)).1
    }
}

/// Levenberg-Marquardt with a Huber kernel on the representation-point
/// reprojection error. Returns the refined pose and its cost.
pub fn refine_pose(
    init: &Pose2D,
    corrs: &[Correspondence],
    query: &[QueryInstance],
    map: &[MapInstance],
    cam: &CameraModel,
    p: &RefineParams,
) -> Result<(Pose2D, f64)> {
    let t = refine_pose_traced(init, corrs, query, map, cam, p)?;
    Ok((t.pose, t.cost))
}

pub fn refine_pose_traced(
    init: &Pose2D,
    corrs: &[Correspondence],
    query: &[QueryInstance],
    map: &[MapInstance],
    cam: &CameraModel,
    p: &RefineParams,
) -> Result<RefineTrace> {
    if corrs.len() < 2 {
        return Err(Error::TooFewCorrespondences {
            needed: 2,
            got: corrs.len(),
        });
    }
    p.validate()?;
    let problem = Reprojection::new(corrs, query, map, cam, p.huber_delta)?;
    let mut x = Vector3::new(init.x, init.y, init.theta);
    let mut cost = problem.cost_at(&x);
    let mut costs = vec![cost];
    let mut lambda = p.lambda_init;
    let mut iterations = 0;
    while iterations < p.max_iters {
        iterations += 1;
        let (h, g) = problem.normal_equations(&x);
        let mut damped = h;
        for d in 0..3 {
            damped[(d, d)] += lambda * h[(d, d)].max(1e-9);
        }
        let Some(step) = damped.lu().solve(&(-g)) else {
            lambda *= 10.0;
            continue;
        };
        let trial = x + step;
        let trial_cost = problem.cost_at(&trial);
        if trial_cost.is_finite() && trial_cost < cost {
            x = trial;
            cost = trial_cost;
            costs.push(cost);
            lambda = (lambda / 10.0).max(1e-12);
            if step.norm() < p.convergence_tol {
                break;
            }
        } else {
            lambda *= 10.0;
            if step.norm() < p.convergence_tol || lambda > 1e12 {
                break;
            }
        }
    }
    Ok(RefineTrace {
        pose: Pose2D::new(x[0], x[1], x[2]),
        cost,
        costs,
        iterations,
    })
}
