use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_descriptor, dot, GridHistogramDescriptor, GridSpec, BINS};
use crate::camera::{render_semantic_view, CameraModel, Pose2D};
use crate::error::{Error, Result};
use crate::util::wrap_angle;
use crate::worldmodel::SemanticMap;

const MAGIC: &[u8; 4] = b"SGLD";
const VERSION: u32 = 1;

/// Entries farther than this from a query pose do not count as a match.
pub const DEFAULT_MAX_XY_DIST_M: f64 = 3.0;

const TIE_EPS: f64 = 1e-9;

/// Closed axis-aligned rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Region {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// Pose-indexed store of pre-rendered descriptors.
///
/// Poses and values are held at `f32` precision so that a database built in
/// memory behaves exactly like one read back from disk.
#[derive(Debug, Clone)]
pub struct DescriptorDb {
    grid_h: usize,
    grid_w: usize,
    stride: f64,
    yaw_step: f64,
    poses: Vec<Pose2D>,
    values: Vec<f32>,
    cell: f64,
    index: HashMap<(i64, i64), Vec<usize>>,
}

fn f32_pose(x: f64, y: f64, yaw: f64) -> Pose2D {
    Pose2D {
        x: x as f32 as f64,
        y: y as f32 as f64,
        theta: yaw as f32 as f64,
    }
}

impl DescriptorDb {
    fn from_parts(
        grid_h: usize,
        grid_w: usize,
        stride: f64,
        yaw_step: f64,
        poses: Vec<Pose2D>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let dim = grid_h * grid_w * BINS;
        if values.len() != poses.len() * dim {
            return Err(Error::DatabaseFormat(format!(
                "{} values for {} entries of dimension {dim}",
                values.len(),
                poses.len()
            )));
        }
        let cell = if stride > 0.0 { stride } else { 1.0 };
        let mut index: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in poses.iter().enumerate() {
            index
                .entry(((p.x / cell).floor() as i64, (p.y / cell).floor() as i64))
                .or_default()
                .push(i);
        }
        Ok(DescriptorDb {
            grid_h,
            grid_w,
            stride,
            yaw_step,
            poses,
            values,
            cell,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn dim(&self) -> usize {
        self.grid_h * self.grid_w * BINS
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn yaw_step(&self) -> f64 {
        self.yaw_step
    }

    pub fn poses(&self) -> &[Pose2D] {
        &self.poses
    }

    pub fn pose(&self, i: usize) -> Pose2D {
        self.poses[i]
    }

    pub fn raw_values(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn descriptor(&self, i: usize) -> GridHistogramDescriptor {
        GridHistogramDescriptor {
            values: self.raw_values(i).iter().map(|&v| v as f64).collect(),
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        }
    }

    /// Similarity of entry `i` to a query descriptor.
    pub fn similarity_to(&self, i: usize, desc: &GridHistogramDescriptor) -> Result<f64> {
        if desc.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: desc.dim(),
                right: self.dim(),
            });
        }
        Ok(dot(desc.values(), self.raw_values(i).iter().map(|&v| v as f64)))
    }

    /// Entry closest to `pose` by planar distance, then yaw difference, then
    /// entry order. `None` when the closest entry is beyond `max_xy_dist`.
    pub fn nearest(&self, pose: &Pose2D, max_xy_dist: f64) -> Option<usize> {
        if !pose.is_finite() {
            return None;
        }
        let reach = (max_xy_dist / self.cell).ceil() as i64 + 1;
        let cx = (pose.x / self.cell).floor() as i64;
        let cy = (pose.y / self.cell).floor() as i64;
        let mut best: Option<(f64, f64, usize)> = None;
        for gx in cx - reach..=cx + reach {
            for gy in cy - reach..=cy + reach {
                let Some(bucket) = self.index.get(&(gx, gy)) else {
                    continue;
                };
                for &i in bucket {
                    let p = &self.poses[i];
                    let d = (p.x - pose.x).hypot(p.y - pose.y);
                    if d > max_xy_dist {
                        continue;
                    }
                    let dyaw = wrap_angle(p.theta - pose.theta).abs();
                    let better = match best {
                        None => true,
                        Some((bd, by, bi)) => {
                            if (d - bd).abs() > TIE_EPS {
                                d < bd
                            } else if (dyaw - by).abs() > TIE_EPS {
                                dyaw < by
                            } else {
                                i < bi
                            }
                        }
                    };
                    if better {
                        best = Some((d, dyaw, i));
                    }
                }
            }
        }
        best.map(|b| b.2)
    }

    /// Pose and descriptor of [`DescriptorDb::nearest`].
    pub fn nearest_descriptor(
        &self,
        pose: &Pose2D,
        max_xy_dist: f64,
    ) -> Result<Option<(Pose2D, GridHistogramDescriptor)>> {
        if self.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        Ok(self
            .nearest(pose, max_xy_dist)
            .map(|i| (self.pose(i), self.descriptor(i))))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(self.grid_h as u32).to_le_bytes())?;
            w.write_all(&(self.grid_w as u32).to_le_bytes())?;
            w.write_all(&(self.stride as f32).to_le_bytes())?;
            w.write_all(&(self.yaw_step as f32).to_le_bytes())?;
            w.write_all(&(self.len() as u64).to_le_bytes())?;
            for (i, p) in self.poses.iter().enumerate() {
                for v in [p.x as f32, p.y as f32, p.theta as f32] {
                    w.write_all(&v.to_le_bytes())?;
                }
                for v in self.raw_values(i) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::DatabaseFormat(format!("{}: bad magic", path.display())));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut u32_ = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut b4).map_err(io)?;
            Ok(u32::from_le_bytes(b4))
        };
        let version = u32_(&mut r)?;
        if version != VERSION {
            return Err(Error::DatabaseFormat(format!("unsupported version {version}")));
        }
        let grid_h = u32_(&mut r)? as usize;
        let grid_w = u32_(&mut r)? as usize;
        let stride = f32::from_bits(u32_(&mut r)?) as f64;
        let yaw_step = f32::from_bits(u32_(&mut r)?) as f64;
        r.read_exact(&mut b8).map_err(io)?;
        let count = u64::from_le_bytes(b8) as usize;
        let dim = grid_h * grid_w * BINS;
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::DatabaseFormat("zero grid dimension".into()));
        }
        let record = (3 + dim) * 4;
        let mut buf = vec![0u8; record];
        let mut poses = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count * dim);
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(io)?;
            let f = |k: usize| f32::from_le_bytes(buf[k * 4..k * 4 + 4].try_into().expect("4 bytes"));
            poses.push(Pose2D {
                x: f(0) as f64,
                y: f(1) as f64,
                theta: f(2) as f64,
            });
            values.extend((0..dim).map(|k| f(3 + k)));
        }
        Self::from_parts(grid_h, grid_w, stride, yaw_step, poses, values)
    }
}

fn axis_samples(lo: f64, hi: f64, stride: f64) -> Vec<f64> {
    let n = ((hi - lo) / stride + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * stride).collect()
}

/// Renders the map from every grid pose in `region` and every multiple of
/// `yaw_step`, and stores the descriptors ordered by x, then y, then yaw.
pub fn build_descriptor_db(
    map: &SemanticMap,
    cam: &CameraModel,
    region: &Region,
    stride: f64,
    yaw_step: f64,
    grid: &GridSpec,
) -> Result<DescriptorDb> {
    grid.validate()?;
    if !(stride > 0.0) {
        return Err(Error::InvalidParameter(format!("stride must be positive, got {stride}")));
    }
    let turns = TAU / yaw_step;
    if !(yaw_step > 0.0) || (turns - turns.round()).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "yaw step {yaw_step} does not divide a full turn"
        )));
    }
    if !(region.x_max >= region.x_min && region.y_max >= region.y_min) {
        return Err(Error::InvalidParameter("descriptor region is empty".into()));
    }
    let n_yaw = turns.round() as usize;
    let xs = axis_samples(region.x_min, region.x_max, stride);
    let ys = axis_samples(region.y_min, region.y_max, stride);
    let poses: Vec<Pose2D> = xs
        .iter()
        .flat_map(|&x| {
            ys.iter().flat_map(move |&y| {
                (0..n_yaw).map(move |k| f32_pose(x, y, wrap_angle(k as f64 * yaw_step)))
            })
        })
        .collect();
    tracing::info!(entries = poses.len(), "building descriptor database");
    let values: Vec<f32> = poses
        .par_iter()
        .flat_map_iter(|pose| {
            let img = render_semantic_view(map, pose, cam);
            compute_descriptor(&img, grid)
                .values
                .into_iter()
                .map(|v| v as f32)
        })
        .collect();
    DescriptorDb::from_parts(grid.grid_h, grid.grid_w, stride, yaw_step, poses, values)
}
