//! Grid-histogram background descriptor.
//!
//! The bottom of the label image is dropped, the rest is split into a grid,
//! and each cell contributes an L2-normalized histogram over the nine
//! background classes. The concatenation is L2-normalized again, so the dot
//! product of two descriptors is their cosine similarity in [0, 1].

mod db;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::worldmodel::{QueryImage, SemanticClass};

pub use db::{build_descriptor_db, DescriptorDb, Region, DEFAULT_MAX_XY_DIST_M};

pub const BINS: usize = SemanticClass::BACKGROUND.len();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Fraction of image rows removed from the bottom.
    pub bottom_cut: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            grid_h: 4,
            grid_w: 8,
            bottom_cut: 1.0 / 3.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::InvalidParameter("grid dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.bottom_cut) {
            return Err(Error::InvalidParameter(format!(
                "bottom_cut {} outside [0, 1)",
                self.bottom_cut
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.grid_h * self.grid_w * BINS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridHistogramDescriptor {
    values: Vec<f64>,
    grid_h: usize,
    grid_w: usize,
}

impl GridHistogramDescriptor {
    /// Wraps raw values; they are expected to be non-negative and unit (or zero) norm.
    pub fn from_values(values: Vec<f64>, grid_h: usize, grid_w: usize) -> Result<Self> {
        let dim = grid_h * grid_w * BINS;
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                left: values.len(),
                right: dim,
            });
        }
        Ok(GridHistogramDescriptor {
            values,
            grid_h,
            grid_w,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Rows kept after the bottom cut: those with `v < height * (1 - cut)`.
fn kept_rows(height: u32, bottom_cut: f64) -> usize {
    let limit = height as f64 * (1.0 - bottom_cut);
    ((limit - 1e-9).ceil().max(0.0) as usize).min(height as usize)
}

pub fn compute_descriptor(img: &QueryImage, grid: &GridSpec) -> GridHistogramDescriptor {
    let rows = kept_rows(img.height, grid.bottom_cut);
    let cols = img.width as usize;
    let cell_h = (rows / grid.grid_h).max(1);
    let cell_w = (cols / grid.grid_w).max(1);
    let mut values = vec![0.0; grid.dim()];

    for v in 0..rows {
        let gr = (v / cell_h).min(grid.grid_h - 1);
        let row = &img.labels[v * cols..(v + 1) * cols];
        for (u, &label) in row.iter().enumerate() {
            let Some(bin) = SemanticClass::from_id_lossy(label).background_bin() else {
                continue;
            };
            let gc = (u / cell_w).min(grid.grid_w - 1);
            values[(gr * grid.grid_w + gc) * BINS + bin] += 1.0;
        }
    }
    for cell in values.chunks_mut(BINS) {
        l2_normalize(cell);
    }
    l2_normalize(&mut values);
    GridHistogramDescriptor {
        values,
        grid_h: grid.grid_h,
        grid_w: grid.grid_w,
    }
}

/// Cosine similarity; zero descriptors score 0 against anything.
pub fn similarity(a: &GridHistogramDescriptor, b: &GridHistogramDescriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot(&a.values, b.values.iter().copied()))
}

pub(crate) fn dot(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    s.clamp(0.0, 1.0)
}
