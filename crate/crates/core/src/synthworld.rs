//! Seeded synthetic city blocks and benchmark queries.
//!
//! The world is a square grid of roads. Every block between roads gets a
//! sidewalk ring and one of a few background themes (buildings, park, walled
//! lot, fenced field), so that views from different streets differ in their
//! background class mix. Foreground objects are vertical point columns on the
//! sidewalks.

use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{project_instance_bbox, project_map_point, render_semantic_view, CameraModel, Pose2D};
use crate::descriptor::Region;
use crate::error::{Error, Result};
use crate::worldmodel::{
    cluster_map_points, cluster_query_image, save_map, save_query, BackgroundBox, CameraSidecar, LabeledPoint, MapInstance, QueryImage,
    QueryInstance, SemanticClass, SemanticMap, DEFAULT_MAP_CLUSTER_RADIUS, DEFAULT_MIN_AREA,
};

/// Vertical spacing of synthetic foreground point columns.
pub const COLUMN_SPACING_M: f64 = 0.1;

const PLACEMENT_RETRIES: usize = 10_000;
const TILE_M: f64 = 12.0;

/// Vertical column of points, the shape used for synthetic foreground objects.
pub fn point_column(x: f64, y: f64, height: f64, spacing: f64) -> Vec<Point3<f64>> {
    let n = (height / spacing).round().max(1.0) as usize;
    (0..=n)
        .map(|k| Point3::new(x, y, mm(height * k as f64 / n as f64)))
        .collect()
}

/// Map instance made of one point column.
pub fn column_instance(id: usize, class: SemanticClass, x: f64, y: f64, height: f64) -> MapInstance {
    MapInstance::from_points(id, class, point_column(x, y, height, COLUMN_SPACING_M))
}

/// Noise-free continuous observation of a map instance: its projected bbox
/// and projected representation point, without rasterization.
pub fn observe_instance(
    inst: &MapInstance,
    pose: &Pose2D,
    cam: &CameraModel,
    id: usize,
) -> Option<QueryInstance> {
    let bbox = project_instance_bbox(inst, pose, cam)?;
    let rep = project_map_point(&inst.representation_point, pose, cam)?;
    Some(QueryInstance::from_box(id, inst.class, bbox, rep))
}

/// Millimetre rounding keeps generated maps exact under the map file format.
fn mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn valid(&self) -> bool {
        self.min > 0.0 && self.max >= self.min && self.max.is_finite()
    }
}

/// Count and height range of one foreground class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub count: usize,
    pub height_m: Range,
}

/// Relative frequency of each block theme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThemeWeights {
    pub buildings: f64,
    pub park: f64,
    pub walled: f64,
    pub field: f64,
}

impl Default for ThemeWeights {
    fn default() -> Self {
        ThemeWeights {
            buildings: 0.45,
            park: 0.2,
            walled: 0.25,
            field: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockTheme {
    Buildings,
    Park,
    Walled,
    Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    /// Blocks per side; the world is square.
    pub blocks: usize,
    pub block_size_m: f64,
    pub road_width_m: f64,
    pub sidewalk_width_m: f64,
    /// Gap between the sidewalk and the block's buildings or walls.
    pub setback_m: f64,
    pub building_height_m: Range,
    pub themes: ThemeWeights,
    pub pole: InstanceSpec,
    pub traffic_sign: InstanceSpec,
    pub traffic_light: InstanceSpec,
    pub static_obstacle: InstanceSpec,
    /// Minimum planar distance between foreground instances; never below
    /// twice the map clustering radius.
    pub min_separation_m: f64,
    pub camera: CameraSidecar,
}

/// 640x400, 120 degree horizontal field of view, horizon a third of the way down.
pub fn default_camera() -> CameraModel {
    CameraModel::new(185.0, 185.0, 320.0, 133.0, 640, 400, 1.5).expect("valid default camera")
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 1,
            blocks: 3,
            block_size_m: 26.0,
            road_width_m: 8.0,
            sidewalk_width_m: 3.0,
            setback_m: 1.0,
            building_height_m: Range::new(8.0, 24.0),
            themes: ThemeWeights::default(),
            pole: InstanceSpec {
                count: 40,
                height_m: Range::new(4.0, 8.0),
            },
            traffic_sign: InstanceSpec {
                count: 20,
                height_m: Range::new(2.0, 3.5),
            },
            traffic_light: InstanceSpec {
                count: 15,
                height_m: Range::new(4.5, 6.5),
            },
            static_obstacle: InstanceSpec {
                count: 15,
                height_m: Range::new(0.8, 1.6),
            },
            min_separation_m: 3.0,
            camera: default_camera().into(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("world spec: {m}")));
        if self.blocks == 0 {
            return bad("need at least one block");
        }
        if !(self.block_size_m > 0.0 && self.road_width_m > 0.0 && self.sidewalk_width_m > 0.0 && self.setback_m >= 0.0)
        {
            return bad("area sizes must be positive");
        }
        if self.block_size_m <= 2.0 * (self.sidewalk_width_m + self.setback_m) + 2.0 {
            return bad("blocks too small for their sidewalks");
        }
        let ranges = [
            self.building_height_m,
            self.pole.height_m,
            self.traffic_sign.height_m,
            self.traffic_light.height_m,
            self.static_obstacle.height_m,
        ];
        if !ranges.iter().all(Range::valid) {
            return bad("height ranges must be positive");
        }
        let w = self.themes;
        if [w.buildings, w.park, w.walled, w.field].iter().any(|&v| !(v >= 0.0))
            || w.buildings + w.park + w.walled + w.field <= 0.0
        {
            return bad("theme weights must be non-negative with a positive sum");
        }
        if !(self.min_separation_m >= 0.0) {
            return bad("negative separation");
        }
        self.camera.to_camera()?;
        Ok(())
    }

    pub fn pitch(&self) -> f64 {
        self.block_size_m + self.road_width_m
    }

    /// Side length of the square world; road centerlines sit at multiples of
    /// the pitch from 0 to this value.
    pub fn extent(&self) -> f64 {
        self.blocks as f64 * self.pitch()
    }

    /// Bounding rectangle of the road network, where query poses are drawn.
    pub fn road_region(&self) -> Region {
        let h = self.road_width_m / 2.0;
        let e = self.extent();
        Region::new(-h, -h, e + h, e + h)
    }

    pub fn separation(&self) -> f64 {
        self.min_separation_m.max(2.0 * DEFAULT_MAP_CLUSTER_RADIUS)
    }

    /// True when `(x, y)` lies on a road surface.
    pub fn on_road(&self, x: f64, y: f64) -> bool {
        let e = self.extent();
        let half = self.road_width_m / 2.0;
        if !(-half..=e + half).contains(&x) || !(-half..=e + half).contains(&y) {
            return false;
        }
        let near_line = |v: f64| {
            let k = (v / self.pitch()).round();
            (v - k * self.pitch()).abs() <= half
        };
        near_line(x) || near_line(y)
    }

    fn instance_specs(&self) -> [(SemanticClass, InstanceSpec); 4] {
        [
            (SemanticClass::Pole, self.pole),
            (SemanticClass::TrafficSign, self.traffic_sign),
            (SemanticClass::TrafficLight, self.traffic_light),
            (SemanticClass::StaticObstacle, self.static_obstacle),
        ]
    }
}

fn slab(x0: f64, y0: f64, x1: f64, y1: f64, z0: f64, z1: f64, class: SemanticClass) -> BackgroundBox {
    BackgroundBox {
        center: Point3::new(mm((x0 + x1) / 2.0), mm((y0 + y1) / 2.0), mm((z0 + z1) / 2.0)),
        extents: Vector3::new(mm(x1 - x0), mm(y1 - y0), mm(z1 - z0)),
        yaw: 0.0,
        class,
    }
}

/// Splits `[a, b]` into near-equal pieces no longer than `TILE_M`; long thin
/// boxes sort badly by centroid depth.
fn tiles(a: f64, b: f64) -> Vec<(f64, f64)> {
    let n = ((b - a) / TILE_M).ceil().max(1.0) as usize;
    let step = (b - a) / n as f64;
    (0..n).map(|k| (a + k as f64 * step, a + (k + 1) as f64 * step)).collect()
}

fn pick_theme(w: &ThemeWeights, rng: &mut ChaCha8Rng) -> BlockTheme {
    let total = w.buildings + w.park + w.walled + w.field;
    let mut r = rng.random_range(0.0..total);
    for (weight, theme) in [
        (w.buildings, BlockTheme::Buildings),
        (w.park, BlockTheme::Park),
        (w.walled, BlockTheme::Walled),
        (w.field, BlockTheme::Field),
    ] {
        if r < weight {
            return theme;
        }
        r -= weight;
    }
    BlockTheme::Field
}

/// Fills the block interior `[x0, x1] x [y0, y1]` according to its theme.
fn fill_block(
    theme: BlockTheme,
    (x0, y0, x1, y1): (f64, f64, f64, f64),
    spec: &WorldSpec,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<BackgroundBox>,
) {
    use SemanticClass::*;
    match theme {
        BlockTheme::Buildings => {
            // two or three buildings side by side along x
            let n = rng.random_range(2..=3);
            let step = (x1 - x0) / n as f64;
            for k in 0..n {
                let h = spec.building_height_m.sample(rng);
                let a = x0 + k as f64 * step;
                out.push(slab(a + 0.5, y0, a + step - 0.5, y1, 0.0, h, Building));
            }
        }
        BlockTheme::Park => {
            out.push(slab(x0, y0, x1, y1, 0.0, 0.1, Terrain));
            let rows = ((y1 - y0) / 6.0).floor().max(1.0) as usize;
            let cols = ((x1 - x0) / 6.0).floor().max(1.0) as usize;
            for r in 0..rows {
                for c in 0..cols {
                    let cx = x0 + (c as f64 + 0.5) * (x1 - x0) / cols as f64 + rng.random_range(-0.8..0.8);
                    let cy = y0 + (r as f64 + 0.5) * (y1 - y0) / rows as f64 + rng.random_range(-0.8..0.8);
                    let s = rng.random_range(2.5..4.0);
                    let h = rng.random_range(5.0..9.0);
                    out.push(slab(cx - s / 2.0, cy - s / 2.0, cx + s / 2.0, cy + s / 2.0, 0.0, h, Vegetation));
                }
            }
        }
        BlockTheme::Walled => {
            let h = rng.random_range(2.5..4.0);
            let t = 0.4;
            for (a, b) in tiles(x0, x1) {
                out.push(slab(a, y0, b, y0 + t, 0.0, h, Wall));
                out.push(slab(a, y1 - t, b, y1, 0.0, h, Wall));
            }
            for (a, b) in tiles(y0 + t, y1 - t) {
                out.push(slab(x0, a, x0 + t, b, 0.0, h, Wall));
                out.push(slab(x1 - t, a, x1, b, 0.0, h, Wall));
            }
            let bh = spec.building_height_m.sample(rng);
            let m = 3.0;
            out.push(slab(x0 + m, y0 + m, x1 - m, y1 - m, 0.0, bh, Building));
        }
        BlockTheme::Field => {
            out.push(slab(x0, y0, x1, y1, 0.0, 0.1, Terrain));
            let h = rng.random_range(1.2..2.0);
            let t = 0.1;
            for (a, b) in tiles(x0, x1) {
                out.push(slab(a, y0, b, y0 + t, 0.0, h, Fence));
                out.push(slab(a, y1 - t, b, y1, 0.0, h, Fence));
            }
            for (a, b) in tiles(y0 + t, y1 - t) {
                out.push(slab(x0, a, x0 + t, b, 0.0, h, Fence));
                out.push(slab(x1 - t, a, x1, b, 0.0, h, Fence));
            }
            let cx = rng.random_range(x0 + 6.0..x1 - 6.0);
            let cy = rng.random_range(y0 + 6.0..y1 - 6.0);
            out.push(slab(cx - 2.0, cy - 2.0, cx + 2.0, cy + 2.0, 0.0, rng.random_range(6.0..10.0), Vegetation));
        }
    }
}

/// Block themes in row-major block order (x fastest).
pub fn block_themes(spec: &WorldSpec) -> Vec<BlockTheme> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.blocks * spec.blocks).map(|_| pick_theme(&spec.themes, &mut rng)).collect()
}

pub fn generate_world(spec: &WorldSpec) -> Result<SemanticMap> {
    spec.validate()?;
    use SemanticClass::*;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let themes: Vec<BlockTheme> = (0..spec.blocks * spec.blocks)
        .map(|_| pick_theme(&spec.themes, &mut rng))
        .collect();
    let p = spec.pitch();
    let e = spec.extent();
    let half = spec.road_width_m / 2.0;
    let mut boxes = Vec::new();

    // roads along x and along y, each with a dashed center line
    for k in 0..=spec.blocks {
        let c = k as f64 * p;
        for (a, b) in tiles(-half, e + half) {
            boxes.push(slab(a, c - half, b, c + half, -0.1, 0.0, Road));
            boxes.push(slab(c - half, a, c + half, b, -0.1, 0.0, Road));
        }
        let mut s = half + 1.0;
        while s + 3.0 < e - half {
            if (s / p).fract() * p > half && (s / p).fract() * p + 3.0 < p - half {
                boxes.push(slab(s, c - 0.075, s + 3.0, c + 0.075, 0.0, 0.01, RoadLine));
                boxes.push(slab(c - 0.075, s, c + 0.075, s + 3.0, 0.0, 0.01, RoadLine));
            }
            s += 6.0;
        }
    }

    let sw = spec.sidewalk_width_m;
    let sidewalks = block_sidewalks(spec);
    for by in 0..spec.blocks {
        for bx in 0..spec.blocks {
            let x0 = bx as f64 * p + half;
            let y0 = by as f64 * p + half;
            let x1 = x0 + spec.block_size_m;
            let y1 = y0 + spec.block_size_m;
            let b = by * spec.blocks + bx;
            for &(a0, b0, a1, b1) in &sidewalks[4 * b..4 * b + 4] {
                if a1 - a0 >= b1 - b0 {
                    for (s, t) in tiles(a0, a1) {
                        boxes.push(slab(s, b0, t, b1, 0.0, 0.15, Sidewalk));
                    }
                } else {
                    for (s, t) in tiles(b0, b1) {
                        boxes.push(slab(a0, s, a1, t, 0.0, 0.15, Sidewalk));
                    }
                }
            }
            let inner = sw + spec.setback_m;
            fill_block(
                themes[by * spec.blocks + bx],
                (x0 + inner, y0 + inner, x1 - inner, y1 - inner),
                spec,
                &mut rng,
                &mut boxes,
            );
        }
    }

    let points = place_instances(spec, &sidewalks, &mut Vec::new(), &mut rng)?;
    perimeter(spec, &mut rng, &mut boxes);
    Ok(SemanticMap {
        labeled_points: points,
        background_boxes: boxes,
    })
}

/// Outer sidewalk and a closed ring of buildings so that no view from the
/// road network runs off the edge of the world.
fn perimeter(spec: &WorldSpec, rng: &mut ChaCha8Rng, out: &mut Vec<BackgroundBox>) {
    use SemanticClass::*;
    let half = spec.road_width_m / 2.0;
    let a = -half - spec.sidewalk_width_m;
    let b = spec.extent() + half + spec.sidewalk_width_m;
    let depth = 6.0;
    for (s, t) in tiles(a, b) {
        out.push(slab(s, a, t, -half, 0.0, 0.15, Sidewalk));
        out.push(slab(s, b - spec.sidewalk_width_m, t, b, 0.0, 0.15, Sidewalk));
    }
    for (s, t) in tiles(-half, b - spec.sidewalk_width_m) {
        out.push(slab(a, s, -half, t, 0.0, 0.15, Sidewalk));
        out.push(slab(b - spec.sidewalk_width_m, s, b, t, 0.0, 0.15, Sidewalk));
    }
    let o = a - spec.setback_m;
    let f = b + spec.setback_m;
    for (s, t) in tiles(o - depth, f + depth) {
        for (y0, y1) in [(o - depth, o), (f, f + depth)] {
            let h = spec.building_height_m.sample(rng);
            out.push(slab(s, y0, t, y1, 0.0, h, Building));
        }
    }
    for (s, t) in tiles(o, f) {
        for (x0, x1) in [(o - depth, o), (f, f + depth)] {
            let h = spec.building_height_m.sample(rng);
            out.push(slab(x0, s, x1, t, 0.0, h, Building));
        }
    }
}

/// The four sidewalk strips of every block, blocks in row-major order.
fn block_sidewalks(spec: &WorldSpec) -> Vec<(f64, f64, f64, f64)> {
    let half = spec.road_width_m / 2.0;
    let sw = spec.sidewalk_width_m;
    let mut out = Vec::with_capacity(4 * spec.blocks * spec.blocks);
    for by in 0..spec.blocks {
        for bx in 0..spec.blocks {
            let x0 = bx as f64 * spec.pitch() + half;
            let y0 = by as f64 * spec.pitch() + half;
            let x1 = x0 + spec.block_size_m;
            let y1 = y0 + spec.block_size_m;
            out.extend([
                (x0, y0, x1, y0 + sw),
                (x0, y1 - sw, x1, y1),
                (x0, y0 + sw, x0 + sw, y1 - sw),
                (x1 - sw, y0 + sw, x1, y1 - sw),
            ]);
        }
    }
    out
}

/// Places the instances counted in `spec`, keeping the separation from
/// everything already in `placed`.
fn place_instances(
    spec: &WorldSpec,
    sidewalks: &[(f64, f64, f64, f64)],
    placed: &mut Vec<(f64, f64)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledPoint>> {
    let areas: Vec<f64> = sidewalks.iter().map(|s| (s.2 - s.0) * (s.3 - s.1)).collect();
    let total: f64 = areas.iter().sum();
    let sep = spec.separation();
    let mut points = Vec::new();
    for (class, is) in spec.instance_specs() {
        for _ in 0..is.count {
            let mut spot = None;
            for _ in 0..PLACEMENT_RETRIES {
                let mut r = rng.random_range(0.0..total);
                let mut k = 0;
                while k + 1 < areas.len() && r >= areas[k] {
                    r -= areas[k];
                    k += 1;
                }
                let (x0, y0, x1, y1) = sidewalks[k];
                // keep clear of the strip edges
                let x = mm(rng.random_range(x0 + 0.3..x1 - 0.3));
                let y = mm(rng.random_range(y0 + 0.3..y1 - 0.3));
                if placed.iter().all(|&(px, py)| (px - x).hypot(py - y) >= sep) {
                    spot = Some((x, y));
                    break;
                }
            }
            let (x, y) = spot.ok_or_else(|| {
                Error::Generation(format!(
                    "could not place {} #{} after {PLACEMENT_RETRIES} tries; lower the instance counts or separation",
                    class.name(),
                    placed.len()
                ))
            })?;
            placed.push((x, y));
            let h = mm(is.height_m.sample(rng));
            points.extend(
                point_column(x, y, h, COLUMN_SPACING_M)
                    .into_iter()
                    .map(|position| LabeledPoint { position, class }),
            );
        }
    }
    Ok(points)
}

/// Copy of `map` with `per_class` extra instances of every foreground class
/// on the sidewalks. Queries rendered from `map` never see them.
pub fn inject_distractors(map: &SemanticMap, spec: &WorldSpec, per_class: usize, seed: u64) -> Result<SemanticMap> {
    spec.validate()?;
    let mut placed: Vec<(f64, f64)> = cluster_map_points(map, DEFAULT_MAP_CLUSTER_RADIUS)
        .iter()
        .map(|m| {
            let c = m.ground_centroid();
            (c.x, c.y)
        })
        .collect();
    let mut extra = spec.clone();
    for is in [
        &mut extra.pole,
        &mut extra.traffic_sign,
        &mut extra.traffic_light,
        &mut extra.static_obstacle,
    ] {
        is.count = per_class;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = place_instances(&extra, &block_sidewalks(spec), &mut placed, &mut rng)?;
    let mut out = map.clone();
    out.labeled_points.extend(points);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSample {
    pub query: QueryImage,
    pub ground_truth: Pose2D,
    pub visible_instance_count: usize,
}

/// Renders the view from `pose`; the pose must lie inside the map bounds.
pub fn render_query(map: &SemanticMap, pose: &Pose2D, cam: &CameraModel) -> Result<BenchmarkSample> {
    let (lo, hi) = map
        .xy_bounds()
        .ok_or_else(|| Error::Generation("cannot render an empty map".into()))?;
    if !pose.is_finite() || pose.x < lo.x || pose.x > hi.x || pose.y < lo.y || pose.y > hi.y {
        return Err(Error::InvalidParameter(format!(
            "pose ({}, {}) outside the map bounds",
            pose.x, pose.y
        )));
    }
    let query = render_semantic_view(map, pose, cam);
    let visible_instance_count = cluster_query_image(&query, DEFAULT_MIN_AREA).len();
    Ok(BenchmarkSample {
        query,
        ground_truth: *pose,
        visible_instance_count,
    })
}

fn sample_road_pose(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Pose2D {
    let half = spec.road_width_m / 2.0;
    let lim = (-half + 0.5, spec.extent() + half - 0.5);
    loop {
        let x = rng.random_range(lim.0..lim.1);
        let y = rng.random_range(lim.0..lim.1);
        if spec.on_road(x, y) {
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            return Pose2D::new(mm(x), mm(y), (theta * 1e6).round() / 1e6);
        }
    }
}

/// Rejection-samples road poses until `n_samples` views show at least
/// `min_visible` instances.
pub fn generate_benchmark_set(
    spec: &WorldSpec,
    map: &SemanticMap,
    n_samples: usize,
    min_visible: usize,
    seed: u64,
) -> Result<Vec<BenchmarkSample>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let cam = spec.camera.to_camera()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = 100 * n_samples;
    let mut tried = 0;
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples && tried < budget {
        let batch = (2 * (n_samples - out.len())).clamp(8, budget - tried);
        let poses: Vec<Pose2D> = (0..batch).map(|_| sample_road_pose(spec, &mut rng)).collect();
        tried += batch;
        let rendered: Vec<Result<BenchmarkSample>> = poses.par_iter().map(|p| render_query(map, p, &cam)).collect();
        for s in rendered {
            let s = s?;
            if s.visible_instance_count >= min_visible && out.len() < n_samples {
                out.push(s);
            }
        }
    }
    if out.len() < n_samples {
        return Err(Error::Generation(format!(
            "only {} of {n_samples} samples showed {min_visible}+ instances after {budget} poses",
            out.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPose {
    pub x: f64,
    pub y: f64,
    pub theta_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: usize,
    /// Label image path relative to the manifest directory.
    pub query: PathBuf,
    pub ground_truth: ManifestPose,
    pub visible_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub map: PathBuf,
    pub world: PathBuf,
    pub camera: CameraSidecar,
    /// Suggested descriptor database region.
    pub region: Region,
    pub samples: Vec<ManifestSample>,
}

impl BenchmarkManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn ground_truth(&self, k: usize) -> Pose2D {
        let g = &self.samples[k].ground_truth;
        Pose2D::new(g.x, g.y, g.theta_rad)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `map.json`, `world.json`, `queries/NNNN.pgm` (+ sidecars) and the
/// manifest into `dir`.
pub fn write_benchmark(
    dir: impl AsRef<Path>,
    spec: &WorldSpec,
    map: &SemanticMap,
    samples: &[BenchmarkSample],
) -> Result<BenchmarkManifest> {
    let dir = dir.as_ref();
    let qdir = dir.join("queries");
    std::fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
    save_map(map, dir.join("map.json"))?;
    let world_path = dir.join("world.json");
    let text = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(&world_path, text + "\n").map_err(|e| Error::io(&world_path, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let rel = PathBuf::from("queries").join(format!("{k:04}.pgm"));
        save_query(&s.query, dir.join(&rel))?;
        entries.push(ManifestSample {
            id: k,
            query: rel,
            ground_truth: ManifestPose {
                x: s.ground_truth.x,
                y: s.ground_truth.y,
                theta_rad: s.ground_truth.theta,
            },
            visible_instances: s.visible_instance_count,
        });
    }
    let manifest = BenchmarkManifest {
        map: "map.json".into(),
        world: "world.json".into(),
        camera: spec.camera,
        region: spec.road_region(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmodel::map_to_json_string;
    use std::f64::consts::FRAC_PI_2;

    fn empty_spec() -> WorldSpec {
        let none = |h: f64| InstanceSpec {
            count: 0,
            height_m: Range::new(h, h + 1.0),
        };
        WorldSpec {
            pole: none(4.0),
            traffic_sign: none(2.0),
            traffic_light: none(5.0),
            static_obstacle: none(1.0),
            ..WorldSpec::default()
        }
    }

    #[test]
    fn background_only_world() {
        let m = generate_world(&empty_spec()).unwrap();
        assert!(m.labeled_points.is_empty());
        assert!(!m.background_boxes.is_empty());
        m.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let s = WorldSpec::default();
        let a = generate_world(&s).unwrap();
        let b = generate_world(&s).unwrap();
        assert_eq!(map_to_json_string(&a), map_to_json_string(&b));
        let c = generate_world(&WorldSpec { seed: 2, ..s }).unwrap();
        assert_ne!(map_to_json_string(&a), map_to_json_string(&c));
    }

    #[test]
    fn cluster_count_matches_placement() {
        let mut s = empty_spec();
        s.pole.count = 10;
        let m = generate_world(&s).unwrap();
        let inst = cluster_map_points(&m, DEFAULT_MAP_CLUSTER_RADIUS);
        assert_eq!(inst.len(), 10);
        assert!(inst.iter().all(|i| i.class == SemanticClass::Pole));
        let full = generate_world(&WorldSpec::default()).unwrap();
        let inst = cluster_map_points(&full, DEFAULT_MAP_CLUSTER_RADIUS);
        assert_eq!(inst.len(), 40 + 20 + 15 + 15);
    }

    #[test]
    fn map_file_roundtrip_is_exact() {
        let m = generate_world(&WorldSpec::default()).unwrap();
        let back = crate::worldmodel::map_from_json_str(&map_to_json_string(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn overcrowded_spec_fails() {
        let mut s = empty_spec();
        s.pole.count = 5000;
        assert!(matches!(generate_world(&s), Err(Error::Generation(_))));
        let bad = WorldSpec { block_size_m: -1.0, ..WorldSpec::default() };
        assert!(generate_world(&bad).is_err());
    }

    #[test]
    fn facing_away_sees_nothing() {
        let mut s = empty_spec();
        s.pole.count = 1;
        let m = generate_world(&s).unwrap();
        let pole = cluster_map_points(&m, DEFAULT_MAP_CLUSTER_RADIUS).remove(0);
        let cam = default_camera();
        let c = pole.ground_centroid();
        let away = Pose2D::new(c.x - 10.0, c.y, std::f64::consts::PI);
        let lone = SemanticMap {
            labeled_points: m.labeled_points.clone(),
            background_boxes: vec![slab(-50.0, -50.0, 200.0, 200.0, -0.1, 0.0, SemanticClass::Road)],
        };
        assert_eq!(render_query(&lone, &away, &cam).unwrap().visible_instance_count, 0);
        let toward = Pose2D::new(c.x - 10.0, c.y, 0.0);
        let s = render_query(&lone, &toward, &cam).unwrap();
        assert_eq!(s.visible_instance_count, 1);
        // on the optical axis: the pole covers the center columns
        let mid = cam.width / 2;
        let rows: Vec<u32> = (0..cam.height).filter(|&v| s.query.label(mid, v) == SemanticClass::Pole).collect();
        assert!(!rows.is_empty());
        assert!(render_query(&lone, &Pose2D::new(1e4, 0.0, 0.0), &cam).is_err());
    }

    #[test]
    fn benchmark_set_rules() {
        let spec = WorldSpec::default();
        let map = generate_world(&spec).unwrap();
        let a = generate_benchmark_set(&spec, &map, 4, 0, 3).unwrap();
        let b = generate_benchmark_set(&spec, &map, 4, 0, 3).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(spec.on_road(s.ground_truth.x, s.ground_truth.y));
            let again = cluster_query_image(&s.query, DEFAULT_MIN_AREA).len();
            assert_eq!(again, s.visible_instance_count);
        }
        assert!(matches!(
            generate_benchmark_set(&spec, &map, 2, 10_000, 3),
            Err(Error::Generation(_))
        ));
        assert!(generate_benchmark_set(&spec, &map, 0, 0, 3).is_err());
    }

    #[test]
    fn outward_views_hit_the_perimeter() {
        let spec = WorldSpec::default();
        let map = generate_world(&empty_spec()).unwrap();
        let cam = default_camera();
        let e = spec.extent();
        let at = [(0.0, e / 2.0, std::f64::consts::PI), (e, e / 2.0, 0.0), (e / 2.0, 0.0, -FRAC_PI_2), (e / 2.0, e, FRAC_PI_2)];
        for (x, y, theta) in at {
            let img = render_semantic_view(&map, &Pose2D::new(x, y, theta), &cam);
            let above = cam.cy as u32 - 5;
            assert_eq!(img.label(cam.width / 2, above), SemanticClass::Building);
        }
    }

    #[test]
    fn distractors_keep_the_original_map() {
        let spec = WorldSpec::default();
        let map = generate_world(&spec).unwrap();
        let more = inject_distractors(&map, &spec, 5, 9).unwrap();
        assert_eq!(&more.labeled_points[..map.labeled_points.len()], &map.labeled_points[..]);
        assert_eq!(more.background_boxes, map.background_boxes);
        assert_eq!(cluster_map_points(&more, DEFAULT_MAP_CLUSTER_RADIUS).len(), 90 + 20);
        assert_eq!(more, inject_distractors(&map, &spec, 5, 9).unwrap());
    }

    #[test]
    fn road_membership() {
        let s = WorldSpec::default();
        assert!(s.on_road(0.0, 13.0));
        assert!(s.on_road(s.pitch(), 20.0));
        assert!(!s.on_road(s.pitch() / 2.0, s.pitch() / 2.0));
        assert!(!s.on_road(-20.0, 0.0));
    }

    #[test]
    fn write_benchmark_layout() {
        let spec = WorldSpec::default();
        let map = generate_world(&spec).unwrap();
        let samples = generate_benchmark_set(&spec, &map, 2, 1, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_benchmark(dir.path(), &spec, &map, &samples).unwrap();
        let back = BenchmarkManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.ground_truth(1), samples[1].ground_truth);
        let q = crate::worldmodel::load_query(dir.path().join(&back.samples[0].query), None).unwrap();
        assert_eq!(q, samples[0].query);
    }
}
