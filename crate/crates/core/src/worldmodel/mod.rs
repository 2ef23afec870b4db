//! Maps, query images, and the instances clustered out of both.

mod cluster;
mod io;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, PixelBox};
use crate::error::{Error, Result};

pub use cluster::{
    cluster_map_points, cluster_query_image, DEFAULT_MAP_CLUSTER_RADIUS, DEFAULT_MIN_AREA,
};
pub use io::{
    load_map, load_query, map_from_json_str, map_to_json_string, save_map, save_query,
    sidecar_path_for, CameraSidecar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Foreground,
    Background,
    Unlabeled,
}

/// Semantic label with the on-disk id as discriminant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum SemanticClass {
    Unlabeled = 0,
    Pole = 1,
    TrafficSign = 2,
    TrafficLight = 3,
    StaticObstacle = 4,
    Building = 10,
    Fence = 11,
    RoadLine = 12,
    Road = 13,
    Sidewalk = 14,
    Vegetation = 15,
    Wall = 16,
    Bridge = 17,
    Terrain = 18,
}

impl SemanticClass {
    pub const FOREGROUND: [SemanticClass; 4] = [
        SemanticClass::Pole,
        SemanticClass::TrafficSign,
        SemanticClass::TrafficLight,
        SemanticClass::StaticObstacle,
    ];

    /// Background classes in histogram-bin order.
    pub const BACKGROUND: [SemanticClass; 9] = [
        SemanticClass::Building,
        SemanticClass::Fence,
        SemanticClass::RoadLine,
        SemanticClass::Road,
        SemanticClass::Sidewalk,
        SemanticClass::Vegetation,
        SemanticClass::Wall,
        SemanticClass::Bridge,
        SemanticClass::Terrain,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Strict lookup; `None` for ids outside the class table.
    pub fn from_id(id: u8) -> Option<Self> {
        use SemanticClass::*;
        Some(match id {
            0 => Unlabeled,
            1 => Pole,
            2 => TrafficSign,
            3 => TrafficLight,
            4 => StaticObstacle,
            10 => Building,
            11 => Fence,
            12 => RoadLine,
            13 => Road,
            14 => Sidewalk,
            15 => Vegetation,
            16 => Wall,
            17 => Bridge,
            18 => Terrain,
            _ => return None,
        })
    }

    /// Unknown ids read as `Unlabeled`.
    pub fn from_id_lossy(id: u8) -> Self {
        Self::from_id(id).unwrap_or(SemanticClass::Unlabeled)
    }

    pub fn kind(self) -> ClassKind {
        match self.id() {
            0 => ClassKind::Unlabeled,
            1..=4 => ClassKind::Foreground,
            _ => ClassKind::Background,
        }
    }

    pub fn is_foreground(self) -> bool {
        self.kind() == ClassKind::Foreground
    }

    pub fn is_background(self) -> bool {
        self.kind() == ClassKind::Background
    }

    /// Histogram bin of a background class.
    pub fn background_bin(self) -> Option<usize> {
        let id = self.id();
        (10..=18).contains(&id).then(|| (id - 10) as usize)
    }

    pub fn name(self) -> &'static str {
        use SemanticClass::*;
        match self {
            Unlabeled => "unlabeled",
            Pole => "pole",
            TrafficSign => "traffic_sign",
            TrafficLight => "traffic_light",
            StaticObstacle => "static_obstacle",
            Building => "building",
            Fence => "fence",
            RoadLine => "road_line",
            Road => "road",
            Sidewalk => "sidewalk",
            Vegetation => "vegetation",
            Wall => "wall",
            Bridge => "bridge",
            Terrain => "terrain",
        }
    }
}

impl TryFrom<u8> for SemanticClass {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Self::from_id(id).ok_or(Error::UnknownClass(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Point3<f64>,
    pub class: SemanticClass,
}

/// Oriented box of one background class. `extents` are full side lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundBox {
    pub center: Point3<f64>,
    pub extents: Vector3<f64>,
    pub yaw: f64,
    pub class: SemanticClass,
}

impl BackgroundBox {
    /// Corners in map coordinates; bottom face first (counterclockwise), then top.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let (s, c) = self.yaw.sin_cos();
        let h = self.extents / 2.0;
        let mut out = [Point3::origin(); 8];
        let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        for (layer, dz) in [-h.z, h.z].into_iter().enumerate() {
            for (k, (sx, sy)) in signs.iter().enumerate() {
                let lx = sx * h.x;
                let ly = sy * h.y;
                out[layer * 4 + k] = Point3::new(
                    self.center.x + c * lx - s * ly,
                    self.center.y + s * lx + c * ly,
                    self.center.z + dz,
                );
            }
        }
        out
    }

    /// Whether a map point lies inside the box (boundary inclusive).
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        let lx = c * d.x + s * d.y;
        let ly = -s * d.x + c * d.y;
        let h = self.extents / 2.0;
        lx.abs() <= h.x && ly.abs() <= h.y && d.z.abs() <= h.z
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticMap {
    pub labeled_points: Vec<LabeledPoint>,
    pub background_boxes: Vec<BackgroundBox>,
}

impl SemanticMap {
    /// Checks the map invariants: box classes are background, extents positive,
    /// coordinates finite.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.labeled_points.iter().enumerate() {
            if !p.position.coords.iter().all(|v| v.is_finite()) {
                return Err(Error::schema(format!("points[{i}]"), "non-finite coordinate"));
            }
            if p.class == SemanticClass::Unlabeled {
                return Err(Error::schema(format!("points[{i}]"), "point is unlabeled"));
            }
        }
        for (i, b) in self.background_boxes.iter().enumerate() {
            let record = format!("boxes[{i}]");
            if !b.class.is_background() {
                return Err(Error::schema(
                    record,
                    format!("class {} is not a background class", b.class.name()),
                ));
            }
            if !b.extents.iter().all(|e| e.is_finite() && *e > 0.0) {
                return Err(Error::schema(record, "extents must be strictly positive"));
            }
            if !b.center.coords.iter().all(|v| v.is_finite()) || !b.yaw.is_finite() {
                return Err(Error::schema(record, "non-finite center or yaw"));
            }
        }
        Ok(())
    }

    pub fn foreground_points(&self) -> impl Iterator<Item = &LabeledPoint> {
        self.labeled_points.iter().filter(|p| p.class.is_foreground())
    }

    /// Axis-aligned xy bounds over all geometry, `None` for an empty map.
    pub fn xy_bounds(&self) -> Option<(Point2<f64>, Point2<f64>)> {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        let mut grow = |p: &Point3<f64>| {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
            any = true;
        };
        for p in &self.labeled_points {
            grow(&p.position);
        }
        for b in &self.background_boxes {
            for c in b.corners() {
                grow(&c);
            }
        }
        any.then_some((lo, hi))
    }
}

/// A cluster of same-class foreground map points.
#[derive(Debug, Clone, PartialEq)]
pub struct MapInstance {
    pub id: usize,
    pub class: SemanticClass,
    pub points: Vec<Point3<f64>>,
    pub centroid: Point3<f64>,
    /// Vertical extent (max z - min z).
    pub size_m: f64,
    /// Lowest member point.
    pub representation_point: Point3<f64>,
}

impl MapInstance {
    /// Builds the derived fields from a non-empty point list.
    pub fn from_points(id: usize, class: SemanticClass, points: Vec<Point3<f64>>) -> Self {
        assert!(!points.is_empty(), "map instance needs at least one point");
        let n = points.len() as f64;
        let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        let centroid = Point3::from(sum / n);
        let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &points {
            zmin = zmin.min(p.z);
            zmax = zmax.max(p.z);
        }
        let representation_point = *points
            .iter()
            .min_by(|a, b| {
                a.z.total_cmp(&b.z)
                    .then(a.x.total_cmp(&b.x))
                    .then(a.y.total_cmp(&b.y))
            })
            .expect("non-empty");
        MapInstance {
            id,
            class,
            points,
            centroid,
            size_m: zmax - zmin,
            representation_point,
        }
    }

    /// Centroid projected onto the ground plane.
    pub fn ground_centroid(&self) -> Point2<f64> {
        Point2::new(self.centroid.x, self.centroid.y)
    }
}

/// Per-pixel label image plus the intrinsics of the camera that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u8>,
    pub camera: CameraModel,
}

impl QueryImage {
    /// Unknown label ids are rewritten to unlabeled.
    pub fn new(width: u32, height: u32, mut labels: Vec<u8>, camera: CameraModel) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::Image(format!(
                "{} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        for l in labels.iter_mut() {
            *l = SemanticClass::from_id_lossy(*l).id();
        }
        Ok(QueryImage {
            width,
            height,
            labels,
            camera,
        })
    }

    /// All-unlabeled image sized to the camera.
    pub fn blank(camera: CameraModel) -> Self {
        QueryImage {
            width: camera.width,
            height: camera.height,
            labels: vec![0; camera.width as usize * camera.height as usize],
            camera,
        }
    }

    #[inline]
    pub fn label(&self, u: u32, v: u32) -> SemanticClass {
        SemanticClass::from_id_lossy(self.labels[(v * self.width + u) as usize])
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, class: SemanticClass) {
        self.labels[(v * self.width + u) as usize] = class.id();
    }
}

/// A connected foreground region of a query image.
///
/// `bbox` is in continuous pixel coordinates where pixel `(u, v)` covers
/// `[u - 0.5, u + 0.5] x [v - 0.5, v + 0.5]`, so `bbox.height()` equals the
/// pixel row count. Instances synthesized from projections carry no pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInstance {
    pub id: usize,
    pub class: SemanticClass,
    pub pixels: Vec<(u32, u32)>,
    pub bbox: PixelBox,
    /// Vertical extent in pixels.
    pub size_px: f64,
    /// Bottom-most pixel (largest v, then smallest u).
    pub representation_point_px: Point2<f64>,
}

impl QueryInstance {
    /// Instance observed as an exact continuous box, e.g. a projected map instance.
    pub fn from_box(
        id: usize,
        class: SemanticClass,
        bbox: PixelBox,
        representation_point_px: Point2<f64>,
    ) -> Self {
        QueryInstance {
            id,
            class,
            pixels: Vec::new(),
            bbox,
            size_px: bbox.height(),
            representation_point_px,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_table_is_bit_exact() {
        let table = [
            (0, "unlabeled"),
            (1, "pole"),
            (2, "traffic_sign"),
            (3, "traffic_light"),
            (4, "static_obstacle"),
            (10, "building"),
            (11, "fence"),
            (12, "road_line"),
            (13, "road"),
            (14, "sidewalk"),
            (15, "vegetation"),
            (16, "wall"),
            (17, "bridge"),
            (18, "terrain"),
        ];
        for (id, name) in table {
            let c = SemanticClass::from_id(id).unwrap();
            assert_eq!(c.id(), id);
            assert_eq!(c.name(), name);
        }
        for id in [5u8, 9, 19, 200, 255] {
            assert!(SemanticClass::from_id(id).is_none());
            assert_eq!(SemanticClass::from_id_lossy(id), SemanticClass::Unlabeled);
        }
    }

    #[test]
    fn class_counts() {
        let all: Vec<_> = (0..=255u8).filter_map(SemanticClass::from_id).collect();
        assert_eq!(all.iter().filter(|c| c.is_foreground()).count(), 4);
        assert_eq!(all.iter().filter(|c| c.is_background()).count(), 9);
        for (bin, c) in SemanticClass::BACKGROUND.iter().enumerate() {
            assert_eq!(c.background_bin(), Some(bin));
        }
        assert_eq!(SemanticClass::Pole.background_bin(), None);
    }

    #[test]
    fn representation_point_is_lowest() {
        let pts = vec![
            Point3::new(1.0, 0.0, 2.0),
            Point3::new(1.0, 0.0, 0.5),
            Point3::new(1.0, 0.0, 1.0),
        ];
        let inst = MapInstance::from_points(0, SemanticClass::Pole, pts);
        assert_eq!(inst.representation_point, Point3::new(1.0, 0.0, 0.5));
        assert!((inst.size_m - 1.5).abs() < 1e-12);
        assert!((inst.centroid.z - 7.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn box_corners_and_containment() {
        let b = BackgroundBox {
            center: Point3::new(1.0, 2.0, 0.5),
            extents: Vector3::new(4.0, 2.0, 1.0),
            yaw: std::f64::consts::FRAC_PI_2,
            class: SemanticClass::Building,
        };
        let c = b.corners();
        // yaw 90 degrees swaps the footprint axes
        let xs: Vec<f64> = c.iter().map(|p| p.x).collect();
        let xmax = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((xmax - 2.0).abs() < 1e-12);
        assert!(b.contains(&Point3::new(1.0, 3.9, 0.5)));
        assert!(!b.contains(&Point3::new(2.5, 2.0, 0.5)));
    }

    #[test]
    fn query_image_rejects_bad_length() {
        let cam = CameraModel::new(10.0, 10.0, 2.0, 2.0, 4, 4, 1.5).unwrap();
        assert!(QueryImage::new(4, 4, vec![0; 15], cam).is_err());
        let img = QueryImage::new(4, 4, vec![7; 16], cam).unwrap();
        assert!(img.labels.iter().all(|&l| l == 0));
    }
}
