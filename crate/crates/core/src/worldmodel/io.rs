use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{BackgroundBox, LabeledPoint, QueryImage, SemanticClass, SemanticMap};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::util::round_sig;

const SIG_DIGITS: usize = 9;

#[derive(Debug, Serialize, Deserialize)]
struct MapFile {
    #[serde(default)]
    points: Vec<[f64; 4]>,
    #[serde(default)]
    boxes: Vec<BoxRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    center: [f64; 3],
    extents: [f64; 3],
    yaw: f64,
    class_id: u8,
}

fn class_from_record(record: &str, raw: f64) -> Result<SemanticClass> {
    if raw.fract() != 0.0 || !(0.0..=255.0).contains(&raw) {
        return Err(Error::schema(record, format!("class id {raw} is not a u8")));
    }
    let id = raw as u8;
    SemanticClass::from_id(id).ok_or_else(|| Error::schema(record, format!("unknown class id {id}")))
}

pub fn map_from_json_str(text: &str) -> Result<SemanticMap> {
    let file: MapFile = serde_json::from_str(text).map_err(|e| Error::Json {
        path: PathBuf::from("<map>"),
        source: e,
    })?;
    let mut map = SemanticMap::default();
    for (i, [x, y, z, cid]) in file.points.into_iter().enumerate() {
        let class = class_from_record(&format!("points[{i}]"), cid)?;
        map.labeled_points.push(LabeledPoint {
            position: Point3::new(x, y, z),
            class,
        });
    }
    for (i, b) in file.boxes.into_iter().enumerate() {
        let record = format!("boxes[{i}]");
        let class = class_from_record(&record, b.class_id as f64)?;
        map.background_boxes.push(BackgroundBox {
            center: Point3::from(b.center),
            extents: Vector3::from(b.extents),
            yaw: b.yaw,
            class,
        });
    }
    map.validate()?;
    Ok(map)
}

/// Reads a map file. Records keep file order.
pub fn load_map(path: impl AsRef<Path>) -> Result<SemanticMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    map_from_json_str(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn map_to_json_string(map: &SemanticMap) -> String {
    let r = |v: f64| round_sig(v, SIG_DIGITS);
    let file = MapFile {
        points: map
            .labeled_points
            .iter()
            .map(|p| {
                [
                    r(p.position.x),
                    r(p.position.y),
                    r(p.position.z),
                    p.class.id() as f64,
                ]
            })
            .collect(),
        boxes: map
            .background_boxes
            .iter()
            .map(|b| BoxRecord {
                center: [r(b.center.x), r(b.center.y), r(b.center.z)],
                extents: [r(b.extents.x), r(b.extents.y), r(b.extents.z)],
                yaw: r(b.yaw),
                class_id: b.class.id(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("map serialization cannot fail")
}

pub fn save_map(map: &SemanticMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map_to_json_string(map)).map_err(|e| Error::io(path, e))
}

/// Camera sidecar stored next to each query label image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSidecar {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub cam_height_m: f64,
}

impl From<CameraModel> for CameraSidecar {
    fn from(c: CameraModel) -> Self {
        CameraSidecar {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            cam_height_m: c.cam_height,
        }
    }
}

impl CameraSidecar {
    pub fn to_camera(self) -> Result<CameraModel> {
        CameraModel::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            self.cam_height_m,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CameraModel> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: CameraSidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        s.to_camera()
    }

    pub fn save(self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self).expect("sidecar serialization");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `foo/bar.pgm` -> `foo/bar.json`.
pub fn sidecar_path_for(pgm: impl AsRef<Path>) -> PathBuf {
    pgm.as_ref().with_extension("json")
}

fn parse_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let bad = |m: &str| Error::Image(m.to_string());
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        tokens.push(&bytes[start..pos]);
    }
    if tokens[0] != b"P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |t: &[u8]| -> Result<u32> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad PGM header number"))
    };
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    // exactly one whitespace byte before the raster
    pos += 1;
    let n = w as usize * h as usize;
    if bytes.len() < pos + n {
        return Err(bad("PGM raster shorter than header size"));
    }
    Ok((w, h, bytes[pos..pos + n].to_vec()))
}

/// Reads a label PGM and its sidecar (`<stem>.json` unless given).
pub fn load_query(pgm: impl AsRef<Path>, sidecar: Option<&Path>) -> Result<QueryImage> {
    let pgm = pgm.as_ref();
    let sidecar = sidecar
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar_path_for(pgm));
    let bytes = fs::read(pgm).map_err(|e| Error::io(pgm, e))?;
    let (w, h, labels) = parse_pgm(&bytes)?;
    let camera = CameraSidecar::load(&sidecar)?;
    if camera.width != w || camera.height != h {
        return Err(Error::Image(format!(
            "{}: image is {w}x{h} but sidecar says {}x{}",
            pgm.display(),
            camera.width,
            camera.height
        )));
    }
    QueryImage::new(w, h, labels, camera)
}

/// Writes the label PGM and its sidecar next to it.
pub fn save_query(img: &QueryImage, pgm: impl AsRef<Path>) -> Result<()> {
    let pgm = pgm.as_ref();
    let mut f = fs::File::create(pgm).map_err(|e| Error::io(pgm, e))?;
    write!(f, "P5\n{} {}\n255\n", img.width, img.height)
        .and_then(|_| f.write_all(&img.labels))
        .map_err(|e| Error::io(pgm, e))?;
    CameraSidecar::from(img.camera).save(sidecar_path_for(pgm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_map() {
        let text = r#"{"points": [[1.0, 2.0, 0.5, 1]],
            "boxes": [{"center": [0,0,-0.05], "extents": [10,10,0.1], "yaw": 0, "class_id": 13}]}"#;
        let map = map_from_json_str(text).unwrap();
        assert_eq!(map.labeled_points.len(), 1);
        assert_eq!(map.labeled_points[0].class, SemanticClass::Pole);
        assert_eq!(map.background_boxes.len(), 1);
        assert_eq!(map.background_boxes[0].class, SemanticClass::Road);
    }

    #[test]
    fn empty_map() {
        let map = map_from_json_str(r#"{"points": [], "boxes": []}"#).unwrap();
        assert!(map.labeled_points.is_empty());
    }

    #[test]
    fn zero_extent_rejected() {
        let text = r#"{"points": [], "boxes": [
            {"center": [0,0,0], "extents": [1,1,1], "yaw": 0, "class_id": 10},
            {"center": [0,0,0], "extents": [1,0,1], "yaw": 0, "class_id": 10}]}"#;
        let err = map_from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("boxes[1]"), "{err}");
    }

    #[test]
    fn unknown_class_echoed() {
        let err = map_from_json_str(r#"{"points": [[0,0,0,7]]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("points[0]") && msg.contains('7'), "{msg}");
        let err = map_from_json_str(
            r#"{"boxes": [{"center": [0,0,0], "extents": [1,1,1], "yaw": 0, "class_id": 99}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn foreground_box_rejected() {
        let text =
            r#"{"boxes": [{"center": [0,0,0], "extents": [1,1,1], "yaw": 0, "class_id": 1}]}"#;
        assert!(map_from_json_str(text).is_err());
    }

    #[test]
    fn missing_file() {
        let err = load_map("/nonexistent/dir/map.json").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/map.json"));
    }

    #[test]
    fn map_file_roundtrip() {
        let text = r#"{"points": [[1.5, -2.25, 0.125, 3]],
            "boxes": [{"center": [1,2,3], "extents": [1,2,3], "yaw": 0.5, "class_id": 18}]}"#;
        let map = map_from_json_str(text).unwrap();
        let again = map_from_json_str(&map_to_json_string(&map)).unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn pgm_roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CameraModel::new(50.0, 50.0, 3.0, 2.0, 6, 4, 1.5).unwrap();
        let labels: Vec<u8> = (0..24).map(|i| [0u8, 1, 10, 13][i % 4]).collect();
        let img = QueryImage::new(6, 4, labels, cam).unwrap();
        let path = dir.path().join("q.pgm");
        save_query(&img, &path).unwrap();
        let back = load_query(&path, None).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend([1u8, 13]);
        let (w, h, px) = parse_pgm(&bytes).unwrap();
        assert_eq!((w, h, px), (2, 1, vec![1, 13]));
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
