use std::collections::HashMap;

use nalgebra::{Point2, Point3};

use super::{MapInstance, QueryImage, QueryInstance, SemanticClass, SemanticMap};
use crate::camera::PixelBox;

pub const DEFAULT_MAP_CLUSTER_RADIUS: f64 = 0.5;
pub const DEFAULT_MIN_AREA: usize = 25;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeps the result independent of pair order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn lex_cmp(a: &Point3<f64>, b: &Point3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Groups same-class foreground points whose single-linkage distance is
/// within `radius`. Ids follow the lexicographically smallest member point.
pub fn cluster_map_points(map: &SemanticMap, radius: f64) -> Vec<MapInstance> {
    assert!(radius > 0.0, "cluster radius must be positive");
    let pts: Vec<_> = map.foreground_points().collect();
    let mut uf = UnionFind::new(pts.len());
    let r2 = radius * radius;

    // spatial hash with cell side = radius, neighbours within one cell
    let cell = |p: &Point3<f64>| {
        (
            (p.x / radius).floor() as i64,
            (p.y / radius).floor() as i64,
            (p.z / radius).floor() as i64,
        )
    };
    let mut grid: HashMap<(SemanticClass, (i64, i64, i64)), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry((p.class, cell(&p.position))).or_default().push(i);
    }
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy, cz) = cell(&p.position);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(p.class, (cx + dx, cy + dy, cz + dz))) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && (pts[j].position - p.position).norm_squared() <= r2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..pts.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<(Point3<f64>, SemanticClass, Vec<Point3<f64>>)> = groups
        .into_values()
        .map(|mut members| {
            members.sort_unstable();
            let points: Vec<_> = members.iter().map(|&i| pts[i].position).collect();
            let min = *points.iter().min_by(|a, b| lex_cmp(a, b)).expect("non-empty");
            (min, pts[members[0]].class, points)
        })
        .collect();
    clusters.sort_by(|a, b| lex_cmp(&a.0, &b.0).then(a.1.cmp(&b.1)));
    clusters
        .into_iter()
        .enumerate()
        .map(|(id, (_, class, points))| MapInstance::from_points(id, class, points))
        .collect()
}

/// Extracts 4-connected same-class foreground regions with at least
/// `min_area` pixels. Touching objects of one class come out as one instance.
pub fn cluster_query_image(img: &QueryImage, min_area: usize) -> Vec<QueryInstance> {
    assert!(min_area >= 1, "min_area must be at least 1");
    let (w, h) = (img.width as usize, img.height as usize);
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();

    for start in 0..w * h {
        if visited[start] {
            continue;
        }
        let class = SemanticClass::from_id_lossy(img.labels[start]);
        if !class.is_foreground() {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(idx) = stack.pop() {
            let (u, v) = (idx % w, idx / w);
            pixels.push((u as u32, v as u32));
            let mut visit = |n: usize| {
                if !visited[n] && img.labels[n] == class.id() {
                    visited[n] = true;
                    stack.push(n);
                }
            };
            if u > 0 {
                visit(idx - 1);
            }
            if u + 1 < w {
                visit(idx + 1);
            }
            if v > 0 {
                visit(idx - w);
            }
            if v + 1 < h {
                visit(idx + w);
            }
        }
        if pixels.len() < min_area {
            continue;
        }
        pixels.sort_unstable_by_key(|&(u, v)| (v, u));
        let (mut umin, mut umax) = (u32::MAX, 0);
        let (mut vmin, mut vmax) = (u32::MAX, 0);
        for &(u, v) in &pixels {
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        // pixels are sorted by (v, u): the bottom row starts at the first pixel with v == vmax
        let rep = *pixels.iter().find(|&&(_, v)| v == vmax).expect("non-empty");
        let bbox = PixelBox::new(
            umin as f64 - 0.5,
            vmin as f64 - 0.5,
            umax as f64 + 0.5,
            vmax as f64 + 0.5,
        );
        out.push(QueryInstance {
            id: out.len(),
            class,
            pixels,
            bbox,
            size_px: (vmax - vmin + 1) as f64,
            representation_point_px: Point2::new(rep.0 as f64, rep.1 as f64),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::camera::CameraModel;
    use crate::worldmodel::LabeledPoint;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64, z: f64, class: SemanticClass) -> LabeledPoint {
        LabeledPoint {
            position: Point3::new(x, y, z),
            class,
        }
    }

    fn map_of(points: Vec<LabeledPoint>) -> SemanticMap {
        SemanticMap {
            labeled_points: points,
            background_boxes: vec![],
        }
    }

    #[test]
    fn close_points_merge() {
        let map = map_of(vec![
            pt(0.0, 0.0, 0.0, SemanticClass::Pole),
            pt(0.3, 0.0, 0.0, SemanticClass::Pole),
        ]);
        assert_eq!(cluster_map_points(&map, 0.5).len(), 1);
    }

    #[test]
    fn far_points_split() {
        let map = map_of(vec![
            pt(0.0, 0.0, 0.0, SemanticClass::Pole),
            pt(10.0, 0.0, 0.0, SemanticClass::Pole),
        ]);
        let inst = cluster_map_points(&map, 0.5);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].points[0].x, 0.0);
        assert_eq!(inst[1].id, 1);
    }

    #[test]
    fn classes_split() {
        let map = map_of(vec![
            pt(0.0, 0.0, 0.0, SemanticClass::Pole),
            pt(0.1, 0.0, 0.0, SemanticClass::TrafficSign),
        ]);
        assert_eq!(cluster_map_points(&map, 0.5).len(), 2);
    }

    #[test]
    fn chain_links_transitively() {
        let map = map_of((0..10).map(|i| pt(i as f64 * 0.4, 0.0, 0.0, SemanticClass::Pole)).collect());
        assert_eq!(cluster_map_points(&map, 0.5).len(), 1);
    }

    #[test]
    fn background_points_ignored() {
        let map = map_of(vec![pt(0.0, 0.0, 0.0, SemanticClass::Building)]);
        assert!(cluster_map_points(&map, 0.5).is_empty());
    }

    fn cam(w: u32, h: u32) -> CameraModel {
        CameraModel::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h, 1.5).unwrap()
    }

    fn paint(img: &mut QueryImage, u0: u32, v0: u32, w: u32, h: u32, c: SemanticClass) {
        for v in v0..v0 + h {
            for u in u0..u0 + w {
                img.set(u, v, c);
            }
        }
    }

    #[test]
    fn single_blob() {
        let mut img = QueryImage::blank(cam(40, 30));
        paint(&mut img, 5, 3, 10, 10, SemanticClass::Pole);
        let inst = cluster_query_image(&img, 25);
        assert_eq!(inst.len(), 1);
        let q = &inst[0];
        assert_eq!(q.size_px, 10.0);
        assert_eq!(q.area(), 100);
        assert_eq!(q.bbox, PixelBox::new(4.5, 2.5, 14.5, 12.5));
        assert_eq!(q.representation_point_px, Point2::new(5.0, 12.0));
    }

    #[test]
    fn touching_blobs_merge() {
        let mut img = QueryImage::blank(cam(40, 30));
        paint(&mut img, 5, 3, 5, 10, SemanticClass::Pole);
        paint(&mut img, 10, 8, 5, 10, SemanticClass::Pole);
        let inst = cluster_query_image(&img, 25);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].size_px, 15.0);
    }

    #[test]
    fn diagonal_is_not_connected() {
        let mut img = QueryImage::blank(cam(10, 10));
        img.set(1, 1, SemanticClass::Pole);
        img.set(2, 2, SemanticClass::Pole);
        assert_eq!(cluster_query_image(&img, 1).len(), 2);
    }

    #[test]
    fn small_blob_dropped() {
        let mut img = QueryImage::blank(cam(20, 20));
        paint(&mut img, 2, 2, 3, 1, SemanticClass::TrafficLight);
        assert!(cluster_query_image(&img, 25).is_empty());
        assert_eq!(cluster_query_image(&img, 3).len(), 1);
    }

    #[test]
    fn ids_in_raster_order() {
        let mut img = QueryImage::blank(cam(40, 30));
        paint(&mut img, 30, 10, 2, 15, SemanticClass::Pole);
        paint(&mut img, 2, 2, 2, 15, SemanticClass::TrafficSign);
        let inst = cluster_query_image(&img, 25);
        assert_eq!(inst[0].class, SemanticClass::TrafficSign);
        assert_eq!(inst[1].class, SemanticClass::Pole);
    }

    fn is_four_connected(pixels: &[(u32, u32)]) -> bool {
        let set: HashSet<_> = pixels.iter().copied().collect();
        let mut seen = HashSet::new();
        let mut stack = vec![pixels[0]];
        seen.insert(pixels[0]);
        while let Some((u, v)) = stack.pop() {
            let mut nb = vec![(u + 1, v), (u, v + 1)];
            if u > 0 {
                nb.push((u - 1, v));
            }
            if v > 0 {
                nb.push((u, v - 1));
            }
            for n in nb {
                if set.contains(&n) && seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        seen.len() == set.len()
    }

    proptest! {
        #[test]
        fn map_clusters_partition_foreground(
            raw in prop::collection::vec((0.0..20.0f64, 0.0..20.0f64, 0.0..3.0f64, 0usize..5), 0..80)
        ) {
            let classes = [SemanticClass::Pole, SemanticClass::TrafficSign,
                SemanticClass::TrafficLight, SemanticClass::StaticObstacle, SemanticClass::Road];
            let map = map_of(raw.iter().map(|&(x, y, z, c)| pt(x, y, z, classes[c])).collect());
            let inst = cluster_map_points(&map, 0.8);
            let total: usize = inst.iter().map(|i| i.points.len()).sum();
            let fg = map.foreground_points().count();
            prop_assert_eq!(total, fg);
            // every foreground point appears in exactly one cluster of its class
            let mut remaining: Vec<_> = map.foreground_points().map(|p| (p.position, p.class)).collect();
            for i in &inst {
                for p in &i.points {
                    let k = remaining.iter().position(|(q, c)| q == p && *c == i.class);
                    prop_assert!(k.is_some());
                    remaining.swap_remove(k.unwrap());
                }
            }
            prop_assert!(remaining.is_empty());
            prop_assert_eq!(&inst, &cluster_map_points(&map, 0.8));
        }

        #[test]
        fn query_clusters_disjoint_and_connected(
            labels in prop::collection::vec(prop::sample::select(vec![0u8, 0, 0, 1, 2, 13]), 24 * 18)
        ) {
            let img = QueryImage::new(24, 18, labels, cam(24, 18)).unwrap();
            let inst = cluster_query_image(&img, 1);
            let mut all = HashSet::new();
            for q in &inst {
                prop_assert!(is_four_connected(&q.pixels));
                for &(u, v) in &q.pixels {
                    prop_assert_eq!(img.label(u, v), q.class);
                    prop_assert!(all.insert((u, v)));
                }
            }
            let fg = img.labels.iter().filter(|&&l| l == 1 || l == 2).count();
            prop_assert_eq!(all.len(), fg);
            prop_assert_eq!(&inst, &cluster_query_image(&img, 1));
        }
    }
}
