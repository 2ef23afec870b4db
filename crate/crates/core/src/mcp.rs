//! Exact maximum clique search.
//!
//! Branch and bound over bitsets with a greedy-coloring upper bound, vertices
//! renumbered by degeneracy order. The returned clique is the
//! lexicographically smallest among all maximum ones: the maximum size is
//! found first and the members are then fixed one at a time, smallest first,
//! with decision searches.

use serde::Serialize;

use crate::consistency::ConsistencyGraph;
use crate::error::{Error, Result};

pub const DEFAULT_VERTEX_CAP: usize = 2000;

/// Symmetric boolean relation over `0..n` stored as one bitset row per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        Adjacency {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut a = Adjacency::new(n);
        for (i, j) in edges {
            a.add_edge(i, j);
        }
        a
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    /// Self-loops are ignored.
    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i < self.n && j < self.n, "vertex out of range");
        if i == j {
            return;
        }
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
        self.bits[j * self.words + i / 64] |= 1 << (i % 64);
    }

    pub fn remove_edge(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] &= !(1 << (j % 64));
        self.bits[j * self.words + i / 64] &= !(1 << (i % 64));
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        iter_bits(self.row(i))
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).sum::<usize>() / 2
    }

    /// Edges `(i, j)` with `i < j` in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.neighbors(i).filter(move |&j| j > i).map(move |j| (i, j)))
    }

    pub fn is_clique(&self, vertices: &[usize]) -> bool {
        vertices
            .iter()
            .enumerate()
            .all(|(k, &a)| vertices[k + 1..].iter().all(|&b| a != b && self.is_adjacent(a, b)))
    }
}

fn iter_bits(words: &[u64]) -> impl Iterator<Item = usize> + '_ {
    words.iter().enumerate().flat_map(|(k, &w)| {
        let mut w = w;
        std::iter::from_fn(move || {
            (w != 0).then(|| {
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                k * 64 + b
            })
        })
    })
}

fn first_bit(words: &[u64]) -> Option<usize> {
    words
        .iter()
        .position(|&w| w != 0)
        .map(|k| k * 64 + words[k].trailing_zeros() as usize)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliqueResult {
    pub vertices: Vec<usize>,
    pub size: usize,
}

impl CliqueResult {
    pub fn empty() -> Self {
        CliqueResult {
            vertices: Vec::new(),
            size: 0,
        }
    }
}

struct Solver {
    words: usize,
    adj: Vec<u64>,
    /// original vertex -> solver position
    inv: Vec<usize>,
}

/// Vertices in reverse removal order of repeated minimum-degree deletion, so
/// that the densest core comes first.
fn degeneracy_order(g: &Adjacency) -> Vec<usize> {
    let n = g.len();
    let mut deg: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let mut removed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !removed[v])
            .min_by_key(|&v| (deg[v], v))
            .expect("vertex left");
        removed[v] = true;
        order.push(v);
        for u in g.neighbors(v) {
            if !removed[u] {
                deg[u] -= 1;
            }
        }
    }
    order.reverse();
    order
}

impl Solver {
    fn new(g: &Adjacency) -> Self {
        let n = g.len();
        let words = g.words;
        let perm = degeneracy_order(g);
        let mut inv = vec![0; n];
        for (p, &v) in perm.iter().enumerate() {
            inv[v] = p;
        }
        let mut adj = vec![0u64; n * words];
        for (p, &v) in perm.iter().enumerate() {
            for u in g.neighbors(v) {
                let q = inv[u];
                adj[p * words + q / 64] |= 1 << (q % 64);
            }
        }
        Solver { words, adj, inv }
    }

    fn row(&self, p: usize) -> &[u64] {
        &self.adj[p * self.words..(p + 1) * self.words]
    }

    /// Greedy sequential coloring of `p`; vertices returned in nondecreasing color.
    fn color_sort(&self, p: &[u64]) -> Vec<(usize, usize)> {
        let mut uncolored = p.to_vec();
        let mut out = Vec::new();
        let mut color = 0;
        while uncolored.iter().any(|&w| w != 0) {
            color += 1;
            let mut q = uncolored.clone();
            while let Some(v) = first_bit(&q) {
                uncolored[v / 64] &= !(1 << (v % 64));
                q[v / 64] &= !(1 << (v % 64));
                for (qw, aw) in q.iter_mut().zip(self.row(v)) {
                    *qw &= !aw;
                }
                out.push((v, color));
            }
        }
        out
    }

    /// Raises `best` to the largest clique size reachable from `p` when it
    /// beats the incoming value; returns true once `best >= stop_at`.
    fn expand(&self, mut p: Vec<u64>, size: usize, best: &mut usize, stop_at: usize) -> bool {
        let sorted = self.color_sort(&p);
        for &(v, color) in sorted.iter().rev() {
            if size + color <= *best {
                return false;
            }
            let next: Vec<u64> = p.iter().zip(self.row(v)).map(|(a, b)| a & b).collect();
            if next.iter().all(|&w| w == 0) {
                if size + 1 > *best {
                    *best = size + 1;
                    if *best >= stop_at {
                        return true;
                    }
                }
            } else if self.expand(next, size + 1, best, stop_at) {
                return true;
            }
            p[v / 64] &= !(1 << (v % 64));
        }
        false
    }

    fn has_clique(&self, p: Vec<u64>, k: usize) -> bool {
        if k == 0 {
            return true;
        }
        let mut best = k - 1;
        self.expand(p, 0, &mut best, k)
    }

    fn mask(&self, vertices: impl Iterator<Item = usize>) -> Vec<u64> {
        let mut m = vec![0u64; self.words];
        for v in vertices {
            let p = self.inv[v];
            m[p / 64] |= 1 << (p % 64);
        }
        m
    }
}

/// Maximum clique with the default vertex cap.
pub fn max_clique(g: &Adjacency) -> Result<CliqueResult> {
    max_clique_capped(g, DEFAULT_VERTEX_CAP)
}

pub fn max_clique_capped(g: &Adjacency, cap: usize) -> Result<CliqueResult> {
    let n = g.len();
    if n > cap {
        return Err(Error::GraphTooLarge { n, cap });
    }
    if n == 0 {
        return Ok(CliqueResult::empty());
    }
    let solver = Solver::new(g);
    let mut omega = 0;
    solver.expand(solver.mask(0..n), 0, &mut omega, usize::MAX);

    let mut chosen: Vec<usize> = Vec::with_capacity(omega);
    // candidates: vertices adjacent to everything chosen so far
    let mut common: Vec<bool> = vec![true; n];
    let mut start = 0;
    while chosen.len() < omega {
        let need = omega - chosen.len() - 1;
        let v = (start..n)
            .find(|&v| {
                common[v]
                    && solver.has_clique(
                        solver.mask((v + 1..n).filter(|&u| common[u] && g.is_adjacent(v, u))),
                        need,
                    )
            })
            .expect("a maximum clique extends the chosen prefix");
        chosen.push(v);
        for (u, c) in common.iter_mut().enumerate() {
            *c = *c && g.is_adjacent(v, u);
        }
        start = v + 1;
    }
    Ok(CliqueResult {
        size: chosen.len(),
        vertices: chosen,
    })
}

/// Drops every edge with both endpoints in `clique`, along with the stored
/// pair poses of those edges.
pub fn remove_clique_edges(mut graph: ConsistencyGraph, clique: &CliqueResult) -> ConsistencyGraph {
    for (k, &a) in clique.vertices.iter().enumerate() {
        for &b in &clique.vertices[k + 1..] {
            graph.remove_edge(a, b);
        }
    }
    graph
}
