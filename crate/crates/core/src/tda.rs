//! Vietoris-Rips persistence (H0 and H1) over point clouds built from
//! attention summaries, plus the fragmentation and coherence totals.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace_model::AttentionBlock;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TdaError {
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("point cloud is empty")]
    Empty,
    #[error("non-finite coordinate in point {0}")]
    NonFinite(usize),
    #[error("epsilon cap must be positive, got {0}")]
    BadCap(f64),
    #[error("max_dim must be 0 or 1, got {0}")]
    BadDimension(usize),
    #[error("attention block shape {shape:?} does not match {len} values")]
    AttentionShape { shape: [usize; 2], len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vec<f64>>,
    labels: Option<Vec<String>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self, TdaError> {
        let first = points.first().ok_or(TdaError::Empty)?;
        let dim = first.len();
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(TdaError::DimensionMismatch { index, expected: dim, found: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(TdaError::NonFinite(index));
            }
        }
        Ok(PointCloud { points, labels: None })
    }

    /// One point per attention row (per layer-head vector).
    pub fn from_attention(block: &AttentionBlock) -> Result<Self, TdaError> {
        if !block.is_consistent() {
            return Err(TdaError::AttentionShape { shape: block.shape, len: block.data.len() });
        }
        Self::new(block.rows().map(<[f64]>::to_vec).collect())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.points[i]
            .iter()
            .zip(&self.points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub birth: f64,
    pub death: f64,
    pub dimension: u8,
}

impl PersistencePair {
    pub fn lifetime(&self) -> f64 {
        self.death - self.birth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssentialClass {
    pub birth: f64,
    pub dimension: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub pairs: Vec<PersistencePair>,
    pub essential: Vec<EssentialClass>,
}

impl PersistenceDiagram {
    pub fn pairs_in(&self, dimension: u8) -> impl Iterator<Item = &PersistencePair> {
        self.pairs.iter().filter(move |p| p.dimension == dimension)
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    len: f64,
    a: usize,
    b: usize,
}

fn cmp_edges(x: &Edge, y: &Edge) -> Ordering {
    x.len.total_cmp(&y.len).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b))
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => self.parent[ra] = rb,
            Ordering::Greater => self.parent[rb] = ra,
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Symmetric difference of two sorted index lists.
fn xor_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Rips persistence up to dimension `max_dim` (0 or 1).
///
/// Only edges no longer than `epsilon_cap` (default: no cap) enter the
/// filtration; classes still alive at the cap are reported as essential.
/// H0 comes from Kruskal's algorithm. H1 comes from reducing the
/// triangle-to-edge boundary matrix over Z/2; zero-length H1 pairs are
/// dropped.
pub fn rips_persistence(
    cloud: &PointCloud,
    max_dim: usize,
    epsilon_cap: Option<f64>,
) -> Result<PersistenceDiagram, TdaError> {
    if max_dim > 1 {
        return Err(TdaError::BadDimension(max_dim));
    }
    if let Some(cap) = epsilon_cap {
        if cap.is_nan() || cap <= 0.0 {
            return Err(TdaError::BadCap(cap));
        }
    }
    let cap = epsilon_cap.unwrap_or(f64::INFINITY);
    let n = cloud.len();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let len = cloud.distance(a, b);
            if len <= cap {
                edges.push(Edge { len, a, b });
            }
        }
    }
    edges.sort_by(cmp_edges);

    let mut diagram = PersistenceDiagram::default();
    let mut uf = UnionFind::new(n);
    let mut negative = vec![false; edges.len()];
    for (k, e) in edges.iter().enumerate() {
        if uf.union(e.a, e.b) {
            negative[k] = true;
            diagram.pairs.push(PersistencePair { birth: 0.0, death: e.len, dimension: 0 });
        }
    }
    let components = (0..n).filter(|&v| uf.find(v) == v).count();
    diagram
        .essential
        .extend((0..components).map(|_| EssentialClass { birth: 0.0, dimension: 0 }));

    if max_dim == 1 {
        h1_pairs(n, &edges, &negative, &mut diagram);
    }
    Ok(diagram)
}

fn h1_pairs(n: usize, edges: &[Edge], negative: &[bool], diagram: &mut PersistenceDiagram) {
    // edge order index by vertex pair
    let mut order = vec![usize::MAX; n * n];
    for (k, e) in edges.iter().enumerate() {
        order[e.a * n + e.b] = k;
        order[e.b * n + e.a] = k;
    }
    // triangles whose three edges are all present, as sorted edge-index columns
    let mut triangles: Vec<(f64, [usize; 3])> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let ab = order[a * n + b];
            if ab == usize::MAX {
                continue;
            }
            for c in b + 1..n {
                let (ac, bc) = (order[a * n + c], order[b * n + c]);
                if ac == usize::MAX || bc == usize::MAX {
                    continue;
                }
                let mut col = [ab, ac, bc];
                col.sort_unstable();
                triangles.push((edges[col[2]].len, col));
            }
        }
    }
    // filtration order: diameter, then the boundary read from its largest edge down
    triangles.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1[2].cmp(&y.1[2]))
            .then(x.1[1].cmp(&y.1[1]))
            .then(x.1[0].cmp(&y.1[0]))
    });

    // pivot edge -> reduced column that owns it
    let mut owner: Vec<Option<Vec<usize>>> = vec![None; edges.len()];
    let mut killed = vec![false; edges.len()];
    for (diam, tri) in &triangles {
        let mut col = tri.to_vec();
        while let Some(&low) = col.last() {
            match &owner[low] {
                Some(other) => col = xor_sorted(&col, other),
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            killed[low] = true;
            let birth = edges[low].len;
            if *diam > birth {
                diagram.pairs.push(PersistencePair { birth, death: *diam, dimension: 1 });
            }
            owner[low] = Some(col);
        }
    }
    for (k, e) in edges.iter().enumerate() {
        if !negative[k] && !killed[k] {
            diagram.essential.push(EssentialClass { birth: e.len, dimension: 1 });
        }
    }
}

/// Total H0 lifetime over finite pairs; essential classes are excluded.
pub fn fragmentation(diagram: &PersistenceDiagram) -> f64 {
    diagram.pairs_in(0).map(PersistencePair::lifetime).sum()
}

/// Total H1 lifetime over finite pairs.
pub fn coherence(diagram: &PersistenceDiagram) -> f64 {
    diagram.pairs_in(1).map(PersistencePair::lifetime).sum()
}

/// Minimum spanning tree edge weights by Prim's algorithm on the dense
/// distance matrix. Used as an independent check on H0.
pub fn mst_weights(cloud: &PointCloud) -> Vec<f64> {
    let n = cloud.len();
    if n == 0 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut weights = Vec::with_capacity(n - 1);
    for step in 0..n {
        let u = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&x, &y| best[x].total_cmp(&best[y]))
            .expect("a vertex remains");
        in_tree[u] = true;
        if step > 0 {
            weights.push(best[u]);
        }
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(cloud.distance(u, v));
            }
        }
    }
    weights.sort_by(f64::total_cmp);
    weights
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(points: &[&[f64]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn two_points() {
        let d = rips_persistence(&cloud(&[&[0.0, 0.0], &[3.0, 4.0]]), 1, None).unwrap();
        assert_eq!(d.pairs, [PersistencePair { birth: 0.0, death: 5.0, dimension: 0 }]);
        assert_eq!(d.essential, [EssentialClass { birth: 0.0, dimension: 0 }]);
    }

    #[test]
    fn unit_square_loop() {
        let sq = cloud(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let d = rips_persistence(&sq, 1, Some(2.0)).unwrap();
        let h1: Vec<_> = d.pairs_in(1).collect();
        assert_eq!(h1.len(), 1);
        assert!((h1[0].birth - 1.0).abs() < 1e-9);
        assert!((h1[0].death - 2f64.sqrt()).abs() < 1e-9);
        assert!((coherence(&d) - (2f64.sqrt() - 1.0)).abs() < 1e-9);
        assert_eq!(fragmentation(&d), 3.0);
        assert!(d.essential.iter().all(|e| e.dimension == 0));
    }

    #[test]
    fn cap_leaves_loop_open() {
        let sq = cloud(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let d = rips_persistence(&sq, 1, Some(1.2)).unwrap();
        assert_eq!(coherence(&d), 0.0);
        assert_eq!(d.essential.iter().filter(|e| e.dimension == 1).count(), 1);
        let far = cloud(&[&[0.0], &[10.0]]);
        let d = rips_persistence(&far, 0, Some(1.0)).unwrap();
        assert!(d.pairs.is_empty());
        assert_eq!(d.essential.len(), 2);
    }

    #[test]
    fn degenerate_inputs() {
        let one = rips_persistence(&cloud(&[&[1.0, 2.0]]), 1, None).unwrap();
        assert_eq!(fragmentation(&one), 0.0);
        assert_eq!(coherence(&one), 0.0);
        assert_eq!(PointCloud::new(vec![]), Err(TdaError::Empty));
        assert_eq!(
            PointCloud::new(vec![vec![0.0, 1.0], vec![1.0]]),
            Err(TdaError::DimensionMismatch { index: 1, expected: 2, found: 1 })
        );
        assert_eq!(rips_persistence(&cloud(&[&[0.0]]), 2, None), Err(TdaError::BadDimension(2)));
        assert_eq!(rips_persistence(&cloud(&[&[0.0]]), 1, Some(0.0)), Err(TdaError::BadCap(0.0)));
    }

    #[test]
    fn line_has_no_loops() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.5, 0.0]).collect();
        let d = rips_persistence(&PointCloud::new(pts).unwrap(), 1, None).unwrap();
        assert_eq!(coherence(&d), 0.0);
    }

    #[test]
    fn circle_beats_line() {
        let n = 16;
        let circle: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let line: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 0.4, 0.0]).collect();
        let c = coherence(&rips_persistence(&PointCloud::new(circle).unwrap(), 1, None).unwrap());
        let l = coherence(&rips_persistence(&PointCloud::new(line).unwrap(), 1, None).unwrap());
        assert!(c > l);
        assert!(c > 1.0);
    }

    #[test]
    fn attention_block_rows_become_points() {
        let block = AttentionBlock { shape: [2, 3], data: vec![0.0, 0.0, 0.0, 1.0, 2.0, 2.0] };
        let c = PointCloud::from_attention(&block).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.distance(0, 1), 3.0);
        let bad = AttentionBlock { shape: [2, 2], data: vec![0.0; 3] };
        assert!(PointCloud::from_attention(&bad).is_err());
    }

    fn random_cloud(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1..=max_n, 1usize..4).prop_flat_map(|(n, dim)| {
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), n)
        })
    }

    fn sorted_deaths(d: &PersistenceDiagram, dim: u8) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = d.pairs_in(dim).map(|p| (p.birth, p.death)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn h0_deaths_are_mst_weights(pts in random_cloud(50)) {
            let c = PointCloud::new(pts).unwrap();
            let d = rips_persistence(&c, 0, None).unwrap();
            let mut deaths: Vec<f64> = d.pairs_in(0).map(|p| p.death).collect();
            deaths.sort_by(f64::total_cmp);
            prop_assert_eq!(deaths, mst_weights(&c));
        }

        #[test]
        fn permutation_and_rigid_motion(pts in random_cloud(14), angle in 0.0f64..6.3, shift in -5.0f64..5.0) {
            let c = PointCloud::new(pts.clone()).unwrap();
            let base = rips_persistence(&c, 1, None).unwrap();
            let moved: Vec<Vec<f64>> = pts
                .iter()
                .rev()
                .map(|p| {
                    let mut q = p.clone();
                    if q.len() >= 2 {
                        let (x, y) = (q[0], q[1]);
                        q[0] = angle.cos() * x - angle.sin() * y;
                        q[1] = angle.sin() * x + angle.cos() * y;
                    }
                    q.iter().map(|v| v + shift).collect()
                })
                .collect();
            let other = rips_persistence(&PointCloud::new(moved).unwrap(), 1, None).unwrap();
            prop_assert!((fragmentation(&base) - fragmentation(&other)).abs() < 1e-9);
            prop_assert!((coherence(&base) - coherence(&other)).abs() < 1e-9);
            let (a, b) = (sorted_deaths(&base, 0), sorted_deaths(&other, 0));
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.1 - y.1).abs() < 1e-9);
            }
        }

        #[test]
        fn scaling_scales_lifetimes(pts in random_cloud(14), s in 0.1f64..10.0) {
            let c = PointCloud::new(pts.clone()).unwrap();
            let scaled = PointCloud::new(pts.iter().map(|p| p.iter().map(|v| v * s).collect()).collect()).unwrap();
            let (d, ds) = (rips_persistence(&c, 1, None).unwrap(), rips_persistence(&scaled, 1, None).unwrap());
            prop_assert!((fragmentation(&d) * s - fragmentation(&ds)).abs() < 1e-9 * (1.0 + fragmentation(&ds)));
            prop_assert!((coherence(&d) * s - coherence(&ds)).abs() < 1e-9 * (1.0 + coherence(&ds)));
        }
    }
}
