//! Model geometries: graphs with shortest-path metrics and graph Laplacians.
//!
//! Every generator returns a [`GeneratedSpace`]: the edge list it was built
//! from, the shortest-path distance matrix, a measure, and a Laplacian. The
//! unnormalized Laplacian `L = D - A` pairs with the unit measure; the
//! random-walk Laplacian `L = I - D^{-1} A` pairs with the degree measure
//! (that is what makes it self-adjoint).

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::MetricMeasureSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Unnormalized,
    RandomWalkSymmetrized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedSpace {
    pub kind: String,
    pub n: usize,
    /// (i, j, weight) with i < j; weight is the metric edge length
    pub edges: Vec<(usize, usize, f64)>,
    pub measure: Vec<f64>,
    pub laplacian_kind: LaplacianKind,
    /// suggested heat-kernel exponent for the geometry, when one is known
    pub beta0_hint: Option<f64>,
}

impl GeneratedSpace {
    /// Shortest-path distances (Floyd-Warshall over the edge lengths).
    pub fn distances(&self) -> Array2<f64> {
        let n = self.n;
        let mut d = Array2::from_elem((n, n), f64::INFINITY);
        for i in 0..n {
            d[(i, i)] = 0.0;
        }
        for &(i, j, w) in &self.edges {
            if w < d[(i, j)] {
                d[(i, j)] = w;
                d[(j, i)] = w;
            }
        }
        for k in 0..n {
            for i in 0..n {
                let dik = d[(i, k)];
                if !dik.is_finite() {
                    continue;
                }
                for j in 0..n {
                    let alt = dik + d[(k, j)];
                    if alt < d[(i, j)] {
                        d[(i, j)] = alt;
                        d[(j, i)] = alt;
                    }
                }
            }
        }
        d
    }

    /// Graph Laplacian matching `laplacian_kind`. Adjacency weights are 1 per
    /// edge (the metric length only shapes the distance matrix).
    pub fn laplacian(&self) -> Array2<f64> {
        let n = self.n;
        let mut a = Array2::zeros((n, n));
        for &(i, j, _) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        let mut l = Array2::zeros((n, n));
        match self.laplacian_kind {
            LaplacianKind::Unnormalized => {
                for i in 0..n {
                    l[(i, i)] = deg[i];
                    for j in 0..n {
                        if i != j {
                            l[(i, j)] = -a[(i, j)];
                        }
                    }
                }
            }
            LaplacianKind::RandomWalkSymmetrized => {
                for i in 0..n {
                    l[(i, i)] = 1.0;
                    for j in 0..n {
                        if i != j && deg[i] > 0.0 {
                            l[(i, j)] = -a[(i, j)] / deg[i];
                        }
                    }
                }
            }
        }
        l
    }

    pub fn space(&self) -> Result<MetricMeasureSpace> {
        MetricMeasureSpace::new(self.distances(), Array1::from_vec(self.measure.clone()))
    }

    fn with_kind(mut self, kind: LaplacianKind) -> Self {
        if kind == LaplacianKind::RandomWalkSymmetrized {
            // degree measure
            let mut deg = vec![0.0f64; self.n];
            for &(i, j, _) in &self.edges {
                deg[i] += 1.0;
                deg[j] += 1.0;
            }
            self.measure = deg;
        }
        self.laplacian_kind = kind;
        self
    }
}

fn base(kind: &str, n: usize, edges: Vec<(usize, usize, f64)>, beta0_hint: Option<f64>) -> GeneratedSpace {
    GeneratedSpace {
        kind: kind.to_string(),
        n,
        edges,
        measure: vec![1.0; n],
        laplacian_kind: LaplacianKind::Unnormalized,
        beta0_hint,
    }
}

pub fn cycle(n: usize, kind: LaplacianKind) -> Result<GeneratedSpace> {
    if n < 3 {
        return Err(Error::InvalidParams(format!("cycle needs n >= 3, got {n}")));
    }
    let edges = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n), 1.0)).collect();
    Ok(base("cycle", n, edges, None).with_kind(kind))
}

pub fn path(n: usize, kind: LaplacianKind) -> Result<GeneratedSpace> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("path needs n >= 2, got {n}")));
    }
    let edges = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
    Ok(base("path", n, edges, None).with_kind(kind))
}

pub fn torus(n: usize, m: usize, kind: LaplacianKind) -> Result<GeneratedSpace> {
    if n < 3 || m < 3 {
        return Err(Error::InvalidParams(format!("torus needs n,m >= 3, got {n}x{m}")));
    }
    let idx = |i: usize, j: usize| i * m + j;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let a = idx(i, j);
            let b = idx((i + 1) % n, j);
            let c = idx(i, (j + 1) % m);
            edges.push((a.min(b), a.max(b), 1.0));
            edges.push((a.min(c), a.max(c), 1.0));
        }
    }
    edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    Ok(base("torus", n * m, edges, None).with_kind(kind))
}

pub fn binary_tree(depth: usize, kind: LaplacianKind) -> Result<GeneratedSpace> {
    if depth == 0 {
        return Err(Error::InvalidParams("binary tree needs depth >= 1".into()));
    }
    let n = (1usize << (depth + 1)) - 1;
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = (i - 1) / 2;
        edges.push((parent, i, 1.0));
    }
    Ok(base("binary_tree", n, edges, None).with_kind(kind))
}

/// Sierpinski gasket graph at a given subdivision level, built on an integer
/// corner lattice: level L has 3(3^L + 1)/2 vertices and 3^(L+1) edges.
/// The walk dimension of the limiting fractal suggests beta0 = log 5 / log 2.
pub fn gasket(level: usize, kind: LaplacianKind) -> Result<GeneratedSpace> {
    if level == 0 {
        return Err(Error::InvalidParams("gasket needs level >= 1".into()));
    }
    use std::collections::BTreeMap;
    let size = 1usize << level;
    let mut coords: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    // recursive subdivision on the (u, v) lattice with u + v <= size
    fn rec(
        u: usize,
        v: usize,
        s: usize,
        coords: &mut BTreeMap<(usize, usize), usize>,
        edges: &mut Vec<(usize, usize)>,
    ) {
        if s == 1 {
            let id = |p: (usize, usize), coords: &mut BTreeMap<(usize, usize), usize>| {
                let next = coords.len();
                *coords.entry(p).or_insert(next)
            };
            let a = id((u, v), coords);
            let b = id((u + 1, v), coords);
            let c = id((u, v + 1), coords);
            edges.push((a.min(b), a.max(b)));
            edges.push((a.min(c), a.max(c)));
            edges.push((b.min(c), b.max(c)));
        } else {
            let h = s / 2;
            rec(u, v, h, coords, edges);
            rec(u + h, v, h, coords, edges);
            rec(u, v + h, h, coords, edges);
        }
    }
    rec(0, 0, size, &mut coords, &mut edges);
    // re-index so ids follow lattice order (deterministic, insertion order is
    // recursion-dependent)
    let mut remap = vec![0usize; coords.len()];
    for (rank, (_, &old)) in coords.iter().enumerate() {
        remap[old] = rank;
    }
    let n = coords.len();
    let mut e2: Vec<(usize, usize, f64)> = edges
        .into_iter()
        .map(|(a, b)| {
            let (x, y) = (remap[a], remap[b]);
            (x.min(y), x.max(y), 1.0)
        })
        .collect();
    e2.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    e2.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    Ok(base("gasket", n, e2, Some((5.0f64).ln() / (2.0f64).ln())).with_kind(kind))
}

/// Random geometric graph on the unit square: n seeded-uniform points, edges
/// between pairs within `radius`, weighted by Euclidean distance. If the
/// result is disconnected, the nearest pair of points across components is
/// bridged (deterministically) until connected.
pub fn random_geometric(
    n: usize,
    radius: f64,
    seed: u64,
    kind: LaplacianKind,
) -> Result<GeneratedSpace> {
    if n < 2 {
        return Err(Error::InvalidParams("random geometric graph needs n >= 2".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParams(format!("radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(0.0..1.0f64), rng.gen_range(0.0..1.0f64)))
        .collect();
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist(pts[i], pts[j]);
            if d <= radius {
                edges.push((i, j, d));
            }
        }
    }
    // union-find connectivity repair
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    for &(i, j, _) in &edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
        }
    }
    loop {
        let roots: std::collections::BTreeSet<usize> =
            (0..n).map(|x| find(&mut parent, x)).collect();
        if roots.len() <= 1 {
            break;
        }
        // bridge the globally nearest cross-component pair
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                if find(&mut parent, i) != find(&mut parent, j) {
                    let d = dist(pts[i], pts[j]);
                    if best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, i, j));
                    }
                }
            }
        }
        let (d, i, j) = best.unwrap();
        edges.push((i, j, d));
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        parent[ri] = rj;
    }
    edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(base("random_geometric", n, edges, None).with_kind(kind))
}
