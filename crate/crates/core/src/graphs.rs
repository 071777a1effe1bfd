//! Road-district graph, courier correlation graph, and the normalized
//! adjacency consumed by the GCN.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Weighted directed graph in adjacency-list form, neighbours sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        WeightedGraph { adj: vec![Vec::new(); n] }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut g = WeightedGraph::new(n);
        for (u, v, w) in edges {
            g.adj[u].push((v, w));
        }
        for list in &mut g.adj {
            list.sort_by_key(|&(v, _)| v);
        }
        g
    }

    /// Undirected graph: each edge is inserted in both directions.
    pub fn undirected(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let both: Vec<_> = edges.into_iter().flat_map(|(u, v, w)| [(u, v, w), (v, u, w)]).collect();
        WeightedGraph::from_edges(n, both)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search_by_key(&v, |&(x, _)| x).is_ok()
    }
}

/// Physical road network: node coordinates (meters) and undirected segments.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub ids: Vec<u64>,
    pub coords: Vec<(f64, f64)>,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub district: usize,
    pub x: f64,
    pub y: f64,
}

impl RoadNetwork {
    fn graph(&self) -> WeightedGraph {
        WeightedGraph::undirected(self.coords.len(), self.edges.iter().copied())
    }

    /// Index of the network node nearest to `(x, y)`; ties go to the lowest id.
    pub fn nearest_node(&self, x: f64, y: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &(nx, ny)) in self.coords.iter().enumerate() {
            let d = (nx - x).hypot(ny - y);
            let better = match best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && self.ids[i] < self.ids[bi]),
            };
            if better {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Parses `node_id x y` and `node_u node_v length_meters` files.
    pub fn read(nodes_path: &Path, edges_path: &Path) -> Result<Self> {
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut index = HashMap::new();
        for (line_no, fields) in read_fields(nodes_path)? {
            let [id, x, y] = parse_n::<3>(nodes_path, line_no, &fields)?;
            index.insert(id as u64, ids.len());
            ids.push(id as u64);
            coords.push((x, y));
        }
        let mut edges = Vec::new();
        for (line_no, fields) in read_fields(edges_path)? {
            let [u, v, len] = parse_n::<3>(edges_path, line_no, &fields)?;
            let lookup = |id: f64| {
                index.get(&(id as u64)).copied().ok_or_else(|| Error::Parse {
                    path: edges_path.to_path_buf(),
                    line: line_no,
                    msg: format!("unknown node {id}"),
                })
            };
            if !(len > 0.0) {
                return Err(Error::Parse {
                    path: edges_path.to_path_buf(),
                    line: line_no,
                    msg: format!("segment length {len} must be positive"),
                });
            }
            edges.push((lookup(u)?, lookup(v)?, len));
        }
        Ok(RoadNetwork { ids, coords, edges })
    }

    pub fn write(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        let mut nodes = String::new();
        for (id, (x, y)) in self.ids.iter().zip(&self.coords) {
            writeln!(nodes, "{id} {x} {y}").unwrap();
        }
        let mut edges = String::new();
        for &(u, v, len) in &self.edges {
            writeln!(edges, "{} {} {len}", self.ids[u], self.ids[v]).unwrap();
        }
        fs::write(nodes_path, nodes)?;
        fs::write(edges_path, edges)?;
        Ok(())
    }
}

pub fn read_centroids(path: &Path) -> Result<Vec<Centroid>> {
    let mut out = Vec::new();
    for (line_no, fields) in read_fields(path)? {
        let [d, x, y] = parse_n::<3>(path, line_no, &fields)?;
        out.push(Centroid { district: d as usize, x, y });
    }
    out.sort_by_key(|c| c.district);
    for (i, c) in out.iter().enumerate() {
        if c.district != i {
            return Err(Error::Data(format!("district ids must be 0..{}; found {}", out.len(), c.district)));
        }
    }
    Ok(out)
}

pub fn write_centroids(path: &Path, centroids: &[Centroid]) -> Result<()> {
    let mut s = String::new();
    for c in centroids {
        writeln!(s, "{} {} {}", c.district, c.x, c.y).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_fields(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect()))
        .collect())
}

fn parse_n<const N: usize>(path: &Path, line: usize, fields: &[String]) -> Result<[f64; N]> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if fields.len() != N {
        return Err(err(format!("expected {N} fields, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().map_err(|_| err(format!("not a number: {f:?}")))?;
    }
    Ok(out)
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths; unreachable nodes are `INFINITY`.
pub fn dijkstra(g: &WeightedGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in g.neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    dist
}

/// Directed, fully connected district graph with `w(u, v) = 1 / d(u, v)`,
/// `d` being the road-network shortest path between the matched nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictGraph {
    n: usize,
    weights: Vec<f64>,
    distances: Vec<f64>,
    pub centroids: Vec<Centroid>,
    pub matched_nodes: Vec<usize>,
}

impl DistrictGraph {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.n + v]
    }

    pub fn distance(&self, u: usize, v: usize) -> f64 {
        self.distances[u * self.n + v]
    }

    /// Adjacency matrix; diagonal zero.
    pub fn adjacency(&self) -> Tensor {
        Tensor::matrix(self.n, self.n, self.weights.clone()).expect("square")
    }

    /// Walk graph with an edge for every ordered pair `u != v`.
    pub fn walk_graph(&self) -> WeightedGraph {
        let n = self.n;
        WeightedGraph::from_edges(
            n,
            (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v, self.weights[u * n + v]))),
        )
    }
}

pub fn build_district_graph(network: &RoadNetwork, centroids: &[Centroid]) -> Result<DistrictGraph> {
    let n = centroids.len();
    if n == 0 {
        return Err(Error::Degenerate("no districts".into()));
    }
    let matched = centroids
        .iter()
        .map(|c| {
            network
                .nearest_node(c.x, c.y)
                .ok_or_else(|| Error::Degenerate("road network has no nodes".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = network.graph();
    let mut distances = vec![0.0; n * n];
    let mut weights = vec![0.0; n * n];
    for u in 0..n {
        let from = dijkstra(&graph, matched[u]);
        for v in 0..n {
            if u == v {
                continue;
            }
            let d = from[matched[v]];
            if !d.is_finite() {
                return Err(Error::Unreachable { from: u, to: v });
            }
            if d <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "districts {u} and {v} match the same road node (zero distance)"
                )));
            }
            distances[u * n + v] = d;
            weights[u * n + v] = 1.0 / d;
        }
    }
    Ok(DistrictGraph {
        n,
        weights,
        distances,
        centroids: centroids.to_vec(),
        matched_nodes: matched,
    })
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Undirected courier graph weighted by non-negative Pearson correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct CourierGraph {
    n: usize,
    weights: Vec<f64>,
    /// Couriers whose calibration series was constant.
    pub warnings: Vec<String>,
}

impl CourierGraph {
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::shape("courier_graph", &[n, n], &[weights.len()]));
        }
        Ok(CourierGraph {
            n,
            weights,
            warnings: Vec::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Graph with no inter-courier edges.
    pub fn isolated(n: usize) -> Self {
        CourierGraph {
            n,
            weights: vec![0.0; n * n],
            warnings: Vec::new(),
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                weights[i * n + j] = self.weights[perm[i] * n + perm[j]];
            }
        }
        CourierGraph {
            n,
            weights,
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.weight(i, j).to_string()).collect();
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        s
    }
}

/// `rates[i]` is courier `i`'s daily timely-rate series over the
/// calibration window.
pub fn build_courier_graph(rates: &[Vec<f64>]) -> Result<CourierGraph> {
    let n = rates.len();
    let len = rates.first().map_or(0, Vec::len);
    if len < 3 {
        return Err(Error::Data(format!("calibration series need at least 3 days, got {len}")));
    }
    if let Some(bad) = rates.iter().position(|r| r.len() != len) {
        return Err(Error::Data(format!(
            "courier {bad} has {} calibration days, expected {len}",
            rates[bad].len()
        )));
    }
    let mut warnings = Vec::new();
    for (i, r) in rates.iter().enumerate() {
        if r.iter().all(|v| *v == r[0]) {
            let msg = format!("courier {i}: constant calibration series, left unconnected");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = pearson(&rates[i], &rates[j]).map_or(0.0, |r| r.max(0.0));
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
    }
    Ok(CourierGraph { n, weights, warnings })
}

/// `D^-1/2 (W + I) D^-1/2` with `D` the row sums of `W + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(pub Tensor);

impl NormalizedAdjacency {
    pub fn identity(n: usize) -> Self {
        NormalizedAdjacency(Tensor::eye(n))
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.0.row(i).iter().sum()).collect()
    }
}

pub fn normalize_adjacency(g: &CourierGraph) -> NormalizedAdjacency {
    let n = g.n;
    let mut a = g.weights.clone();
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    // Degrees summed in sorted order so relabeling couriers cannot change
    // the last bits.
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.sort_by(f64::total_cmp);
            1.0 / row.iter().sum::<f64>().sqrt()
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    NormalizedAdjacency(Tensor::matrix(n, n, a).expect("square"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_network(lengths: &[f64]) -> (RoadNetwork, Vec<Centroid>) {
        let mut coords = vec![(0.0, 0.0)];
        let mut x = 0.0;
        for l in lengths {
            x += l;
            coords.push((x, 0.0));
        }
        let n = coords.len();
        let net = RoadNetwork {
            ids: (0..n as u64).collect(),
            coords: coords.clone(),
            edges: lengths.iter().enumerate().map(|(i, &l)| (i, i + 1, l)).collect(),
        };
        let cents = coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Centroid { district: i, x, y })
            .collect();
        (net, cents)
    }

    #[test]
    fn two_districts_reciprocal() {
        let (net, c) = line_network(&[100.0]);
        let g = build_district_graph(&net, &c).unwrap();
        assert_eq!(g.weight(0, 1), 0.01);
        assert_eq!(g.weight(1, 0), 0.01);
        assert_eq!(g.weight(0, 0), 0.0);
    }

    #[test]
    fn three_on_a_line_uses_shortest_path() {
        let (net, c) = line_network(&[1.0, 1.0]);
        let g = build_district_graph(&net, &c).unwrap();
        assert_eq!(g.weight(0, 2), 0.5);
        assert_eq!(g.weight(0, 1), 1.0);
    }

    #[test]
    fn relabeling_permutes_weights() {
        let (net, c) = line_network(&[1.0, 2.0, 4.0]);
        let g = build_district_graph(&net, &c).unwrap();
        let perm = [2usize, 0, 3, 1];
        let relabeled: Vec<Centroid> = perm
            .iter()
            .enumerate()
            .map(|(new, &old)| Centroid {
                district: new,
                ..c[old]
            })
            .collect();
        let h = build_district_graph(&net, &relabeled).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(h.weight(i, j), g.weight(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn disconnected_network_names_pair() {
        let net = RoadNetwork {
            ids: vec![0, 1, 2],
            coords: vec![(0.0, 0.0), (1.0, 0.0), (5.0, 0.0)],
            edges: vec![(0, 1, 1.0)],
        };
        let c = vec![
            Centroid { district: 0, x: 0.0, y: 0.0 },
            Centroid { district: 1, x: 5.0, y: 0.0 },
        ];
        match build_district_graph(&net, &c) {
            Err(Error::Unreachable { from: 0, to: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_centroids_are_degenerate() {
        let (net, _) = line_network(&[10.0]);
        let c = vec![
            Centroid { district: 0, x: 0.1, y: 0.0 },
            Centroid { district: 1, x: -0.1, y: 0.0 },
        ];
        assert!(matches!(build_district_graph(&net, &c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn nearest_node_tie_goes_to_lowest_id() {
        let net = RoadNetwork {
            ids: vec![7, 3],
            coords: vec![(1.0, 0.0), (-1.0, 0.0)],
            edges: vec![(0, 1, 2.0)],
        };
        assert_eq!(net.nearest_node(0.0, 0.0), Some(1));
    }

    #[test]
    fn courier_graph_examples() {
        let x = vec![1.0, 2.0, 3.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let g = build_courier_graph(&[x.clone(), x.clone(), neg]).unwrap();
        assert!((g.weight(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(g.weight(0, 2), 0.0);
        assert_eq!(g.weight(0, 0), 0.0);

        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.98198).abs() < 1e-4, "{r}");
    }

    #[test]
    fn constant_series_is_unconnected_with_warning() {
        let g = build_courier_graph(&[vec![0.9; 5], vec![0.1, 0.5, 0.3, 0.2, 0.9], vec![0.2, 0.6, 0.3, 0.1, 0.8]]).unwrap();
        assert_eq!(g.weight(0, 1), 0.0);
        assert_eq!(g.weight(0, 2), 0.0);
        assert!(g.weight(1, 2) > 0.0);
        assert_eq!(g.warnings.len(), 1);
    }

    #[test]
    fn short_series_rejected() {
        assert!(build_courier_graph(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let a = normalize_adjacency(&CourierGraph::isolated(1));
        assert_eq!(a.0.data(), &[1.0]);
        let g = CourierGraph::from_weights(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let a = normalize_adjacency(&g);
        for v in a.0.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    fn power_iteration(a: &Tensor) -> f64 {
        let n = a.rows();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..n).map(|i| a.row(i).iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        lambda
    }

    proptest! {
        #[test]
        fn normalized_adjacency_is_symmetric_and_contractive(
            n in 1usize..6,
            raw in proptest::collection::vec(0.0f64..1.0, 36),
        ) {
            let mut w = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    w[i * n + j] = raw[i * 6 + j];
                    w[j * n + i] = raw[i * 6 + j];
                }
            }
            let a = normalize_adjacency(&CourierGraph::from_weights(n, w).unwrap());
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(a.0.get(i, j), a.0.get(j, i));
                }
            }
            prop_assert!(power_iteration(&a.0) <= 1.0 + 1e-9);
        }

        #[test]
        fn uniform_regular_graph_rows_sum_to_one(n in 1usize..8, w in 0.0f64..1.0) {
            let mut weights = vec![w; n * n];
            for i in 0..n {
                weights[i * n + i] = 0.0;
            }
            let a = normalize_adjacency(&CourierGraph::from_weights(n, weights).unwrap());
            for s in a.row_sums() {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn courier_graph_symmetric_and_clipped(series in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 6), 2..6)) {
            let g = build_courier_graph(&series).unwrap();
            let n = g.node_count();
            for i in 0..n {
                prop_assert_eq!(g.weight(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(g.weight(i, j), g.weight(j, i));
                    prop_assert!((0.0..=1.0).contains(&g.weight(i, j)));
                }
            }
            prop_assert_eq!(build_courier_graph(&series).unwrap(), g);
        }
    }
}
