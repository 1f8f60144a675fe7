//! Per-rank reduced graphs with halo nodes.
//!
//! Each rank concatenates the lattice graphs of the elements it owns, then
//! collapses raw nodes that share a global id (local coincident nodes). Nodes
//! whose global id is also owned by other ranks (non-local coincident nodes)
//! get one appended halo row per other owner. Halo rows have no edges; they
//! only receive values through the halo exchange.

pub mod io;

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::meshgen::{Mesh, PartitionMap};
use crate::nn::Tensor2D;

pub const NODE_FEATURES: usize = 3;
pub const EDGE_FEATURES: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGraph {
    pub rank: usize,
    pub num_local: usize,
    pub num_halo: usize,
    /// `num_local + num_halo` entries; halo rows repeat the owner's position.
    pub positions: Vec<[f64; 3]>,
    pub global_ids: Vec<usize>,
    pub node_features: Option<Tensor2D>,
    pub edge_features: Option<Tensor2D>,
    /// Directed edges `[i, j]`: messages computed from `(x_i, x_j, e_ij)` and
    /// aggregated onto `i`. Each undirected edge is stored in both directions.
    pub edges: Vec<[usize; 2]>,
    /// Number of ranks owning each local node's global id.
    pub node_degree: Vec<u32>,
    /// Number of ranks owning each edge's unordered global-id pair.
    pub edge_degree: Vec<u32>,
    /// For each halo row, the local row with the same global id.
    pub halo_owner: Vec<usize>,
    /// For each halo row, the rank whose value it mirrors.
    pub halo_source: Vec<usize>,
}

impl ReducedGraph {
    pub fn num_rows(&self) -> usize {
        self.num_local + self.num_halo
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sets `X_r`; rows must cover local and halo nodes.
    pub fn set_node_features(&mut self, x: Tensor2D) -> Result<()> {
        if x.rows != self.num_rows() {
            return Err(Error::shape("set_node_features", self.num_rows(), x.rows));
        }
        self.node_features = Some(x);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HaloMap {
    pub neighbors: Vec<usize>,
    /// Local rows whose values go to `neighbors[k]`, ascending global id.
    pub send_masks: Vec<Vec<usize>>,
    /// Halo rows filled from `neighbors[k]`, ascending global id.
    pub recv_masks: Vec<Vec<usize>>,
}

impl HaloMap {
    pub fn position_of(&self, rank: usize) -> Option<usize> {
        self.neighbors.binary_search(&rank).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollapseMap {
    /// Indexed by raw slot `k * nodes_per_element + l` over the rank's owned
    /// elements in ascending order.
    pub raw_to_reduced: Vec<usize>,
}

/// A rank's reduced graph together with its halo map.
#[derive(Debug, Clone)]
pub struct RankGraph {
    pub graph: ReducedGraph,
    pub halo: HaloMap,
}

/// Axis-aligned neighbor edges of one element's `(p+1)^3` lattice.
pub fn element_edges(p: usize) -> Vec<[usize; 2]> {
    let n = p + 1;
    let idx = |x: usize, y: usize, z: usize| x + n * (y + n * z);
    let mut edges = Vec::with_capacity(3 * p * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                if x + 1 < n {
                    edges.push([idx(x, y, z), idx(x + 1, y, z)]);
                }
                if y + 1 < n {
                    edges.push([idx(x, y, z), idx(x, y + 1, z)]);
                }
                if z + 1 < n {
                    edges.push([idx(x, y, z), idx(x, y, z + 1)]);
                }
            }
        }
    }
    edges
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Concatenates and collapses the element graphs owned by `rank`.
pub fn assemble_rank_graph(mesh: &Mesh, part: &PartitionMap, rank: usize) -> Result<(ReducedGraph, CollapseMap)> {
    if rank >= part.num_ranks {
        return Err(Error::Partition(format!(
            "rank {rank} out of range for {} ranks",
            part.num_ranks
        )));
    }
    if part.element_to_rank.len() != mesh.num_elements() {
        return Err(Error::Integrity(format!(
            "partition covers {} elements, mesh has {}",
            part.element_to_rank.len(),
            mesh.num_elements()
        )));
    }
    let owned: Vec<usize> = part.elements_of(rank).collect();
    if owned.is_empty() {
        return Err(Error::EmptyPartition(rank));
    }
    let npe = mesh.nodes_per_element();
    let local_edges = element_edges(mesh.config.poly_order);

    let mut gid_to_local: HashMap<usize, usize> = HashMap::with_capacity(owned.len() * npe);
    let mut raw_to_reduced = Vec::with_capacity(owned.len() * npe);
    let mut positions = Vec::new();
    let mut global_ids = Vec::new();
    for &el in &owned {
        let gids = mesh.element_global_ids(el);
        let pos = mesh.element_positions(el);
        for (l, &g) in gids.iter().enumerate() {
            let next = global_ids.len();
            let local = *gid_to_local.entry(g).or_insert_with(|| {
                global_ids.push(g);
                positions.push(pos[l]);
                next
            });
            raw_to_reduced.push(local);
        }
    }

    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(owned.len() * local_edges.len());
    let mut edges = Vec::with_capacity(2 * owned.len() * local_edges.len());
    for k in 0..owned.len() {
        let slots = &raw_to_reduced[k * npe..(k + 1) * npe];
        for &[a, b] in &local_edges {
            let (la, lb) = (slots[a], slots[b]);
            if seen.insert(ordered(global_ids[la], global_ids[lb])) {
                edges.push([la, lb]);
                edges.push([lb, la]);
            }
        }
    }

    let num_local = global_ids.len();
    let num_edges = edges.len();
    Ok((
        ReducedGraph {
            rank,
            num_local,
            num_halo: 0,
            positions,
            global_ids,
            node_features: None,
            edge_features: None,
            edges,
            node_degree: vec![1; num_local],
            edge_degree: vec![1; num_edges],
            halo_owner: Vec::new(),
            halo_source: Vec::new(),
        },
        CollapseMap { raw_to_reduced },
    ))
}

/// Appends halo rows and fills halo maps and degree arrays for every rank.
///
/// Requires global visibility of all ranks' graphs, like an offline mesh
/// preprocessor would have.
pub fn build_halo_structures(mut graphs: Vec<ReducedGraph>) -> Result<Vec<RankGraph>> {
    let num_ranks = graphs.len();
    for (r, g) in graphs.iter().enumerate() {
        if g.rank != r {
            return Err(Error::Integrity(format!("graph at position {r} claims rank {}", g.rank)));
        }
        if g.num_halo != 0 {
            return Err(Error::Integrity(format!("rank {r} already has halo rows")));
        }
    }

    // (gid, rank, local) for every local node, grouped by gid.
    let mut owners: Vec<(usize, usize, usize)> = graphs
        .iter()
        .flat_map(|g| g.global_ids.iter().enumerate().map(move |(i, &gid)| (gid, g.rank, i)))
        .collect();
    owners.sort_unstable();

    // halo entries per receiving rank: (source rank, gid, local index)
    let mut halo_entries: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); num_ranks];
    let mut start = 0;
    while start < owners.len() {
        let gid = owners[start].0;
        let mut end = start + 1;
        while end < owners.len() && owners[end].0 == gid {
            end += 1;
        }
        let group = &owners[start..end];
        for w in group.windows(2) {
            if w[0].1 == w[1].1 {
                return Err(Error::Integrity(format!(
                    "global id {gid} appears twice on rank {}",
                    w[0].1
                )));
            }
        }
        if group.len() > 1 {
            let (_, r0, i0) = group[0];
            let p0 = graphs[r0].positions[i0];
            for &(_, r, i) in group {
                if graphs[r].positions[i] != p0 {
                    return Err(Error::Integrity(format!(
                        "global id {gid} has different positions on ranks {r0} and {r}"
                    )));
                }
                graphs[r].node_degree[i] = group.len() as u32;
                for &(_, s, _) in group {
                    if s != r {
                        halo_entries[r].push((s, gid, i));
                    }
                }
            }
        }
        start = end;
    }

    // Edge degrees: only edges with both endpoints shared can live on several ranks.
    let mut shared_edges: Vec<((usize, usize), usize)> = Vec::new();
    for g in &graphs {
        for &[i, j] in &g.edges {
            if i < j && g.node_degree[i] > 1 && g.node_degree[j] > 1 {
                shared_edges.push((ordered(g.global_ids[i], g.global_ids[j]), g.rank));
            }
        }
    }
    shared_edges.sort_unstable();
    let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
    for (key, _) in &shared_edges {
        *edge_count.entry(*key).or_insert(0) += 1;
    }
    for g in graphs.iter_mut() {
        for (k, &[i, j]) in g.edges.iter().enumerate() {
            if g.node_degree[i] > 1 && g.node_degree[j] > 1 {
                g.edge_degree[k] = edge_count[&ordered(g.global_ids[i], g.global_ids[j])];
            }
        }
    }

    let mut out = Vec::with_capacity(num_ranks);
    for (mut g, mut entries) in graphs.into_iter().zip(halo_entries) {
        entries.sort_unstable();
        let mut halo = HaloMap::default();
        for &(src, gid, local) in &entries {
            let row = g.num_rows();
            g.global_ids.push(gid);
            g.positions.push(g.positions[local]);
            g.halo_owner.push(local);
            g.halo_source.push(src);
            g.num_halo += 1;
            if halo.neighbors.last() != Some(&src) {
                halo.neighbors.push(src);
                halo.send_masks.push(Vec::new());
                halo.recv_masks.push(Vec::new());
            }
            // Send and receive lists to one neighbor cover the same shared
            // global ids in the same ascending order.
            halo.send_masks.last_mut().unwrap().push(local);
            halo.recv_masks.last_mut().unwrap().push(row);
        }
        g.node_features = None;
        g.edge_features = None;
        out.push(RankGraph { graph: g, halo });
    }
    Ok(out)
}

/// Builds every rank's reduced graph and halo structures.
pub fn build_distributed_graph(mesh: &Mesh, part: &PartitionMap) -> Result<Vec<RankGraph>> {
    let graphs = (0..part.num_ranks)
        .map(|r| assemble_rank_graph(mesh, part, r).map(|(g, _)| g))
        .collect::<Result<Vec<_>>>()?;
    build_halo_structures(graphs)
}

/// Edge features `[x_j - x_i, pos_j - pos_i, |pos_j - pos_i|]` for every directed edge.
pub fn init_edge_features(graph: &ReducedGraph) -> Result<Tensor2D> {
    let x = graph
        .node_features
        .as_ref()
        .ok_or(Error::Uninitialized("node features must be set before edge features"))?;
    if x.cols != NODE_FEATURES || x.rows != graph.num_rows() {
        return Err(Error::shape(
            "init_edge_features",
            format!("({}, {NODE_FEATURES})", graph.num_rows()),
            format!("{:?}", x.shape()),
        ));
    }
    let mut e = Tensor2D::zeros(graph.num_edges(), EDGE_FEATURES);
    for (k, &[i, j]) in graph.edges.iter().enumerate() {
        let row = e.row_mut(k);
        let (xi, xj) = (x.row(i), x.row(j));
        let (pi, pj) = (graph.positions[i], graph.positions[j]);
        let mut sq = 0.0;
        for c in 0..3 {
            row[c] = xj[c] - xi[c];
            let d = pj[c] - pi[c];
            row[3 + c] = d;
            sq += d * d;
        }
        row[6] = sq.sqrt();
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxAvg {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

impl MinMaxAvg {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        Self { min, max, avg: sum / n }
    }
}

impl fmt::Display for MinMaxAvg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = |v: f64| {
            if v.fract() == 0.0 {
                format!("{v:.0}")
            } else {
                format!("{v:.1}")
            }
        };
        write!(f, "{}, {}, {}", g(self.min), g(self.max), g(self.avg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankHaloStats {
    pub local_nodes: usize,
    pub halo_nodes: usize,
    pub neighbors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaloStats {
    pub per_rank: Vec<RankHaloStats>,
    pub local_nodes: MinMaxAvg,
    pub halo_nodes: MinMaxAvg,
    pub neighbors: MinMaxAvg,
}

impl HaloStats {
    pub fn header() -> &'static str {
        "Ranks | Graph Nodes (min, max, avg) | Halo Nodes (min, max, avg) | Neighbors (min, max, avg)"
    }
}

impl fmt::Display for HaloStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} | {} | {} | {}",
            self.per_rank.len(),
            self.local_nodes,
            self.halo_nodes,
            self.neighbors
        )
    }
}

/// Per-rank local/halo/neighbor counts with min, max and average.
pub fn halo_stats(ranks: &[RankGraph]) -> HaloStats {
    let per_rank: Vec<RankHaloStats> = ranks
        .iter()
        .map(|rg| RankHaloStats {
            local_nodes: rg.graph.num_local,
            halo_nodes: rg.graph.num_halo,
            neighbors: rg.halo.neighbors.len(),
        })
        .collect();
    HaloStats {
        local_nodes: MinMaxAvg::of(per_rank.iter().map(|s| s.local_nodes as f64)),
        halo_nodes: MinMaxAvg::of(per_rank.iter().map(|s| s.halo_nodes as f64)),
        neighbors: MinMaxAvg::of(per_rank.iter().map(|s| s.neighbors as f64)),
        per_rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::{build_box_mesh, partition_mesh, MeshConfig, PartitionStrategy};

    /// Two p=1 elements side by side along x, one per rank.
    fn fig4_ranks() -> Vec<RankGraph> {
        let full = build_box_mesh(MeshConfig::unit_cube(2, 1)).unwrap();
        let mesh = full.sub_mesh(&[0, 1]);
        let part = PartitionMap { num_ranks: 2, element_to_rank: vec![0, 1] };
        build_distributed_graph(&mesh, &part).unwrap()
    }

    #[test]
    fn element_edge_counts() {
        assert_eq!(element_edges(1).len(), 12);
        assert_eq!(element_edges(3).len(), 144);
        assert_eq!(element_edges(5).len(), 540);
        for p in 1..6 {
            assert_eq!(element_edges(p).len(), 3 * p * (p + 1) * (p + 1));
        }
    }

    #[test]
    fn single_element_identity_collapse() {
        let mesh = build_box_mesh(MeshConfig::unit_cube(1, 1)).unwrap();
        let part = partition_mesh(&mesh, 1, PartitionStrategy::slab()).unwrap();
        let (g, c) = assemble_rank_graph(&mesh, &part, 0).unwrap();
        assert_eq!(g.num_local, 8);
        assert_eq!(g.num_edges(), 24);
        assert_eq!(c.raw_to_reduced, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn two_elements_on_one_rank_collapse_face() {
        let mesh = build_box_mesh(MeshConfig::unit_cube(2, 1)).unwrap();
        let part = PartitionMap {
            num_ranks: 2,
            element_to_rank: (0..8).map(|e| usize::from(e >= 2)).collect(),
        };
        let (g, c) = assemble_rank_graph(&mesh, &part, 0).unwrap();
        assert_eq!(c.raw_to_reduced.len(), 16);
        assert_eq!(g.num_local, 12);
        assert_eq!(g.num_edges(), 2 * 20);
        let gids: HashSet<_> = g.global_ids.iter().collect();
        assert_eq!(gids.len(), 12);
    }

    #[test]
    fn two_rank_halo_layout() {
        let ranks = fig4_ranks();
        for (r, rg) in ranks.iter().enumerate() {
            let g = &rg.graph;
            assert_eq!(g.num_local, 8);
            assert_eq!(g.num_halo, 4);
            assert_eq!(g.num_rows(), 12);
            assert_eq!(g.node_degree.iter().filter(|&&d| d == 2).count(), 4);
            assert_eq!(rg.halo.neighbors, vec![1 - r]);
            assert_eq!(rg.halo.recv_masks[0], vec![8, 9, 10, 11]);
            // the 4 shared-face edges (8 directed entries) have degree 2
            assert_eq!(g.edge_degree.iter().filter(|&&d| d == 2).count(), 8);
            for (k, &[i, j]) in g.edges.iter().enumerate() {
                assert!(i < 8 && j < 8);
                let shared = g.node_degree[i] == 2 && g.node_degree[j] == 2;
                assert_eq!(g.edge_degree[k], if shared { 2 } else { 1 });
            }
        }
        let (s, r) = (&ranks[0].halo.send_masks[0], &ranks[1].halo.recv_masks[0]);
        for (a, b) in s.iter().zip(r) {
            assert_eq!(ranks[0].graph.global_ids[*a], ranks[1].graph.global_ids[*b]);
        }
    }

    #[test]
    fn empty_partition_rejected() {
        let mesh = build_box_mesh(MeshConfig::unit_cube(1, 1)).unwrap();
        let part = PartitionMap { num_ranks: 2, element_to_rank: vec![0] };
        assert!(matches!(assemble_rank_graph(&mesh, &part, 1), Err(Error::EmptyPartition(1))));
    }

    #[test]
    fn edge_feature_rows() {
        let mesh = build_box_mesh(MeshConfig::unit_cube(1, 1)).unwrap();
        let part = partition_mesh(&mesh, 1, PartitionStrategy::slab()).unwrap();
        let mut g = build_distributed_graph(&mesh, &part).unwrap().remove(0).graph;
        assert!(matches!(init_edge_features(&g), Err(Error::Uninitialized(_))));
        g.set_node_features(Tensor2D::zeros(8, 3)).unwrap();
        let e = init_edge_features(&g).unwrap();
        for (k, &[i, j]) in g.edges.iter().enumerate() {
            let d: Vec<f64> = (0..3).map(|c| g.positions[j][c] - g.positions[i][c]).collect();
            assert_eq!(&e.row(k)[..3], &[0.0; 3]);
            assert_eq!(&e.row(k)[3..6], d.as_slice());
            assert_eq!(e.row(k)[6], 1.0);
        }
        // reversed direction negates the differences
        for k in (0..g.num_edges()).step_by(2) {
            for c in 0..6 {
                assert_eq!(e.get(k, c), -e.get(k + 1, c));
            }
            assert_eq!(e.get(k, 6), e.get(k + 1, 6));
        }
    }

    #[test]
    fn display_matches_table_layout() {
        let s = MinMaxAvg { min: 2.0, max: 2.0, avg: 2.0 };
        assert_eq!(s.to_string(), "2, 2, 2");
        let s = MinMaxAvg { min: 5.0, max: 15.0, avg: 7.25 };
        assert_eq!(s.to_string(), "5, 15, 7.2");
    }
}
