//! Per-rank graph dumps.
//!
//! The binary format is little-endian throughout:
//!
//! ```text
//! magic       4 bytes "HGNG"
//! version     u32 (1)
//! header      u64 x 6: rank, num_local, num_halo, num_edges, F_x, F_e
//! global_ids  u64 x (num_local + num_halo)
//! positions   f64 x 3 x (num_local + num_halo)
//! adjacency   u64 x 2 x num_edges            (receiver, sender) pairs
//! degrees     u32 x num_local node degrees, then u32 x num_edges edge degrees
//! halo map    u64 num_neighbors, then per neighbor:
//!             u64 rank, u64 len, u64 x len send rows, u64 x len recv rows
//! ```
//!
//! `F_x`/`F_e` record feature widths (0 when unset); features themselves are
//! recomputed from positions on load.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HaloMap, RankGraph, ReducedGraph};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HGNG";
const VERSION: u32 = 1;

/// Graphs with more rows than this are dumped in binary by default.
pub const JSON_ROW_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Binary,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphDump {
    rank: usize,
    num_local: usize,
    num_halo: usize,
    num_edges: usize,
    node_feature_dim: usize,
    edge_feature_dim: usize,
    global_ids: Vec<usize>,
    positions: Vec<[f64; 3]>,
    edges: Vec<[usize; 2]>,
    node_degree: Vec<u32>,
    edge_degree: Vec<u32>,
    neighbors: Vec<usize>,
    send_masks: Vec<Vec<usize>>,
    recv_masks: Vec<Vec<usize>>,
}

fn feature_dims(g: &ReducedGraph) -> (usize, usize) {
    (
        g.node_features.as_ref().map_or(0, |t| t.cols),
        g.edge_features.as_ref().map_or(0, |t| t.cols),
    )
}

/// Rebuilds halo bookkeeping that is implied by the masks.
fn finish(mut graph: ReducedGraph, halo: HaloMap) -> Result<RankGraph> {
    let n = graph.num_rows();
    if graph.global_ids.len() != n || graph.positions.len() != n || graph.node_degree.len() != graph.num_local {
        return Err(Error::Format("graph dump section lengths disagree with header".into()));
    }
    if graph.edge_degree.len() != graph.edges.len() {
        return Err(Error::Format("edge degree count disagrees with adjacency".into()));
    }
    if halo.send_masks.len() != halo.neighbors.len() || halo.recv_masks.len() != halo.neighbors.len() {
        return Err(Error::Format("halo map has mismatched mask lists".into()));
    }
    let local_of: HashMap<usize, usize> = graph.global_ids[..graph.num_local]
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, i))
        .collect();
    graph.halo_owner = vec![usize::MAX; graph.num_halo];
    graph.halo_source = vec![usize::MAX; graph.num_halo];
    for (k, &src) in halo.neighbors.iter().enumerate() {
        for &r in &halo.recv_masks[k] {
            let h = r
                .checked_sub(graph.num_local)
                .filter(|&h| h < graph.num_halo)
                .ok_or_else(|| Error::Format(format!("receive row {r} is not a halo row")))?;
            graph.halo_source[h] = src;
            graph.halo_owner[h] = *local_of
                .get(&graph.global_ids[r])
                .ok_or_else(|| Error::Format(format!("halo row {r} has no local owner")))?;
        }
    }
    if graph.halo_owner.contains(&usize::MAX) {
        return Err(Error::Format("halo rows not covered by receive masks".into()));
    }
    Ok(RankGraph { graph, halo })
}

pub fn write_graph_json<W: Write>(w: W, rg: &RankGraph) -> Result<()> {
    let g = &rg.graph;
    let (fx, fe) = feature_dims(g);
    let dump = GraphDump {
        rank: g.rank,
        num_local: g.num_local,
        num_halo: g.num_halo,
        num_edges: g.num_edges(),
        node_feature_dim: fx,
        edge_feature_dim: fe,
        global_ids: g.global_ids.clone(),
        positions: g.positions.clone(),
        edges: g.edges.clone(),
        node_degree: g.node_degree.clone(),
        edge_degree: g.edge_degree.clone(),
        neighbors: rg.halo.neighbors.clone(),
        send_masks: rg.halo.send_masks.clone(),
        recv_masks: rg.halo.recv_masks.clone(),
    };
    serde_json::to_writer(w, &dump)?;
    Ok(())
}

pub fn read_graph_json<R: Read>(r: R) -> Result<RankGraph> {
    let d: GraphDump = serde_json::from_reader(r)?;
    if d.edges.len() != d.num_edges {
        return Err(Error::Format("edge count disagrees with header".into()));
    }
    let graph = ReducedGraph {
        rank: d.rank,
        num_local: d.num_local,
        num_halo: d.num_halo,
        positions: d.positions,
        global_ids: d.global_ids,
        node_features: None,
        edge_features: None,
        edges: d.edges,
        node_degree: d.node_degree,
        edge_degree: d.edge_degree,
        halo_owner: Vec::new(),
        halo_source: Vec::new(),
    };
    finish(
        graph,
        HaloMap {
            neighbors: d.neighbors,
            send_masks: d.send_masks,
            recv_masks: d.recv_masks,
        },
    )
}

fn put_u64<W: Write>(w: &mut W, v: usize) -> Result<()> {
    w.write_all(&(v as u64).to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("value exceeds usize".into()))
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_graph_binary<W: Write>(mut w: W, rg: &RankGraph) -> Result<()> {
    let g = &rg.graph;
    let (fx, fe) = feature_dims(g);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [g.rank, g.num_local, g.num_halo, g.num_edges(), fx, fe] {
        put_u64(&mut w, v)?;
    }
    for &gid in &g.global_ids {
        put_u64(&mut w, gid)?;
    }
    for p in &g.positions {
        for c in p {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for &[i, j] in &g.edges {
        put_u64(&mut w, i)?;
        put_u64(&mut w, j)?;
    }
    for d in g.node_degree.iter().chain(&g.edge_degree) {
        w.write_all(&d.to_le_bytes())?;
    }
    put_u64(&mut w, rg.halo.neighbors.len())?;
    for (k, &nb) in rg.halo.neighbors.iter().enumerate() {
        put_u64(&mut w, nb)?;
        put_u64(&mut w, rg.halo.send_masks[k].len())?;
        for &s in &rg.halo.send_masks[k] {
            put_u64(&mut w, s)?;
        }
        for &r in &rg.halo.recv_masks[k] {
            put_u64(&mut w, r)?;
        }
    }
    Ok(())
}

pub fn read_graph_binary<R: Read>(mut r: R) -> Result<RankGraph> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a graph dump".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported graph dump version {version}")));
    }
    let rank = get_u64(&mut r)?;
    let num_local = get_u64(&mut r)?;
    let num_halo = get_u64(&mut r)?;
    let num_edges = get_u64(&mut r)?;
    let _fx = get_u64(&mut r)?;
    let _fe = get_u64(&mut r)?;
    let rows = num_local + num_halo;
    let global_ids = (0..rows).map(|_| get_u64(&mut r)).collect::<Result<Vec<_>>>()?;
    let positions = (0..rows)
        .map(|_| Ok([get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?]))
        .collect::<Result<Vec<_>>>()?;
    let edges = (0..num_edges)
        .map(|_| Ok([get_u64(&mut r)?, get_u64(&mut r)?]))
        .collect::<Result<Vec<_>>>()?;
    let node_degree = (0..num_local).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
    let edge_degree = (0..num_edges).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut halo = HaloMap::default();
    for _ in 0..get_u64(&mut r)? {
        halo.neighbors.push(get_u64(&mut r)?);
        let len = get_u64(&mut r)?;
        halo.send_masks.push((0..len).map(|_| get_u64(&mut r)).collect::<Result<_>>()?);
        halo.recv_masks.push((0..len).map(|_| get_u64(&mut r)).collect::<Result<_>>()?);
    }
    let graph = ReducedGraph {
        rank,
        num_local,
        num_halo,
        positions,
        global_ids,
        node_features: None,
        edge_features: None,
        edges,
        node_degree,
        edge_degree,
        halo_owner: Vec::new(),
        halo_source: Vec::new(),
    };
    finish(graph, halo)
}

pub fn graph_file_name(rank: usize, format: GraphFormat) -> String {
    match format {
        GraphFormat::Json => format!("rank_{rank:05}.json"),
        GraphFormat::Binary => format!("rank_{rank:05}.bin"),
    }
}

/// Writes one file per rank into `dir`, returning the paths.
pub fn write_graphs(dir: impl AsRef<Path>, ranks: &[RankGraph], format: Option<GraphFormat>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(ranks.len());
    for rg in ranks {
        let fmt = format.unwrap_or(if rg.graph.num_rows() > JSON_ROW_LIMIT {
            GraphFormat::Binary
        } else {
            GraphFormat::Json
        });
        let path = dir.join(graph_file_name(rg.graph.rank, fmt));
        let mut w = BufWriter::new(File::create(&path)?);
        match fmt {
            GraphFormat::Json => write_graph_json(&mut w, rg)?,
            GraphFormat::Binary => write_graph_binary(&mut w, rg)?,
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_graph_file(path: impl AsRef<Path>) -> Result<RankGraph> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_graph_json(r),
        Some("bin") => read_graph_binary(r),
        _ => Err(Error::Format(format!("unknown graph dump extension: {}", path.display()))),
    }
}
