//! Encode-process-decode GNN with consistent message passing.
//!
//! Every function here that takes a slice of [`RankGraph`]s runs collectively
//! over all simulated ranks of the given [`RankRuntime`].
//!
//! One processor layer on rank `r`:
//!
//! ```text
//! e'_ij = f_e(x_i, x_j, e_ij)                 directed local edges
//! a_i   = sum_j e'_ij / d_ij                  scatter onto the receiver
//! halo rows of a <- neighbor aggregates        halo exchange
//! a*_i  = sum of a over all owners of gid(i)   ascending rank order
//! x'_i  = f_x(a*_i, x_i)                       local rows
//! ```
//!
//! The backward pass keeps only each layer's inputs and recomputes the MLP
//! activations on the way back, with one adjoint halo exchange per layer.

mod loss;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comm::{halo_exchange, halo_exchange_adjoint, ExchangeMode, RankRuntime};
use crate::error::{Error, Result};
use crate::graph::{RankGraph, ReducedGraph, EDGE_FEATURES, NODE_FEATURES};
use crate::nn::{Gradients, MessagePassingParams, ModelLayout, ModelParams, Tensor2D};

pub use loss::{consistent_loss, consistent_loss_with_grad, standard_loss};
pub use train::{write_loss_trace, StepRecord, TrainConfig, Trainer};

pub const SMALL_TARGET_PARAMS: usize = 3979;
pub const LARGE_TARGET_PARAMS: usize = 91459;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub hidden_dim: usize,
    pub num_mp_layers: usize,
    pub mlp_hidden_layers: usize,
    pub in_node_dim: usize,
    pub in_edge_dim: usize,
    pub out_dim: usize,
    pub exchange_mode: ExchangeMode,
}

impl GnnConfig {
    pub fn custom(hidden_dim: usize, num_mp_layers: usize, mlp_hidden_layers: usize) -> Self {
        Self {
            hidden_dim,
            num_mp_layers,
            mlp_hidden_layers,
            in_node_dim: NODE_FEATURES,
            in_edge_dim: EDGE_FEATURES,
            out_dim: NODE_FEATURES,
            exchange_mode: ExchangeMode::NeighborA2A,
        }
    }

    pub fn small() -> Self {
        Self::custom(8, 4, 2)
    }

    pub fn large() -> Self {
        Self::custom(32, 4, 5)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(Self::small()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!("unknown model preset `{other}` (small|large)"))),
        }
    }

    /// `small`, `large`, or `custom` for anything else.
    pub fn name(&self) -> &'static str {
        let arch = self.with_mode(ExchangeMode::NeighborA2A);
        if arch == Self::small() {
            "small"
        } else if arch == Self::large() {
            "large"
        } else {
            "custom"
        }
    }

    pub fn with_mode(mut self, mode: ExchangeMode) -> Self {
        self.exchange_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.in_node_dim == 0 || self.in_edge_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ModelLayout {
        ModelLayout {
            node_in: self.in_node_dim,
            edge_in: self.in_edge_dim,
            out: self.out_dim,
            hidden: self.hidden_dim,
            mp_layers: self.num_mp_layers,
            mlp_hidden_layers: self.mlp_hidden_layers,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().param_count()
    }

    /// Target parameter count of the named presets.
    pub fn target_param_count(&self) -> Option<usize> {
        match self.name() {
            "small" => Some(SMALL_TARGET_PARAMS),
            "large" => Some(LARGE_TARGET_PARAMS),
            _ => None,
        }
    }

    /// Hash of the architecture fields, stored in checkpoints. The exchange
    /// mode does not change the parameter layout and is left out.
    pub fn config_hash(&self) -> u64 {
        let arch = [
            self.hidden_dim,
            self.num_mp_layers,
            self.mlp_hidden_layers,
            self.in_node_dim,
            self.in_edge_dim,
            self.out_dim,
        ];
        let mut h = Sha256::new();
        for v in arch {
            h.update((v as u64).to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        self.validate()?;
        Ok(ModelParams::init(self.layout(), seed))
    }
}

/// Node and edge encoders applied row by row; no communication.
pub fn encode(params: &ModelParams, x: &Tensor2D, e: &Tensor2D) -> Result<(Tensor2D, Tensor2D)> {
    Ok((params.node_encoder.forward(x)?, params.edge_encoder.forward(e)?))
}

/// Decoder on the local rows of `x`; halo rows are dropped.
pub fn decode(params: &ModelParams, graph: &ReducedGraph, x: &Tensor2D) -> Result<Tensor2D> {
    if x.rows != graph.num_rows() {
        return Err(Error::shape("decode", graph.num_rows(), x.rows));
    }
    params.decoder.forward(&x.head_rows(graph.num_local))
}

/// One consistent message-passing layer over all ranks. `x` holds local and
/// halo rows, `e` one row per directed edge.
pub fn consistent_nmp_layer(
    layer: &MessagePassingParams,
    ranks: &[RankGraph],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
    x: &[Tensor2D],
    e: &[Tensor2D],
) -> Result<(Vec<Tensor2D>, Vec<Tensor2D>)> {
    check_ranks(ranks, runtime)?;
    if x.len() != ranks.len() || e.len() != ranks.len() {
        return Err(Error::shape("consistent_nmp_layer", ranks.len(), x.len().min(e.len())));
    }
    let layers = vec![layer; ranks.len()];
    let plans: Vec<SyncPlan> = ranks.iter().map(|rg| SyncPlan::new(&rg.graph)).collect();
    let out = layer_forward(&layers, ranks, &plans, runtime, mode, x, e)?;
    Ok(out.into_iter().map(|o| (o.x, o.e)).unzip())
}

/// Full forward pass. Returns `Y_r` (local rows) for every rank.
pub fn forward(
    params: &ModelParams,
    ranks: &[RankGraph],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
) -> Result<Vec<Tensor2D>> {
    Ok(forward_pass(std::slice::from_ref(params), ranks, runtime, mode)?.outputs)
}

/// Stored layer inputs from a forward pass, reused by [`backward`].
pub struct ForwardPass {
    pub outputs: Vec<Tensor2D>,
    caches: Vec<RankCache>,
}

struct RankCache {
    /// Node states entering each layer plus the decoder input.
    xs: Vec<Tensor2D>,
    /// Edge states entering each layer.
    es: Vec<Tensor2D>,
    /// Synchronized aggregates of each layer, local rows.
    a_stars: Vec<Tensor2D>,
}

impl ForwardPass {
    /// Node states of `rank` after `layer` processor layers (0 = encoded).
    pub fn node_hidden(&self, rank: usize, layer: usize) -> &Tensor2D {
        &self.caches[rank].xs[layer]
    }

    pub fn num_ranks(&self) -> usize {
        self.caches.len()
    }
}

/// Forward pass keeping what [`backward`] needs. `params` holds either one
/// shared model or one replica per rank.
pub fn forward_pass(
    params: &[ModelParams],
    ranks: &[RankGraph],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
) -> Result<ForwardPass> {
    check_ranks(ranks, runtime)?;
    check_replicas(params, ranks.len())?;
    let num_layers = params[0].processor.len();
    let plans: Vec<SyncPlan> = ranks.iter().map(|rg| SyncPlan::new(&rg.graph)).collect();

    let encoded = runtime.par_map(|r| {
        let p = replica(params, r);
        let (x, e) = features(&ranks[r].graph)?;
        let x0 = p.node_encoder.forward(x)?;
        let e0 = if num_layers > 0 {
            p.edge_encoder.forward(e)?
        } else {
            Tensor2D::zeros(0, 0)
        };
        Ok::<_, Error>((x0, e0))
    });
    let mut caches = Vec::with_capacity(ranks.len());
    for res in encoded {
        let (x0, e0) = res?;
        caches.push(RankCache {
            xs: vec![x0],
            es: if num_layers > 0 { vec![e0] } else { Vec::new() },
            a_stars: Vec::with_capacity(num_layers),
        });
    }

    for m in 0..num_layers {
        let layers: Vec<&MessagePassingParams> = (0..ranks.len()).map(|r| &replica(params, r).processor[m]).collect();
        let xs: Vec<&Tensor2D> = caches.iter().map(|c| &c.xs[m]).collect();
        let es: Vec<&Tensor2D> = caches.iter().map(|c| &c.es[m]).collect();
        let outs = layer_forward_refs(&layers, ranks, &plans, runtime, mode, &xs, &es)?;
        for (c, o) in caches.iter_mut().zip(outs) {
            c.xs.push(o.x);
            if m + 1 < num_layers {
                c.es.push(o.e);
            }
            c.a_stars.push(o.a_star);
        }
    }

    let outputs = runtime
        .par_map(|r| decode(replica(params, r), &ranks[r].graph, &caches[r].xs[num_layers]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardPass { outputs, caches })
}

/// Reverse pass from output adjoints `dys` (one per rank, local rows).
/// Returns each rank's own parameter gradients, before averaging.
pub fn backward(
    params: &[ModelParams],
    ranks: &[RankGraph],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
    pass: &ForwardPass,
    dys: &[Tensor2D],
) -> Result<Vec<Gradients>> {
    check_ranks(ranks, runtime)?;
    check_replicas(params, ranks.len())?;
    if dys.len() != ranks.len() || pass.caches.len() != ranks.len() {
        return Err(Error::shape("backward", ranks.len(), dys.len()));
    }
    let num_layers = params[0].processor.len();
    let mut grads: Vec<Gradients> = (0..ranks.len()).map(|r| replica(params, r).zeros_like()).collect();
    let caches = &pass.caches;

    let dec = runtime.par_map(|r| {
        let p = replica(params, r);
        let mut g = p.decoder.zeros_like();
        let x = caches[r].xs[num_layers].head_rows(ranks[r].graph.num_local);
        let (_, tape) = p.decoder.forward_with_tape(&x)?;
        let dx = p.decoder.backward(&tape, &dys[r], &mut g)?;
        Ok::<_, Error>((g, dx))
    });
    // adjoints of the local rows of the current node state
    let mut dxs = Vec::with_capacity(ranks.len());
    for (r, res) in dec.into_iter().enumerate() {
        let (g, dx) = res?;
        grads[r].decoder = g;
        dxs.push(dx);
    }
    let mut des: Vec<Option<Tensor2D>> = vec![None; ranks.len()];

    for m in (0..num_layers).rev() {
        let node_part = runtime.par_map(|r| {
            let lp = &replica(params, r).processor[m];
            let g = &ranks[r].graph;
            let c = &caches[r];
            let input = hcat(&c.a_stars[m], &c.xs[m].head_rows(g.num_local));
            let (_, tape) = lp.node_mlp.forward_with_tape(&input)?;
            let mut gn = lp.node_mlp.zeros_like();
            let din = lp.node_mlp.backward(&tape, &dxs[r], &mut gn)?;
            let (da_star, dx_self) = hsplit(&din, c.a_stars[m].cols);
            Ok::<_, Error>((gn, expand_sync_adjoint(g, &da_star, mode), dx_self))
        });
        let mut das = Vec::with_capacity(ranks.len());
        let mut dx_self = Vec::with_capacity(ranks.len());
        for (r, res) in node_part.into_iter().enumerate() {
            let (gn, da, dx) = res?;
            grads[r].processor[m].node_mlp = gn;
            das.push(da);
            dx_self.push(dx);
        }
        if mode.is_consistent() {
            halo_exchange_adjoint(runtime, mode, ranks, &mut das)?;
        }
        let edge_part = runtime.par_map(|r| {
            let lp = &replica(params, r).processor[m];
            let g = &ranks[r].graph;
            let c = &caches[r];
            let mut de_new = aggregate_adjoint(g, &das[r]);
            if let Some(carry) = &des[r] {
                de_new.add_assign(carry)?;
            }
            let input = edge_input(g, &c.xs[m], &c.es[m]);
            let (_, tape) = lp.edge_mlp.forward_with_tape(&input)?;
            let mut ge = lp.edge_mlp.zeros_like();
            let din = lp.edge_mlp.backward(&tape, &de_new, &mut ge)?;
            let h = c.xs[m].cols;
            let mut dx = dx_self[r].clone();
            let mut de = Tensor2D::zeros(g.num_edges(), h);
            for (k, &[i, j]) in g.edges.iter().enumerate() {
                let row = din.row(k);
                add_into(dx.row_mut(i), &row[..h]);
                add_into(dx.row_mut(j), &row[h..2 * h]);
                de.row_mut(k).copy_from_slice(&row[2 * h..]);
            }
            Ok::<_, Error>((ge, dx, de))
        });
        for (r, res) in edge_part.into_iter().enumerate() {
            let (ge, dx, de) = res?;
            grads[r].processor[m].edge_mlp = ge;
            dxs[r] = dx;
            des[r] = Some(de);
        }
    }

    let enc = runtime.par_map(|r| {
        let p = replica(params, r);
        let g = &ranks[r].graph;
        let (x, e) = features(g)?;
        let mut gx = p.node_encoder.zeros_like();
        let (_, tape) = p.node_encoder.forward_with_tape(&x.head_rows(g.num_local))?;
        p.node_encoder.backward_params_only(&tape, &dxs[r], &mut gx)?;
        let mut ge = p.edge_encoder.zeros_like();
        if let Some(de) = &des[r] {
            let (_, tape) = p.edge_encoder.forward_with_tape(e)?;
            p.edge_encoder.backward_params_only(&tape, de, &mut ge)?;
        }
        Ok::<_, Error>((gx, ge))
    });
    for (r, res) in enc.into_iter().enumerate() {
        let (gx, ge) = res?;
        grads[r].node_encoder = gx;
        grads[r].edge_encoder = ge;
    }
    Ok(grads)
}

/// AllReduce-average of per-rank gradients. Every rank receives the same
/// flat vector.
pub fn average_gradients(runtime: &mut RankRuntime, grads: &[Gradients]) -> Result<Vec<Vec<f64>>> {
    let flat = grads
        .iter()
        .map(|g| {
            let v = g.flatten();
            Tensor2D::from_vec(1, v.len(), v)
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / runtime.num_ranks() as f64;
    Ok(runtime
        .all_reduce_sum(flat)?
        .into_iter()
        .map(|t| t.data.into_iter().map(|v| v * scale).collect())
        .collect())
}

/// Consistent loss and averaged gradients for one shared model. Targets are
/// local rows, one tensor per rank.
pub fn loss_and_gradients(
    params: &ModelParams,
    ranks: &[RankGraph],
    targets: &[Tensor2D],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
) -> Result<(f64, Gradients)> {
    let shared = std::slice::from_ref(params);
    let pass = forward_pass(shared, ranks, runtime, mode)?;
    let degrees: Vec<&[u32]> = ranks.iter().map(|rg| rg.graph.node_degree.as_slice()).collect();
    let (loss, dys) = consistent_loss_with_grad(runtime, &pass.outputs, targets, &degrees)?;
    let grads = backward(shared, ranks, runtime, mode, &pass, &dys)?;
    let flat = average_gradients(runtime, &grads)?;
    let mut out = params.zeros_like();
    out.load_flat(&flat[0])?;
    Ok((loss, out))
}

/// Consistent loss of one shared model without gradients.
pub fn evaluate_loss(
    params: &ModelParams,
    ranks: &[RankGraph],
    targets: &[Tensor2D],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
) -> Result<f64> {
    let ys = forward(params, ranks, runtime, mode)?;
    let degrees: Vec<&[u32]> = ranks.iter().map(|rg| rg.graph.node_degree.as_slice()).collect();
    consistent_loss(runtime, &ys, targets, &degrees)
}

/// Default autoencoding targets: the local rows of each rank's node features.
pub fn default_targets(ranks: &[RankGraph]) -> Result<Vec<Tensor2D>> {
    ranks
        .iter()
        .map(|rg| Ok(features(&rg.graph)?.0.head_rows(rg.graph.num_local)))
        .collect()
}

struct LayerOut {
    x: Tensor2D,
    e: Tensor2D,
    a_star: Tensor2D,
}

fn layer_forward(
    layers: &[&MessagePassingParams],
    ranks: &[RankGraph],
    plans: &[SyncPlan],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
    x: &[Tensor2D],
    e: &[Tensor2D],
) -> Result<Vec<LayerOut>> {
    let xs: Vec<&Tensor2D> = x.iter().collect();
    let es: Vec<&Tensor2D> = e.iter().collect();
    layer_forward_refs(layers, ranks, plans, runtime, mode, &xs, &es)
}

fn layer_forward_refs(
    layers: &[&MessagePassingParams],
    ranks: &[RankGraph],
    plans: &[SyncPlan],
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
    x: &[&Tensor2D],
    e: &[&Tensor2D],
) -> Result<Vec<LayerOut>> {
    for (r, rg) in ranks.iter().enumerate() {
        let g = &rg.graph;
        if x[r].rows != g.num_rows() {
            return Err(Error::shape("consistent_nmp_layer", g.num_rows(), x[r].rows));
        }
        if e[r].rows != g.num_edges() {
            return Err(Error::shape("consistent_nmp_layer", g.num_edges(), e[r].rows));
        }
    }
    let phase_a = runtime.par_map(|r| {
        let g = &ranks[r].graph;
        let e_new = layers[r].edge_mlp.forward(&edge_input(g, x[r], e[r]))?;
        let a = aggregate(g, &e_new);
        Ok::<_, Error>((e_new, a))
    });
    let mut e_new = Vec::with_capacity(ranks.len());
    let mut aggs = Vec::with_capacity(ranks.len());
    for res in phase_a {
        let (en, a) = res?;
        e_new.push(en);
        aggs.push(a);
    }
    if mode.is_consistent() {
        halo_exchange(runtime, mode, ranks, &mut aggs)?;
    }
    let phase_b = runtime.par_map(|r| {
        let g = &ranks[r].graph;
        let a_star = if mode.is_consistent() {
            plans[r].apply(&aggs[r], g.num_local)
        } else {
            aggs[r].head_rows(g.num_local)
        };
        let input = hcat(&a_star, &x[r].head_rows(g.num_local));
        let x_local = layers[r].node_mlp.forward(&input)?;
        Ok::<_, Error>((with_halo_rows(&x_local, x[r]), a_star))
    });
    let mut out = Vec::with_capacity(ranks.len());
    for (res, e) in phase_b.into_iter().zip(e_new) {
        let (x, a_star) = res?;
        out.push(LayerOut { x, e, a_star });
    }
    Ok(out)
}

/// Summation order for each local node with halo copies: all owners of the
/// global id in ascending rank order, the node's own row included.
struct SyncPlan {
    groups: Vec<(usize, Vec<usize>)>,
}

impl SyncPlan {
    fn new(g: &ReducedGraph) -> Self {
        let mut by_owner: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for h in 0..g.num_halo {
            by_owner
                .entry(g.halo_owner[h])
                .or_default()
                .push((g.halo_source[h], g.num_local + h));
        }
        let groups = by_owner
            .into_iter()
            .map(|(i, mut v)| {
                v.push((g.rank, i));
                v.sort_unstable();
                (i, v.into_iter().map(|(_, row)| row).collect())
            })
            .collect();
        Self { groups }
    }

    fn apply(&self, a: &Tensor2D, num_local: usize) -> Tensor2D {
        let mut out = a.head_rows(num_local);
        for (i, rows) in &self.groups {
            let dst = out.row_mut(*i);
            dst.copy_from_slice(a.row(rows[0]));
            for &row in &rows[1..] {
                add_into(dst, a.row(row));
            }
        }
        out
    }
}

/// Adjoint of the synchronization: every summand of `a*_i` receives `da*_i`.
fn expand_sync_adjoint(g: &ReducedGraph, da_star: &Tensor2D, mode: ExchangeMode) -> Tensor2D {
    let mut da = Tensor2D::zeros(g.num_rows(), da_star.cols);
    da.data[..da_star.len()].copy_from_slice(&da_star.data);
    if mode.is_consistent() {
        for h in 0..g.num_halo {
            da.row_mut(g.num_local + h)
                .copy_from_slice(da_star.row(g.halo_owner[h]));
        }
    }
    da
}

fn aggregate(g: &ReducedGraph, e_new: &Tensor2D) -> Tensor2D {
    let mut a = Tensor2D::zeros(g.num_rows(), e_new.cols);
    for (k, &[i, _]) in g.edges.iter().enumerate() {
        let w = 1.0 / g.edge_degree[k] as f64;
        for (dst, &v) in a.row_mut(i).iter_mut().zip(e_new.row(k)) {
            *dst += v * w;
        }
    }
    a
}

fn aggregate_adjoint(g: &ReducedGraph, da: &Tensor2D) -> Tensor2D {
    let mut de = Tensor2D::zeros(g.num_edges(), da.cols);
    for (k, &[i, _]) in g.edges.iter().enumerate() {
        let w = 1.0 / g.edge_degree[k] as f64;
        for (dst, &v) in de.row_mut(k).iter_mut().zip(da.row(i)) {
            *dst = v * w;
        }
    }
    de
}

/// Rows `[x_i, x_j, e_ij]` for every directed edge.
fn edge_input(g: &ReducedGraph, x: &Tensor2D, e: &Tensor2D) -> Tensor2D {
    let (h, he) = (x.cols, e.cols);
    let width = 2 * h + he;
    let mut out = Tensor2D::zeros(g.num_edges(), width);
    for (k, &[i, j]) in g.edges.iter().enumerate() {
        let row = out.row_mut(k);
        row[..h].copy_from_slice(x.row(i));
        row[h..2 * h].copy_from_slice(x.row(j));
        row[2 * h..].copy_from_slice(e.row(k));
    }
    out
}

fn hcat(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
    debug_assert_eq!(a.rows, b.rows);
    let mut out = Tensor2D::zeros(a.rows, a.cols + b.cols);
    for r in 0..a.rows {
        let row = out.row_mut(r);
        row[..a.cols].copy_from_slice(a.row(r));
        row[a.cols..].copy_from_slice(b.row(r));
    }
    out
}

fn hsplit(t: &Tensor2D, at: usize) -> (Tensor2D, Tensor2D) {
    let mut a = Tensor2D::zeros(t.rows, at);
    let mut b = Tensor2D::zeros(t.rows, t.cols - at);
    for r in 0..t.rows {
        a.row_mut(r).copy_from_slice(&t.row(r)[..at]);
        b.row_mut(r).copy_from_slice(&t.row(r)[at..]);
    }
    (a, b)
}

/// New local rows on top, halo rows carried over from `prev`.
fn with_halo_rows(local: &Tensor2D, prev: &Tensor2D) -> Tensor2D {
    let mut out = prev.clone();
    out.data[..local.len()].copy_from_slice(&local.data);
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn features(g: &ReducedGraph) -> Result<(&Tensor2D, &Tensor2D)> {
    let x = g
        .node_features
        .as_ref()
        .ok_or(Error::Uninitialized("node features"))?;
    let e = g
        .edge_features
        .as_ref()
        .ok_or(Error::Uninitialized("edge features"))?;
    Ok((x, e))
}

fn replica(params: &[ModelParams], rank: usize) -> &ModelParams {
    if params.len() == 1 {
        &params[0]
    } else {
        &params[rank]
    }
}

fn check_replicas(params: &[ModelParams], num_ranks: usize) -> Result<()> {
    if params.len() != 1 && params.len() != num_ranks {
        return Err(Error::shape("model replicas", num_ranks, params.len()));
    }
    Ok(())
}

fn check_ranks(ranks: &[RankGraph], runtime: &RankRuntime) -> Result<()> {
    if ranks.len() != runtime.num_ranks() {
        return Err(Error::Collective(format!(
            "{} rank graphs on a {}-rank runtime",
            ranks.len(),
            runtime.num_ranks()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
