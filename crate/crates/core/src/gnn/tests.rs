use std::collections::HashMap;

use super::*;
use crate::harness::build_problem;
use crate::meshgen::{build_box_mesh, MeshConfig, PartitionMap, PartitionStrategy};
use crate::nn::{AdamState, Mlp, MlpSpec};

fn problem(e: usize, p: usize, r: usize) -> Vec<RankGraph> {
    build_problem(&MeshConfig::unit_cube(e, p), r, PartitionStrategy::block())
        .unwrap()
        .ranks
}

/// Two p=1 elements along x; `split` puts them on separate ranks.
fn two_elements(split: bool) -> Vec<RankGraph> {
    let cfg = MeshConfig::unit_cube(2, 1);
    let mesh = build_box_mesh(cfg).unwrap().sub_mesh(&[0, 1]);
    let part = PartitionMap {
        num_ranks: if split { 2 } else { 1 },
        element_to_rank: if split { vec![0, 1] } else { vec![0, 0] },
    };
    let mut ranks = crate::graph::build_distributed_graph(&mesh, &part).unwrap();
    crate::harness::attach_tgv_features(&cfg, &mut ranks).unwrap();
    ranks
}

/// Deterministic value for a directed global edge.
fn edge_value(gi: usize, gj: usize, c: usize) -> f64 {
    ((gi * 31 + gj * 7 + c * 3) % 17) as f64 * 0.25 - 2.0
}

fn edge_values(g: &ReducedGraph, width: usize) -> Tensor2D {
    let mut t = Tensor2D::zeros(g.num_edges(), width);
    for (k, &[i, j]) in g.edges.iter().enumerate() {
        for c in 0..width {
            t.set(k, c, edge_value(g.global_ids[i], g.global_ids[j], c));
        }
    }
    t
}

#[test]
fn preset_parameter_counts() {
    assert_eq!(GnnConfig::small().param_count(), 4195);
    assert_eq!(GnnConfig::large().param_count(), 94435);
    assert_eq!(GnnConfig::small().init_params(3).unwrap().param_count(), 4195);
    assert_eq!(GnnConfig::small().target_param_count(), Some(SMALL_TARGET_PARAMS));
    assert_eq!(GnnConfig::custom(4, 1, 1).target_param_count(), None);
}

#[test]
fn config_hash_tracks_architecture_only() {
    let s = GnnConfig::small();
    assert_eq!(s.config_hash(), s.with_mode(ExchangeMode::None).config_hash());
    assert_ne!(s.config_hash(), GnnConfig::large().config_hash());
    assert_eq!(GnnConfig::preset("large").unwrap(), GnnConfig::large());
    assert!(GnnConfig::preset("medium").is_err());
}

#[test]
fn zero_encoder_gives_zero_hidden() {
    let p = ModelParams::zeros(GnnConfig::small().layout());
    let x = Tensor2D::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
    let e = Tensor2D::from_rows(&[vec![1.0; 7]]).unwrap();
    let (hx, he) = encode(&p, &x, &e).unwrap();
    assert!(hx.data.iter().chain(&he.data).all(|&v| v == 0.0));
    assert_eq!((hx.cols, he.cols), (8, 8));
    assert!(encode(&p, &Tensor2D::zeros(1, 2), &e).is_err());
}

#[test]
fn single_node_hand_encoder() {
    // Linear encoder (k = 0): hidden = x W + b.
    let mut p = ModelParams::zeros(GnnConfig::custom(2, 1, 0).layout());
    p.node_encoder = Mlp::zeros(MlpSpec::linear(3, 2));
    p.node_encoder.linears[0].weight = Tensor2D::from_rows(&[vec![1.0, 0.0], vec![2.0, 1.0], vec![0.0, -1.0]]).unwrap();
    p.node_encoder.linears[0].bias = Tensor2D::from_rows(&[vec![0.5, 0.25]]).unwrap();
    let x = Tensor2D::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
    let (hx, _) = encode(&p, &x, &Tensor2D::zeros(0, 7)).unwrap();
    // [1 + 4 + 0 + .5, 0 + 2 - 3 + .25]
    assert_eq!(hx.data, vec![5.5, -0.75]);
}

#[test]
fn decoder_drops_halo_rows() {
    let ranks = problem(2, 2, 2);
    let p = GnnConfig::small().init_params(0).unwrap();
    let g = &ranks[0].graph;
    assert!(g.num_halo > 0);
    let y = decode(&p, g, &Tensor2D::zeros(g.num_rows(), 8)).unwrap();
    assert_eq!(y.shape(), (g.num_local, 3));
    let z = decode(&ModelParams::zeros(p.layout), g, &Tensor2D::zeros(g.num_rows(), 8)).unwrap();
    assert!(z.data.iter().all(|&v| v == 0.0));
}

#[test]
fn face_edge_contribution_is_halved() {
    let ranks = two_elements(true);
    let g = &ranks[0].graph;
    let k = g.edge_degree.iter().position(|&d| d == 2).unwrap();
    let mut e = Tensor2D::zeros(g.num_edges(), 2);
    e.row_mut(k).copy_from_slice(&[2.0, 4.0]);
    let a = aggregate(g, &e);
    assert_eq!(a.row(g.edges[k][0]), &[1.0, 2.0]);
}

#[test]
fn two_element_synchronized_aggregates_match_single_rank() {
    let single = two_elements(false);
    let split = two_elements(true);
    let g1 = &single[0].graph;
    let a1 = aggregate(g1, &edge_values(g1, 2));
    let by_gid: HashMap<usize, &[f64]> = (0..g1.num_local).map(|i| (g1.global_ids[i], a1.row(i))).collect();

    let mut aggs: Vec<Tensor2D> = split.iter().map(|rg| aggregate(&rg.graph, &edge_values(&rg.graph, 2))).collect();
    let mut rt = RankRuntime::new(2).unwrap();
    halo_exchange(&mut rt, ExchangeMode::NeighborA2A, &split, &mut aggs).unwrap();
    let mut shared = 0;
    for (rg, a) in split.iter().zip(&aggs) {
        let g = &rg.graph;
        let a_star = SyncPlan::new(g).apply(a, g.num_local);
        for i in 0..g.num_local {
            let want = by_gid[&g.global_ids[i]];
            if g.node_degree[i] == 2 {
                shared += 1;
                let h = g.num_local + g.halo_owner.iter().position(|&o| o == i).unwrap();
                let sum: Vec<f64> = if rg.graph.rank == 0 {
                    a.row(i).iter().zip(a.row(h)).map(|(x, y)| x + y).collect()
                } else {
                    a.row(h).iter().zip(a.row(i)).map(|(x, y)| x + y).collect()
                };
                assert_eq!(a_star.row(i), sum.as_slice());
            }
            for (x, y) in a_star.row(i).iter().zip(want) {
                assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0), "gid {}", g.global_ids[i]);
            }
        }
    }
    assert_eq!(shared, 8);
}

#[test]
fn single_rank_layer_ignores_mode() {
    let ranks = problem(2, 2, 1);
    let p = GnnConfig::small().init_params(1).unwrap();
    let g = &ranks[0].graph;
    let (x, e) = encode(&p, g.node_features.as_ref().unwrap(), g.edge_features.as_ref().unwrap()).unwrap();
    let mut rt = RankRuntime::new(1).unwrap();
    let (xa, ea) = consistent_nmp_layer(
        &p.processor[0],
        &ranks,
        &mut rt,
        ExchangeMode::NeighborA2A,
        std::slice::from_ref(&x),
        std::slice::from_ref(&e),
    )
    .unwrap();
    let (xb, eb) = consistent_nmp_layer(&p.processor[0], &ranks, &mut rt, ExchangeMode::None, &[x], &[e]).unwrap();
    assert_eq!((xa, ea), (xb, eb));
}

#[test]
fn coincident_hidden_states_bitwise_equal_every_layer() {
    // E=2 block over 8 ranks: the center node has 8 owners.
    let ranks = problem(2, 2, 8);
    let p = GnnConfig::small().init_params(7).unwrap();
    let mut rt = RankRuntime::new(8).unwrap();
    let pass = forward_pass(std::slice::from_ref(&p), &ranks, &mut rt, ExchangeMode::A2A).unwrap();
    for layer in 1..=4 {
        let mut seen: HashMap<usize, &[f64]> = HashMap::new();
        for (r, rg) in ranks.iter().enumerate() {
            let x = pass.node_hidden(r, layer);
            for i in 0..rg.graph.num_local {
                let row = x.row(i);
                if let Some(prev) = seen.insert(rg.graph.global_ids[i], row) {
                    assert!(
                        prev.iter().zip(row).all(|(a, b)| a.to_bits() == b.to_bits()),
                        "layer {layer} gid {}",
                        rg.graph.global_ids[i]
                    );
                }
            }
        }
    }
}

#[test]
fn unit_edge_scaling_breaks_consistency() {
    let p = GnnConfig::small().init_params(0).unwrap();
    let reference = problem(2, 2, 1);
    let t1 = default_targets(&reference).unwrap();
    let l1 = evaluate_loss(&p, &reference, &t1, &mut RankRuntime::new(1).unwrap(), ExchangeMode::NeighborA2A).unwrap();

    let mut ranks = problem(2, 2, 2);
    let t = default_targets(&ranks).unwrap();
    let mut rt = RankRuntime::new(2).unwrap();
    let good = evaluate_loss(&p, &ranks, &t, &mut rt, ExchangeMode::NeighborA2A).unwrap();
    assert!(((good - l1) / l1).abs() < 1e-12);
    for rg in &mut ranks {
        rg.graph.edge_degree.iter_mut().for_each(|d| *d = 1);
    }
    let bad = evaluate_loss(&p, &ranks, &t, &mut rt, ExchangeMode::NeighborA2A).unwrap();
    assert!(((bad - l1) / l1).abs() > 1e-6, "{bad} vs {l1}");
}

/// Relabels the local rows of a single-rank graph by `perm` (new -> old).
fn permuted(rg: &RankGraph, perm: &[usize]) -> RankGraph {
    let g = &rg.graph;
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut out = rg.clone();
    let h = &mut out.graph;
    h.positions = perm.iter().map(|&o| g.positions[o]).collect();
    h.global_ids = perm.iter().map(|&o| g.global_ids[o]).collect();
    h.node_degree = perm.iter().map(|&o| g.node_degree[o]).collect();
    h.node_features = Some(g.node_features.as_ref().unwrap().gather_rows(perm));
    h.edges = g.edges.iter().map(|&[i, j]| [inv[i], inv[j]]).collect();
    out
}

#[test]
fn forward_commutes_with_node_permutation() {
    let ranks = problem(2, 1, 1);
    let n = ranks[0].graph.num_local;
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let shuffled = vec![permuted(&ranks[0], &perm)];
    let p = GnnConfig::small().init_params(2).unwrap();
    let mut rt = RankRuntime::new(1).unwrap();
    let y = forward(&p, &ranks, &mut rt, ExchangeMode::NeighborA2A).unwrap();
    let ys = forward(&p, &shuffled, &mut rt, ExchangeMode::NeighborA2A).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        for (a, b) in ys[0].row(new).iter().zip(y[0].row(old)) {
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
        }
    }
}

#[test]
fn halo_calls_per_step_are_two_per_layer() {
    let ranks = problem(2, 2, 4);
    let cfg = GnnConfig::small().with_mode(ExchangeMode::NeighborA2A);
    let mut trainer = Trainer::new(cfg, TrainConfig { iterations: 1, ..TrainConfig::default() }, ranks, None).unwrap();
    trainer.step().unwrap();
    let rep = trainer.runtime().comm_report();
    for r in 0..4 {
        assert_eq!(rep.get(r, crate::comm::CollectiveKind::AllToAll).calls, 8);
    }
}

#[test]
fn single_rank_step_matches_plain_adam() {
    let ranks = problem(2, 1, 1);
    let cfg = GnnConfig::small();
    let train = TrainConfig {
        iterations: 1,
        lr: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    };
    let targets = default_targets(&ranks).unwrap();
    let p0 = cfg.init_params(5).unwrap();
    let mut rt = RankRuntime::new(1).unwrap();
    let (loss, g) = loss_and_gradients(&p0, &ranks, &targets, &mut rt, cfg.exchange_mode).unwrap();
    let mut flat = p0.flatten();
    AdamState::new(flat.len()).step(&train.adam(), &mut flat, &g.flatten()).unwrap();

    let mut trainer = Trainer::new(cfg, train, ranks, None).unwrap();
    let rec = trainer.step().unwrap();
    assert_eq!(rec.loss, loss);
    assert_eq!(trainer.params().flatten(), flat);
}

#[test]
fn replicas_stay_identical_and_divergence_is_caught() {
    let ranks = problem(2, 1, 2);
    let train = TrainConfig {
        iterations: 3,
        audit_interval: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(GnnConfig::small(), train, ranks, None).unwrap();
    trainer.run().unwrap();
    assert_eq!(trainer.replica(0), trainer.replica(1));
    trainer.replica_mut(1).decoder.linears[0].bias.data[0] += 1e-9;
    match trainer.step() {
        Err(Error::Divergence { rank, tensor, .. }) => {
            assert_eq!(rank, 1);
            assert_eq!(tensor, "decoder.lin0.bias");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn loss_trace_csv_header() {
    let rec = StepRecord {
        iteration: 1,
        loss: 0.5,
        wall_ms: 2.0,
        bytes_halo: 64,
        bytes_allreduce: 16,
        seed: 0,
    };
    let mut out = Vec::new();
    write_loss_trace(&[rec], &mut out).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "iteration,loss,wall_ms,bytes_halo,bytes_allreduce,seed\n1,0.5,2.0,64,16,0\n"
    );
}

#[test]
fn missing_features_are_reported() {
    let mesh = build_box_mesh(MeshConfig::unit_cube(1, 1)).unwrap();
    let part = PartitionMap {
        num_ranks: 1,
        element_to_rank: vec![0],
    };
    let ranks = crate::graph::build_distributed_graph(&mesh, &part).unwrap();
    let p = GnnConfig::small().init_params(0).unwrap();
    let err = forward(&p, &ranks, &mut RankRuntime::new(1).unwrap(), ExchangeMode::None).unwrap_err();
    assert!(matches!(err, Error::Uninitialized(_)));
}
