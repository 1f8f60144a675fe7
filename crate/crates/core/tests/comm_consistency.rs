use std::collections::HashMap;

use halo_gnn::comm::{halo_exchange, halo_exchange_adjoint, CollectiveKind, ExchangeMode, RankRuntime};
use halo_gnn::gnn::{default_targets, evaluate_loss, forward, loss_and_gradients, GnnConfig};
use halo_gnn::graph::RankGraph;
use halo_gnn::harness::{build_problem, coincident_outputs_bitwise_equal};
use halo_gnn::meshgen::{block_factors, MeshConfig, PartitionStrategy};
use halo_gnn::nn::Tensor2D;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ranks_for(e: usize, p: usize, r: usize, s: PartitionStrategy) -> Vec<RankGraph> {
    build_problem(&MeshConfig::unit_cube(e, p), r, s).unwrap().ranks
}

fn random_blocks(ranks: &[RankGraph], width: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor2D> {
    ranks
        .iter()
        .map(|rg| {
            let mut t = Tensor2D::zeros(rg.graph.num_rows(), width);
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            t
        })
        .collect()
}

fn dot(a: &[Tensor2D], b: &[Tensor2D]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.data.iter().zip(&y.data)).map(|(x, y)| x * y).sum()
}

fn single_rank_loss(e: usize, p: usize, seed: u64) -> f64 {
    let ranks = ranks_for(e, p, 1, PartitionStrategy::slab());
    let params = GnnConfig::small().init_params(seed).unwrap();
    let t = default_targets(&ranks).unwrap();
    evaluate_loss(&params, &ranks, &t, &mut RankRuntime::new(1).unwrap(), ExchangeMode::NeighborA2A).unwrap()
}

#[test]
fn exchange_byte_counts_are_frozen() {
    let ranks = ranks_for(8, 1, 8, PartitionStrategy::slab());
    let mut out = Vec::new();
    for mode in [ExchangeMode::A2A, ExchangeMode::NeighborA2A] {
        let mut rt = RankRuntime::new(8).unwrap();
        let mut v = random_blocks(&ranks, 1, &mut ChaCha8Rng::seed_from_u64(0));
        halo_exchange(&mut rt, mode, &ranks, &mut v).unwrap();
        out.push(rt.comm_report().total_bytes(CollectiveKind::AllToAll));
    }
    // 81 shared nodes per slab face, 8 bytes each, 14 directed neighbor pairs
    assert_eq!(out, vec![41472, 9072]);
    assert_eq!(9072, 14 * 81 * 8);
}

#[test]
fn single_rank_loss_oracle() {
    let l = single_rank_loss(2, 2, 0);
    assert!((l - LOSS_E2_P2_SEED0).abs() <= 1e-13 * LOSS_E2_P2_SEED0, "{l:.17e}");
}

const LOSS_E2_P2_SEED0: f64 = 2.037_310_354_746_700_5e2;

#[test]
fn slab_and_block_agree() {
    let params = GnnConfig::small().init_params(3).unwrap();
    let loss = |s: PartitionStrategy| {
        let ranks = ranks_for(4, 2, 4, s);
        let t = default_targets(&ranks).unwrap();
        evaluate_loss(&params, &ranks, &t, &mut RankRuntime::new(4).unwrap(), ExchangeMode::A2A).unwrap()
    };
    let (a, b) = (loss(PartitionStrategy::slab()), loss(PartitionStrategy::block()));
    assert!(((a - b) / a).abs() <= 1e-12, "{a} vs {b}");
}

#[test]
fn gradients_do_not_depend_on_exchange_variant() {
    let params = GnnConfig::small().init_params(1).unwrap();
    let ranks = ranks_for(2, 2, 8, PartitionStrategy::block());
    let t = default_targets(&ranks).unwrap();
    let run = |mode| loss_and_gradients(&params, &ranks, &t, &mut RankRuntime::new(8).unwrap(), mode).unwrap();
    let (la, ga) = run(ExchangeMode::A2A);
    let (ln, gn) = run(ExchangeMode::NeighborA2A);
    assert_eq!(la.to_bits(), ln.to_bits());
    assert_eq!(ga.flatten(), gn.flatten());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exchange_adjoint_is_transpose(seed in any::<u64>(), e in 2usize..=4, slab in any::<bool>(), width in 1usize..4) {
        let (r, s) = if slab { (e, PartitionStrategy::slab()) } else { (8, PartitionStrategy::block()) };
        prop_assume!(slab || block_factors(8, e).is_some());
        let ranks = ranks_for(e, 1, r, s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_blocks(&ranks, width, &mut rng);
        let y = random_blocks(&ranks, width, &mut rng);

        let mut rt = RankRuntime::new(r).unwrap();
        let mut hx = x.clone();
        halo_exchange(&mut rt, ExchangeMode::NeighborA2A, &ranks, &mut hx).unwrap();
        let mut hty = y.clone();
        halo_exchange_adjoint(&mut rt, ExchangeMode::A2A, &ranks, &mut hty).unwrap();
        let (lhs, rhs) = (dot(&hx, &y), dot(&x, &hty));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn loss_is_rank_invariant(seed in 0u64..1000, e in prop::sample::select(vec![2usize, 4]), p in 1usize..=2, pick in 0usize..3, a2a in any::<bool>()) {
        let counts: Vec<usize> = [2, 4, 8].into_iter().filter(|&r| block_factors(r, e).is_some()).collect();
        let r = counts[pick % counts.len()];
        let mode = if a2a { ExchangeMode::A2A } else { ExchangeMode::NeighborA2A };
        let params = GnnConfig::small().init_params(seed).unwrap();
        let ranks = ranks_for(e, p, r, PartitionStrategy::block());
        let mut rt = RankRuntime::new(r).unwrap();
        let ys = forward(&params, &ranks, &mut rt, mode).unwrap();
        prop_assert!(coincident_outputs_bitwise_equal(&ranks, &ys));
        let t = default_targets(&ranks).unwrap();
        let lr = evaluate_loss(&params, &ranks, &t, &mut rt, mode).unwrap();
        let l1 = single_rank_loss(e, p, seed);
        prop_assert!(((lr - l1) / l1).abs() <= 1e-12, "R={} {} vs {}", r, lr, l1);
    }

    #[test]
    fn outputs_match_single_rank_per_node(seed in 0u64..1000) {
        let params = GnnConfig::small().init_params(seed).unwrap();
        let one = ranks_for(2, 2, 1, PartitionStrategy::slab());
        let y1 = forward(&params, &one, &mut RankRuntime::new(1).unwrap(), ExchangeMode::NeighborA2A).unwrap();
        let by_gid: HashMap<usize, &[f64]> = (0..one[0].graph.num_local).map(|i| (one[0].graph.global_ids[i], y1[0].row(i))).collect();
        let scale = y1[0].data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let many = ranks_for(2, 2, 8, PartitionStrategy::block());
        let ys = forward(&params, &many, &mut RankRuntime::new(8).unwrap(), ExchangeMode::NeighborA2A).unwrap();
        for (rg, y) in many.iter().zip(&ys) {
            for i in 0..rg.graph.num_local {
                for (a, b) in y.row(i).iter().zip(by_gid[&rg.graph.global_ids[i]]) {
                    prop_assert!((a - b).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}
