//! End-to-end verification runs, weak-scaling emulation and the Taylor-Green
//! input field.
//!
//! Input features on every node are the Taylor-Green vortex initial condition
//! evaluated at the node position (rescaled to `[0, 2pi]^3`). Targets default
//! to the inputs. Timings come from the runtime's simulated clock.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{CollectiveKind, ExchangeMode, RankRuntime};
use crate::error::{Error, Result};
use crate::gnn::{
    default_targets, evaluate_loss, forward, loss_and_gradients, GnnConfig, StepRecord, TrainConfig, Trainer,
};
use crate::graph::{build_distributed_graph, halo_stats, init_edge_features, HaloStats, RankGraph};
use crate::meshgen::{block_factors, build_box_mesh, partition_mesh, Mesh, MeshConfig, PartitionMap, PartitionStrategy};
use crate::nn::{ModelParams, Tensor2D};

pub const OUTPUT_TOLERANCE: f64 = 1e-12;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
pub const FD_TOLERANCE: f64 = 1e-6;
pub const TRACE_TOLERANCE: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;

/// `u = sin x cos y cos z`, `v = -cos x sin y cos z`, `w = 0` at each
/// position (already in `[0, 2pi]^3`).
pub fn tgv_field(positions: &[[f64; 3]]) -> Tensor2D {
    let mut out = Tensor2D::zeros(positions.len(), 3);
    for (i, &[x, y, z]) in positions.iter().enumerate() {
        let row = out.row_mut(i);
        row[0] = x.sin() * y.cos() * z.cos();
        row[1] = -x.cos() * y.sin() * z.cos();
        row[2] = 0.0;
    }
    out
}

/// Maps a point of the box `[min, max]` onto `[0, 2pi]^3`.
pub fn rescale_to_period(p: [f64; 3], min: [f64; 3], max: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = 2.0 * PI * (p[a] - min[a]) / (max[a] - min[a]);
    }
    out
}

/// Sets Taylor-Green node features and the derived edge features on every rank.
pub fn attach_tgv_features(config: &MeshConfig, ranks: &mut [RankGraph]) -> Result<()> {
    for rg in ranks.iter_mut() {
        let scaled: Vec<[f64; 3]> = rg
            .graph
            .positions
            .iter()
            .map(|&p| rescale_to_period(p, config.domain_min, config.domain_max))
            .collect();
        rg.graph.set_node_features(tgv_field(&scaled))?;
        let e = init_edge_features(&rg.graph)?;
        rg.graph.edge_features = Some(e);
    }
    Ok(())
}

/// A mesh split over `R` ranks with input features attached.
pub struct Problem {
    pub mesh: Mesh,
    pub partition: PartitionMap,
    pub ranks: Vec<RankGraph>,
}

pub fn build_problem(config: &MeshConfig, num_ranks: usize, strategy: PartitionStrategy) -> Result<Problem> {
    let mesh = build_box_mesh(*config)?;
    let partition = partition_mesh(&mesh, num_ranks, strategy)?;
    let mut ranks = build_distributed_graph(&mesh, &partition)?;
    attach_tgv_features(config, &mut ranks)?;
    Ok(Problem { mesh, partition, ranks })
}

/// Reads targets from CSV rows `gid,y0,y1,...` and lays them out per rank.
pub fn read_targets_csv<R: Read>(reader: R, ranks: &[RankGraph], out_dim: usize) -> Result<Vec<Tensor2D>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut by_gid: HashMap<usize, Vec<f64>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != out_dim + 1 {
            return Err(Error::Format(format!(
                "target row {} has {} fields, expected {}",
                line + 2,
                rec.len(),
                out_dim + 1
            )));
        }
        let parse_err = |f: &str| Error::Format(format!("target row {}: cannot parse `{f}`", line + 2));
        let gid: usize = rec[0].trim().parse().map_err(|_| parse_err(&rec[0]))?;
        let vals = (1..=out_dim)
            .map(|c| rec[c].trim().parse::<f64>().map_err(|_| parse_err(&rec[c])))
            .collect::<Result<Vec<_>>>()?;
        by_gid.insert(gid, vals);
    }
    ranks
        .iter()
        .map(|rg| {
            let g = &rg.graph;
            let mut t = Tensor2D::zeros(g.num_local, out_dim);
            for i in 0..g.num_local {
                let gid = g.global_ids[i];
                let v = by_gid
                    .get(&gid)
                    .ok_or_else(|| Error::Format(format!("no target for global id {gid}")))?;
                t.row_mut(i).copy_from_slice(v);
            }
            Ok(t)
        })
        .collect()
}

/// Largest entrywise difference between per-rank outputs and a single-rank
/// reference, divided by the reference's largest magnitude.
fn output_deviation(ranks: &[RankGraph], ys: &[Tensor2D], reference: &HashMap<usize, &[f64]>) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for v in reference.values() {
        scale = v.iter().fold(scale, |m, x| m.max(x.abs()));
    }
    for (rg, y) in ranks.iter().zip(ys) {
        for i in 0..rg.graph.num_local {
            let r = reference[&rg.graph.global_ids[i]];
            for (a, b) in y.row(i).iter().zip(r) {
                diff = diff.max((a - b).abs());
            }
        }
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// True when every global id has bitwise identical outputs on all its owners.
pub fn coincident_outputs_bitwise_equal(ranks: &[RankGraph], ys: &[Tensor2D]) -> bool {
    let mut first: HashMap<usize, &[f64]> = HashMap::new();
    for (rg, y) in ranks.iter().zip(ys) {
        for i in 0..rg.graph.num_local {
            let row = y.row(i);
            match first.get(&rg.graph.global_ids[i]) {
                Some(prev) => {
                    if prev.iter().zip(row).any(|(a, b)| a.to_bits() != b.to_bits()) {
                        return false;
                    }
                }
                None => {
                    first.insert(rg.graph.global_ids[i], row);
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub ranks: usize,
    pub mode: ExchangeMode,
    pub loss: f64,
    /// `|L_R - L_1| / |L_1|`.
    pub loss_rel_dev: f64,
    pub output_rel_dev: f64,
    pub coincident_bitwise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub mesh: MeshConfig,
    pub model: GnnConfig,
    pub seed: u64,
    pub strategy: PartitionStrategy,
    pub reference_loss: f64,
    pub rows: Vec<ConsistencyRow>,
    pub tolerance: f64,
}

impl ConsistencyReport {
    pub fn consistent_rows(&self) -> impl Iterator<Item = &ConsistencyRow> {
        self.rows.iter().filter(|r| r.mode.is_consistent())
    }

    /// Deviations of mode `none` for `R >= 2`, ordered by `R`.
    pub fn inconsistent_deviations(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter(|r| !r.mode.is_consistent() && r.ranks > 1)
            .map(|r| (r.ranks, r.loss_rel_dev))
            .collect();
        v.sort_by_key(|&(r, _)| r);
        v
    }

    pub fn inconsistent_monotone(&self) -> bool {
        let d = self.inconsistent_deviations();
        d.iter().all(|&(_, v)| v > 0.0) && d.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    pub fn consistent_ok(&self) -> bool {
        self.consistent_rows().all(|r| {
            r.loss_rel_dev <= self.tolerance && r.output_rel_dev <= self.tolerance && r.coincident_bitwise
        })
    }

    pub fn single_rank_modes_agree(&self) -> bool {
        let r1: Vec<f64> = self.rows.iter().filter(|r| r.ranks == 1).map(|r| r.loss).collect();
        r1.windows(2).all(|w| w[0] == w[1])
    }

    pub fn passed(&self) -> bool {
        self.consistent_ok() && self.inconsistent_monotone() && self.single_rank_modes_agree()
    }

    pub fn checks(&self) -> Vec<VerifyRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            let consistent = r.mode.is_consistent();
            out.push(VerifyRow {
                check: "loss_rel_dev".into(),
                seed: self.seed,
                ranks: r.ranks,
                mode: r.mode,
                value: r.loss_rel_dev,
                tolerance: if consistent { Some(self.tolerance) } else { None },
                passed: if consistent {
                    r.loss_rel_dev <= self.tolerance
                } else {
                    r.ranks == 1 || r.loss_rel_dev > 0.0
                },
            });
            if consistent {
                out.push(VerifyRow {
                    check: "output_rel_dev".into(),
                    seed: self.seed,
                    ranks: r.ranks,
                    mode: r.mode,
                    value: r.output_rel_dev,
                    tolerance: Some(self.tolerance),
                    passed: r.output_rel_dev <= self.tolerance,
                });
                out.push(VerifyRow {
                    check: "coincident_bitwise".into(),
                    seed: self.seed,
                    ranks: r.ranks,
                    mode: r.mode,
                    value: if r.coincident_bitwise { 1.0 } else { 0.0 },
                    tolerance: None,
                    passed: r.coincident_bitwise,
                });
            }
        }
        let last = self.inconsistent_deviations().last().map_or(0, |&(r, _)| r);
        out.push(VerifyRow {
            check: "none_monotone".into(),
            seed: self.seed,
            ranks: last,
            mode: ExchangeMode::None,
            value: if self.inconsistent_monotone() { 1.0 } else { 0.0 },
            tolerance: None,
            passed: self.inconsistent_monotone(),
        });
        out
    }
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "consistency: E={} p={} model={} seed={} strategy={} reference loss {:.17e}",
            self.mesh.elements_per_axis,
            self.mesh.poly_order,
            self.model.name(),
            self.seed,
            self.strategy.name(),
            self.reference_loss
        )?;
        writeln!(f, "{:>5} {:>5} {:>24} {:>12} {:>12} {:>8}", "R", "mode", "loss", "loss dev", "output dev", "bitwise")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5} {:>5} {:>24.17e} {:>12.3e} {:>12.3e} {:>8}",
                r.ranks, r.mode, r.loss, r.loss_rel_dev, r.output_rel_dev, r.coincident_bitwise
            )?;
        }
        Ok(())
    }
}

/// Runs the same randomly initialized model on the unpartitioned mesh and on
/// every requested rank count, with the consistent mode of `model` (or
/// neighbor all-to-all when `model` says `none`) and with mode `none`.
pub fn verify_consistency(
    mesh: &MeshConfig,
    rank_counts: &[usize],
    model: &GnnConfig,
    seed: u64,
    strategy: PartitionStrategy,
) -> Result<ConsistencyReport> {
    let consistent = if model.exchange_mode.is_consistent() {
        model.exchange_mode
    } else {
        ExchangeMode::NeighborA2A
    };
    let params = model.init_params(seed)?;

    let reference = build_problem(mesh, 1, strategy)?;
    let mut rt1 = RankRuntime::new(1)?;
    let y1 = forward(&params, &reference.ranks, &mut rt1, consistent)?;
    let t1 = default_targets(&reference.ranks)?;
    let deg1: Vec<&[u32]> = reference.ranks.iter().map(|rg| rg.graph.node_degree.as_slice()).collect();
    let reference_loss = crate::gnn::consistent_loss(&mut rt1, &y1, &t1, &deg1)?;
    let ref_rows: HashMap<usize, &[f64]> = {
        let g = &reference.ranks[0].graph;
        (0..g.num_local).map(|i| (g.global_ids[i], y1[0].row(i))).collect()
    };

    let mut rows = Vec::new();
    let mut counts: Vec<usize> = rank_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    for &r in &counts {
        let problem = build_problem(mesh, r, strategy)?;
        let targets = default_targets(&problem.ranks)?;
        let degrees: Vec<&[u32]> = problem.ranks.iter().map(|rg| rg.graph.node_degree.as_slice()).collect();
        for mode in [consistent, ExchangeMode::None] {
            let mut rt = RankRuntime::new(r)?;
            let ys = forward(&params, &problem.ranks, &mut rt, mode)?;
            let loss = crate::gnn::consistent_loss(&mut rt, &ys, &targets, &degrees)?;
            rows.push(ConsistencyRow {
                ranks: r,
                mode,
                loss,
                loss_rel_dev: rel_dev(loss, reference_loss),
                output_rel_dev: output_deviation(&problem.ranks, &ys, &ref_rows),
                coincident_bitwise: coincident_outputs_bitwise_equal(&problem.ranks, &ys),
            });
        }
    }
    Ok(ConsistencyReport {
        mesh: *mesh,
        model: model.with_mode(consistent),
        seed,
        strategy,
        reference_loss,
        rows,
        tolerance: OUTPUT_TOLERANCE,
    })
}

fn rel_dev(a: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        (a - reference).abs()
    } else {
        ((a - reference) / reference).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub seed: u64,
    pub ranks: usize,
    pub mode: ExchangeMode,
    pub loss: f64,
    pub reference_loss: f64,
    /// Largest per-parameter `|g_R - g_1| / |g_1|` over nonzero `g_1`.
    pub max_rel_dev: f64,
    /// Largest `|g_R - g_1|` over parameters whose `g_1` is exactly zero.
    pub max_abs_dev_at_zero: f64,
    pub repeat_bitwise: bool,
    pub fd: Vec<FdCheck>,
    pub tolerance: f64,
    pub fd_tolerance: f64,
}

impl GradientReport {
    pub fn max_fd_rel_err(&self) -> f64 {
        self.fd.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_dev <= self.tolerance
            && self.max_abs_dev_at_zero == 0.0
            && self.repeat_bitwise
            && self.max_fd_rel_err() <= self.fd_tolerance
    }

    pub fn checks(&self) -> Vec<VerifyRow> {
        vec![
            VerifyRow {
                check: "gradient_rel_dev".into(),
                seed: self.seed,
                ranks: self.ranks,
                mode: self.mode,
                value: self.max_rel_dev,
                tolerance: Some(self.tolerance),
                passed: self.max_rel_dev <= self.tolerance && self.max_abs_dev_at_zero == 0.0,
            },
            VerifyRow {
                check: "gradient_repeat_bitwise".into(),
                seed: self.seed,
                ranks: self.ranks,
                mode: self.mode,
                value: if self.repeat_bitwise { 1.0 } else { 0.0 },
                tolerance: None,
                passed: self.repeat_bitwise,
            },
            VerifyRow {
                check: "finite_difference_rel_err".into(),
                seed: self.seed,
                ranks: 1,
                mode: self.mode,
                value: self.max_fd_rel_err(),
                tolerance: Some(self.fd_tolerance),
                passed: self.max_fd_rel_err() <= self.fd_tolerance,
            },
        ]
    }
}

impl fmt::Display for GradientReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradients: R={} mode={} max rel dev vs R=1 {:.3e} (tol {:.0e}), repeat bitwise {}",
            self.ranks, self.mode, self.max_rel_dev, self.tolerance, self.repeat_bitwise
        )?;
        for c in &self.fd {
            writeln!(
                f,
                "  fd {:<36} [{:>3}] analytic {:>+.10e} fd {:>+.10e} rel {:.2e}",
                c.name, c.index, c.analytic, c.finite_difference, c.rel_err
            )?;
        }
        Ok(())
    }
}

/// Compares averaged gradients at `R` ranks with the single-rank gradients,
/// repeats the `R`-rank run for determinism, and checks `fd_samples`
/// parameters against central differences of the single-rank loss.
pub fn verify_gradients(
    mesh: &MeshConfig,
    num_ranks: usize,
    model: &GnnConfig,
    seed: u64,
    strategy: PartitionStrategy,
    fd_samples: usize,
) -> Result<GradientReport> {
    let mode = if model.exchange_mode.is_consistent() {
        model.exchange_mode
    } else {
        ExchangeMode::NeighborA2A
    };
    let params = model.init_params(seed)?;

    let reference = build_problem(mesh, 1, strategy)?;
    let t1 = default_targets(&reference.ranks)?;
    let mut rt1 = RankRuntime::new(1)?;
    let (reference_loss, g1) = loss_and_gradients(&params, &reference.ranks, &t1, &mut rt1, mode)?;

    let problem = build_problem(mesh, num_ranks, strategy)?;
    let targets = default_targets(&problem.ranks)?;
    let mut rt = RankRuntime::new(num_ranks)?;
    let (loss, gr) = loss_and_gradients(&params, &problem.ranks, &targets, &mut rt, mode)?;
    let mut rt_again = RankRuntime::new(num_ranks)?;
    let (_, gr_again) = loss_and_gradients(&params, &problem.ranks, &targets, &mut rt_again, mode)?;

    let (f1, fr, fr2) = (g1.flatten(), gr.flatten(), gr_again.flatten());
    let repeat_bitwise = fr.iter().zip(&fr2).all(|(a, b)| a.to_bits() == b.to_bits());
    let (mut max_rel_dev, mut max_abs_dev_at_zero) = (0.0f64, 0.0f64);
    for (a, b) in fr.iter().zip(&f1) {
        if *b == 0.0 {
            max_abs_dev_at_zero = max_abs_dev_at_zero.max(a.abs());
        } else {
            max_rel_dev = max_rel_dev.max(((a - b) / b).abs());
        }
    }

    let fd = finite_difference_checks(&params, &g1, &reference.ranks, &t1, mode, seed, fd_samples)?;
    Ok(GradientReport {
        seed,
        ranks: num_ranks,
        mode,
        loss,
        reference_loss,
        max_rel_dev,
        max_abs_dev_at_zero,
        repeat_bitwise,
        fd,
        tolerance: GRADIENT_TOLERANCE,
        fd_tolerance: FD_TOLERANCE,
    })
}

/// Parameters whose gradient magnitude is below this fraction of the largest
/// one are not sampled for finite-difference checks.
pub const FD_MIN_GRADIENT_FRACTION: f64 = 1e-2;

fn finite_difference_checks(
    params: &ModelParams,
    grads: &ModelParams,
    ranks: &[RankGraph],
    targets: &[Tensor2D],
    mode: ExchangeMode,
    seed: u64,
    samples: usize,
) -> Result<Vec<FdCheck>> {
    let flat_g = grads.flatten();
    let gmax = flat_g.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut names = Vec::with_capacity(flat_g.len());
    params.for_each_tensor(|n, t| {
        for i in 0..t.len() {
            names.push((n.clone(), i));
        }
    });
    let mut candidates: Vec<usize> = (0..flat_g.len())
        .filter(|&k| flat_g[k].abs() >= FD_MIN_GRADIENT_FRACTION * gmax)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_edfd);
    candidates.shuffle(&mut rng);
    candidates.truncate(samples);
    candidates.sort_unstable();

    let base = params.flatten();
    let mut rt = RankRuntime::new(ranks.len())?;
    let mut p = params.clone();
    let mut out = Vec::with_capacity(candidates.len());
    for k in candidates {
        let mut eval = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[k] += delta;
            p.load_flat(&v)?;
            evaluate_loss(&p, ranks, targets, &mut rt, mode)
        };
        let fd = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        let analytic = flat_g[k];
        out.push(FdCheck {
            name: names[k].0.clone(),
            index: names[k].1,
            analytic,
            finite_difference: fd,
            rel_err: ((fd - analytic) / analytic).abs(),
        });
    }
    Ok(out)
}

/// Loss traces of a reference run on one rank and of `R`-rank runs with a
/// consistent mode and with mode `none`, all from the same initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingComparison {
    pub ranks: usize,
    pub mode: ExchangeMode,
    pub reference: Vec<StepRecord>,
    pub consistent: Vec<StepRecord>,
    pub inconsistent: Vec<StepRecord>,
}

impl TrainingComparison {
    pub fn max_rel_dev(&self) -> f64 {
        self.reference
            .iter()
            .zip(&self.consistent)
            .map(|(a, b)| rel_dev(b.loss, a.loss))
            .fold(0.0, f64::max)
    }

    /// First iteration at which mode `none` differs from the reference by
    /// more than `tol`.
    pub fn inconsistent_departure(&self, tol: f64) -> Option<usize> {
        self.reference
            .iter()
            .zip(&self.inconsistent)
            .find(|(a, b)| rel_dev(b.loss, a.loss) > tol)
            .map(|(a, _)| a.iteration)
    }
}

pub fn compare_training(
    mesh: &MeshConfig,
    num_ranks: usize,
    model: &GnnConfig,
    train: &TrainConfig,
    strategy: PartitionStrategy,
) -> Result<TrainingComparison> {
    let mode = if model.exchange_mode.is_consistent() {
        model.exchange_mode
    } else {
        ExchangeMode::NeighborA2A
    };
    let run = |r: usize, m: ExchangeMode| -> Result<Vec<StepRecord>> {
        let problem = build_problem(mesh, r, strategy)?;
        Trainer::new(model.with_mode(m), *train, problem.ranks, None)?.run()
    };
    Ok(TrainingComparison {
        ranks: num_ranks,
        mode,
        reference: run(1, mode)?,
        consistent: run(num_ranks, mode)?,
        inconsistent: run(num_ranks, ExchangeMode::None)?,
    })
}

/// One pass/fail line of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub check: String,
    pub seed: u64,
    pub ranks: usize,
    pub mode: ExchangeMode,
    pub value: f64,
    pub tolerance: Option<f64>,
    pub passed: bool,
}

pub fn write_verify_csv<W: Write>(rows: &[VerifyRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingOptions {
    /// Target local nodes per rank.
    pub loading: usize,
    pub ranks: Vec<usize>,
    pub models: Vec<GnnConfig>,
    pub modes: Vec<ExchangeMode>,
    /// Fixed polynomial order; `None` searches orders 3 to 7.
    pub order: Option<usize>,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
    pub memory_budget: u64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            loading: 8192,
            ranks: vec![2, 4, 8],
            models: vec![GnnConfig::small()],
            modes: ExchangeMode::ALL.to_vec(),
            order: Some(5),
            warmup: 0,
            iterations: 1,
            seed: 0,
            memory_budget: 4 << 30,
        }
    }
}

/// Cube mesh whose block partition over `ranks` gives local node counts
/// closest to `loading`. Returns the mesh and the rank grid.
pub fn choose_mesh(loading: usize, ranks: usize, order: Option<usize>) -> Result<(MeshConfig, [usize; 3])> {
    let orders: Vec<usize> = match order {
        Some(p) => vec![p],
        None => (3..=7).collect(),
    };
    let mut best: Option<(f64, MeshConfig, [usize; 3])> = None;
    for p in orders {
        // step E by the lcm of the rank-grid factors so every factor divides it
        let grid = block_factors(ranks, ranks_lcm_probe(ranks))
            .ok_or_else(|| Error::Config(format!("cannot factor R={ranks} into a rank grid")))?;
        let step = lcm(lcm(grid[0], grid[1]), grid[2]);
        let ideal = ((loading * ranks) as f64).cbrt() / p as f64;
        let k0 = ((ideal / step as f64).floor() as usize).max(1);
        for k in [k0, k0 + 1] {
            let e = k * step;
            let local: f64 = grid.iter().map(|&f| ((e / f) * p + 1) as f64).product();
            let miss = (local - loading as f64).abs() / loading as f64;
            if best.as_ref().is_none_or(|(m, _, _)| miss < *m) {
                best = Some((miss, MeshConfig::unit_cube(e, p), grid));
            }
        }
    }
    let (_, cfg, grid) = best.expect("at least one order");
    Ok((cfg, grid))
}

/// A multiple of every factor of `ranks`, so that [`block_factors`] only
/// constrains the factorization by `ranks` itself.
fn ranks_lcm_probe(ranks: usize) -> usize {
    (1..=ranks).filter(|d| ranks.is_multiple_of(*d)).fold(1, lcm)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Rough peak memory of one training step over the whole simulated system:
/// stored layer inputs for every rank plus one recomputed MLP tape per worker
/// thread.
pub fn estimate_step_bytes(mesh: &MeshConfig, ranks: usize, model: &GnnConfig) -> u64 {
    let nodes = mesh.num_unique_nodes() as f64 * (1.0 + 0.1 * (ranks as f64).cbrt());
    let edges = 6.0 * nodes;
    let h = model.hidden_dim as f64;
    let m = model.num_mp_layers as f64;
    let k = model.mlp_hidden_layers as f64;
    let stored = edges * 8.0 * (10.0 + h * (m + 1.0)) + nodes * 8.0 * (12.0 + h * (2.0 * m + 4.0));
    let threads = rayon::current_num_threads().min(ranks) as f64;
    let tape = threads * edges / ranks as f64 * 8.0 * h * (8.0 + 4.0 * k);
    (stored + tape) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub seed: u64,
    pub ranks: usize,
    pub loading: usize,
    pub model: String,
    pub mode: ExchangeMode,
    pub elements: usize,
    pub order: usize,
    pub total_nodes: usize,
    pub local_min: f64,
    pub local_max: f64,
    pub local_avg: f64,
    pub halo_min: f64,
    pub halo_max: f64,
    pub halo_avg: f64,
    pub neighbors_min: f64,
    pub neighbors_max: f64,
    pub neighbors_avg: f64,
    /// Simulated time of one training iteration.
    pub step_ms: f64,
    pub nodes_per_sec: f64,
    pub efficiency: f64,
    pub relative_throughput: Option<f64>,
    pub bytes_halo: u64,
    pub bytes_allreduce: u64,
    pub halo_calls: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub halo: Vec<(usize, HaloStats)>,
}

impl ScalingReport {
    /// N-A2A moves no more bytes than A2A for every configuration, and
    /// strictly fewer whenever some pair of ranks shares no halo nodes.
    pub fn bytes_ordering_holds(&self) -> bool {
        self.rows
            .iter()
            .filter(|r| r.mode == ExchangeMode::NeighborA2A)
            .all(|n| {
                match self
                    .rows
                    .iter()
                    .find(|a| a.mode == ExchangeMode::A2A && a.ranks == n.ranks && a.model == n.model && a.loading == n.loading)
                {
                    None => true,
                    Some(a) => {
                        let sparse = n.neighbors_min < (n.ranks - 1) as f64;
                        n.bytes_halo <= a.bytes_halo && (!sparse || n.bytes_halo < a.bytes_halo)
                    }
                }
            })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", HaloStats::header());
        for (_, h) in &self.halo {
            let _ = writeln!(s, "{h}");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>4} {:>7} {:>6} {:>5} {:>10} {:>14} {:>7} {:>7} {:>14} {:>6}",
            "R", "loading", "model", "mode", "sim ms", "nodes/s", "eff", "rel", "halo bytes", "calls"
        );
        for r in &self.rows {
            let rel = r.relative_throughput.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{:>4} {:>7} {:>6} {:>5} {:>10.1} {:>14.0} {:>7.3} {:>7} {:>14} {:>6}",
                r.ranks, r.loading, r.model, r.mode, r.step_ms, r.nodes_per_sec, r.efficiency, rel, r.bytes_halo, r.halo_calls
            );
        }
        s
    }
}

/// Times full training iterations for every (R, model, mode) combination at
/// a fixed per-rank loading. Times are simulated (see [`RankRuntime`]).
pub fn weak_scaling(opts: &ScalingOptions) -> Result<ScalingReport> {
    if opts.iterations == 0 {
        return Err(Error::Config("weak scaling needs at least one timed iteration".into()));
    }
    let mut rows = Vec::new();
    let mut halo = Vec::new();
    let mut counts = opts.ranks.clone();
    counts.sort_unstable();
    counts.dedup();
    for &r in &counts {
        let (mesh, grid) = choose_mesh(opts.loading, r, opts.order)?;
        for model in &opts.models {
            let need = estimate_step_bytes(&mesh, r, model);
            if need > opts.memory_budget {
                return Err(Error::TooLarge(format!(
                    "R={r} with {} nodes and the {} model needs about {} MiB, budget is {} MiB",
                    mesh.num_unique_nodes(),
                    model.name(),
                    need >> 20,
                    opts.memory_budget >> 20
                )));
            }
        }
        let strategy = PartitionStrategy::Block { ranks: grid };
        let mut ranks = build_problem(&mesh, r, strategy)?.ranks;
        let stats = halo_stats(&ranks);
        let processed: usize = stats.per_rank.iter().map(|s| s.local_nodes).sum();
        halo.push((r, stats.clone()));
        for model in &opts.models {
            for &mode in &opts.modes {
                let train = TrainConfig {
                    iterations: opts.warmup + opts.iterations,
                    seed: opts.seed,
                    audit_interval: 0,
                    ..TrainConfig::default()
                };
                let mut trainer = Trainer::new(model.with_mode(mode), train, ranks, None)?;
                for _ in 0..opts.warmup {
                    trainer.step()?;
                }
                let before = trainer.runtime().comm_report();
                let mut ms = 0.0;
                let mut last = None;
                for _ in 0..opts.iterations {
                    let rec = trainer.step()?;
                    ms += rec.wall_ms;
                    last = Some(rec);
                }
                let last = last.expect("iterations >= 1");
                let after = trainer.runtime().comm_report();
                let calls = (after.get(0, CollectiveKind::AllToAll).calls - before.get(0, CollectiveKind::AllToAll).calls)
                    / opts.iterations as u64;
                let step_ms = ms / opts.iterations as f64;
                rows.push(ScalingRow {
                    seed: opts.seed,
                    ranks: r,
                    loading: opts.loading,
                    model: model.name().to_string(),
                    mode,
                    elements: mesh.elements_per_axis,
                    order: mesh.poly_order,
                    total_nodes: mesh.num_unique_nodes(),
                    local_min: stats.local_nodes.min,
                    local_max: stats.local_nodes.max,
                    local_avg: stats.local_nodes.avg,
                    halo_min: stats.halo_nodes.min,
                    halo_max: stats.halo_nodes.max,
                    halo_avg: stats.halo_nodes.avg,
                    neighbors_min: stats.neighbors.min,
                    neighbors_max: stats.neighbors.max,
                    neighbors_avg: stats.neighbors.avg,
                    step_ms,
                    nodes_per_sec: processed as f64 / (step_ms / 1e3),
                    efficiency: f64::NAN,
                    relative_throughput: None,
                    bytes_halo: last.bytes_halo,
                    bytes_allreduce: last.bytes_allreduce,
                    halo_calls: calls,
                    loss: last.loss,
                });
                ranks = trainer.into_ranks();
            }
        }
    }
    fill_ratios(&mut rows);
    Ok(ScalingReport { rows, halo })
}

fn fill_ratios(rows: &mut [ScalingRow]) {
    let snapshot = rows.to_vec();
    for row in rows.iter_mut() {
        let base = snapshot
            .iter()
            .filter(|b| b.model == row.model && b.mode == row.mode && b.loading == row.loading)
            .min_by_key(|b| b.ranks)
            .expect("row is its own candidate");
        row.efficiency = (row.nodes_per_sec / row.ranks as f64) / (base.nodes_per_sec / base.ranks as f64);
        row.relative_throughput = snapshot
            .iter()
            .find(|b| {
                b.mode == ExchangeMode::None && b.model == row.model && b.ranks == row.ranks && b.loading == row.loading
            })
            .map(|b| if b.mode == row.mode { 1.0 } else { row.nodes_per_sec / b.nodes_per_sec });
    }
}

/// Achieved parameter counts of the named presets next to their targets.
pub fn param_count_report() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:>9} {:>9} {:>7}", "model", "achieved", "target", "delta");
    for cfg in [GnnConfig::small(), GnnConfig::large()] {
        let achieved = cfg.param_count();
        let target = cfg.target_param_count().expect("preset");
        let _ = writeln!(
            s,
            "{:<6} {:>9} {:>9} {:>+7}",
            cfg.name(),
            achieved,
            target,
            achieved as i64 - target as i64
        );
    }
    let _ = writeln!(
        s,
        "convention: every MLP is input layer + ELU, then k residual blocks h + ELU(LayerNorm(hW + b)), then a linear output layer"
    );
    s
}
