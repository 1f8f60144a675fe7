use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{average_gradients, backward, consistent_loss_with_grad, default_targets, forward_pass, GnnConfig};
use crate::comm::{CollectiveKind, RankRuntime};
use crate::error::{Error, Result};
use crate::graph::RankGraph;
use crate::nn::{AdamConfig, AdamState, ModelParams, Tensor2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Replica equality is checked every `audit_interval` steps; 0 disables it.
    pub audit_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            iterations: 100,
            seed: 0,
            audit_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub loss: f64,
    /// Simulated wall time of the step.
    pub wall_ms: f64,
    pub bytes_halo: u64,
    pub bytes_allreduce: u64,
    pub seed: u64,
}

pub fn write_loss_trace<W: Write>(records: &[StepRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Data-parallel training over simulated ranks. Each rank holds its own model
/// replica and optimizer state; averaged gradients keep them identical.
pub struct Trainer {
    config: GnnConfig,
    train: TrainConfig,
    ranks: Vec<RankGraph>,
    targets: Vec<Tensor2D>,
    runtime: RankRuntime,
    replicas: Vec<ModelParams>,
    adam: Vec<AdamState>,
    iteration: usize,
}

impl Trainer {
    /// `targets` default to the input node features.
    pub fn new(
        config: GnnConfig,
        train: TrainConfig,
        ranks: Vec<RankGraph>,
        targets: Option<Vec<Tensor2D>>,
    ) -> Result<Self> {
        train.validate()?;
        let params = config.init_params(train.seed)?;
        Self::with_params(config, train, ranks, targets, params)
    }

    pub fn with_params(
        config: GnnConfig,
        train: TrainConfig,
        ranks: Vec<RankGraph>,
        targets: Option<Vec<Tensor2D>>,
        params: ModelParams,
    ) -> Result<Self> {
        config.validate()?;
        if params.layout != config.layout() {
            return Err(Error::Config("parameters do not match the model configuration".into()));
        }
        let runtime = RankRuntime::new(ranks.len())?;
        let targets = match targets {
            Some(t) => t,
            None => default_targets(&ranks)?,
        };
        if targets.len() != ranks.len() {
            return Err(Error::shape("targets", ranks.len(), targets.len()));
        }
        for (t, rg) in targets.iter().zip(&ranks) {
            if t.shape() != (rg.graph.num_local, config.out_dim) {
                return Err(Error::shape(
                    "targets",
                    format!("({}, {})", rg.graph.num_local, config.out_dim),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        let n = params.param_count();
        Ok(Self {
            config,
            train,
            replicas: vec![params; ranks.len()],
            adam: vec![AdamState::new(n); ranks.len()],
            ranks,
            targets,
            runtime,
            iteration: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.replicas[0]
    }

    pub fn replica(&self, rank: usize) -> &ModelParams {
        &self.replicas[rank]
    }

    pub fn runtime(&self) -> &RankRuntime {
        &self.runtime
    }

    pub fn ranks(&self) -> &[RankGraph] {
        &self.ranks
    }

    pub fn into_ranks(self) -> Vec<RankGraph> {
        self.ranks
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// forward, consistent loss, backward, gradient averaging, Adam.
    pub fn step(&mut self) -> Result<StepRecord> {
        let before = self.runtime.comm_report();
        let t0 = self.runtime.elapsed();
        let mode = self.config.exchange_mode;

        let pass = forward_pass(&self.replicas, &self.ranks, &mut self.runtime, mode)?;
        let degrees: Vec<&[u32]> = self.ranks.iter().map(|rg| rg.graph.node_degree.as_slice()).collect();
        let (loss, dys) = consistent_loss_with_grad(&mut self.runtime, &pass.outputs, &self.targets, &degrees)?;
        let grads = backward(&self.replicas, &self.ranks, &mut self.runtime, mode, &pass, &dys)?;
        drop(pass);
        let avg = average_gradients(&mut self.runtime, &grads)?;
        drop(grads);

        let cfg = self.train.adam();
        let mut updates = Vec::with_capacity(self.replicas.len());
        for (r, g) in avg.iter().enumerate() {
            let mut flat = self.replicas[r].flatten();
            self.adam[r].step(&cfg, &mut flat, g)?;
            updates.push(flat);
        }
        for (p, flat) in self.replicas.iter_mut().zip(&updates) {
            p.load_flat(flat)?;
        }
        self.iteration += 1;
        if self.train.audit_interval > 0 && self.iteration.is_multiple_of(self.train.audit_interval) {
            self.audit()?;
        }

        let after = self.runtime.comm_report();
        Ok(StepRecord {
            iteration: self.iteration,
            loss,
            wall_ms: (self.runtime.elapsed() - t0).as_secs_f64() * 1e3,
            bytes_halo: after.total_bytes(CollectiveKind::AllToAll) - before.total_bytes(CollectiveKind::AllToAll),
            bytes_allreduce: after.total_bytes(CollectiveKind::AllReduce)
                - before.total_bytes(CollectiveKind::AllReduce),
            seed: self.train.seed,
        })
    }

    /// Runs the configured number of iterations.
    pub fn run(&mut self) -> Result<Vec<StepRecord>> {
        (0..self.train.iterations).map(|_| self.step()).collect()
    }

    /// Checks that every replica is bitwise equal to rank 0's.
    pub fn audit(&self) -> Result<()> {
        let reference = self.replicas[0].named_tensors();
        for (r, p) in self.replicas.iter().enumerate().skip(1) {
            for ((name, a), (_, b)) in reference.iter().zip(p.named_tensors()) {
                let same = a.data.len() == b.data.len()
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits());
                if !same {
                    return Err(Error::Divergence {
                        step: self.iteration,
                        rank: r,
                        tensor: name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    #[doc(hidden)]
    pub fn replica_mut(&mut self, rank: usize) -> &mut ModelParams {
        &mut self.replicas[rank]
    }
}
