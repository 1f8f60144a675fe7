//! In-process simulation of `R` ranks with deterministic collectives.
//!
//! Ranks are driven in supersteps: every collective receives one contribution
//! per rank and validates that all ranks issued the same kind of call before
//! anything is exchanged. Reductions always sum in ascending rank order, so
//! repeated runs are bitwise reproducible.
//!
//! Each rank also carries a simulated clock. Rank-local compute is charged to
//! the rank that ran it; a collective first synchronizes all clocks to the
//! slowest rank and then charges its own copy time.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RankGraph;
use crate::nn::Tensor2D;

pub const BYTES_PER_VALUE: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExchangeMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "a2a")]
    A2A,
    #[serde(rename = "na2a")]
    NeighborA2A,
}

impl ExchangeMode {
    pub const ALL: [ExchangeMode; 3] = [ExchangeMode::None, ExchangeMode::A2A, ExchangeMode::NeighborA2A];

    pub fn is_consistent(self) -> bool {
        self != ExchangeMode::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExchangeMode::None => "none",
            ExchangeMode::A2A => "a2a",
            ExchangeMode::NeighborA2A => "na2a",
        }
    }
}

impl fmt::Display for ExchangeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExchangeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ExchangeMode::None),
            "a2a" => Ok(ExchangeMode::A2A),
            "na2a" | "n-a2a" => Ok(ExchangeMode::NeighborA2A),
            other => Err(Error::Config(format!("unknown exchange mode `{other}` (none|a2a|na2a)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CollectiveKind {
    AllReduce,
    AllToAll,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 2] = [CollectiveKind::AllReduce, CollectiveKind::AllToAll];

    fn index(self) -> usize {
        match self {
            CollectiveKind::AllReduce => 0,
            CollectiveKind::AllToAll => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CollectiveKind::AllReduce => "all_reduce",
            CollectiveKind::AllToAll => "all_to_all",
        }
    }
}

/// One rank's contribution to a collective.
#[derive(Debug, Clone)]
pub enum Call {
    AllReduce(Tensor2D),
    AllToAll {
        mode: ExchangeMode,
        /// One buffer per destination rank.
        sends: Vec<Vec<f64>>,
        /// Expected payload length from each source rank.
        recv_sizes: Vec<usize>,
    },
}

impl Call {
    pub fn kind(&self) -> CollectiveKind {
        match self {
            Call::AllReduce(_) => CollectiveKind::AllReduce,
            Call::AllToAll { .. } => CollectiveKind::AllToAll,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Reply {
    AllReduce(Tensor2D),
    /// One buffer per source rank, trimmed to the expected size.
    AllToAll(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindStats {
    pub calls: u64,
    pub bytes: u64,
}

/// Snapshot of the runtime's counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommReport {
    pub per_rank: Vec<[KindStats; 2]>,
}

impl CommReport {
    pub fn get(&self, rank: usize, kind: CollectiveKind) -> KindStats {
        self.per_rank[rank][kind.index()]
    }

    pub fn total_bytes(&self, kind: CollectiveKind) -> u64 {
        self.per_rank.iter().map(|s| s[kind.index()].bytes).sum()
    }

    pub fn total_calls(&self, kind: CollectiveKind) -> u64 {
        self.per_rank.iter().map(|s| s[kind.index()].calls).sum()
    }

    /// CSV with columns `rank,collective,calls,bytes`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["rank", "collective", "calls", "bytes"])?;
        for (r, stats) in self.per_rank.iter().enumerate() {
            for kind in CollectiveKind::ALL {
                let s = stats[kind.index()];
                out.write_record([
                    r.to_string(),
                    kind.as_str().to_string(),
                    s.calls.to_string(),
                    s.bytes.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RankRuntime {
    num_ranks: usize,
    step: u64,
    counters: Vec<[KindStats; 2]>,
    clocks: Vec<Duration>,
}

impl RankRuntime {
    pub fn new(num_ranks: usize) -> Result<Self> {
        if num_ranks == 0 {
            return Err(Error::Config("runtime needs at least one rank".into()));
        }
        Ok(Self {
            num_ranks,
            step: 0,
            counters: vec![[KindStats::default(); 2]; num_ranks],
            clocks: vec![Duration::ZERO; num_ranks],
        })
    }

    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    /// Number of collectives completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn comm_report(&self) -> CommReport {
        CommReport {
            per_rank: self.counters.clone(),
        }
    }

    pub fn reset_counters(&mut self) {
        self.counters.iter_mut().for_each(|c| *c = [KindStats::default(); 2]);
    }

    /// Simulated elapsed time: the slowest rank's clock.
    pub fn elapsed(&self) -> Duration {
        self.clocks.iter().copied().max().unwrap_or_default()
    }

    pub fn reset_clock(&mut self) {
        self.clocks.iter_mut().for_each(|c| *c = Duration::ZERO);
    }

    pub fn charge(&mut self, rank: usize, d: Duration) {
        self.clocks[rank] += d;
    }

    fn synchronize(&mut self, collective_time: Duration) {
        let t = self.elapsed() + collective_time;
        self.clocks.iter_mut().for_each(|c| *c = t);
    }

    /// Runs `f` once per rank on rank-confined data, charging each rank's
    /// clock with its own compute time.
    pub fn run_ranks<T, R, F>(&mut self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        assert_eq!(items.len(), self.num_ranks, "one item per rank");
        let timed: Vec<(R, Duration)> = items
            .par_iter_mut()
            .enumerate()
            .map(|(r, item)| {
                let t0 = Instant::now();
                let out = f(r, item);
                (out, t0.elapsed())
            })
            .collect();
        timed
            .into_iter()
            .enumerate()
            .map(|(r, (out, d))| {
                self.charge(r, d);
                out
            })
            .collect()
    }

    /// Like [`run_ranks`](Self::run_ranks) for phases that only read shared
    /// per-rank data and return their results.
    pub fn par_map<R, F>(&mut self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        let timed: Vec<(R, Duration)> = (0..self.num_ranks)
            .into_par_iter()
            .map(|r| {
                let t0 = Instant::now();
                let out = f(r);
                (out, t0.elapsed())
            })
            .collect();
        timed
            .into_iter()
            .enumerate()
            .map(|(r, (out, d))| {
                self.charge(r, d);
                out
            })
            .collect()
    }

    /// Executes one collective superstep. Every rank must contribute a call
    /// of the same kind; anything else is reported instead of hanging.
    pub fn collective(&mut self, calls: Vec<Call>) -> Result<Vec<Reply>> {
        if calls.len() != self.num_ranks {
            return Err(Error::Collective(format!(
                "superstep {} received {} contributions for {} ranks",
                self.step,
                calls.len(),
                self.num_ranks
            )));
        }
        let kind = calls[0].kind();
        if let Some(r) = calls.iter().position(|c| c.kind() != kind) {
            return Err(Error::Collective(format!(
                "superstep {}: rank 0 called {} but rank {r} called {}",
                self.step,
                kind.as_str(),
                calls[r].kind().as_str()
            )));
        }
        let t0 = Instant::now();
        let replies = match kind {
            CollectiveKind::AllReduce => self.do_all_reduce(calls)?,
            CollectiveKind::AllToAll => self.do_all_to_all(calls)?,
        };
        self.synchronize(t0.elapsed() / self.num_ranks as u32);
        self.step += 1;
        Ok(replies)
    }

    fn do_all_reduce(&mut self, calls: Vec<Call>) -> Result<Vec<Reply>> {
        let values: Vec<Tensor2D> = calls
            .into_iter()
            .map(|c| match c {
                Call::AllReduce(t) => t,
                Call::AllToAll { .. } => unreachable!("kind checked"),
            })
            .collect();
        let shape = values[0].shape();
        if let Some(r) = values.iter().position(|v| v.shape() != shape) {
            return Err(Error::Collective(format!(
                "all_reduce shape mismatch: rank 0 has {:?}, rank {r} has {:?}",
                shape,
                values[r].shape()
            )));
        }
        // gather -> ordered sum -> broadcast
        let mut sum = values[0].clone();
        for v in &values[1..] {
            for (a, b) in sum.data.iter_mut().zip(&v.data) {
                *a += b;
            }
        }
        let bytes = sum.len() as u64 * BYTES_PER_VALUE;
        for c in self.counters.iter_mut() {
            let s = &mut c[CollectiveKind::AllReduce.index()];
            s.calls += 1;
            s.bytes += bytes;
        }
        Ok((0..self.num_ranks).map(|_| Reply::AllReduce(sum.clone())).collect())
    }

    fn do_all_to_all(&mut self, calls: Vec<Call>) -> Result<Vec<Reply>> {
        let nr = self.num_ranks;
        let mut modes = Vec::with_capacity(nr);
        let mut sends = Vec::with_capacity(nr);
        let mut recv_sizes = Vec::with_capacity(nr);
        for c in calls {
            match c {
                Call::AllToAll {
                    mode,
                    sends: s,
                    recv_sizes: rs,
                } => {
                    modes.push(mode);
                    sends.push(s);
                    recv_sizes.push(rs);
                }
                Call::AllReduce(_) => unreachable!("kind checked"),
            }
        }
        let mode = modes[0];
        if modes.iter().any(|&m| m != mode) {
            return Err(Error::Collective("ranks disagree on the exchange mode".into()));
        }
        if mode == ExchangeMode::None {
            return Err(Error::Collective(
                "all_to_all invoked with exchange mode none; the caller must skip the exchange".into(),
            ));
        }
        for r in 0..nr {
            if sends[r].len() != nr || recv_sizes[r].len() != nr {
                return Err(Error::Collective(format!(
                    "rank {r} supplied {} send buffers and {} receive sizes for {nr} ranks",
                    sends[r].len(),
                    recv_sizes[r].len()
                )));
            }
        }
        for dst in 0..nr {
            for src in 0..nr {
                let (sent, expected) = (sends[src][dst].len(), recv_sizes[dst][src]);
                if sent != expected {
                    return Err(Error::Collective(format!(
                        "rank {src} sends {sent} values to rank {dst}, which expects {expected}"
                    )));
                }
            }
        }

        let idx = CollectiveKind::AllToAll.index();
        let mut recv: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(nr); nr];
        match mode {
            ExchangeMode::A2A => {
                // Every pair moves a buffer of the global maximum size.
                let pad = sends.iter().flatten().map(Vec::len).max().unwrap_or(0);
                let mut padded: Vec<Vec<Vec<f64>>> = sends
                    .into_iter()
                    .map(|row| {
                        row.into_iter()
                            .map(|mut b| {
                                b.resize(pad, 0.0);
                                b
                            })
                            .collect()
                    })
                    .collect();
                for c in self.counters.iter_mut() {
                    c[idx].calls += 1;
                    c[idx].bytes += (nr * pad) as u64 * BYTES_PER_VALUE;
                }
                for (dst, rbufs) in recv.iter_mut().enumerate() {
                    for src in 0..nr {
                        let mut b = std::mem::take(&mut padded[src][dst]);
                        b.truncate(recv_sizes[dst][src]);
                        rbufs.push(b);
                    }
                }
            }
            ExchangeMode::NeighborA2A => {
                for (src, c) in self.counters.iter_mut().enumerate() {
                    c[idx].calls += 1;
                    c[idx].bytes += sends[src].iter().map(|b| b.len() as u64).sum::<u64>() * BYTES_PER_VALUE;
                }
                for (dst, rbufs) in recv.iter_mut().enumerate() {
                    for row in sends.iter_mut() {
                        rbufs.push(std::mem::take(&mut row[dst]));
                    }
                }
            }
            ExchangeMode::None => unreachable!(),
        }
        Ok(recv.into_iter().map(Reply::AllToAll).collect())
    }

    /// Sum over ranks, delivered to every rank. Its adjoint is itself.
    pub fn all_reduce_sum(&mut self, values: Vec<Tensor2D>) -> Result<Vec<Tensor2D>> {
        let replies = self.collective(values.into_iter().map(Call::AllReduce).collect())?;
        Ok(replies
            .into_iter()
            .map(|r| match r {
                Reply::AllReduce(t) => t,
                Reply::AllToAll(_) => unreachable!(),
            })
            .collect())
    }

    pub fn all_reduce_scalar(&mut self, values: &[f64]) -> Result<Vec<f64>> {
        let t = values
            .iter()
            .map(|&v| Tensor2D::from_vec(1, 1, vec![v]))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.all_reduce_sum(t)?.into_iter().map(|t| t.data[0]).collect())
    }

    /// `recv[r][s]` on rank `r` is `sends[s][r]`. The adjoint is the same
    /// exchange with sources and destinations swapped.
    pub fn all_to_all(
        &mut self,
        mode: ExchangeMode,
        sends: Vec<Vec<Vec<f64>>>,
        recv_sizes: Vec<Vec<usize>>,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        if sends.len() != recv_sizes.len() {
            return Err(Error::Collective("send and receive lists differ in rank count".into()));
        }
        let calls = sends
            .into_iter()
            .zip(recv_sizes)
            .map(|(sends, recv_sizes)| Call::AllToAll {
                mode,
                sends,
                recv_sizes,
            })
            .collect();
        Ok(self
            .collective(calls)?
            .into_iter()
            .map(|r| match r {
                Reply::AllToAll(b) => b,
                Reply::AllReduce(_) => unreachable!(),
            })
            .collect())
    }
}

/// Overwrites halo rows with the current values of their source rows on the
/// neighboring ranks. Local rows are untouched.
pub fn halo_exchange(
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
    ranks: &[RankGraph],
    values: &mut [Tensor2D],
) -> Result<()> {
    check_exchange_args(runtime, mode, ranks, values)?;
    let nr = ranks.len();
    let mut sends = vec![vec![Vec::new(); nr]; nr];
    let mut recv_sizes = vec![vec![0; nr]; nr];
    for (r, rg) in ranks.iter().enumerate() {
        let width = values[r].cols;
        for (k, &s) in rg.halo.neighbors.iter().enumerate() {
            let mut buf = Vec::with_capacity(rg.halo.send_masks[k].len() * width);
            for &row in &rg.halo.send_masks[k] {
                buf.extend_from_slice(values[r].row(row));
            }
            sends[r][s] = buf;
            recv_sizes[r][s] = rg.halo.recv_masks[k].len() * width;
        }
    }
    let recv = runtime.all_to_all(mode, sends, recv_sizes)?;
    for (r, rg) in ranks.iter().enumerate() {
        let width = values[r].cols;
        for (k, &s) in rg.halo.neighbors.iter().enumerate() {
            let buf = &recv[r][s];
            for (n, &row) in rg.halo.recv_masks[k].iter().enumerate() {
                values[r].row_mut(row).copy_from_slice(&buf[n * width..(n + 1) * width]);
            }
        }
    }
    Ok(())
}

/// Reverse pass of [`halo_exchange`]: halo-row adjoints travel back to the
/// source ranks and accumulate onto the matching local rows (ascending
/// neighbor order). Halo-row adjoints are cleared.
pub fn halo_exchange_adjoint(
    runtime: &mut RankRuntime,
    mode: ExchangeMode,
    ranks: &[RankGraph],
    adjoints: &mut [Tensor2D],
) -> Result<()> {
    check_exchange_args(runtime, mode, ranks, adjoints)?;
    let nr = ranks.len();
    let mut sends = vec![vec![Vec::new(); nr]; nr];
    let mut recv_sizes = vec![vec![0; nr]; nr];
    for (r, rg) in ranks.iter().enumerate() {
        let width = adjoints[r].cols;
        for (k, &s) in rg.halo.neighbors.iter().enumerate() {
            let mut buf = Vec::with_capacity(rg.halo.recv_masks[k].len() * width);
            for &row in &rg.halo.recv_masks[k] {
                buf.extend_from_slice(adjoints[r].row(row));
                adjoints[r].row_mut(row).fill(0.0);
            }
            sends[r][s] = buf;
            recv_sizes[r][s] = rg.halo.send_masks[k].len() * width;
        }
    }
    let recv = runtime.all_to_all(mode, sends, recv_sizes)?;
    for (r, rg) in ranks.iter().enumerate() {
        let width = adjoints[r].cols;
        for (k, &s) in rg.halo.neighbors.iter().enumerate() {
            let buf = &recv[r][s];
            for (n, &row) in rg.halo.send_masks[k].iter().enumerate() {
                for (a, b) in adjoints[r].row_mut(row).iter_mut().zip(&buf[n * width..(n + 1) * width]) {
                    *a += b;
                }
            }
        }
    }
    Ok(())
}

fn check_exchange_args(
    runtime: &RankRuntime,
    mode: ExchangeMode,
    ranks: &[RankGraph],
    values: &[Tensor2D],
) -> Result<()> {
    if mode == ExchangeMode::None {
        return Err(Error::Collective(
            "halo exchange invoked with exchange mode none; the caller must skip it".into(),
        ));
    }
    if ranks.len() != runtime.num_ranks() || values.len() != ranks.len() {
        return Err(Error::Collective(format!(
            "halo exchange over {} graphs and {} value blocks on a {}-rank runtime",
            ranks.len(),
            values.len(),
            runtime.num_ranks()
        )));
    }
    for (r, (rg, v)) in ranks.iter().zip(values).enumerate() {
        if v.rows != rg.graph.num_rows() {
            return Err(Error::shape(
                "halo_exchange",
                format!("{} rows on rank {r}", rg.graph.num_rows()),
                v.rows,
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_reduce_sums_in_rank_order() {
        let mut rt = RankRuntime::new(4).unwrap();
        assert_eq!(rt.all_reduce_scalar(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![10.0; 4]);
        let mut one = RankRuntime::new(1).unwrap();
        assert_eq!(one.all_reduce_scalar(&[2.5]).unwrap(), vec![2.5]);
    }

    #[test]
    fn all_reduce_shape_mismatch() {
        let mut rt = RankRuntime::new(2).unwrap();
        let err = rt
            .all_reduce_sum(vec![Tensor2D::zeros(1, 2), Tensor2D::zeros(2, 1)])
            .unwrap_err();
        assert!(matches!(err, Error::Collective(_)));
    }

    #[test]
    fn mismatched_supersteps_detected() {
        let mut rt = RankRuntime::new(2).unwrap();
        let calls = vec![
            Call::AllReduce(Tensor2D::zeros(1, 1)),
            Call::AllToAll {
                mode: ExchangeMode::NeighborA2A,
                sends: vec![vec![], vec![]],
                recv_sizes: vec![0, 0],
            },
        ];
        let err = rt.collective(calls).unwrap_err();
        assert!(err.to_string().contains("rank 1 called all_to_all"), "{err}");
        assert_eq!(rt.step(), 0);
    }

    #[test]
    fn two_rank_swap() {
        let mut rt = RankRuntime::new(2).unwrap();
        let sends = vec![vec![vec![], vec![0.0]], vec![vec![1.0], vec![]]];
        let sizes = vec![vec![0, 1], vec![1, 0]];
        let recv = rt.all_to_all(ExchangeMode::NeighborA2A, sends, sizes).unwrap();
        assert_eq!(recv[0][1], vec![1.0]);
        assert_eq!(recv[1][0], vec![0.0]);
    }

    #[test]
    fn neighbor_mode_without_neighbors_moves_nothing() {
        let mut rt = RankRuntime::new(3).unwrap();
        let sends = vec![vec![Vec::new(); 3]; 3];
        rt.all_to_all(ExchangeMode::NeighborA2A, sends, vec![vec![0; 3]; 3])
            .unwrap();
        assert_eq!(rt.comm_report().total_bytes(CollectiveKind::AllToAll), 0);
        assert_eq!(rt.comm_report().get(0, CollectiveKind::AllToAll).calls, 1);
    }

    #[test]
    fn size_disagreement_rejected() {
        let mut rt = RankRuntime::new(2).unwrap();
        let sends = vec![vec![vec![], vec![1.0, 2.0]], vec![vec![], vec![]]];
        let sizes = vec![vec![0, 0], vec![1, 0]];
        assert!(rt.all_to_all(ExchangeMode::A2A, sends, sizes).is_err());
    }

    #[test]
    fn none_mode_is_a_contract_violation() {
        let mut rt = RankRuntime::new(1).unwrap();
        assert!(rt
            .all_to_all(ExchangeMode::None, vec![vec![vec![]]], vec![vec![0]])
            .is_err());
    }

    #[test]
    fn fresh_report_is_zero_and_resettable() {
        let mut rt = RankRuntime::new(2).unwrap();
        let rep = rt.comm_report();
        assert!(rep.per_rank.iter().flatten().all(|s| *s == KindStats::default()));
        rt.all_reduce_scalar(&[1.0, 1.0]).unwrap();
        for r in 0..2 {
            let s = rt.comm_report().get(r, CollectiveKind::AllReduce);
            assert_eq!((s.calls, s.bytes), (1, 8));
        }
        rt.reset_counters();
        assert_eq!(rt.comm_report(), rep);
    }

    #[test]
    fn csv_export() {
        let mut rt = RankRuntime::new(2).unwrap();
        rt.all_reduce_scalar(&[1.0, 1.0]).unwrap();
        let mut out = Vec::new();
        rt.comm_report().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "rank,collective,calls,bytes\n0,all_reduce,1,8\n0,all_to_all,0,0\n1,all_reduce,1,8\n1,all_to_all,0,0\n"
        );
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("na2a".parse::<ExchangeMode>().unwrap(), ExchangeMode::NeighborA2A);
        assert_eq!("A2A".parse::<ExchangeMode>().unwrap(), ExchangeMode::A2A);
        assert!("ring".parse::<ExchangeMode>().is_err());
    }
}
