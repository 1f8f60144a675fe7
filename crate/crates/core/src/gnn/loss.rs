use crate::comm::RankRuntime;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

/// Mean squared error over all entries.
pub fn standard_loss(y: &Tensor2D, target: &Tensor2D) -> Result<f64> {
    if y.shape() != target.shape() {
        return Err(Error::shape(
            "standard_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", y.shape()),
        ));
    }
    if y.is_empty() {
        return Err(Error::shape("standard_loss", "non-empty output", "0 entries"));
    }
    let s: f64 = y.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / y.len() as f64)
}

/// Degree-weighted partial sums `(S_r, N_r)` of one rank.
fn partial_sums(y: &Tensor2D, target: &Tensor2D, degree: &[u32]) -> Result<(f64, f64)> {
    if y.shape() != target.shape() {
        return Err(Error::shape(
            "consistent_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", y.shape()),
        ));
    }
    if degree.len() != y.rows {
        return Err(Error::Integrity(format!(
            "node degree array has {} entries for {} output rows",
            degree.len(),
            y.rows
        )));
    }
    let (mut s, mut n) = (0.0, 0.0);
    for (i, &d) in degree.iter().enumerate() {
        if d == 0 {
            return Err(Error::Integrity(format!("node {i} has degree 0")));
        }
        let w = 1.0 / d as f64;
        for (a, b) in y.row(i).iter().zip(target.row(i)) {
            s += w * (a - b) * (a - b);
        }
        n += w;
    }
    Ok((s, n))
}

fn reduce(
    runtime: &mut RankRuntime,
    ys: &[Tensor2D],
    targets: &[Tensor2D],
    degrees: &[&[u32]],
) -> Result<(f64, f64, usize)> {
    let nr = runtime.num_ranks();
    if ys.len() != nr || targets.len() != nr || degrees.len() != nr {
        return Err(Error::Collective(format!(
            "consistent loss needs one output, target and degree array per rank ({nr})"
        )));
    }
    let parts = (0..nr)
        .map(|r| {
            let (s, n) = partial_sums(&ys[r], &targets[r], degrees[r])?;
            Tensor2D::from_vec(1, 2, vec![s, n])
        })
        .collect::<Result<Vec<_>>>()?;
    let total = runtime.all_reduce_sum(parts)?.swap_remove(0);
    Ok((total.data[0], total.data[1], ys[0].cols))
}

/// Degree-weighted MSE whose value does not depend on the partitioning.
/// Every rank obtains the same scalar.
pub fn consistent_loss(
    runtime: &mut RankRuntime,
    ys: &[Tensor2D],
    targets: &[Tensor2D],
    degrees: &[&[u32]],
) -> Result<f64> {
    let (s, n, f) = reduce(runtime, ys, targets, degrees)?;
    Ok(s / (n * f as f64))
}

/// [`consistent_loss`] plus the adjoint of every rank's outputs. Each rank
/// seeds its replica of the loss with 1; the adjoint of the AllReduce sums
/// those seeds, so per-rank adjoints carry a factor `R` that gradient
/// averaging removes.
pub fn consistent_loss_with_grad(
    runtime: &mut RankRuntime,
    ys: &[Tensor2D],
    targets: &[Tensor2D],
    degrees: &[&[u32]],
) -> Result<(f64, Vec<Tensor2D>)> {
    let (s, n, f) = reduce(runtime, ys, targets, degrees)?;
    let denom = n * f as f64;
    let loss = s / denom;
    let seeds = vec![1.0 / denom; runtime.num_ranks()];
    let ds = runtime.all_reduce_scalar(&seeds)?;
    let grads = ys
        .iter()
        .zip(targets)
        .zip(degrees)
        .zip(ds)
        .map(|(((y, t), deg), ds_r)| {
            let mut g = Tensor2D::zeros(y.rows, y.cols);
            for (i, &d) in deg.iter().enumerate() {
                let w = ds_r / d as f64;
                for ((dst, a), b) in g.row_mut(i).iter_mut().zip(y.row(i)).zip(t.row(i)) {
                    *dst = 2.0 * w * (a - b);
                }
            }
            g
        })
        .collect();
    Ok((loss, grads))
}
