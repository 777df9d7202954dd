use rayon::prelude::*;

use super::Objective;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Curvature block `(Y, SᵀY)` assembled from per-shard Hessian products.
///
/// Each shard `i` evaluates `Y_i = ∇²F_i(w)·S` and `SᵀY_i` over its own
/// samples; shards run in parallel. The partial results are combined
/// sequentially in ascending shard order with weights `|shard_i| / N`, so the
/// output is reproducible bit for bit. `active` is the sample set the shards
/// must partition (`None` means all samples).
pub fn partitioned_hess_block<O: Objective + ?Sized>(
    objective: &O,
    w: &[f64],
    s: &DenseMatrix,
    shards: &[Vec<usize>],
    active: Option<&[usize]>,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = objective.num_samples();
    if shards.is_empty() {
        return Err(Error::InvalidShards("no shards".into()));
    }
    let mut expected = vec![false; n];
    let total = match active {
        Some(active) => {
            for &i in active {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, n });
                }
                expected[i] = true;
            }
            active.len()
        }
        None => {
            expected.iter_mut().for_each(|e| *e = true);
            n
        }
    };
    let mut seen = vec![false; n];
    for (k, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::InvalidShards(format!("shard {k} is empty")));
        }
        for &i in shard {
            if i >= n || !expected[i] {
                return Err(Error::InvalidShards(format!("shard {k}: sample {i} is not in the active set")));
            }
            if seen[i] {
                return Err(Error::InvalidShards(format!("sample {i} appears in more than one shard")));
            }
            seen[i] = true;
        }
    }
    let covered: usize = shards.iter().map(Vec::len).sum();
    if covered != total {
        return Err(Error::InvalidShards(format!("shards cover {covered} of {total} samples")));
    }

    let partials: Vec<Result<(DenseMatrix, DenseMatrix)>> = shards
        .par_iter()
        .map(|shard| {
            let mut sorted = shard.clone();
            sorted.sort_unstable();
            let y = objective.hess_mat(w, s, Some(&sorted))?;
            let sty = s.t_matmul(&y);
            Ok((y, sty))
        })
        .collect();

    let mut acc: Option<(DenseMatrix, DenseMatrix)> = None;
    for (shard, part) in shards.iter().zip(partials) {
        let (y, sty) = part?;
        let weight = shard.len() as f64 / total as f64;
        acc = Some(match acc {
            None => (y.scaled(weight), sty.scaled(weight)),
            Some((ya, sa)) => (ya.add(&y.scaled(weight)), sa.add(&sty.scaled(weight))),
        });
    }
    Ok(acc.expect("at least one shard"))
}
