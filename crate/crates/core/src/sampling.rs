//! Uniform cohort sampling without replacement and the closed-form second
//! moment of a sampled cohort mean.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::stream::Stream;

/// Clients participating in one round, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub members: Vec<usize>,
    pub round: usize,
}

impl Cohort {
    pub fn full(n_clients: usize, round: usize) -> Self {
        Self {
            members: (0..n_clients).collect(),
            round,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, client: usize) -> bool {
        self.members.binary_search(&client).is_ok()
    }
}

/// Draws `cohort_size` distinct clients out of `n_clients`, each subset with
/// probability `1 / C(N, S)`, via a partial Fisher-Yates shuffle.
///
/// Full participation returns `0..N` without consuming the stream.
pub fn sample_cohort(n_clients: usize, cohort_size: usize, round: usize, rng: &mut Stream) -> Result<Cohort> {
    if cohort_size == 0 || cohort_size > n_clients {
        return Err(invalid(
            "cohort_size",
            format!("must be in [1, {n_clients}], got {cohort_size}"),
        ));
    }
    if cohort_size == n_clients {
        return Ok(Cohort::full(n_clients, round));
    }
    let mut idx: Vec<usize> = (0..n_clients).collect();
    for k in 0..cohort_size {
        let j = rng.random_range(k..n_clients);
        idx.swap(k, j);
    }
    let mut members = idx[..cohort_size].to_vec();
    members.sort_unstable();
    Ok(Cohort { members, round })
}

/// `E |(1/S) sum_{i in S} v_i|^2` over uniform size-`S` subsets:
///
/// `|v_bar|^2 + (N - S) / (S (N - 1)) * (1/N) sum_i |v_i - v_bar|^2`.
///
/// `S = N` (including `N = 1`) returns `|v_bar|^2`.
pub fn subset_mean_second_moment(vectors: &[Vec<f64>], cohort_size: usize) -> Result<f64> {
    let n = vectors.len();
    if n == 0 {
        return Err(invalid("vectors", "need at least one vector"));
    }
    if cohort_size == 0 || cohort_size > n {
        return Err(invalid(
            "cohort_size",
            format!("must be in [1, {n}], got {cohort_size}"),
        ));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    let mean = linalg::mean_of(vectors, dim);
    let mean_sq = linalg::norm_sq(&mean);
    if cohort_size == n {
        return Ok(mean_sq);
    }
    let spread = vectors.iter().fold(0.0, |acc, v| acc + linalg::dist_sq(v, &mean)) / n as f64;
    let (n, s) = (n as f64, cohort_size as f64);
    Ok(mean_sq + (n - s) / (s * (n - 1.0)) * spread)
}
