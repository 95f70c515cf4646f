//! Descending rank functions and the blackbox rank gradient.
//!
//! A rank of 1 marks the largest entry. Ranking is treated as the
//! combinatorial solver `argmin_π a·π` over permutations of `1..=n`, and
//! its gradient is the finite difference of two solves: one on `a`, one on
//! `a` perturbed along the incoming gradient.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How equal entries are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// `rank_i = 1 + |{j : a_j > a_i}|`; ties share a rank.
    #[default]
    Competition,
    /// A permutation of `1..=n`; ties ordered by ascending index.
    Permutation,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "competition" => Ok(TiePolicy::Competition),
            "permutation" => Ok(TiePolicy::Permutation),
            other => Err(Error::validation(
                "tie_policy",
                format!("unknown policy `{other}`; allowed: competition, permutation"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankVector {
    pub ranks: Vec<u32>,
    pub policy: TiePolicy,
}

impl RankVector {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.ranks.iter().map(|&r| r as f64).collect()
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.ranks.len()];
        self.ranks.iter().all(|&r| {
            let i = r as usize;
            (1..=seen.len()).contains(&i) && !std::mem::replace(&mut seen[i - 1], true)
        })
    }
}

/// Descending rank of every entry of `a` under `policy`.
pub fn rank(a: &[f64], policy: TiePolicy) -> Result<RankVector> {
    rank_with_tolerance(a, policy, 0.0)
}

/// As [`rank`], but entries closer than `tol` to their neighbour in sorted
/// order are treated as tied (the merge chains along the sorted sequence).
/// With `tol = 0` ties are exact equality.
pub fn rank_with_tolerance(a: &[f64], policy: TiePolicy, tol: f64) -> Result<RankVector> {
    if a.is_empty() {
        return Err(Error::domain("rank: empty input"));
    }
    if let Some(i) = a.iter().position(|x| !x.is_finite()) {
        return Err(Error::domain(format!(
            "rank: non-finite entry at index {i}"
        )));
    }
    let mut order: Vec<usize> = (0..a.len()).collect();
    // stable sort keeps ascending index among equals
    order.sort_by(|&i, &j| a[j].total_cmp(&a[i]));

    let mut ranks = vec![0u32; a.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && a[order[end - 1]] - a[order[end]] <= tol {
            end += 1;
        }
        let group = &mut order[start..end];
        match policy {
            TiePolicy::Competition => {
                for &i in group.iter() {
                    ranks[i] = start as u32 + 1;
                }
            }
            TiePolicy::Permutation => {
                group.sort_unstable();
                for (k, &i) in group.iter().enumerate() {
                    ranks[i] = (start + k) as u32 + 1;
                }
            }
        }
        start = end;
    }
    Ok(RankVector { ranks, policy })
}

/// Largest input accepted by [`rank_bruteforce`].
pub const BRUTEFORCE_MAX_LEN: usize = 8;

/// Exhaustive `argmin_π a·π` over all permutations of `1..=n`.
///
/// Among tied minimizers the lexicographically smallest permutation wins.
/// Returns the minimizer and the minimal objective. Intended as a test
/// oracle for [`rank`].
pub fn rank_bruteforce(a: &[f64]) -> Result<(RankVector, f64)> {
    let n = a.len();
    if n == 0 {
        return Err(Error::domain("rank_bruteforce: empty input"));
    }
    if n > BRUTEFORCE_MAX_LEN {
        return Err(Error::Size(format!(
            "rank_bruteforce: n = {n} exceeds {BRUTEFORCE_MAX_LEN}"
        )));
    }
    let mut best: Option<(Vec<u32>, f64)> = None;
    // itertools yields permutations in lexicographic order, so a strict `<`
    // keeps the lexicographically smallest among ties.
    for perm in (1..=n as u32).permutations(n) {
        let obj: f64 = a.iter().zip(&perm).map(|(x, &p)| x * p as f64).sum();
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((perm, obj));
        }
    }
    let (ranks, obj) = best.expect("n >= 1 yields at least one permutation");
    Ok((
        RankVector {
            ranks,
            policy: TiePolicy::Permutation,
        },
        obj,
    ))
}

/// Surrogate gradient of a loss through the rank function.
///
/// `upstream` is `∂L/∂rank(a)`. With `a_λ = a + λ·upstream`, returns
/// `−(rank(a) − rank(a_λ)) / λ`, both ranks taken under `policy`.
pub fn blackbox_rank_grad(
    a: &[f64],
    upstream: &[f64],
    lambda: f64,
    policy: TiePolicy,
) -> Result<Vec<f64>> {
    blackbox_rank_grad_with_tolerance(a, upstream, lambda, policy, 0.0)
}

/// [`blackbox_rank_grad`] with both solves done by [`rank_with_tolerance`].
pub fn blackbox_rank_grad_with_tolerance(
    a: &[f64],
    upstream: &[f64],
    lambda: f64,
    policy: TiePolicy,
    tol: f64,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!(
            "blackbox_rank_grad: lambda must be positive and finite, got {lambda}"
        )));
    }
    if upstream.len() != a.len() {
        return Err(Error::shape("blackbox_rank_grad", a.len(), upstream.len()));
    }
    let perturbed: Vec<f64> = a
        .iter()
        .zip(upstream)
        .map(|(x, g)| x + lambda * g)
        .collect();
    let base = rank_with_tolerance(a, policy, tol)?;
    let moved = rank_with_tolerance(&perturbed, policy, tol)?;
    Ok(base
        .ranks
        .iter()
        .zip(&moved.ranks)
        .map(|(&r, &rl)| -(r as f64 - rl as f64) / lambda)
        .collect())
}
