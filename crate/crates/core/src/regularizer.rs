//! Ranking-similarity regularizers.
//!
//! Both regularizers share one kernel: given a set of vectors with ordinal
//! labels, rank each row of the vectors' cosine-similarity matrix and each
//! row of the labels' negative-absolute-distance matrix, then penalize the
//! mean squared difference between the two rank vectors, summed over rows.
//!
//! * W-RankSim feeds the kernel the rows of the output head `W`, one per
//!   class, so every class participates at every step independently of the
//!   batch.
//! * RankSim feeds it the batch's final hidden features, after keeping one
//!   randomly chosen sample per distinct label.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    axpy, cosine_similarity, cosine_similarity_grad, norm, RandomSource, RealMatrix,
};
use crate::ranking::{blackbox_rank_grad_with_tolerance, rank_with_tolerance, TiePolicy};

/// Ordered set of ordinal class codes, `c_1 < c_2 < … < c_|C|`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct OrdinalClassSet {
    labels: Vec<i64>,
}

impl OrdinalClassSet {
    pub fn new(labels: Vec<i64>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::validation("classes", "at least 2 classes required"));
        }
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "classes",
                "labels must be strictly increasing",
            ));
        }
        Ok(Self { labels })
    }

    /// Classes `1..=n`.
    pub fn contiguous(n: usize) -> Result<Self> {
        Self::new((1..=n as i64).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn code(&self, index: usize) -> i64 {
        self.labels[index]
    }

    /// Position of `code` within the set.
    pub fn index_of(&self, code: i64) -> Option<usize> {
        self.labels.binary_search(&code).ok()
    }
}

impl Default for OrdinalClassSet {
    fn default() -> Self {
        Self::contiguous(5).expect("five classes are valid")
    }
}

impl TryFrom<Vec<i64>> for OrdinalClassSet {
    type Error = Error;
    fn try_from(v: Vec<i64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<OrdinalClassSet> for Vec<i64> {
    fn from(c: OrdinalClassSet) -> Self {
        c.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    WeightCosine,
    LabelNegAbs,
    FeatureCosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub s: RealMatrix,
    pub kind: SimilarityKind,
}

fn cosine_matrix<R: AsRef<[f64]>>(vectors: &[R], what: &str) -> Result<RealMatrix> {
    let n = vectors.len();
    for (i, v) in vectors.iter().enumerate() {
        if v.as_ref().iter().all(|x| *x == 0.0) {
            return Err(Error::domain(format!("{what} {i} has zero norm")));
        }
    }
    let mut s = RealMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = 1.0;
        for j in i + 1..n {
            let c = cosine_similarity(vectors[i].as_ref(), vectors[j].as_ref())?;
            s[(i, j)] = c;
            s[(j, i)] = c;
        }
    }
    Ok(s)
}

/// Pairwise cosine similarity of the rows of `w` (one row per class).
pub fn weight_similarity(w: &RealMatrix) -> Result<SimilarityMatrix> {
    let rows: Vec<&[f64]> = w.row_iter().collect();
    Ok(SimilarityMatrix {
        s: cosine_matrix(&rows, "weight row of class index")?,
        kind: SimilarityKind::WeightCosine,
    })
}

fn neg_abs_matrix(codes: &[i64]) -> RealMatrix {
    let n = codes.len();
    let mut s = RealMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = -((codes[i] - codes[j]).abs() as f64);
        }
    }
    s
}

/// `S_{i,j} = −|c_i − c_j|`.
pub fn label_similarity(classes: &OrdinalClassSet) -> SimilarityMatrix {
    SimilarityMatrix {
        s: neg_abs_matrix(classes.labels()),
        kind: SimilarityKind::LabelNegAbs,
    }
}

/// Cosine similarities closer than this are ranked as tied, so that
/// geometrically equal similarities survive floating-point rounding.
pub const SIMILARITY_TIE_TOLERANCE: f64 = 1e-12;

/// Output of the shared rank-similarity kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSimOutput {
    pub loss: f64,
    /// One gradient per input vector, same shapes as the inputs.
    pub grads: Vec<Vec<f64>>,
    /// `∂L/∂S` produced by the rank step, row `i` from row `i`'s term.
    pub grad_sim: RealMatrix,
}

/// Row-wise rank MSE between the cosine matrix of `vectors` and the label
/// matrix of `codes`, with the blackbox gradient chained back to the vectors.
///
/// Every row is ranked in full, diagonal included. Each off-diagonal
/// similarity is reached from its two rows separately and both contributions
/// accumulate into the vectors.
pub fn rank_similarity_kernel<R: AsRef<[f64]>>(
    vectors: &[R],
    codes: &[i64],
    lambda: f64,
    policy: TiePolicy,
) -> Result<RankSimOutput> {
    kernel(vectors, codes, lambda, policy, "vector")
}

fn kernel<R: AsRef<[f64]>>(
    vectors: &[R],
    codes: &[i64],
    lambda: f64,
    policy: TiePolicy,
    what: &str,
) -> Result<RankSimOutput> {
    let n = vectors.len();
    if codes.len() != n {
        return Err(Error::shape("rank_similarity_kernel", n, codes.len()));
    }
    let dim = vectors.first().map(|v| v.as_ref().len()).unwrap_or(0);
    if let Some(i) = vectors.iter().position(|v| v.as_ref().len() != dim) {
        return Err(Error::shape(
            "rank_similarity_kernel",
            dim,
            format!("{} at vector {i}", vectors[i].as_ref().len()),
        ));
    }
    let sim = cosine_matrix(vectors, what)?;
    let target = neg_abs_matrix(codes);

    let mut loss = 0.0;
    // ∂L/∂S accumulated per entry before chaining into the vectors
    let mut grad_sim = RealMatrix::zeros(n, n);
    for i in 0..n {
        let target_rank = rank_with_tolerance(target.row(i), policy, 0.0)?.as_f64();
        let pred_rank = rank_with_tolerance(sim.row(i), policy, SIMILARITY_TIE_TOLERANCE)?.as_f64();
        let sq: f64 = pred_rank
            .iter()
            .zip(&target_rank)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        loss += sq / n as f64;

        let upstream: Vec<f64> = pred_rank
            .iter()
            .zip(&target_rank)
            .map(|(p, t)| 2.0 * (p - t) / n as f64)
            .collect();
        if upstream.iter().all(|u| *u == 0.0) {
            continue;
        }
        let g = blackbox_rank_grad_with_tolerance(
            sim.row(i),
            &upstream,
            lambda,
            policy,
            SIMILARITY_TIE_TOLERANCE,
        )?;
        axpy(1.0, &g, grad_sim.row_mut(i));
    }

    let grads = cosine_chain(vectors, &grad_sim)?;
    Ok(RankSimOutput {
        loss,
        grads,
        grad_sim,
    })
}

/// Chains a fixed `∂L/∂S` through the cosine matrix of `vectors`.
///
/// This is the differentiable half of the kernel; exposed so the chain can be
/// checked against finite differences with the rank step frozen.
pub fn cosine_chain<R: AsRef<[f64]>>(
    vectors: &[R],
    grad_sim: &RealMatrix,
) -> Result<Vec<Vec<f64>>> {
    let n = vectors.len();
    if grad_sim.shape() != (n, n) {
        return Err(Error::shape(
            "cosine_chain",
            format!("{n}x{n}"),
            format!("{:?}", grad_sim.shape()),
        ));
    }
    let dim = vectors.first().map(|v| v.as_ref().len()).unwrap_or(0);
    let mut grads = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let g = grad_sim[(i, j)];
            if i == j || g == 0.0 {
                continue;
            }
            let (gi, gj) = cosine_similarity_grad(vectors[i].as_ref(), vectors[j].as_ref())?;
            axpy(g, &gi, &mut grads[i]);
            axpy(g, &gj, &mut grads[j]);
        }
    }
    Ok(grads)
}

/// W-RankSim loss on the output head and its gradient with respect to `W`.
pub fn w_ranksim_loss(
    w: &RealMatrix,
    classes: &OrdinalClassSet,
    lambda: f64,
    policy: TiePolicy,
) -> Result<(f64, RealMatrix)> {
    if w.rows() != classes.len() {
        return Err(Error::shape("w_ranksim_loss", classes.len(), w.rows()));
    }
    let rows: Vec<&[f64]> = w.row_iter().collect();
    let out = kernel(
        &rows,
        classes.labels(),
        lambda,
        policy,
        "weight row of class index",
    )?;
    let grad = RealMatrix::from_rows(&out.grads)?;
    Ok((out.loss, grad))
}

/// One index per distinct label, chosen uniformly; returned in ascending
/// label order.
pub fn subsample_one_per_label(labels: &[i64], rng: &mut RandomSource) -> Vec<usize> {
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    by_label
        .values()
        .map(|idx| *idx.choose(rng).expect("groups are non-empty"))
        .collect()
}

/// Batch-wise RankSim on final hidden features.
///
/// Gradients are returned for every batch position; positions not retained by
/// the per-label subsampling get zeros. Batches with fewer than two distinct
/// labels are degenerate and contribute nothing. Zero feature vectors are
/// excluded before subsampling.
pub fn ranksim_loss(
    features: &[Vec<f64>],
    labels: &[i64],
    lambda: f64,
    policy: TiePolicy,
    rng: &mut RandomSource,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if features.len() != labels.len() {
        return Err(Error::shape("ranksim_loss", features.len(), labels.len()));
    }
    if features.len() < 2 {
        return Err(Error::domain(
            "ranksim_loss: batch needs at least 2 samples",
        ));
    }
    let dim = features[0].len();
    let mut grads = vec![vec![0.0; dim]; features.len()];
    // zero feature vectors have no direction; they are not eligible
    let eligible: Vec<usize> = (0..features.len())
        .filter(|&i| norm(&features[i]) > 0.0)
        .collect();
    let eligible_labels: Vec<i64> = eligible.iter().map(|&i| labels[i]).collect();
    let keep: Vec<usize> = subsample_one_per_label(&eligible_labels, rng)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    if keep.len() < 2 {
        log::debug!("ranksim_loss: degenerate batch with a single distinct label");
        return Ok((0.0, grads));
    }
    let vectors: Vec<&[f64]> = keep.iter().map(|&i| features[i].as_slice()).collect();
    let codes: Vec<i64> = keep.iter().map(|&i| labels[i]).collect();
    let out = rank_similarity_kernel(&vectors, &codes, lambda, policy)?;
    for (&i, g) in keep.iter().zip(out.grads) {
        grads[i] = g;
    }
    Ok((out.loss, grads))
}

/// `main + gamma · regularizer`.
pub fn total_loss(main: f64, regularizer: f64, gamma: f64) -> f64 {
    main + gamma * regularizer
}

/// Upper bound of the W-RankSim loss under the permutation policy.
///
/// Each row contributes at most the MSE between a permutation of `1..=n` and
/// its reverse, `(n² − 1)/3`; summed over `n` rows.
pub fn w_ranksim_upper_bound(n_classes: usize) -> f64 {
    let n = n_classes as f64;
    n * (n * n - 1.0) / 3.0
}
