//! Classification losses: softmax cross-entropy and the large margin cosine
//! loss (CosFace).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    axpy, cosine_similarity, cosine_similarity_grad, log_sum_exp, softmax, RealMatrix,
};

/// Scale and additive cosine margin of the large margin cosine loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmclConfig {
    pub s: f64,
    pub m: f64,
}

impl Default for LmclConfig {
    fn default() -> Self {
        Self { s: 1.96, m: 0.15 }
    }
}

impl LmclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::validation("lmcl.s", "must be positive and finite"));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return Err(Error::validation(
                "lmcl.m",
                "must be non-negative and finite",
            ));
        }
        Ok(())
    }
}

/// `−log softmax(logits)[target]` and its gradient `softmax − onehot`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::domain(format!(
            "cross_entropy: target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss.max(0.0), grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmclOutput {
    pub loss: f64,
    pub grad_features: Vec<f64>,
    pub grad_w: RealMatrix,
    /// Cosine between the features and each class row.
    pub cosines: Vec<f64>,
}

/// Large margin cosine loss on a single sample.
///
/// Logits are `s·(cos θ_j − m·[j = target])` where `cos θ_j` is the cosine
/// between `features` and row `j` of `w`. The margin only touches the target
/// class.
pub fn lmcl(
    features: &[f64],
    w: &RealMatrix,
    target: usize,
    cfg: &LmclConfig,
) -> Result<LmclOutput> {
    if target >= w.rows() {
        return Err(Error::domain(format!(
            "lmcl: target {target} out of range for {} classes",
            w.rows()
        )));
    }
    if features.len() != w.cols() {
        return Err(Error::shape("lmcl", w.cols(), features.len()));
    }
    let cosines = w
        .row_iter()
        .enumerate()
        .map(|(j, row)| {
            cosine_similarity(features, row).map_err(|e| match e {
                Error::Domain(msg) if msg.contains("second") => {
                    Error::domain(format!("lmcl: weight row {j} has zero norm"))
                }
                Error::Domain(_) => Error::domain("lmcl: features have zero norm"),
                other => other,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let logits: Vec<f64> = cosines
        .iter()
        .enumerate()
        .map(|(j, c)| cfg.s * (c - if j == target { cfg.m } else { 0.0 }))
        .collect();
    let (loss, grad_logits) = cross_entropy(&logits, target)?;

    let mut grad_features = vec![0.0; features.len()];
    let mut grad_w = RealMatrix::zeros(w.rows(), w.cols());
    for (j, g) in grad_logits.iter().enumerate() {
        let g_cos = cfg.s * g;
        let (gf, gw) = cosine_similarity_grad(features, w.row(j))?;
        axpy(g_cos, &gf, &mut grad_features);
        axpy(g_cos, &gw, grad_w.row_mut(j));
    }
    Ok(LmclOutput {
        loss,
        grad_features,
        grad_w,
        cosines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use crate::numeric::seeded_rng;
    use rand::Rng;

    #[test]
    fn cross_entropy_examples() {
        for t in 0..5 {
            let (l, _) = cross_entropy(&[0.0; 5], t).unwrap();
            assert!((l - 5f64.ln()).abs() < 1e-15);
        }
        let (l, _) = cross_entropy(&[10.0, -10.0], 0).unwrap();
        // log(1 + e^-20) ≈ 2.0611536e-9
        assert!((l - (-20f64).exp().ln_1p()).abs() < 1e-15);
        assert!((l - 2.061_153_6e-9).abs() < 1e-15);
        let (_, g) = cross_entropy(&[0.3, -2.0, 4.0], 1).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    fn rotated(theta: f64) -> [f64; 2] {
        [theta.cos(), theta.sin()]
    }

    #[test]
    fn lmcl_two_class_example() {
        // features along x; rows with cosines 0.8 and 0.1
        let w = RealMatrix::from_rows(&[rotated(0.8f64.acos()), rotated(0.1f64.acos())]).unwrap();
        let out = lmcl(&[1.0, 0.0], &w, 0, &LmclConfig::default()).unwrap();
        let expect = (1.0 + (0.196f64 - 1.274).exp()).ln();
        assert!((out.loss - expect).abs() < 1e-12);
        assert!((out.loss - 0.292_875_112_503_489_3).abs() < 1e-12);
    }

    #[test]
    fn lmcl_reduces_to_cross_entropy_on_cosines() {
        let mut rng = seeded_rng(17);
        let cfg = LmclConfig { s: 1.0, m: 0.0 };
        for _ in 0..100 {
            let d = rng.random_range(2..6);
            let c = rng.random_range(2..6);
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rows: Vec<Vec<f64>> = (0..c)
                .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let w = RealMatrix::from_rows(&rows).unwrap();
            let t = rng.random_range(0..c);
            let out = lmcl(&z, &w, t, &cfg).unwrap();
            let (ce, _) = cross_entropy(&out.cosines, t).unwrap();
            assert!((out.loss - ce).abs() <= 1e-12);
        }
    }

    #[test]
    fn lmcl_scale_invariance() {
        let w =
            RealMatrix::from_rows(&[[1.0, 0.5, -0.2], [0.3, -1.0, 0.8], [-0.5, 0.2, 0.9]]).unwrap();
        let z = [0.4, -0.3, 1.2];
        let cfg = LmclConfig::default();
        let base = lmcl(&z, &w, 1, &cfg).unwrap().loss;
        let z3: Vec<f64> = z.iter().map(|x| 3.0 * x).collect();
        assert!((lmcl(&z3, &w, 1, &cfg).unwrap().loss - base).abs() <= 1e-12);
        let mut w2 = w.clone();
        w2.row_mut(2).iter_mut().for_each(|x| *x *= 7.5);
        assert!((lmcl(&z, &w2, 1, &cfg).unwrap().loss - base).abs() <= 1e-12);
    }

    #[test]
    fn lmcl_decreasing_in_target_cosine() {
        // target row sweeps from anti-parallel to parallel with z; other row fixed
        let cfg = LmclConfig::default();
        let z = [1.0, 0.0];
        let other = rotated(1.0);
        let mut prev = f64::INFINITY;
        for k in 0..=60 {
            let theta = std::f64::consts::PI * (1.0 - k as f64 / 60.0);
            let w = RealMatrix::from_rows(&[rotated(theta), other]).unwrap();
            let l = lmcl(&z, &w, 0, &cfg).unwrap().loss;
            assert!(l < prev, "not decreasing at step {k}");
            prev = l;
        }
    }

    #[test]
    fn lmcl_zero_norm_errors() {
        let w = RealMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let e = lmcl(&[1.0, 1.0], &w, 0, &LmclConfig::default()).unwrap_err();
        assert!(e.to_string().contains("row 1"));
        let w = RealMatrix::identity(2);
        let e = lmcl(&[0.0, 0.0], &w, 0, &LmclConfig::default()).unwrap_err();
        assert!(e.to_string().contains("features"));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(23);
        for _ in 0..100 {
            let c = rng.random_range(2..8);
            let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
            let t = rng.random_range(0..c);
            let (_, g) = cross_entropy(&logits, t).unwrap();
            let fd = central_difference(|x| cross_entropy(x, t).unwrap().0, &logits, 1e-6);
            assert!(relative_error(&g, &fd) <= 1e-6);
        }
    }

    #[test]
    fn lmcl_gradients_match_finite_differences() {
        let mut rng = seeded_rng(29);
        let cfg = LmclConfig::default();
        let draw = |rng: &mut crate::numeric::RandomSource, d: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = rng.random_range(0.5..5.0) / crate::numeric::norm(&v);
            v.into_iter().map(|x| x * s).collect::<Vec<f64>>()
        };
        for _ in 0..100 {
            let d = rng.random_range(2..6);
            let c = rng.random_range(2..6);
            let z = draw(&mut rng, d);
            let rows: Vec<Vec<f64>> = (0..c).map(|_| draw(&mut rng, d)).collect();
            let w = RealMatrix::from_rows(&rows).unwrap();
            let t = rng.random_range(0..c);
            let out = lmcl(&z, &w, t, &cfg).unwrap();
            let fz = central_difference(|x| lmcl(x, &w, t, &cfg).unwrap().loss, &z, 1e-6);
            assert!(relative_error(&out.grad_features, &fz) <= 1e-5);
            let fw = central_difference(
                |x| {
                    let m = RealMatrix::from_vec(c, d, x.to_vec()).unwrap();
                    lmcl(&z, &m, t, &cfg).unwrap().loss
                },
                w.as_slice(),
                1e-6,
            );
            assert!(relative_error(out.grad_w.as_slice(), &fw) <= 1e-5);
        }
    }
}
