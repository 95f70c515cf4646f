//! Adam and RAdam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    #[default]
    Radam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimConfig {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter array, plus the step
/// count used for bias correction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Rectification factor `r_t`, or `None` while the variance of the adaptive
/// learning rate is intractable (`ρ_t ≤ 4`).
pub fn radam_rectification(step: u64, beta2: f64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(step as i32);
    let rho_t = rho_inf - 2.0 * step as f64 * b2t / (1.0 - b2t);
    if rho_t > 4.0 {
        Some(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt(),
        )
    } else {
        None
    }
}

/// One optimizer update of every parameter array in place.
///
/// Weight decay is decoupled: `θ ← θ·(1 − lr·wd)` before the moment update.
pub fn optimizer_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("optimizer_step", params.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape(
                "optimizer_step",
                p.len(),
                format!("{} in array {i}", g.len()),
            ));
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len()
        || state.m.iter().zip(grads).any(|(m, g)| m.len() != g.len())
    {
        return Err(Error::shape(
            "optimizer_step",
            "state layout",
            "different layout",
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let rect = match cfg.kind {
        OptimizerKind::Adam => Some(1.0),
        OptimizerKind::Radam => radam_rectification(state.step, b2),
    };
    let decay = 1.0 - cfg.lr * cfg.weight_decay;

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for k in 0..p.len() {
            if cfg.weight_decay != 0.0 {
                p[k] *= decay;
            }
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            p[k] -= match rect {
                Some(r) => {
                    let v_hat = v[k] / bc2;
                    cfg.lr * r * m_hat / (v_hat.sqrt() + cfg.eps)
                }
                // un-adapted momentum step
                None => cfg.lr * m_hat,
            };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: OptimizerKind, wd: f64, grad: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let cfg = OptimConfig::new(kind, 1e-2, wd);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![grad; 3];
        let mut st = OptimizerState::new();
        let mut deltas = Vec::new();
        for _ in 0..steps {
            let before = p[0];
            optimizer_step(&mut [&mut p], &[&g], &mut st, &cfg).unwrap();
            deltas.push(p[0] - before);
        }
        (p, deltas)
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Radam] {
            let (p, _) = run(kind, 0.0, 0.0, 50);
            assert_eq!(p, vec![1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let (p, _) = run(OptimizerKind::Adam, 0.5, 0.0, 1);
        assert!((p[0] - (1.0 - 1e-2 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        // m_hat/sqrt(v_hat) = g/|g| exactly for a constant gradient
        let (_, deltas) = run(OptimizerKind::Adam, 0.0, 0.3, 2000);
        let last = deltas.last().unwrap().abs();
        assert!((last - 1e-2).abs() < 1e-8, "{last}");
        assert!(deltas.iter().all(|d| (d.abs() - 1e-2).abs() < 1e-6));
    }

    #[test]
    fn radam_warmup_then_rectified() {
        assert!(radam_rectification(1, 0.999).is_none());
        assert!(radam_rectification(4, 0.999).is_none());
        let r = radam_rectification(10_000, 0.999).unwrap();
        assert!(r > 0.99 && r <= 1.0);
        let (_, deltas) = run(OptimizerKind::Radam, 0.0, 0.3, 3000);
        // first step is plain momentum SGD: lr * g
        assert!((deltas[0].abs() - 1e-2 * 0.3).abs() < 1e-15);
        let r = radam_rectification(3000, 0.999).unwrap();
        assert!((deltas.last().unwrap().abs() - 1e-2 * r).abs() < 1e-8);
    }

    #[test]
    fn step_is_pure() {
        let cfg = OptimConfig::new(OptimizerKind::Radam, 1e-3, 1e-5);
        let g = vec![0.1, -0.2];
        let mut st_a = OptimizerState::new();
        let mut pa = vec![1.0, 2.0];
        for _ in 0..7 {
            optimizer_step(&mut [&mut pa], &[&g], &mut st_a, &cfg).unwrap();
        }
        let mut st_b = st_a.clone();
        let mut pb = pa.clone();
        optimizer_step(&mut [&mut pa], &[&g], &mut st_a, &cfg).unwrap();
        optimizer_step(&mut [&mut pb], &[&g], &mut st_b, &cfg).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(st_a, st_b);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = OptimConfig::new(OptimizerKind::Adam, 1e-3, 0.0);
        let mut p = vec![1.0, 2.0];
        let mut st = OptimizerState::new();
        assert!(optimizer_step(&mut [&mut p], &[&[1.0]], &mut st, &cfg).is_err());
    }
}
