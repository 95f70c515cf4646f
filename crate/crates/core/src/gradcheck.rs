//! Finite-difference verification of every hand-derived gradient, plus the
//! rank-oracle equivalence sweep.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{cross_entropy, lmcl, LmclConfig};
use crate::model::{Activation, Mlp, MlpConfig};
use crate::numeric::{
    cosine_similarity, cosine_similarity_grad, norm, seeded_rng, RandomSource, RealMatrix,
};
use crate::ranking::{rank, rank_bruteforce, TiePolicy};
use crate::regularizer::{cosine_chain, rank_similarity_kernel, OrdinalClassSet};

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Denominator floor of [`relative_error`]; below it the error is absolute.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `max|a − b| / max(max|a|, max|b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf(a).max(inf(b)).max(RELATIVE_FLOOR)
}

const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub cases: usize,
    pub rank_cases: usize,
    /// Suite whose analytic gradient is deliberately perturbed; exercises the
    /// failure path.
    pub corrupt: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            rank_cases: 1000,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Inputs of the worst failing case, serialized for replay.
    pub failing_case: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&format!(
                "{:<12} cases={:<5} max_error={:.3e} tol={:.0e} {}\n",
                s.name,
                s.cases,
                s.max_error,
                s.tolerance,
                if s.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    worst: f64,
    worst_case: Option<serde_json::Value>,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            worst: 0.0,
            worst_case: None,
        }
    }

    fn record(&mut self, err: f64, case: impl FnOnce() -> serde_json::Value) {
        self.cases += 1;
        // NaN must register as a failure
        if err > self.worst || err.is_nan() {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
            if self.worst > self.tolerance {
                self.worst_case = Some(case());
            }
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name.into(),
            cases: self.cases,
            max_error: self.worst,
            tolerance: self.tolerance,
            passed: self.worst <= self.tolerance,
            failing_case: self.worst_case,
        }
    }
}

fn random_vector(rng: &mut RandomSource, dim: usize, norm_range: (f64, f64)) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            let target = rng.random_range(norm_range.0..norm_range.1);
            return v.into_iter().map(|x| x * target / n).collect();
        }
    }
}

fn corruption(cfg: &GradCheckConfig, suite: &str) -> f64 {
    if cfg.corrupt.as_deref() == Some(suite) {
        1.01
    } else {
        1.0
    }
}

pub fn check_cosine(cfg: &GradCheckConfig) -> Result<SuiteResult> {
    let mut rng = seeded_rng(cfg.seed ^ 0xC051);
    let mut t = Tracker::new("cosine", 1e-5);
    let k = corruption(cfg, "cosine");
    for _ in 0..cfg.cases {
        let d = rng.random_range(2..=8);
        let u = random_vector(&mut rng, d, (0.1, 10.0));
        let v = random_vector(&mut rng, d, (0.1, 10.0));
        let (gu, gv) = cosine_similarity_grad(&u, &v)?;
        let gu: Vec<f64> = gu.into_iter().map(|x| x * k).collect();
        let fu = central_difference(|x| cosine_similarity(x, &v).unwrap(), &u, STEP);
        let fv = central_difference(|x| cosine_similarity(&u, x).unwrap(), &v, STEP);
        let err = relative_error(&gu, &fu).max(relative_error(&gv, &fv));
        t.record(err, || serde_json::json!({ "u": u, "v": v }));
    }
    Ok(t.finish())
}

pub fn check_cross_entropy(cfg: &GradCheckConfig) -> Result<SuiteResult> {
    let mut rng = seeded_rng(cfg.seed ^ 0xCE);
    let mut t = Tracker::new("cross_entropy", 1e-5);
    let k = corruption(cfg, "cross_entropy");
    for _ in 0..cfg.cases {
        let c = rng.random_range(2..=8);
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
        let target = rng.random_range(0..c);
        let (_, g) = cross_entropy(&logits, target)?;
        let g: Vec<f64> = g.into_iter().map(|x| x * k).collect();
        let fd = central_difference(|x| cross_entropy(x, target).unwrap().0, &logits, STEP);
        t.record(
            relative_error(&g, &fd),
            || serde_json::json!({ "logits": logits, "target": target }),
        );
    }
    Ok(t.finish())
}

pub fn check_lmcl(cfg: &GradCheckConfig) -> Result<SuiteResult> {
    let mut rng = seeded_rng(cfg.seed ^ 0x1C);
    let mut t = Tracker::new("lmcl", 1e-5);
    let k = corruption(cfg, "lmcl");
    let lc = LmclConfig::default();
    for _ in 0..cfg.cases {
        let d = rng.random_range(2..=8);
        let c = rng.random_range(2..=6);
        let z = random_vector(&mut rng, d, (0.5, 5.0));
        let rows: Vec<Vec<f64>> = (0..c)
            .map(|_| random_vector(&mut rng, d, (0.5, 5.0)))
            .collect();
        let w = RealMatrix::from_rows(&rows)?;
        let target = rng.random_range(0..c);
        let out = lmcl(&z, &w, target, &lc)?;
        let gz: Vec<f64> = out.grad_features.iter().map(|x| x * k).collect();
        let fz = central_difference(|x| lmcl(x, &w, target, &lc).unwrap().loss, &z, STEP);
        let fw = central_difference(
            |x| {
                let m = RealMatrix::from_vec(c, d, x.to_vec()).unwrap();
                lmcl(&z, &m, target, &lc).unwrap().loss
            },
            w.as_slice(),
            STEP,
        );
        let err = relative_error(&gz, &fz).max(relative_error(out.grad_w.as_slice(), &fw));
        t.record(
            err,
            || serde_json::json!({ "z": z, "w": rows, "target": target }),
        );
    }
    Ok(t.finish())
}

/// Which main loss the end-to-end case uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainLoss {
    Ce,
    Lmcl,
}

/// Scalar end-to-end objective with the rank step frozen: main loss plus
/// `gamma · Σ_{i≠j} G_ij · cos(w_i, w_j)` for a fixed `G = ∂L/∂S`.
fn frozen_objective(
    model: &Mlp,
    x: &[f64],
    target: usize,
    main: MainLoss,
    gamma: f64,
    g: &RealMatrix,
) -> f64 {
    let out = model.forward(x).unwrap();
    let main_loss = match main {
        MainLoss::Ce => cross_entropy(&out.logits, target).unwrap().0,
        MainLoss::Lmcl => {
            lmcl(&out.z, &model.head, target, &LmclConfig::default())
                .unwrap()
                .loss
        }
    };
    let n = model.head.rows();
    let mut reg = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && g[(i, j)] != 0.0 {
                reg += g[(i, j)] * cosine_similarity(model.head.row(i), model.head.row(j)).unwrap();
            }
        }
    }
    main_loss + gamma * reg
}

/// Analytic gradient of [`frozen_objective`] through the model's backward pass.
pub fn end_to_end_gradient(
    model: &Mlp,
    x: &[f64],
    target: usize,
    main: MainLoss,
    gamma: f64,
    g: &RealMatrix,
) -> Result<crate::model::GradientSet> {
    let out = model.forward(x)?;
    let rows: Vec<&[f64]> = model.head.row_iter().collect();
    let chain = cosine_chain(&rows, g)?;
    let mut extra = RealMatrix::from_rows(&chain)?;
    extra.scale(gamma);
    match main {
        MainLoss::Ce => {
            let (_, gl) = cross_entropy(&out.logits, target)?;
            model.backward(&out.cache, &gl, &extra)
        }
        MainLoss::Lmcl => {
            let l = lmcl(&out.z, &model.head, target, &LmclConfig::default())?;
            extra.add_scaled(1.0, &l.grad_w)?;
            let zeros = vec![0.0; model.head.rows()];
            model.backward_full(&out.cache, &zeros, &extra, Some(&l.grad_features))
        }
    }
}

pub fn check_end_to_end(cfg: &GradCheckConfig) -> Result<SuiteResult> {
    let mut rng = seeded_rng(cfg.seed ^ 0xE2E);
    let mut t = Tracker::new("end_to_end", 1e-4);
    let k = corruption(cfg, "end_to_end");
    for case in 0..cfg.cases {
        let depth = rng.random_range(0..=2);
        let input_dim = rng.random_range(2..=8);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=8)).collect();
        let classes = rng.random_range(3..=5);
        let activation = if case % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let mut mc = MlpConfig::new(input_dim, hidden, classes);
        mc.activation = activation;
        mc.init_seed = rng.random();
        let model = Mlp::init(mc)?;
        // keep ReLU pre-activations away from the kink and z away from 0
        let x = loop {
            let x: Vec<f64> = (0..input_dim)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let out = model.forward(&x)?;
            let kink = activation == Activation::Relu
                && model.layers.iter().enumerate().any(|(l, layer)| {
                    let mut h = x.clone();
                    for prev in &model.layers[..l] {
                        h = prev
                            .weight
                            .matvec(&h)
                            .unwrap()
                            .iter()
                            .zip(&prev.bias)
                            .map(|(a, b)| (a + b).max(0.0))
                            .collect();
                    }
                    layer
                        .weight
                        .matvec(&h)
                        .unwrap()
                        .iter()
                        .zip(&layer.bias)
                        .any(|(a, b)| (a + b).abs() < 1e-3)
                });
            if !kink && norm(&out.z) > 1e-2 {
                break x;
            }
        };
        let target = rng.random_range(0..classes);
        let main = if rng.random_bool(0.5) {
            MainLoss::Ce
        } else {
            MainLoss::Lmcl
        };
        let gamma = if rng.random_bool(0.25) { 0.0 } else { 1.5 };
        let class_set = OrdinalClassSet::contiguous(classes)?;
        let rows: Vec<&[f64]> = model.head.row_iter().collect();
        // rank step evaluated once; its output is frozen for the check
        let policy = if case % 3 == 0 {
            TiePolicy::Permutation
        } else {
            TiePolicy::Competition
        };
        let mut g = rank_similarity_kernel(&rows, class_set.labels(), 2.0, policy)?.grad_sim;
        if g.as_slice().iter().all(|v| *v == 0.0) {
            // exercise the chain even when the ranks already agree
            for i in 0..classes {
                for j in 0..classes {
                    if i != j {
                        g[(i, j)] = rng.random_range(-1.0..1.0);
                    }
                }
            }
        }
        let grads = end_to_end_gradient(&model, &x, target, main, gamma, &g)?;
        let mut err = 0.0f64;
        for (slot, analytic) in grads.slices().iter().enumerate() {
            let base = model.param_slices()[slot].to_vec();
            let fd = central_difference(
                |p| {
                    let mut m = model.clone();
                    m.param_slices_mut()[slot].copy_from_slice(p);
                    frozen_objective(&m, &x, target, main, gamma, &g)
                },
                &base,
                STEP,
            );
            let analytic: Vec<f64> = analytic.iter().map(|v| v * k).collect();
            err = err.max(relative_error(&analytic, &fd));
        }
        t.record(err, || {
            serde_json::json!({
                "model": model.to_checkpoint_string().ok(),
                "x": x, "target": target, "main": main, "gamma": gamma,
                "grad_sim": g.as_slice(),
            })
        });
    }
    Ok(t.finish())
}

/// Exhaustive-oracle agreement of the permutation rank on distinct vectors.
pub fn check_rank_oracle(cfg: &GradCheckConfig) -> Result<SuiteResult> {
    let mut rng = seeded_rng(cfg.seed ^ 0x0A);
    let mut t = Tracker::new("rank_oracle", 0.0);
    let corrupt = cfg.corrupt.as_deref() == Some("rank_oracle");
    for _ in 0..cfg.rank_cases {
        let n = rng.random_range(2..=6);
        let a: Vec<f64> = loop {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let mut s = a.clone();
            s.sort_by(f64::total_cmp);
            if s.windows(2).all(|w| w[0] != w[1]) {
                break a;
            }
        };
        let (oracle, _) = rank_bruteforce(&a)?;
        let mut fast = rank(&a, TiePolicy::Permutation)?.ranks;
        if corrupt {
            fast.reverse();
        }
        let mismatch = if fast == oracle.ranks { 0.0 } else { 1.0 };
        t.record(mismatch, || serde_json::json!({ "a": a }));
    }
    Ok(t.finish())
}

pub fn run_all(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    Ok(GradCheckReport {
        seed: cfg.seed,
        suites: vec![
            check_cosine(cfg)?,
            check_cross_entropy(cfg)?,
            check_lmcl(cfg)?,
            check_end_to_end(cfg)?,
            check_rank_oracle(cfg)?,
        ],
    })
}
