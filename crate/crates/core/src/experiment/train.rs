//! Training configuration and the training loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{evaluate, MetricsReport};
use super::optim::{optimizer_step, OptimConfig, OptimizerKind, OptimizerState};
use crate::data::{SplitRatios, Splits};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, lmcl, LmclConfig};
use crate::model::{Activation, GradientSet, Mlp, MlpConfig, Scoring};
use crate::numeric::{norm, seeded_rng, RandomSource, RealMatrix};
use crate::ranking::TiePolicy;
use crate::regularizer::{ranksim_loss, total_loss, w_ranksim_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Ce,
    Lmcl,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    WRanksim,
    Ranksim,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 3] = [Self::None, Self::WRanksim, Self::Ranksim];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::WRanksim => "w_ranksim",
            Self::Ranksim => "ranksim",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::validation(
                    "regularizer",
                    format!("unknown value `{s}`, expected one of none, w_ranksim, ranksim"),
                )
            })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ce => "ce",
            Self::Lmcl => "lmcl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub regularizer: RegularizerKind,
    pub gamma: f64,
    pub lambda: f64,
    pub lmcl: LmclConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub tie_policy: TiePolicy,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub split: SplitRatios,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ce,
            regularizer: RegularizerKind::None,
            gamma: 1.5,
            lambda: 2.0,
            lmcl: LmclConfig::default(),
            lr: 2e-4,
            weight_decay: 1e-5,
            epochs: 8,
            batch_size: 2,
            optimizer: OptimizerKind::Radam,
            seed: 0,
            tie_policy: TiePolicy::Competition,
            hidden_dims: vec![128, 64],
            activation: Activation::Relu,
            split: SplitRatios::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::validation("gamma", "must be finite and >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::validation("lambda", "must be finite and > 0"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("lr", "must be finite and > 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay", "must be finite and >= 0"));
        }
        if self.lr * self.weight_decay >= 1.0 {
            return Err(Error::validation(
                "weight_decay",
                "lr * weight_decay must be < 1",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::validation(
                "hidden_dims",
                format!("layer {i} has zero width"),
            ));
        }
        self.lmcl.validate()?;
        self.split.validate()
    }

    /// Scoring rule matching the training loss.
    pub fn scoring(&self) -> Scoring {
        match self.loss {
            LossKind::Ce => Scoring::Dot,
            LossKind::Lmcl => Scoring::Cosine,
        }
    }

    pub fn mlp_config(&self, input_dim: usize, output_classes: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_classes,
            activation: self.activation,
            init_seed: derive_seed(self.seed, "init"),
        }
    }

    /// Short stable identifier of the full configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Independent sub-seed for a named random stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the main loss over the epoch.
    pub main_loss: f64,
    /// Step-mean of the regularizer loss (0 without a regularizer).
    pub reg_loss: f64,
    pub total_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: f64,
    pub dev_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub model: Mlp,
    pub best_epoch: usize,
    pub train: MetricsReport,
    pub dev: MetricsReport,
    pub test: MetricsReport,
    pub history: Vec<EpochRecord>,
}

/// Builds the model and training stream for `cfg` and trains it.
pub fn train_from_config(splits: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Mlp::init(cfg.mlp_config(splits.train.feature_dim(), splits.train.classes.len()))?;
    let mut rng = seeded_rng(derive_seed(cfg.seed, "train"));
    train(model, splits, cfg, &mut rng)
}

pub fn train(
    model: Mlp,
    splits: &Splits,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
) -> Result<TrainOutcome> {
    train_observed(model, splits, cfg, rng, |_, _| {})
}

struct StepLoss {
    main_sum: f64,
    reg: f64,
}

/// Attaches the step position to errors raised inside a step.
fn locate(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numerical { reason, .. } => Error::Numerical {
            step: format!("epoch {epoch} step {step}"),
            reason,
        },
        other => other,
    }
}

/// LMCL loss at `z = 0`, where every cosine is taken as 0. Its gradient is
/// zero.
fn lmcl_loss_at_origin(n_classes: usize, target: usize, cfg: &LmclConfig) -> Result<f64> {
    let mut logits = vec![0.0; n_classes];
    logits[target] = -cfg.s * cfg.m;
    Ok(cross_entropy(&logits, target)?.0)
}

/// Forward, backward and one optimizer update on a single batch.
fn train_step(
    model: &mut Mlp,
    splits: &Splits,
    batch: &[usize],
    cfg: &TrainConfig,
    opt: &OptimConfig,
    state: &mut OptimizerState,
    rng: &mut RandomSource,
) -> Result<StepLoss> {
    let data = &splits.train;
    let inv = 1.0 / batch.len() as f64;
    let outs = batch
        .iter()
        .map(|&i| model.forward(&data.samples[i].features))
        .collect::<Result<Vec<_>>>()?;

    let mut reg = 0.0;
    let mut head_reg: Option<RealMatrix> = None;
    let mut z_reg: Option<Vec<Vec<f64>>> = None;
    match cfg.regularizer {
        RegularizerKind::None => {}
        RegularizerKind::WRanksim => {
            // depends only on W, so once per step
            let (loss, grad) =
                w_ranksim_loss(&model.head, &data.classes, cfg.lambda, cfg.tie_policy)?;
            reg = loss;
            head_reg = Some(grad);
        }
        RegularizerKind::Ranksim => {
            if batch.len() >= 2 {
                let zs: Vec<Vec<f64>> = outs.iter().map(|o| o.z.clone()).collect();
                let labels: Vec<i64> = batch.iter().map(|&i| data.samples[i].label).collect();
                let (loss, grads) = ranksim_loss(&zs, &labels, cfg.lambda, cfg.tie_policy, rng)?;
                reg = loss;
                z_reg = Some(grads);
            }
        }
    }

    let n_classes = model.num_classes();
    let zero_head = RealMatrix::zeros(model.head.rows(), model.head.cols());
    let mut grads = GradientSet::zeros_like(model);
    let mut main_sum = 0.0;
    for (k, (&i, out)) in batch.iter().zip(&outs).enumerate() {
        let target = data.target(i);
        let mut grad_logits = vec![0.0; n_classes];
        let mut grad_head: Option<RealMatrix> = None;
        let mut grad_z: Option<Vec<f64>> = None;
        match cfg.loss {
            LossKind::Ce => {
                let (loss, g) = cross_entropy(&out.logits, target)?;
                main_sum += loss;
                grad_logits = g.iter().map(|v| v * inv).collect();
            }
            LossKind::Lmcl if norm(&out.z) == 0.0 => {
                main_sum += lmcl_loss_at_origin(n_classes, target, &cfg.lmcl)?;
            }
            LossKind::Lmcl => {
                let o = lmcl(&out.z, &model.head, target, &cfg.lmcl)?;
                main_sum += o.loss;
                let mut gw = o.grad_w;
                gw.scale(inv);
                grad_head = Some(gw);
                grad_z = Some(o.grad_features.iter().map(|v| v * inv).collect());
            }
        }
        if let (Some(zr), true) = (&z_reg, cfg.gamma != 0.0) {
            let gz = grad_z.get_or_insert_with(|| vec![0.0; out.z.len()]);
            for (a, b) in gz.iter_mut().zip(&zr[k]) {
                *a += cfg.gamma * b;
            }
        }
        let g = model.backward_full(
            &out.cache,
            &grad_logits,
            grad_head.as_ref().unwrap_or(&zero_head),
            grad_z.as_deref(),
        )?;
        grads.accumulate(1.0, &g);
    }
    if let (Some(hr), true) = (&head_reg, cfg.gamma != 0.0) {
        grads.head.add_scaled(cfg.gamma, hr)?;
    }
    if !grads.is_finite() {
        return Err(Error::Numerical {
            step: String::new(),
            reason: "non-finite gradient".into(),
        });
    }
    let g = grads.slices();
    optimizer_step(&mut model.param_slices_mut(), &g, state, opt)?;
    Ok(StepLoss { main_sum, reg })
}

/// Training loop; `observer` sees the model after every optimizer step.
pub fn train_observed<F: FnMut(u64, &Mlp)>(
    mut model: Mlp,
    splits: &Splits,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
    mut observer: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for (name, part) in [
        ("train", &splits.train),
        ("dev", &splits.dev),
        ("test", &splits.test),
    ] {
        if part.is_empty() {
            return Err(Error::domain(format!("train: {name} split is empty")));
        }
    }
    let input_dim = splits.train.feature_dim();
    if model.config.input_dim != input_dim {
        return Err(Error::shape("train", model.config.input_dim, input_dim));
    }
    if model.num_classes() != splits.train.classes.len() {
        return Err(Error::shape(
            "train",
            splits.train.classes.len(),
            model.num_classes(),
        ));
    }
    model.scoring = cfg.scoring();

    let opt = OptimConfig::new(cfg.optimizer, cfg.lr, cfg.weight_decay);
    let mut state = OptimizerState::new();
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Mlp)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let (mut main_sum, mut reg_sum, mut steps) = (0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = train_step(&mut model, splits, batch, cfg, &opt, &mut state, rng)
                .map_err(|e| locate(e, epoch, b + 1))?;
            let batch_total = total_loss(step.main_sum / batch.len() as f64, step.reg, cfg.gamma);
            if !batch_total.is_finite() {
                return Err(Error::Numerical {
                    step: format!("epoch {epoch} step {}", b + 1),
                    reason: format!("non-finite loss {batch_total}"),
                });
            }
            main_sum += step.main_sum;
            reg_sum += step.reg;
            steps += 1;
            observer(state.step, &model);
        }
        let main_loss = main_sum / splits.train.len() as f64;
        let reg_loss = reg_sum / steps as f64;
        let train_m = evaluate(&model, &splits.train)?;
        let dev_m = evaluate(&model, &splits.dev)?;
        history.push(EpochRecord {
            epoch,
            main_loss,
            reg_loss,
            total_loss: total_loss(main_loss, reg_loss, cfg.gamma),
            train_accuracy: train_m.accuracy,
            dev_accuracy: dev_m.accuracy,
            dev_mae: dev_m.mae,
        });
        // strict improvement keeps the earlier epoch on full ties
        let better = match &best {
            None => true,
            Some((acc, mae, _, _)) => {
                dev_m.accuracy > *acc || (dev_m.accuracy == *acc && dev_m.mae < *mae)
            }
        };
        if better {
            best = Some((dev_m.accuracy, dev_m.mae, epoch, model.clone()));
        }
    }

    let (_, _, best_epoch, model) = best.expect("at least one epoch");
    let curve: Vec<f64> = history.iter().map(|h| h.total_loss).collect();
    let mut reports = [&splits.train, &splits.dev, &splits.test]
        .into_iter()
        .map(|d| evaluate(&model, d))
        .collect::<Result<Vec<_>>>()?;
    for r in &mut reports {
        r.loss_curve = curve.clone();
    }
    let test = reports.pop().expect("3 reports");
    let dev = reports.pop().expect("3 reports");
    let train = reports.pop().expect("3 reports");
    Ok(TrainOutcome {
        model,
        best_epoch,
        train,
        dev,
        test,
        history,
    })
}
