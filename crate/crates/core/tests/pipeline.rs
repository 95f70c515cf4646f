use wranksim::data::{generate, split, SplitRatios, SynthConfig};
use wranksim::experiment::{evaluate, train_from_config, LossKind, RegularizerKind, TrainConfig};
use wranksim::model::Mlp;
use wranksim::numeric::seeded_rng;
use wranksim::ranking::TiePolicy;
use wranksim::regularizer::{w_ranksim_loss, w_ranksim_upper_bound};

fn splits() -> wranksim::data::Splits {
    let cfg = SynthConfig {
        n_samples: 400,
        feature_dim: 8,
        ..SynthConfig::default()
    };
    let data = generate(&cfg, 3, &mut seeded_rng(3)).unwrap();
    split(&data, SplitRatios::default(), &mut seeded_rng(4)).unwrap()
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let s = splits();
    for loss in [LossKind::Ce, LossKind::Lmcl] {
        let cfg = TrainConfig {
            loss,
            regularizer: RegularizerKind::WRanksim,
            epochs: 2,
            hidden_dims: vec![16],
            ..TrainConfig::default()
        };
        let out = train_from_config(&s, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        out.model.save(&path).unwrap();
        let loaded = Mlp::load(&path).unwrap();
        assert_eq!(loaded, out.model);
        let mut m = evaluate(&loaded, &s.test).unwrap();
        m.loss_curve = out.test.loss_curve.clone();
        assert_eq!(m, out.test);
    }
}

#[test]
fn trained_head_respects_w_ranksim_bound() {
    let s = splits();
    let cfg = TrainConfig {
        regularizer: RegularizerKind::WRanksim,
        tie_policy: TiePolicy::Permutation,
        epochs: 2,
        hidden_dims: vec![16],
        ..TrainConfig::default()
    };
    let out = train_from_config(&s, &cfg).unwrap();
    let bound = w_ranksim_upper_bound(5);
    for h in &out.history {
        assert!(h.reg_loss >= 0.0 && h.reg_loss <= bound, "{}", h.reg_loss);
    }
    let (l, _) = w_ranksim_loss(
        &out.model.head,
        &s.train.classes,
        2.0,
        TiePolicy::Permutation,
    )
    .unwrap();
    assert!((0.0..=bound).contains(&l));
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let s = splits();
    let cfg = TrainConfig {
        regularizer: RegularizerKind::Ranksim,
        batch_size: 8,
        epochs: 2,
        hidden_dims: vec![16],
        ..TrainConfig::default()
    };
    let a = train_from_config(&s, &cfg).unwrap();
    let b = train_from_config(&s, &cfg).unwrap();
    assert_eq!(a, b);
    let c = train_from_config(&s, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.model, c.model);
}
