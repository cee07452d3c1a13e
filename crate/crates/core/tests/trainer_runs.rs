//! Short training runs exercising the loop, the snapshot rule and resumption.

use nslin::geometry::Domain;
use nslin::losses::{LossBreakdown, LossContext, SchemeId};
use nslin::model::{Architecture, FlowModel};
use nslin::optim::{AdamState, LrSchedule};
use nslin::problem::FlowParams;
use nslin::trainer::{self, epoch, init_model, seeded_rng, TrainConfig, TrainError, Trainer, SAMPLE_STREAM};

fn small(scheme: SchemeId, epochs: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(scheme, epochs, 200, 40, 4, 5e-3);
    cfg.seed = 11;
    cfg
}

fn model(scheme: SchemeId, seed: u64) -> FlowModel {
    init_model(&Architecture::mscale(&[10, 10], &[1.0, 2.0]), false, scheme, seed).unwrap()
}

fn bits(m: &FlowModel) -> Vec<u64> {
    m.nets().iter().flat_map(|n| n.to_flat()).map(f64::to_bits).collect()
}

#[test]
fn zero_rate_epoch_only_evaluates() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    let mut cfg = small(SchemeId::Hybrid, 1);
    cfg.schedule = LrSchedule {
        initial_lr: 0.0,
        decay_factor: 1.0,
        decay_every: 1,
    };
    let mut m = model(cfg.scheme, 1);
    let start = m.clone();
    let frozen = nslin::losses::FrozenFields::snapshot(&m);
    let mut adam: Vec<_> = m.nets().iter().map(|n| AdamState::for_net(n, cfg.adam)).collect();
    let mut rng = seeded_rng(3, SAMPLE_STREAM);
    let mut replay = rng.clone();
    let got = epoch(&cfg, &domain, &flow, &mut m, Some(&frozen), &mut adam, &mut rng, 0).unwrap();
    assert_eq!(bits(&m), bits(&start));

    let pts = domain.sample_interior(200, &mut replay).unwrap();
    let bnd = domain.sample_boundary(40, &mut replay);
    let ctx = LossContext {
        scheme: cfg.scheme,
        model: &start,
        frozen: Some(&frozen),
        weights: cfg.weights,
        flow: &flow,
    };
    let parts: Vec<_> = (0..4)
        .map(|b| ctx.batch_loss(&pts[b * 50..(b + 1) * 50], &bnd[b * 10..(b + 1) * 10]).unwrap())
        .collect();
    assert_eq!(got, LossBreakdown::mean(&parts));
}

#[test]
fn same_seed_same_history() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    let run = || {
        let cfg = small(SchemeId::VFixed, 4);
        trainer::train(cfg, &domain, &flow, model(SchemeId::VFixed, 2)).unwrap()
    };
    let (ma, ra) = run();
    let (mb, rb) = run();
    assert_eq!(bits(&ma), bits(&mb));
    let tb: Vec<u64> = rb.totals().iter().map(|t| t.to_bits()).collect();
    assert_eq!(ra.totals().iter().map(|t| t.to_bits()).collect::<Vec<_>>(), tb);
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    let dir = tempfile::tempdir().unwrap();
    for scheme in [SchemeId::GradFixed, SchemeId::Vgvp] {
        let mut cfg = small(scheme, 3);
        cfg.inner_epochs = 2;
        let mut straight = Trainer::new(cfg.clone(), &domain, &flow, model(scheme, 4)).unwrap();
        straight.run().unwrap();

        cfg.checkpoint_every = Some(3);
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        let mut first = Trainer::new(cfg.clone(), &domain, &flow, model(scheme, 4)).unwrap();
        first.run_until(3).unwrap();
        drop(first);
        let state = Trainer::load_state(&dir.path().join("train_state.json")).unwrap();
        assert_eq!(state.next_epoch, 3);
        let mut resumed = Trainer::resume(cfg, &domain, &flow, state).unwrap();
        resumed.run().unwrap();

        assert_eq!(bits(resumed.model()), bits(straight.model()), "{scheme}");
        let losses = |t: &Trainer| -> Vec<LossBreakdown> { t.record().epochs.iter().map(|e| e.loss).collect() };
        assert_eq!(losses(&resumed), losses(&straight));
        assert_eq!(resumed.tau(), straight.tau());
        assert_eq!(resumed.frozen(), straight.frozen());
    }
}

#[test]
fn snapshot_rule_over_a_run() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    let mut cfg = small(SchemeId::VFixed1, 6);
    cfg.inner_epochs = 2;
    let mut t = Trainer::new(cfg, &domain, &flow, model(SchemeId::VFixed1, 5)).unwrap();
    let probe = [[0.3, 0.2], [1.2, 0.9], [1.8, 0.4]];
    let mut last_frozen = t.frozen().unwrap().eval(&probe).unwrap();
    while !t.is_done() {
        let rec = t.step_epoch().unwrap().clone();
        let now = t.frozen().unwrap().eval(&probe).unwrap();
        if rec.frozen_updated {
            assert_eq!(rec.epoch % 2, 1, "updates only end outer iterations");
            assert_eq!(rec.tau, rec.loss.total);
        } else {
            assert_eq!(now, last_frozen);
        }
        last_frozen = now;
    }
    let rec = t.record();
    assert_eq!(rec.update_epochs().first(), Some(&1), "tau_init = 1e12 accepts the first loss");
    let taus: Vec<f64> = rec.epochs.iter().filter(|e| e.frozen_updated).map(|e| e.tau).collect();
    assert!(taus.windows(2).all(|w| w[1] <= 0.9 * w[0]));
}

#[test]
fn vgvp_skips_the_snapshot_machinery() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    let mut t = Trainer::new(small(SchemeId::Vgvp, 3), &domain, &flow, model(SchemeId::Vgvp, 6)).unwrap();
    assert!(t.frozen().is_none());
    t.run().unwrap();
    assert!(t.record().update_epochs().is_empty());
    assert!(t.record().epochs.iter().all(|e| e.tau == 1e12 && e.loss.r_grad > 0.0));
}

#[test]
fn mismatched_model_is_rejected() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    assert!(matches!(
        Trainer::new(small(SchemeId::Vgvp, 1), &domain, &flow, model(SchemeId::VFixed, 1)),
        Err(TrainError::Config(_))
    ));
    assert!(Trainer::new(small(SchemeId::VFixed, 1), &domain, &flow, model(SchemeId::Vgvp, 1)).is_err());
}

#[test]
fn divergence_aborts_with_a_dump() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(SchemeId::VFixed, 5);
    cfg.schedule.initial_lr = 1e300;
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    let err = trainer::train(cfg, &domain, &flow, model(SchemeId::VFixed, 7)).unwrap_err();
    match err {
        TrainError::Diverged { dump: Some(path), .. } => assert!(path.exists()),
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn linearized_schemes_make_progress() {
    let (domain, flow) = (Domain::benchmark(), FlowParams::new(1, 2, 0.05).unwrap());
    for scheme in SchemeId::LINEARIZED {
        let (_, rec) = trainer::train(small(scheme, 30), &domain, &flow, model(scheme, 8)).unwrap();
        let t = rec.totals();
        assert!(t[29] < 0.8 * t[0], "{scheme}: {} -> {}", t[0], t[29]);
    }
}
