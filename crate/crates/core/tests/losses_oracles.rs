use nslin::geometry::{BoundarySample, Domain};
use nslin::losses::{
    momentum_residual, nonlinear_momentum_residual, pressure_residual, vgvp_residuals, FrozenFields, FrozenPoint,
    LossContext, LossWeights, SchemeId,
};
use nslin::mlp::{Jet2, JetOrder, MlpParams, MscaleNet, Point};
use nslin::model::{Architecture, FieldSlot, FlowModel};
use nslin::problem::{self, exact, forcing, forcing_div, ExactField, FlowParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_flow() -> FlowParams {
    FlowParams::new(1, 2, 0.05).unwrap()
}

fn exact_jets(e: &ExactField) -> (Jet2, Jet2, Jet2) {
    (
        Jet2 { value: e.u, grad: e.du, hess: e.ddu },
        Jet2 { value: e.v, grad: e.dv, hess: e.ddv },
        Jet2 { value: e.p, grad: e.dp, hess: e.ddp },
    )
}

fn sample(domain: &Domain, seed: u64, ni: usize, nb: usize) -> (Vec<Point>, Vec<BoundarySample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (domain.sample_interior(ni, &mut rng).unwrap(), domain.sample_boundary(nb, &mut rng))
}

#[test]
fn exact_fields_close_every_residual() {
    let fp = bench_flow();
    let (pts, _) = sample(&Domain::benchmark(), 1, 500, 1);
    for x in pts {
        let e = exact(&fp, x);
        let (u, v, p) = exact_jets(&e);
        let f = forcing(&fp, x);
        let fr = FrozenPoint::from_jets(&u, &v);
        for scheme in SchemeId::LINEARIZED {
            let r = momentum_residual(scheme, &u, &v, &p, &fr, fp.nu(), f).unwrap();
            assert!(r[0].abs() < 1e-8 && r[1].abs() < 1e-8, "{scheme}: {r:?}");
        }
        assert!(pressure_residual(&u, &v, &p, forcing_div(&fp, x)).abs() < 1e-8);
        let grad = [
            Jet2 { value: e.du[0], grad: [e.ddu[0], e.ddu[1]], hess: [0.0; 3] },
            Jet2 { value: e.du[1], grad: [e.ddu[1], e.ddu[2]], hess: [0.0; 3] },
            Jet2 { value: e.dv[0], grad: [e.ddv[0], e.ddv[1]], hess: [0.0; 3] },
            Jet2 { value: e.dv[1], grad: [e.ddv[1], e.ddv[2]], hess: [0.0; 3] },
        ];
        let r = vgvp_residuals(&u, &v, &p, &grad, fp.nu(), f, forcing_div(&fp, x));
        assert!(r.momentum.iter().all(|m| m.abs() < 1e-8), "{r:?}");
        assert!(r.pressure.abs() < 1e-8);
        assert!(r.divergence.abs() < 1e-8);
        assert!(r.consistency.iter().flatten().all(|c| c.abs() < 1e-8));
    }
}

#[test]
fn frozen_equal_to_current_recovers_nonlinear_residual() {
    let fp = bench_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (pts, _) = sample(&Domain::benchmark(), 3, 64, 1);
    for trial in 0..5 {
        let arch = Architecture::mscale(&[12, 12], &[1.0, 2.0]);
        let model = FlowModel::init(&arch, trial % 2 == 1, false, &mut rng).unwrap();
        let frozen = FrozenFields::snapshot(&model).eval(&pts).unwrap();
        let batches: Vec<_> = model
            .nets()
            .iter()
            .map(|n| n.forward_batch(&pts, JetOrder::Second).unwrap())
            .collect();
        let jet = |slot, i| {
            let (k, c) = model.locate(slot).unwrap();
            batches[k].jet(i, c)
        };
        for (i, &x) in pts.iter().enumerate() {
            let (u, v, p) = (jet(FieldSlot::U, i), jet(FieldSlot::V, i), jet(FieldSlot::P, i));
            let f = forcing(&fp, x);
            let nl = nonlinear_momentum_residual(&u, &v, &p, fp.nu(), f);
            for scheme in SchemeId::LINEARIZED {
                let r = momentum_residual(scheme, &u, &v, &p, &frozen[i], fp.nu(), f).unwrap();
                for k in 0..2 {
                    assert!((r[k] - nl[k]).abs() <= 1e-13 * nl[k].abs().max(1.0), "{scheme}: {} vs {}", r[k], nl[k]);
                }
            }
        }
    }
}

fn zero_net(out: usize) -> MscaleNet {
    MscaleNet::new(vec![MlpParams::zeros(&[2, 4, out]).unwrap()], vec![1.0]).unwrap()
}

#[test]
fn zero_nets_measure_the_data() {
    let fp = bench_flow();
    let domain = Domain::benchmark();
    let (pts, bnd) = sample(&domain, 4, 300, 100);
    let model = FlowModel::separate(zero_net(1), zero_net(1), zero_net(1), None).unwrap();
    let frozen = FrozenFields::snapshot(&model);
    let ctx = LossContext {
        scheme: SchemeId::VFixed,
        model: &model,
        frozen: Some(&frozen),
        weights: LossWeights { w_bc: 2.0, w_p: 0.5 },
        flow: &fp,
    };
    let b = ctx.batch_loss(&pts, &bnd).unwrap();
    let mean = |it: Vec<f64>| it.iter().sum::<f64>() / it.len() as f64;
    let ru = mean(pts.iter().map(|&x| forcing(&fp, x)[0].powi(2)).collect());
    let rv = mean(pts.iter().map(|&x| forcing(&fp, x)[1].powi(2)).collect());
    let rp = mean(pts.iter().map(|&x| forcing_div(&fp, x).powi(2)).collect());
    let bu = mean(
        bnd.iter()
            .map(|s| {
                let g = problem::boundary_value(&fp, s);
                g[0] * g[0] + g[1] * g[1]
            })
            .collect(),
    );
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    assert!(close(b.r_u, ru) && close(b.r_v, rv) && close(b.r_p, rp) && close(b.b_u, bu), "{b:?}");
    assert!(close(b.total, ru + rv + 0.5 * rp + 2.0 * bu));
    assert_eq!(b.r_div, 0.0);
    assert_eq!(b.r_grad, 0.0);
}

#[test]
fn weights_enter_linearly_and_means_pool() {
    let fp = bench_flow();
    let domain = Domain::benchmark();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = FlowModel::init(&Architecture::fcn(&[8, 8]), false, false, &mut rng).unwrap();
    let frozen = FrozenFields::snapshot(&model);
    let (pts, bnd) = sample(&domain, 6, 600, 300);
    let ctx = |w_bc| LossContext {
        scheme: SchemeId::Hybrid,
        model: &model,
        frozen: Some(&frozen),
        weights: LossWeights { w_bc, w_p: 1.0 },
        flow: &fp,
    };
    let one = ctx(1.0).batch_loss(&pts, &bnd).unwrap();
    let two = ctx(2.0).batch_loss(&pts, &bnd).unwrap();
    assert_eq!(one.r_u, two.r_u);
    assert!((two.total - one.total - one.b_u).abs() < 1e-12 * one.total);

    // Union of two batches with the same interior/boundary proportions.
    let a = ctx(1.0).batch_loss(&pts[..400], &bnd[..200]).unwrap();
    let b = ctx(1.0).batch_loss(&pts[400..], &bnd[200..]).unwrap();
    let pooled = |x: f64, y: f64| (2.0 * x + y) / 3.0;
    for (u, x, y) in [
        (one.r_u, a.r_u, b.r_u),
        (one.r_v, a.r_v, b.r_v),
        (one.r_p, a.r_p, b.r_p),
        (one.b_u, a.b_u, b.b_u),
        (one.total, a.total, b.total),
    ] {
        assert!((u - pooled(x, y)).abs() <= 1e-12 * u.max(1.0), "{u} vs {}", pooled(x, y));
    }
}

#[test]
fn empty_batches_and_missing_inputs_are_rejected() {
    let fp = bench_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = FlowModel::init(&Architecture::fcn(&[4]), false, false, &mut rng).unwrap();
    let (pts, bnd) = sample(&Domain::benchmark(), 7, 10, 10);
    let frozen = FrozenFields::snapshot(&model);
    let ctx = LossContext {
        scheme: SchemeId::GradFixed,
        model: &model,
        frozen: Some(&frozen),
        weights: LossWeights::default(),
        flow: &fp,
    };
    assert!(ctx.batch_loss(&[], &bnd).is_err());
    assert!(ctx.batch_loss(&pts, &[]).is_err());
    let no_frozen = LossContext { frozen: None, ..ctx };
    assert!(no_frozen.batch_loss(&pts, &bnd).is_err());
    let vgvp = LossContext { scheme: SchemeId::Vgvp, frozen: None, ..no_frozen };
    assert!(vgvp.batch_loss(&pts, &bnd).is_err());
}

fn check_gradient(scheme: SchemeId, shared: bool, seed: u64) {
    let fp = FlowParams::new(2, 1, 0.1).unwrap();
    let domain = Domain::benchmark();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::mscale(&[5, 4], &[1.0, 2.0]);
    let model = FlowModel::init(&arch, shared, scheme == SchemeId::Vgvp, &mut rng).unwrap();
    // Frozen fields from a different model, so the linearization is not at
    // its fixed point.
    let other = FlowModel::init(&arch, shared, false, &mut rng).unwrap();
    let frozen = FrozenFields::snapshot(&other);
    let (pts, bnd) = sample(&domain, seed + 100, 9, 6);
    let weights = LossWeights { w_bc: 1.7, w_p: 0.6 };
    let loss = |m: &FlowModel| {
        LossContext {
            scheme,
            model: m,
            frozen: Some(&frozen),
            weights,
            flow: &fp,
        }
        .batch_loss(&pts, &bnd)
        .unwrap()
        .total
    };
    let (b, grads) = LossContext {
        scheme,
        model: &model,
        frozen: Some(&frozen),
        weights,
        flow: &fp,
    }
    .batch_loss_and_grad(&pts, &bnd)
    .unwrap();
    assert_eq!(b.total, loss(&model));
    let h = 1e-5;
    for (k, g) in grads.iter().enumerate() {
        let analytic = g.to_flat();
        let base = model.nets()[k].to_flat();
        for i in 0..base.len() {
            let mut v = base.clone();
            let mut plus = model.clone();
            let mut minus = model.clone();
            v[i] += h;
            plus.nets_mut()[k].set_flat(&v).unwrap();
            v[i] -= 2.0 * h;
            minus.nets_mut()[k].set_flat(&v).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let err = (analytic[i] - fd).abs() / fd.abs().max(1e-3);
            assert!(err < 1e-5, "{scheme} shared={shared} net {k} param {i}: {} vs {fd}", analytic[i]);
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences_separate_nets() {
    for (i, scheme) in SchemeId::ALL.into_iter().enumerate() {
        check_gradient(scheme, false, 10 + i as u64);
    }
}

#[test]
fn loss_gradients_match_finite_differences_shared_net() {
    for (i, scheme) in SchemeId::ALL.into_iter().enumerate() {
        check_gradient(scheme, true, 20 + i as u64);
    }
}

#[test]
fn frozen_snapshot_is_independent_of_live_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = FlowModel::init(&Architecture::fcn(&[6]), false, false, &mut rng).unwrap();
    let frozen = FrozenFields::snapshot(&model);
    let pts: Vec<Point> = vec![[0.3, 0.2], [1.5, 0.8]];
    let before = frozen.eval(&pts).unwrap();
    for net in model.nets_mut() {
        let v: Vec<f64> = net.to_flat().iter().map(|x| x + 0.1).collect();
        net.set_flat(&v).unwrap();
    }
    assert_eq!(frozen.eval(&pts).unwrap(), before);
}
