//! Self-checks run by `nslin verify`: derivative oracles, manufactured
//! solution identities, scheme fixed points and sampler statistics.

use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use nslin::geometry::{BoundaryComponent, Domain};
use nslin::losses::{
    momentum_residual, nonlinear_momentum_residual, pressure_residual, FrozenFields, FrozenPoint, LossContext,
    LossWeights, SchemeId,
};
use nslin::mlp::{loss_param_gradient, Jet2, JetBatch, JetOrder, MscaleNet, Participant, Point};
use nslin::model::{Architecture, FieldSlot, FlowModel};
use nslin::problem::{exact, forcing, forcing_div, FlowParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value and the bound it was held to.
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:<34} {}", self.name, self.detail)
    }
}

fn bound(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst < tol,
        detail: format!("worst {worst:.3e} < {tol:.0e}"),
    }
}

/// Uniform weights with standard deviation 0.5.
fn random_net(rng: &mut ChaCha8Rng, hidden: &[usize], out: usize, scales: &[f64]) -> MscaleNet {
    let mut net = MscaleNet::init(hidden, out, scales, rng).expect("valid shape");
    let a = 0.5 * 3f64.sqrt();
    let flat: Vec<f64> = (0..net.num_params()).map(|_| rng.random_range(-a..a)).collect();
    net.set_flat(&flat).expect("same length");
    net
}

fn random_point<R: Rng>(rng: &mut R, domain: &Domain) -> Point {
    let r = domain.rect();
    [rng.random_range(r.xmin..r.xmax), rng.random_range(r.ymin..r.ymax)]
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Fourth-order central difference.
fn central<F: Fn(Point) -> f64>(f: F, x: Point, dir: usize, h: f64) -> f64 {
    let at = |k: f64| {
        let mut p = x;
        p[dir] += k * h;
        f(p)
    };
    (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
}

/// Spatial gradient and Hessian of 100 random nets against differences of
/// point values and of gradients.
pub fn jets_vs_fd(seed: u64, domain: &Domain) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let depth = 1 + trial % 4;
        let width = [4, 8, 16, 32][trial % 4];
        let scales: &[f64] = if trial % 3 == 0 { &[1.0, 2.0] } else { &[1.0] };
        let net = random_net(&mut rng, &vec![width; depth], 1, scales);
        let x = random_point(&mut rng, domain);
        let j = net.forward_jet(x).expect("finite")[0];
        let f = |p: Point| net.forward(p).expect("finite")[0];
        let gx = |p: Point| net.forward_jet(p).expect("finite")[0].grad[0];
        let gy = |p: Point| net.forward_jet(p).expect("finite")[0].grad[1];
        for (a, b) in [
            (j.grad[0], central(f, x, 0, h)),
            (j.grad[1], central(f, x, 1, h)),
            (j.hess[0], central(gx, x, 0, h)),
            (j.hess[1], central(gx, x, 1, h)),
            (j.hess[1], central(gy, x, 0, h)),
            (j.hess[2], central(gy, x, 1, h)),
        ] {
            worst = worst.max(rel_err(a, b));
        }
    }
    bound("jets vs finite differences", worst, 1e-6)
}

fn laplacian_sq(outs: &[JetBatch]) -> (f64, Vec<JetBatch>) {
    let b = &outs[0];
    let mut adj = JetBatch::zeros(b.order(), b.n_points(), b.width());
    let mut total = 0.0;
    for i in 0..b.n_points() {
        let lap = b.jet(i, 0).laplacian();
        total += lap * lap;
        let seed = Jet2 {
            value: 0.0,
            grad: [0.0; 2],
            hess: [2.0 * lap, 0.0, 2.0 * lap],
        };
        adj.add_jet(i, 0, &seed);
    }
    (total, vec![adj])
}

fn flat_fd_worst<F: Fn(&[f64]) -> f64>(base: &[f64], analytic: &[f64], eval: F, floor: f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut v = base.to_vec();
    for k in 0..base.len() {
        v[k] = base[k] + h;
        let up = eval(&v);
        v[k] = base[k] - h;
        let down = eval(&v);
        v[k] = base[k];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((analytic[k] - fd).abs() / fd.abs().max(floor));
    }
    worst
}

/// Parameter gradient of `sum (Δu)^2` against central differences.
pub fn laplacian_gradient_vs_fd(seed: u64, domain: &Domain) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for scales in [vec![1.0], vec![1.0, 3.0]] {
        let net = random_net(&mut rng, &[6, 5], 1, &scales);
        let pts: Vec<Point> = (0..3).map(|_| random_point(&mut rng, domain)).collect();
        let participant = Participant {
            net: &net,
            points: &pts,
            order: JetOrder::Second,
        };
        let (_, grads) = loss_param_gradient(&[participant], laplacian_sq).expect("finite");
        let eval = |flat: &[f64]| {
            let mut n = net.clone();
            n.set_flat(flat).expect("same length");
            laplacian_sq(&[n.forward_batch(&pts, JetOrder::Second).expect("finite")]).0
        };
        worst = worst.max(flat_fd_worst(&net.to_flat(), &grads[0].to_flat(), eval, 1.0));
    }
    bound("laplacian loss gradient vs FD", worst, 1e-5)
}

/// Full batch-loss gradients of every scheme against central differences.
pub fn scheme_gradients_vs_fd(seed: u64, flow: &FlowParams, domain: &Domain) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::mscale(&[5, 4], &[1.0, 2.0]);
    let mut worst: f64 = 0.0;
    for scheme in SchemeId::ALL {
        let model = FlowModel::init(&arch, false, scheme == SchemeId::Vgvp, &mut rng).expect("valid");
        let other = FlowModel::init(&arch, false, false, &mut rng).expect("valid");
        let frozen = FrozenFields::snapshot(&other);
        let pts = domain.sample_interior(6, &mut rng).expect("sampling");
        let bnd = domain.sample_boundary(4, &mut rng);
        let weights = LossWeights { w_bc: 1.3, w_p: 0.7 };
        fn ctx<'a>(
            scheme: SchemeId,
            m: &'a FlowModel,
            frozen: &'a FrozenFields,
            weights: LossWeights,
            flow: &'a FlowParams,
        ) -> LossContext<'a> {
            LossContext {
                scheme,
                model: m,
                frozen: Some(frozen),
                weights,
                flow,
            }
        }
        let (_, grads) = ctx(scheme, &model, &frozen, weights, flow).batch_loss_and_grad(&pts, &bnd).expect("finite");
        for (k, g) in grads.iter().enumerate() {
            let eval = |flat: &[f64]| {
                let mut m = model.clone();
                m.nets_mut()[k].set_flat(flat).expect("same length");
                ctx(scheme, &m, &frozen, weights, flow).batch_loss(&pts, &bnd).expect("finite").total
            };
            worst = worst.max(flat_fd_worst(&model.nets()[k].to_flat(), &g.to_flat(), eval, 1e-3));
        }
    }
    bound("scheme loss gradients vs FD", worst, 1e-5)
}

fn points(seed: u64, domain: &Domain, n: usize) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_point(&mut rng, domain)).collect()
}

pub fn exact_divergence(seed: u64, flow: &FlowParams, domain: &Domain) -> Check {
    let worst = points(seed, domain, 1000)
        .into_iter()
        .map(|x| exact(flow, x).divergence().abs())
        .fold(0.0, f64::max);
    bound("exact velocity divergence", worst, 1e-12)
}

/// Momentum operator applied to the exact fields minus the forcing.
pub fn momentum_closure(seed: u64, flow: &FlowParams, domain: &Domain) -> Check {
    let worst = points(seed, domain, 1000)
        .into_iter()
        .map(|x| {
            let e = exact(flow, x);
            let f = forcing(flow, x);
            let r1 = e.u * e.du[0] + e.v * e.du[1] - flow.nu() * e.laplacian_u() + e.dp[0] - f[0];
            let r2 = e.u * e.dv[0] + e.v * e.dv[1] - flow.nu() * e.laplacian_v() + e.dp[1] - f[1];
            r1.abs().max(r2.abs())
        })
        .fold(0.0, f64::max);
    bound("momentum residual of exact fields", worst, 1e-10)
}

/// `Δp + 2(v_x u_y - u_x v_y) = ∇·f` for the exact fields.
pub fn pressure_poisson(seed: u64, flow: &FlowParams, domain: &Domain) -> Check {
    let worst = points(seed, domain, 1000)
        .into_iter()
        .map(|x| {
            let e = exact(flow, x);
            let lhs = e.laplacian_p() + 2.0 * (-e.du[0] * e.dv[1] + e.du[1] * e.dv[0]);
            (lhs - forcing_div(flow, x)).abs()
        })
        .fold(0.0, f64::max);
    bound("pressure-Poisson identity", worst, 1e-8)
}

/// Every linearized residual and the pressure residual vanish on the exact
/// fields when the frozen velocity is exact too.
pub fn scheme_closure(seed: u64, flow: &FlowParams, domain: &Domain) -> Check {
    let mut worst: f64 = 0.0;
    for x in points(seed, domain, 500) {
        let e = exact(flow, x);
        let u = Jet2 { value: e.u, grad: e.du, hess: e.ddu };
        let v = Jet2 { value: e.v, grad: e.dv, hess: e.ddv };
        let p = Jet2 { value: e.p, grad: e.dp, hess: e.ddp };
        let fr = FrozenPoint::from_jets(&u, &v);
        let f = forcing(flow, x);
        for scheme in SchemeId::LINEARIZED {
            let r = momentum_residual(scheme, &u, &v, &p, &fr, flow.nu(), f).expect("linearized");
            worst = worst.max(r[0].abs()).max(r[1].abs());
        }
        worst = worst.max(pressure_residual(&u, &v, &p, forcing_div(flow, x)).abs());
    }
    bound("scheme residuals of exact fields", worst, 1e-8)
}

/// With the frozen snapshot equal to the live nets, each linearized residual
/// reduces to the nonlinear one.
pub fn fixed_point_identity(seed: u64, flow: &FlowParams, domain: &Domain) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..4 {
        let arch = Architecture::mscale(&[16, 16], &[1.0, 2.0]);
        let model = FlowModel::init(&arch, trial % 2 == 1, false, &mut rng).expect("valid");
        let pts = domain.sample_interior(100, &mut rng).expect("sampling");
        let frozen = FrozenFields::snapshot(&model).eval(&pts).expect("finite");
        let batches: Vec<_> = model
            .nets()
            .iter()
            .map(|n| n.forward_batch(&pts, JetOrder::Second).expect("finite"))
            .collect();
        let jet = |slot, i| {
            let (k, c) = model.locate(slot).expect("slot");
            batches[k].jet(i, c)
        };
        for (i, &x) in pts.iter().enumerate() {
            let (u, v, p) = (jet(FieldSlot::U, i), jet(FieldSlot::V, i), jet(FieldSlot::P, i));
            let f = forcing(flow, x);
            let nl = nonlinear_momentum_residual(&u, &v, &p, flow.nu(), f);
            for scheme in SchemeId::LINEARIZED {
                let r = momentum_residual(scheme, &u, &v, &p, &frozen[i], flow.nu(), f).expect("linearized");
                for k in 0..2 {
                    worst = worst.max((r[k] - nl[k]).abs() / nl[k].abs().max(1.0));
                }
            }
        }
    }
    bound("linearized = nonlinear at fixed point", worst, 1e-12)
}

/// Chi-squared uniformity of interior samples over grid cells clear of
/// holes, at the 0.1% level.
pub fn interior_uniformity(seed: u64, domain: &Domain) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 100_000;
    let (nx, ny) = (10, 5);
    let r = *domain.rect();
    let (cw, ch) = (r.width() / nx as f64, r.height() / ny as f64);
    let clear = |i: usize, j: usize| {
        let (x0, y0) = (r.xmin + i as f64 * cw, r.ymin + j as f64 * ch);
        domain.holes().iter().all(|h| {
            let cx = h.center[0].clamp(x0, x0 + cw);
            let cy = h.center[1].clamp(y0, y0 + ch);
            (cx - h.center[0]).hypot(cy - h.center[1]) > h.radius
        })
    };
    let pts = match domain.sample_interior(n, &mut rng) {
        Ok(p) => p,
        Err(e) => {
            return Check {
                name: "interior sampler uniformity",
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let mut counts = vec![0usize; nx * ny];
    for p in &pts {
        let i = (((p[0] - r.xmin) / cw) as usize).min(nx - 1);
        let j = (((p[1] - r.ymin) / ch) as usize).min(ny - 1);
        counts[j * nx + i] += 1;
    }
    let cells: Vec<usize> = (0..nx * ny).filter(|&k| clear(k % nx, k / nx)).collect();
    let total: usize = cells.iter().map(|&k| counts[k]).sum();
    let expected = total as f64 / cells.len().max(1) as f64;
    let chi2: f64 = cells.iter().map(|&k| (counts[k] as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(cells.len().saturating_sub(1).max(1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.999);
    Check {
        name: "interior sampler uniformity",
        passed: cells.len() >= 2 && chi2 < critical,
        detail: format!("chi2 {chi2:.1} < {critical:.1} ({} cells)", cells.len()),
    }
}

/// Share of boundary samples on holes against the perimeter ratio, 4 sigma.
pub fn boundary_proportions(seed: u64, domain: &Domain) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 100_000;
    let samples = domain.sample_boundary(n, &mut rng);
    let on_holes = samples
        .iter()
        .filter(|s| matches!(s.component, BoundaryComponent::Hole(_)))
        .count();
    let hole_len: f64 = domain.holes().iter().map(|h| 2.0 * PI * h.radius).sum();
    let prob = hole_len / domain.perimeter();
    let sd = (n as f64 * prob * (1.0 - prob)).sqrt().max(1e-12);
    let z = (on_holes as f64 - n as f64 * prob).abs() / sd;
    let offset = samples.iter().map(|s| domain.boundary_offset(s)).fold(0.0, f64::max);
    Check {
        name: "boundary sampler proportions",
        passed: z < 4.0 && offset < 1e-12,
        detail: format!("|z| {z:.2} < 4, max offset {offset:.1e}"),
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// The whole suite. Each check draws from its own stream of `seed`.
pub fn run_suite(seed: u64, flow: &FlowParams, domain: &Domain) -> Report {
    let start = Instant::now();
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
    let checks = vec![
        jets_vs_fd(s(1), domain),
        laplacian_gradient_vs_fd(s(2), domain),
        scheme_gradients_vs_fd(s(3), flow, domain),
        exact_divergence(s(4), flow, domain),
        momentum_closure(s(5), flow, domain),
        pressure_poisson(s(6), flow, domain),
        scheme_closure(s(7), flow, domain),
        fixed_point_identity(s(8), flow, domain),
        interior_uniformity(s(9), domain),
        boundary_proportions(s(10), domain),
    ];
    Report {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}
