//! Closed-form benchmark fields checked against finite differences and the
//! identities they must satisfy.

use nslin::mlp::Point;
use nslin::problem::{exact, forcing, forcing_div, FlowParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn points(seed: u64, n: usize) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)])
        .collect()
}

fn central<F: Fn(Point) -> f64>(f: F, x: Point, dir: usize) -> f64 {
    let mut p = x;
    let mut m = x;
    p[dir] += H;
    m[dir] -= H;
    (f(p) - f(m)) / (2.0 * H)
}

fn flows() -> Vec<FlowParams> {
    vec![
        FlowParams::new(1, 2, 0.05).unwrap(),
        FlowParams::new(4, 3, 0.05).unwrap(),
        FlowParams::new(0, 1, 0.025).unwrap(),
        FlowParams::new(-2, 5, 0.3).unwrap(),
    ]
}

#[test]
fn divergence_free() {
    for fp in flows() {
        for x in points(1, 1000) {
            let e = exact(&fp, x);
            assert!(e.divergence().abs() < 1e-12, "{fp:?} at {x:?}: {}", e.divergence());
        }
    }
}

#[test]
fn partials_match_finite_differences() {
    for fp in flows() {
        let scale = (2.0 * std::f64::consts::PI * fp.m().abs().max(fp.n().abs()) as f64).max(1.0);
        for x in points(2, 100) {
            let e = exact(&fp, x);
            let fu = |p| exact(&fp, p).u;
            let fv = |p| exact(&fp, p).v;
            let fpr = |p| exact(&fp, p).p;
            let pairs = [
                (e.du[0], central(fu, x, 0)),
                (e.du[1], central(fu, x, 1)),
                (e.dv[0], central(fv, x, 0)),
                (e.dv[1], central(fv, x, 1)),
                (e.dp[0], central(fpr, x, 0)),
                (e.dp[1], central(fpr, x, 1)),
                (e.ddu[0], central(|p| exact(&fp, p).du[0], x, 0)),
                (e.ddu[1], central(|p| exact(&fp, p).du[0], x, 1)),
                (e.ddu[1], central(|p| exact(&fp, p).du[1], x, 0)),
                (e.ddu[2], central(|p| exact(&fp, p).du[1], x, 1)),
                (e.ddv[0], central(|p| exact(&fp, p).dv[0], x, 0)),
                (e.ddv[1], central(|p| exact(&fp, p).dv[0], x, 1)),
                (e.ddv[2], central(|p| exact(&fp, p).dv[1], x, 1)),
                (e.ddp[0], central(|p| exact(&fp, p).dp[0], x, 0)),
                (e.ddp[2], central(|p| exact(&fp, p).dp[1], x, 1)),
            ];
            for (k, (a, b)) in pairs.iter().enumerate() {
                // Truncation grows with the cube of the wavenumber.
                let tol = 1e-6 * (scale / (2.0 * std::f64::consts::PI)).powi(3).max(1.0);
                assert!(rel(*a, *b) < tol, "{fp:?} partial {k} at {x:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn forcing_matches_finite_difference_operator() {
    // Rebuild (u·∇)u - νΔu + ∇p from nothing but point values of u, v, p.
    let fp = FlowParams::new(1, 2, 0.05).unwrap();
    let h = 1e-4;
    for x in points(3, 100) {
        let val = |p: Point| {
            let e = exact(&fp, p);
            [e.u, e.v, e.p]
        };
        let at = |dx: f64, dy: f64| val([x[0] + dx, x[1] + dy]);
        let c = at(0.0, 0.0);
        let (xp, xm, yp, ym) = (at(h, 0.0), at(-h, 0.0), at(0.0, h), at(0.0, -h));
        let d = |k: usize| {
            (
                (xp[k] - xm[k]) / (2.0 * h),
                (yp[k] - ym[k]) / (2.0 * h),
                (xp[k] - 2.0 * c[k] + xm[k]) / (h * h) + (yp[k] - 2.0 * c[k] + ym[k]) / (h * h),
            )
        };
        let (ux, uy, lu) = d(0);
        let (vx, vy, lv) = d(1);
        let (px, py, _) = d(2);
        let fd = [
            c[0] * ux + c[1] * uy - fp.nu() * lu + px,
            c[0] * vx + c[1] * vy - fp.nu() * lv + py,
        ];
        let f = forcing(&fp, x);
        for k in 0..2 {
            assert!(rel(f[k], fd[k]) < 1e-6, "component {k} at {x:?}: {} vs {}", f[k], fd[k]);
        }
    }
}

#[test]
fn forcing_divergence_matches_finite_differences() {
    for fp in flows().into_iter().take(2) {
        for x in points(4, 100) {
            let fdx = central(|p| forcing(&fp, p)[0], x, 0);
            let fdy = central(|p| forcing(&fp, p)[1], x, 1);
            let d = forcing_div(&fp, x);
            assert!(rel(d, fdx + fdy) < 1e-5, "{fp:?} at {x:?}: {d} vs {}", fdx + fdy);
        }
    }
}

#[test]
fn pressure_poisson_identity() {
    let fp = FlowParams::new(1, 2, 0.05).unwrap();
    for x in points(5, 1000) {
        let e = exact(&fp, x);
        let lhs = e.laplacian_p() + 2.0 * (-e.du[0] * e.dv[1] + e.du[1] * e.dv[0]);
        assert!((lhs - forcing_div(&fp, x)).abs() < 1e-8);
    }
}

#[test]
fn momentum_closure_is_exact() {
    for fp in flows() {
        for x in points(6, 200) {
            let e = exact(&fp, x);
            let f = forcing(&fp, x);
            let r1 = e.u * e.du[0] + e.v * e.du[1] - fp.nu() * e.laplacian_u() + e.dp[0] - f[0];
            let r2 = e.u * e.dv[0] + e.v * e.dv[1] - fp.nu() * e.laplacian_v() + e.dp[1] - f[1];
            assert!(r1.abs() < 1e-10 && r2.abs() < 1e-10);
        }
    }
}

#[test]
fn decay_far_downstream() {
    // e^{λx} -> 0: velocity tends to (1, 0), pressure to 1/2, ∇·f to 0.
    let fp = FlowParams::new(1, 2, 0.05).unwrap();
    let e = exact(&fp, [40.0, 0.3]);
    assert!((e.u - 1.0).abs() < 1e-20 + 1e-15);
    assert!(e.v.abs() < 1e-15);
    assert!((e.p - 0.5).abs() < 1e-15);
    assert!(forcing_div(&fp, [40.0, 0.3]).abs() < 1e-12);
}
