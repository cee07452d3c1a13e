//! Kovasznay-type manufactured solution with frequencies `(m, n)`:
//!
//! ```text
//! u = 1 - e^{λx} cos θ
//! v = (λ / 2nπ) e^{λx} sin θ + (m / n) e^{λx} cos θ
//! p = (1 - e^{2λx}) / 2
//! θ = 2π(m x + n y),  λ = Re/2 - sqrt(Re²/4 + 4π²),  Re = 1/ν
//! ```
//!
//! The velocity is divergence free for every `(m, n)`. It does not solve the
//! unforced equations unless `m = 0`, so the body force is manufactured from
//! the closed-form partials.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundarySample;
use crate::mlp::Point;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("frequency n must be nonzero")]
    ZeroN,
    #[error("viscosity must be positive and finite, got {0}")]
    Viscosity(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    m: i64,
    n: i64,
    nu: f64,
}

impl FlowParams {
    pub fn new(m: i64, n: i64, nu: f64) -> Result<Self, FlowError> {
        if n == 0 {
            return Err(FlowError::ZeroN);
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(FlowError::Viscosity(nu));
        }
        Ok(Self { m, n, nu })
    }

    pub fn m(&self) -> i64 {
        self.m
    }

    pub fn n(&self) -> i64 {
        self.n
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn reynolds(&self) -> f64 {
        1.0 / self.nu
    }

    pub fn lambda(&self) -> f64 {
        let re = self.reynolds();
        re / 2.0 - (re * re / 4.0 + 4.0 * PI * PI).sqrt()
    }
}

/// Exact velocity and pressure with the partials the residuals need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactField {
    pub u: f64,
    pub v: f64,
    pub p: f64,
    /// `[u_x, u_y]`
    pub du: [f64; 2],
    /// `[v_x, v_y]`
    pub dv: [f64; 2],
    /// `[u_xx, u_xy, u_yy]`
    pub ddu: [f64; 3],
    /// `[v_xx, v_xy, v_yy]`
    pub ddv: [f64; 3],
    /// `[p_x, p_y]`
    pub dp: [f64; 2],
    /// `[p_xx, p_xy, p_yy]`
    pub ddp: [f64; 3],
}

impl ExactField {
    /// `J[i][j] = d u_i / d x_j`
    pub fn jacobian(&self) -> [[f64; 2]; 2] {
        [self.du, self.dv]
    }

    pub fn jacobian_transpose(&self) -> [[f64; 2]; 2] {
        [[self.du[0], self.dv[0]], [self.du[1], self.dv[1]]]
    }

    pub fn divergence(&self) -> f64 {
        self.du[0] + self.dv[1]
    }

    pub fn laplacian_u(&self) -> f64 {
        self.ddu[0] + self.ddu[2]
    }

    pub fn laplacian_v(&self) -> f64 {
        self.ddv[0] + self.ddv[2]
    }

    pub fn laplacian_p(&self) -> f64 {
        self.ddp[0] + self.ddp[2]
    }
}

pub fn exact(fp: &FlowParams, x: Point) -> ExactField {
    let lam = fp.lambda();
    let a = 2.0 * PI * fp.m as f64;
    let b = 2.0 * PI * fp.n as f64;
    let theta = a * x[0] + b * x[1];
    let (sin, cos) = theta.sin_cos();
    let e = (lam * x[0]).exp();

    let u = 1.0 - e * cos;
    let du = [e * (a * sin - lam * cos), e * b * sin];
    let ddu = [
        e * ((a * a - lam * lam) * cos + 2.0 * a * lam * sin),
        e * b * (lam * sin + a * cos),
        e * b * b * cos,
    ];

    // v = (e / b) s with s = λ sin θ + a cos θ; s' = λ cos θ - a sin θ, s'' = -s.
    let s = lam * sin + a * cos;
    let sd = lam * cos - a * sin;
    let v = e * s / b;
    let dv = [e * (lam * s + a * sd) / b, e * sd];
    let ddv = [
        e * (lam * lam * s + 2.0 * lam * a * sd - a * a * s) / b,
        e * (lam * sd - a * s),
        -e * b * s,
    ];

    let e2 = e * e;
    let p = 0.5 * (1.0 - e2);
    let dp = [-lam * e2, 0.0];
    let ddp = [-2.0 * lam * lam * e2, 0.0, 0.0];

    ExactField {
        u,
        v,
        p,
        du,
        dv,
        ddu,
        ddv,
        dp,
        ddp,
    }
}

/// Body force `f = (u·∇)u - νΔu + ∇p` of the exact fields.
pub fn forcing(fp: &FlowParams, x: Point) -> [f64; 2] {
    let e = exact(fp, x);
    let nu = fp.nu;
    [
        e.u * e.du[0] + e.v * e.du[1] - nu * e.laplacian_u() + e.dp[0],
        e.u * e.dv[0] + e.v * e.dv[1] - nu * e.laplacian_v() + e.dp[1],
    ]
}

/// `∇·f`, differentiated term by term from [`forcing`]. The viscous term
/// contributes `-νΔ(∇·u)`, which vanishes for the divergence-free exact field.
pub fn forcing_div(fp: &FlowParams, x: Point) -> f64 {
    let e = exact(fp, x);
    let [ux, uy] = e.du;
    let [vx, vy] = e.dv;
    ux * ux + 2.0 * uy * vx + vy * vy + e.u * (e.ddu[0] + e.ddv[1]) + e.v * (e.ddu[1] + e.ddv[2]) + e.laplacian_p()
}

/// Dirichlet data: the exact velocity at a boundary sample.
pub fn boundary_value(fp: &FlowParams, s: &BoundarySample) -> [f64; 2] {
    let e = exact(fp, s.point);
    [e.u, e.v]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bench() -> FlowParams {
        FlowParams::new(1, 2, 0.05).unwrap()
    }

    #[test]
    fn params_validate() {
        assert!(FlowParams::new(1, 0, 0.05).is_err());
        assert!(FlowParams::new(1, 1, 0.0).is_err());
        assert!(FlowParams::new(1, 1, f64::NAN).is_err());
        for nu in [1e-3, 0.05, 1.0, 100.0] {
            let fp = FlowParams::new(1, 2, nu).unwrap();
            assert!(fp.lambda() < 0.0);
            assert_eq!(fp.reynolds(), 1.0 / nu);
        }
    }

    #[test]
    fn values_at_origin_line() {
        let fp = bench();
        let e = exact(&fp, [0.0, 0.0]);
        assert_eq!(e.u, 0.0);
        for y in [0.1, 0.37, 0.9] {
            assert_eq!(exact(&fp, [0.0, y]).p, 0.0);
        }
        let s = BoundarySample {
            point: [0.0, 0.0],
            component: crate::geometry::BoundaryComponent::Left,
        };
        let g = boundary_value(&fp, &s);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.5).abs() < 1e-15);
    }
}
