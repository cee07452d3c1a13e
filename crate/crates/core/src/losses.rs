//! Pointwise residuals and Monte Carlo losses for the linearized schemes and
//! the nonlinear velocity-gradient-velocity-pressure (VGVP) formulation.
//!
//! Every residual is affine in the live network jets once the frozen fields
//! are fixed, so each one comes with its partial derivatives with respect to
//! the `u`, `v`, `p` (and gradient-tensor) jets. Those partials are the
//! adjoints fed back through the jet propagation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundarySample;
use crate::mlp::{Jet2, JetBatch, JetOrder, MscaleNet, NetError, NetGradient, NetTape, Point};
use crate::model::{FieldSlot, FlowModel};
use crate::problem::{self, FlowParams};

/// Points per evaluation chunk. Chunk sums are reduced in index order, so the
/// result does not depend on how chunks are scheduled.
pub const CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty {0} batch")]
    EmptyBatch(&'static str),
    #[error("scheme {0} needs frozen velocity fields")]
    MissingFrozen(SchemeId),
    #[error("the VGVP scheme needs a gradient-tensor network")]
    MissingGradNet,
    #[error("VGVP has no linearized momentum residual; use vgvp_residuals")]
    NotLinearized,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    GradFixed,
    VFixed,
    VFixed1,
    Hybrid,
    Vgvp,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::GradFixed,
        SchemeId::VFixed,
        SchemeId::VFixed1,
        SchemeId::Hybrid,
        SchemeId::Vgvp,
    ];

    pub const LINEARIZED: [SchemeId; 4] = [SchemeId::GradFixed, SchemeId::VFixed, SchemeId::VFixed1, SchemeId::Hybrid];

    pub fn is_linearized(self) -> bool {
        self != SchemeId::Vgvp
    }

    pub fn key(self) -> &'static str {
        match self {
            SchemeId::GradFixed => "gradfixed",
            SchemeId::VFixed => "vfixed",
            SchemeId::VFixed1 => "vfixed1",
            SchemeId::Hybrid => "hybrid",
            SchemeId::Vgvp => "vgvp",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.key() == s)
            .ok_or_else(|| format!("unknown scheme '{s}' (expected gradfixed, vfixed, vfixed1, hybrid or vgvp)"))
    }
}

/// Penalty weights of the boundary and pressure-Poisson terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_bc: f64,
    pub w_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_bc: 1.0, w_p: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub r_u: f64,
    pub r_v: f64,
    pub r_p: f64,
    pub r_div: f64,
    pub r_grad: f64,
    pub b_u: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(mut self, w: &LossWeights) -> Self {
        self.total = self.r_u + self.r_v + w.w_p * self.r_p + w.w_bc * self.b_u + self.r_div + self.r_grad;
        self
    }

    /// Component-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.r_u += b.r_u;
            m.r_v += b.r_v;
            m.r_p += b.r_p;
            m.r_div += b.r_div;
            m.r_grad += b.r_grad;
            m.b_u += b.b_u;
            m.total += b.total;
        }
        m.r_u /= n;
        m.r_v /= n;
        m.r_p /= n;
        m.r_div /= n;
        m.r_grad /= n;
        m.b_u /= n;
        m.total /= n;
        m
    }
}

/// Frozen velocities and their gradients at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrozenPoint {
    pub u: f64,
    pub v: f64,
    /// `[u_x, u_y]`
    pub du: [f64; 2],
    /// `[v_x, v_y]`
    pub dv: [f64; 2],
}

impl FrozenPoint {
    pub fn from_jets(u: &Jet2, v: &Jet2) -> Self {
        Self {
            u: u.value,
            v: v.value,
            du: u.grad,
            dv: v.grad,
        }
    }
}

/// Deep copy of the velocity networks taken at snapshot time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenFields {
    nets: Vec<MscaleNet>,
    u: (usize, usize),
    v: (usize, usize),
}

impl FrozenFields {
    pub fn snapshot(model: &FlowModel) -> Self {
        let idx = model.velocity_nets();
        let nets = idx.iter().map(|&k| model.nets()[k].clone()).collect();
        let remap = |slot| {
            let (k, c) = model.locate(slot).expect("velocity slot");
            (idx.iter().position(|&i| i == k).expect("velocity net"), c)
        };
        Self {
            nets,
            u: remap(FieldSlot::U),
            v: remap(FieldSlot::V),
        }
    }

    pub fn nets(&self) -> &[MscaleNet] {
        &self.nets
    }

    /// True when this snapshot could have been taken from `model`.
    pub fn compatible_with(&self, model: &FlowModel) -> bool {
        let fresh = Self::snapshot(model);
        fresh.u == self.u
            && fresh.v == self.v
            && fresh.nets.len() == self.nets.len()
            && fresh.nets.iter().zip(&self.nets).all(|(a, b)| a.same_shape(b))
    }

    pub fn eval(&self, points: &[Point]) -> Result<Vec<FrozenPoint>, NetError> {
        let batches = self
            .nets
            .iter()
            .map(|n| n.forward_batch(points, JetOrder::First))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((0..points.len())
            .map(|i| {
                FrozenPoint::from_jets(
                    &batches[self.u.0].jet(i, self.u.1),
                    &batches[self.v.0].jet(i, self.v.1),
                )
            })
            .collect())
    }
}

/// `-νΔu + (u·∇)u + ∇p - f` without linearization.
pub fn nonlinear_momentum_residual(u: &Jet2, v: &Jet2, p: &Jet2, nu: f64, f: [f64; 2]) -> [f64; 2] {
    [
        -nu * u.laplacian() + u.value * u.grad[0] + v.value * u.grad[1] + p.grad[0] - f[0],
        -nu * v.laplacian() + u.value * v.grad[0] + v.value * v.grad[1] + p.grad[1] - f[1],
    ]
}

/// Momentum residuals of a linearized scheme.
pub fn momentum_residual(
    scheme: SchemeId,
    u: &Jet2,
    v: &Jet2,
    p: &Jet2,
    fr: &FrozenPoint,
    nu: f64,
    f: [f64; 2],
) -> Result<[f64; 2], LossError> {
    let visc = [-nu * u.laplacian(), -nu * v.laplacian()];
    let conv = match scheme {
        SchemeId::GradFixed => [
            fr.du[0] * u.value + fr.du[1] * v.value,
            fr.dv[0] * u.value + fr.dv[1] * v.value,
        ],
        SchemeId::VFixed => [
            u.grad[0] * fr.u + u.grad[1] * fr.v,
            v.grad[0] * fr.u + v.grad[1] * fr.v,
        ],
        SchemeId::VFixed1 => [
            u.grad[0] * fr.u + u.grad[1] * fr.v + fr.du[0] * u.value + fr.du[1] * v.value
                - fr.du[0] * fr.u
                - fr.du[1] * fr.v,
            v.grad[0] * fr.u + v.grad[1] * fr.v + fr.dv[0] * u.value + fr.dv[1] * v.value
                - fr.dv[0] * fr.u
                - fr.dv[1] * fr.v,
        ],
        SchemeId::Hybrid => [
            0.5 * (u.grad[0] * fr.u + u.grad[1] * fr.v + fr.du[0] * u.value + fr.du[1] * v.value),
            0.5 * (v.grad[0] * fr.u + v.grad[1] * fr.v + fr.dv[0] * u.value + fr.dv[1] * v.value),
        ],
        SchemeId::Vgvp => return Err(LossError::NotLinearized),
    };
    Ok([
        visc[0] + conv[0] + p.grad[0] - f[0],
        visc[1] + conv[1] + p.grad[1] - f[1],
    ])
}

/// Partials of the two momentum residuals with respect to the `(u, v, p)`
/// jets: `partials[i][field]`.
fn momentum_partials(scheme: SchemeId, fr: &FrozenPoint, nu: f64) -> [[Jet2; 3]; 2] {
    let lap = Jet2 {
        value: 0.0,
        grad: [0.0; 2],
        hess: [-nu, 0.0, -nu],
    };
    let dpx = Jet2 {
        grad: [1.0, 0.0],
        ..Jet2::ZERO
    };
    let dpy = Jet2 {
        grad: [0.0, 1.0],
        ..Jet2::ZERO
    };
    // Weight of the frozen-velocity transport (u^tmp·∇) and of the
    // frozen-gradient term (∇u^tmp)·u.
    let (transport, reaction) = match scheme {
        SchemeId::GradFixed => (0.0, 1.0),
        SchemeId::VFixed => (1.0, 0.0),
        SchemeId::VFixed1 => (1.0, 1.0),
        SchemeId::Hybrid => (0.5, 0.5),
        SchemeId::Vgvp => unreachable!("checked by caller"),
    };
    let transport_jet = Jet2 {
        grad: [transport * fr.u, transport * fr.v],
        ..Jet2::ZERO
    };
    let mut r = [[Jet2::ZERO; 3]; 2];
    let rows = [fr.du, fr.dv];
    for i in 0..2 {
        r[i][i] = lap;
        r[i][i].add_scaled(1.0, &transport_jet);
        r[i][0].value += reaction * rows[i][0];
        r[i][1].value += reaction * rows[i][1];
    }
    r[0][2] = dpx;
    r[1][2] = dpy;
    r
}

/// `Δp + 2(-u_x v_y + u_y v_x) - ∇·f`
pub fn pressure_residual(u: &Jet2, v: &Jet2, p: &Jet2, div_f: f64) -> f64 {
    p.laplacian() + 2.0 * (-u.grad[0] * v.grad[1] + u.grad[1] * v.grad[0]) - div_f
}

fn pressure_partials(u: &Jet2, v: &Jet2) -> [Jet2; 3] {
    [
        Jet2 {
            grad: [-2.0 * v.grad[1], 2.0 * v.grad[0]],
            ..Jet2::ZERO
        },
        Jet2 {
            grad: [2.0 * u.grad[1], -2.0 * u.grad[0]],
            ..Jet2::ZERO
        },
        Jet2 {
            hess: [1.0, 0.0, 1.0],
            ..Jet2::ZERO
        },
    ]
}

/// Residuals of the first-order (VGVP) system at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VgvpResiduals {
    /// `ν∇·U - U·u - ∇p + f`, per component.
    pub momentum: [f64; 2],
    pub pressure: f64,
    /// `U_ij - ∂_j u_i`
    pub consistency: [[f64; 2]; 2],
    /// `u_x + v_y`
    pub divergence: f64,
}

/// `grad` holds the tensor entries `[U11, U12, U21, U22]` where
/// `U_ij ≈ ∂u_i/∂x_j`, so `U·u` is the convection vector `(u·∇)u` and
/// `∇·U` (row-wise) is `Δu`.
pub fn vgvp_residuals(u: &Jet2, v: &Jet2, p: &Jet2, grad: &[Jet2; 4], nu: f64, f: [f64; 2], div_f: f64) -> VgvpResiduals {
    let vel = [u, v];
    let mut momentum = [0.0; 2];
    let mut consistency = [[0.0; 2]; 2];
    for i in 0..2 {
        let (ui1, ui2) = (&grad[2 * i], &grad[2 * i + 1]);
        momentum[i] = nu * (ui1.grad[0] + ui2.grad[1]) - (ui1.value * u.value + ui2.value * v.value) - p.grad[i] + f[i];
        for j in 0..2 {
            consistency[i][j] = grad[2 * i + j].value - vel[i].grad[j];
        }
    }
    VgvpResiduals {
        momentum,
        pressure: pressure_residual(u, v, p, div_f),
        consistency,
        divergence: u.grad[0] + v.grad[1],
    }
}

/// Forcing data cached per interior point.
#[derive(Clone, Copy, Debug)]
struct Source {
    f: [f64; 2],
    div_f: f64,
}

/// Raw sums of squared residuals over a set of points.
#[derive(Clone, Copy, Debug, Default)]
struct Sums {
    ru: f64,
    rv: f64,
    rp: f64,
    rdiv: f64,
    rgrad: f64,
    bu: f64,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.ru += o.ru;
        self.rv += o.rv;
        self.rp += o.rp;
        self.rdiv += o.rdiv;
        self.rgrad += o.rgrad;
        self.bu += o.bu;
    }
}

/// Everything a batch evaluation needs besides the point sets.
pub struct LossContext<'a> {
    pub scheme: SchemeId,
    pub model: &'a FlowModel,
    pub frozen: Option<&'a FrozenFields>,
    pub weights: LossWeights,
    pub flow: &'a FlowParams,
}

struct Scales {
    interior: f64,
    boundary: f64,
    w: LossWeights,
}

impl LossContext<'_> {
    fn check(&self, interior: &[Point], boundary: &[BoundarySample]) -> Result<(), LossError> {
        if interior.is_empty() {
            return Err(LossError::EmptyBatch("interior"));
        }
        if boundary.is_empty() {
            return Err(LossError::EmptyBatch("boundary"));
        }
        if self.scheme.is_linearized() && self.frozen.is_none() {
            return Err(LossError::MissingFrozen(self.scheme));
        }
        if !self.scheme.is_linearized() && !self.model.has_grad() {
            return Err(LossError::MissingGradNet);
        }
        Ok(())
    }

    /// Jet order each network must carry on interior points.
    fn interior_orders(&self) -> Vec<JetOrder> {
        let mut orders = vec![JetOrder::Value; self.model.nets().len()];
        let mut need = |slot, o: JetOrder| {
            let (k, _) = self.model.locate(slot).expect("slot present");
            orders[k] = orders[k].max(o);
        };
        if self.scheme.is_linearized() {
            need(FieldSlot::U, JetOrder::Second);
            need(FieldSlot::V, JetOrder::Second);
        } else {
            need(FieldSlot::U, JetOrder::First);
            need(FieldSlot::V, JetOrder::First);
            for k in 0..4 {
                need(FieldSlot::Grad(k), JetOrder::First);
            }
        }
        need(FieldSlot::P, JetOrder::Second);
        orders
    }

    fn eval_nets(&self, points: &[Point], orders: &[JetOrder], nets: &[usize], taped: bool) -> Result<(Vec<Option<JetBatch>>, Vec<Option<NetTape>>), NetError> {
        let mut batches: Vec<Option<JetBatch>> = (0..self.model.nets().len()).map(|_| None).collect();
        let mut tapes: Vec<Option<NetTape>> = (0..self.model.nets().len()).map(|_| None).collect();
        for &k in nets {
            let net = &self.model.nets()[k];
            if taped {
                let (b, t) = net.forward_taped(points, orders[k])?;
                batches[k] = Some(b);
                tapes[k] = Some(t);
            } else {
                batches[k] = Some(net.forward_batch(points, orders[k])?);
            }
        }
        Ok((batches, tapes))
    }

    fn interior_chunk(&self, points: &[Point], src: &[Source], sc: &Scales, taped: bool) -> Result<(Sums, Vec<Option<NetGradient>>), LossError> {
        let n = points.len();
        let orders = self.interior_orders();
        let all: Vec<usize> = (0..self.model.nets().len()).collect();
        let (batches, tapes) = self.eval_nets(points, &orders, &all, taped)?;
        let loc = |slot| self.model.locate(slot).expect("slot present");
        let get = |slot, i| {
            let (k, c) = loc(slot);
            batches[k].as_ref().expect("evaluated").jet(i, c)
        };
        let frozen = match self.frozen {
            Some(fr) if self.scheme.is_linearized() => Some(fr.eval(points)?),
            _ => None,
        };
        let mut adj: Vec<JetBatch> = self
            .model
            .nets()
            .iter()
            .zip(&orders)
            .map(|(net, &o)| JetBatch::zeros(o, n, net.output_dim()))
            .collect();
        let mut push = |slot, i, k: f64, j: &Jet2| {
            let (net, c) = loc(slot);
            adj[net].add_jet(i, c, &j.scaled(k));
        };
        let fields = [FieldSlot::U, FieldSlot::V, FieldSlot::P];
        let nu = self.flow.nu();
        let w = sc.w;
        let mut sums = Sums::default();
        for i in 0..n {
            let (u, v, p) = (get(FieldSlot::U, i), get(FieldSlot::V, i), get(FieldSlot::P, i));
            let s = src[i];
            let rp = pressure_residual(&u, &v, &p, s.div_f);
            sums.rp += rp * rp;
            if taped {
                let coef = 2.0 * w.w_p * rp * sc.interior;
                for (slot, d) in fields.iter().zip(pressure_partials(&u, &v)) {
                    push(*slot, i, coef, &d);
                }
            }
            if let Some(fr) = &frozen {
                let fr = &fr[i];
                let r = momentum_residual(self.scheme, &u, &v, &p, fr, nu, s.f)?;
                sums.ru += r[0] * r[0];
                sums.rv += r[1] * r[1];
                if taped {
                    let partials = momentum_partials(self.scheme, fr, nu);
                    for (ri, row) in r.iter().zip(&partials) {
                        let coef = 2.0 * ri * sc.interior;
                        for (slot, d) in fields.iter().zip(row) {
                            push(*slot, i, coef, d);
                        }
                    }
                }
            } else {
                let g: [Jet2; 4] = std::array::from_fn(|k| get(FieldSlot::Grad(k), i));
                let r = vgvp_residuals(&u, &v, &p, &g, nu, s.f, s.div_f);
                sums.ru += r.momentum[0] * r.momentum[0];
                sums.rv += r.momentum[1] * r.momentum[1];
                sums.rdiv += r.divergence * r.divergence;
                sums.rgrad += r.consistency.iter().flatten().map(|c| c * c).sum::<f64>();
                if taped {
                    let vel = [FieldSlot::U, FieldSlot::V];
                    for row in 0..2 {
                        let coef = 2.0 * r.momentum[row] * sc.interior;
                        let (g1, g2) = (&g[2 * row], &g[2 * row + 1]);
                        push(FieldSlot::Grad(2 * row), i, coef, &Jet2 { value: -u.value, grad: [nu, 0.0], ..Jet2::ZERO });
                        push(FieldSlot::Grad(2 * row + 1), i, coef, &Jet2 { value: -v.value, grad: [0.0, nu], ..Jet2::ZERO });
                        push(FieldSlot::U, i, coef, &Jet2::constant(-g1.value));
                        push(FieldSlot::V, i, coef, &Jet2::constant(-g2.value));
                        let mut dp = Jet2::ZERO;
                        dp.grad[row] = -1.0;
                        push(FieldSlot::P, i, coef, &dp);
                        for col in 0..2 {
                            let coef = 2.0 * r.consistency[row][col] * sc.interior;
                            push(FieldSlot::Grad(2 * row + col), i, coef, &Jet2::constant(1.0));
                            let mut du = Jet2::ZERO;
                            du.grad[col] = -1.0;
                            push(vel[row], i, coef, &du);
                        }
                    }
                    let coef = 2.0 * r.divergence * sc.interior;
                    push(FieldSlot::U, i, coef, &Jet2 { grad: [1.0, 0.0], ..Jet2::ZERO });
                    push(FieldSlot::V, i, coef, &Jet2 { grad: [0.0, 1.0], ..Jet2::ZERO });
                }
            }
        }
        let grads = if taped {
            backprop(self.model, &tapes, &adj)?
        } else {
            vec![None; self.model.nets().len()]
        };
        Ok((sums, grads))
    }

    fn boundary_chunk(&self, samples: &[BoundarySample], sc: &Scales, taped: bool) -> Result<(Sums, Vec<Option<NetGradient>>), LossError> {
        let n = samples.len();
        let points: Vec<Point> = samples.iter().map(|s| s.point).collect();
        let orders = vec![JetOrder::Value; self.model.nets().len()];
        let vel = self.model.velocity_nets();
        let (batches, tapes) = self.eval_nets(&points, &orders, &vel, taped)?;
        let lu = self.model.locate(FieldSlot::U).expect("u slot");
        let lv = self.model.locate(FieldSlot::V).expect("v slot");
        let mut adj: Vec<JetBatch> = self
            .model
            .nets()
            .iter()
            .map(|net| JetBatch::zeros(JetOrder::Value, n, net.output_dim()))
            .collect();
        let mut sums = Sums::default();
        for (i, s) in samples.iter().enumerate() {
            let g = problem::boundary_value(self.flow, s);
            let du = batches[lu.0].as_ref().expect("evaluated").value(i, lu.1) - g[0];
            let dv = batches[lv.0].as_ref().expect("evaluated").value(i, lv.1) - g[1];
            sums.bu += du * du + dv * dv;
            if taped {
                let coef = 2.0 * sc.w.w_bc * sc.boundary;
                adj[lu.0].add_jet(i, lu.1, &Jet2::constant(coef * du));
                adj[lv.0].add_jet(i, lv.1, &Jet2::constant(coef * dv));
            }
        }
        let grads = if taped {
            backprop(self.model, &tapes, &adj)?
        } else {
            vec![None; self.model.nets().len()]
        };
        Ok((sums, grads))
    }

    fn run(&self, interior: &[Point], boundary: &[BoundarySample], taped: bool) -> Result<(LossBreakdown, Option<Vec<NetGradient>>), LossError> {
        self.check(interior, boundary)?;
        let sc = Scales {
            interior: 1.0 / interior.len() as f64,
            boundary: 1.0 / boundary.len() as f64,
            w: self.weights,
        };
        let src: Vec<Source> = interior
            .iter()
            .map(|&x| Source {
                f: problem::forcing(self.flow, x),
                div_f: problem::forcing_div(self.flow, x),
            })
            .collect();
        let interior_parts: Vec<_> = interior
            .par_chunks(CHUNK)
            .zip(src.par_chunks(CHUNK))
            .map(|(pts, s)| self.interior_chunk(pts, s, &sc, taped))
            .collect();
        let boundary_parts: Vec<_> = boundary
            .par_chunks(CHUNK)
            .map(|s| self.boundary_chunk(s, &sc, taped))
            .collect();

        let mut sums = Sums::default();
        let mut grads: Option<Vec<NetGradient>> = taped.then(|| self.model.nets().iter().map(NetGradient::zeros_like).collect());
        for part in interior_parts.into_iter().chain(boundary_parts) {
            let (s, g) = part?;
            sums.add(&s);
            if let Some(acc) = grads.as_mut() {
                for (a, gi) in acc.iter_mut().zip(g.iter()) {
                    if let Some(gi) = gi {
                        a.add_assign(gi);
                    }
                }
            }
        }
        let b = LossBreakdown {
            r_u: sums.ru * sc.interior,
            r_v: sums.rv * sc.interior,
            r_p: sums.rp * sc.interior,
            r_div: sums.rdiv * sc.interior,
            r_grad: sums.rgrad * sc.interior,
            b_u: sums.bu * sc.boundary,
            total: 0.0,
        }
        .assemble(&self.weights);
        for (name, val) in [
            ("momentum-x residual", b.r_u),
            ("momentum-y residual", b.r_v),
            ("pressure-Poisson residual", b.r_p),
            ("divergence residual", b.r_div),
            ("gradient-consistency residual", b.r_grad),
            ("boundary residual", b.b_u),
        ] {
            if !val.is_finite() {
                return Err(LossError::NonFinite(format!("{name} ({val})")));
            }
        }
        if let Some(gs) = &grads {
            for (k, g) in gs.iter().enumerate() {
                if let Some(i) = g.first_non_finite() {
                    return Err(LossError::NonFinite(format!(
                        "gradient entry {i} of network '{}'",
                        self.model.net_name(k)
                    )));
                }
            }
        }
        Ok((b, grads))
    }

    /// Monte Carlo loss over one interior and one boundary batch.
    pub fn batch_loss(&self, interior: &[Point], boundary: &[BoundarySample]) -> Result<LossBreakdown, LossError> {
        Ok(self.run(interior, boundary, false)?.0)
    }

    /// Loss and its exact gradient with respect to every network of the
    /// model, in model order.
    pub fn batch_loss_and_grad(&self, interior: &[Point], boundary: &[BoundarySample]) -> Result<(LossBreakdown, Vec<NetGradient>), LossError> {
        let (b, g) = self.run(interior, boundary, true)?;
        Ok((b, g.expect("taped run returns gradients")))
    }
}

fn backprop(model: &FlowModel, tapes: &[Option<NetTape>], adj: &[JetBatch]) -> Result<Vec<Option<NetGradient>>, NetError> {
    model
        .nets()
        .iter()
        .zip(tapes)
        .zip(adj)
        .map(|((net, tape), a)| tape.as_ref().map(|t| net.backward(t, a)).transpose())
        .collect()
}
