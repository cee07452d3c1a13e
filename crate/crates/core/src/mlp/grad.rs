use ndarray::{Array1, Array2};

use super::jet::{sine_backward, value_rows, JetBatch, JetOrder, NetTape};
use super::params::{MscaleNet, Point};
use super::NetError;

/// Gradient of a scalar with respect to every parameter of one
/// [`MscaleNet`], laid out congruently with it.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGradient {
    /// Per sub-network `(weight grads, bias grads)`.
    subnets: Vec<(Vec<Array2<f64>>, Vec<Array1<f64>>)>,
}

impl NetGradient {
    pub fn zeros_like(net: &MscaleNet) -> Self {
        let subnets = net
            .subnets()
            .iter()
            .map(|s| {
                (
                    s.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
                    s.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
                )
            })
            .collect();
        Self { subnets }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.subnets.iter().flat_map(|(ws, bs)| {
            ws.iter().zip(bs).flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.blocks().map(<[f64]>::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &NetGradient) {
        for ((ws, bs), (ow, ob)) in self.subnets.iter_mut().zip(&other.subnets) {
            for (w, o) in ws.iter_mut().zip(ow) {
                *w += o;
            }
            for (b, o) in bs.iter_mut().zip(ob) {
                *b += o;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (ws, bs) in &mut self.subnets {
            ws.iter_mut().for_each(|w| *w *= k);
            bs.iter_mut().for_each(|b| *b *= k);
        }
    }

    /// Index (in flat order) of the first non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.blocks().flatten().position(|x| !x.is_finite())
    }

    pub fn bias_grad(&self, subnet: usize, layer: usize) -> &Array1<f64> {
        &self.subnets[subnet].1[layer]
    }
}

impl MscaleNet {
    /// Backpropagates an adjoint of the output jets through a taped forward
    /// pass.
    pub fn backward(&self, tape: &NetTape, adjoint: &JetBatch) -> Result<NetGradient, NetError> {
        if adjoint.order() != tape.order() || adjoint.n_points() != tape.n_points() || adjoint.width() != self.output_dim() {
            return Err(NetError::Shape(format!(
                "adjoint ({:?}, {} points, width {}) does not match tape ({:?}, {} points, width {})",
                adjoint.order(),
                adjoint.n_points(),
                adjoint.width(),
                tape.order(),
                tape.n_points(),
                self.output_dim()
            )));
        }
        let n = tape.n_points();
        let order = tape.order();
        let mut grad = NetGradient::zeros_like(self);
        for ((sub, t), (gw, gb)) in self
            .subnets()
            .iter()
            .zip(tape.subnet_tapes())
            .zip(grad.subnets.iter_mut())
        {
            let mut g = adjoint.data().clone();
            for l in (0..sub.num_layers()).rev() {
                let input = &t.inputs()[l];
                gw[l] = g.t().dot(input);
                gb[l] = value_rows(&g, n);
                if l > 0 {
                    let a_adj = g.dot(&sub.weights()[l]);
                    g = sine_backward(&t.pre()[l - 1], &a_adj, n, order);
                }
            }
        }
        if let Some(i) = grad.first_non_finite() {
            return Err(NetError::NonFinite(format!("parameter gradient entry {i}")));
        }
        Ok(grad)
    }
}

/// One network taking part in an objective, with the jet order the objective
/// reads from it.
pub struct Participant<'a> {
    pub net: &'a MscaleNet,
    pub points: &'a [Point],
    pub order: JetOrder,
}

/// Exact parameter gradients of a scalar objective built from network jets.
///
/// `objective` receives the output jets of every participant and returns the
/// objective value together with its adjoint with respect to each jet batch.
/// The adjoints are then pulled back through the jet propagation, so terms
/// involving spatial derivatives are differentiated exactly.
pub fn loss_param_gradient<F>(participants: &[Participant<'_>], objective: F) -> Result<(f64, Vec<NetGradient>), NetError>
where
    F: FnOnce(&[JetBatch]) -> (f64, Vec<JetBatch>),
{
    let mut outputs = Vec::with_capacity(participants.len());
    let mut tapes = Vec::with_capacity(participants.len());
    for p in participants {
        let (b, t) = p.net.forward_taped(p.points, p.order)?;
        outputs.push(b);
        tapes.push(t);
    }
    let (value, adjoints) = objective(&outputs);
    if !value.is_finite() {
        return Err(NetError::NonFinite(format!("objective value {value}")));
    }
    if adjoints.len() != participants.len() {
        return Err(NetError::Shape(format!(
            "objective returned {} adjoints for {} participants",
            adjoints.len(),
            participants.len()
        )));
    }
    let mut grads = Vec::with_capacity(participants.len());
    for (k, ((p, t), adj)) in participants.iter().zip(&tapes).zip(&adjoints).enumerate() {
        if !adj.is_finite() {
            return Err(NetError::NonFinite(format!("adjoint of participant {k}")));
        }
        let g = p
            .net
            .backward(t, adj)
            .map_err(|e| NetError::NonFinite(format!("participant {k}: {e}")))?;
        grads.push(g);
    }
    Ok((value, grads))
}
