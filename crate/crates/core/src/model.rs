//! The set of networks representing `u`, `v`, `p` and, for the first-order
//! formulation, the velocity-gradient tensor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{JetOrder, MscaleNet, NetError, Point};

/// A scalar field carried by one output of one network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldSlot {
    U,
    V,
    P,
    /// Entry `(i, j)` of the gradient tensor, stored row major as `2 * i + j`.
    Grad(usize),
}

/// Network architecture shared by every field network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub scales: Vec<f64>,
}

impl Architecture {
    pub fn fcn(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
            scales: vec![1.0],
        }
    }

    pub fn mscale(hidden: &[usize], scales: &[f64]) -> Self {
        Self {
            hidden: hidden.to_vec(),
            scales: scales.to_vec(),
        }
    }
}

/// Velocity/pressure networks, either one net per field or one shared net
/// with three outputs, plus an optional 4-output gradient-tensor net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    nets: Vec<MscaleNet>,
    shared: bool,
    has_grad: bool,
}

impl FlowModel {
    pub fn separate(u: MscaleNet, v: MscaleNet, p: MscaleNet, grad: Option<MscaleNet>) -> Result<Self, NetError> {
        let has_grad = grad.is_some();
        let mut nets = vec![u, v, p];
        nets.extend(grad);
        Self::from_parts(nets, false, has_grad)
    }

    pub fn shared(uvp: MscaleNet, grad: Option<MscaleNet>) -> Result<Self, NetError> {
        let has_grad = grad.is_some();
        let mut nets = vec![uvp];
        nets.extend(grad);
        Self::from_parts(nets, true, has_grad)
    }

    fn from_parts(nets: Vec<MscaleNet>, shared: bool, has_grad: bool) -> Result<Self, NetError> {
        let model = Self { nets, shared, has_grad };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let field_nets = if self.shared { 1 } else { 3 };
        let want = field_nets + usize::from(self.has_grad);
        if self.nets.len() != want {
            return Err(NetError::Shape(format!(
                "model layout expects {want} networks, found {}",
                self.nets.len()
            )));
        }
        for (k, net) in self.nets.iter().enumerate() {
            net.validate()?;
            let out = if k >= field_nets {
                4
            } else if self.shared {
                3
            } else {
                1
            };
            if net.output_dim() != out {
                return Err(NetError::Shape(format!(
                    "network '{}' has {} outputs, expected {out}",
                    self.net_name(k),
                    net.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Glorot-initialized model.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, shared: bool, with_grad: bool, rng: &mut R) -> Result<Self, NetError> {
        let mk = |out: usize, rng: &mut R| MscaleNet::init(&arch.hidden, out, &arch.scales, rng);
        // The gradient net is drawn last so every scheme starts from the same
        // u, v, p for a given seed.
        if shared {
            let uvp = mk(3, rng)?;
            let grad = if with_grad { Some(mk(4, rng)?) } else { None };
            Self::shared(uvp, grad)
        } else {
            let u = mk(1, rng)?;
            let v = mk(1, rng)?;
            let p = mk(1, rng)?;
            let grad = if with_grad { Some(mk(4, rng)?) } else { None };
            Self::separate(u, v, p, grad)
        }
    }

    pub fn nets(&self) -> &[MscaleNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [MscaleNet] {
        &mut self.nets
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn has_grad(&self) -> bool {
        self.has_grad
    }

    pub fn net_name(&self, k: usize) -> &'static str {
        match (self.shared, k) {
            (true, 0) => "uvp",
            (true, _) => "grad",
            (false, 0) => "u",
            (false, 1) => "v",
            (false, 2) => "p",
            (false, _) => "grad",
        }
    }

    /// `(network index, output component)` carrying `field`.
    pub fn locate(&self, field: FieldSlot) -> Option<(usize, usize)> {
        let grad_net = if self.shared { 1 } else { 3 };
        match (field, self.shared) {
            (FieldSlot::U, true) => Some((0, 0)),
            (FieldSlot::V, true) => Some((0, 1)),
            (FieldSlot::P, true) => Some((0, 2)),
            (FieldSlot::U, false) => Some((0, 0)),
            (FieldSlot::V, false) => Some((1, 0)),
            (FieldSlot::P, false) => Some((2, 0)),
            (FieldSlot::Grad(k), _) if self.has_grad && k < 4 => Some((grad_net, k)),
            (FieldSlot::Grad(_), _) => None,
        }
    }

    /// Indices of networks carrying `u` or `v`.
    pub fn velocity_nets(&self) -> Vec<usize> {
        if self.shared {
            vec![0]
        } else {
            vec![0, 1]
        }
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(MscaleNet::num_params).sum()
    }

    /// `(u, v, p)` at each point.
    pub fn eval_values(&self, points: &[Point]) -> Result<Vec<[f64; 3]>, NetError> {
        let batches = self
            .nets
            .iter()
            .map(|n| n.forward_batch(points, JetOrder::Value))
            .collect::<Result<Vec<_>, _>>()?;
        let loc = [FieldSlot::U, FieldSlot::V, FieldSlot::P].map(|f| self.locate(f).expect("velocity/pressure slot"));
        Ok((0..points.len())
            .map(|i| loc.map(|(k, c)| batches[k].value(i, c)))
            .collect())
    }

    pub fn same_shape(&self, other: &FlowModel) -> bool {
        self.shared == other.shared
            && self.has_grad == other.has_grad
            && self.nets.len() == other.nets.len()
            && self.nets.iter().zip(&other.nets).all(|(a, b)| a.same_shape(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = Architecture::fcn(&[4]);
        let sep = FlowModel::init(&arch, false, true, &mut rng).unwrap();
        assert_eq!(sep.nets().len(), 4);
        assert_eq!(sep.locate(FieldSlot::P), Some((2, 0)));
        assert_eq!(sep.locate(FieldSlot::Grad(3)), Some((3, 3)));
        let sh = FlowModel::init(&arch, true, false, &mut rng).unwrap();
        assert_eq!(sh.nets().len(), 1);
        assert_eq!(sh.locate(FieldSlot::V), Some((0, 1)));
        assert_eq!(sh.locate(FieldSlot::Grad(0)), None);
        assert_eq!(sh.velocity_nets(), vec![0]);
    }

    #[test]
    fn rejects_wrong_output_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = MscaleNet::fcn(&[3], 1, &mut rng).unwrap();
        let two = MscaleNet::fcn(&[3], 2, &mut rng).unwrap();
        assert!(FlowModel::separate(one.clone(), two, one.clone(), None).is_err());
        assert!(FlowModel::shared(one, None).is_err());
    }
}
