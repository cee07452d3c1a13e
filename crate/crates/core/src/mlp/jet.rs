//! Forward propagation of spatial jets through sine networks.
//!
//! A batch of points is pushed through each layer as a single matrix whose row
//! blocks are the jet channels (value, d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2).
//! The affine part of a layer is linear in every channel, so one GEMM covers
//! all of them; only the bias touches the value block. The activation mixes
//! channels pointwise through `sin`, `cos` and the chain rule.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{MlpParams, MscaleNet, Point};
use super::NetError;

/// Value, gradient and Hessian of a scalar field at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Jet2 {
    pub value: f64,
    /// `[d/dx, d/dy]`
    pub grad: [f64; 2],
    /// `[d2/dx2, d2/dxdy, d2/dy2]`
    pub hess: [f64; 3],
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 {
        value: 0.0,
        grad: [0.0; 2],
        hess: [0.0; 3],
    };

    pub fn constant(value: f64) -> Self {
        Self {
            value,
            ..Self::ZERO
        }
    }

    pub fn laplacian(&self) -> f64 {
        self.hess[0] + self.hess[2]
    }

    /// Channel `c` in batch layout order.
    pub fn channel(&self, c: usize) -> f64 {
        match c {
            0 => self.value,
            1 => self.grad[0],
            2 => self.grad[1],
            3 => self.hess[0],
            4 => self.hess[1],
            5 => self.hess[2],
            _ => panic!("jet channel {c} out of range"),
        }
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut f64 {
        match c {
            0 => &mut self.value,
            1 => &mut self.grad[0],
            2 => &mut self.grad[1],
            3 => &mut self.hess[0],
            4 => &mut self.hess[1],
            5 => &mut self.hess[2],
            _ => panic!("jet channel {c} out of range"),
        }
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, k: f64, other: &Jet2) {
        for c in 0..6 {
            *self.channel_mut(c) += k * other.channel(c);
        }
    }

    pub fn scaled(&self, k: f64) -> Jet2 {
        let mut out = Jet2::ZERO;
        out.add_scaled(k, self);
        out
    }

    /// Sum of channel-wise products; the directional derivative of a linear
    /// functional with coefficients `self` applied to `other`.
    pub fn dot(&self, other: &Jet2) -> f64 {
        (0..6).map(|c| self.channel(c) * other.channel(c)).sum()
    }

    pub fn is_finite(&self) -> bool {
        (0..6).all(|c| self.channel(c).is_finite())
    }
}

/// How many derivative orders a propagation carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JetOrder {
    Value,
    First,
    Second,
}

impl JetOrder {
    pub fn channels(self) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::First => 3,
            JetOrder::Second => 6,
        }
    }
}

/// Jets of every output component at every point of a batch.
///
/// `data` has shape `(channels * n_points, width)`; rows
/// `c * n_points .. (c + 1) * n_points` hold channel `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    order: JetOrder,
    n_points: usize,
    data: Array2<f64>,
}

impl JetBatch {
    pub fn zeros(order: JetOrder, n_points: usize, width: usize) -> Self {
        Self {
            order,
            n_points,
            data: Array2::zeros((order.channels() * n_points, width)),
        }
    }

    fn from_data(order: JetOrder, n_points: usize, data: Array2<f64>) -> Self {
        debug_assert_eq!(data.nrows(), order.channels() * n_points);
        Self {
            order,
            n_points,
            data,
        }
    }

    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Channel block `c` as an `(n_points, width)` view.
    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        let n = self.n_points;
        self.data.slice(s![c * n..(c + 1) * n, ..])
    }

    pub fn value(&self, point: usize, comp: usize) -> f64 {
        self.data[[point, comp]]
    }

    /// Jet of output `comp` at `point`; channels beyond the batch order read
    /// as zero.
    pub fn jet(&self, point: usize, comp: usize) -> Jet2 {
        let mut j = Jet2::ZERO;
        for c in 0..self.order.channels() {
            *j.channel_mut(c) = self.data[[c * self.n_points + point, comp]];
        }
        j
    }

    /// Accumulates `j` into output `comp` at `point`, dropping channels the
    /// batch does not carry.
    pub fn add_jet(&mut self, point: usize, comp: usize, j: &Jet2) {
        for c in 0..self.order.channels() {
            self.data[[c * self.n_points + point, comp]] += j.channel(c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn add_assign(&mut self, other: &JetBatch) {
        self.data += &other.data;
    }
}

/// Saved intermediates of one sub-network forward pass.
#[derive(Debug)]
pub(crate) struct MlpTape {
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

/// Saved intermediates of a multiscale forward pass, one tape per sub-network.
#[derive(Debug)]
pub struct NetTape {
    order: JetOrder,
    n_points: usize,
    subnets: Vec<MlpTape>,
}

impl NetTape {
    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub(crate) fn subnet_tapes(&self) -> &[MlpTape] {
        &self.subnets
    }
}

impl MlpTape {
    pub(crate) fn inputs(&self) -> &[Array2<f64>] {
        &self.inputs
    }

    pub(crate) fn pre(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

/// Jets of the scaled input `alpha * x`: value rows hold `alpha * (x, y)`, the
/// first-derivative rows `alpha * e_x` and `alpha * e_y`, Hessian rows zero.
fn input_jets(points: &[Point], alpha: f64, order: JetOrder) -> Array2<f64> {
    let n = points.len();
    let mut a = Array2::zeros((order.channels() * n, 2));
    for (i, p) in points.iter().enumerate() {
        a[[i, 0]] = alpha * p[0];
        a[[i, 1]] = alpha * p[1];
        if order >= JetOrder::First {
            a[[n + i, 0]] = alpha;
            a[[2 * n + i, 1]] = alpha;
        }
    }
    a
}

/// Affine map of all channels; the bias only enters the value block.
fn affine(a: &Array2<f64>, params: &MlpParams, layer: usize, n: usize) -> Array2<f64> {
    let mut z = a.dot(&params.weights()[layer].t());
    let b = &params.biases()[layer];
    z.slice_mut(s![0..n, ..]).outer_iter_mut().for_each(|mut row| row += b);
    z
}

/// `sin` applied to a channel-stacked pre-activation.
fn sine_forward(z: &Array2<f64>, n: usize, order: JetOrder) -> Array2<f64> {
    let len = n * z.ncols();
    let zs = z.as_slice().expect("standard layout");
    let mut out = Array2::zeros(z.raw_dim());
    let os = out.as_slice_mut().expect("standard layout");
    for j in 0..len {
        let (s, c) = zs[j].sin_cos();
        os[j] = s;
        if order >= JetOrder::First {
            let zx = zs[len + j];
            let zy = zs[2 * len + j];
            os[len + j] = c * zx;
            os[2 * len + j] = c * zy;
            if order == JetOrder::Second {
                os[3 * len + j] = c * zs[3 * len + j] - s * zx * zx;
                os[4 * len + j] = c * zs[4 * len + j] - s * zx * zy;
                os[5 * len + j] = c * zs[5 * len + j] - s * zy * zy;
            }
        }
    }
    out
}

/// Pulls an adjoint of the activation output back to its pre-activation.
pub(crate) fn sine_backward(z: &Array2<f64>, adj: &Array2<f64>, n: usize, order: JetOrder) -> Array2<f64> {
    let len = n * z.ncols();
    let zs = z.as_slice().expect("standard layout");
    let a = adj.as_slice().expect("standard layout");
    let mut out = Array2::zeros(z.raw_dim());
    let os = out.as_slice_mut().expect("standard layout");
    for j in 0..len {
        let (s, c) = zs[j].sin_cos();
        match order {
            JetOrder::Value => os[j] = a[j] * c,
            JetOrder::First => {
                let (zx, zy) = (zs[len + j], zs[2 * len + j]);
                let (ax, ay) = (a[len + j], a[2 * len + j]);
                os[j] = a[j] * c - s * (ax * zx + ay * zy);
                os[len + j] = ax * c;
                os[2 * len + j] = ay * c;
            }
            JetOrder::Second => {
                let (zx, zy) = (zs[len + j], zs[2 * len + j]);
                let (zxx, zxy, zyy) = (zs[3 * len + j], zs[4 * len + j], zs[5 * len + j]);
                let (ax, ay) = (a[len + j], a[2 * len + j]);
                let (axx, axy, ayy) = (a[3 * len + j], a[4 * len + j], a[5 * len + j]);
                os[j] = a[j] * c
                    - s * (ax * zx + ay * zy + axx * zxx + axy * zxy + ayy * zyy)
                    - c * (axx * zx * zx + axy * zx * zy + ayy * zy * zy);
                os[len + j] = ax * c - s * (2.0 * axx * zx + axy * zy);
                os[2 * len + j] = ay * c - s * (2.0 * ayy * zy + axy * zx);
                os[3 * len + j] = axx * c;
                os[4 * len + j] = axy * c;
                os[5 * len + j] = ayy * c;
            }
        }
    }
    out
}

fn mlp_forward(params: &MlpParams, input: Array2<f64>, n: usize, order: JetOrder, keep: bool) -> (Array2<f64>, Option<MlpTape>) {
    let last = params.num_layers() - 1;
    let mut tape = keep.then(|| MlpTape {
        inputs: Vec::with_capacity(last + 1),
        pre: Vec::with_capacity(last),
    });
    let mut a = input;
    for l in 0..=last {
        let z = affine(&a, params, l, n);
        if l == last {
            if let Some(t) = tape.as_mut() {
                t.inputs.push(a);
            }
            return (z, tape);
        }
        let next = sine_forward(&z, n, order);
        if let Some(t) = tape.as_mut() {
            t.inputs.push(a);
            t.pre.push(z);
        }
        a = next;
    }
    unreachable!()
}

fn check_points(points: &[Point]) -> Result<(), NetError> {
    match points.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        Some(i) => Err(NetError::NonFiniteInput { index: i }),
        None => Ok(()),
    }
}

impl MscaleNet {
    fn forward_impl(&self, points: &[Point], order: JetOrder, keep: bool) -> Result<(JetBatch, Option<NetTape>), NetError> {
        check_points(points)?;
        let n = points.len();
        let mut out = JetBatch::zeros(order, n, self.output_dim());
        let mut tapes = Vec::with_capacity(if keep { self.subnets().len() } else { 0 });
        for (sub, &alpha) in self.subnets().iter().zip(self.scales()) {
            let (z, tape) = mlp_forward(sub, input_jets(points, alpha, order), n, order, keep);
            out.add_assign(&JetBatch::from_data(order, n, z));
            if let Some(t) = tape {
                tapes.push(t);
            }
        }
        if let Some(i) = out.data.iter().position(|x| !x.is_finite()) {
            return Err(NetError::NonFinite(format!(
                "network output row {} column {}",
                i / out.width(),
                i % out.width()
            )));
        }
        let tape = keep.then_some(NetTape {
            order,
            n_points: n,
            subnets: tapes,
        });
        Ok((out, tape))
    }

    /// Network outputs at one point.
    pub fn forward(&self, x: Point) -> Result<Vec<f64>, NetError> {
        let (b, _) = self.forward_impl(&[x], JetOrder::Value, false)?;
        Ok(b.data.row(0).to_vec())
    }

    /// Exact value, gradient and Hessian of every output at one point.
    pub fn forward_jet(&self, x: Point) -> Result<Vec<Jet2>, NetError> {
        let (b, _) = self.forward_impl(&[x], JetOrder::Second, false)?;
        Ok((0..self.output_dim()).map(|k| b.jet(0, k)).collect())
    }

    pub fn forward_batch(&self, points: &[Point], order: JetOrder) -> Result<JetBatch, NetError> {
        Ok(self.forward_impl(points, order, false)?.0)
    }

    /// Like [`forward_batch`](Self::forward_batch), keeping the intermediates
    /// needed to differentiate through the jets with respect to parameters.
    pub fn forward_taped(&self, points: &[Point], order: JetOrder) -> Result<(JetBatch, NetTape), NetError> {
        let (b, t) = self.forward_impl(points, order, true)?;
        Ok((b, t.expect("tape requested")))
    }
}

pub(crate) fn value_rows(adj: &Array2<f64>, n: usize) -> ndarray::Array1<f64> {
    adj.slice(s![0..n, ..]).sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn one_neuron(scale: f64) -> MscaleNet {
        let p = MlpParams::from_parts(
            vec![array![[1.0, 0.0]], array![[1.0]]],
            vec![Array1::zeros(1), Array1::zeros(1)],
        )
        .unwrap();
        MscaleNet::new(vec![p], vec![scale]).unwrap()
    }

    #[test]
    fn zero_weights_collapse_to_bias_sum() {
        let mut subnets = Vec::new();
        for _ in 0..3 {
            let mut p = MlpParams::zeros(&[2, 5, 5, 1]).unwrap();
            p.biases_mut()[2][0] = 0.75;
            subnets.push(p);
        }
        let net = MscaleNet::new(subnets, vec![1.0, 2.0, 4.0]).unwrap();
        for x in [[0.0, 0.0], [1.3, -0.2], [5.0, 7.0]] {
            assert_eq!(net.forward(x).unwrap(), vec![2.25]);
            let j = net.forward_jet(x).unwrap()[0];
            assert_eq!(j.grad, [0.0, 0.0]);
            assert_eq!(j.hess, [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn one_neuron_hand_values() {
        let net = one_neuron(1.0);
        assert_eq!(net.forward([FRAC_PI_2, 0.3]).unwrap(), vec![1.0]);
        let j = net.forward_jet([0.0, 0.0]).unwrap()[0];
        assert_eq!(j.value, 0.0);
        assert_eq!(j.grad, [1.0, 0.0]);
        assert_eq!(j.hess[0], 0.0);
    }

    #[test]
    fn input_scaling_is_argument_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = MscaleNet::fcn(&[8, 8], 1, &mut rng).unwrap();
        let scaled = MscaleNet::new(base.subnets().to_vec(), vec![2.0]).unwrap();
        for _ in 0..10 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert_eq!(
                scaled.forward(x).unwrap(),
                base.forward([2.0 * x[0], 2.0 * x[1]]).unwrap()
            );
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let net = one_neuron(1.0);
        assert!(matches!(
            net.forward([f64::NAN, 0.0]),
            Err(NetError::NonFiniteInput { index: 0 })
        ));
    }

    #[test]
    fn batch_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MscaleNet::init(&[6, 6], 2, &[1.0, 3.0], &mut rng).unwrap();
        let pts: Vec<Point> = (0..7)
            .map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)])
            .collect();
        let batch = net.forward_batch(&pts, JetOrder::Second).unwrap();
        let first = net.forward_batch(&pts, JetOrder::First).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let single = net.forward_jet(*p).unwrap();
            for k in 0..2 {
                let bj = batch.jet(i, k);
                assert!((bj.value - single[k].value).abs() < 1e-14);
                for c in 0..6 {
                    assert!((bj.channel(c) - single[k].channel(c)).abs() < 1e-12);
                }
                let fj = first.jet(i, k);
                assert_eq!(fj.hess, [0.0; 3]);
                assert!((fj.grad[0] - bj.grad[0]).abs() < 1e-14);
            }
        }
    }
}
