use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NetError;

/// A point in the plane, `[x, y]`.
pub type Point = [f64; 2];

/// Weights and biases of one dense sine-activated sub-network.
///
/// Layer `l` maps `layer_dims[l]` inputs to `layer_dims[l + 1]` outputs with a
/// weight matrix of shape `(layer_dims[l + 1], layer_dims[l])`. Every layer but
/// the last is followed by `sin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl MlpParams {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self, NetError> {
        check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self, NetError> {
        let mut params = Self::zeros(layer_dims)?;
        for w in &mut params.weights {
            let (fan_out, fan_in) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        Ok(params)
    }

    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self, NetError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(NetError::Shape(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_dims = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_dims.last().unwrap() {
                return Err(NetError::Shape(format!(
                    "layer {l}: weight has {} columns, expected {}",
                    w.ncols(),
                    layer_dims.last().unwrap()
                )));
            }
            if b.len() != w.nrows() {
                return Err(NetError::Shape(format!(
                    "layer {l}: bias length {} does not match {} weight rows",
                    b.len(),
                    w.nrows()
                )));
            }
            layer_dims.push(w.nrows());
        }
        check_dims(&layer_dims)?;
        let params = Self {
            layer_dims,
            weights,
            biases,
        };
        params.check_finite()?;
        Ok(params)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameter blocks in canonical order: `W0, b0, W1, b1, ...`.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| {
            [
                w.as_slice().expect("standard layout"),
                b.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| {
                [
                    w.as_slice_mut().expect("standard layout"),
                    b.as_slice_mut().expect("standard layout"),
                ]
            })
    }

    pub fn check_finite(&self) -> Result<(), NetError> {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if let Some(i) = w.iter().position(|x| !x.is_finite()) {
                return Err(NetError::NonFinite(format!("weight {i} of layer {l}")));
            }
            if let Some(i) = b.iter().position(|x| !x.is_finite()) {
                return Err(NetError::NonFinite(format!("bias {i} of layer {l}")));
            }
        }
        Ok(())
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<(), NetError> {
    if layer_dims.len() < 2 {
        return Err(NetError::Shape(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims[0] != 2 {
        return Err(NetError::Shape(format!(
            "input dimension must be 2, got {}",
            layer_dims[0]
        )));
    }
    if layer_dims.contains(&0) {
        return Err(NetError::Shape(format!("zero-width layer in {layer_dims:?}")));
    }
    Ok(())
}

/// Sum of sine sub-networks, each fed a scaled copy of the input:
/// `f(x) = sum_i g_i(alpha_i * x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MscaleNet {
    subnets: Vec<MlpParams>,
    scales: Vec<f64>,
}

impl MscaleNet {
    pub fn new(subnets: Vec<MlpParams>, scales: Vec<f64>) -> Result<Self, NetError> {
        let net = Self { subnets, scales };
        net.validate()?;
        Ok(net)
    }

    /// One Glorot-initialized sub-network of shape `2 -> hidden -> output_dim`
    /// per scale.
    pub fn init<R: Rng + ?Sized>(
        hidden: &[usize],
        output_dim: usize,
        scales: &[f64],
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let mut dims = vec![2];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let subnets = scales
            .iter()
            .map(|_| MlpParams::glorot(&dims, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(subnets, scales.to_vec())
    }

    /// A plain fully connected network: a single sub-network with unit scale.
    pub fn fcn<R: Rng + ?Sized>(hidden: &[usize], output_dim: usize, rng: &mut R) -> Result<Self, NetError> {
        Self::init(hidden, output_dim, &[1.0], rng)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.subnets.is_empty() {
            return Err(NetError::Shape("multiscale net has no sub-networks".into()));
        }
        if self.subnets.len() != self.scales.len() {
            return Err(NetError::Shape(format!(
                "{} sub-networks but {} scales",
                self.subnets.len(),
                self.scales.len()
            )));
        }
        if let Some(a) = self.scales.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(NetError::Shape(format!("scale {a} is not a positive finite number")));
        }
        let out = self.subnets[0].output_dim();
        for (i, s) in self.subnets.iter().enumerate() {
            check_dims(s.layer_dims())?;
            if s.output_dim() != out {
                return Err(NetError::Shape(format!(
                    "sub-network {i} has output dim {}, expected {out}",
                    s.output_dim()
                )));
            }
            for (l, (w, b)) in s.weights.iter().zip(&s.biases).enumerate() {
                let want = (s.layer_dims[l + 1], s.layer_dims[l]);
                if w.dim() != want || b.len() != want.0 {
                    return Err(NetError::Shape(format!(
                        "sub-network {i} layer {l}: weight {:?} bias {} vs dims {:?}",
                        w.dim(),
                        b.len(),
                        s.layer_dims
                    )));
                }
            }
            s.check_finite()
                .map_err(|e| NetError::NonFinite(format!("sub-network {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn subnets(&self) -> &[MlpParams] {
        &self.subnets
    }

    pub fn subnets_mut(&mut self) -> &mut [MlpParams] {
        &mut self.subnets
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn output_dim(&self) -> usize {
        self.subnets[0].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.subnets.iter().map(MlpParams::num_params).sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.subnets.iter().flat_map(MlpParams::blocks)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.subnets.iter_mut().flat_map(MlpParams::blocks_mut)
    }

    /// All parameters concatenated in canonical block order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for b in self.blocks() {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NetError> {
        if flat.len() != self.num_params() {
            return Err(NetError::Shape(format!(
                "flat vector has {} entries, net has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for b in self.blocks_mut() {
            b.copy_from_slice(&flat[offset..offset + b.len()]);
            offset += b.len();
        }
        Ok(())
    }

    /// True when both nets have identical layer shapes and scales.
    pub fn same_shape(&self, other: &MscaleNet) -> bool {
        self.scales == other.scales
            && self.subnets.len() == other.subnets.len()
            && self
                .subnets
                .iter()
                .zip(&other.subnets)
                .all(|(a, b)| a.layer_dims == b.layer_dims)
    }
}

/// Powers of two `1, 2, 4, ...` as input scales.
pub fn dyadic_scales(count: usize) -> Vec<f64> {
    (0..count).map(|i| (1u64 << i) as f64).collect()
}
