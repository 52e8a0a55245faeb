use rand::Rng as _;

use super::MatrixF64;
use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::rng::Rng;
use crate::{Error, Result};

/// Feed-forward network: ReLU on hidden layers, identity on the output layer.
///
/// `weights[i]` has shape `dims[i+1] x dims[i]`; `biases[i]` is `1 x dims[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    dims: Vec<usize>,
    weights: Vec<MatrixF64>,
    biases: Vec<MatrixF64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<MatrixF64>,
    /// Pre-activation of each layer.
    pre_activations: Vec<MatrixF64>,
}

impl ForwardTrace {
    pub fn input(&self) -> &MatrixF64 {
        &self.layer_inputs[0]
    }

    /// The network output (the last pre-activation, since the output layer is linear).
    pub fn output(&self) -> &MatrixF64 {
        self.pre_activations.last().expect("a network has at least one layer")
    }
}

/// Gradients of a scalar with respect to every parameter and to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPack {
    pub weights: Vec<MatrixF64>,
    pub biases: Vec<MatrixF64>,
    pub input: MatrixF64,
}

impl GradPack {
    /// Parameter gradients flattened in the same order as [`MlpNet::params_flat`].
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    /// Parameter gradients from a flat vector laid out like [`MlpNet::params_flat`]; the
    /// input gradient is left empty.
    pub fn from_flat(net: &MlpNet, flat: &[f64]) -> Result<Self> {
        if flat.len() != net.param_count() {
            return Err(Error::shape("GradPack::from_flat", net.param_count(), flat.len()));
        }
        let mut weights = Vec::with_capacity(net.weights.len());
        let mut biases = Vec::with_capacity(net.biases.len());
        let mut at = 0;
        for w in &net.weights {
            let (r, c) = w.shape();
            weights.push(MatrixF64::from_vec(r, c, flat[at..at + r * c].to_vec())?);
            at += r * c;
            biases.push(MatrixF64::from_vec(1, r, flat[at..at + r].to_vec())?);
            at += r;
        }
        Ok(Self {
            weights,
            biases,
            input: MatrixF64::zeros(0, net.input_dim()),
        })
    }
}

impl MlpNet {
    /// Weights and biases drawn from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new_random(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut net = Self::zeros(dims)?;
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            let bound = 1.0 / (w.cols() as f64).sqrt();
            for x in w.as_mut_slice().iter_mut().chain(b.as_mut_slice()) {
                *x = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        let weights = dims.windows(2).map(|d| MatrixF64::zeros(d[1], d[0])).collect();
        let biases = dims.windows(2).map(|d| MatrixF64::zeros(1, d[1])).collect();
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<MatrixF64>, biases: Vec<MatrixF64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape(
                "MlpNet::from_parts",
                "matching non-empty weight and bias lists",
                format!("{} weights, {} biases", weights.len(), biases.len()),
            ));
        }
        let mut dims = vec![weights[0].cols()];
        for (w, b) in weights.iter().zip(&biases) {
            let prev = *dims.last().expect("non-empty");
            if w.cols() != prev || b.shape() != (1, w.rows()) {
                return Err(Error::shape(
                    "MlpNet::from_parts",
                    format!("layer taking {prev} inputs"),
                    format!("weight {}x{}, bias {}x{}", w.rows(), w.cols(), b.rows(), b.cols()),
                ));
            }
            dims.push(w.rows());
        }
        Self::check_dims(&dims)?;
        Ok(Self {
            dims,
            weights,
            biases,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "network needs at least an input and an output layer of positive width, got {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[MatrixF64] {
        &self.weights
    }

    pub fn biases(&self) -> &[MatrixF64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [MatrixF64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [MatrixF64] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(MatrixF64::len).sum::<usize>()
            + self.biases.iter().map(MatrixF64::len).sum::<usize>()
    }

    /// All parameters, layer by layer: weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("set_params_flat", self.param_count(), flat.len()));
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `params += scale · direction` for a flat direction vector.
    pub fn add_scaled_flat(&mut self, direction: &[f64], scale: f64) -> Result<()> {
        let mut p = self.params_flat();
        if direction.len() != p.len() {
            return Err(Error::shape("add_scaled_flat", p.len(), direction.len()));
        }
        for (x, d) in p.iter_mut().zip(direction) {
            *x += scale * d;
        }
        self.set_params_flat(&p)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(MatrixF64::is_finite)
    }

    pub fn forward(&self, input: &MatrixF64) -> Result<MatrixF64> {
        self.check_input(input)?;
        let mut x = input.clone();
        let last = self.num_layers() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = x.matmul_t(w)?;
            z.add_row(b)?;
            if i < last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &MatrixF64) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut layer_inputs = Vec::with_capacity(self.num_layers());
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        let mut x = input.clone();
        let last = self.num_layers() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = x.matmul_t(w)?;
            z.add_row(b)?;
            layer_inputs.push(x);
            x = if i < last { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre_activations.push(z);
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
        })
    }

    /// Gradients of `Σ upstream ⊙ forward(input)` with respect to all parameters and to
    /// `input`.
    pub fn backward(&self, input: &MatrixF64, upstream: &MatrixF64) -> Result<GradPack> {
        let trace = self.forward_trace(input)?;
        self.backward_trace(&trace, upstream)
    }

    /// As [`MlpNet::backward`], reusing a trace from [`MlpNet::forward_trace`].
    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: &MatrixF64) -> Result<GradPack> {
        let out = trace.output();
        if upstream.shape() != out.shape() || trace.layer_inputs.len() != self.num_layers() {
            return Err(Error::shape(
                "MlpNet::backward",
                format!("{}x{}", out.rows(), out.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let n = self.num_layers();
        let mut weights = vec![MatrixF64::zeros(0, 0); n];
        let mut biases = vec![MatrixF64::zeros(0, 0); n];
        let mut delta = upstream.clone();
        for i in (0..n).rev() {
            if i < n - 1 {
                // ReLU gate; the derivative at exactly zero is taken as zero.
                delta = delta.zip_map(&trace.pre_activations[i], |d, z| if z > 0.0 { d } else { 0.0 })?;
            }
            weights[i] = delta.t_matmul(&trace.layer_inputs[i])?;
            biases[i] = delta.column_sums();
            delta = delta.matmul(&self.weights[i])?;
        }
        Ok(GradPack {
            weights,
            biases,
            input: delta,
        })
    }

    fn check_input(&self, input: &MatrixF64) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(
                "MlpNet::forward",
                format!("{} input columns", self.input_dim()),
                input.cols(),
            ));
        }
        Ok(())
    }
}

impl Encode for MlpNet {
    fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.dims.len());
        for &d in &self.dims {
            enc.usize(d);
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            enc.f64s(w.as_slice());
            enc.f64s(b.as_slice());
        }
    }
}

impl Decode for MlpNet {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let n = dec.seq_len()?;
        let dims = (0..n).map(|_| dec.usize()).collect::<Result<Vec<_>>>()?;
        let mut net = MlpNet::zeros(&dims).map_err(|e| Error::Decode(e.to_string()))?;
        for i in 0..net.num_layers() {
            let w = dec.f64s()?;
            let b = dec.f64s()?;
            if w.len() != net.weights[i].len() || b.len() != net.biases[i].len() {
                return Err(Error::Decode(format!("layer {i} does not match dims {dims:?}")));
            }
            net.weights[i].as_mut_slice().copy_from_slice(&w);
            net.biases[i].as_mut_slice().copy_from_slice(&b);
        }
        Ok(net)
    }
}
