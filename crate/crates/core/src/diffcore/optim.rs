use super::{GradPack, MatrixF64, MlpNet};
use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    RmsProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        }
    }
}

/// Optimizer settings plus per-parameter state.
///
/// SGD: `p ± lr·g`. RMSProp: `acc ← decay·acc + (1−decay)·g²`, then `p ± lr·g/√(acc+eps)`.
/// Accumulators are created on first use with the shapes of the updated tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub kind: OptKind,
    pub lr: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    accumulators: Vec<MatrixF64>,
}

impl OptState {
    pub fn sgd(lr: f64) -> Self {
        Self::new(OptKind::Sgd, lr, 0.99, 1e-8)
    }

    pub fn rmsprop(lr: f64, decay: f64, eps: f64) -> Self {
        Self::new(OptKind::RmsProp, lr, decay, eps)
    }

    pub fn new(kind: OptKind, lr: f64, rms_decay: f64, rms_eps: f64) -> Self {
        Self {
            kind,
            lr,
            rms_decay,
            rms_eps,
            accumulators: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.kind == OptKind::RmsProp && !(self.rms_decay > 0.0 && self.rms_decay < 1.0 && self.rms_eps > 0.0) {
            return Err(Error::Config(format!(
                "RMSProp needs decay in (0,1) and eps > 0, got decay={} eps={:e}",
                self.rms_decay, self.rms_eps
            )));
        }
        Ok(())
    }

    pub fn accumulators(&self) -> &[MatrixF64] {
        &self.accumulators
    }

    /// Clears accumulated RMSProp statistics.
    pub fn reset(&mut self) {
        self.accumulators.clear();
    }

    fn ensure_slots(&mut self, shapes: impl Iterator<Item = (usize, usize)>) -> Result<()> {
        let shapes: Vec<_> = shapes.collect();
        if self.accumulators.is_empty() {
            self.accumulators = shapes.iter().map(|&(r, c)| MatrixF64::zeros(r, c)).collect();
            return Ok(());
        }
        let current: Vec<_> = self.accumulators.iter().map(MatrixF64::shape).collect();
        if current != shapes {
            return Err(Error::shape("OptState", format!("{current:?}"), format!("{shapes:?}")));
        }
        Ok(())
    }

    fn step_slot(&mut self, slot: usize, params: &mut [f64], grads: &[f64], dir: Direction) {
        let sign = dir.sign();
        match self.kind {
            OptKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p += sign * self.lr * g;
                }
            }
            OptKind::RmsProp => {
                let acc = self.accumulators[slot].as_mut_slice();
                for ((p, g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
                    *a = self.rms_decay * *a + (1.0 - self.rms_decay) * g * g;
                    *p += sign * self.lr * g / (*a + self.rms_eps).sqrt();
                }
            }
        }
    }
}

/// One optimizer step on every parameter of `net`.
pub fn apply_update(net: &mut MlpNet, grads: &GradPack, opt: &mut OptState, dir: Direction) -> Result<()> {
    if grads.weights.len() != net.num_layers() {
        return Err(Error::shape("apply_update", net.num_layers(), grads.weights.len()));
    }
    for i in 0..net.num_layers() {
        if grads.weights[i].shape() != net.weights()[i].shape() || grads.biases[i].shape() != net.biases()[i].shape() {
            return Err(Error::shape(
                "apply_update",
                format!("layer {i} {:?}", net.weights()[i].shape()),
                format!("{:?}", grads.weights[i].shape()),
            ));
        }
    }
    let shapes: Vec<(usize, usize)> = net
        .weights()
        .iter()
        .zip(net.biases())
        .flat_map(|(w, b)| [w.shape(), b.shape()])
        .collect();
    opt.ensure_slots(shapes.into_iter())?;
    for i in 0..net.num_layers() {
        opt.step_slot(2 * i, net.weights_mut()[i].as_mut_slice(), grads.weights[i].as_slice(), dir);
        opt.step_slot(2 * i + 1, net.biases_mut()[i].as_mut_slice(), grads.biases[i].as_slice(), dir);
    }
    Ok(())
}

/// One optimizer step on a scalar parameter; returns the new value.
pub fn apply_scalar_update(value: f64, grad: f64, opt: &mut OptState, dir: Direction) -> Result<f64> {
    opt.ensure_slots(std::iter::once((1, 1)))?;
    let mut p = [value];
    opt.step_slot(0, &mut p, &[grad], dir);
    Ok(p[0])
}

impl Encode for OptState {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self.kind {
            OptKind::Sgd => 0,
            OptKind::RmsProp => 1,
        });
        enc.f64(self.lr);
        enc.f64(self.rms_decay);
        enc.f64(self.rms_eps);
        enc.put(&self.accumulators);
    }
}

impl Decode for OptState {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let kind = match dec.u8()? {
            0 => OptKind::Sgd,
            1 => OptKind::RmsProp,
            k => return Err(Error::Decode(format!("unknown optimizer kind {k}"))),
        };
        Ok(Self {
            kind,
            lr: dec.f64()?,
            rms_decay: dec.f64()?,
            rms_eps: dec.f64()?,
            accumulators: dec.get()?,
        })
    }
}
