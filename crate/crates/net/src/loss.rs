//! Soft dice plus weighted cross entropy, with the adaptive weight map.

use nuclick_core::{BinaryMask, Grid};

use crate::error::{invalid, Result};
use crate::float::Float;
use crate::tensor::Tensor;

pub const DICE_EPS: f64 = 1e-6;
pub const PROB_CLAMP: f64 = 1e-7;

/// Per-pixel loss weights, all ≥ 1.
pub type WeightMap = Grid<f64>;

/// α = max(ΣG̃ / ΣG, 1).
pub fn alpha(g: &BinaryMask, other: &BinaryMask) -> Result<f64> {
    g.ensure_same_size(other)?;
    let (sg, so) = (g.count(), other.count());
    if sg == 0 {
        return Err(invalid("weight map needs a non-empty target"));
    }
    Ok((so as f64 / sg as f64).max(1.0))
}

/// W = α²·G + α·G̃ + 1, where G̃ holds the other objects in the patch.
pub fn weight_map(g: &BinaryMask, other: &BinaryMask) -> Result<WeightMap> {
    let a = alpha(g, other)?;
    if g.intersects(other) {
        return Err(invalid("target and other-object masks overlap"));
    }
    let mut w = Grid::filled(g.width(), g.height(), 1.0);
    for (i, v) in w.data_mut().iter_mut().enumerate() {
        if g.data()[i] {
            *v += a * a;
        } else if other.data()[i] {
            *v += a;
        }
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossOptions {
    /// Use 2·Σpg in the dice numerator instead of Σpg.
    pub dice_factor_two: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub dice: f64,
    pub ce: f64,
}

impl LossValue {
    pub fn total(&self) -> f64 {
        self.dice + self.ce
    }
}

/// Loss of one map and its gradient with respect to `p`.
///
/// The clamp before the logs passes gradients straight through.
pub fn loss<F: Float>(p: &[F], g: &[F], w: &[F], opts: LossOptions) -> Result<(LossValue, Vec<F>)> {
    if p.len() != g.len() || p.len() != w.len() {
        return Err(invalid(format!("loss inputs of lengths {}, {}, {}", p.len(), g.len(), w.len())));
    }
    if p.is_empty() {
        return Err(invalid("empty loss input"));
    }
    let n = p.len() as f64;
    let f = if opts.dice_factor_two { 2.0 } else { 1.0 };
    let (mut inter, mut sum) = (0.0, 0.0);
    for (&pi, &gi) in p.iter().zip(g) {
        let (pi, gi) = (pi.to_f64(), gi.to_f64());
        inter += pi * gi;
        sum += pi + gi;
    }
    let num = f * inter + DICE_EPS;
    let den = sum + DICE_EPS;
    let dice = 1.0 - num / den;

    let mut ce = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for ((&pi, &gi), &wi) in p.iter().zip(g).zip(w) {
        let (pi, gi, wi) = (pi.to_f64(), gi.to_f64(), wi.to_f64());
        let q = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        ce -= wi * (gi * q.ln() + (1.0 - gi) * (1.0 - q).ln());
        let d_dice = -(f * gi * den - num) / (den * den);
        let d_ce = -wi * (gi / q - (1.0 - gi) / (1.0 - q)) / n;
        grad.push(F::from_f64(d_dice + d_ce));
    }
    Ok((LossValue { dice, ce: ce / n }, grad))
}

/// Mean loss over a batch of [N, 1, H, W] maps, with its gradient.
pub fn batch_loss<F: Float>(
    p: &Tensor<F>,
    g: &Tensor<F>,
    w: &Tensor<F>,
    opts: LossOptions,
) -> Result<(f64, Tensor<F>)> {
    if p.shape() != g.shape() || p.shape() != w.shape() {
        return Err(invalid("prediction, target and weights differ in shape"));
    }
    let n = p.shape()[0];
    let scale = F::from_f64(1.0 / n as f64);
    let mut total = 0.0;
    let mut grad = Tensor::zeros(p.shape());
    for i in 0..n {
        let (v, gi) = loss(p.item(i), g.item(i), w.item(i), opts)?;
        total += v.total();
        for (d, s) in grad.item_mut(i).iter_mut().zip(gi) {
            *d = s * scale;
        }
    }
    Ok((total / n as f64, grad))
}
