//! Residual code-difference network:
//! `Δ = W2 · dropout(ReLU(BN(W1·β + b1))) + b2`, prediction `β + Δ`.
//!
//! Batches are matrices with one code per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::{seed, Error, Result};

pub const DEFAULT_HIDDEN: usize = 100;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// hidden × K
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub bn_scale: DVector<f64>,
    pub bn_shift: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    /// K × hidden
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Gradients of the trainable parameters, same shapes as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub bn_scale: DVector<f64>,
    pub bn_shift: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl MlpGrads {
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.bn_scale.as_slice(),
            self.bn_shift.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    /// Whether normalisation used the batch's own statistics.
    batch_stats: bool,
    input: DMatrix<f64>,
    normalized: DMatrix<f64>,
    inv_std: DVector<f64>,
    pre_activation: DMatrix<f64>,
    /// Inverted-dropout multipliers (0 or 1/keep), when dropout is active.
    dropout: Option<DMatrix<f64>>,
    hidden: DMatrix<f64>,
    batch_mean: DVector<f64>,
    batch_var: DVector<f64>,
}

impl ForwardCache {
    pub fn uses_batch_stats(&self) -> bool {
        self.batch_stats
    }
}

impl MlpParams {
    /// All-zero network with unit batch-norm scale and variance: predicts
    /// the identity.
    pub fn zeros(code_len: usize, hidden: usize) -> Self {
        MlpParams {
            w1: DMatrix::zeros(hidden, code_len),
            b1: DVector::zeros(hidden),
            bn_scale: DVector::from_element(hidden, 1.0),
            bn_shift: DVector::zeros(hidden),
            running_mean: DVector::zeros(hidden),
            running_var: DVector::from_element(hidden, 1.0),
            w2: DMatrix::zeros(code_len, hidden),
            b2: DVector::zeros(code_len),
        }
    }

    /// Xavier-uniform first layer; the output layer starts at zero so the
    /// initial predictor is the identity.
    pub fn init(code_len: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(code_len, hidden);
        let bound = (6.0 / (code_len + hidden) as f64).sqrt();
        for w in p.w1.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn code_len(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.bn_scale.as_mut_slice(),
            self.bn_shift.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.bn_scale.as_slice(),
            self.bn_shift.as_slice(),
            self.running_mean.as_slice(),
            self.running_var.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
        .iter()
        .all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Moves the running statistics towards the batch statistics of a
    /// train-mode pass (unbiased variance).
    pub fn update_running_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        if !cache.batch_stats {
            return;
        }
        let b = cache.input.ncols() as f64;
        let unbias = b / (b - 1.0);
        self.running_mean = (1.0 - momentum) * &self.running_mean + momentum * &cache.batch_mean;
        self.running_var = (1.0 - momentum) * &self.running_var + (momentum * unbias) * &cache.batch_var;
    }

    /// Eval-mode prediction `β + Δ` for one code.
    pub fn predict(&self, code: &DVector<f64>) -> Result<DVector<f64>> {
        let input = DMatrix::from_column_slice(code.len(), 1, code.as_slice());
        let (delta, _) = forward(self, &input, Mode::Eval, 0.0, &mut seed::rng(0))?;
        Ok(code + delta.column(0))
    }

    /// Eval-mode prediction for a batch of codes (one per column).
    pub fn predict_batch(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (delta, _) = forward(self, codes, Mode::Eval, 0.0, &mut seed::rng(0))?;
        Ok(codes + delta)
    }
}

fn add_column(m: &mut DMatrix<f64>, v: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += v;
    }
}

/// Forward pass returning the code differences Δ (K × B) and the cache.
///
/// In train mode a batch of two or more codes is normalised with its own
/// statistics; a single code falls back to the running statistics. Dropout
/// draws from `rng` only in train mode with `dropout > 0`.
pub fn forward(
    params: &MlpParams,
    input: &DMatrix<f64>,
    mode: Mode,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, ForwardCache)> {
    if input.nrows() != params.code_len() {
        return Err(Error::LengthMismatch {
            expected: params.code_len(),
            actual: input.nrows(),
        });
    }
    if !(0.0..=1.0).contains(&dropout) {
        return Err(Error::InvalidArgument(format!("dropout probability {dropout} outside [0, 1]")));
    }
    let b = input.ncols();
    let h = params.hidden();
    let mut z = &params.w1 * input;
    add_column(&mut z, &params.b1);

    let batch_stats = mode == Mode::Train && b > 1;
    let (mean, var) = if batch_stats {
        let mean = z.column_mean();
        let mut var = DVector::zeros(h);
        for col in z.column_iter() {
            var += (col - &mean).map(|d| d * d);
        }
        (mean, var / b as f64)
    } else {
        (params.running_mean.clone(), params.running_var.clone())
    };
    let inv_std = var.map(|v| 1.0 / (v + BN_EPSILON).sqrt());

    let mut normalized = z;
    for mut col in normalized.column_iter_mut() {
        col -= &mean;
        col.component_mul_assign(&inv_std);
    }
    let mut pre_activation = normalized.clone();
    for mut col in pre_activation.column_iter_mut() {
        col.component_mul_assign(&params.bn_scale);
        col += &params.bn_shift;
    }
    let mut hidden = pre_activation.map(|y| y.max(0.0));
    let mask = if mode == Mode::Train && dropout > 0.0 {
        let keep = 1.0 - dropout;
        let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
        let mask = DMatrix::from_fn(h, b, |_, _| if rng.random::<f64>() < keep { scale } else { 0.0 });
        hidden.component_mul_assign(&mask);
        Some(mask)
    } else {
        None
    };
    let mut delta = &params.w2 * &hidden;
    add_column(&mut delta, &params.b2);
    Ok((
        delta,
        ForwardCache {
            mode,
            batch_stats,
            input: input.clone(),
            normalized,
            inv_std,
            pre_activation,
            dropout: mask,
            hidden,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Reverse pass through a train-mode forward. `grad_delta` is dL/dΔ
/// (K × B); returns parameter gradients and dL/dβ through Δ only (the
/// residual identity path is not included).
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_delta: &DMatrix<f64>) -> Result<(MlpGrads, DMatrix<f64>)> {
    if cache.mode != Mode::Train {
        return Err(Error::InvalidArgument("backward needs a train-mode forward cache".into()));
    }
    if grad_delta.shape() != (params.code_len(), cache.input.ncols()) {
        return Err(Error::LengthMismatch {
            expected: params.code_len() * cache.input.ncols(),
            actual: grad_delta.len(),
        });
    }
    let b = cache.input.ncols() as f64;
    let w2 = grad_delta * cache.hidden.transpose();
    let b2 = grad_delta.column_sum();
    let mut d_hidden = params.w2.tr_mul(grad_delta);
    if let Some(mask) = &cache.dropout {
        d_hidden.component_mul_assign(mask);
    }
    let d_pre = d_hidden.zip_map(&cache.pre_activation, |g, y| if y > 0.0 { g } else { 0.0 });
    let bn_scale = d_pre.component_mul(&cache.normalized).column_sum();
    let bn_shift = d_pre.column_sum();
    let mut d_norm = d_pre;
    for mut col in d_norm.column_iter_mut() {
        col.component_mul_assign(&params.bn_scale);
    }
    let mut d_z = if cache.batch_stats {
        let sum = d_norm.column_sum();
        let dot = d_norm.component_mul(&cache.normalized).column_sum();
        let mut d_z = d_norm * b;
        for (mut col, xhat) in d_z.column_iter_mut().zip(cache.normalized.column_iter()) {
            col -= &sum;
            col -= xhat.component_mul(&dot);
        }
        d_z / b
    } else {
        d_norm
    };
    for mut col in d_z.column_iter_mut() {
        col.component_mul_assign(&cache.inv_std);
    }
    let w1 = &d_z * cache.input.transpose();
    let b1 = d_z.column_sum();
    let d_input = params.w1.tr_mul(&d_z);
    Ok((
        MlpGrads {
            w1,
            b1,
            bn_scale,
            bn_shift,
            w2,
            b2,
        },
        d_input,
    ))
}
