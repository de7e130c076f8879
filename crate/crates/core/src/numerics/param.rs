use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// A trainable array with its gradient and Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    pub adam_m: Matrix<T>,
    pub adam_v: Matrix<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Matrix<T>) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Parameter::new(name, Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything that owns an ordered, stable list of parameters.
pub trait ParamSet<T: Scalar> {
    fn params(&self) -> Vec<&Parameter<T>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

impl<T: Scalar> ParamSet<T> for Vec<Parameter<T>> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.iter_mut().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step; the gradient is zeroed afterwards.
///
/// A parameter whose gradient is identically zero is left untouched: its
/// value, moments and step count do not change.
pub fn adam_update<T: Scalar>(p: &mut Parameter<T>, cfg: &AdamConfig) -> Result<()> {
    if !p.grad.is_finite() {
        return Err(Error::Training(format!(
            "non-finite gradient in parameter '{}'",
            p.name
        )));
    }
    if p.grad.as_slice().iter().all(|g| g.is_zero()) {
        return Ok(());
    }
    p.step_count += 1;
    let t = p.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let value = p.value.as_mut_slice();
    let m = p.adam_m.as_mut_slice();
    let v = p.adam_v.as_mut_slice();
    for (i, g) in p.grad.as_slice().iter().enumerate() {
        let g = g.as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::lit(mi);
        v[i] = T::lit(vi);
        let step = cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        value[i] = T::lit(value[i].as_f64() - step);
    }
    p.zero_grad();
    Ok(())
}

/// Global L2 norm of all gradients, accumulated in `f64`.
pub fn global_grad_norm<T: Scalar>(params: &[&mut Parameter<T>]) -> f64 {
    params.iter().map(|p| p.grad.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the applied scale (1 when no clipping happened).
pub fn clip_global_norm<T: Scalar>(params: &mut [&mut Parameter<T>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::contract(format!("max_norm must be > 0, got {max_norm}")));
    }
    let norm = global_grad_norm(params);
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for p in params.iter_mut() {
        p.grad.scale(T::lit(scale));
    }
    Ok(scale)
}
