//! Gated recurrent unit with exact forward and backward passes.
//!
//! Batched: every matrix row is one independent sequence.
//!
//! ```text
//! a = [x, h_prev]
//! z = sigmoid(a W_z^T + b_z)
//! r = sigmoid(a W_r^T + b_r)
//! c = tanh([x, r * h_prev] W_c^T + b_c)
//! h = (1 - z) * h_prev + z * c
//! ```

use rand::Rng;

use crate::error::{ensure_dims, Result};
use crate::numerics::{gemm, Matrix, ParamSet, Parameter};
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Debug)]
pub struct GruCell<T> {
    input_size: usize,
    hidden_size: usize,
    pub w_z: Parameter<T>,
    pub w_r: Parameter<T>,
    pub w_c: Parameter<T>,
    pub b_z: Parameter<T>,
    pub b_r: Parameter<T>,
    pub b_c: Parameter<T>,
}

/// Values retained from one forward step, sufficient for the backward step.
#[derive(Clone, Debug)]
pub struct GruCache<T> {
    /// `[x, h_prev]`
    a: Matrix<T>,
    /// `[x, r * h_prev]`
    a_c: Matrix<T>,
    h_prev: Matrix<T>,
    z: Matrix<T>,
    r: Matrix<T>,
    c: Matrix<T>,
}

impl<T: Scalar> GruCache<T> {
    pub fn update_gate(&self) -> &Matrix<T> {
        &self.z
    }

    pub fn reset_gate(&self) -> &Matrix<T> {
        &self.r
    }

    pub fn candidate(&self) -> &Matrix<T> {
        &self.c
    }
}

impl<T: Scalar> GruCell<T> {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new<R: Rng + ?Sized>(name: &str, input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let fan_in = input_size + hidden_size;
        let s = 1.0 / (fan_in as f64).sqrt();
        let w = |gate: &str, rng: &mut R| {
            Parameter::new(
                format!("{name}.w_{gate}"),
                Matrix::uniform(hidden_size, fan_in, s, rng),
            )
        };
        let w_z = w("z", rng);
        let w_r = w("r", rng);
        let w_c = w("c", rng);
        GruCell {
            input_size,
            hidden_size,
            w_z,
            w_r,
            w_c,
            b_z: Parameter::zeros(format!("{name}.b_z"), 1, hidden_size),
            b_r: Parameter::zeros(format!("{name}.b_r"), 1, hidden_size),
            b_c: Parameter::zeros(format!("{name}.b_c"), 1, hidden_size),
        }
    }

    /// All-zero weights and biases.
    pub fn zeros(name: &str, input_size: usize, hidden_size: usize) -> Self {
        let fan_in = input_size + hidden_size;
        let w = |gate: &str| Parameter::zeros(format!("{name}.w_{gate}"), hidden_size, fan_in);
        let b = |gate: &str| Parameter::zeros(format!("{name}.b_{gate}"), 1, hidden_size);
        GruCell {
            input_size,
            hidden_size,
            w_z: w("z"),
            w_r: w("r"),
            w_c: w("c"),
            b_z: b("z"),
            b_r: b("r"),
            b_c: b("c"),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn forward(&self, input: &Matrix<T>, h_prev: &Matrix<T>) -> Result<(Matrix<T>, GruCache<T>)> {
        let batch = input.rows();
        ensure_dims!(
            input.cols() == self.input_size,
            "GRU input width {} != {}",
            input.cols(),
            self.input_size
        );
        ensure_dims!(
            h_prev.shape() == (batch, self.hidden_size),
            "GRU h_prev shape {:?} != ({}, {})",
            h_prev.shape(),
            batch,
            self.hidden_size
        );
        let a = Matrix::hcat(&[input, h_prev])?;
        let gate = |w: &Parameter<T>, b: &Parameter<T>, src: &Matrix<T>| -> Result<Matrix<T>> {
            let mut pre = Matrix::zeros(batch, self.hidden_size);
            gemm(&mut pre, src, false, &w.value, true, T::one(), T::zero())?;
            pre.add_row_broadcast(&b.value)?;
            Ok(pre)
        };
        let z = gate(&self.w_z, &self.b_z, &a)?.map(sigmoid);
        let r = gate(&self.w_r, &self.b_r, &a)?.map(sigmoid);
        let rh = r.zip_map(h_prev, |r, h| r * h)?;
        let a_c = Matrix::hcat(&[input, &rh])?;
        let c = gate(&self.w_c, &self.b_c, &a_c)?.map(|v| v.tanh());
        let mut h = Matrix::zeros(batch, self.hidden_size);
        for (((o, &zv), &cv), &hp) in h
            .as_mut_slice()
            .iter_mut()
            .zip(z.as_slice())
            .zip(c.as_slice())
            .zip(h_prev.as_slice())
        {
            *o = (T::one() - zv) * hp + zv * cv;
        }
        let cache = GruCache {
            a,
            a_c,
            h_prev: h_prev.clone(),
            z,
            r,
            c,
        };
        Ok((h, cache))
    }

    /// Backpropagates `dh` (gradient w.r.t. the step output) through one step.
    ///
    /// Parameter gradients are accumulated into `grad`; returns the gradients
    /// with respect to the step input and `h_prev`.
    pub fn backward(&mut self, cache: &GruCache<T>, dh: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let batch = cache.h_prev.rows();
        let (i_sz, h_sz) = (self.input_size, self.hidden_size);
        ensure_dims!(
            cache.a.cols() == i_sz + h_sz && cache.h_prev.cols() == h_sz,
            "GRU cache does not belong to this cell"
        );
        ensure_dims!(
            dh.shape() == (batch, h_sz),
            "GRU dh shape {:?} != ({}, {})",
            dh.shape(),
            batch,
            h_sz
        );
        let one = T::one();
        let n = batch * h_sz;
        let (z, r, c, hp) = (
            cache.z.as_slice(),
            cache.r.as_slice(),
            cache.c.as_slice(),
            cache.h_prev.as_slice(),
        );
        let g = dh.as_slice();

        let mut dz_pre = Matrix::zeros(batch, h_sz);
        let mut dc_pre = Matrix::zeros(batch, h_sz);
        let mut dh_prev = Matrix::zeros(batch, h_sz);
        {
            let (dzp, dcp, dhp) = (
                dz_pre.as_mut_slice(),
                dc_pre.as_mut_slice(),
                dh_prev.as_mut_slice(),
            );
            for k in 0..n {
                let dz = g[k] * (c[k] - hp[k]);
                dzp[k] = dz * z[k] * (one - z[k]);
                let dc = g[k] * z[k];
                dcp[k] = dc * (one - c[k] * c[k]);
                dhp[k] = g[k] * (one - z[k]);
            }
        }

        // Candidate path.
        gemm(&mut self.w_c.grad, &dc_pre, true, &cache.a_c, false, one, one)?;
        dc_pre.accumulate_col_sums(&mut self.b_c.grad)?;
        let mut da_c = Matrix::zeros(batch, i_sz + h_sz);
        gemm(&mut da_c, &dc_pre, false, &self.w_c.value, false, one, T::zero())?;

        let mut dr_pre = Matrix::zeros(batch, h_sz);
        {
            let drp = dr_pre.as_mut_slice();
            let dhp = dh_prev.as_mut_slice();
            for b in 0..batch {
                let drh = &da_c.row(b)[i_sz..];
                for j in 0..h_sz {
                    let k = b * h_sz + j;
                    let dr = drh[j] * hp[k];
                    drp[k] = dr * r[k] * (one - r[k]);
                    dhp[k] += drh[j] * r[k];
                }
            }
        }

        // Gate paths share the input a = [x, h_prev].
        gemm(&mut self.w_z.grad, &dz_pre, true, &cache.a, false, one, one)?;
        dz_pre.accumulate_col_sums(&mut self.b_z.grad)?;
        gemm(&mut self.w_r.grad, &dr_pre, true, &cache.a, false, one, one)?;
        dr_pre.accumulate_col_sums(&mut self.b_r.grad)?;
        let mut da = Matrix::zeros(batch, i_sz + h_sz);
        gemm(&mut da, &dz_pre, false, &self.w_z.value, false, one, T::zero())?;
        gemm(&mut da, &dr_pre, false, &self.w_r.value, false, one, one)?;

        let mut dinput = Matrix::zeros(batch, i_sz);
        for b in 0..batch {
            let row_a = da.row(b);
            let row_ac = da_c.row(b);
            let out = dinput.row_mut(b);
            for j in 0..i_sz {
                out[j] = row_a[j] + row_ac[j];
            }
            let dhp = &mut dh_prev.as_mut_slice()[b * h_sz..(b + 1) * h_sz];
            for j in 0..h_sz {
                dhp[j] += row_a[i_sz + j];
            }
        }
        Ok((dinput, dh_prev))
    }
}

impl<T: Scalar> ParamSet<T> for GruCell<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.w_z, &self.w_r, &self.w_c, &self.b_z, &self.b_r, &self.b_c]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_c,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_c,
        ]
    }
}
