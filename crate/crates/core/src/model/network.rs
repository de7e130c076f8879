use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::codec::BinLayout;
use crate::dataset::{AgentTrack, TrialData};
use crate::error::{ensure_dims, Error, Result};
use crate::gru::{GruCache, GruCell};
use crate::model::config::{LabelMode, ModelConfig, Variant};
use crate::numerics::{
    gemm, load_checkpoint, save_checkpoint, softmax_into, Matrix, ParamSet, Parameter, PROB_FLOOR,
};
use crate::scalar::Scalar;

/// Clamp applied to `y_hat` before the binary cross-entropy.
pub const LABEL_CLAMP: f64 = 1e-6;

/// Forces one unit of a discriminative level to a fixed value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitOverride {
    pub level: usize,
    pub unit: usize,
    pub value: f64,
}

/// Recurrent state of a batch of sequences, one row per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub disc: Vec<Matrix<T>>,
    /// Generative states; for BESNet row `b` holds `ĥ_{i+1}` after step `i`.
    pub gen: Vec<Matrix<T>>,
}

impl<T: Scalar> ModelState<T> {
    pub fn zeros(config: &ModelConfig, batch: usize) -> Self {
        ModelState {
            disc: config.disc_widths().iter().map(|&u| Matrix::zeros(batch, u)).collect(),
            gen: config.gen_widths().iter().map(|&u| Matrix::zeros(batch, u)).collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.disc.first().map_or(0, Matrix::rows)
    }

    /// Concatenates single- or multi-row states along the batch axis.
    pub fn stack(parts: &[ModelState<T>]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("cannot stack zero states"));
        };
        let levels = |f: fn(&ModelState<T>) -> &Vec<Matrix<T>>| -> Result<Vec<Matrix<T>>> {
            (0..f(first).len())
                .map(|l| {
                    let cols = f(first)[l].cols();
                    let mut data = Vec::new();
                    let mut rows = 0;
                    for p in parts {
                        let m = f(p).get(l).ok_or_else(|| Error::contract("state level count mismatch"))?;
                        ensure_dims!(m.cols() == cols, "state width mismatch at level {l}");
                        data.extend_from_slice(m.as_slice());
                        rows += m.rows();
                    }
                    Matrix::from_vec(rows, cols, data)
                })
                .collect()
        };
        Ok(ModelState {
            disc: levels(|s| &s.disc)?,
            gen: levels(|s| &s.gen)?,
        })
    }

    /// Zeroes the rows flagged in `rows`.
    pub fn reset_rows(&mut self, rows: &[bool]) {
        for m in self.disc.iter_mut().chain(self.gen.iter_mut()) {
            for (b, &r) in rows.iter().enumerate() {
                if r {
                    m.row_mut(b).fill(T::zero());
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.disc.iter().chain(&self.gen).all(Matrix::is_finite)
    }

    /// Row `b` of every level, discriminative then generative, concatenated.
    pub fn flatten_row(&self, b: usize) -> Vec<f64> {
        self.disc
            .iter()
            .chain(&self.gen)
            .flat_map(|m| m.row(b).iter().map(|v| v.as_f64()))
            .collect()
    }
}

/// One step of a batch.
#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    /// `B x N` action scores in `[0, 1]`, computed before any override.
    pub y_hat: Matrix<T>,
    /// `B x Σ bins` per-dimension distributions over the next motion;
    /// zero columns for BENet.
    pub x_hat: Matrix<T>,
    pub state: ModelState<T>,
}

/// A training window: `len` consecutive frames for each of `batch` rows.
#[derive(Clone, Debug)]
pub struct Window<T> {
    pub batch: usize,
    /// Per step, `B x (D_x + D_v)` raw inputs.
    pub inputs: Vec<Matrix<T>>,
    /// Per step, `B * D_x` bin indices of the next frame's motion.
    pub targets: Vec<Vec<usize>>,
    /// Per step, whether row `b` has a motion target.
    pub target_valid: Vec<Vec<bool>>,
    /// Per step, `B * N` labels.
    pub labels: Vec<Vec<bool>>,
    /// Per step, whether row `b` is labeled.
    pub label_mask: Vec<Vec<bool>>,
    /// Rows whose state is zeroed before the first step.
    pub reset: Vec<bool>,
}

impl<T: Scalar> Window<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Frames that contribute to at least one loss term.
    pub fn active_frames(&self) -> usize {
        self.target_valid
            .iter()
            .zip(&self.label_mask)
            .map(|(tv, lm)| tv.iter().zip(lm).filter(|(a, b)| **a || **b).count())
            .sum()
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let (b, t) = (self.batch, self.len());
        ensure_dims!(self.reset.len() == b, "reset flags {} != batch {}", self.reset.len(), b);
        ensure_dims!(
            self.targets.len() == t
                && self.target_valid.len() == t
                && self.labels.len() == t
                && self.label_mask.len() == t,
            "window sequences are not aligned"
        );
        for s in 0..t {
            ensure_dims!(
                self.inputs[s].shape() == (b, cfg.input_dims()),
                "input shape {:?} at step {s}, expected ({b}, {})",
                self.inputs[s].shape(),
                cfg.input_dims()
            );
            ensure_dims!(
                self.targets[s].len() == b * cfg.motion_dims && self.target_valid[s].len() == b,
                "motion targets misaligned at step {s}"
            );
            ensure_dims!(self.label_mask[s].len() == b, "label mask misaligned at step {s}");
            if self.labels[s].len() != b * cfg.n_actions() {
                return Err(Error::data(format!(
                    "labels missing at step {s}: {} values for {} rows x {} actions",
                    self.labels[s].len(),
                    b,
                    cfg.n_actions()
                )));
            }
        }
        Ok(())
    }
}

/// Loss sums over a window or an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub c_y: f64,
    pub c_x: f64,
    pub c: f64,
    pub labeled_frames: usize,
    pub motion_frames: usize,
}

impl LossReport {
    pub fn new(c_y: f64, c_x: f64, lambda: f64, labeled_frames: usize, motion_frames: usize) -> Self {
        LossReport {
            c_y,
            c_x,
            c: lambda * c_y + (1.0 - lambda) * c_x,
            labeled_frames,
            motion_frames,
        }
    }

    pub fn accumulate(&mut self, other: &LossReport) {
        self.c_y += other.c_y;
        self.c_x += other.c_x;
        self.c += other.c;
        self.labeled_frames += other.labeled_frames;
        self.motion_frames += other.motion_frames;
    }

    pub fn is_finite(&self) -> bool {
        self.c.is_finite() && self.c_x.is_finite() && self.c_y.is_finite()
    }

    /// Motion loss per motion frame.
    pub fn c_x_per_frame(&self) -> f64 {
        self.c_x / self.motion_frames.max(1) as f64
    }

    /// Label loss per labeled frame.
    pub fn c_y_per_frame(&self) -> f64 {
        self.c_y / self.labeled_frames.max(1) as f64
    }
}

/// Everything computed by one forward step.
struct StepTrace<T> {
    disc: Vec<Matrix<T>>,
    gen: Vec<Matrix<T>>,
    disc_cache: Vec<GruCache<T>>,
    gen_cache: Vec<GruCache<T>>,
    /// Label level before overrides.
    label_h: Matrix<T>,
    probs: Matrix<T>,
}

struct Carry<T> {
    disc: Vec<Matrix<T>>,
    gen: Vec<Matrix<T>>,
}

/// The dual-stack network and its ablations.
#[derive(Clone, Debug)]
pub struct BehaviorModel<T> {
    config: ModelConfig,
    layout: BinLayout,
    disc: Vec<GruCell<T>>,
    gen: Vec<GruCell<T>>,
    out_w: Option<Parameter<T>>,
    out_b: Option<Parameter<T>>,
    norm_shift: Vec<T>,
    norm_scale: Vec<T>,
}

fn add_cols<T: Scalar>(dst: &mut Matrix<T>, src: &Matrix<T>, start: usize) {
    let w = dst.cols();
    for b in 0..dst.rows() {
        let s = &src.row(b)[start..start + w];
        for (d, v) in dst.row_mut(b).iter_mut().zip(s) {
            *d += *v;
        }
    }
}

impl<T: Scalar> BehaviorModel<T> {
    /// Randomly initialized model.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, Some(rng))
    }

    /// All weights zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::build(config, None)
    }

    fn build(config: ModelConfig, mut rng: Option<&mut dyn RngCore>) -> Result<Self> {
        config.validate()?;
        let mut cell = |name: String, i: usize, h: usize| match rng.as_deref_mut() {
            Some(r) => GruCell::new(&name, i, h, r),
            None => GruCell::zeros(&name, i, h),
        };
        let dw = config.disc_widths();
        let gw = config.gen_widths();
        let mut disc = Vec::with_capacity(dw.len());
        for (l, &u) in dw.iter().enumerate() {
            let input = if l == 0 { config.input_dims() } else { dw[l - 1] };
            disc.push(cell(format!("disc.{l}"), input, u));
        }
        let mut gen = Vec::with_capacity(gw.len());
        for (l, &u) in gw.iter().enumerate() {
            let input = if l + 1 == gw.len() { dw[l] } else { gw[l + 1] + dw[l] };
            gen.push(cell(format!("gen.{l}"), input, u));
        }
        let layout = config.layout();
        let (out_w, out_b) = match config.variant {
            Variant::Benet => (None, None),
            _ => {
                let h = config.units[0];
                let w = match rng {
                    Some(r) => Matrix::uniform(layout.total(), h, 1.0 / (h as f64).sqrt(), r),
                    None => Matrix::zeros(layout.total(), h),
                };
                (
                    Some(Parameter::new("out.w", w)),
                    Some(Parameter::zeros("out.b", 1, layout.total())),
                )
            }
        };
        let d = config.input_dims();
        Ok(BehaviorModel {
            config,
            layout,
            disc,
            gen,
            out_w,
            out_b,
            norm_shift: vec![T::zero(); d],
            norm_scale: vec![T::one(); d],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &BinLayout {
        &self.layout
    }

    pub fn disc_cells(&self) -> &[GruCell<T>] {
        &self.disc
    }

    pub fn gen_cells(&self) -> &[GruCell<T>] {
        &self.gen
    }

    pub fn disc_cells_mut(&mut self) -> &mut [GruCell<T>] {
        &mut self.disc
    }

    pub fn gen_cells_mut(&mut self) -> &mut [GruCell<T>] {
        &mut self.gen
    }

    pub fn output_weights(&self) -> Option<(&Parameter<T>, &Parameter<T>)> {
        self.out_w.as_ref().zip(self.out_b.as_ref())
    }

    pub fn output_weights_mut(&mut self) -> Option<(&mut Parameter<T>, &mut Parameter<T>)> {
        self.out_w.as_mut().zip(self.out_b.as_mut())
    }

    /// Per-input affine normalization `(input - shift) * scale`.
    pub fn input_norm(&self) -> (&[T], &[T]) {
        (&self.norm_shift, &self.norm_scale)
    }

    pub fn set_input_norm(&mut self, shift: Vec<T>, scale: Vec<T>) -> Result<()> {
        let d = self.config.input_dims();
        ensure_dims!(shift.len() == d && scale.len() == d, "normalization width != {d}");
        if shift.iter().chain(&scale).any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite input normalization"));
        }
        self.norm_shift = shift;
        self.norm_scale = scale;
        Ok(())
    }

    /// Z-scores every input column from rows of raw inputs; constant columns
    /// get scale 1.
    pub fn fit_input_norm<'a>(&mut self, rows: impl Iterator<Item = &'a [f64]>) -> Result<()> {
        let d = self.config.input_dims();
        let mut n = 0usize;
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for r in rows {
            ensure_dims!(r.len() == d, "input row width {} != {d}", r.len());
            n += 1;
            for j in 0..d {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
        }
        if n == 0 {
            return Err(Error::data("no rows to fit input normalization"));
        }
        let mut shift = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        for j in 0..d {
            let mean = sum[j] / n as f64;
            let var = (sq[j] / n as f64 - mean * mean).max(0.0);
            let sd = var.sqrt();
            shift.push(T::lit(mean));
            scale.push(T::lit(if sd > 1e-8 { 1.0 / sd } else { 1.0 }));
        }
        self.set_input_norm(shift, scale)
    }

    fn normalize(&self, input: &Matrix<T>) -> Matrix<T> {
        let mut out = input.clone();
        for b in 0..out.rows() {
            for ((v, s), k) in out.row_mut(b).iter_mut().zip(&self.norm_shift).zip(&self.norm_scale) {
                *v = (*v - *s) * *k;
            }
        }
        out
    }

    fn check_state(&self, state: &ModelState<T>, batch: usize) -> Result<()> {
        let dw = self.config.disc_widths();
        let gw = self.config.gen_widths();
        ensure_dims!(
            state.disc.len() == dw.len() && state.gen.len() == gw.len(),
            "state has {}+{} levels, model {}+{}",
            state.disc.len(),
            state.gen.len(),
            dw.len(),
            gw.len()
        );
        for (m, &u) in state.disc.iter().zip(&dw).chain(state.gen.iter().zip(&gw)) {
            ensure_dims!(m.shape() == (batch, u), "state shape {:?} != ({batch}, {u})", m.shape());
        }
        Ok(())
    }

    fn trace_step(
        &self,
        input: &Matrix<T>,
        prev: &ModelState<T>,
        overrides: &[UnitOverride],
    ) -> Result<StepTrace<T>> {
        let batch = input.rows();
        ensure_dims!(
            input.cols() == self.config.input_dims(),
            "input width {} != {}",
            input.cols(),
            self.config.input_dims()
        );
        self.check_state(prev, batch)?;
        let x = self.normalize(input);
        let label_level = self.config.label_level();

        let mut disc = Vec::with_capacity(self.disc.len());
        let mut disc_cache = Vec::with_capacity(self.disc.len());
        let mut label_h = None;
        for (l, cell) in self.disc.iter().enumerate() {
            let src = if l == 0 { &x } else { &disc[l - 1] };
            let (mut h, cache) = cell.forward(src, &prev.disc[l])?;
            if l == label_level {
                label_h = Some(h.clone());
            }
            for o in overrides.iter().filter(|o| o.level == l) {
                ensure_dims!(o.unit < h.cols(), "override unit {} >= width {}", o.unit, h.cols());
                for b in 0..batch {
                    h.set(b, o.unit, T::lit(o.value));
                }
            }
            disc.push(h);
            disc_cache.push(cache);
        }
        if let Some(o) = overrides.iter().find(|o| o.level >= self.disc.len()) {
            return Err(Error::contract(format!("override level {} out of range", o.level)));
        }

        let n_gen = self.gen.len();
        let mut gen: Vec<Option<Matrix<T>>> = vec![None; n_gen];
        let mut gen_cache: Vec<Option<GruCache<T>>> = vec![None; n_gen];
        for l in (0..n_gen).rev() {
            let (h, cache) = if l + 1 == n_gen {
                self.gen[l].forward(&disc[l], &prev.gen[l])?
            } else {
                let above = gen[l + 1].as_ref().expect("upper level computed");
                let src = Matrix::hcat(&[above, &disc[l]])?;
                self.gen[l].forward(&src, &prev.gen[l])?
            };
            gen[l] = Some(h);
            gen_cache[l] = Some(cache);
        }
        let gen: Vec<Matrix<T>> = gen.into_iter().map(|m| m.expect("computed")).collect();
        let gen_cache: Vec<GruCache<T>> = gen_cache.into_iter().map(|c| c.expect("computed")).collect();

        let total = self.layout.total();
        let probs = match (&self.out_w, &self.out_b) {
            (Some(w), Some(bias)) => {
                let src = self.out_source(&disc, &gen);
                let mut logits = Matrix::zeros(batch, total);
                gemm(&mut logits, src, false, &w.value, true, T::one(), T::zero())?;
                logits.add_row_broadcast(&bias.value)?;
                let mut probs = Matrix::zeros(batch, total);
                for b in 0..batch {
                    for d in 0..self.layout.dims() {
                        let (o, n) = (self.layout.offset(d), self.layout.count(d));
                        softmax_into(&logits.row(b)[o..o + n], &mut probs.row_mut(b)[o..o + n]);
                    }
                }
                probs
            }
            _ => Matrix::zeros(batch, 0),
        };
        Ok(StepTrace {
            disc,
            gen,
            disc_cache,
            gen_cache,
            label_h: label_h.expect("label level exists"),
            probs,
        })
    }

    fn out_source<'a>(&self, disc: &'a [Matrix<T>], gen: &'a [Matrix<T>]) -> &'a Matrix<T> {
        match self.config.variant {
            Variant::Besnet => &gen[0],
            _ => disc.last().expect("at least one level"),
        }
    }

    fn y_hat(&self, label_h: &Matrix<T>) -> Matrix<T> {
        let n = self.config.n_actions();
        let half = T::lit(0.5);
        Matrix::from_fn(label_h.rows(), n, |b, k| (label_h.get(b, k) + T::one()) * half)
    }

    /// One batched inference step on raw inputs.
    pub fn step(
        &self,
        input: &Matrix<T>,
        prev: &ModelState<T>,
        overrides: &[UnitOverride],
    ) -> Result<StepOutput<T>> {
        let tr = self.trace_step(input, prev, overrides)?;
        Ok(StepOutput {
            y_hat: self.y_hat(&tr.label_h),
            x_hat: tr.probs,
            state: ModelState {
                disc: tr.disc,
                gen: tr.gen,
            },
        })
    }

    /// Single-sequence step from motion `x_i` and sensory `v_i`.
    pub fn forward_step(&self, x: &[f64], v: &[f64], prev: &ModelState<T>) -> Result<StepOutput<T>> {
        ensure_dims!(
            x.len() == self.config.motion_dims && v.len() == self.config.sensory_dims,
            "x/v lengths {}/{} != {}/{}",
            x.len(),
            v.len(),
            self.config.motion_dims,
            self.config.sensory_dims
        );
        let row: Vec<T> = x.iter().chain(v).map(|&a| T::lit(a)).collect();
        self.step(&Matrix::row_vector(&row), prev, &[])
    }

    /// Loss over a window; `state` is advanced past its last step.
    pub fn window_loss(&self, window: &Window<T>, state: &mut ModelState<T>) -> Result<LossReport> {
        Ok(self.forward_window(window, state, None)?.0)
    }

    /// Like [`Self::window_loss`], and accumulates the gradient of
    /// `grad_scale * C` into every parameter by backpropagation through the
    /// whole window.
    pub fn window_grads(
        &mut self,
        window: &Window<T>,
        state: &mut ModelState<T>,
        grad_scale: f64,
    ) -> Result<LossReport> {
        let (report, traces) = self.forward_window(window, state, Some(grad_scale))?;
        let mut carry = Carry {
            disc: state.disc.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            gen: state.gen.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
        };
        for (tr, dlogits, dlabel) in traces.iter().rev() {
            self.backward_step(tr, dlogits.as_ref(), dlabel, &mut carry)?;
        }
        Ok(report)
    }

    #[allow(clippy::type_complexity)]
    fn forward_window(
        &self,
        window: &Window<T>,
        state: &mut ModelState<T>,
        grad_scale: Option<f64>,
    ) -> Result<(LossReport, Vec<(StepTrace<T>, Option<Matrix<T>>, Matrix<T>)>)> {
        window.check(&self.config)?;
        self.check_state(state, window.batch)?;
        state.reset_rows(&window.reset);
        let cfg = &self.config;
        let (batch, dx, n_act) = (window.batch, cfg.motion_dims, cfg.n_actions());
        let lambda = cfg.lambda;
        let predicts = cfg.predicts_motion();
        let label_width = cfg.disc_widths()[cfg.label_level()];
        let mut c_x = 0.0;
        let mut c_y = 0.0;
        let mut motion_frames = 0;
        let mut labeled_frames = 0;
        let mut traces = Vec::new();

        for s in 0..window.len() {
            let tr = self.trace_step(&window.inputs[s], state, &[])?;
            let mut dlogits = if predicts && grad_scale.is_some() {
                Some(Matrix::zeros(batch, self.layout.total()))
            } else {
                None
            };
            if predicts {
                for b in 0..batch {
                    if !window.target_valid[s][b] {
                        continue;
                    }
                    motion_frames += 1;
                    let p = tr.probs.row(b);
                    for d in 0..dx {
                        let k = window.targets[s][b * dx + d];
                        let (o, n) = (self.layout.offset(d), self.layout.count(d));
                        if k >= n {
                            return Err(Error::Index { index: k, len: n });
                        }
                        c_x -= p[o + k].as_f64().max(PROB_FLOOR).ln();
                        if let (Some(dl), Some(g)) = (dlogits.as_mut(), grad_scale) {
                            let w = T::lit((1.0 - lambda) * g);
                            let row = dl.row_mut(b);
                            for j in 0..n {
                                row[o + j] = p[o + j] * w;
                            }
                            row[o + k] -= w;
                        }
                    }
                }
            }

            let mut dlabel = Matrix::zeros(batch, label_width);
            for b in 0..batch {
                if !window.label_mask[s][b] {
                    continue;
                }
                labeled_frames += 1;
                let y = &window.labels[s][b * n_act..(b + 1) * n_act];
                let h = &tr.label_h.row(b)[..n_act];
                let (loss, dh) = label_loss(cfg.label_mode, h, y)?;
                c_y += loss;
                if let Some(g) = grad_scale {
                    for (d, v) in dlabel.row_mut(b).iter_mut().zip(dh) {
                        *d = T::lit(v * lambda * g);
                    }
                }
            }

            state.disc.clone_from(&tr.disc);
            state.gen.clone_from(&tr.gen);
            if grad_scale.is_some() {
                traces.push((tr, dlogits, dlabel));
            }
        }
        Ok((
            LossReport::new(c_y, c_x, lambda, labeled_frames, motion_frames),
            traces,
        ))
    }

    fn backward_step(
        &mut self,
        tr: &StepTrace<T>,
        dlogits: Option<&Matrix<T>>,
        dlabel: &Matrix<T>,
        carry: &mut Carry<T>,
    ) -> Result<()> {
        let one = T::one();
        let mut dh = std::mem::take(&mut carry.disc);
        let mut dgen = std::mem::take(&mut carry.gen);

        if let (Some(dl), Some(w), Some(bias)) = (dlogits, self.out_w.as_mut(), self.out_b.as_mut()) {
            let src = match self.config.variant {
                Variant::Besnet => &tr.gen[0],
                _ => tr.disc.last().expect("levels"),
            };
            gemm(&mut w.grad, dl, true, src, false, one, one)?;
            dl.accumulate_col_sums(&mut bias.grad)?;
            let target = match self.config.variant {
                Variant::Besnet => &mut dgen[0],
                _ => dh.last_mut().expect("levels"),
            };
            gemm(target, dl, false, &w.value, false, one, one)?;
        }

        let n_gen = self.gen.len();
        let mut new_gen = Vec::with_capacity(n_gen);
        for l in 0..n_gen {
            let (dinput, dprev) = self.gen[l].backward(&tr.gen_cache[l], &dgen[l])?;
            if l + 1 < n_gen {
                let above = &mut dgen[l + 1];
                add_cols(above, &dinput, 0);
                let split = above.cols();
                add_cols(&mut dh[l], &dinput, split);
            } else {
                add_cols(&mut dh[l], &dinput, 0);
            }
            new_gen.push(dprev);
        }

        let label_level = self.config.label_level();
        dh[label_level].add_assign(dlabel)?;

        let n_disc = self.disc.len();
        let mut new_disc: Vec<Option<Matrix<T>>> = vec![None; n_disc];
        for l in (0..n_disc).rev() {
            let (dinput, dprev) = self.disc[l].backward(&tr.disc_cache[l], &dh[l])?;
            if l > 0 {
                dh[l - 1].add_assign(&dinput)?;
            }
            new_disc[l] = Some(dprev);
        }
        carry.disc = new_disc.into_iter().map(|m| m.expect("computed")).collect();
        carry.gen = new_gen;
        Ok(())
    }

    /// Runs equal-length sequences (rows of `T x (D_x + D_v)` matrices) from a
    /// zero state; returns per-sequence `y_hat` (`T x N`) and `x_hat`
    /// (`T x Σ bins`, row `i` predicting frame `i + 1`), plus flattened states
    /// when `keep_states` is set.
    pub fn run_sequences(
        &self,
        inputs: &[&Matrix<f64>],
        keep_states: bool,
    ) -> Result<Vec<SequenceOutput>> {
        let Some(first) = inputs.first() else {
            return Ok(Vec::new());
        };
        let (len, width) = first.shape();
        for m in inputs {
            ensure_dims!(m.shape() == (len, width), "sequences differ in shape");
        }
        let batch = inputs.len();
        let n = self.config.n_actions();
        let total = if self.config.predicts_motion() { self.layout.total() } else { 0 };
        let state_width: usize =
            self.config.disc_widths().iter().chain(&self.config.gen_widths()).sum();
        let mut outs: Vec<SequenceOutput> = (0..batch)
            .map(|_| SequenceOutput {
                y_hat: Matrix::zeros(len, n),
                x_hat: Matrix::zeros(len, total),
                states: keep_states.then(|| Matrix::zeros(len, state_width)),
            })
            .collect();
        let mut state = ModelState::zeros(&self.config, batch);
        for t in 0..len {
            let input = Matrix::from_fn(batch, width, |b, j| T::lit(inputs[b].get(t, j)));
            let out = self.step(&input, &state, &[])?;
            for (b, o) in outs.iter_mut().enumerate() {
                for k in 0..n {
                    o.y_hat.set(t, k, out.y_hat.get(b, k).as_f64());
                }
                for k in 0..total {
                    o.x_hat.set(t, k, out.x_hat.get(b, k).as_f64());
                }
                if let Some(s) = o.states.as_mut() {
                    s.row_mut(t).copy_from_slice(&out.state.flatten_row(b));
                }
            }
            state = out.state;
        }
        Ok(outs)
    }

    /// Runs each trial's agents as one batch, trials in parallel. Output order
    /// follows `trials`, then agents.
    pub fn run_trials(&self, trials: &[TrialData], keep_states: bool) -> Result<Vec<Vec<SequenceOutput>>> {
        trials
            .par_iter()
            .map(|t| {
                let inputs: Vec<Matrix<f64>> = t.agents.iter().map(AgentTrack::inputs).collect();
                let refs: Vec<&Matrix<f64>> = inputs.iter().collect();
                self.run_sequences(&refs, keep_states)
            })
            .collect()
    }

    /// Writes weights to `path` and the configuration to `path` with a
    /// `.cfg` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let shift = Matrix::row_vector(&self.norm_shift);
        let scale = Matrix::row_vector(&self.norm_scale);
        let mut arrays: Vec<(&str, &Matrix<T>)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect();
        arrays.push(("norm.shift", &shift));
        arrays.push(("norm.scale", &scale));
        save_checkpoint(path, &arrays)?;
        self.config.save(&config_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config = ModelConfig::load(&config_path(path))?;
        let mut model = Self::zeros(config)?;
        let arrays = load_checkpoint(path)?;
        let mut found = std::collections::HashMap::new();
        for (name, m) in arrays {
            if found.insert(name.clone(), m).is_some() {
                return Err(Error::data(format!("duplicate array '{name}' in checkpoint")));
            }
        }
        for p in model.params_mut() {
            let m = found
                .remove(&p.name)
                .ok_or_else(|| Error::data(format!("checkpoint lacks '{}'", p.name)))?;
            if m.shape() != p.shape() {
                return Err(Error::data(format!(
                    "'{}' has shape {:?}, expected {:?}",
                    p.name,
                    m.shape(),
                    p.shape()
                )));
            }
            p.value = m.cast();
        }
        let mut take_norm = |name: &str| -> Result<Vec<T>> {
            let m = found
                .remove(name)
                .ok_or_else(|| Error::data(format!("checkpoint lacks '{name}'")))?;
            Ok(m.as_slice().iter().map(|v| T::lit(*v as f64)).collect())
        };
        let shift = take_norm("norm.shift")?;
        let scale = take_norm("norm.scale")?;
        model.set_input_norm(shift, scale)?;
        if let Some(name) = found.keys().next() {
            return Err(Error::data(format!("unexpected array '{name}' in checkpoint")));
        }
        Ok(model)
    }

    /// Converts storage precision.
    pub fn cast<U: Scalar>(&self) -> BehaviorModel<U> {
        let cell = |c: &GruCell<T>, name: &str| {
            let mut n = GruCell::<U>::zeros(name, c.input_size(), c.hidden_size());
            for (dst, src) in n.params_mut().into_iter().zip(c.params()) {
                dst.value = src.value.cast();
            }
            n
        };
        BehaviorModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            disc: self.disc.iter().enumerate().map(|(l, c)| cell(c, &format!("disc.{l}"))).collect(),
            gen: self.gen.iter().enumerate().map(|(l, c)| cell(c, &format!("gen.{l}"))).collect(),
            out_w: self.out_w.as_ref().map(|p| Parameter::new("out.w", p.value.cast())),
            out_b: self.out_b.as_ref().map(|p| Parameter::new("out.b", p.value.cast())),
            norm_shift: self.norm_shift.iter().map(|v| U::lit(v.as_f64())).collect(),
            norm_scale: self.norm_scale.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Per-sequence outputs of [`BehaviorModel::run_sequences`].
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub y_hat: Matrix<f64>,
    pub x_hat: Matrix<f64>,
    pub states: Option<Matrix<f64>>,
}

pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

/// Loss of one labeled frame and its gradient with respect to the first `N`
/// units of the label level.
fn label_loss<T: Scalar>(mode: LabelMode, h: &[T], y: &[bool]) -> Result<(f64, Vec<f64>)> {
    match mode {
        LabelMode::Multitask => {
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(h.len());
            for (hv, &yv) in h.iter().zip(y) {
                let raw = 0.5 * (hv.as_f64() + 1.0);
                let p = raw.clamp(LABEL_CLAMP, 1.0 - LABEL_CLAMP);
                let clamped = p != raw;
                if yv {
                    loss -= p.ln();
                    grad.push(if clamped { 0.0 } else { -0.5 / p });
                } else {
                    loss -= (1.0 - p).ln();
                    grad.push(if clamped { 0.0 } else { 0.5 / (1.0 - p) });
                }
            }
            Ok((loss, grad))
        }
        LabelMode::Multiclass => {
            let mut active = y.iter().enumerate().filter(|(_, v)| **v).map(|(k, _)| k);
            let target = match (active.next(), active.next()) {
                (Some(k), None) => k,
                _ => {
                    return Err(Error::data(
                        "multiclass frame must carry exactly one active label",
                    ))
                }
            };
            let logits: Vec<f64> = h.iter().map(|v| v.as_f64()).collect();
            let (loss, d) = crate::numerics::softmax_cross_entropy(&logits, target)?;
            Ok((loss, d))
        }
    }
}

impl<T: Scalar> ParamSet<T> for BehaviorModel<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = Vec::new();
        for c in self.disc.iter().chain(&self.gen) {
            v.extend(c.params());
        }
        v.extend(self.out_w.iter());
        v.extend(self.out_b.iter());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> = Vec::new();
        for c in self.disc.iter_mut().chain(self.gen.iter_mut()) {
            v.extend(c.params_mut());
        }
        v.extend(self.out_w.iter_mut());
        v.extend(self.out_b.iter_mut());
        v
    }
}
