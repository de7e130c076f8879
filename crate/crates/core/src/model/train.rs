use crate::error::{Error, Result};
use crate::model::network::{BehaviorModel, LossReport, ModelState, Window};
use crate::numerics::{adam_update, clip_global_norm, AdamConfig, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    /// Global gradient-norm limit.
    pub clip: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            adam: AdamConfig::default(),
            clip: 5.0,
        }
    }
}

/// One optimizer step on a window. The objective is `C` divided by the
/// window's active frame count; the returned report holds raw sums.
pub fn train_window<T: Scalar>(
    model: &mut BehaviorModel<T>,
    window: &Window<T>,
    state: &mut ModelState<T>,
    opts: &TrainOptions,
) -> Result<LossReport> {
    model.zero_grads();
    let scale = 1.0 / window.active_frames().max(1) as f64;
    let report = model.window_grads(window, state, scale)?;
    if !report.is_finite() {
        return Err(Error::Training(format!("non-finite loss {}", report.c)));
    }
    let mut params = model.params_mut();
    clip_global_norm(&mut params, opts.clip)?;
    for p in params {
        adam_update(p, &opts.adam)?;
    }
    Ok(report)
}

/// One pass over `batches` in order. Row `b` of consecutive batches belongs
/// to the same stream, so state carries over unless a window resets it.
pub fn train_epoch<T: Scalar>(
    model: &mut BehaviorModel<T>,
    batches: &[Window<T>],
    opts: &TrainOptions,
) -> Result<LossReport> {
    let mut total = LossReport::default();
    let Some(first) = batches.first() else {
        return Ok(total);
    };
    let mut state = ModelState::zeros(model.config(), first.batch);
    for (i, w) in batches.iter().enumerate() {
        let r = train_window(model, w, &mut state, opts).map_err(|e| match e {
            Error::Training(msg) => Error::Training(format!("batch {i}: {msg}")),
            other => other,
        })?;
        total.accumulate(&r);
    }
    Ok(total)
}

/// Loss over `batches` without touching gradients.
pub fn evaluate<T: Scalar>(model: &BehaviorModel<T>, batches: &[Window<T>]) -> Result<LossReport> {
    let mut total = LossReport::default();
    let Some(first) = batches.first() else {
        return Ok(total);
    };
    let mut state = ModelState::zeros(model.config(), first.batch);
    for w in batches {
        total.accumulate(&model.window_loss(w, &mut state)?);
    }
    Ok(total)
}
