//! Classification scores (F1-frame, F1-bout, F*) and motion log-likelihood
//! with the copy / histogram baselines.

mod classify;
mod motion;

pub use classify::{
    extract_bouts, f_star, greedy_match_bouts, match_bouts, mean_durations, predict_frames,
    smooth_scores, smoothing_width, Aggregate, BoutMatch, ClassCounts, ClassScores, F1Accumulator,
    F1Report,
};
pub use motion::{
    motion_loglik, sequence_loglik, Baseline, BaselineKind, LOGLIK_FLOOR, SIGMA_GRID,
};
