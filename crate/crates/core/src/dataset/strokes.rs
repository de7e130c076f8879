//! Pen-stroke data: rows of `(dx, dy, z)` where `z = 1` marks a visible
//! (pen-down) segment.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{AgentTrack, TrialData};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const PEN_DIM: usize = 2;

/// Per-writer shift and scale of `dx` and `dy`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WriterStats {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl WriterStats {
    pub const IDENTITY: WriterStats = WriterStats {
        mean: [0.0, 0.0],
        scale: [1.0, 1.0],
    };

    pub fn to_attrs(&self, attrs: &mut BTreeMap<String, String>) {
        attrs.insert("dx_mean".into(), self.mean[0].to_string());
        attrs.insert("dy_mean".into(), self.mean[1].to_string());
        attrs.insert("dx_scale".into(), self.scale[0].to_string());
        attrs.insert("dy_scale".into(), self.scale[1].to_string());
    }

    /// `None` when the trial has not been normalized.
    pub fn from_attrs(attrs: &BTreeMap<String, String>) -> Result<Option<WriterStats>> {
        let keys = ["dx_mean", "dy_mean", "dx_scale", "dy_scale"];
        if keys.iter().all(|k| !attrs.contains_key(*k)) {
            return Ok(None);
        }
        let mut v = [0.0; 4];
        for (slot, k) in v.iter_mut().zip(keys) {
            let s = attrs
                .get(k)
                .ok_or_else(|| Error::data(format!("missing writer attribute '{k}'")))?;
            *slot = s
                .parse()
                .map_err(|_| Error::data(format!("invalid writer attribute {k}={s:?}")))?;
        }
        Ok(Some(WriterStats {
            mean: [v[0], v[1]],
            scale: [v[2], v[3]],
        }))
    }
}

fn check_strokes(m: &Matrix<f64>) -> Result<()> {
    if m.cols() != 3 {
        return Err(Error::data(format!("stroke rows need 3 columns, got {}", m.cols())));
    }
    Ok(())
}

/// Z-scores `dx` and `dy` over the visible rows of one writer's strokes and
/// returns the statistics. `z` is left alone. A column without spread keeps
/// scale 1.
pub fn normalize_strokes(strokes: &mut [Matrix<f64>]) -> Result<WriterStats> {
    let mut visible = Vec::new();
    let mut all = Vec::new();
    for m in strokes.iter() {
        check_strokes(m)?;
        for r in 0..m.rows() {
            let p = [m.get(r, 0), m.get(r, 1)];
            all.push(p);
            if m.get(r, PEN_DIM) > 0.5 {
                visible.push(p);
            }
        }
    }
    if all.len() < 2 {
        return Err(Error::data(format!("{} stroke point(s); need at least 2", all.len())));
    }
    let pts = if visible.len() >= 2 { &visible } else { &all };
    let n = pts.len() as f64;
    let mut stats = WriterStats::IDENTITY;
    for d in 0..2 {
        let mean = pts.iter().map(|p| p[d]).sum::<f64>() / n;
        let var = pts.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
        stats.mean[d] = mean;
        stats.scale[d] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    for m in strokes.iter_mut() {
        for r in 0..m.rows() {
            for d in 0..2 {
                m.set(r, d, (m.get(r, d) - stats.mean[d]) / stats.scale[d]);
            }
        }
    }
    Ok(stats)
}

pub fn denormalize_strokes(m: &mut Matrix<f64>, stats: &WriterStats) -> Result<()> {
    check_strokes(m)?;
    for r in 0..m.rows() {
        for d in 0..2 {
            m.set(r, d, m.get(r, d) * stats.scale[d] + stats.mean[d]);
        }
    }
    Ok(())
}

/// Normalizes every agent's motion per writer (trial attribute `writer`,
/// falling back to the trial id) and records the statistics in the trial
/// attributes.
pub fn normalize_writers(trials: &mut [TrialData]) -> Result<BTreeMap<String, WriterStats>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        let w = t.attrs.get("writer").cloned().unwrap_or_else(|| t.trial_id.clone());
        groups.entry(w).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (writer, idx) in groups {
        let mut mats: Vec<Matrix<f64>> = idx
            .iter()
            .flat_map(|&i| trials[i].agents.iter().map(|a| a.x.clone()))
            .collect();
        let stats = normalize_strokes(&mut mats)?;
        let mut it = mats.into_iter();
        for &i in &idx {
            for a in trials[i].agents.iter_mut() {
                a.x = it.next().expect("one matrix per agent");
            }
            stats.to_attrs(&mut trials[i].attrs);
        }
        out.insert(writer, stats);
    }
    Ok(out)
}

/// Parameters of the synthetic handwriting corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct HandwritingConfig {
    pub writers: usize,
    pub trials_per_writer: usize,
    pub chars_per_trial: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for HandwritingConfig {
    fn default() -> Self {
        HandwritingConfig {
            writers: 4,
            trials_per_writer: 3,
            chars_per_trial: 40,
            noise: 0.05,
            seed: 0,
        }
    }
}

pub const HANDWRITING_CLASSES: [&str; 3] = ["o", "l", "v"];

/// Pen-down displacement template of a character, in units of letter height.
fn template(c: usize) -> Vec<(f64, f64)> {
    match c {
        0 => {
            let k = 16;
            (0..k)
                .map(|i| {
                    let (a0, a1) = (TAU * i as f64 / k as f64, TAU * (i + 1) as f64 / k as f64);
                    (0.5 * (a1.sin() - a0.sin()), 0.5 * (a0.cos() - a1.cos()))
                })
                .collect()
        }
        1 => {
            let mut v = vec![(0.0, 0.25); 8];
            v.extend(vec![(0.02, -0.25); 8]);
            v
        }
        _ => {
            let mut v = vec![(0.1, -0.2); 6];
            v.extend(vec![(0.1, 0.2); 6]);
            v
        }
    }
}

/// Writes random character sequences in a few synthetic "hands" (scale,
/// slant and speed differ per writer). Character frames are labeled with
/// their class; pen-up moves between characters are unlabeled.
pub fn synth_handwriting(cfg: &HandwritingConfig) -> Result<Vec<TrialData>> {
    if cfg.writers == 0 || cfg.trials_per_writer == 0 || cfg.chars_per_trial == 0 {
        return Err(Error::Config("handwriting corpus needs writers, trials and characters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let n = HANDWRITING_CLASSES.len();
    let classes: Vec<String> = HANDWRITING_CLASSES.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for w in 0..cfg.writers {
        let scale = rng.random_range(0.8..1.25);
        let slant = rng.random_range(-0.3..0.3);
        for k in 0..cfg.trials_per_writer {
            let (mut rows, mut labels, mut mask) = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..cfg.chars_per_trial {
                let c = rng.random_range(0..n);
                for (dx, dy) in template(c) {
                    rows.extend([
                        scale * (dx + slant * dy) + noise.sample(&mut rng),
                        scale * dy + noise.sample(&mut rng),
                        1.0,
                    ]);
                    labels.extend((0..n).map(|j| j == c));
                    mask.push(true);
                }
                for _ in 0..3 {
                    rows.extend([0.3 * scale + noise.sample(&mut rng), noise.sample(&mut rng), 0.0]);
                    labels.extend(std::iter::repeat_n(false, n));
                    mask.push(false);
                }
            }
            let t = mask.len();
            let track = AgentTrack::new(0, Matrix::from_vec(t, 3, rows)?, Matrix::zeros(t, 0), labels, mask, n)?;
            let mut trial = TrialData::new(format!("hw_w{w}_{k}"), classes.clone(), vec![track])?;
            trial.attrs.insert("writer".into(), format!("w{w}"));
            trial.attrs.insert("domain".into(), "handwriting".into());
            out.push(trial);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visible_moments(ms: &[Matrix<f64>], d: usize) -> (f64, f64) {
        let vals: Vec<f64> = ms
            .iter()
            .flat_map(|m| (0..m.rows()).filter(|&r| m.get(r, 2) > 0.5).map(move |r| m.get(r, d)))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn normalization_moments_and_round_trip() {
        let trials = synth_handwriting(&HandwritingConfig::default()).unwrap();
        let orig: Vec<Matrix<f64>> = trials[..3].iter().map(|t| t.agents[0].x.clone()).collect();
        let mut ms = orig.clone();
        let stats = normalize_strokes(&mut ms).unwrap();
        for d in 0..2 {
            let (m, s) = visible_moments(&ms, d);
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9, "dim {d}: {m} {s}");
        }
        for (a, b) in ms.iter().zip(&orig) {
            for r in 0..a.rows() {
                assert_eq!(a.get(r, 2), b.get(r, 2));
            }
        }
        for (mut a, b) in ms.into_iter().zip(&orig) {
            denormalize_strokes(&mut a, &stats).unwrap();
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_column_keeps_unit_scale() {
        let mut ms = vec![Matrix::from_vec(3, 3, vec![1.0, 2.0, 1.0, 1.0, 5.0, 1.0, 1.0, 8.0, 1.0]).unwrap()];
        let s = normalize_strokes(&mut ms).unwrap();
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(ms[0].get(0, 0), 0.0);
        assert!(normalize_strokes(&mut [Matrix::zeros(1, 3)]).is_err());
    }

    #[test]
    fn writers_normalized_separately() {
        let mut trials = synth_handwriting(&HandwritingConfig::default()).unwrap();
        let stats = normalize_writers(&mut trials).unwrap();
        assert_eq!(stats.len(), 4);
        let back = WriterStats::from_attrs(&trials[0].attrs).unwrap().unwrap();
        assert_eq!(back, stats["w0"]);
    }

    #[test]
    fn character_frames_have_one_label() {
        let trials = synth_handwriting(&HandwritingConfig::default()).unwrap();
        let a = &trials[0].agents[0];
        for f in 0..a.frames() {
            let on = a.frame_labels(f).iter().filter(|&&b| b).count();
            assert_eq!(on, a.label_mask[f] as usize);
            assert_eq!(a.label_mask[f], a.x.get(f, 2) == 1.0);
        }
    }
}
