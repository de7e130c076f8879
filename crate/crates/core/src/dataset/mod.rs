//! Trials, agent tracks, bouts, file formats and training batches.

mod batch;
mod io;
mod strokes;

use std::collections::BTreeMap;

pub use batch::{make_batches, subsample_labels, BatchOptions, Batches, FrameRef, SubsampleOptions};
pub use io::{load_trial, load_trials, save_trial, trial_dirs, TRIAL_FILE};
pub use strokes::{
    denormalize_strokes, normalize_strokes, normalize_writers, synth_handwriting, HandwritingConfig,
    WriterStats, HANDWRITING_CLASSES, PEN_DIM,
};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One agent's per-frame data.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub id: usize,
    /// `T x D_x` motion.
    pub x: Matrix<f64>,
    /// `T x D_v` sensory input; `D_v` may be 0.
    pub v: Matrix<f64>,
    /// `T * N` row-major labels.
    pub labels: Vec<bool>,
    pub label_mask: Vec<bool>,
    n_classes: usize,
}

impl AgentTrack {
    /// Labels outside the mask are cleared.
    pub fn new(
        id: usize,
        x: Matrix<f64>,
        v: Matrix<f64>,
        mut labels: Vec<bool>,
        label_mask: Vec<bool>,
        n_classes: usize,
    ) -> Result<Self> {
        let t = x.rows();
        if v.rows() != t || label_mask.len() != t || labels.len() != t * n_classes {
            return Err(Error::data(format!(
                "agent {id}: x has {t} rows, v {} rows, mask {} entries, labels {} (expected {})",
                v.rows(),
                label_mask.len(),
                labels.len(),
                t * n_classes
            )));
        }
        for (f, &m) in label_mask.iter().enumerate() {
            if !m {
                labels[f * n_classes..(f + 1) * n_classes].fill(false);
            }
        }
        Ok(AgentTrack {
            id,
            x,
            v,
            labels,
            label_mask,
            n_classes,
        })
    }

    /// Track with no labeled frames.
    pub fn unlabeled(id: usize, x: Matrix<f64>, v: Matrix<f64>, n_classes: usize) -> Result<Self> {
        let t = x.rows();
        AgentTrack::new(id, x, v, vec![false; t * n_classes], vec![false; t], n_classes)
    }

    pub fn frames(&self) -> usize {
        self.x.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn label(&self, frame: usize, class: usize) -> bool {
        self.labels[frame * self.n_classes + class]
    }

    pub fn frame_labels(&self, frame: usize) -> &[bool] {
        &self.labels[frame * self.n_classes..(frame + 1) * self.n_classes]
    }

    /// Per-frame indicator of one class.
    pub fn class_column(&self, class: usize) -> Vec<bool> {
        (0..self.frames()).map(|f| self.label(f, class)).collect()
    }

    /// `T x (D_x + D_v)` model inputs `[x, v]`.
    pub fn inputs(&self) -> Matrix<f64> {
        Matrix::hcat(&[&self.x, &self.v]).expect("rows checked at construction")
    }

    pub fn labeled_frames(&self) -> usize {
        self.label_mask.iter().filter(|&&m| m).count()
    }

    pub fn bouts(&self) -> Vec<Bout> {
        (0..self.n_classes)
            .flat_map(|c| frames_to_bouts(&self.class_column(c), c))
            .collect()
    }

    /// Drops the label mask on every frame where `keep` is false.
    pub fn restrict_mask(&mut self, keep: &[bool]) {
        for (f, &k) in keep.iter().enumerate() {
            if !k {
                self.label_mask[f] = false;
                self.labels[f * self.n_classes..(f + 1) * self.n_classes].fill(false);
            }
        }
    }
}

/// A recording: agents sharing one frame clock.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialData {
    pub trial_id: String,
    pub classes: Vec<String>,
    /// Free-form metadata, saved with the trial.
    pub attrs: BTreeMap<String, String>,
    pub agents: Vec<AgentTrack>,
}

impl TrialData {
    pub fn new(trial_id: String, classes: Vec<String>, agents: Vec<AgentTrack>) -> Result<Self> {
        let t = TrialData {
            trial_id,
            classes,
            attrs: BTreeMap::new(),
            agents,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trial_id.is_empty() || self.trial_id.contains(['/', '\\', '\n']) {
            return Err(Error::data(format!("invalid trial id '{}'", self.trial_id)));
        }
        let Some(first) = self.agents.first() else {
            return Ok(());
        };
        let (t, dx, dv) = (first.frames(), first.x.cols(), first.v.cols());
        for a in &self.agents {
            if a.frames() != t {
                return Err(Error::data(format!(
                    "trial {}: agent {} has {} frames, agent {} has {t}",
                    self.trial_id,
                    a.id,
                    a.frames(),
                    first.id
                )));
            }
            if a.x.cols() != dx || a.v.cols() != dv || a.n_classes != self.classes.len() {
                return Err(Error::data(format!(
                    "trial {}: agent {} column counts differ",
                    self.trial_id, a.id
                )));
            }
        }
        let mut ids: Vec<usize> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.agents.len() {
            return Err(Error::data(format!("trial {}: duplicate agent ids", self.trial_id)));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.agents.first().map_or(0, AgentTrack::frames)
    }

    pub fn motion_dims(&self) -> usize {
        self.agents.first().map_or(0, |a| a.x.cols())
    }

    pub fn sensory_dims(&self) -> usize {
        self.agents.first().map_or(0, |a| a.v.cols())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

/// A maximal labeled interval `[start, end)` of one class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bout {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

impl Bout {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersection(&self, other: &Bout) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }

    pub fn iou(&self, other: &Bout) -> f64 {
        let inter = self.intersection(other);
        if inter == 0 {
            return 0.0;
        }
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

/// Maximal runs of `true` frames.
pub fn frames_to_bouts(frames: &[bool], class: usize) -> Vec<Bout> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &on) in frames.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Bout { class, start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Bout {
            class,
            start: s,
            end: frames.len(),
        });
    }
    out
}

/// Frame indicator of `class` over `frames` frames.
pub fn bouts_to_frames(bouts: &[Bout], class: usize, frames: usize) -> Result<Vec<bool>> {
    let mut out = vec![false; frames];
    for b in bouts.iter().filter(|b| b.class == class) {
        if b.start >= b.end || b.end > frames {
            return Err(Error::data(format!(
                "bout [{}, {}) invalid for {frames} frames",
                b.start, b.end
            )));
        }
        out[b.start..b.end].fill(true);
    }
    Ok(out)
}

/// Mean duration of the bouts, or `None` when there are none.
pub fn mean_bout_duration(bouts: &[Bout]) -> Option<f64> {
    if bouts.is_empty() {
        None
    } else {
        Some(bouts.iter().map(|b| b.len() as f64).sum::<f64>() / bouts.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bouts_of_hand_written_frames() {
        let f = [false, true, true, false, true];
        let b = frames_to_bouts(&f, 1);
        assert_eq!(
            b,
            vec![Bout { class: 1, start: 1, end: 3 }, Bout { class: 1, start: 4, end: 5 }]
        );
    }

    #[test]
    fn iou_arithmetic() {
        let a = Bout { class: 0, start: 5, end: 25 };
        let b = Bout { class: 0, start: 0, end: 10 };
        assert_eq!(a.iou(&b), 5.0 / 25.0);
        assert_eq!(a.iou(&Bout { class: 0, start: 30, end: 31 }), 0.0);
    }

    #[test]
    fn mask_clears_labels() {
        let x = Matrix::zeros(2, 1);
        let v = Matrix::zeros(2, 0);
        let t = AgentTrack::new(0, x, v, vec![true, true], vec![true, false], 1).unwrap();
        assert_eq!(t.labels, vec![true, false]);
    }

    #[test]
    fn ragged_agents_rejected() {
        let a = AgentTrack::unlabeled(0, Matrix::zeros(3, 1), Matrix::zeros(3, 0), 0).unwrap();
        let b = AgentTrack::unlabeled(1, Matrix::zeros(4, 1), Matrix::zeros(4, 0), 0).unwrap();
        assert!(TrialData::new("t".into(), vec![], vec![a, b]).is_err());
    }

    proptest! {
        #[test]
        fn bout_frame_round_trip(frames in proptest::collection::vec(any::<bool>(), 0..200)) {
            let bouts = frames_to_bouts(&frames, 2);
            prop_assert_eq!(bouts_to_frames(&bouts, 2, frames.len()).unwrap(), frames.clone());
            for w in bouts.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            prop_assert_eq!(frames_to_bouts(&bouts_to_frames(&bouts, 2, frames.len()).unwrap(), 2), bouts);
        }
    }
}
