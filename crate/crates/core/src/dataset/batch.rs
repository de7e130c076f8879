use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::BinSpec;
use crate::dataset::{frames_to_bouts, TrialData};
use crate::error::{Error, Result};
use crate::model::Window;
use crate::numerics::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchOptions {
    /// Frames per window (BPTT length).
    pub window: usize,
    /// Parallel streams per window.
    pub batch: usize,
    /// Tracks are cut into segments of at most this many frames (rounded
    /// down to a multiple of `window`) so that a few long tracks still fill
    /// every stream. State is reset at each segment start.
    pub segment: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            window: 50,
            batch: 20,
            segment: 1000,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Source of one batch cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRef {
    pub trial: usize,
    pub agent: usize,
    pub frame: usize,
}

pub struct Batches<T> {
    pub windows: Vec<Window<T>>,
    /// Per window, `window * batch` entries indexed `t * batch + b`; `None`
    /// marks padding.
    pub sources: Vec<Vec<Option<FrameRef>>>,
}

impl<T> Batches<T> {
    pub fn emitted_frames(&self) -> usize {
        self.sources.iter().flatten().filter(|s| s.is_some()).count()
    }
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    trial: usize,
    agent: usize,
    start: usize,
    end: usize,
}

/// Cuts every track into segments and streams them through `batch` slots.
/// Inputs at frame `i` are `[x_i, v_i]`; the motion target is the encoding
/// of `x_{i+1}` and is absent on a track's last frame. Padding cells carry
/// no loss.
pub fn make_batches<T: Scalar>(
    trials: &[TrialData],
    spec: &BinSpec,
    opts: &BatchOptions,
) -> Result<Batches<T>> {
    if opts.window == 0 || opts.batch == 0 {
        return Err(Error::Config("window and batch must be >= 1".into()));
    }
    let Some(first) = trials.first() else {
        return Ok(Batches {
            windows: Vec::new(),
            sources: Vec::new(),
        });
    };
    let (dx, dv, n) = (first.motion_dims(), first.sensory_dims(), first.classes.len());
    if spec.dims() != dx {
        return Err(Error::data(format!("bin spec has {} dims, data has {dx}", spec.dims())));
    }
    for t in trials {
        if t.classes != first.classes || (!t.agents.is_empty() && (t.motion_dims() != dx || t.sensory_dims() != dv)) {
            return Err(Error::data(format!(
                "trial {} differs from trial {} in classes or columns",
                t.trial_id, first.trial_id
            )));
        }
    }

    let seg_len = (opts.segment / opts.window).max(1) * opts.window;
    let mut segments = Vec::new();
    let mut targets: Vec<Vec<Vec<usize>>> = Vec::with_capacity(trials.len());
    for (ti, t) in trials.iter().enumerate() {
        let mut per_agent = Vec::with_capacity(t.agents.len());
        for (ai, a) in t.agents.iter().enumerate() {
            let frames = a.frames();
            if frames < 2 {
                log::warn!("trial {} agent {}: {frames} frame(s), skipped", t.trial_id, a.id);
                per_agent.push(Vec::new());
                continue;
            }
            let mut enc = Vec::with_capacity(frames * dx);
            for f in 0..frames {
                enc.extend(spec.encode(a.x.row(f))?);
            }
            per_agent.push(enc);
            let mut s = 0;
            while s < frames {
                let e = (s + seg_len).min(frames);
                segments.push(Segment {
                    trial: ti,
                    agent: ai,
                    start: s,
                    end: e,
                });
                s = e;
            }
        }
        targets.push(per_agent);
    }
    if opts.shuffle {
        segments.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    }

    // Each segment goes to the least loaded slot.
    let b = opts.batch;
    let mut queues: Vec<Vec<(Segment, usize)>> = vec![Vec::new(); b];
    let mut loads = vec![0usize; b];
    for seg in segments {
        let slot = (0..b).min_by_key(|&s| (loads[s], s)).unwrap_or(0);
        let wins = (seg.end - seg.start).div_ceil(opts.window);
        for k in 0..wins {
            queues[slot].push((seg, k));
        }
        loads[slot] += wins;
    }
    let n_windows = loads.iter().copied().max().unwrap_or(0);

    let mut windows = Vec::with_capacity(n_windows);
    let mut sources = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let mut win = Window {
            batch: b,
            inputs: Vec::with_capacity(opts.window),
            targets: Vec::with_capacity(opts.window),
            target_valid: Vec::with_capacity(opts.window),
            labels: Vec::with_capacity(opts.window),
            label_mask: Vec::with_capacity(opts.window),
            reset: (0..b).map(|s| queues[s].get(w).is_none_or(|&(_, k)| k == 0)).collect(),
        };
        let mut src = vec![None; opts.window * b];
        for t in 0..opts.window {
            let mut input = Matrix::<T>::zeros(b, dx + dv);
            let mut tg = vec![0usize; b * dx];
            let mut tv = vec![false; b];
            let mut lab = vec![false; b * n];
            let mut lm = vec![false; b];
            for s in 0..b {
                let Some(&(seg, k)) = queues[s].get(w) else {
                    continue;
                };
                let f = seg.start + k * opts.window + t;
                if f >= seg.end {
                    continue;
                }
                let a = &trials[seg.trial].agents[seg.agent];
                let row = input.row_mut(s);
                for (dst, &v) in row.iter_mut().zip(a.x.row(f).iter().chain(a.v.row(f))) {
                    *dst = T::lit(v);
                }
                if f + 1 < a.frames() {
                    tg[s * dx..(s + 1) * dx]
                        .copy_from_slice(&targets[seg.trial][seg.agent][(f + 1) * dx..(f + 2) * dx]);
                    tv[s] = true;
                }
                if a.label_mask[f] {
                    lm[s] = true;
                    lab[s * n..(s + 1) * n].copy_from_slice(a.frame_labels(f));
                }
                src[t * b + s] = Some(FrameRef {
                    trial: seg.trial,
                    agent: seg.agent,
                    frame: f,
                });
            }
            win.inputs.push(input);
            win.targets.push(tg);
            win.target_valid.push(tv);
            win.labels.push(lab);
            win.label_mask.push(lm);
        }
        windows.push(win);
        sources.push(src);
    }
    Ok(Batches { windows, sources })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsampleOptions {
    /// Labeled runs are split into chunks of at most this many frames.
    pub chunk: usize,
    pub seed: u64,
}

impl Default for SubsampleOptions {
    fn default() -> Self {
        SubsampleOptions { chunk: 200, seed: 0 }
    }
}

/// Keeps labels on a seeded random subset of labeled chunks until about
/// `fraction` of the labeled frames remain. Motion and sensory data are
/// untouched. Returns the number of labeled frames kept.
pub fn subsample_labels(trials: &mut [TrialData], fraction: f64, opts: &SubsampleOptions) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {fraction} outside (0, 1]")));
    }
    if opts.chunk == 0 {
        return Err(Error::Config("label chunk must be >= 1".into()));
    }
    let mut chunks = Vec::new();
    for (ti, t) in trials.iter().enumerate() {
        for (ai, a) in t.agents.iter().enumerate() {
            for run in frames_to_bouts(&a.label_mask, 0) {
                let mut s = run.start;
                while s < run.end {
                    let e = (s + opts.chunk).min(run.end);
                    chunks.push((ti, ai, s, e));
                    s = e;
                }
            }
        }
    }
    let total: usize = chunks.iter().map(|c| c.3 - c.2).sum();
    if fraction >= 1.0 {
        return Ok(total);
    }
    let target = (fraction * total as f64).round() as usize;
    chunks.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let mut keep: Vec<Vec<Vec<bool>>> = trials
        .iter()
        .map(|t| t.agents.iter().map(|a| vec![false; a.frames()]).collect())
        .collect();
    let mut kept = 0;
    for &(ti, ai, s, e) in &chunks {
        if kept >= target {
            break;
        }
        keep[ti][ai][s..e].fill(true);
        kept += e - s;
    }
    for (t, k) in trials.iter_mut().zip(&keep) {
        for (a, k) in t.agents.iter_mut().zip(k) {
            a.restrict_mask(k);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AgentTrack;
    use proptest::prelude::*;

    fn spec() -> BinSpec {
        BinSpec::from_edges(vec![vec![-1.0, 0.0, 1.0, 2.0]]).unwrap()
    }

    fn trial(id: &str, agents: usize, len: usize) -> TrialData {
        let agents = (0..agents)
            .map(|i| {
                let x = Matrix::from_fn(len, 1, |r, _| ((r * 7 + i) % 3) as f64 - 0.5);
                let v = Matrix::from_fn(len, 1, |r, _| r as f64);
                let labels = (0..len).map(|r| r % 4 == 0).collect();
                AgentTrack::new(i, x, v, labels, vec![true; len], 1).unwrap()
            })
            .collect();
        TrialData::new(id.into(), vec!["a".into()], agents).unwrap()
    }

    fn trials(lens: &[usize]) -> Vec<TrialData> {
        lens.iter().enumerate().map(|(i, &l)| trial(&format!("t{i}"), 1, l)).collect()
    }

    #[test]
    fn hundred_frames_make_two_carried_windows() {
        let t = trial("t", 1, 100);
        let b: Batches<f64> = make_batches(&[t], &spec(), &BatchOptions::default()).unwrap();
        assert_eq!(b.windows.len(), 2);
        assert!(b.windows[0].reset[0]);
        assert!(!b.windows[1].reset[0]);
        assert_eq!(b.sources[1][0], Some(FrameRef { trial: 0, agent: 0, frame: 50 }));
        // The last frame has no successor to predict.
        assert!(!b.windows[1].target_valid[49][0]);
        assert!(b.windows[1].target_valid[48][0]);
    }

    #[test]
    fn targets_are_next_frame_bins() {
        let t = trial("t", 1, 30);
        let s = spec();
        let opts = BatchOptions {
            window: 10,
            batch: 2,
            ..BatchOptions::default()
        };
        let b: Batches<f64> = make_batches(&[t.clone()], &s, &opts).unwrap();
        for (w, src) in b.windows.iter().zip(&b.sources) {
            for step in 0..10 {
                for slot in 0..2 {
                    if let Some(fr) = src[step * 2 + slot] {
                        let a = &t.agents[fr.agent];
                        assert_eq!(w.inputs[step].get(slot, 1), a.v.get(fr.frame, 0));
                        if fr.frame + 1 < a.frames() {
                            assert_eq!(w.targets[step][slot], s.encode_value(0, a.x.get(fr.frame + 1, 0)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn short_tracks_skipped() {
        let ts = trials(&[1, 5]);
        let b: Batches<f64> = make_batches(&ts, &spec(), &BatchOptions::default()).unwrap();
        assert_eq!(b.emitted_frames(), 5);
    }

    #[test]
    fn fixed_seed_fixed_order() {
        let ts = vec![trial("a", 2, 300), trial("b", 1, 999)];
        let opts = BatchOptions {
            window: 20,
            batch: 3,
            segment: 100,
            seed: 5,
            shuffle: true,
        };
        let b1: Batches<f32> = make_batches(&ts, &spec(), &opts).unwrap();
        let b2: Batches<f32> = make_batches(&ts, &spec(), &opts).unwrap();
        assert_eq!(b1.sources, b2.sources);
    }

    #[test]
    fn subsample_keeps_about_p() {
        let mut ts = vec![trial("a", 2, 50_000)];
        let kept = subsample_labels(&mut ts, 0.03, &SubsampleOptions::default()).unwrap();
        let recount: usize = ts[0].agents.iter().map(|a| a.labeled_frames()).sum();
        assert_eq!(kept, recount);
        assert!(recount >= 3000 && recount < 3000 + 200, "{recount}");
        // Motion is untouched.
        assert_eq!(ts[0].agents[0].frames(), 50_000);
    }

    #[test]
    fn subsample_full_fraction_is_identity() {
        let mut ts = vec![trial("a", 1, 500)];
        let before = ts.clone();
        subsample_labels(&mut ts, 1.0, &SubsampleOptions::default()).unwrap();
        assert_eq!(ts, before);
        assert!(subsample_labels(&mut ts, 0.0, &SubsampleOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn every_frame_emitted_exactly_once(
            lens in proptest::collection::vec(0usize..400, 1..6),
            window in 1usize..60, batch in 1usize..8, segment in 1usize..300, seed in any::<u64>(),
        ) {
            let ts = trials(&lens);
            let opts = BatchOptions { window, batch, segment, seed, shuffle: true };
            let b: Batches<f64> = make_batches(&ts, &spec(), &opts).unwrap();
            let mut seen: Vec<Vec<usize>> = lens.iter().map(|&l| vec![0; l]).collect();
            for (w, src) in b.windows.iter().zip(&b.sources) {
                for step in 0..window {
                    for slot in 0..batch {
                        match src[step * batch + slot] {
                            Some(fr) => seen[fr.trial][fr.frame] += 1,
                            None => {
                                prop_assert!(!w.target_valid[step][slot] && !w.label_mask[step][slot]);
                            }
                        }
                    }
                }
            }
            for (a, s) in seen.iter().enumerate() {
                let expect = if lens[a] >= 2 { 1 } else { 0 };
                prop_assert!(s.iter().all(|&c| c == expect));
            }
        }

        #[test]
        fn state_carries_only_within_a_segment(
            lens in proptest::collection::vec(2usize..300, 1..4),
            window in 1usize..40, batch in 1usize..5,
        ) {
            let ts = trials(&lens);
            let opts = BatchOptions { window, batch, segment: 100, seed: 1, shuffle: true };
            let b: Batches<f64> = make_batches(&ts, &spec(), &opts).unwrap();
            for w in 1..b.windows.len() {
                for slot in 0..batch {
                    if !b.windows[w].reset[slot] {
                        let prev = b.sources[w - 1][(window - 1) * batch + slot].unwrap();
                        let cur = b.sources[w][slot].unwrap();
                        prop_assert_eq!(prev.trial, cur.trial);
                        prop_assert_eq!(prev.frame + 1, cur.frame);
                    }
                }
            }
        }
    }
}
