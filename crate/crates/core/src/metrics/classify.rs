use std::fmt::Write as _;

use crate::dataset::{frames_to_bouts, mean_bout_duration, AgentTrack, Bout, TrialData};
use crate::error::Result;
use crate::model::LabelMode;
use crate::numerics::Matrix;

/// Box-filter width for a class whose bouts last `mean_bout_duration`
/// frames on average: 10% of it, at least 1.
pub fn smoothing_width(mean_bout_duration: f64) -> usize {
    ((0.1 * mean_bout_duration).round() as usize).max(1)
}

/// Centered moving average of width [`smoothing_width`], renormalized where
/// the window runs off either end.
pub fn smooth_scores(scores: &[f64], mean_bout_duration: f64) -> Vec<f64> {
    let w = smoothing_width(mean_bout_duration);
    if w == 1 {
        return scores.to_vec();
    }
    let n = scores.len();
    let back = (w - 1) / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + (w - 1 - back) + 1).min(n);
            scores[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Maximal runs of frames scoring at least `threshold`.
pub fn extract_bouts(scores: &[f64], threshold: f64, class: usize) -> Vec<Bout> {
    let on: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    frames_to_bouts(&on, class)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoutMatch {
    /// Index into the predicted list.
    pub pred: usize,
    /// Index into the ground-truth list.
    pub truth: usize,
    pub iou: f64,
}

fn candidate_pairs(pred: &[Bout], truth: &[Bout]) -> Vec<BoutMatch> {
    let mut pairs = Vec::new();
    for (p, pb) in pred.iter().enumerate() {
        for (t, tb) in truth.iter().enumerate() {
            let iou = pb.iou(tb);
            if iou > 0.0 {
                pairs.push(BoutMatch { pred: p, truth: t, iou });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(truth[a.truth].start.cmp(&truth[b.truth].start))
            .then(pred[a.pred].start.cmp(&pred[b.pred].start))
    });
    pairs
}

/// One-to-one matching taking pairs in order of decreasing IoU; ties go to
/// the earlier ground-truth start, then the earlier predicted start.
pub fn greedy_match_bouts(pred: &[Bout], truth: &[Bout]) -> Vec<BoutMatch> {
    let mut used_p = vec![false; pred.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for m in candidate_pairs(pred, truth) {
        if !used_p[m.pred] && !used_t[m.truth] {
            used_p[m.pred] = true;
            used_t[m.truth] = true;
            out.push(m);
        }
    }
    out
}

/// Greedy IoU matching followed by augmenting paths over overlapping pairs.
///
/// Greedy alone is not maximum: with truth `[5,15)`, `[15,25)` and
/// predictions `[0,6)`, `[6,16)`, it pairs `[6,16)` with `[5,15)` and leaves
/// two overlapping bouts unmatched. Augmentation keeps greedy's choices
/// wherever they do not cost a match, so the count equals the optimum.
pub fn match_bouts(pred: &[Bout], truth: &[Bout]) -> Vec<BoutMatch> {
    let greedy = greedy_match_bouts(pred, truth);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pred.len()];
    for m in candidate_pairs(pred, truth) {
        adj[m.pred].push((m.truth, m.iou));
    }
    let mut owner: Vec<Option<usize>> = vec![None; truth.len()];
    let mut matched_p = vec![false; pred.len()];
    for m in &greedy {
        owner[m.truth] = Some(m.pred);
        matched_p[m.pred] = true;
    }

    fn augment(p: usize, adj: &[Vec<(usize, f64)>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &(t, _) in &adj[p] {
            if seen[t] {
                continue;
            }
            seen[t] = true;
            let free = match owner[t] {
                None => true,
                Some(q) => augment(q, adj, owner, seen),
            };
            if free {
                owner[t] = Some(p);
                return true;
            }
        }
        false
    }

    for p in 0..pred.len() {
        if !matched_p[p] {
            let mut seen = vec![false; truth.len()];
            if augment(p, &adj, &mut owner, &mut seen) {
                matched_p[p] = true;
            }
        }
    }
    let mut out: Vec<BoutMatch> = owner
        .iter()
        .enumerate()
        .filter_map(|(t, o)| {
            o.map(|p| BoutMatch {
                pred: p,
                truth: t,
                iou: pred[p].iou(&truth[t]),
            })
        })
        .collect();
    out.sort_by_key(|m| m.truth);
    out
}

/// Harmonic mean of two scores, 0 when either is 0.
pub fn f_star(f1_frame: f64, f1_bout: f64) -> f64 {
    if f1_frame <= 0.0 || f1_bout <= 0.0 {
        0.0
    } else {
        2.0 * f1_frame * f1_bout / (f1_frame + f1_bout)
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Ratio with the empty-vs-empty case counted as perfect.
fn ratio(num: usize, den: usize, other_empty: bool) -> f64 {
    if den == 0 {
        if other_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Frame and bout tallies of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub matched: usize,
    pub pred_bouts: usize,
    pub truth_bouts: usize,
}

impl ClassCounts {
    pub fn add(&mut self, pred: &[bool], truth: &[bool]) {
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                _ => {}
            }
        }
        let pb = frames_to_bouts(pred, 0);
        let tb = frames_to_bouts(truth, 0);
        self.matched += match_bouts(&pb, &tb).len();
        self.pred_bouts += pb.len();
        self.truth_bouts += tb.len();
    }

    pub fn scores(&self, name: &str) -> ClassScores {
        let truth_frames = self.tp + self.fn_;
        let pred_frames = self.tp + self.fp;
        let pf = ratio(self.tp, pred_frames, truth_frames == 0);
        let rf = ratio(self.tp, truth_frames, pred_frames == 0);
        let pb = ratio(self.matched, self.pred_bouts, self.truth_bouts == 0);
        let rb = ratio(self.matched, self.truth_bouts, self.pred_bouts == 0);
        let (f1_frame, f1_bout) = (f1(pf, rf), f1(pb, rb));
        ClassScores {
            name: name.to_string(),
            f1_frame,
            f1_bout,
            f_star: f_star(f1_frame, f1_bout),
            precision_frame: pf,
            recall_frame: rf,
            precision_bout: pb,
            recall_bout: rb,
            truth_frames,
            truth_bouts: self.truth_bouts,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub name: String,
    pub f1_frame: f64,
    pub f1_bout: f64,
    pub f_star: f64,
    pub precision_frame: f64,
    pub recall_frame: f64,
    pub precision_bout: f64,
    pub recall_bout: f64,
    pub truth_frames: usize,
    pub truth_bouts: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Aggregate {
    pub f1_frame: f64,
    pub f1_bout: f64,
    pub f_star: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Report {
    pub classes: Vec<ClassScores>,
    /// Unweighted mean over classes.
    pub mean: Aggregate,
    /// Mean weighted by ground-truth bout count.
    pub weighted: Aggregate,
}

impl F1Report {
    pub fn from_counts(names: &[String], counts: &[ClassCounts]) -> F1Report {
        let classes: Vec<ClassScores> = names.iter().zip(counts).map(|(n, c)| c.scores(n)).collect();
        let k = classes.len().max(1) as f64;
        let mean = Aggregate {
            f1_frame: classes.iter().map(|c| c.f1_frame).sum::<f64>() / k,
            f1_bout: classes.iter().map(|c| c.f1_bout).sum::<f64>() / k,
            f_star: classes.iter().map(|c| c.f_star).sum::<f64>() / k,
        };
        let total: usize = classes.iter().map(|c| c.truth_bouts).sum();
        let weighted = if total == 0 {
            mean
        } else {
            let w = |c: &ClassScores| c.truth_bouts as f64 / total as f64;
            Aggregate {
                f1_frame: classes.iter().map(|c| w(c) * c.f1_frame).sum(),
                f1_bout: classes.iter().map(|c| w(c) * c.f1_bout).sum(),
                f_star: classes.iter().map(|c| w(c) * c.f_star).sum(),
            }
        };
        F1Report {
            classes,
            mean,
            weighted,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "class,f1_frame,f1_bout,f_star,precision_frame,recall_frame,precision_bout,recall_bout,truth_frames,truth_bouts\n",
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                c.name,
                c.f1_frame,
                c.f1_bout,
                c.f_star,
                c.precision_frame,
                c.recall_frame,
                c.precision_bout,
                c.recall_bout,
                c.truth_frames,
                c.truth_bouts
            );
        }
        for (name, a) in [("mean", &self.mean), ("weighted", &self.weighted)] {
            let _ = writeln!(s, "{name},{:.6},{:.6},{:.6},,,,,,", a.f1_frame, a.f1_bout, a.f_star);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<20} {:>9} {:>9} {:>9}\n", "class", "F1-frame", "F1-bout", "F*");
        for c in &self.classes {
            let _ = writeln!(s, "{:<20} {:>9.4} {:>9.4} {:>9.4}", c.name, c.f1_frame, c.f1_bout, c.f_star);
        }
        for (name, a) in [("mean", &self.mean), ("weighted", &self.weighted)] {
            let _ = writeln!(s, "{:<20} {:>9.4} {:>9.4} {:>9.4}", name, a.f1_frame, a.f1_bout, a.f_star);
        }
        s
    }
}

/// Per-class mean bout duration in `trials`, 1 for classes without bouts.
pub fn mean_durations(trials: &[TrialData], n_classes: usize) -> Vec<f64> {
    let mut bouts: Vec<Vec<Bout>> = vec![Vec::new(); n_classes];
    for t in trials {
        for a in &t.agents {
            for b in a.bouts() {
                bouts[b.class].push(b);
            }
        }
    }
    bouts.iter().map(|b| mean_bout_duration(b).unwrap_or(1.0)).collect()
}

/// Turns `T x N` scores into per-class frame predictions: smoothing, then a
/// 0.5 threshold (multitask) or the per-frame argmax (multiclass).
pub fn predict_frames(scores: &Matrix<f64>, mode: LabelMode, durations: &[f64]) -> Vec<Vec<bool>> {
    let (t, n) = scores.shape();
    let smoothed: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let col: Vec<f64> = (0..t).map(|i| scores.get(i, k)).collect();
            smooth_scores(&col, durations.get(k).copied().unwrap_or(1.0))
        })
        .collect();
    match mode {
        LabelMode::Multitask => smoothed
            .iter()
            .map(|c| c.iter().map(|&s| s >= 0.5).collect())
            .collect(),
        LabelMode::Multiclass => {
            let mut out = vec![vec![false; t]; n];
            for i in 0..t {
                let best = (0..n).max_by(|&a, &b| smoothed[a][i].total_cmp(&smoothed[b][i]).then(b.cmp(&a)));
                if let Some(k) = best {
                    out[k][i] = true;
                }
            }
            out
        }
    }
}

/// Collects frame and bout counts over tracks. Frames outside a track's
/// label mask are ignored.
#[derive(Clone, Debug)]
pub struct F1Accumulator {
    names: Vec<String>,
    counts: Vec<ClassCounts>,
}

impl F1Accumulator {
    pub fn new(names: Vec<String>) -> Self {
        let counts = vec![ClassCounts::default(); names.len()];
        F1Accumulator { names, counts }
    }

    pub fn add(&mut self, pred: &[Vec<bool>], truth: &AgentTrack) -> Result<()> {
        crate::error::ensure_dims!(
            pred.len() == self.names.len() && pred.iter().all(|p| p.len() == truth.frames()),
            "predictions must cover {} classes x {} frames",
            self.names.len(),
            truth.frames()
        );
        for (k, (p, c)) in pred.iter().zip(self.counts.iter_mut()).enumerate() {
            let p: Vec<bool> = p.iter().zip(&truth.label_mask).map(|(&a, &m)| a && m).collect();
            c.add(&p, &truth.class_column(k));
        }
        Ok(())
    }

    pub fn report(&self) -> F1Report {
        F1Report::from_counts(&self.names, &self.counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(start: usize, end: usize) -> Bout {
        Bout { class: 0, start, end }
    }

    /// Largest number of disjoint overlapping pairs, by exhaustive search.
    fn brute_force(pred: &[Bout], truth: &[Bout]) -> usize {
        fn go(i: usize, pred: &[Bout], truth: &[Bout], used: &mut Vec<bool>) -> usize {
            if i == pred.len() {
                return 0;
            }
            let mut best = go(i + 1, pred, truth, used);
            for t in 0..truth.len() {
                if !used[t] && pred[i].intersection(&truth[t]) > 0 {
                    used[t] = true;
                    best = best.max(1 + go(i + 1, pred, truth, used));
                    used[t] = false;
                }
            }
            best
        }
        go(0, pred, truth, &mut vec![false; truth.len()])
    }

    fn random_bouts(rng: &mut ChaCha8Rng, max: usize) -> Vec<Bout> {
        let k = rng.random_range(0..=max);
        let mut out = Vec::new();
        let mut pos = rng.random_range(0..5);
        for _ in 0..k {
            let len = rng.random_range(1..12);
            out.push(b(pos, pos + len));
            pos += len + rng.random_range(0..6);
        }
        out
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smoothing_width(40.0), 4);
        assert!(smooth_scores(&[0.3; 9], 50.0).iter().all(|v| (v - 0.3).abs() < 1e-12));
        let mut x = vec![0.0; 11];
        x[5] = 1.0;
        let s = smooth_scores(&x, 50.0);
        for (i, v) in s.iter().enumerate() {
            let expect = if (3..=7).contains(&i) { 0.2 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "{i}: {v}");
        }
    }

    #[test]
    fn smoothing_renormalizes_at_edges() {
        let s = smooth_scores(&[1.0, 0.0, 0.0, 0.0, 0.0], 30.0);
        assert!((s[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn extraction_examples() {
        assert_eq!(extract_bouts(&[0.6, 0.7, 0.2, 0.9], 0.5, 0), vec![b(0, 2), b(3, 4)]);
        assert!(extract_bouts(&[0.1, 0.2], 0.5, 0).is_empty());
    }

    #[test]
    fn tie_break_prefers_earlier_truth() {
        let m = match_bouts(&[b(5, 25)], &[b(0, 10), b(20, 30)]);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].truth, 0);
        assert!((m[0].iou - 0.2).abs() < 1e-12);
    }

    #[test]
    fn augmentation_fixes_greedy_counterexample() {
        let pred = [b(0, 6), b(6, 16)];
        let truth = [b(5, 15), b(15, 25)];
        assert_eq!(greedy_match_bouts(&pred, &truth).len(), 1);
        assert_eq!(match_bouts(&pred, &truth).len(), 2);
    }

    #[test]
    fn matched_count_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = random_bouts(&mut rng, 6);
            let t = random_bouts(&mut rng, 6);
            let m = match_bouts(&p, &t);
            assert_eq!(m.len(), brute_force(&p, &t), "{p:?} {t:?}");
            assert!(m.len() <= p.len().min(t.len()));
        }
    }

    #[test]
    fn f1_examples() {
        assert!((f_star(0.445, 0.585) - 0.5055).abs() < 5e-5);
        let truth: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let pred: Vec<bool> = (0..20).map(|i| (5..15).contains(&i)).collect();
        let mut c = ClassCounts::default();
        c.add(&pred, &truth);
        let s = c.scores("a");
        assert_eq!((s.precision_frame, s.recall_frame, s.f1_frame), (0.5, 0.5, 0.5));
        let mut c = ClassCounts::default();
        c.add(&truth, &truth);
        let s = c.scores("a");
        assert_eq!((s.f1_frame, s.f1_bout, s.f_star), (1.0, 1.0, 1.0));
    }

    #[test]
    fn report_csv_has_class_and_aggregate_rows() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut c = vec![ClassCounts::default(); 2];
        c[0].add(&[true, false], &[true, false]);
        c[1].add(&[true, true], &[false, true]);
        let r = F1Report::from_counts(&names, &c);
        assert_eq!(r.to_csv().lines().count(), 1 + 2 + 2);
        assert!((r.mean.f1_frame - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn multiclass_prediction_is_argmax() {
        let s = Matrix::from_vec(2, 2, vec![0.2, 0.3, 0.9, 0.1]).unwrap();
        let p = predict_frames(&s, LabelMode::Multiclass, &[1.0, 1.0]);
        assert_eq!(p, vec![vec![false, true], vec![true, false]]);
    }

    proptest! {
        #[test]
        fn bouts_cover_exactly_the_frames_above_threshold(
            scores in proptest::collection::vec(0.0f64..1.0, 0..120), thr in 0.05f64..0.95,
        ) {
            let bouts = extract_bouts(&scores, thr, 0);
            // Naive run-length scan.
            let mut naive = Vec::new();
            let mut i = 0;
            while i < scores.len() {
                if scores[i] >= thr {
                    let s = i;
                    while i < scores.len() && scores[i] >= thr { i += 1; }
                    naive.push(b(s, i));
                } else {
                    i += 1;
                }
            }
            prop_assert_eq!(&bouts, &naive);
            let covered: usize = bouts.iter().map(Bout::len).sum();
            prop_assert_eq!(covered, scores.iter().filter(|&&s| s >= thr).count());
        }
    }
}
