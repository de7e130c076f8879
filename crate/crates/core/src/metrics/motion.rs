use std::fmt;
use std::str::FromStr;

use crate::codec::BinLayout;
use crate::error::{ensure_dims, Error, Result};
use crate::numerics::Matrix;

/// Probabilities are floored here before taking logs.
pub const LOGLIK_FLOOR: f64 = 1e-6;

/// Smoothing widths (in bins) tried for the smoothed copy baseline.
pub const SIGMA_GRID: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

fn check_bins(bins: &[usize], layout: &BinLayout) -> Result<()> {
    let d = layout.dims();
    ensure_dims!(d > 0 && bins.len() % d == 0, "{} bins do not split into {d} dims", bins.len());
    for (j, &b) in bins.iter().enumerate() {
        ensure_dims!(b < layout.count(j % d), "bin {b} out of range in dim {}", j % d);
    }
    Ok(())
}

/// Sum over rows and dimensions of the log probability given to the true
/// bin. Row `r` of `probs` is scored against row `r` of `truth`.
pub fn motion_loglik(probs: &Matrix<f64>, truth: &[usize], layout: &BinLayout) -> Result<f64> {
    let d = layout.dims();
    check_bins(truth, layout)?;
    ensure_dims!(
        probs.cols() == layout.total() && probs.rows() * d == truth.len(),
        "{} x {} distributions vs {} true bins over {d} dims",
        probs.rows(),
        probs.cols(),
        truth.len()
    );
    let mut sum = 0.0;
    for r in 0..probs.rows() {
        let row = probs.row(r);
        for k in 0..d {
            let p = row[layout.offset(k) + truth[r * d + k]];
            sum += p.max(LOGLIK_FLOOR).ln();
        }
    }
    Ok(sum)
}

/// Log-likelihood of a whole sequence from per-frame predictions: row `i`
/// of `x_hat` predicts frame `i + 1` of `bins`. Returns the sum and the
/// number of scored steps (`T - 1`).
pub fn sequence_loglik(x_hat: &Matrix<f64>, bins: &[usize], layout: &BinLayout) -> Result<(f64, usize)> {
    let d = layout.dims();
    let t = x_hat.rows();
    ensure_dims!(bins.len() == t * d, "{} bins for {t} frames of {d} dims", bins.len());
    if t < 2 {
        return Ok((0.0, 0));
    }
    let head = Matrix::from_vec(t - 1, x_hat.cols(), x_hat.as_slice()[..(t - 1) * x_hat.cols()].to_vec())?;
    Ok((motion_loglik(&head, &bins[d..], layout)?, t - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Uniform,
    Prior,
    Constant,
    SmoothConstant,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Uniform,
        BaselineKind::Prior,
        BaselineKind::Constant,
        BaselineKind::SmoothConstant,
    ];
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "uniform" => Ok(BaselineKind::Uniform),
            "prior" => Ok(BaselineKind::Prior),
            "constant" => Ok(BaselineKind::Constant),
            "smooth_constant" | "smooth" => Ok(BaselineKind::SmoothConstant),
            _ => Err(Error::Config(format!("unknown baseline '{s}'"))),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Uniform => "UNIFORM",
            BaselineKind::Prior => "PRIOR",
            BaselineKind::Constant => "CONSTANT",
            BaselineKind::SmoothConstant => "SMOOTH_CONSTANT",
        })
    }
}

/// A motion policy that ignores sensory input.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    kind: BaselineKind,
    layout: BinLayout,
    /// Flat per-dimension histograms (PRIOR only).
    prior: Vec<f64>,
    /// Per-dimension kernel width in bins (SMOOTH_CONSTANT only).
    sigma: Vec<f64>,
}

impl Baseline {
    pub fn uniform(layout: BinLayout) -> Self {
        Baseline {
            kind: BaselineKind::Uniform,
            layout,
            prior: Vec::new(),
            sigma: Vec::new(),
        }
    }

    pub fn constant(layout: BinLayout) -> Self {
        Baseline {
            kind: BaselineKind::Constant,
            layout,
            prior: Vec::new(),
            sigma: Vec::new(),
        }
    }

    /// Training-set bin frequencies of every dimension.
    pub fn prior(layout: BinLayout, train: &[&[usize]]) -> Result<Self> {
        let d = layout.dims();
        let mut hist = vec![0.0; layout.total()];
        let mut rows = 0usize;
        for seq in train {
            check_bins(seq, &layout)?;
            for row in seq.chunks(d) {
                for (k, &b) in row.iter().enumerate() {
                    hist[layout.offset(k) + b] += 1.0;
                }
                rows += 1;
            }
        }
        if rows == 0 {
            return Err(Error::data("PRIOR needs at least one training frame"));
        }
        for h in hist.iter_mut() {
            *h /= rows as f64;
        }
        Ok(Baseline {
            kind: BaselineKind::Prior,
            layout,
            prior: hist,
            sigma: Vec::new(),
        })
    }

    pub fn smooth_constant(layout: BinLayout, sigma: Vec<f64>) -> Result<Self> {
        ensure_dims!(sigma.len() == layout.dims(), "one sigma per dimension");
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("smoothing sigma must be > 0".into()));
        }
        Ok(Baseline {
            kind: BaselineKind::SmoothConstant,
            layout,
            prior: Vec::new(),
            sigma,
        })
    }

    /// Builds `kind` from training sequences; SMOOTH_CONSTANT picks each
    /// dimension's sigma from [`SIGMA_GRID`] by validation log-likelihood
    /// (training data when `valid` is empty; ties go to the smaller sigma).
    pub fn fit(kind: BaselineKind, layout: BinLayout, train: &[&[usize]], valid: &[&[usize]]) -> Result<Self> {
        match kind {
            BaselineKind::Uniform => Ok(Baseline::uniform(layout)),
            BaselineKind::Constant => Ok(Baseline::constant(layout)),
            BaselineKind::Prior => Baseline::prior(layout, train),
            BaselineKind::SmoothConstant => {
                let data = if valid.is_empty() { train } else { valid };
                let d = layout.dims();
                let mut sigma = Vec::with_capacity(d);
                for k in 0..d {
                    let mut best = (f64::NEG_INFINITY, SIGMA_GRID[0]);
                    for &s in &SIGMA_GRID {
                        let kernel = kernel_table(layout.count(k), s);
                        let mut ll = 0.0;
                        for seq in data {
                            check_bins(seq, &layout)?;
                            let rows: Vec<&[usize]> = seq.chunks(d).collect();
                            for w in rows.windows(2) {
                                ll += kernel[w[0][k]][w[1][k]].max(LOGLIK_FLOOR).ln();
                            }
                        }
                        if ll > best.0 {
                            best = (ll, s);
                        }
                    }
                    sigma.push(best.1);
                }
                Baseline::smooth_constant(layout, sigma)
            }
        }
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn layout(&self) -> &BinLayout {
        &self.layout
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn prior_histogram(&self) -> &[f64] {
        &self.prior
    }

    /// Next-frame distribution (flat over all dimensions) given the current
    /// frame's bins.
    pub fn distribution(&self, current: &[usize]) -> Vec<f64> {
        let l = &self.layout;
        let mut out = vec![0.0; l.total()];
        for k in 0..l.dims() {
            let n = l.count(k);
            let seg = &mut out[l.offset(k)..l.offset(k) + n];
            match self.kind {
                BaselineKind::Uniform => seg.fill(1.0 / n as f64),
                BaselineKind::Prior => seg.copy_from_slice(&self.prior[l.offset(k)..l.offset(k) + n]),
                BaselineKind::Constant => seg[current[k]] = 1.0,
                BaselineKind::SmoothConstant => {
                    seg.copy_from_slice(&kernel_row(n, current[k], self.sigma[k]));
                }
            }
        }
        out
    }

    /// Log-likelihood of one sequence of flat bin rows; returns the sum over
    /// steps `1..T` and the step count.
    pub fn loglik(&self, seq: &[usize]) -> Result<(f64, usize)> {
        let d = self.layout.dims();
        check_bins(seq, &self.layout)?;
        let t = seq.len() / d;
        if t < 2 {
            return Ok((0.0, 0));
        }
        let mut probs = Matrix::zeros(t - 1, self.layout.total());
        for i in 0..t - 1 {
            probs.row_mut(i).copy_from_slice(&self.distribution(&seq[i * d..(i + 1) * d]));
        }
        Ok((motion_loglik(&probs, &seq[d..], &self.layout)?, t - 1))
    }
}

/// Gaussian over bin indices centered on `center`, normalized.
fn kernel_row(n: usize, center: usize, sigma: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|j| {
            let z = (j as f64 - center as f64) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    let s: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= s;
    }
    row
}

fn kernel_table(n: usize, sigma: f64) -> Vec<Vec<f64>> {
    (0..n).map(|c| kernel_row(n, c, sigma)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, layout: &BinLayout) -> Vec<usize> {
        (0..t * layout.dims())
            .map(|j| rng.random_range(0..layout.count(j % layout.dims())))
            .collect()
    }

    #[test]
    fn uniform_loglik_formula() {
        let layout = BinLayout::new(vec![51; 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = random_seq(&mut rng, 11, &layout);
        let (ll, steps) = Baseline::uniform(layout).loglik(&seq).unwrap();
        assert_eq!(steps, 10);
        assert!((ll - 80.0 * (1.0f64 / 51.0).ln()).abs() < 1e-9);
        assert!((ll + 314.55).abs() < 0.01);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let layout = BinLayout::new(vec![3, 4]);
        let truth = vec![2, 0, 1, 3];
        let mut p = Matrix::zeros(2, 7);
        p.set(0, 2, 1.0);
        p.set(0, 3, 1.0);
        p.set(1, 1, 1.0);
        p.set(1, 6, 1.0);
        assert_eq!(motion_loglik(&p, &truth, &layout).unwrap(), 0.0);
        assert!(motion_loglik(&p, &truth[..2], &layout).is_err());
    }

    #[test]
    fn constant_policy_on_static_sequence() {
        let layout = BinLayout::new(vec![5, 5]);
        let seq = [3, 1].repeat(20);
        let (ll, _) = Baseline::constant(layout).loglik(&seq).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn prior_histograms_are_distributions() {
        let layout = BinLayout::new(vec![4, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_seq(&mut rng, 100, &layout);
        let b = random_seq(&mut rng, 30, &layout);
        let p = Baseline::prior(layout.clone(), &[&a, &b]).unwrap();
        for k in 0..2 {
            let s: f64 = layout.segment(p.prior_histogram(), k).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_smoothing_approaches_constant() {
        let layout = BinLayout::new(vec![7, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seq = random_seq(&mut rng, 60, &layout);
        seq[4..8].copy_from_slice(&[1, 1, 1, 1]);
        let c = Baseline::constant(layout.clone()).loglik(&seq).unwrap().0;
        let s = Baseline::smooth_constant(layout, vec![0.01, 0.01]).unwrap().loglik(&seq).unwrap().0;
        assert!((c - s).abs() < 1e-6, "{c} vs {s}");
    }

    #[test]
    fn sigma_fit_tracks_step_size() {
        // Dimension 0 jumps by ±3 bins, dimension 1 by at most one.
        let layout = BinLayout::new(vec![41, 41]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut a, mut b) = (20i64, 20i64);
        let mut seq = Vec::new();
        for _ in 0..3000 {
            a = (a + if rng.random_bool(0.5) { 3 } else { -3 }).clamp(0, 40);
            b = (b + rng.random_range(-1..=1)).clamp(0, 40);
            seq.extend([a as usize, b as usize]);
        }
        let m = Baseline::fit(BaselineKind::SmoothConstant, layout, &[&seq], &[]).unwrap();
        assert!(m.sigma()[0] > m.sigma()[1], "{:?}", m.sigma());
    }

    #[test]
    fn kinds_parse() {
        for k in BaselineKind::ALL {
            assert_eq!(k.to_string().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("median".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn loglik_monotone_in_true_bin_probability() {
        let layout = BinLayout::new(vec![4]);
        let mut prev = f64::NEG_INFINITY;
        for k in 1..10 {
            let p = k as f64 / 10.0;
            let rest = (1.0 - p) / 3.0;
            let m = Matrix::from_vec(1, 4, vec![rest, p, rest, rest]).unwrap();
            let ll = motion_loglik(&m, &[1], &layout).unwrap();
            assert!(ll >= prev);
            prev = ll;
        }
    }
}
