//! Discretization of real-valued motion into per-dimension bins.
//!
//! Every motion dimension gets its own sorted edge vector. Encoding maps a
//! value to exactly one bin (out-of-range values clamp to the first/last
//! bin); sampling picks a bin from a categorical distribution and draws a
//! value uniformly inside it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Offsets of each dimension's bins inside a flat concatenated vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinLayout {
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl BinLayout {
    pub fn new(counts: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for &c in &counts {
            offsets.push(acc);
            acc += c;
        }
        BinLayout { counts, offsets }
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn count(&self, dim: usize) -> usize {
        self.counts[dim]
    }

    pub fn offset(&self, dim: usize) -> usize {
        self.offsets[dim]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// The slice of a flat vector belonging to dimension `dim`.
    pub fn segment<'a, T>(&self, flat: &'a [T], dim: usize) -> &'a [T] {
        &flat[self.offsets[dim]..self.offsets[dim] + self.counts[dim]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinSpec {
    edges: Vec<Vec<f64>>,
}

/// How the edges of one dimension were placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeMethod {
    Quantile,
    /// Quantile edges with tied interior edges pushed apart.
    QuantileRepaired,
    EqualWidth,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub methods: Vec<EdgeMethod>,
    pub warnings: Vec<String>,
}

impl BinSpec {
    pub fn from_edges(edges: Vec<Vec<f64>>) -> Result<Self> {
        for (d, e) in edges.iter().enumerate() {
            if e.len() < 3 {
                return Err(Error::contract(format!("dimension {d}: need at least 2 bins")));
            }
            if e.iter().any(|v| !v.is_finite()) || e.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::contract(format!(
                    "dimension {d}: edges must be finite and strictly increasing"
                )));
            }
        }
        Ok(BinSpec { edges })
    }

    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self, dim: usize) -> &[f64] {
        &self.edges[dim]
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn layout(&self) -> BinLayout {
        BinLayout::new(self.bin_counts())
    }

    /// `(min, max)` representable value of a dimension.
    pub fn range(&self, dim: usize) -> (f64, f64) {
        let e = &self.edges[dim];
        (e[0], e[e.len() - 1])
    }

    pub fn encode_value(&self, dim: usize, value: f64) -> usize {
        let e = &self.edges[dim];
        let n = e.len() - 1;
        e[1..n].partition_point(|&edge| edge <= value)
    }

    /// One bin index per dimension.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.dims() {
            return Err(Error::contract(format!(
                "motion vector has {} dims, bin spec has {}",
                x.len(),
                self.dims()
            )));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(d, &v)| self.encode_value(d, v))
            .collect())
    }

    pub fn bin_center(&self, dim: usize, bin: usize) -> f64 {
        let e = &self.edges[dim];
        0.5 * (e[bin] + e[bin + 1])
    }

    /// Bin centers for a vector of bin indices.
    pub fn decode(&self, bins: &[usize]) -> Vec<f64> {
        bins.iter()
            .enumerate()
            .map(|(d, &b)| self.bin_center(d, b))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dimension,edge_index,edge_value\n");
        for (d, e) in self.edges.iter().enumerate() {
            for (i, v) in e.iter().enumerate() {
                let _ = writeln!(s, "{d},{i},{v}");
            }
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut edges: Vec<Vec<f64>> = Vec::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "dimension,edge_index,edge_value" => {}
            _ => return Err(Error::parse(path, 1, "expected header dimension,edge_index,edge_value")),
        }
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::parse(path, lineno, "expected 3 fields"));
            }
            let d: usize = f[0].trim().parse().map_err(|_| Error::parse(path, lineno, "bad dimension"))?;
            let k: usize = f[1].trim().parse().map_err(|_| Error::parse(path, lineno, "bad edge index"))?;
            let v: f64 = f[2].trim().parse().map_err(|_| Error::parse(path, lineno, "bad edge value"))?;
            if d == edges.len() {
                edges.push(Vec::new());
            }
            if d + 1 != edges.len() || k != edges[d].len() {
                return Err(Error::parse(path, lineno, "edges must be listed in order"));
            }
            edges[d].push(v);
        }
        BinSpec::from_edges(edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        BinSpec::from_csv(&fs::read_to_string(path)?, path)
    }
}

fn equal_width(min: f64, max: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = if max > min {
        (min, max)
    } else {
        (min - 0.5, min + 0.5)
    };
    (0..=n)
        .map(|k| if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fits equal-frequency edges for each dimension.
///
/// `columns[d]` holds all training values of dimension `d`; `bins[d]` is the
/// bin count for that dimension. Dimensions with fewer distinct values than
/// bins fall back to equal-width edges over the observed range.
pub fn fit_bins(columns: &[Vec<f64>], bins: &[usize]) -> Result<(BinSpec, FitReport)> {
    if columns.len() != bins.len() {
        return Err(Error::contract("fit_bins: one bin count per dimension required"));
    }
    let mut edges = Vec::with_capacity(columns.len());
    let mut report = FitReport {
        methods: Vec::new(),
        warnings: Vec::new(),
    };
    for (d, (col, &n)) in columns.iter().zip(bins).enumerate() {
        if n < 2 {
            return Err(Error::contract(format!("dimension {d}: n_bins must be >= 2")));
        }
        let mut sorted: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
        if sorted.is_empty() {
            return Err(Error::data(format!("dimension {d}: no finite training values")));
        }
        sorted.sort_by(|a, b| a.total_cmp(b));
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        let mut distinct = 1;
        for w in sorted.windows(2) {
            if w[1] != w[0] {
                distinct += 1;
            }
        }
        if distinct < n {
            let msg = format!(
                "dimension {d}: {distinct} distinct values < {n} bins, using equal-width edges"
            );
            warn!("{msg}");
            report.warnings.push(msg);
            report.methods.push(EdgeMethod::EqualWidth);
            edges.push(equal_width(min, max, n));
            continue;
        }
        let mut e: Vec<f64> = (0..=n).map(|k| quantile(&sorted, k as f64 / n as f64)).collect();
        e[0] = min;
        e[n] = max;
        if e.windows(2).all(|w| w[1] > w[0]) {
            report.methods.push(EdgeMethod::Quantile);
            edges.push(e);
            continue;
        }
        // Point masses collapse neighbouring quantiles; separate them by a
        // tiny step so each mass keeps its own bin.
        let step = (max - min) * 1e-6;
        for k in 1..n {
            if e[k] <= e[k - 1] {
                e[k] = e[k - 1] + step;
            }
        }
        if e[n - 1] < e[n] {
            report.methods.push(EdgeMethod::QuantileRepaired);
            edges.push(e);
        } else {
            let msg = format!("dimension {d}: degenerate quantiles, using equal-width edges");
            warn!("{msg}");
            report.warnings.push(msg);
            report.methods.push(EdgeMethod::EqualWidth);
            edges.push(equal_width(min, max, n));
        }
    }
    Ok((BinSpec::from_edges(edges)?, report))
}

/// Samples one categorical index from `probs` (assumed normalized).
pub fn sample_categorical<R: Rng + ?Sized, T: Scalar>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return k;
        }
    }
    // Rounding left a sliver above the cumulative sum; take the last
    // bin with positive mass.
    probs
        .iter()
        .rposition(|p| p.as_f64() > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Per dimension: draws a bin from `x_hat` and a value uniformly inside it.
///
/// `x_hat` is the flat concatenation of per-dimension distributions.
pub fn sample_motion<R: Rng + ?Sized, T: Scalar>(
    x_hat: &[T],
    spec: &BinSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let layout = spec.layout();
    if x_hat.len() != layout.total() {
        return Err(Error::contract(format!(
            "distribution length {} != {} bins",
            x_hat.len(),
            layout.total()
        )));
    }
    let mut out = Vec::with_capacity(spec.dims());
    for d in 0..spec.dims() {
        let p = layout.segment(x_hat, d);
        let s: f64 = p.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-3 || p.iter().any(|v| v.as_f64() < 0.0) {
            return Err(Error::contract(format!(
                "dimension {d}: distribution not normalized (sum {s})"
            )));
        }
        let k = sample_categorical(p, rng);
        let e = spec.edges(d);
        let v = rng.random_range(e[k]..e[k + 1]);
        out.push(v);
    }
    Ok(out)
}

/// Like [`sample_motion`] but returns the bin center of the most likely bin.
pub fn argmax_motion<T: Scalar>(x_hat: &[T], spec: &BinSpec) -> Vec<f64> {
    let layout = spec.layout();
    (0..spec.dims())
        .map(|d| {
            let p = layout.segment(x_hat, d);
            let k = p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bk, bv), (k, v)| {
                    if v.as_f64() > bv {
                        (k, v.as_f64())
                    } else {
                        (bk, bv)
                    }
                })
                .0;
            spec.bin_center(d, k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_1d(edges: &[f64]) -> BinSpec {
        BinSpec::from_edges(vec![edges.to_vec()]).unwrap()
    }

    #[test]
    fn median_edge_for_two_bins() {
        let col: Vec<f64> = (1..=100).map(f64::from).collect();
        let (spec, rep) = fit_bins(&[col], &[2]).unwrap();
        assert_eq!(spec.edges(0), &[1.0, 50.5, 100.0]);
        assert_eq!(rep.methods, vec![EdgeMethod::Quantile]);
    }

    #[test]
    fn constant_dimension_falls_back() {
        let (spec, rep) = fit_bins(&[vec![3.0; 50]], &[5]).unwrap();
        assert_eq!(rep.methods, vec![EdgeMethod::EqualWidth]);
        assert_eq!(rep.warnings.len(), 1);
        let bins: Vec<usize> = (0..50).map(|_| spec.encode_value(0, 3.0)).collect();
        assert!(bins.iter().all(|&b| b == bins[0]));
    }

    #[test]
    fn uniform_data_fills_bins_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let col: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let (spec, _) = fit_bins(&[col.clone()], &[51]).unwrap();
        let mut counts = [0usize; 51];
        for &v in &col {
            counts[spec.encode_value(0, v)] += 1;
        }
        let expect = col.len() as f64 / 51.0;
        for c in counts {
            assert!((c as f64 - expect).abs() <= 0.2 * expect, "{c} vs {expect}");
        }
    }

    #[test]
    fn point_mass_gets_repaired_edges() {
        let mut col = vec![0.0; 300];
        col.extend((1..=700).map(|k| k as f64 / 700.0));
        let (spec, rep) = fit_bins(&[col], &[10]).unwrap();
        assert_eq!(rep.methods, vec![EdgeMethod::QuantileRepaired]);
        assert_eq!(spec.encode_value(0, 0.0), 0);
        assert!(spec.edges(0).windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn encode_edges_and_clamping() {
        let spec = spec_1d(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(spec.encode_value(0, 0.0), 0);
        assert_eq!(spec.encode_value(0, 1.0), 1);
        assert_eq!(spec.encode_value(0, 2.999), 2);
        assert_eq!(spec.encode_value(0, 3.0), 2);
        assert_eq!(spec.encode_value(0, 42.0), 2);
        assert_eq!(spec.encode_value(0, -42.0), 0);
        assert!(spec.encode(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn delta_distribution_samples_inside_bin() {
        let spec = spec_1d(&[0.0, 1.0, 2.5, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let v = sample_motion(&[0.0f32, 1.0, 0.0], &spec, &mut rng).unwrap()[0];
            assert!((1.0..2.5).contains(&v));
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let n = 10;
        let edges: Vec<f64> = (0..=n).map(|k| k as f64).collect();
        let spec = spec_1d(&edges);
        let probs = vec![1.0 / n as f64; n];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let v = sample_motion(&probs, &spec, &mut rng).unwrap()[0];
            counts[spec.encode_value(0, v)] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_validated() {
        let spec = spec_1d(&[0.0, 1.0, 2.0]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_motion(&[0.3f64, 0.7], &spec, &mut rng).unwrap()[0])
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_motion(&[0.3f64, 0.3], &spec, &mut rng).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let spec = BinSpec::from_edges(vec![vec![0.0, 0.1, 0.25], vec![-1.0, 0.0, 1.0, 1.5]]).unwrap();
        let back = BinSpec::from_csv(&spec.to_csv(), Path::new("bins.csv")).unwrap();
        assert_eq!(spec, back);
        assert!(BinSpec::from_csv("nope\n", Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn encode_is_order_preserving_and_decode_idempotent(
            mut vals in proptest::collection::vec(-100.0f64..100.0, 30..200),
            n in 2usize..20,
            probe in proptest::collection::vec(-200.0f64..200.0, 1..50),
        ) {
            vals.push(0.0);
            let (spec, _) = fit_bins(&[vals], &[n]).unwrap();
            let mut sorted = probe.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let bins: Vec<usize> = sorted.iter().map(|&v| spec.encode_value(0, v)).collect();
            prop_assert!(bins.windows(2).all(|w| w[0] <= w[1]));
            for &b in &bins {
                let center = spec.bin_center(0, b);
                prop_assert_eq!(spec.encode_value(0, center), b);
            }
        }

        #[test]
        fn samples_stay_in_range(seed in any::<u64>(), w in proptest::collection::vec(0.01f64..1.0, 2..12)) {
            let edges: Vec<f64> = (0..=w.len()).map(|k| (k * k) as f64 * 0.3 - 2.0).collect();
            let spec = spec_1d(&edges);
            let s: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|v| v / s).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = spec.range(0);
            for _ in 0..20 {
                let v = sample_motion(&probs, &spec, &mut rng).unwrap()[0];
                prop_assert!(v >= lo && v <= hi);
            }
        }
    }
}
