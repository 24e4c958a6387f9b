//! Seeded randomness and the small amount of statistics the rest of the
//! crate needs: reproducible substreams, the two-sample Kolmogorov–Smirnov
//! test, histogram distances and autocorrelation estimates.
//!
//! Every random quantity in the crate is drawn from a [`SeededStream`]. A
//! stream is a value: the pair `(master_seed, stream_id)` fully determines
//! the sequence, so parallel work can hand stream `i` to item `i` and the
//! result never depends on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The generator type handed out by [`SeededStream::rng`].
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample too small: got {got}, need at least {need}")]
    SampleTooSmall { got: usize, need: usize },
    #[error("series has zero variance; autocorrelation is undefined")]
    ZeroVariance,
    #[error("histogram grids differ: [{lo_a}, {hi_a}]/{n_a} vs [{lo_b}, {hi_b}]/{n_b}")]
    GridMismatch {
        lo_a: f64,
        hi_a: f64,
        n_a: usize,
        lo_b: f64,
        hi_b: f64,
        n_b: usize,
    },
    #[error("invalid significance level {0}; expected 0 < alpha < 1")]
    InvalidAlpha(f64),
    #[error("invalid histogram window [{lo}, {hi}] with {bins} bins")]
    InvalidWindow { lo: f64, hi: f64, bins: usize },
}

/// A reproducible random stream identified by `(master_seed, stream_id)`.
///
/// The stream id selects an independent ChaCha keystream, so substreams are
/// derived algebraically and never by drawing from a parent generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeededStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Stream `id` of a child seed derived from this stream and `tag`.
    ///
    /// Used when one logical stream needs a whole family of per-item
    /// streams, e.g. one per particle.
    pub fn child(&self, tag: u64, id: u64) -> SeededStream {
        SeededStream::new(
            derive_seed(derive_seed(self.master_seed, self.stream_id), tag),
            id,
        )
    }
}

/// SplitMix64 finalizer applied to `seed ^ tag`; used to derive independent
/// master seeds for distinct purposes inside one computation.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One standard normal draw.
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Result of a two-sample test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub n1: usize,
    pub n2: usize,
    /// `true` when the null hypothesis (same law) is not rejected.
    pub verdict: bool,
}

/// Minimum sample size accepted by [`ks_two_sample`].
pub const KS_MIN_SAMPLE: usize = 50;

/// Asymptotic Kolmogorov critical coefficient `c(alpha) = sqrt(-ln(alpha/2)/2)`.
pub fn ks_critical_coefficient(alpha: f64) -> Result<f64, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    Ok((-(alpha / 2.0).ln() / 2.0).sqrt())
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic critical value
/// `c(alpha) * sqrt((n1 + n2) / (n1 n2))`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<TestReport, StatsError> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLE {
            return Err(StatsError::SampleTooSmall {
                got: s.len(),
                need: KS_MIN_SAMPLE,
            });
        }
    }
    let coefficient = ks_critical_coefficient(alpha)?;
    let statistic = ks_statistic(a, b);
    let (n1, n2) = (a.len(), b.len());
    let critical_value = coefficient * ((n1 + n2) as f64 / (n1 as f64 * n2 as f64)).sqrt();
    Ok(TestReport {
        statistic,
        critical_value,
        alpha,
        n1,
        n2,
        verdict: statistic < critical_value,
    })
}

/// Sup-distance between the empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // Advance past every copy of the smaller value so ties move together.
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    d
}

/// A histogram density on a uniform grid over `[lo, hi]`.
///
/// `density[k]` is probability per unit length in cell `k`; the total mass
/// `sum(density) * cell_width` is at most one (samples outside the window are
/// counted in `sample_count` but not binned).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub density: Vec<f64>,
    pub sample_count: usize,
}

impl Histogram {
    pub fn empty(lo: f64, hi: f64, bins: usize) -> Result<Self, StatsError> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(StatsError::InvalidWindow { lo, hi, bins });
        }
        Ok(Self {
            lo,
            hi,
            density: vec![0.0; bins],
            sample_count: 0,
        })
    }

    /// Bins equally weighted samples. The right endpoint `hi` belongs to the
    /// last cell.
    pub fn from_samples<I>(lo: f64, hi: f64, bins: usize, samples: I) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = f64>,
    {
        let mut h = Self::empty(lo, hi, bins)?;
        let mut counts = vec![0u64; bins];
        let mut total = 0usize;
        for x in samples {
            total += 1;
            if let Some(k) = h.cell_of(x) {
                counts[k] += 1;
            }
        }
        h.sample_count = total;
        if total > 0 {
            let scale = 1.0 / (total as f64 * h.cell_width());
            for (d, c) in h.density.iter_mut().zip(&counts) {
                *d = *c as f64 * scale;
            }
        }
        Ok(h)
    }

    /// Bins weighted observations; weights are normalized by `total_weight`
    /// (pass the sum of all weights, including any mass outside the window).
    pub fn from_weighted<I>(
        lo: f64,
        hi: f64,
        bins: usize,
        total_weight: f64,
        observations: I,
    ) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut h = Self::empty(lo, hi, bins)?;
        let mut count = 0usize;
        let mut acc = vec![0.0; bins];
        for (x, w) in observations {
            count += 1;
            if let Some(k) = h.cell_of(x) {
                acc[k] += w;
            }
        }
        h.sample_count = count;
        if total_weight > 0.0 {
            let scale = 1.0 / (total_weight * h.cell_width());
            for (d, a) in h.density.iter_mut().zip(&acc) {
                *d = a * scale;
            }
        }
        Ok(h)
    }

    /// Exact cell averages of a density given through its CDF.
    pub fn from_cdf<F: Fn(f64) -> f64>(
        lo: f64,
        hi: f64,
        bins: usize,
        cdf: F,
    ) -> Result<Self, StatsError> {
        let mut h = Self::empty(lo, hi, bins)?;
        let w = h.cell_width();
        for k in 0..bins {
            let a = lo + k as f64 * w;
            let b = lo + (k + 1) as f64 * w;
            h.density[k] = (cdf(b) - cdf(a)) / w;
        }
        Ok(h)
    }

    /// Cell-midpoint evaluation of a density function.
    pub fn from_density_fn<F: Fn(f64) -> f64>(
        lo: f64,
        hi: f64,
        bins: usize,
        f: F,
    ) -> Result<Self, StatsError> {
        let mut h = Self::empty(lo, hi, bins)?;
        for k in 0..bins {
            h.density[k] = f(h.cell_center(k));
        }
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.density.len() as f64
    }

    pub fn cell_center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.cell_width()
    }

    /// Index of the cell containing `x`, if inside the window.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let k = ((x - self.lo) / self.cell_width()).floor() as usize;
        Some(k.min(self.density.len() - 1))
    }

    /// Total mass inside the window.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_width()
    }

    fn same_grid(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.bins() == other.bins()
    }
}

/// `sum |p - q| * cell_width`, in `[0, 2]` for sub-probability histograms.
pub fn l1_histogram_distance(p: &Histogram, q: &Histogram) -> Result<f64, StatsError> {
    if !p.same_grid(q) {
        return Err(StatsError::GridMismatch {
            lo_a: p.lo,
            hi_a: p.hi,
            n_a: p.bins(),
            lo_b: q.lo,
            hi_b: q.hi,
            n_b: q.bins(),
        });
    }
    Ok(p.density
        .iter()
        .zip(&q.density)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * p.cell_width())
}

/// Biased autocorrelation estimates `rho(0..=max_lag)` with `rho(0) = 1`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>, StatsError> {
    let need = (10 * max_lag).max(2);
    if series.len() < need {
        return Err(StatsError::SampleTooSmall {
            got: series.len(),
            need,
        });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    if c0 <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|k| {
            centered
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / c0
        })
        .collect())
}

/// Sample mean, unbiased variance and the standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
    pub standard_error: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                variance: f64::NAN,
                standard_error: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Summary {
            mean,
            variance,
            standard_error: (variance / n as f64).sqrt(),
            n,
        }
    }

    /// Standard error of the sample variance for (near-)Gaussian data.
    pub fn variance_standard_error(&self) -> f64 {
        self.variance * (2.0 / (self.n as f64 - 1.0)).sqrt()
    }
}
