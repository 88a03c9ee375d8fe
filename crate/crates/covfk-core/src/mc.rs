//! Monte Carlo driver: per-path samples reduced in fixed blocks so that
//! results are bit-identical for any worker count.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::RngConfig;

/// Paths per reduction block.
pub const BLOCK_SIZE: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub bridge_delta: Option<f64>,
    /// Caps parallelism; never changes results.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl McConfig {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_paths,
            dt,
            seed,
            bridge_delta: None,
            workers: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.bridge_delta = Some(delta);
        self
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_paths(mut self, n_paths: usize) -> Self {
        self.n_paths = n_paths;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return domain("n_paths must be at least 1");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return domain(format!("dt must be positive, got {}", self.dt));
        }
        if let Some(d) = self.bridge_delta {
            if !(d.is_finite() && d > 0.0) {
                return domain(format!("bridge delta must be positive, got {d}"));
            }
        }
        if self.workers == Some(0) {
            return domain("workers must be at least 1");
        }
        Ok(())
    }

    /// Streams for the paths of one estimator; `family` separates
    /// independent estimators sharing a seed (e.g. quadrature nodes).
    pub fn streams(&self, family: u64) -> StreamFamily {
        StreamFamily {
            key: RngConfig::new(self.seed, family).child(0).seed,
        }
    }
}

/// Children of one parent stream; `get(i)` equals `parent.child(i)`.
#[derive(Clone, Copy, Debug)]
pub struct StreamFamily {
    key: u64,
}

impl StreamFamily {
    #[inline]
    pub fn get(&self, path: usize) -> RngConfig {
        RngConfig::new(self.key, path as u64)
    }
}

/// Monte Carlo result with per-entry standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub mean: Vec<Complex64>,
    /// `sqrt(var(Re) + var(Im)) / sqrt(n_paths)` per entry.
    pub stderr: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl Estimate {
    pub fn scalar(&self) -> Complex64 {
        self.mean[0]
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.mean[i * self.cols + j]
    }

    pub fn entry_stderr(&self, i: usize, j: usize) -> f64 {
        self.stderr[i * self.cols + j]
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().cloned().fold(0.0, f64::max)
    }

    /// Largest `|mean - target|` over entries.
    pub fn max_error(&self, target: &[Complex64]) -> f64 {
        self.mean
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Every entry within `k · stderr + slack` of `target`.
    pub fn agrees(&self, target: &[Complex64], k: f64, slack: f64) -> bool {
        self.mean.len() == target.len()
            && self
                .mean
                .iter()
                .zip(target)
                .zip(&self.stderr)
                .all(|((a, b), s)| (a - b).norm() <= k * s + slack)
    }

    pub fn without_timing(mut self) -> Self {
        self.wall_time_s = None;
        self
    }
}

/// Shifted first and second moments of a block of samples. Entry `width-1`
/// doubles as the weight column for ratio estimators.
#[derive(Clone, Debug)]
struct Block {
    n: usize,
    sum: Vec<Complex64>,
    sq_re: Vec<f64>,
    sq_im: Vec<f64>,
    /// `Σ (y_j - s_j)(w - s_w)` against the last column.
    cross: Vec<Complex64>,
}

impl Block {
    fn new(width: usize) -> Self {
        Self {
            n: 0,
            sum: vec![Complex64::new(0.0, 0.0); width],
            sq_re: vec![0.0; width],
            sq_im: vec![0.0; width],
            cross: vec![Complex64::new(0.0, 0.0); width],
        }
    }

    #[inline]
    fn push(&mut self, sample: &[Complex64], shift: &[Complex64]) {
        let last = sample.len() - 1;
        let w = (sample[last] - shift[last]).re;
        for j in 0..sample.len() {
            let d = sample[j] - shift[j];
            self.sum[j] += d;
            self.sq_re[j] += d.re * d.re;
            self.sq_im[j] += d.im * d.im;
            self.cross[j] += d * w;
        }
        self.n += 1;
    }

    fn merge(&mut self, other: &Block) {
        self.n += other.n;
        for j in 0..self.sum.len() {
            self.sum[j] += other.sum[j];
            self.sq_re[j] += other.sq_re[j];
            self.sq_im[j] += other.sq_im[j];
            self.cross[j] += other.cross[j];
        }
    }
}

/// Reduced moments of `n` samples of width `width`.
#[derive(Clone, Debug)]
pub struct Moments {
    n: usize,
    shift: Vec<Complex64>,
    total: Block,
}

impl Moments {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }

    pub fn mean(&self, j: usize) -> Complex64 {
        self.shift[j] + self.total.sum[j] / self.n as f64
    }

    /// `var(Re) + var(Im)` of column `j` (unbiased).
    pub fn variance(&self, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let s = self.total.sum[j];
        let vr = (self.total.sq_re[j] - s.re * s.re / n).max(0.0);
        let vi = (self.total.sq_im[j] - s.im * s.im / n).max(0.0);
        (vr + vi) / (n - 1.0)
    }

    /// Covariance of column `j` with the real last column.
    pub fn covariance_with_last(&self, j: usize) -> Complex64 {
        if self.n < 2 {
            return Complex64::new(0.0, 0.0);
        }
        let n = self.n as f64;
        let last = self.width() - 1;
        (self.total.cross[j] - self.total.sum[j] * self.total.sum[last].re / n) / (n - 1.0)
    }

    pub fn stderr(&self, j: usize) -> f64 {
        (self.variance(j) / self.n as f64).sqrt()
    }

    /// Plain estimate over the first `rows * cols` columns.
    pub fn estimate(&self, rows: usize, cols: usize, mc: &McConfig) -> Estimate {
        let k = rows * cols;
        Estimate {
            rows,
            cols,
            mean: (0..k).map(|j| self.mean(j)).collect(),
            stderr: (0..k).map(|j| self.stderr(j)).collect(),
            n_paths: self.n,
            dt: mc.dt,
            seed: mc.seed,
            wall_time_s: None,
        }
    }

    /// Self-normalized `scale · mean(y_j) / mean(w)` with delta-method errors,
    /// where `w` is the last column and `y_j = F_j w` the others.
    pub fn ratio_estimate(
        &self,
        rows: usize,
        cols: usize,
        scale: f64,
        mc: &McConfig,
    ) -> Result<Estimate> {
        let last = self.width() - 1;
        let wbar = self.mean(last).re;
        if !(wbar > 0.0) {
            return Err(Error::Domain("bridge weights average to zero".into()));
        }
        let k = rows * cols;
        let mut mean = Vec::with_capacity(k);
        let mut stderr = Vec::with_capacity(k);
        let vw = self.variance(last);
        for j in 0..k {
            let r = self.mean(j) / wbar;
            let v = self.variance(j) + r.norm_sqr() * vw
                - 2.0 * (r.conj() * self.covariance_with_last(j)).re;
            mean.push(r * scale);
            stderr.push(scale.abs() * (v.max(0.0) / self.n as f64).sqrt() / wbar);
        }
        Ok(Estimate {
            rows,
            cols,
            mean,
            stderr,
            n_paths: self.n,
            dt: mc.dt,
            seed: mc.seed,
            wall_time_s: None,
        })
    }
}

/// Evaluate `sample(i, out)` for every path `i < n` and reduce.
///
/// Samples are reduced sequentially within blocks of `BLOCK_SIZE` paths and
/// blocks are combined in index order, so the result does not depend on
/// `workers`.
pub fn run_paths<F>(n: usize, width: usize, workers: Option<usize>, sample: F) -> Result<Moments>
where
    F: Fn(usize, &mut [Complex64]) -> Result<()> + Sync,
{
    if n == 0 || width == 0 {
        return domain("run_paths needs at least one path and one column");
    }
    let mut shift = vec![Complex64::new(0.0, 0.0); width];
    sample(0, &mut shift)?;
    check_finite(0, &shift)?;
    let n_blocks = n.div_ceil(BLOCK_SIZE);
    let run_block = |b: usize| -> Result<Block> {
        let mut block = Block::new(width);
        let mut buf = vec![Complex64::new(0.0, 0.0); width];
        for i in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n) {
            sample(i, &mut buf)?;
            check_finite(i, &buf)?;
            block.push(&buf, &shift);
        }
        Ok(block)
    };
    let blocks = map_blocks(n_blocks, workers, run_block)?;
    let mut total = Block::new(width);
    for b in blocks {
        total.merge(&b?);
    }
    Ok(Moments { n, shift, total })
}

fn check_finite(path: usize, v: &[Complex64]) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { path })
    }
}

/// `f(i)` for `i < n`, collected in index order.
pub fn map_blocks<T, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers == Some(1) || n == 1 {
            return Ok((0..n).map(f).collect());
        }
        match workers {
            None => Ok((0..n).into_par_iter().map(&f).collect()),
            Some(k) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
                Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok((0..n).map(f).collect())
    }
}

/// Run `body` and return its value with elapsed seconds.
pub fn timed<T>(body: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = body()?;
    Ok((v, start.elapsed().as_secs_f64()))
}
