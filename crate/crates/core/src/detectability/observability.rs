use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{check_square, mat_pow};
use crate::model::{GapSequence, Time};
use crate::{Error, Result};

/// Default multiplier on `max(rows, cols)·max(σ_max, 1)·2⁻⁵²` below which singular
/// values count as zero.
pub const DEFAULT_RANK_FACTOR: f64 = 1e4;

/// Strictly increasing sample instants `τ_1 < … < τ_k`, `k ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTimes(Vec<Time>);

impl SampleTimes {
    pub fn new(taus: Vec<Time>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::InvalidInput("at least one sample time is required".into()));
        }
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("sample times must be strictly increasing".into()));
        }
        Ok(Self(taus))
    }

    pub fn as_slice(&self) -> &[Time] {
        &self.0
    }
}

fn check_pair(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    check_square(a, "A")?;
    if c.ncols() != a.nrows() {
        return Err(Error::dimension("C columns", a.nrows(), c.ncols()));
    }
    Ok(())
}

/// Stack of `C·A^{τ_i}` over the sample instants.
pub fn sampled_obs_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, taus: &SampleTimes) -> Result<DMatrix<f64>> {
    check_pair(a, c)?;
    let (p, n) = (c.nrows(), a.nrows());
    let taus = taus.as_slice();
    let mut out = DMatrix::zeros(p * taus.len(), n);
    // powers are built incrementally from the previous sample by squaring
    let mut power = DMatrix::identity(n, n);
    let mut last = 0;
    for (i, &tau) in taus.iter().enumerate() {
        power = mat_pow(a, tau - last) * power;
        last = tau;
        out.view_mut((i * p, 0), (p, n)).copy_from(&(c * &power));
    }
    Ok(out)
}

/// Number of singular values above `factor·max(rows, cols)·max(σ_max, 1)·2⁻⁵²`.
pub fn numerical_rank(m: &DMatrix<f64>, factor: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax <= 0.0 || !smax.is_finite() {
        return 0;
    }
    // floored at 1 so rounding noise in an exactly-zero matrix is not rank
    let tol = factor * m.nrows().max(m.ncols()) as f64 * smax.max(1.0) * f64::EPSILON;
    sv.iter().filter(|s| **s > tol).count()
}

/// Full column rank of the sampled observability matrix.
pub fn is_sample_observable(a: &DMatrix<f64>, c: &DMatrix<f64>, taus: &SampleTimes, rank_factor: f64) -> Result<bool> {
    let n = a.nrows();
    if n == 0 {
        check_pair(a, c)?;
        return Ok(true);
    }
    Ok(numerical_rank(&sampled_obs_matrix(a, c, taus)?, rank_factor) == n)
}

/// Exponents `j − (t−T−1)` for `j ∈ K_1 ∩ [t−T−1, t−1]`.
pub fn window_sample_times(gaps: &GapSequence, window: u64, t: Time) -> Vec<Time> {
    let lo = t - window - 1;
    gaps.times(1)
        .skip_while(|j| *j < lo)
        .take_while(|j| *j < t)
        .map(|j| j - lo)
        .collect()
}

/// Whether every window `[t−T−1, t−1]`, `t > T`, of `K_1` yields a full
/// column rank sampled observability matrix.
///
/// `K_1` repeats with period `S = Σ pattern`; windows for `t ≥ T+2` are
/// exact shifts of those `S` steps earlier, and the window at `t = T+1+S`
/// contains a shifted copy of the one at `t = T+1`. Checking
/// `t ∈ (T, T+S]` therefore covers all `t > T`.
pub fn rolling_window_check(a: &DMatrix<f64>, c: &DMatrix<f64>, gaps: &GapSequence, window: u64, rank_factor: f64) -> Result<bool> {
    check_pair(a, c)?;
    if window < gaps.d_max() {
        return Err(Error::InvalidInput(format!(
            "window length T = {window} is shorter than the largest gap {}",
            gaps.d_max()
        )));
    }
    if a.nrows() == 0 {
        return Ok(true);
    }
    for t in window + 1..=window + gaps.period() {
        let taus = window_sample_times(gaps, window, t);
        if taus.is_empty() {
            return Ok(false);
        }
        if !is_sample_observable(a, c, &SampleTimes::new(taus)?, rank_factor)? {
            return Ok(false);
        }
    }
    Ok(true)
}
