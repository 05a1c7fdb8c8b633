//! Plants, sampling schedules and horizon arithmetic.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{check_len, check_shape, check_square};
use crate::{Error, Result};

/// Discrete time index.
pub type Time = u64;

/// Transition and output maps of a plant `x⁺ = f(x,u,w)`, `y = h(x,u,w)`.
///
/// Implementors may provide closed-form partial derivatives; otherwise
/// [`NonlinearSystem`] falls back to central finite differences.
pub trait Dynamics: Send + Sync {
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;

    /// `(∂f/∂x, ∂f/∂w)` at the given point, if known analytically.
    fn transition_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        None
    }

    /// `(∂h/∂x, ∂h/∂w)` at the given point, if known analytically.
    fn output_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        None
    }
}

/// Per-coordinate box `lower ≤ v ≤ upper`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    #[serde(with = "crate::linalg::vector")]
    pub lower: DVector<f64>,
    #[serde(with = "crate::linalg::vector")]
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dimension("box bounds", lower.len(), upper.len()));
        }
        for i in 0..lower.len() {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] {
                return Err(Error::InvalidInput(format!(
                    "box bound {i}: lower {} exceeds upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    /// Symmetric box `[-b, b]`.
    pub fn symmetric(bound: &DVector<f64>) -> Result<Self> {
        Self::new(-bound, bound.clone())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| *v == f64::NEG_INFINITY) && self.upper.iter().all(|v| *v == f64::INFINITY)
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.len() == self.dim() && v.iter().enumerate().all(|(i, x)| *x >= self.lower[i] && *x <= self.upper[i])
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| v[i].clamp(self.lower[i], self.upper[i]))
    }
}

/// A plant in the general form `x⁺ = f(x,u,w)`, `y = h(x,u,w)`.
///
/// `U` is unconstrained; `X`, `W` and `Y` are boxes.
#[derive(Clone)]
pub struct NonlinearSystem {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub p: usize,
    pub state_bounds: BoxBounds,
    pub disturbance_bounds: BoxBounds,
    pub output_bounds: BoxBounds,
    dynamics: Arc<dyn Dynamics>,
}

impl fmt::Debug for NonlinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("q", &self.q)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl NonlinearSystem {
    pub fn new(n: usize, m: usize, q: usize, p: usize, dynamics: Arc<dyn Dynamics>) -> Self {
        Self {
            n,
            m,
            q,
            p,
            state_bounds: BoxBounds::unbounded(n),
            disturbance_bounds: BoxBounds::unbounded(q),
            output_bounds: BoxBounds::unbounded(p),
            dynamics,
        }
    }

    pub fn with_state_bounds(mut self, b: BoxBounds) -> Result<Self> {
        if b.dim() != self.n {
            return Err(Error::dimension("state bounds", self.n, b.dim()));
        }
        self.state_bounds = b;
        Ok(self)
    }

    pub fn with_disturbance_bounds(mut self, b: BoxBounds) -> Result<Self> {
        if b.dim() != self.q {
            return Err(Error::dimension("disturbance bounds", self.q, b.dim()));
        }
        self.disturbance_bounds = b;
        Ok(self)
    }

    pub fn with_output_bounds(mut self, b: BoxBounds) -> Result<Self> {
        if b.dim() != self.p {
            return Err(Error::dimension("output bounds", self.p, b.dim()));
        }
        self.output_bounds = b;
        Ok(self)
    }

    fn check_args(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
        check_len(x, self.n, "state")?;
        check_len(u, self.m, "input")?;
        check_len(w, self.q, "disturbance")
    }

    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_args(x, u, w)?;
        let next = self.dynamics.transition(x, u, w)?;
        check_len(&next, self.n, "transition result")?;
        Ok(next)
    }

    pub fn h(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_args(x, u, w)?;
        let y = self.dynamics.output(x, u, w)?;
        check_len(&y, self.p, "output result")?;
        Ok(y)
    }

    /// `(∂f/∂x, ∂f/∂w)`, analytic when available.
    pub fn f_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match self.dynamics.transition_jacobians(x, u, w) {
            Some(j) => j,
            None => self.f_jacobians_fd(x, u, w),
        }
    }

    /// `(∂h/∂x, ∂h/∂w)`, analytic when available.
    pub fn h_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match self.dynamics.output_jacobians(x, u, w) {
            Some(j) => j,
            None => self.h_jacobians_fd(x, u, w),
        }
    }

    pub fn f_jacobians_fd(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            central_difference(x, self.n, |xp| self.f(xp, u, w))?,
            central_difference(w, self.n, |wp| self.f(x, u, wp))?,
        ))
    }

    pub fn h_jacobians_fd(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            central_difference(x, self.p, |xp| self.h(xp, u, w))?,
            central_difference(w, self.p, |wp| self.h(x, u, wp))?,
        ))
    }
}

/// Central differences with step `√ε·(1+|z_i|)`.
pub(crate) fn central_difference<F>(z: &DVector<f64>, out_dim: usize, mut eval: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut jac = DMatrix::zeros(out_dim, z.len());
    let mut probe = z.clone();
    for i in 0..z.len() {
        let step = sqrt_eps * (1.0 + z[i].abs());
        probe[i] = z[i] + step;
        let plus = eval(&probe)?;
        probe[i] = z[i] - step;
        let minus = eval(&probe)?;
        probe[i] = z[i];
        // actual spacing after rounding
        let width = (z[i] + step) - (z[i] - step);
        jac.set_column(i, &((plus - minus) / width));
    }
    Ok(jac)
}

/// `x⁺ = Ax + Bu + w`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearSystemSpec", into = "LinearSystemSpec")]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Unchecked JSON form; shapes are validated on conversion.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearSystemSpec {
    #[serde(with = "crate::linalg::rows")]
    a: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    b: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    c: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    d: DMatrix<f64>,
}

impl TryFrom<LinearSystemSpec> for LinearSystem {
    type Error = Error;

    fn try_from(s: LinearSystemSpec) -> Result<Self> {
        LinearSystem::new(s.a, s.b, s.c, s.d)
    }
}

impl From<LinearSystem> for LinearSystemSpec {
    fn from(s: LinearSystem) -> Self {
        LinearSystemSpec { a: s.a, b: s.b, c: s.c, d: s.d }
    }
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        check_square(&a, "A")?;
        let n = a.nrows();
        if b.nrows() != n {
            return Err(Error::dimension("B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dimension("C columns", n, c.ncols()));
        }
        check_shape(&d, c.nrows(), b.ncols(), "D")?;
        Ok(Self { a, b, c, d })
    }

    /// System without inputs (`m = 0`).
    pub fn autonomous(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let p = c.nrows();
        Self::new(a, DMatrix::zeros(n, 0), c, DMatrix::zeros(p, 0))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

impl Dynamics for LinearSystem {
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u + w)
    }

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>, _w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.c * x + &self.d * u)
    }

    fn transition_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        Some(Ok((self.a.clone(), DMatrix::identity(self.n(), self.n()))))
    }

    fn output_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        Some(Ok((self.c.clone(), DMatrix::zeros(self.p(), self.n()))))
    }
}

/// Views a linear plant as a general one with additive state disturbance
/// (`q = n`) and no output noise channel.
pub fn linear_as_nonlinear(sys: &LinearSystem) -> NonlinearSystem {
    NonlinearSystem::new(sys.n(), sys.m(), sys.n(), sys.p(), Arc::new(sys.clone()))
}

/// Cyclically repeated gap pattern `d_1, d_2, …` with every gap ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct GapSequence {
    pattern: Vec<u64>,
}

impl TryFrom<Vec<u64>> for GapSequence {
    type Error = Error;

    fn try_from(pattern: Vec<u64>) -> Result<Self> {
        Self::new(pattern)
    }
}

impl From<GapSequence> for Vec<u64> {
    fn from(g: GapSequence) -> Self {
        g.pattern
    }
}

impl GapSequence {
    pub fn new(pattern: Vec<u64>) -> Result<Self> {
        if pattern.is_empty() {
            return Err(Error::InvalidInput("gap pattern must be nonempty".into()));
        }
        if pattern.contains(&0) {
            return Err(Error::InvalidInput("gaps must be at least 1".into()));
        }
        Ok(Self { pattern })
    }

    pub fn pattern(&self) -> &[u64] {
        &self.pattern
    }

    pub fn d_max(&self) -> u64 {
        *self.pattern.iter().max().expect("nonempty pattern")
    }

    /// Sum of one pattern cycle; the sampling set repeats with this period.
    pub fn period(&self) -> u64 {
        self.pattern.iter().sum()
    }

    /// Average gap over one cycle.
    pub fn mean_gap(&self) -> f64 {
        self.period() as f64 / self.pattern.len() as f64
    }

    /// `d_k` for 1-based `k`.
    pub fn gap(&self, k: u64) -> u64 {
        debug_assert!(k >= 1);
        self.pattern[((k - 1) % self.pattern.len() as u64) as usize]
    }

    /// Lazily enumerates `K_i = {t_1^i, t_2^i, …}`.
    pub fn times(&self, i: u64) -> impl Iterator<Item = Time> + '_ {
        let mut t = 0;
        let mut k = i;
        std::iter::from_fn(move || {
            t += self.gap(k);
            k += 1;
            Some(t)
        })
    }
}

/// First `count` elements of `K_i`: `t_1^i = d_i`, `t_j^i = t_{j-1}^i + d_{i+j-1}`.
pub fn k_set_times(gaps: &GapSequence, i: u64, count: usize) -> Result<Vec<Time>> {
    if i == 0 {
        return Err(Error::InvalidInput("sampling offset i must be at least 1".into()));
    }
    Ok(gaps.times(i).take(count).collect())
}

/// Where a schedule's times came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    Generated { pattern: Vec<u64>, offset: u64 },
    Explicit,
}

/// Strictly increasing measurement times `K_s` over a finite horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    times: Vec<Time>,
    source: ScheduleSource,
}

impl SamplingSchedule {
    pub fn explicit(times: Vec<Time>) -> Result<Self> {
        if let Some(w) = times.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "schedule times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self {
            times,
            source: ScheduleSource::Explicit,
        })
    }

    /// All times of `K_i` not exceeding `until`.
    pub fn from_gaps(gaps: &GapSequence, i: u64, until: Time) -> Result<Self> {
        if i == 0 {
            return Err(Error::InvalidInput("sampling offset i must be at least 1".into()));
        }
        Ok(Self {
            times: gaps.times(i).take_while(|t| *t <= until).collect(),
            source: ScheduleSource::Generated {
                pattern: gaps.pattern().to_vec(),
                offset: i,
            },
        })
    }

    pub fn empty() -> Self {
        Self {
            times: Vec::new(),
            source: ScheduleSource::Explicit,
        }
    }

    pub fn times(&self) -> &[Time] {
        &self.times
    }

    pub fn source(&self) -> &ScheduleSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn contains(&self, t: Time) -> bool {
        self.times.binary_search(&t).is_ok()
    }

    /// Latest measurement time strictly before `t`.
    pub fn last_before(&self, t: Time) -> Option<Time> {
        let idx = self.times.partition_point(|s| *s < t);
        idx.checked_sub(1).map(|i| self.times[i])
    }

    /// Times within the closed interval `[from, to]`.
    pub fn within(&self, from: Time, to: Time) -> &[Time] {
        let lo = self.times.partition_point(|s| *s < from);
        let hi = self.times.partition_point(|s| *s <= to);
        &self.times[lo..hi.max(lo)]
    }

    /// Appends a time later than every existing one.
    pub(crate) fn push(&mut self, t: Time) -> Result<()> {
        if let Some(last) = self.times.last() {
            if t <= *last {
                return Err(Error::InvalidInput(format!(
                    "measurement time {t} does not follow previous time {last}"
                )));
            }
        }
        self.times.push(t);
        self.source = ScheduleSource::Explicit;
        Ok(())
    }

    /// Reads a one-column CSV with header `t`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "t" {
            return Err(Error::InvalidInput(format!(
                "schedule CSV must have a single column `t`, found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut times = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let t = rec[0]
                .parse::<Time>()
                .map_err(|e| Error::InvalidInput(format!("schedule CSV row {}: {e}", row + 1)))?;
            times.push(t);
        }
        Self::explicit(times)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t"])?;
        for t in &self.times {
            wtr.write_record([t.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Steps since the last available measurement:
/// `δ_t = t − 1 − max({0} ∪ {j ∈ K_s : j < t})`, with `δ_0 = 0`.
pub fn delta(t: Time, schedule: &SamplingSchedule) -> Time {
    if t == 0 {
        return 0;
    }
    let last = schedule.last_before(t).unwrap_or(0);
    t - 1 - last
}

/// Time-varying horizon `M_t = min{t, M + δ_t}`.
pub fn horizon(t: Time, base: Time, schedule: &SamplingSchedule) -> Time {
    t.min(base + delta(t, schedule))
}
