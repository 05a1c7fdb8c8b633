//! Reference implementations used only by tests.
#![allow(dead_code)]

use std::sync::Arc;

use horizon_est::mhe::{solve, EstimatorConfig, EstimatorState, Measurement, MheProblem};
use horizon_est::model::{delta, linear_as_nonlinear};
use horizon_est::sim::{build_thyroid, Medication, ThyroidParams};
use horizon_est::{Dynamics, GapSequence, LinearSystem, NonlinearSystem, Result, SamplingSchedule};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact rank by fraction-free Gaussian elimination (Bareiss).
pub fn exact_rank(mut m: Vec<Vec<BigInt>>) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut prev = BigInt::from(1);
    for col in 0..cols {
        let Some(pivot) = (rank..rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(rank, pivot);
        for r in rank + 1..rows {
            for c in col + 1..cols {
                let v = &m[rank][col] * &m[r][c] - &m[r][col] * &m[rank][c];
                m[r][c] = v / &prev;
            }
            m[r][col] = BigInt::zero();
        }
        prev = m[rank][col].clone();
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

fn mul(a: &[Vec<BigInt>], b: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..k).fold(BigInt::zero(), |acc, l| acc + &a[i][l] * &b[l][j]))
                .collect()
        })
        .collect()
}

pub fn to_big(m: &[Vec<i64>]) -> Vec<Vec<BigInt>> {
    m.iter().map(|r| r.iter().map(|v| BigInt::from(*v)).collect()).collect()
}

/// Exact rank of the stack of `C·A^τ` over integer matrices.
pub fn exact_sampled_rank(a: &[Vec<i64>], c: &[Vec<i64>], taus: &[u64]) -> usize {
    let n = a.len();
    let a_big = to_big(a);
    let mut power: Vec<Vec<BigInt>> = (0..n)
        .map(|i| (0..n).map(|j| BigInt::from(i64::from(i == j))).collect())
        .collect();
    let mut last = 0;
    let mut stacked = Vec::new();
    let c_big = to_big(c);
    for &tau in taus {
        for _ in last..tau {
            power = mul(&power, &a_big);
        }
        last = tau;
        stacked.extend(mul(&c_big, &power));
    }
    exact_rank(stacked)
}

pub fn to_f64(m: &[Vec<i64>]) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j] as f64)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let b = random_matrix(rng, n, n, 1.0);
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

/// Window data for a linear least-squares oracle.
pub struct LinearWindow {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub eta: f64,
    pub p2: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub prior: DVector<f64>,
    pub inputs: Vec<DVector<f64>>,
    /// `(k, y)` with `k` the offset into the window.
    pub measurements: Vec<(usize, DVector<f64>)>,
}

/// Minimizer of the window cost for `x⁺ = Ax + Bu + w`, `y = Cx + Du`,
/// posed as one stacked weighted least-squares problem over
/// `z = (x_s, w_0..w_{L−1})` and solved by Householder QR.
pub fn linear_oracle(win: &LinearWindow) -> (DVector<f64>, Vec<DVector<f64>>) {
    let n = win.a.nrows();
    let len = win.inputs.len();
    let dim = n * (len + 1);
    // x_k = S_k z + s_k
    let mut maps = Vec::with_capacity(len + 1);
    let mut s_mat = DMatrix::zeros(n, dim);
    s_mat.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut s_off = DVector::zeros(n);
    maps.push((s_mat.clone(), s_off.clone()));
    for k in 0..len {
        let mut next = &win.a * &s_mat;
        let mut e = DMatrix::zeros(n, dim);
        e.view_mut((0, n * (k + 1)), (n, n)).fill_with_identity();
        next += e;
        s_off = &win.a * &s_off + &win.b * &win.inputs[k];
        s_mat = next;
        maps.push((s_mat.clone(), s_off.clone()));
    }
    let root = |w: &DMatrix<f64>| w.clone().cholesky().expect("SPD weight").l().transpose();
    let disc = |k: usize| win.eta.powi((len - k - 1) as i32);
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();

    let lp = root(&win.p2) * (2.0 * win.eta.powi(len as i32)).sqrt();
    rows.push((&lp * &maps[0].0, &lp * &win.prior));
    let lq = root(&win.q);
    for k in 0..len {
        let mut sel = DMatrix::zeros(n, dim);
        sel.view_mut((0, n * (k + 1)), (n, n)).fill_with_identity();
        let f = &lq * (2.0 * disc(k)).sqrt();
        rows.push((&f * sel, DVector::zeros(n)));
    }
    let lr = root(&win.r);
    for (k, y) in &win.measurements {
        let (sm, so) = &maps[*k];
        let f = &lr * disc(*k).sqrt();
        let target = y - &win.c * so - &win.d * &win.inputs[*k];
        rows.push((&f * &win.c * sm, &f * target));
    }
    let total: usize = rows.iter().map(|r| r.0.nrows()).sum();
    let mut design = DMatrix::zeros(total, dim);
    let mut rhs = DVector::zeros(total);
    let mut at = 0;
    for (m, v) in rows {
        design.view_mut((at, 0), (m.nrows(), dim)).copy_from(&m);
        rhs.rows_mut(at, v.len()).copy_from(&v);
        at += m.nrows();
    }
    let qr = design.qr();
    let qtb = qr.q().transpose() * rhs;
    let z = qr.r().solve_upper_triangular(&qtb).expect("full column rank");
    let x_s = z.rows(0, n).into_owned();
    let w = (0..len).map(|k| z.rows(n * (k + 1), n).into_owned()).collect();
    (x_s, w)
}

/// Scalar `x⁺ = a x + w`, `y = x` with `a = 0.5`, and an i-IOSS
/// certificate `(P1, P2, Q, R, η) = (0.5, 1, 1, 1, 0.5)`.
///
/// With `(1+ε)a² = η` (ε = 1): `Δx_{t+1}² ≤ η Δx_t² + 2 Δw_t²`, so
/// `0.5 Δx_t² ≤ η^t Δx_0² + Σ η^{t−j−1} Δw_j²` without any output term.
pub const SCALAR_A: f64 = 0.5;
pub const SCALAR_CERT: (f64, f64, f64, f64, f64) = (0.5, 1.0, 1.0, 1.0, 0.5);

/// Checks the certificate inequality exhaustively on a grid of initial
/// differences and disturbance-difference sequences up to `steps`.
pub fn verify_scalar_certificate(steps: usize) -> bool {
    let (p1, p2, q, _r, eta) = SCALAR_CERT;
    let levels = [-1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0];
    let x_levels = [-2.0, -1.0, -0.3, 0.0, 0.3, 1.0, 2.0];
    let total = levels.len().pow(steps as u32);
    for &dx0 in &x_levels {
        for code in 0..total {
            let mut c = code;
            let dw: Vec<f64> = (0..steps)
                .map(|_| {
                    let v = levels[c % levels.len()];
                    c /= levels.len();
                    v
                })
                .collect();
            let mut dx = dx0;
            for t in 1..=steps {
                dx = SCALAR_A * dx + dw[t - 1];
                let lhs = p1 * dx * dx;
                let rhs = p2 * dx0 * dx0 * eta.powi(t as i32)
                    + (0..t).map(|j| eta.powi((t - j - 1) as i32) * q * dw[j] * dw[j]).sum::<f64>();
                if lhs > rhs * (1.0 + 1e-12) + 1e-15 {
                    return false;
                }
            }
        }
    }
    true
}

/// Least-squares fit of `ln e_t = ln C + t ln λ`; returns `(C, λ, R²)`.
pub fn fit_exponential(errors: &[f64]) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 0.0)
        .map(|(t, e)| (t as f64, e.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - icept - slope * p.0).powi(2)).sum();
    (icept.exp(), slope.exp(), 1.0 - ss_res / ss_tot)
}

/// Random integer pair `(A, C)` and sample times. Sparse entries and signed
/// permutations make rank-deficient (aliased) cases common.
pub fn random_integer_case<R: Rng>(rng: &mut R) -> (Vec<Vec<i64>>, Vec<Vec<i64>>, Vec<u64>) {
    let n = rng.random_range(1..=4);
    let p = rng.random_range(1..=2);
    let entry = |rng: &mut R| if rng.random_bool(0.5) { 0 } else { rng.random_range(-3..=3) };
    let a: Vec<Vec<i64>> = if rng.random_bool(0.25) {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        (0..n)
            .map(|i| (0..n).map(|j| if perm[i] == j { if rng.random_bool(0.5) { 1 } else { -1 } } else { 0 }).collect())
            .collect()
    } else {
        (0..n).map(|_| (0..n).map(|_| entry(rng)).collect()).collect()
    };
    let c = (0..p).map(|_| (0..n).map(|_| entry(rng)).collect()).collect();
    let k = rng.random_range(1..=n + 1);
    let mut taus: Vec<u64> = Vec::new();
    while taus.len() < k {
        let t = rng.random_range(0..=8);
        if !taus.contains(&t) {
            taus.push(t);
        }
    }
    taus.sort_unstable();
    (a, c, taus)
}

/// Random `A` rescaled to spectral norm `rho`.
pub fn random_dynamics<R: Rng>(rng: &mut R, n: usize, rho: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    let norm2 = m.clone().svd(false, false).singular_values.max().max(1e-3);
    m * (rho / norm2)
}

/// A random unconstrained linear window with SPD weights, some of the
/// window steps measured.
pub fn random_window<R: Rng>(rng: &mut R, max_n: usize, max_len: usize) -> LinearWindow {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(0..=2);
    let p = rng.random_range(1..=2);
    let len = rng.random_range(1..=max_len);
    let rho = rng.random_range(0.5..1.05);
    let inputs = (0..len).map(|_| random_matrix(rng, m, 1, 1.0).column(0).into_owned()).collect();
    let measurements = (0..len)
        .filter(|_| rng.random_bool(0.6))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|k| (k, random_matrix(rng, p, 1, 2.0).column(0).into_owned()))
        .collect();
    LinearWindow {
        a: random_dynamics(rng, n, rho),
        b: random_matrix(rng, n, m, 1.0),
        c: random_matrix(rng, p, n, 1.0),
        d: random_matrix(rng, p, m, 1.0),
        eta: rng.random_range(0.7..0.99),
        p2: random_spd(rng, n),
        q: random_spd(rng, n),
        r: random_spd(rng, p),
        prior: random_matrix(rng, n, 1, 2.0).column(0).into_owned(),
        inputs,
        measurements,
    }
}

pub fn linear_system(win: &LinearWindow) -> LinearSystem {
    LinearSystem::new(win.a.clone(), win.b.clone(), win.c.clone(), win.d.clone()).expect("conforming window")
}

pub fn window_config(win: &LinearWindow, horizon: u64) -> EstimatorConfig {
    EstimatorConfig::new(horizon, win.eta, win.p2.clone(), win.q.clone(), win.r.clone()).expect("valid weights")
}

/// The window as a problem over `[0, L]`.
pub fn window_problem<'a>(win: &LinearWindow, sys: &'a NonlinearSystem, cfg: &'a EstimatorConfig) -> MheProblem<'a> {
    let len = win.inputs.len() as u64;
    let meas = win.measurements.iter().map(|(k, y)| Measurement::new(*k as u64, y.clone())).collect();
    MheProblem::new(sys, cfg, len, 0, win.inputs.clone(), meas, win.prior.clone()).expect("valid window")
}

/// Thyroid parameters used across the tests.
pub fn thyroid_params() -> ThyroidParams {
    ThyroidParams {
        p1: 0.065,
        p2: 1.6,
        s1: 5.0,
        s2: 5.0,
        d1: 0.02,
        d2: 0.1,
        u_set: 15.0,
        tau: 2.0,
        medication: Medication {
            start_day: 83,
            dose: 0.75,
            skipped_days: vec![130],
        },
    }
}

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Pendulum-like plant with a nonlinear output and no analytic Jacobians.
pub struct Swing;

impl Dynamics for Swing {
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(dv(&[x[0] + 0.1 * x[1] + w[0], x[1] - 0.1 * x[0].sin() + 0.05 * u[0] + w[1]]))
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(dv(&[x[0] + 0.1 * x[1] * x[1] + w[2]]))
    }
}

pub fn swing() -> NonlinearSystem {
    NonlinearSystem::new(2, 1, 3, 1, Arc::new(Swing))
}

pub struct Instance {
    pub sys: NonlinearSystem,
    pub cfg: EstimatorConfig,
    pub len: usize,
    pub inputs: Vec<DVector<f64>>,
    pub meas: Vec<Measurement>,
    pub prior: DVector<f64>,
    pub x_s: DVector<f64>,
    pub w: Vec<DVector<f64>>,
}

impl Instance {
    pub fn problem(&self) -> MheProblem<'_> {
        MheProblem::new(&self.sys, &self.cfg, self.len as u64, 0, self.inputs.clone(), self.meas.clone(), self.prior.clone())
            .unwrap()
    }
}

pub fn random_psd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    // rank-deficient half of the time
    let k = if rng.random_bool(0.5) { n.saturating_sub(1).max(1) } else { n };
    let b = random_matrix(rng, n, k, 1.0);
    &b * b.transpose()
}

/// One of: random linear window (possibly singular R), thyroid window, or
/// the swing plant.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match rng.random_range(0..3) {
        0 => {
            let win = random_window(&mut rng, 4, 20);
            let sys = linear_as_nonlinear(&linear_system(&win));
            let r = random_psd(&mut rng, win.r.nrows());
            let cfg = EstimatorConfig::new(1, win.eta, win.p2.clone(), win.q.clone(), r).unwrap();
            let n = win.a.nrows();
            let len = win.inputs.len();
            Instance {
                len,
                inputs: win.inputs.clone(),
                meas: win.measurements.iter().map(|(k, y)| Measurement::new(*k as u64, y.clone())).collect(),
                prior: win.prior.clone(),
                x_s: random_matrix(&mut rng, n, 1, 2.0).column(0).into_owned(),
                w: (0..len).map(|_| random_matrix(&mut rng, n, 1, 1.0).column(0).into_owned()).collect(),
                sys,
                cfg,
            }
        }
        kind => {
            let sys = if kind == 1 { build_thyroid(&thyroid_params()).unwrap() } else { swing() };
            let center = if kind == 1 { dv(&[5.0, 8.0]) } else { dv(&[0.3, -0.2]) };
            let len = rng.random_range(1..=30);
            let cfg = EstimatorConfig::new(1, rng.random_range(0.5..0.99), random_spd(&mut rng, 2), random_spd(&mut rng, 3), random_spd(&mut rng, 1))
                .unwrap();
            let meas = (0..len as u64)
                .filter(|_| rng.random_bool(0.4))
                .collect::<Vec<_>>()
                .into_iter()
                .map(|j| Measurement::new(j, dv(&[center[0] + rng.random_range(-0.5..0.5)])))
                .collect();
            let jitter = |rng: &mut ChaCha8Rng, s: f64| &center + random_matrix(rng, 2, 1, s).column(0);
            Instance {
                len,
                inputs: (0..len).map(|_| dv(&[rng.random_range(0.0..1.0)])).collect(),
                meas,
                prior: jitter(&mut rng, 1.0),
                x_s: jitter(&mut rng, 1.0),
                w: (0..len).map(|_| random_matrix(&mut rng, 3, 1, 0.05).column(0).into_owned()).collect(),
                sys,
                cfg,
            }
        }
    }
}

/// Runs the estimator on a random linear plant, and at every open-loop step
/// solves the full window for comparison.
pub fn fast_path_deviation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let p = rng.random_range(1..=2);
    let rho = rng.random_range(0.6..1.02);
    let a = random_dynamics(&mut rng, n, rho);
    let c = random_matrix(&mut rng, p, n, 1.0);
    let lin = LinearSystem::autonomous(a, c).unwrap();
    let sys = Arc::new(linear_as_nonlinear(&lin));
    let cfg = Arc::new(EstimatorConfig::new(rng.random_range(2..=6), rng.random_range(0.7..0.98), random_spd(&mut rng, n), random_spd(&mut rng, n), random_spd(&mut rng, p)).unwrap());
    let pattern: Vec<u64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=4)).collect();
    let gaps = GapSequence::new(pattern).unwrap();
    let steps = 40;
    let schedule = SamplingSchedule::from_gaps(&gaps, 1, steps).unwrap();
    let u = DVector::zeros(0);
    let mut x = random_matrix(&mut rng, n, 1, 1.0).column(0).into_owned();
    let mut est = EstimatorState::new(sys.clone(), cfg, DVector::zeros(n)).unwrap();
    let mut worst: f64 = 0.0;
    for t in 1..=steps {
        let y = &lin.c * &x + random_matrix(&mut rng, p, 1, 0.05).column(0);
        x = &lin.a * &x + random_matrix(&mut rng, n, 1, 0.05).column(0);
        let meas = if schedule.contains(t - 1) { vec![Measurement::new(t - 1, y)] } else { vec![] };
        est.step(&u, &meas).unwrap();
        if delta(t, est.schedule()) > 0 {
            let problem = est.problem_at(t).unwrap();
            let full = solve(&problem, None).unwrap();
            assert!(full.report.converged);
            worst = worst.max((full.terminal_state() - est.estimate()).amax());
        }
    }
    worst
}
