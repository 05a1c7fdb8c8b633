use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{BoxBounds, GapSequence, NonlinearSystem, Time};
use crate::{Error, Result};

/// Relative slack on the right-hand side, so exact equality is not flagged.
const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalsifierSettings {
    /// Shift `i` of the sampling set `K_i`.
    pub offset: u64,
    pub a_h: f64,
    pub a_w: f64,
    pub t_star: Time,
    pub horizon: Time,
    pub trials: usize,
    pub seed: u64,
}

/// A pair of trajectories violating the output-dominance inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub trial: usize,
    pub t: Time,
    pub lhs: f64,
    pub rhs: f64,
    pub x0: DVector<f64>,
    pub x0_tilde: DVector<f64>,
    pub w: Vec<DVector<f64>>,
    pub w_tilde: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub y_tilde: Vec<DVector<f64>>,
}

fn draw_in_box(rng: &mut ChaCha8Rng, b: &BoxBounds) -> DVector<f64> {
    DVector::from_iterator(
        b.dim(),
        b.lower.iter().zip(b.upper.iter()).map(|(&lo, &hi)| {
            // infinite sides are replaced by unit bounds
            let lo = if lo.is_finite() { lo } else { hi.min(0.0) - 1.0 };
            let hi = if hi.is_finite() { hi } else { lo.max(0.0) + 1.0 };
            lo + (hi - lo) * rng.random::<f64>()
        }),
    )
}

fn outputs(sys: &NonlinearSystem, x0: &DVector<f64>, w: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let u = DVector::zeros(sys.m);
    let mut x = x0.clone();
    let mut ys = Vec::with_capacity(w.len());
    for wj in w {
        ys.push(sys.h(&x, &u, wj)?);
        x = sys.f(&x, &u, wj)?;
    }
    Ok(ys)
}

/// Searches random trajectory pairs for a violation of
/// `‖Δy_t‖ ≤ max{ max_{j ∈ K_i ∩ [0,t−1]} a_h ‖Δy_j‖, max_{j ∈ [0,t−1]} a_w ‖Δw_j‖ }`
/// at some `t ∈ [t_star, horizon]`, with `u ≡ 0`.
///
/// Initial states are drawn from the state box and disturbances from the
/// disturbance box, each uniformly; an empty maximum counts as zero.
/// Trajectories that leave the model domain are skipped.
pub fn falsify_output_dominance(sys: &NonlinearSystem, gaps: &GapSequence, settings: &FalsifierSettings) -> Result<Option<Counterexample>> {
    let s = settings;
    if !(s.a_h > 0.0 && s.a_w > 0.0) {
        return Err(Error::InvalidInput("a_h and a_w must be positive".into()));
    }
    if s.horizon < s.t_star {
        return Err(Error::InvalidInput("horizon must not precede t_star".into()));
    }
    if s.offset == 0 {
        return Err(Error::InvalidInput("sampling set offsets start at 1".into()));
    }
    let len = s.horizon as usize + 1;
    let mut sampled = vec![false; len];
    for j in gaps.times(s.offset).take_while(|j| *j <= s.horizon) {
        sampled[j as usize] = true;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    for trial in 0..s.trials {
        let x0 = draw_in_box(&mut rng, &sys.state_bounds);
        let x0_tilde = draw_in_box(&mut rng, &sys.state_bounds);
        let w: Vec<_> = (0..len).map(|_| draw_in_box(&mut rng, &sys.disturbance_bounds)).collect();
        let w_tilde: Vec<_> = (0..len).map(|_| draw_in_box(&mut rng, &sys.disturbance_bounds)).collect();
        let (Ok(y), Ok(y_tilde)) = (outputs(sys, &x0, &w), outputs(sys, &x0_tilde, &w_tilde)) else {
            continue;
        };

        let mut out_max = 0.0f64;
        let mut dist_max = 0.0f64;
        for t in 0..len {
            let dy = (&y[t] - &y_tilde[t]).norm();
            if t as u64 >= s.t_star {
                let rhs = out_max.max(dist_max);
                if dy > rhs * (1.0 + SLACK) {
                    return Ok(Some(Counterexample {
                        trial,
                        t: t as u64,
                        lhs: dy,
                        rhs,
                        x0,
                        x0_tilde,
                        w,
                        w_tilde,
                        y,
                        y_tilde,
                    }));
                }
            }
            if sampled[t] {
                out_max = out_max.max(s.a_h * dy);
            }
            dist_max = dist_max.max(s.a_w * (&w[t] - &w_tilde[t]).norm());
        }
    }
    Ok(None)
}
