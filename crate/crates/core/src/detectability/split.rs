//! Stable/unstable block diagonalization.
//!
//! An ordered real Schur form `QᵀAQ = [T11 T12; 0 T22]` places every
//! eigenvalue with modulus below `1 − tol` in `T11`. A Sylvester solve
//! `T11·Y − Y·T22 = −T12` then removes the coupling, giving
//! `A = T_J · blkdiag(A_s, A_us) · T_J⁻¹` with `T_J = Q·[I Y; 0 I]`.
//! Eigenvalues on or near the unit circle land in the unstable block.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::detectability::observability::rolling_window_check;
use crate::linalg::{check_square, solve_sylvester};
use crate::model::GapSequence;
use crate::{Error, Result};

/// Default distance from the unit circle below which an eigenvalue counts
/// as unstable.
pub const DEFAULT_CIRCLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

impl From<Complex<f64>> for Eigenvalue {
    fn from(c: Complex<f64>) -> Self {
        Self { re: c.re, im: c.im }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralSplit {
    /// Orthogonal basis of the ordered Schur form.
    pub schur_basis: DMatrix<f64>,
    /// `T_J` with `T_J⁻¹ A T_J = blkdiag(A_s, A_us)`.
    pub transform: DMatrix<f64>,
    pub transform_inv: DMatrix<f64>,
    pub a_s: DMatrix<f64>,
    pub a_us: DMatrix<f64>,
    pub c_s: DMatrix<f64>,
    pub c_us: DMatrix<f64>,
    pub stable_eigenvalues: Vec<Eigenvalue>,
    pub unstable_eigenvalues: Vec<Eigenvalue>,
    pub circle_tol: f64,
}

impl SpectralSplit {
    pub fn stable_dim(&self) -> usize {
        self.a_s.nrows()
    }

    pub fn unstable_dim(&self) -> usize {
        self.a_us.nrows()
    }

    /// `T_J · blkdiag(A_s, A_us) · T_J⁻¹`.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let k = self.stable_dim();
        let n = k + self.unstable_dim();
        let mut blk = DMatrix::zeros(n, n);
        blk.view_mut((0, 0), (k, k)).copy_from(&self.a_s);
        blk.view_mut((k, k), (n - k, n - k)).copy_from(&self.a_us);
        &self.transform * blk * &self.transform_inv
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    size: usize,
}

fn block_eigenvalues(t: &DMatrix<f64>, b: Block) -> Vec<Eigenvalue> {
    if b.size == 1 {
        return vec![Eigenvalue {
            re: t[(b.start, b.start)],
            im: 0.0,
        }];
    }
    let i = b.start;
    let (a, bb, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let mean = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + bb * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        vec![Eigenvalue { re: mean + s, im: 0.0 }, Eigenvalue { re: mean - s, im: 0.0 }]
    } else {
        let s = (-disc).sqrt();
        vec![Eigenvalue { re: mean, im: s }, Eigenvalue { re: mean, im: -s }]
    }
}

fn block_modulus(t: &DMatrix<f64>, b: Block) -> f64 {
    block_eigenvalues(t, b).iter().map(Eigenvalue::modulus).fold(0.0, f64::max)
}

/// Applies the orthogonal `g` to rows/columns `start..start+g.nrows()` of `t`
/// and to the matching columns of `q`.
fn apply_local(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>, start: usize, g: &DMatrix<f64>) {
    let k = g.nrows();
    let n = t.nrows();
    let rows = g.transpose() * t.view((start, 0), (k, n));
    t.view_mut((start, 0), (k, n)).copy_from(&rows);
    let cols = t.view((0, start), (n, k)) * g;
    t.view_mut((0, start), (n, k)).copy_from(&cols);
    let qc = q.view((0, start), (n, k)) * g;
    q.view_mut((0, start), (n, k)).copy_from(&qc);
}

/// Splits 2×2 diagonal blocks that have real eigenvalues into 1×1 blocks.
fn standardize_blocks(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>) -> Vec<Block> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n {
            let sub = t[(i + 1, i)];
            let scale = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if sub != 0.0 && sub.abs() <= f64::EPSILON * scale {
                t[(i + 1, i)] = 0.0;
            }
        }
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let b = Block { start: i, size: 2 };
            let eig = block_eigenvalues(t, b);
            if eig[0].im == 0.0 {
                // rotate an eigenvector onto the first axis
                let (a, bb, c) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)]);
                let lam = eig[0].re;
                let (mut v0, mut v1) = (bb, lam - a);
                if v0.hypot(v1) < f64::EPSILON * (1.0 + lam.abs()) {
                    v0 = lam - t[(i + 1, i + 1)];
                    v1 = c;
                }
                let r = v0.hypot(v1);
                let (cs, sn) = (v0 / r, v1 / r);
                let g = DMatrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
                apply_local(t, q, i, &g);
                t[(i + 1, i)] = 0.0;
                blocks.push(Block { start: i, size: 1 });
                blocks.push(Block { start: i + 1, size: 1 });
            } else {
                blocks.push(b);
            }
            i += 2;
        } else {
            blocks.push(Block { start: i, size: 1 });
            i += 1;
        }
    }
    blocks
}

/// Swaps adjacent diagonal blocks of sizes `p` (upper) and `r` (lower)
/// starting at `start`, keeping the quasi-triangular structure.
fn swap_blocks(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>, start: usize, p: usize, r: usize) -> Result<()> {
    let t11 = t.view((start, start), (p, p)).into_owned();
    let t22 = t.view((start + p, start + p), (r, r)).into_owned();
    let t12 = t.view((start, start + p), (p, r)).into_owned();
    // [X; I] spans the invariant subspace of the lower block
    let x = solve_sylvester(&t11, &t22, &(-t12))?;
    let k = p + r;
    let mut basis = DMatrix::zeros(k, k + r);
    basis.view_mut((0, 0), (p, r)).copy_from(&x);
    basis.view_mut((p, 0), (r, r)).fill_with_identity();
    basis.view_mut((0, r), (k, k)).fill_with_identity();
    let g = basis.qr().q();
    apply_local(t, q, start, &g);
    t.view_mut((start + r, start), (p, r)).fill(0.0);
    Ok(())
}

/// Ordered real Schur form plus Sylvester decoupling; see the module docs.
pub fn spectral_split(a: &DMatrix<f64>, c: &DMatrix<f64>, circle_tol: f64) -> Result<SpectralSplit> {
    check_square(a, "A")?;
    let n = a.nrows();
    if c.ncols() != n {
        return Err(Error::dimension("C columns", n, c.ncols()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("A has non-finite entries".into()));
    }
    let (mut q, mut t) = if n == 0 {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    } else {
        a.clone()
            .try_schur(f64::EPSILON, 10_000)
            .ok_or_else(|| Error::LinearAlgebra("Schur decomposition did not converge".into()))?
            .unpack()
    };
    let mut blocks = standardize_blocks(&mut t, &mut q);
    let is_stable = |t: &DMatrix<f64>, b: Block| block_modulus(t, b) < 1.0 - circle_tol;

    // bubble stable blocks towards the top
    let mut changed = true;
    while changed {
        changed = false;
        for idx in 0..blocks.len().saturating_sub(1) {
            let (upper, lower) = (blocks[idx], blocks[idx + 1]);
            if !is_stable(&t, upper) && is_stable(&t, lower) {
                swap_blocks(&mut t, &mut q, upper.start, upper.size, lower.size)?;
                blocks[idx] = Block {
                    start: upper.start,
                    size: lower.size,
                };
                blocks[idx + 1] = Block {
                    start: upper.start + lower.size,
                    size: upper.size,
                };
                changed = true;
            }
        }
    }

    let mut stable_eigenvalues = Vec::new();
    let mut unstable_eigenvalues = Vec::new();
    let mut k = 0;
    for b in &blocks {
        let eig = block_eigenvalues(&t, *b);
        if is_stable(&t, *b) {
            k += b.size;
            stable_eigenvalues.extend(eig);
        } else {
            unstable_eigenvalues.extend(eig);
        }
    }

    let t11 = t.view((0, 0), (k, k)).into_owned();
    let t22 = t.view((k, k), (n - k, n - k)).into_owned();
    let t12 = t.view((0, k), (k, n - k)).into_owned();
    let y = solve_sylvester(&t11, &t22, &(-t12))?;
    let mut v = DMatrix::identity(n, n);
    v.view_mut((0, k), (k, n - k)).copy_from(&y);
    let mut v_inv = DMatrix::identity(n, n);
    v_inv.view_mut((0, k), (k, n - k)).copy_from(&(-&y));

    let transform = &q * v;
    let transform_inv = v_inv * q.transpose();
    let c_j = c * &transform;
    Ok(SpectralSplit {
        a_s: t11,
        a_us: t22,
        c_s: c_j.columns(0, k).into_owned(),
        c_us: c_j.columns(k, n - k).into_owned(),
        schur_basis: q,
        transform,
        transform_inv,
        stable_eigenvalues,
        unstable_eigenvalues,
        circle_tol,
    })
}

#[derive(Debug, Clone)]
pub struct DetectabilityVerdict {
    /// Rolling-window sample-based observability of the unstable part,
    /// which certifies sample-based exponential i-IOSS with respect to `K`.
    pub detectable: bool,
    pub split: SpectralSplit,
}

/// Rolling-window check on the unstable subsystem `(A_us, C_us)`.
pub fn unstable_check(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    gaps: &GapSequence,
    window: u64,
    circle_tol: f64,
    rank_factor: f64,
) -> Result<DetectabilityVerdict> {
    if window < gaps.d_max() {
        return Err(Error::InvalidInput(format!(
            "window length T = {window} is shorter than the largest gap {}",
            gaps.d_max()
        )));
    }
    let split = spectral_split(a, c, circle_tol)?;
    let detectable = split.unstable_dim() == 0 || rolling_window_check(&split.a_us, &split.c_us, gaps, window, rank_factor)?;
    Ok(DetectabilityVerdict { detectable, split })
}
