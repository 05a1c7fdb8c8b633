//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance used when validating symmetric weight matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn check_square(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dimension(
            format!("{name} (must be square)"),
            format!("{0}x{0}", m.nrows()),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dimension(
            name,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn check_len(v: &DVector<f64>, len: usize, name: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::dimension(name, len, v.len()));
    }
    Ok(())
}

/// Symmetry to [`SYMMETRY_TOL`] relative to the largest entry.
pub fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_square(m, name)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax() / scale;
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            name: name.to_string(),
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Symmetric and Cholesky-factorizable.
pub fn check_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    symmetrize(m)
        .cholesky()
        .map(|_| ())
        .ok_or_else(|| Error::NotPositiveDefinite {
            name: name.to_string(),
        })
}

/// Symmetric with no eigenvalue below `-1e-12 * max|eig|`.
pub fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    if m.nrows() == 0 {
        return Ok(());
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let scale = eig.amax().max(f64::MIN_POSITIVE);
    if eig.min() < -1e-12 * scale {
        return Err(Error::InvalidInput(format!(
            "{name} is not positive semidefinite (min eigenvalue {:.3e})",
            eig.min()
        )));
    }
    Ok(())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square-root factor `F` of a PSD weight `W`, with `FᵀF = W`.
///
/// Uses the transposed lower Cholesky factor when it exists and falls back to
/// `Λ^{1/2} Vᵀ` from a symmetric eigendecomposition for singular weights.
pub fn weight_factor(w: &DMatrix<f64>) -> DMatrix<f64> {
    let w = symmetrize(w);
    if let Some(ch) = w.clone().cholesky() {
        return ch.l().transpose();
    }
    let eig = w.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut f = eig.eigenvectors.transpose();
    for i in 0..n {
        let s = eig.eigenvalues[i].max(0.0).sqrt();
        f.row_mut(i).scale_mut(s);
    }
    f
}

/// `vᵀ W v`.
pub fn quad_form(w: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(w * v))
}

/// Largest and smallest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = symmetrize(m).symmetric_eigenvalues();
    (eig.max(), eig.min())
}

/// Largest generalized eigenvalue of the symmetric pencil `(a, b)` with `b`
/// positive definite, i.e. `max xᵀa x / xᵀb x`.
pub fn generalized_max_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ch = symmetrize(b)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            name: "pencil denominator".into(),
        })?;
    let l = ch.l();
    // L⁻¹ A L⁻ᵀ
    let left = l
        .solve_lower_triangular(&symmetrize(a))
        .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
    let both = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::LinearAlgebra("triangular solve failed".into()))?;
    Ok(sym_eig_extremes(&both).0)
}

/// `a^k` by repeated squaring.
pub fn mat_pow(a: &DMatrix<f64>, mut k: u64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Solves the Sylvester equation `a·x − x·b = c` through its Kronecker form.
///
/// Sizes here are the dimensions of diagonal blocks of a Schur form, so the
/// dense `(kl)×(kl)` system stays small.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    let l = b.nrows();
    check_shape(c, k, l, "sylvester right-hand side")?;
    if k == 0 || l == 0 {
        return Ok(DMatrix::zeros(k, l));
    }
    // vec(A X) = (I ⊗ A) vec X, vec(X B) = (Bᵀ ⊗ I) vec X, column-major vec.
    let dim = k * l;
    let mut sys = DMatrix::zeros(dim, dim);
    for col in 0..l {
        for i in 0..k {
            let row = col * k + i;
            for j in 0..k {
                sys[(row, col * k + j)] += a[(i, j)];
            }
            for c2 in 0..l {
                sys[(row, c2 * k + i)] -= b[(c2, col)];
            }
        }
    }
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::LinearAlgebra("Sylvester equation is singular (shared eigenvalues)".into()))?;
    Ok(DMatrix::from_column_slice(k, l, sol.as_slice()))
}

/// Serde adapter: matrices as row-major nested lists.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(0, |r| r.len());
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(format!("matrix row {i} has {} entries, expected {ncols}", r.len()));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Serde adapter: vectors as flat lists.
pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// `Vec<DVector>` as a list of lists.
pub mod vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(DVector::from_vec)
            .collect())
    }
}
