//! Small dense matrix-calculus helpers: `vec`/`vech`, duplication and
//! elimination matrices, Kronecker products and Cholesky-based
//! positive-definiteness tests.
//!
//! Dimensions in this crate are small (a handful to a few dozen), so every
//! operator is stored densely. Duplication/elimination matrices are built
//! once per dimension and shared through a process-wide cache.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used to accept a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Length of `vech` for a `d x d` matrix.
#[inline]
pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Inverse of [`vech_len`]; `None` when `n` is not triangular.
pub fn dim_from_vech_len(n: usize) -> Option<usize> {
    let d = (((8 * n + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (d..=d + 1).find(|&k| vech_len(k) == n)
}

/// Largest absolute asymmetry `max |A - A^T|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let d = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..d {
        for i in (j + 1)..d {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// A symmetric matrix, checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `a` if `max|A - A^T| <= 1e-10 * max(1, max|A|)`. The stored
    /// matrix is exactly symmetrized.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "expected a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let scale = a.amax().max(1.0);
        let asym = asymmetry(&a);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::symmetrized(a))
    }

    /// Symmetrizes `(A + A^T) / 2` without checking.
    pub fn symmetrized(a: DMatrix<f64>) -> Self {
        let t = a.transpose();
        SymMatrix((a + t) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Lower Cholesky factor `L` with `A = L L^T`, if `A` is positive definite.
    pub fn cholesky(&self) -> Option<DMatrix<f64>> {
        cholesky_lower(&self.0)
    }

    pub fn is_positive_definite(&self) -> bool {
        is_positive_definite(self)
    }

    /// Inverse through the Cholesky factor.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        let chol = nalgebra::Cholesky::new(self.0.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(SymMatrix::symmetrized(chol.inverse()))
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// A lower-triangular matrix. The diagonal may carry either sign.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriMatrix(DMatrix<f64>);

impl LowerTriMatrix {
    /// Takes the lower triangle of `a`, zeroing everything above the diagonal.
    pub fn from_lower(a: &DMatrix<f64>) -> Self {
        LowerTriMatrix(a.lower_triangle())
    }

    /// Fills the lower triangle column by column from `v`.
    pub fn from_vech(v: &DVector<f64>) -> Result<Self> {
        let d = dim_from_vech_len(v.len())
            .ok_or_else(|| Error::InvalidArgument(format!("{} is not a vech length", v.len())))?;
        let mut m = DMatrix::zeros(d, d);
        let mut k = 0;
        for j in 0..d {
            for i in j..d {
                m[(i, j)] = v[k];
                k += 1;
            }
        }
        Ok(LowerTriMatrix(m))
    }

    pub fn vech(&self) -> DVector<f64> {
        vech_lower(&self.0)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    /// `log |det C|`, the sum of `log|C_ii|`.
    pub fn log_abs_det(&self) -> f64 {
        self.0.diagonal().iter().map(|c| c.abs().ln()).sum()
    }

    /// `C C^T`.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::symmetrized(&self.0 * self.0.transpose())
    }
}

/// Column-major stacking of a square matrix.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Refills a `d x d` matrix column by column.
pub fn vec_inv(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() {
        return Err(Error::InvalidArgument(format!(
            "{} is not a square length",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(d, d, v.as_slice()))
}

/// `vech` of a symmetric matrix.
pub fn vech(a: &SymMatrix) -> DVector<f64> {
    vech_lower(&a.0)
}

/// `vech` of an arbitrary square matrix after checking symmetry.
pub fn vech_checked(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    SymMatrix::new(a.clone()).map(|s| vech(&s))
}

/// Lower-triangle elements of any square matrix in column-major order,
/// i.e. `L_d vec(A)`.
pub fn vech_lower(a: &DMatrix<f64>) -> DVector<f64> {
    let d = a.nrows();
    let mut out = DVector::zeros(vech_len(d));
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            out[k] = a[(i, j)];
            k += 1;
        }
    }
    out
}

/// Symmetric matrix whose `vech` is `v`.
pub fn vech_inv(v: &DVector<f64>) -> Result<SymMatrix> {
    let lower = LowerTriMatrix::from_vech(v)?.0;
    let mut full = lower.clone();
    let d = full.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            full[(j, i)] = lower[(i, j)];
        }
    }
    Ok(SymMatrix(full))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Lower Cholesky factor, or `None` when some pivot is not strictly positive.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// True iff the Cholesky factorization succeeds with all pivots `> 0`.
pub fn is_positive_definite(a: &SymMatrix) -> bool {
    cholesky_lower(&a.0).is_some()
}

/// Position of `(i, j)`, `i >= j`, inside `vech`.
#[inline]
pub fn vech_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j);
    j * d - j * (j + 1) / 2 + i
}

/// The duplication, elimination and Moore-Penrose duplication inverse for
/// one dimension.
#[derive(Debug)]
pub struct VechOperators {
    pub duplication: DMatrix<f64>,
    pub elimination: DMatrix<f64>,
    pub duplication_pinv: DMatrix<f64>,
}

impl VechOperators {
    fn build(d: usize) -> Self {
        let n = vech_len(d);
        let mut dup = DMatrix::zeros(d * d, n);
        let mut elim = DMatrix::zeros(n, d * d);
        let mut pinv = DMatrix::zeros(n, d * d);
        for j in 0..d {
            for i in 0..d {
                let (r, c) = if i >= j { (i, j) } else { (j, i) };
                let k = vech_index(d, r, c);
                dup[(i + j * d, k)] = 1.0;
                if i >= j {
                    elim[(k, i + j * d)] = 1.0;
                }
                // D^T D is diagonal: 1 on diagonal entries, 2 off the diagonal.
                pinv[(k, i + j * d)] = if i == j { 1.0 } else { 0.5 };
            }
        }
        VechOperators {
            duplication: dup,
            elimination: elim,
            duplication_pinv: pinv,
        }
    }
}

/// Cached operators for dimension `d`.
pub fn vech_operators(d: usize) -> Arc<VechOperators> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<VechOperators>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(d)
        .or_insert_with(|| Arc::new(VechOperators::build(d)))
        .clone()
}

/// `D_d`, the `d² x d(d+1)/2` duplication matrix.
pub fn duplication_matrix(d: usize) -> DMatrix<f64> {
    vech_operators(d).duplication.clone()
}

/// `L_d`, the `d(d+1)/2 x d²` elimination matrix.
pub fn elimination_matrix(d: usize) -> DMatrix<f64> {
    vech_operators(d).elimination.clone()
}

/// `D_d⁺ = (D_dᵀ D_d)⁻¹ D_dᵀ`.
pub fn dup_mp_inverse(d: usize) -> DMatrix<f64> {
    vech_operators(d).duplication_pinv.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(d: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0))
    }

    fn random_sym(d: usize, seed: u64) -> SymMatrix {
        SymMatrix::symmetrized(random_matrix(d, seed))
    }

    fn random_pd(d: usize, seed: u64) -> DMatrix<f64> {
        let a = random_matrix(d, seed);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    #[test]
    fn vec_stacks_columns() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&a).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let one = DMatrix::from_element(1, 1, 7.5);
        assert_eq!(vec(&one).as_slice(), &[7.5]);
        let r = random_matrix(3, 1);
        assert_eq!(vec_inv(&vec(&r)).unwrap(), r);
    }

    #[test]
    fn vech_examples() {
        let a = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])).unwrap();
        assert_eq!(vech(&a).as_slice(), &[1.0, 2.0, 3.0]);
        let i3 = SymMatrix::identity(3);
        assert_eq!(vech(&i3).as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn vech_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.1, 3.0]);
        assert!(matches!(vech_checked(&a), Err(Error::NotSymmetric(_))));
        // Rounding-level asymmetry is accepted.
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-14, 3.0]);
        assert!(vech_checked(&b).is_ok());
    }

    #[test]
    fn duplication_d1_and_d2() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(duplication_matrix(1), one);
        assert_eq!(elimination_matrix(1), one);
        assert_eq!(dup_mp_inverse(1), one);

        // Enumerate the vec -> vech index map for d = 2 by hand:
        // vec = (a11, a21, a12, a22), vech = (a11, a21, a22).
        let expected =
            DMatrix::from_row_slice(4, 3, &[1., 0., 0., 0., 1., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(duplication_matrix(2), expected);
    }

    #[test]
    fn pinv_matches_normal_equations() {
        for d in 1..=5 {
            let dup = duplication_matrix(d);
            let dtd = dup.transpose() * &dup;
            let pinv = dtd.try_inverse().unwrap() * dup.transpose();
            assert!((pinv - dup_mp_inverse(d)).amax() < 1e-14);
        }
    }

    #[test]
    fn vech_index_agrees_with_loop_order() {
        for d in 1..=6 {
            let mut k = 0;
            for j in 0..d {
                for i in j..d {
                    assert_eq!(vech_index(d, i, j), k);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn positive_definiteness() {
        assert!(is_positive_definite(&SymMatrix::identity(3)));
        let indefinite = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1., 2., 2., 1.])).unwrap();
        assert!(!is_positive_definite(&indefinite));
        let zero = SymMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(!is_positive_definite(&zero));
    }

    #[test]
    fn dim_from_vech_len_inverts() {
        for d in 1..40 {
            assert_eq!(dim_from_vech_len(vech_len(d)), Some(d));
        }
        assert_eq!(dim_from_vech_len(4), None);
    }

    proptest! {
        #[test]
        fn duplication_identities(d in 1usize..=5, seed in any::<u64>()) {
            let a = random_sym(d, seed);
            let ops = vech_operators(d);
            let va = vec(a.as_matrix());
            let h = vech(&a);
            prop_assert!((&ops.duplication * &h - &va).amax() < 1e-12);
            prop_assert!((&ops.elimination * &va - &h).amax() < 1e-12);
            prop_assert!((&ops.duplication_pinv * &va - &h).amax() < 1e-12);
            let ident = &ops.duplication_pinv * &ops.duplication;
            prop_assert!((ident - DMatrix::identity(vech_len(d), vech_len(d))).amax() < 1e-14);
            // L_d vec(A) = vech(A) for non-symmetric A too.
            let g = random_matrix(d, seed ^ 0xabc);
            prop_assert_eq!(&ops.elimination * vec(&g), vech_lower(&g));
        }

        #[test]
        fn kronecker_vec_identity(seed in any::<u64>(), m in 1usize..4, n in 1usize..4, k in 1usize..4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            let b = gen(m, n);
            let a = gen(n, k);
            let c = gen(k, m);
            let lhs = DVector::from_column_slice((&b * &a * &c).as_slice());
            let rhs = kron(&c.transpose(), &b) * DVector::from_column_slice(a.as_slice());
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn cholesky_round_trip(d in 1usize..=6, seed in any::<u64>()) {
            let a = random_pd(d, seed);
            let l = cholesky_lower(&a).unwrap();
            let back = &l * l.transpose();
            prop_assert!((back - &a).amax() <= 1e-10 * a.amax());
        }

        #[test]
        fn vech_round_trip(d in 1usize..=6, seed in any::<u64>()) {
            let a = random_sym(d, seed);
            prop_assert_eq!(vech_inv(&vech(&a)).unwrap(), a);
        }
    }
}
