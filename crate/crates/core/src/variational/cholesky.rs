use nalgebra::{DMatrix, DVector};

use super::{gaussian_log_density, GaussianFamily, Parametrization, Proposal};
use crate::error::{Error, Result};
use crate::matrix::{kron, vech_len, vech_lower, vech_operators, LowerTriMatrix, SymMatrix};

/// Smallest magnitude allowed on the diagonal of `C` after an update.
pub const DIAGONAL_FLOOR: f64 = 1e-8;

/// `λ = [μ; vech(C)]` where `Σ⁻¹ = C Cᵀ`. The diagonal of `C` may have
/// either sign; flipping a column of `C` describes the same distribution.
#[derive(Debug, Clone)]
pub struct CholeskyGaussianParams {
    mu: DVector<f64>,
    c: LowerTriMatrix,
    precision: DMatrix<f64>,
    sigma: SymMatrix,
    c_inv_t: DMatrix<f64>,
}

impl CholeskyGaussianParams {
    /// Fails if `C` has a zero (or non-finite) diagonal entry.
    pub fn new(mu: DVector<f64>, c: LowerTriMatrix) -> Result<Self> {
        if mu.len() != c.dim() {
            return Err(Error::Dimension {
                expected: c.dim(),
                got: mu.len(),
            });
        }
        if c.diagonal().iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::Singular("zero on the diagonal of C"));
        }
        let p = mu.len();
        let cm = c.as_matrix();
        let c_inv = cm
            .clone()
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or(Error::Singular("C is not invertible"))?;
        let c_inv_t = c_inv.transpose();
        let sigma = SymMatrix::symmetrized(&c_inv_t * &c_inv);
        let precision = c.gram().into_matrix();
        Ok(CholeskyGaussianParams {
            mu,
            c,
            precision,
            sigma,
            c_inv_t,
        })
    }

    pub fn c(&self) -> &LowerTriMatrix {
        &self.c
    }

    /// Exact Fisher information: block diagonal `[[Σ⁻¹, 0], [0, I₂₂]]` with
    /// `I₂₂ = 2 L(Cᵀ⊗I) D D⁺ (Σ⊗Σ) D⁺ᵀ Dᵀ (C⊗I) Lᵀ`.
    pub fn fisher(&self) -> DMatrix<f64> {
        let p = self.dim();
        let n = vech_len(p);
        let mut out = DMatrix::zeros(p + n, p + n);
        out.view_mut((0, 0), (p, p)).copy_from(&self.precision);
        out.view_mut((p, p), (n, n)).copy_from(&self.fisher_22());
        out
    }

    /// The `vech(C)` block of the Fisher information.
    pub fn fisher_22(&self) -> DMatrix<f64> {
        let p = self.dim();
        let ops = vech_operators(p);
        let eye = DMatrix::identity(p, p);
        let cm = self.c.as_matrix();
        let left = &ops.elimination
            * kron(&cm.transpose(), &eye)
            * &ops.duplication
            * &ops.duplication_pinv;
        let sig = self.sigma.as_matrix();
        let middle = kron(sig, sig);
        let out = &left * middle * left.transpose() * 2.0;
        SymMatrix::symmetrized(out).into_matrix()
    }
}

impl GaussianFamily for CholeskyGaussianParams {
    const PARAMETRIZATION: Parametrization = Parametrization::Cholesky;

    fn from_moments(mu: &DVector<f64>, sigma: &SymMatrix) -> Result<Self> {
        let precision = sigma.inverse_pd()?;
        let c = precision.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Self::new(mu.clone(), LowerTriMatrix::from_lower(&c))
    }

    fn from_lambda(lambda: &DVector<f64>, dim: usize) -> Result<Self> {
        let n = vech_len(dim);
        if lambda.len() != dim + n {
            return Err(Error::Dimension {
                expected: dim + n,
                got: lambda.len(),
            });
        }
        let c = LowerTriMatrix::from_vech(&lambda.rows(dim, n).into_owned())?;
        Self::new(lambda.rows(0, dim).into_owned(), c)
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn lambda(&self) -> DVector<f64> {
        let p = self.dim();
        let n = vech_len(p);
        let mut out = DVector::zeros(p + n);
        out.rows_mut(0, p).copy_from(&self.mu);
        out.rows_mut(p, n).copy_from(&self.c.vech());
        out
    }

    fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    fn covariance(&self) -> &SymMatrix {
        &self.sigma
    }

    fn log_density(&self, theta: &DVector<f64>) -> f64 {
        gaussian_log_density(theta, &self.mu, &self.precision, 2.0 * self.c.log_abs_det())
    }

    /// `[CCᵀ(θ-μ); vech(diag(1/C) - (θ-μ)(θ-μ)ᵀC)]`.
    fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        let p = self.dim();
        let n = vech_len(p);
        let r = theta - &self.mu;
        let mut second = -(&r * (r.transpose() * self.c.as_matrix()));
        for i in 0..p {
            second[(i, i)] += 1.0 / self.c.as_matrix()[(i, i)];
        }
        let mut out = DVector::zeros(p + n);
        out.rows_mut(0, p).copy_from(&(&self.precision * &r));
        out.rows_mut(p, n).copy_from(&vech_lower(&second));
        out
    }

    fn sampling_factor(&self) -> &DMatrix<f64> {
        &self.c_inv_t
    }

    fn natural_direction(&self, grad: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.dim();
        let n = vech_len(p);
        let g1 = grad.rows(0, p).into_owned();
        let g2 = grad.rows(p, n).into_owned();
        let chol = nalgebra::Cholesky::new(self.fisher_22()).ok_or(Error::Singular(
            "I22 block of the Cholesky-parameter Fisher matrix",
        ))?;
        let mut out = DVector::zeros(p + n);
        out.rows_mut(0, p).copy_from(&(self.sigma.as_matrix() * g1));
        out.rows_mut(p, n).copy_from(&chol.solve(&g2));
        Ok(out)
    }

    /// Always accepted; diagonal entries of `C` are pushed to at least
    /// [`DIAGONAL_FLOOR`] in magnitude, keeping their sign.
    fn shifted(&self, delta: &DVector<f64>) -> Proposal<Self> {
        let p = self.dim();
        let mut next = self.lambda() + delta;
        let mut k = p;
        for j in 0..p {
            let v = next[k];
            if !v.is_finite() {
                return Proposal::Rejected;
            }
            if v.abs() < DIAGONAL_FLOOR {
                next[k] = if v < 0.0 {
                    -DIAGONAL_FLOOR
                } else {
                    DIAGONAL_FLOOR
                };
            }
            k += p - j;
        }
        match Self::from_lambda(&next, p) {
            Ok(q) => Proposal::Accepted(q),
            Err(_) => Proposal::Rejected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::LN_2PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(p: usize, seed: u64) -> CholeskyGaussianParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
        for i in 0..p {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            c[(i, i)] = sign * rng.random_range(0.5..2.0);
        }
        let mu = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        CholeskyGaussianParams::new(mu, LowerTriMatrix::from_lower(&c)).unwrap()
    }

    /// Direct transcription of the log density in `(μ, vech C)`.
    fn log_q_direct(lambda: &DVector<f64>, p: usize, theta: &DVector<f64>) -> f64 {
        let mu = lambda.rows(0, p).into_owned();
        let c = LowerTriMatrix::from_vech(&lambda.rows(p, vech_len(p)).into_owned()).unwrap();
        let r = theta - mu;
        let ct_r = c.as_matrix().transpose() * r;
        -(p as f64) / 2.0 * LN_2PI + c.log_abs_det() - 0.5 * ct_r.dot(&ct_r)
    }

    #[test]
    fn scalar_score_at_mean() {
        let c = LowerTriMatrix::from_vech(&DVector::from_element(1, -2.5)).unwrap();
        let q = CholeskyGaussianParams::new(DVector::from_element(1, 0.3), c).unwrap();
        let s = q.score(&DVector::from_element(1, 0.3));
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 1.0 / -2.5).abs() < 1e-15);
    }

    #[test]
    fn zero_diagonal_is_rejected() {
        let c = LowerTriMatrix::from_vech(&DVector::from_vec(vec![1.0, 0.2, 0.0])).unwrap();
        assert!(CholeskyGaussianParams::new(DVector::zeros(2), c).is_err());
    }

    #[test]
    fn score_matches_finite_differences() {
        for seed in 0..6 {
            let p = 1 + seed as usize % 3;
            let q = random_params(p, seed);
            let theta = q
                .sample(1, &mut ChaCha8Rng::seed_from_u64(seed + 100))
                .remove(0);
            let lam = q.lambda();
            let s = q.score(&theta);
            for k in 0..lam.len() {
                let h = 1e-5 * lam[k].abs().max(1.0);
                let mut up = lam.clone();
                let mut dn = lam.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (log_q_direct(&up, p, &theta) - log_q_direct(&dn, p, &theta)) / (2.0 * h);
                assert!(
                    (s[k] - fd).abs() <= 1e-4 * fd.abs().max(1e-2),
                    "k={k}: {} vs {fd}",
                    s[k]
                );
            }
        }
    }

    #[test]
    fn scalar_fisher_reduction() {
        for &c in &[0.5, -1.3, 2.0] {
            let cm = LowerTriMatrix::from_vech(&DVector::from_element(1, c)).unwrap();
            let q = CholeskyGaussianParams::new(DVector::zeros(1), cm).unwrap();
            let f = q.fisher();
            assert!((f[(0, 0)] - c * c).abs() < 1e-12);
            assert!((f[(1, 1)] - 2.0 / (c * c)).abs() < 1e-12);
            assert_eq!(f[(0, 1)], 0.0);
        }
    }

    #[test]
    fn i22_is_symmetric_positive_definite() {
        for seed in 0..20 {
            let q = random_params(1 + seed as usize % 5, seed);
            let i22 = q.fisher_22();
            assert!(crate::matrix::asymmetry(&i22) < 1e-12 * i22.amax());
            assert!(crate::matrix::cholesky_lower(&i22).is_some());
        }
    }

    #[test]
    fn column_sign_flip_is_invisible() {
        let q = random_params(3, 11);
        let theta = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        for col in 0..3 {
            let mut c = q.c().as_matrix().clone();
            c.column_mut(col).neg_mut();
            let flipped =
                CholeskyGaussianParams::new(q.mean().clone(), LowerTriMatrix::from_lower(&c))
                    .unwrap();
            assert!((flipped.covariance().as_matrix() - q.covariance().as_matrix()).amax() < 1e-12);
            assert!((flipped.log_density(&theta) - q.log_density(&theta)).abs() < 1e-12);
            // I₂₂ is unchanged up to the sign pattern of the flipped column,
            // which is a similarity by a ±1 diagonal matrix.
            let p = 3;
            let signs = DVector::from_fn(vech_len(p), |k, _| {
                let (_, j) = (0..p)
                    .flat_map(|j| (j..p).map(move |i| (i, j)))
                    .nth(k)
                    .unwrap();
                if j == col {
                    -1.0
                } else {
                    1.0
                }
            });
            let s = DMatrix::from_diagonal(&signs);
            let a = flipped.fisher_22();
            let b = &s * q.fisher_22() * &s;
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn natural_direction_solves_fisher_system() {
        let q = random_params(3, 4);
        let g = DVector::from_fn(q.lambda_len(), |i, _| (i as f64).sin());
        let d = q.natural_direction(&g).unwrap();
        assert!((q.fisher() * d - g).amax() < 1e-9);
    }

    #[test]
    fn shift_clamps_diagonal() {
        let q = random_params(2, 8);
        let mut delta = DVector::zeros(q.lambda_len());
        delta[2] = -q.lambda()[2];
        match q.shifted(&delta) {
            Proposal::Accepted(next) => {
                assert_eq!(next.c().as_matrix()[(0, 0)].abs(), DIAGONAL_FLOOR);
            }
            Proposal::Rejected => panic!("cholesky updates are never rejected"),
        }
    }
}
