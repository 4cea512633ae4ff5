use nalgebra::{DMatrix, DVector};

use super::{gaussian_log_density, GaussianFamily, Parametrization, Proposal};
use crate::error::{Error, Result};
use crate::matrix::{self, kron, vech, vech_len, vech_lower, vech_operators, SymMatrix};

/// Sufficient statistic `T(θ) = [θ; vech(θθᵀ)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStat {
    pub t1: DVector<f64>,
    pub t2: DVector<f64>,
}

impl SufficientStat {
    pub fn of(theta: &DVector<f64>) -> Self {
        SufficientStat {
            t1: theta.clone(),
            t2: vech_lower(&(theta * theta.transpose())),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.t1.len() + self.t2.len());
        out.rows_mut(0, self.t1.len()).copy_from(&self.t1);
        out.rows_mut(self.t1.len(), self.t2.len())
            .copy_from(&self.t2);
        out
    }
}

/// Natural parameters `λ₁ = Σ⁻¹μ`, `λ₂ = -½ D_pᵀ vec(Σ⁻¹)` together with the
/// cached moments they imply.
#[derive(Debug, Clone)]
pub struct NaturalGaussianParams {
    lambda1: DVector<f64>,
    lambda2: DVector<f64>,
    mu: DVector<f64>,
    sigma: SymMatrix,
    precision: DMatrix<f64>,
    log_det_precision: f64,
    sigma_chol: DMatrix<f64>,
}

impl NaturalGaussianParams {
    /// Validates that the implied `Σ(λ)` is positive definite.
    pub fn new(lambda1: DVector<f64>, lambda2: DVector<f64>) -> Result<Self> {
        let p = lambda1.len();
        if lambda2.len() != vech_len(p) {
            return Err(Error::Dimension {
                expected: vech_len(p),
                got: lambda2.len(),
            });
        }
        if lambda1.iter().chain(lambda2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let ops = vech_operators(p);
        // vec⁻¹(D⁺ᵀ λ₂) = -½ Σ⁻¹
        let half_neg_precision = matrix::vec_inv(&(ops.duplication_pinv.transpose() * &lambda2))?;
        let precision = SymMatrix::symmetrized(half_neg_precision * -2.0);
        let prec_chol = precision.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let log_det_precision = 2.0 * prec_chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let sigma = precision.inverse_pd()?;
        let sigma_chol = sigma.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let mu = sigma.as_matrix() * &lambda1;
        Ok(NaturalGaussianParams {
            lambda1,
            lambda2,
            mu,
            sigma,
            precision: precision.into_matrix(),
            log_det_precision,
            sigma_chol,
        })
    }

    pub fn lambda1(&self) -> &DVector<f64> {
        &self.lambda1
    }

    pub fn lambda2(&self) -> &DVector<f64> {
        &self.lambda2
    }

    /// `(μ, Σ)`.
    pub fn moments(&self) -> (DVector<f64>, SymMatrix) {
        (self.mu.clone(), self.sigma.clone())
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `I_F(λ)⁻¹` in closed form:
    /// `[[Σ⁻¹ + MᵀS⁻¹M, -MᵀS⁻¹], [-S⁻¹M, S⁻¹]]` with `M = 2D⁺(μ⊗I)` and
    /// `S = 2D⁺(Σ⊗Σ)D⁺ᵀ`.
    pub fn fisher_inverse(&self) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let n = vech_len(p);
        let ops = vech_operators(p);
        let dplus = &ops.duplication_pinv;
        let m = dplus
            * kron(
                &DMatrix::from_column_slice(p, 1, self.mu.as_slice()),
                &DMatrix::identity(p, p),
            )
            * 2.0;
        let sig = self.sigma.as_matrix();
        let s = dplus * kron(sig, sig) * dplus.transpose() * 2.0;
        let s_inv = SymMatrix::symmetrized(s)
            .inverse_pd()
            .map_err(|_| Error::Singular("S block of the natural-parameter Fisher inverse"))?
            .into_matrix();
        let s_inv_m = &s_inv * &m;
        let top_left = &self.precision + m.transpose() * &s_inv_m;
        let mut out = DMatrix::zeros(p + n, p + n);
        out.view_mut((0, 0), (p, p)).copy_from(&top_left);
        out.view_mut((p, 0), (n, p)).copy_from(&(-&s_inv_m));
        out.view_mut((0, p), (p, n))
            .copy_from(&(-s_inv_m.transpose()));
        out.view_mut((p, p), (n, n)).copy_from(&s_inv);
        Ok(out)
    }

    /// `Cov(T(θ))` computed in closed form; the Fisher information itself.
    /// Used as a cross-check of [`Self::fisher_inverse`].
    pub fn fisher(&self) -> DMatrix<f64> {
        let p = self.dim();
        let n = vech_len(p);
        let s = self.sigma.as_matrix();
        let mu = &self.mu;
        // Index pairs of vech.
        let pairs: Vec<(usize, usize)> = (0..p).flat_map(|j| (j..p).map(move |i| (i, j))).collect();
        let mut out = DMatrix::zeros(p + n, p + n);
        for a in 0..p {
            for b in 0..p {
                out[(a, b)] = s[(a, b)];
            }
        }
        // Cov(θ_a, θ_i θ_j) = μ_i Σ_aj + μ_j Σ_ai
        for (k, &(i, j)) in pairs.iter().enumerate() {
            for a in 0..p {
                let v = mu[i] * s[(a, j)] + mu[j] * s[(a, i)];
                out[(a, p + k)] = v;
                out[(p + k, a)] = v;
            }
        }
        // Cov(θ_i θ_j, θ_k θ_l) = Σ_ik Σ_jl + Σ_il Σ_jk
        //   + μ_i μ_k Σ_jl + μ_i μ_l Σ_jk + μ_j μ_k Σ_il + μ_j μ_l Σ_ik
        for (r, &(i, j)) in pairs.iter().enumerate() {
            for (c, &(k, l)) in pairs.iter().enumerate() {
                out[(p + r, p + c)] = s[(i, k)] * s[(j, l)]
                    + s[(i, l)] * s[(j, k)]
                    + mu[i] * mu[k] * s[(j, l)]
                    + mu[i] * mu[l] * s[(j, k)]
                    + mu[j] * mu[k] * s[(i, l)]
                    + mu[j] * mu[l] * s[(i, k)];
            }
        }
        out
    }
}

impl GaussianFamily for NaturalGaussianParams {
    const PARAMETRIZATION: Parametrization = Parametrization::Natural;

    fn from_moments(mu: &DVector<f64>, sigma: &SymMatrix) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::Dimension {
                expected: sigma.dim(),
                got: mu.len(),
            });
        }
        let precision = sigma.inverse_pd()?;
        let lambda1 = precision.as_matrix() * mu;
        let ops = vech_operators(mu.len());
        let lambda2 = ops.duplication.transpose() * matrix::vec(precision.as_matrix()) * -0.5;
        Self::new(lambda1, lambda2)
    }

    fn from_lambda(lambda: &DVector<f64>, dim: usize) -> Result<Self> {
        let n = vech_len(dim);
        if lambda.len() != dim + n {
            return Err(Error::Dimension {
                expected: dim + n,
                got: lambda.len(),
            });
        }
        Self::new(
            lambda.rows(0, dim).into_owned(),
            lambda.rows(dim, n).into_owned(),
        )
    }

    fn dim(&self) -> usize {
        self.lambda1.len()
    }

    fn lambda(&self) -> DVector<f64> {
        SufficientStat {
            t1: self.lambda1.clone(),
            t2: self.lambda2.clone(),
        }
        .stacked()
    }

    fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    fn covariance(&self) -> &SymMatrix {
        &self.sigma
    }

    fn log_density(&self, theta: &DVector<f64>) -> f64 {
        gaussian_log_density(theta, &self.mu, &self.precision, self.log_det_precision)
    }

    /// `[θ - μ; vech(θθᵀ - Σ - μμᵀ)]`.
    fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        let second =
            theta * theta.transpose() - self.sigma.as_matrix() - &self.mu * self.mu.transpose();
        SufficientStat {
            t1: theta - &self.mu,
            t2: vech(&SymMatrix::symmetrized(second)),
        }
        .stacked()
    }

    fn sampling_factor(&self) -> &DMatrix<f64> {
        &self.sigma_chol
    }

    fn natural_direction(&self, grad: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.fisher_inverse()? * grad)
    }

    fn shifted(&self, delta: &DVector<f64>) -> Proposal<Self> {
        match Self::from_lambda(&(self.lambda() + delta), self.dim()) {
            Ok(next) => Proposal::Accepted(next),
            Err(_) => Proposal::Rejected,
        }
    }
}
