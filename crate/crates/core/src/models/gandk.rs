//! Multivariate g-and-k model with a Gaussian copula.
//!
//! Each margin `r` has quantile function
//! `Q(p) = A + B[1 + c(1 - e^{-gz})/(1 + e^{-gz})](1 + z²)^k z`, `z = Φ⁻¹(p)`,
//! with `c = 0.8`. The copula correlation has Cholesky factor built from
//! angles `γ_j = π/(1 + e^{-w_j})`. Working parameters are, per margin,
//! `(10 log((A+0.1)/(0.1-A)), log(B/(0.05-B)), log((1+g)/(1-g)),
//! log((k+0.2)/(0.5-k)))`, followed by the unconstrained angles `w`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{ComponentTransform, SimulatorModel};
use crate::error::{Error, Result};
use crate::stats::{normal_ln_pdf, normal_quantile, quantile_sorted};

pub const GK_C: f64 = 0.8;

/// Prior variance of each working-scale marginal parameter.
pub const MARGIN_PRIOR_VAR: f64 = 4.0;
/// Prior standard deviation of each angle parameter.
pub const ANGLE_PRIOR_SD: f64 = 1.75;

/// `Q(p)` for `0 < p < 1`.
pub fn gk_quantile(p: f64, a: f64, b: f64, g: f64, k: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfRange(format!("probability {p} outside (0, 1)")));
    }
    Ok(gk_from_z(normal_quantile(p), a, b, g, k))
}

/// The quantile function evaluated at a standard-normal score `z`.
pub fn gk_from_z(z: f64, a: f64, b: f64, g: f64, k: f64) -> f64 {
    // (1 - e^{-gz})/(1 + e^{-gz}) = tanh(gz/2)
    a + b * (1.0 + GK_C * (0.5 * g * z).tanh()) * (1.0 + z * z).powf(k) * z
}

/// Number of copula angles for dimension `q`.
pub fn angle_count(q: usize) -> usize {
    q * (q - 1) / 2
}

/// Parameters on the natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GkParams {
    /// `(A, B, g, k)` per margin.
    pub margins: Vec<[f64; 4]>,
    /// Unconstrained correlation angles.
    pub w: Vec<f64>,
}

impl GkParams {
    pub fn q(&self) -> usize {
        self.margins.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if !(1..=3).contains(&q) {
            return Err(Error::InvalidArgument(format!(
                "q must be 1, 2 or 3, got {q}"
            )));
        }
        if self.w.len() != angle_count(q) {
            return Err(Error::Dimension {
                expected: angle_count(q),
                got: self.w.len(),
            });
        }
        for m in &self.margins {
            if !(m[1] > 0.0) || !(m[3] > -0.5) {
                return Err(Error::OutOfRange(format!(
                    "need B > 0 and k > -0.5, got {m:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_tilde(theta: &DVector<f64>, q: usize) -> Self {
        let tr = margin_transforms();
        let margins = (0..q)
            .map(|r| std::array::from_fn(|j| tr[j].forward(theta[4 * r + j])))
            .collect();
        let w = theta.rows(4 * q, angle_count(q)).iter().copied().collect();
        GkParams { margins, w }
    }

    pub fn to_tilde(&self) -> Result<DVector<f64>> {
        let tr = margin_transforms();
        let mut out = Vec::with_capacity(4 * self.q() + self.w.len());
        for m in &self.margins {
            for j in 0..4 {
                out.push(tr[j].inverse(m[j])?);
            }
        }
        out.extend_from_slice(&self.w);
        Ok(DVector::from_vec(out))
    }

    /// Lower Cholesky factor of the copula correlation matrix.
    pub fn copula_factor(&self) -> DMatrix<f64> {
        copula_factor(&self.w, self.q())
    }
}

/// Working-scale transforms of `(A, B, g, k)`.
pub fn margin_transforms() -> [ComponentTransform; 4] {
    [
        ComponentTransform::Logistic {
            lower: -0.1,
            upper: 0.1,
            scale: 10.0,
        },
        ComponentTransform::Logistic {
            lower: 0.0,
            upper: 0.05,
            scale: 1.0,
        },
        ComponentTransform::Logistic {
            lower: -1.0,
            upper: 1.0,
            scale: 1.0,
        },
        ComponentTransform::Logistic {
            lower: -0.2,
            upper: 0.5,
            scale: 1.0,
        },
    ]
}

fn angle(w: f64) -> f64 {
    PI / (1.0 + (-w).exp())
}

/// Spherical Cholesky factor for `q ≤ 3`.
pub fn copula_factor(w: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::identity(q, q);
    if q >= 2 {
        let g1 = angle(w[0]);
        l[(1, 0)] = g1.cos();
        l[(1, 1)] = g1.sin();
    }
    if q >= 3 {
        let g2 = angle(w[1]);
        let g3 = angle(w[2]);
        l[(2, 0)] = g2.cos();
        l[(2, 1)] = g2.sin() * g3.cos();
        l[(2, 2)] = g2.sin() * g3.sin();
    }
    l
}

/// `n` draws, one row per observation.
pub fn gk_simulate<R: Rng + ?Sized>(params: &GkParams, n: usize, rng: &mut R) -> DMatrix<f64> {
    let q = params.q();
    let l = params.copula_factor();
    let mut out = DMatrix::zeros(n, q);
    let mut z = DVector::zeros(q);
    for i in 0..n {
        for r in 0..q {
            z[r] = rng.sample(StandardNormal);
        }
        let x = &l * &z;
        for (r, m) in params.margins.iter().enumerate() {
            out[(i, r)] = gk_from_z(x[r], m[0], m[1], m[2], m[3]);
        }
    }
    out
}

/// Octile summaries `(S_A, S_B, S_g, S_k)` of sorted data.
fn margin_summaries(sorted: &[f64]) -> Result<[f64; 4]> {
    let e: [f64; 8] = std::array::from_fn(|j| {
        if j == 0 {
            0.0
        } else {
            quantile_sorted(sorted, j as f64 / 8.0)
        }
    });
    let sb = e[6] - e[2];
    if !(sb > 0.0) {
        return Err(Error::OutOfRange("zero octile spread".into()));
    }
    Ok([
        e[4],
        sb,
        (e[7] - e[5] + e[3] - e[1]) / sb,
        (e[6] + e[2] - 2.0 * e[4]) / sb,
    ])
}

/// Normal scores `Φ⁻¹((r - 3/8)/(n + 1/4))` for ranks `r = 1..n`.
pub fn normal_scores(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|r| normal_quantile((r as f64 - 0.375) / (n as f64 + 0.25)))
        .collect()
}

/// Ranks (0-based) of a column; ties broken by position.
fn ranks(col: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut out = vec![0; col.len()];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = rank;
    }
    out
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Octile summaries per margin followed by the normal-scores correlation of
/// each pair `(r, s)`, `r < s`. Dimension `4q + q(q-1)/2`.
pub fn gk_summaries(data: &DMatrix<f64>) -> Result<DVector<f64>> {
    gk_summaries_with_scores(data, None)
}

fn gk_summaries_with_scores(data: &DMatrix<f64>, scores: Option<&[f64]>) -> Result<DVector<f64>> {
    let (n, q) = data.shape();
    if n < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 observations, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(4 * q + angle_count(q));
    let columns: Vec<Vec<f64>> = (0..q)
        .map(|r| data.column(r).iter().copied().collect())
        .collect();
    for col in &columns {
        let mut sorted = col.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        out.extend_from_slice(&margin_summaries(&sorted)?);
    }
    if q > 1 {
        let owned;
        let scores = match scores {
            Some(s) => s,
            None => {
                owned = normal_scores(n);
                &owned
            }
        };
        let scored: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| ranks(c).into_iter().map(|r| scores[r]).collect())
            .collect();
        for r in 0..q {
            for s in r + 1..q {
                out.push(correlation(&scored[r], &scored[s]));
            }
        }
    }
    Ok(DVector::from_vec(out))
}

#[derive(Debug, Clone)]
pub struct GandK {
    q: usize,
    n_obs: usize,
    observed: DVector<f64>,
    scores: Vec<f64>,
}

impl GandK {
    /// Builds the model from an `n x q` data matrix.
    pub fn from_data(data: &DMatrix<f64>) -> Result<Self> {
        let (n, q) = data.shape();
        if !(1..=3).contains(&q) {
            return Err(Error::InvalidArgument(format!(
                "q must be 1, 2 or 3, got {q}"
            )));
        }
        let scores = normal_scores(n);
        let observed = gk_summaries_with_scores(data, Some(&scores))?;
        Ok(GandK {
            q,
            n_obs: n,
            observed,
            scores,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
}

impl SimulatorModel for GandK {
    fn name(&self) -> &str {
        "gandk"
    }

    fn param_dim(&self) -> usize {
        4 * self.q + angle_count(self.q)
    }

    fn summary_dim(&self) -> usize {
        4 * self.q + angle_count(self.q)
    }

    fn observed_summary(&self) -> &DVector<f64> {
        &self.observed
    }

    fn simulate_summary(
        &self,
        theta: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<DVector<f64>> {
        let params = GkParams::from_tilde(theta, self.q);
        let data = gk_simulate(&params, self.n_obs, rng);
        gk_summaries_with_scores(&data, Some(&self.scores))
    }

    fn log_prior(&self, theta: &DVector<f64>) -> f64 {
        let m = 4 * self.q;
        let margins: f64 = theta
            .rows(0, m)
            .iter()
            .map(|&t| normal_ln_pdf(t, 0.0, MARGIN_PRIOR_VAR))
            .sum();
        let angles: f64 = theta
            .rows(m, angle_count(self.q))
            .iter()
            .map(|&t| normal_ln_pdf(t, 0.0, ANGLE_PRIOR_SD * ANGLE_PRIOR_SD))
            .sum();
        margins + angles
    }

    fn transforms(&self) -> Vec<ComponentTransform> {
        let mut t: Vec<ComponentTransform> =
            (0..self.q).flat_map(|_| margin_transforms()).collect();
        t.extend(std::iter::repeat_n(
            ComponentTransform::Identity,
            angle_count(self.q),
        ));
        t
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for r in 1..=self.q {
            for p in ["A", "B", "g", "k"] {
                names.push(if self.q == 1 {
                    p.to_string()
                } else {
                    format!("{p}{r}")
                });
            }
        }
        for j in 1..=angle_count(self.q) {
            names.push(format!("w{j}"));
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_special_cases() {
        assert_eq!(gk_quantile(0.5, 0.3, 2.0, 0.7, 0.2).unwrap(), 0.3);
        for &p in &[0.1, 0.3, 0.9] {
            let q = gk_quantile(p, 1.0, 2.0, 0.0, 0.0).unwrap();
            assert!((q - (1.0 + 2.0 * normal_quantile(p))).abs() < 1e-14);
        }
        assert!(gk_quantile(0.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(gk_quantile(1.0, 0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn quantile_at_z_one() {
        let e = (-1.0f64).exp();
        let expect = (1.0 + 0.8 * (1.0 - e) / (1.0 + e)) * 2f64.sqrt();
        assert!((gk_from_z(1.0, 0.0, 1.0, 1.0, 0.5) - expect).abs() < 1e-14);
        // p = Φ(1) to six digits moves z by about 2e-6.
        let q = gk_quantile(0.841345, 0.0, 1.0, 1.0, 0.5).unwrap();
        assert!((q - expect).abs() < 1e-5);
        // Independent high-precision evaluation of the same expression.
        assert!((expect - 1.937_039_443_335_02).abs() < 1e-14);
    }

    #[test]
    fn transforms_midpoints_and_round_trip() {
        let p = GkParams {
            margins: vec![[0.0, 0.025, 0.0, 0.15]],
            w: vec![],
        };
        assert!(p.to_tilde().unwrap().amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = GkParams {
                margins: vec![[
                    rng.random_range(-0.099..0.099),
                    rng.random_range(0.001..0.049),
                    rng.random_range(-0.99..0.99),
                    rng.random_range(-0.19..0.49),
                ]],
                w: vec![],
            };
            let back = GkParams::from_tilde(&p.to_tilde().unwrap(), 1);
            for j in 0..4 {
                assert!((back.margins[0][j] - p.margins[0][j]).abs() < 1e-10);
            }
        }
        let near = GkParams {
            margins: vec![[0.0, 0.025, 0.0, 0.5 - 1e-12]],
            w: vec![],
        };
        assert!(near.to_tilde().unwrap()[3] > 25.0);
        let out = GkParams {
            margins: vec![[0.0, 0.06, 0.0, 0.0]],
            w: vec![],
        };
        assert!(out.to_tilde().is_err());
    }

    #[test]
    fn spherical_factor_identities() {
        let l = copula_factor(&[0.0], 2);
        assert!((l.clone() - DMatrix::identity(2, 2)).amax() < 1e-15);
        let l = copula_factor(&[40.0], 2);
        assert!(((&l * l.transpose())[(0, 1)] + 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let l = copula_factor(&w, 3);
            let s = &l * l.transpose();
            for i in 0..3 {
                assert!((s[(i, i)] - 1.0).abs() < 1e-14);
            }
            assert!(s.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn normal_margin_moments() {
        let p = GkParams {
            margins: vec![[0.3, 2.0, 0.0, 0.0]],
            w: vec![],
        };
        let n = 1_000_000;
        let x = gk_simulate(&p, n, &mut ChaCha8Rng::seed_from_u64(6));
        let mean = x.mean();
        let sd = x.column(0).variance().sqrt();
        assert!((mean - 0.3).abs() < 4.0 * 2.0 / (n as f64).sqrt());
        // sd of a sample sd ≈ σ/√(2n)
        assert!((sd - 2.0).abs() < 4.0 * 2.0 / (2.0 * n as f64).sqrt());
    }

    #[test]
    fn octiles_of_exact_normal_quantiles() {
        // "Data" whose octiles are exactly the standard normal octiles.
        let data = DMatrix::from_fn(9, 1, |i, _| {
            if i == 0 {
                -5.0
            } else if i == 8 {
                5.0
            } else {
                normal_quantile(i as f64 / 8.0)
            }
        });
        let s = gk_summaries(&data).unwrap();
        assert!(s[0].abs() < 1e-15);
        assert!((s[1] - 2.0 * normal_quantile(0.75)).abs() < 1e-14);
        assert!((s[1] - 1.3489795003921634).abs() < 1e-12);
        // Symmetry zeroes the (E6 + E2 - 2E4) statistic; the other one is a
        // kurtosis ratio.
        let moors = 2.0 * (normal_quantile(0.875) - normal_quantile(0.625)) / s[1];
        assert!((s[2] - moors).abs() < 1e-14);
        assert!((s[2] - 1.233_095_115_485_217).abs() < 1e-12);
        assert!(s[3].abs() < 1e-14);
    }

    #[test]
    fn summaries_shift_equivariance() {
        let p = GkParams {
            margins: vec![[0.0, 1.0, 0.5, 0.1]],
            w: vec![],
        };
        let x = gk_simulate(&p, 200, &mut ChaCha8Rng::seed_from_u64(1));
        let a = gk_summaries(&x).unwrap();
        let b = gk_summaries(&x.map(|v| v + 3.0)).unwrap();
        assert!((b[0] - a[0] - 3.0).abs() < 1e-12);
        for j in 1..4 {
            assert!((a[j] - b[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_correlation_extremes() {
        let data = DMatrix::from_fn(
            50,
            2,
            |i, j| if j == 0 { i as f64 } else { (i as f64).exp() },
        );
        let s = gk_summaries(&data).unwrap();
        assert!((s[8] - 1.0).abs() < 1e-12);
        let p = GkParams {
            margins: vec![[0.0, 1.0, 0.0, 0.0]; 2],
            w: vec![30.0],
        };
        let x = gk_simulate(&p, 2000, &mut ChaCha8Rng::seed_from_u64(3));
        let s = gk_summaries(&x).unwrap();
        assert!(s[8] < -0.999);
    }

    #[test]
    fn degenerate_spread_errors() {
        let data = DMatrix::from_element(20, 1, 1.0);
        assert!(gk_summaries(&data).is_err());
    }

    #[test]
    fn dimensions_by_q() {
        for (q, p) in [(1, 4), (2, 9), (3, 15)] {
            let params = GkParams {
                margins: vec![[0.0, 0.02, 0.1, 0.1]; q],
                w: vec![0.5; angle_count(q)],
            };
            let x = gk_simulate(&params, 100, &mut ChaCha8Rng::seed_from_u64(q as u64));
            let model = GandK::from_data(&x).unwrap();
            assert_eq!(model.param_dim(), p);
            assert_eq!(model.summary_dim(), p);
            assert_eq!(model.param_names().len(), p);
            let theta = params.to_tilde().unwrap();
            let s = model
                .simulate_summary(&theta, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap();
            assert_eq!(s.len(), p);
        }
    }

    #[test]
    fn simulated_octiles_converge_to_exact() {
        let (a, b, g, k) = (0.01, 0.02, 0.4, 0.1);
        let p = GkParams {
            margins: vec![[a, b, g, k]],
            w: vec![],
        };
        let x = gk_simulate(&p, 400_000, &mut ChaCha8Rng::seed_from_u64(12));
        let s = gk_summaries(&x).unwrap();
        let e: Vec<f64> = (0..8)
            .map(|j| {
                if j == 0 {
                    0.0
                } else {
                    gk_quantile(j as f64 / 8.0, a, b, g, k).unwrap()
                }
            })
            .collect();
        let sb = e[6] - e[2];
        let exact = [
            e[4],
            sb,
            (e[7] - e[5] + e[3] - e[1]) / sb,
            (e[6] + e[2] - 2.0 * e[4]) / sb,
        ];
        for j in 0..4 {
            assert!(
                (s[j] - exact[j]).abs() < 0.01 * exact[j].abs().max(0.1),
                "{j}: {} vs {}",
                s[j],
                exact[j]
            );
        }
    }
}
