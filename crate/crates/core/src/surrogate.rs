//! Density-ratio surrogate loss estimation.
//!
//! Queries are sampled from a Gaussian p = N(μ, Σ). A single bandit value Y
//! observed at the sample X yields an unbiased estimate of the smoothed
//! surrogate s(z) = (1 − 1/λ)·E[f(X)] + (1/λ)·E[f((1 − λ)X + λz)] through
//! the density ratio
//!
//!   R(z) = p((X − λz)/(1 − λ)) / ((1 − λ)^d · p(X)),
//!
//! together with its gradient and Hessian in z. The quadratic model built
//! from those derivatives at z = μ is what the optimizer ingests each round.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::Result;

/// Sampling law and smoothing parameter for one round of estimation.
#[derive(Debug, Clone)]
pub struct SurrogateParams {
    /// Smoothing parameter λ ∈ (0, 1).
    pub lambda: f64,
    /// Gaussian mean μ.
    pub mu: DVector<f64>,
    /// Precision matrix Σ^{-1}, symmetric positive definite.
    pub precision: DMatrix<f64>,
    /// Factor S with S·Sᵀ = Σ, used for sampling.
    pub covariance_factor: DMatrix<f64>,
}

fn check_spd(precision: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = precision.nrows();
    if precision.ncols() != d {
        return Err(Error::InvalidInput("precision matrix is not square".into()));
    }
    if precision.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("precision matrix has non-finite entries".into()));
    }
    let asym = (precision - precision.transpose()).amax();
    if asym > 1e-12 * precision.amax().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "precision matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let eig = precision.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < 1e-12) {
        return Err(Error::InvalidInput(
            "precision matrix has an eigenvalue below 1e-12".into(),
        ));
    }
    Ok((eig.eigenvectors, eig.eigenvalues))
}

impl SurrogateParams {
    /// Build params from λ, μ and the precision Σ^{-1}; the covariance
    /// factor is derived from the precision's eigendecomposition.
    pub fn new(lambda: f64, mu: DVector<f64>, precision: DMatrix<f64>) -> Result<SurrogateParams> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidInput(format!("lambda must lie in (0, 1), got {lambda}")));
        }
        if mu.len() != precision.nrows() {
            return Err(Error::InvalidInput("mu and precision dimensions differ".into()));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mu has non-finite coordinates".into()));
        }
        let (u, lam) = check_spd(&precision)?;
        let factor = &u * DMatrix::from_diagonal(&lam.map(|l| 1.0 / l.sqrt())) * u.transpose();
        Ok(SurrogateParams {
            lambda,
            mu,
            precision,
            covariance_factor: factor,
        })
    }

    /// Build params from a precomputed covariance factor, checking that it
    /// is consistent with the precision: S·Sᵀ must equal Σ = (Σ^{-1})^{-1}
    /// within 1e-8 relative Frobenius error.
    pub fn from_parts(
        lambda: f64,
        mu: DVector<f64>,
        precision: DMatrix<f64>,
        covariance_factor: DMatrix<f64>,
    ) -> Result<SurrogateParams> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidInput(format!("lambda must lie in (0, 1), got {lambda}")));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mu has non-finite coordinates".into()));
        }
        let (u, lam) = check_spd(&precision)?;
        let sigma = &u * DMatrix::from_diagonal(&lam.map(|l| 1.0 / l)) * u.transpose();
        let product = &covariance_factor * covariance_factor.transpose();
        let rel = (&product - &sigma).norm() / sigma.norm();
        if !(rel <= 1e-8) {
            return Err(Error::InvalidInput(format!(
                "covariance factor inconsistent with precision (relative error {rel:e})"
            )));
        }
        Ok(SurrogateParams {
            lambda,
            mu,
            precision,
            covariance_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Draw X = μ + S·w with w standard normal.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        sample_gaussian(&self.mu, &self.covariance_factor, rng)
    }

    /// ‖v‖² in the precision metric.
    fn quad(&self, v: &DVector<f64>) -> f64 {
        (&self.precision * v).dot(v)
    }
}

/// X = mu + factor·w with w a standard normal vector.
pub fn sample_gaussian<R: Rng>(
    mu: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let w = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mu + factor * w
}

/// One-sample surrogate estimate at a point z: the density ratio, the
/// surrogate value, and its gradient and Hessian in z.
#[derive(Debug, Clone)]
pub struct SurrogateEstimate {
    pub ratio: f64,
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

fn log_density_ratio(params: &SurrogateParams, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let d = params.dim() as f64;
    let lam = params.lambda;
    let shifted = (x - z * lam) / (1.0 - lam) - &params.mu;
    let centered = x - &params.mu;
    -d * (1.0 - lam).ln() + 0.5 * (params.quad(&centered) - params.quad(&shifted))
}

/// R(z) = p((X − λz)/(1 − λ)) / ((1 − λ)^d p(X)), computed in log space.
/// Ratios with log R > 700 would overflow a double and are reported as a
/// hard error (they indicate mis-tuned constants upstream).
pub fn density_ratio(params: &SurrogateParams, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    if x.len() != params.dim() || z.len() != params.dim() {
        return Err(Error::InvalidInput("density_ratio dimension mismatch".into()));
    }
    let log_r = log_density_ratio(params, x, z);
    if log_r > 700.0 {
        return Err(Error::RatioOverflow { log_ratio: log_r });
    }
    Ok(log_r.exp())
}

/// Surrogate value/gradient/Hessian at z from one sampled query (X, Y):
///
///   ŝ(z) = Y·(1 + (R − 1)/λ),
///   ŝ′(z) = (Y·R/(1 − λ))·Σ^{-1}w,
///   ŝ″(z) = (λYR/(1 − λ)²)·(Σ^{-1}wwᵀΣ^{-1} − Σ^{-1}),
///
/// with w = (X − λz)/(1 − λ) − μ. The Hessian is symmetrized after assembly.
pub fn estimate(
    params: &SurrogateParams,
    x: &DVector<f64>,
    y: f64,
    z: &DVector<f64>,
) -> Result<SurrogateEstimate> {
    if !y.is_finite() {
        return Err(Error::InvalidInput(format!("observation Y is not finite: {y}")));
    }
    let r = density_ratio(params, x, z)?;
    let lam = params.lambda;
    let w = (x - z * lam) / (1.0 - lam) - &params.mu;
    let pw = &params.precision * &w;
    let value = y * (1.0 + (r - 1.0) / lam);
    let grad = &pw * (y * r / (1.0 - lam));
    let scale = lam * y * r / ((1.0 - lam) * (1.0 - lam));
    let hess_raw = (&pw * pw.transpose() - &params.precision) * scale;
    let hess = 0.5 * (&hess_raw + hess_raw.transpose());
    if grad.iter().any(|v| !v.is_finite()) || hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal("surrogate derivatives are not finite".into()));
    }
    Ok(SurrogateEstimate { ratio: r, value, grad, hess })
}

/// The quadratic model q̂(x) = ⟨g, x − μ⟩ + ¼‖x − μ‖²_H built from a
/// surrogate estimate; its Hessian contribution to a potential is H/2.
pub fn quad_surrogate_eval(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    mu: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    let u = x - mu;
    g.dot(&u) + 0.25 * (h * &u).dot(&u)
}

/// Quadratic loss f(x) = ½xᵀAx + bᵀx + c with symmetric A.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<QuadraticLoss> {
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(Error::InvalidInput("quadratic loss shape mismatch".into()));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-12 * a.amax().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "quadratic loss matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(QuadraticLoss { a, b, c })
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a * x).dot(x) + self.b.dot(x) + self.c
    }

    /// E[f(X)] for X ~ N(m, S): ½mᵀAm + ½tr(AS) + bᵀm + c.
    fn gaussian_mean(&self, m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
        let tr = (&self.a * s).trace();
        0.5 * (&self.a * m).dot(m) + 0.5 * tr + self.b.dot(m) + self.c
    }
}

/// Exact surrogate of a quadratic loss under Gaussian sampling.
#[derive(Debug, Clone)]
pub struct ExactSurrogate {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Closed form of s(z) = (1 − 1/λ)E[f(X)] + (1/λ)E[f((1 − λ)X + λz)] for a
/// quadratic f, with gradient A((1 − λ)μ + λz) + b and Hessian λA.
pub fn s_exact_quadratic(
    params: &SurrogateParams,
    loss: &QuadraticLoss,
    z: &DVector<f64>,
) -> Result<ExactSurrogate> {
    if loss.b.len() != params.dim() || z.len() != params.dim() {
        return Err(Error::InvalidInput("s_exact_quadratic dimension mismatch".into()));
    }
    let asym = (&loss.a - loss.a.transpose()).amax();
    if asym > 1e-12 * loss.a.amax().max(1.0) {
        return Err(Error::InvalidInput("quadratic loss matrix is not symmetric".into()));
    }
    let lam = params.lambda;
    let sigma = &params.covariance_factor * params.covariance_factor.transpose();
    let m2 = &params.mu * (1.0 - lam) + z * lam;
    let s2 = &sigma * ((1.0 - lam) * (1.0 - lam));
    let value = (1.0 - 1.0 / lam) * loss.gaussian_mean(&params.mu, &sigma)
        + (1.0 / lam) * loss.gaussian_mean(&m2, &s2);
    let grad = &loss.a * &m2 + &loss.b;
    let hess = &loss.a * lam;
    Ok(ExactSurrogate { value, grad, hess })
}

/// Monte Carlo estimate of s(z) for an arbitrary loss evaluable on all of
/// ℝ^d: the sample mean of (1 − 1/λ)f(X) + (1/λ)f((1 − λ)X + λz) over
/// X ~ N(μ, Σ), with its standard error.
pub fn s_monte_carlo<F, R>(
    params: &SurrogateParams,
    loss: F,
    z: &DVector<f64>,
    n_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    F: Fn(&DVector<f64>) -> f64,
    R: Rng,
{
    if n_samples == 0 {
        return Err(Error::InvalidInput("Monte Carlo needs at least one sample".into()));
    }
    let lam = params.lambda;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n_samples {
        let x = params.sample(rng);
        let blend = &x * (1.0 - lam) + z * lam;
        let v = (1.0 - 1.0 / lam) * loss(&x) + (1.0 / lam) * loss(&blend);
        sum += v;
        sumsq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sumsq / n) - mean * mean).max(0.0);
    let se = if n_samples > 1 { (var / (n - 1.0)).sqrt() } else { f64::INFINITY };
    Ok((mean, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_params(d: usize, lambda: f64) -> SurrogateParams {
        SurrogateParams::new(lambda, DVector::zeros(d), DMatrix::identity(d, d)).unwrap()
    }

    #[test]
    fn ratio_at_the_mean_is_shrink_power() {
        let p = identity_params(2, 0.1);
        let r = density_ratio(&p, &p.mu.clone(), &p.mu.clone()).unwrap();
        assert!((r - 0.9_f64.powi(-2)).abs() < 1e-12, "got {r}");

        let p5 = identity_params(5, 0.37);
        let r5 = density_ratio(&p5, &p5.mu.clone(), &p5.mu.clone()).unwrap();
        assert!((r5 - 0.63_f64.powi(-5)).abs() < 1e-10);
    }

    #[test]
    fn ratio_hand_computed_one_dimensional() {
        let p = identity_params(1, 0.5);
        let x = DVector::from_vec(vec![1.0]);
        let z = DVector::zeros(1);
        let r = density_ratio(&p, &x, &z).unwrap();
        let expected = 2.0 * (-1.5_f64).exp();
        assert!((r - expected).abs() < 1e-12, "got {r}, want {expected}");
    }

    #[test]
    fn ratio_overflow_is_a_hard_error() {
        let p = identity_params(1, 0.5);
        // X far out makes the shifted density explode.
        let x = DVector::from_vec(vec![60.0]);
        let z = DVector::from_vec(vec![130.0]);
        match density_ratio(&p, &x, &z) {
            Err(Error::RatioOverflow { log_ratio }) => assert!(log_ratio > 700.0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn estimate_at_mean_matches_closed_forms() {
        let p = identity_params(2, 0.1);
        let mu = p.mu.clone();
        let est = estimate(&p, &mu, 1.0, &mu).unwrap();
        let r = 0.9_f64.powi(-2);
        assert!((est.value - (1.0 + (r - 1.0) / 0.1)).abs() < 1e-10);
        assert!(est.grad.norm() < 1e-14, "w = 0 forces zero gradient");
        let expected_h = -(0.1 * r / (0.9 * 0.9));
        assert!((est.hess[(0, 0)] - expected_h).abs() < 1e-10);
        assert!((est.hess[(1, 1)] - expected_h).abs() < 1e-10);
        assert!(est.hess[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn estimate_gradient_hand_computed() {
        let p = identity_params(1, 0.5);
        let x = DVector::from_vec(vec![1.0]);
        let z = DVector::zeros(1);
        let est = estimate(&p, &x, 1.0, &z).unwrap();
        let r = 2.0 * (-1.5_f64).exp();
        assert!((est.ratio - r).abs() < 1e-12);
        // w = 2, g = (R/0.5)·2 = 4R.
        assert!((est.grad[0] - 4.0 * r).abs() < 1e-10, "got {}", est.grad[0]);
    }

    #[test]
    fn estimate_is_linear_in_y() {
        let p = identity_params(3, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = p.sample(&mut rng);
        let z = DVector::from_vec(vec![0.1, -0.2, 0.05]);
        let e1 = estimate(&p, &x, 0.7, &z).unwrap();
        let e2 = estimate(&p, &x, 1.4, &z).unwrap();
        assert!((e2.value - 2.0 * e1.value).abs() < 1e-12);
        assert!((e2.grad - &e1.grad * 2.0).norm() < 1e-12);
        assert!((e2.hess - &e1.hess * 2.0).norm() < 1e-12);
        let e0 = estimate(&p, &x, 0.0, &z).unwrap();
        assert_eq!(e0.value, 0.0);
        assert_eq!(e0.grad.norm(), 0.0);
        assert_eq!(e0.hess.norm(), 0.0);
    }

    #[test]
    fn estimate_hessian_is_symmetric() {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p = SurrogateParams::new(0.15, DVector::from_vec(vec![0.2, -0.1]), prec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let x = p.sample(&mut rng);
            let z = DVector::from_vec(vec![0.05, 0.3]);
            let est = estimate(&p, &x, 0.8, &z).unwrap();
            let asym = (&est.hess - est.hess.transpose()).amax();
            assert!(asym <= 1e-12 * est.hess.amax().max(1.0));
        }
    }

    #[test]
    fn quad_eval_examples() {
        let mu = DVector::zeros(2);
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let h = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(quad_surrogate_eval(&g, &h, &mu, &mu), 0.0);
        let x = DVector::from_vec(vec![2.0, 0.0]);
        assert!((quad_surrogate_eval(&g, &h, &mu, &x) - 4.0).abs() < 1e-14);
        let h0 = DMatrix::zeros(2, 2);
        assert!((quad_surrogate_eval(&g, &h0, &mu, &x) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_surrogate_collapses_for_linear_loss() {
        let p = identity_params(2, 0.3);
        let loss = QuadraticLoss::new(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![0.4, -0.7]),
            0.2,
        )
        .unwrap();
        let z = DVector::from_vec(vec![1.3, 0.5]);
        let s = s_exact_quadratic(&p, &loss, &z).unwrap();
        assert!((s.value - loss.eval(&z)).abs() < 1e-12, "linear loss: s(z) = f(z)");
        assert!((&s.grad - &loss.b).norm() < 1e-12);
        assert!(s.hess.norm() < 1e-14);
    }

    #[test]
    fn exact_surrogate_hand_computed_one_dimensional() {
        let p = identity_params(1, 0.5);
        let loss =
            QuadraticLoss::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        let z = DVector::from_vec(vec![2.0]);
        let s = s_exact_quadratic(&p, &loss, &z).unwrap();
        assert!((s.value - 0.75).abs() < 1e-12, "got {}", s.value);
    }

    #[test]
    fn exact_surrogate_is_optimistic_for_convex_quadratics() {
        let p = identity_params(2, 0.25);
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]);
        let loss = QuadraticLoss::new(a, DVector::from_vec(vec![0.1, -0.3]), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let z = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let s = s_exact_quadratic(&p, &loss, &z).unwrap();
            assert!(
                s.value <= loss.eval(&z) + 1e-9,
                "surrogate must sit below the loss: s = {}, f = {}",
                s.value,
                loss.eval(&z)
            );
        }
    }

    #[test]
    fn monte_carlo_matches_exact_for_quadratic() {
        let p = identity_params(2, 0.3);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.6]);
        let loss = QuadraticLoss::new(a, DVector::from_vec(vec![0.2, 0.0]), 0.1).unwrap();
        let z = DVector::from_vec(vec![0.5, -0.4]);
        let exact = s_exact_quadratic(&p, &loss, &z).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (mean, se) = s_monte_carlo(&p, |x| loss.eval(x), &z, 40_000, &mut rng).unwrap();
        assert!(
            (mean - exact.value).abs() <= 3.0 * se,
            "MC {mean} ± {se} vs exact {}",
            exact.value
        );
        assert!(s_monte_carlo(&p, |x| loss.eval(x), &z, 0, &mut rng).is_err());
    }

    #[test]
    fn from_parts_rejects_inconsistent_factor() {
        let bad = SurrogateParams::from_parts(
            0.2,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 1.5,
        );
        assert!(matches!(bad, Err(Error::InvalidInput(_))));
        let good = SurrogateParams::from_parts(
            0.2,
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 4.0,
            DMatrix::identity(2, 2) * 0.5,
        );
        assert!(good.is_ok());
    }

    #[test]
    fn params_reject_bad_inputs() {
        assert!(SurrogateParams::new(0.0, DVector::zeros(2), DMatrix::identity(2, 2)).is_err());
        assert!(SurrogateParams::new(1.0, DVector::zeros(2), DMatrix::identity(2, 2)).is_err());
        let tiny = DMatrix::identity(2, 2) * 1e-14;
        assert!(SurrogateParams::new(0.2, DVector::zeros(2), tiny).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(SurrogateParams::new(0.2, DVector::zeros(2), asym).is_err());
    }
}
