//! The full bandit Newton state machine: constants, quadratic potential,
//! iterate/covariance computation, meta-action sampling, focus regions,
//! exploration bonuses, restart testing, and the epoch loop for both the
//! adversarial and stochastic settings.
//!
//! One run owns its state and RNG exclusively; replicas may run concurrently
//! with no shared mutable state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::env::{best_fixed_point, LossOracle};
use crate::error::Error;
use crate::extension::{assemble_y, make_query};
use crate::geometry::PositionedBody;
use crate::qp::{
    feasibility_error, floor_spd, minimize_quadratic, minimize_smooth_convex,
    EllipsoidConstraint,
};
use crate::surrogate::{estimate, sample_gaussian, SurrogateParams};
use crate::{Mode, Result};

/// All tuned scalars for one run. Fields are public so experiments can
/// override any of them (call [`AlgoConstants::validate`] afterwards).
#[derive(Debug, Clone)]
pub struct AlgoConstants {
    pub n: usize,
    pub d: usize,
    pub delta: f64,
    /// The universal constant inside L.
    pub c_log: f64,
    /// L = C_log·(1 + ln max(n, d, 1/δ)).
    pub l: f64,
    pub eta: f64,
    pub lambda: f64,
    pub sigma_sq: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub f_max: f64,
    pub mode: Mode,
    /// Mean width of the positioned body (stochastic tuning only).
    pub mean_width: f64,
    /// The ε formula exceeded ½ and was clamped: the horizon is too short
    /// for the stated tuning (out-of-theory regime).
    pub eps_clamped: bool,
    /// The λ formula reached 1 and was clamped to 0.5.
    pub lambda_clamped: bool,
}

fn log_factor(n: usize, d: usize, delta: f64, c_log: f64) -> f64 {
    c_log * (1.0 + (n as f64).max(d as f64).max(1.0 / delta).ln())
}

fn check_base(n: usize, d: usize, delta: f64, c_log: f64) -> Result<()> {
    if n < 1 || d < 1 {
        return Err(Error::InvalidInput(format!("need n ≥ 1 and d ≥ 1, got n={n}, d={d}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0,1), got {delta}")));
    }
    if !(c_log > 0.0 && c_log.is_finite()) {
        return Err(Error::InvalidInput(format!("C_log must be positive, got {c_log}")));
    }
    Ok(())
}

/// Adversarial tuning: λ = 1/(d³L⁵), γ = 1/(4dL), η = √(d/(nL³)),
/// σ² = 1/d², ε = d^{3.5}L^{8.5}/√n (clamped to 0.49), F_max = d⁵L⁸.
pub fn constants_adversarial(n: usize, d: usize, delta: f64, c_log: f64) -> Result<AlgoConstants> {
    check_base(n, d, delta, c_log)?;
    let df = d as f64;
    let nf = n as f64;
    let l = log_factor(n, d, delta, c_log);
    let eps_raw = df.powf(3.5) * l.powf(8.5) / nf.sqrt();
    let eps_clamped = eps_raw > 0.49;
    let k = AlgoConstants {
        n,
        d,
        delta,
        c_log,
        l,
        eta: (df / (nf * l.powi(3))).sqrt(),
        lambda: 1.0 / (df.powi(3) * l.powi(5)),
        sigma_sq: 1.0 / (df * df),
        gamma: 1.0 / (4.0 * df * l),
        epsilon: if eps_clamped { 0.49 } else { eps_raw },
        f_max: df.powi(5) * l.powi(8),
        mode: Mode::Adversarial,
        mean_width: 1.0,
        eps_clamped,
        lambda_clamped: false,
    };
    k.validate()?;
    Ok(k)
}

/// Stochastic tuning: γ = 0, η = Md/√n, λ = 5/(Md^{3/2}L³) (clamped to 0.5
/// when the formula reaches 1), σ² = 1/(16M²dL³), ε = Md²L⁵/√n (clamped),
/// F_max = 25M²d³L⁵.
pub fn constants_stochastic(
    n: usize,
    d: usize,
    delta: f64,
    m: f64,
    c_log: f64,
) -> Result<AlgoConstants> {
    check_base(n, d, delta, c_log)?;
    let df = d as f64;
    let nf = n as f64;
    if !(m >= 1.0 / df.sqrt() - 1e-12 && m <= 1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "mean width must lie in [d^(-1/2), 1] = [{:.4}, 1], got {m}",
            1.0 / df.sqrt()
        )));
    }
    let l = log_factor(n, d, delta, c_log);
    let lambda_raw = 5.0 / (m * df.powf(1.5) * l.powi(3));
    let lambda_clamped = lambda_raw >= 1.0;
    let eps_raw = m * df * df * l.powi(5) / nf.sqrt();
    let eps_clamped = eps_raw > 0.49;
    let k = AlgoConstants {
        n,
        d,
        delta,
        c_log,
        l,
        eta: m * df / nf.sqrt(),
        lambda: if lambda_clamped { 0.5 } else { lambda_raw },
        sigma_sq: 1.0 / (16.0 * m * m * df * l.powi(3)),
        gamma: 0.0,
        epsilon: if eps_clamped { 0.49 } else { eps_raw },
        f_max: 25.0 * m * m * df.powi(3) * l.powi(5),
        mode: Mode::Stochastic,
        mean_width: m,
        eps_clamped,
        lambda_clamped,
    };
    k.validate()?;
    Ok(k)
}

impl AlgoConstants {
    pub fn validate(&self) -> Result<()> {
        check_base(self.n, self.d, self.delta, self.c_log)?;
        let positive = [
            ("L", self.l),
            ("eta", self.eta),
            ("sigma_sq", self.sigma_sq),
            ("F_max", self.f_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must lie in (0,1), got {}",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidInput(format!(
                "epsilon must lie in (0,1/2), got {}",
                self.epsilon
            )));
        }
        if self.gamma < 0.0 || self.gamma >= 0.5 {
            return Err(Error::InvalidInput(format!(
                "gamma must lie in [0,1/2), got {}",
                self.gamma
            )));
        }
        if self.mode == Mode::Stochastic && self.gamma != 0.0 {
            return Err(Error::InvalidInput("stochastic mode requires gamma = 0".into()));
        }
        Ok(())
    }

    /// Restart threshold θ = 160·F_max/(d²L^{2.5}) + γ·F_max/32.
    pub fn restart_threshold(&self) -> f64 {
        let df = self.d as f64;
        160.0 * self.f_max / (df * df * self.l.powf(2.5)) + self.gamma * self.f_max / 32.0
    }

    /// Convexifier coefficient κ = 160·λ·L³·√(nd) for the restart statistic.
    pub fn restart_kappa(&self) -> f64 {
        160.0 * self.lambda * self.l.powi(3) * ((self.n * self.d) as f64).sqrt()
    }

    /// Eigenvalue floor applied to Φ'' before it is used as a precision.
    pub fn precision_floor(&self) -> f64 {
        1e-10 / self.sigma_sq
    }
}

/// Φ(x) = ½xᵀPx + bᵀx + c, accumulated over a single epoch.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    pub p: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticPotential {
    /// Epoch start: Φ₀(x) = ‖x‖²/(2σ²).
    pub fn new(d: usize, sigma_sq: f64) -> QuadraticPotential {
        QuadraticPotential {
            p: DMatrix::identity(d, d) / sigma_sq,
            b: DVector::zeros(d),
            c: 0.0,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.p * x).dot(x) + self.b.dot(x) + self.c
    }
}

/// Adds one round's terms to the potential: always η·q̂_t with
/// q̂_t(x) = ⟨g, x−μ_t⟩ + ¼‖x−μ_t‖²_H (so P gains η·H/2), and, when a bonus
/// fired, ♭_t(x) = −γ‖x−μ_t‖²_{Σ_t^{-1}} (so P loses 2γ·Σ_t^{-1}).
pub fn potential_ingest(
    potential: &mut QuadraticPotential,
    eta: f64,
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    mu: &DVector<f64>,
    bonus: Option<(&DMatrix<f64>, f64)>,
) -> Result<()> {
    let asym = (h - h.transpose()).amax();
    if asym > 1e-12 * h.amax().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "estimate Hessian is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let hmu = h * mu;
    potential.p += h * (eta / 2.0);
    potential.b += (g - &hmu * 0.5) * eta;
    potential.c += eta * (0.25 * hmu.dot(mu) - g.dot(mu));
    if let Some((prec, gamma)) = bonus {
        let pmu = prec * mu;
        potential.p -= prec * (2.0 * gamma);
        potential.b += &pmu * (2.0 * gamma);
        potential.c -= gamma * pmu.dot(mu);
    }
    Ok(())
}

/// Rounds where a bonus fired: their centers and precisions, the count m,
/// and the weight w = (1−2γ)^m.
#[derive(Debug, Clone)]
pub struct BonusLedger {
    entries: Vec<(DVector<f64>, DMatrix<f64>)>,
    aggregate: DMatrix<f64>,
    weighted_center: DVector<f64>,
    gamma: f64,
}

impl BonusLedger {
    pub fn new(d: usize, gamma: f64) -> BonusLedger {
        BonusLedger {
            entries: Vec::new(),
            aggregate: DMatrix::zeros(d, d),
            weighted_center: DVector::zeros(d),
            gamma,
        }
    }

    pub fn m(&self) -> usize {
        self.entries.len()
    }

    /// w = (1−2γ)^m, exactly.
    pub fn w(&self) -> f64 {
        (1.0 - 2.0 * self.gamma).powi(self.m() as i32)
    }

    pub fn entries(&self) -> &[(DVector<f64>, DMatrix<f64>)] {
        &self.entries
    }

    /// Σ_{s∈E} Σ_s^{-1}.
    pub fn aggregate(&self) -> &DMatrix<f64> {
        &self.aggregate
    }

    pub fn push(&mut self, mu: DVector<f64>, precision: DMatrix<f64>) {
        self.aggregate += &precision;
        self.weighted_center += &precision * &mu;
        self.entries.push((mu, precision));
    }

    /// Σ_{s∈E} ‖z − μ_s‖²_{Σ_s^{-1}}.
    pub fn dispersion(&self, z: &DVector<f64>) -> f64 {
        self.entries
            .iter()
            .map(|(mu, prec)| {
                let v = z - mu;
                (prec * &v).dot(&v)
            })
            .sum()
    }
}

/// Bonus anchor z_t = argmin_z Σ_{s∈E}‖z−μ_s‖²_{Σ_s^{-1}}, in closed form
/// (Σ_s Σ_s^{-1})^{-1}·Σ_s Σ_s^{-1}μ_s. An empty ledger returns μ_t by
/// convention.
pub fn compute_z(ledger: &BonusLedger, mu_t: &DVector<f64>) -> Result<DVector<f64>> {
    if ledger.entries.is_empty() {
        return Ok(mu_t.clone());
    }
    ledger
        .aggregate
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&ledger.weighted_center))
        .or_else(|| ledger.aggregate.clone().lu().solve(&ledger.weighted_center))
        .ok_or_else(|| {
            Error::Internal("singular bonus aggregate despite floored precisions".into())
        })
}

/// Whether a bonus fires this round, via the four branches in order:
/// (1) ledger dispersion at z_t already ≥ F_max/24 → none;
/// (2) PSD domination Σ_t^{-1} ⪯ Σ_{s∈E}Σ_s^{-1} fails → bonus;
/// (3) ‖μ_t − z_t‖²_{Σ_t^{-1}} ≥ F_max/3 → bonus;
/// (4) otherwise none.
/// Returns the deciding branch alongside. At t = 1 the empty ledger makes
/// branch (2) fire (Σ₁^{-1} ⪯ 0 fails); callers flag that round.
pub fn bonus_decision(
    ledger: &BonusLedger,
    z_t: &DVector<f64>,
    mu_t: &DVector<f64>,
    precision: &DMatrix<f64>,
    f_max: f64,
) -> (bool, u8) {
    if ledger.dispersion(z_t) >= f_max / 24.0 {
        return (false, 1);
    }
    let diff = ledger.aggregate() - precision;
    let min_eig = diff
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let prec_norm = precision
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b.abs()));
    if min_eig < -1e-10 * prec_norm {
        return (true, 2);
    }
    let v = mu_t - z_t;
    if (precision * &v).dot(&v) >= f_max / 3.0 {
        return (true, 3);
    }
    (false, 4)
}

/// History entry for the restart statistic: the sampling parameters, the
/// sampled point, the assembled observation, and the cached base quadratic
/// form ‖X_u − μ_u‖²_{P_u}.
#[derive(Debug, Clone)]
pub struct SurrogateRecord {
    pub params: SurrogateParams,
    pub x: DVector<f64>,
    pub y: f64,
    base_qform: f64,
}

impl SurrogateRecord {
    fn new(params: SurrogateParams, x: DVector<f64>, y: f64) -> SurrogateRecord {
        let v = &x - &params.mu;
        let base_qform = (&params.precision * &v).dot(&v);
        SurrogateRecord { params, x, y, base_qform }
    }

    /// ŝ_u(y) and its gradient (Y_u·R_u(y)/(1−λ))·P_u·w_u(y), where
    /// w_u(y) = (X_u − λy)/(1−λ) − μ_u. The log-ratio is bounded above by
    /// the cached base form, so no overflow guard is needed here.
    fn eval(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let lam = self.params.lambda;
        let d = y.len() as f64;
        let w = (&self.x - y * lam) / (1.0 - lam) - &self.params.mu;
        let pw = &self.params.precision * &w;
        let log_r = -d * (1.0 - lam).ln() + 0.5 * (self.base_qform - pw.dot(&w));
        let r = log_r.exp();
        let value = self.y * (1.0 + (r - 1.0) / lam);
        let grad = pw * (self.y * r / (1.0 - lam));
        (value, grad)
    }

    /// ŝ_u(y) alone, by explicit loops: the no-restart certificate walks the
    /// whole history every round, so this must not allocate.
    fn eval_value(&self, y: &DVector<f64>) -> f64 {
        let lam = self.params.lambda;
        let d = y.len();
        let inv = 1.0 / (1.0 - lam);
        let p = &self.params.precision;
        let mut quad = 0.0;
        for i in 0..d {
            let wi = (self.x[i] - lam * y[i]) * inv - self.params.mu[i];
            quad += p[(i, i)] * wi * wi;
            for j in (i + 1)..d {
                let wj = (self.x[j] - lam * y[j]) * inv - self.params.mu[j];
                quad += 2.0 * p[(i, j)] * wi * wj;
            }
        }
        let log_r = -(d as f64) * (1.0 - lam).ln() + 0.5 * (self.base_qform - quad);
        self.y * (1.0 + (log_r.exp() - 1.0) / lam)
    }
}

/// Mutable state for one epoch. A restart replaces the whole struct.
#[derive(Debug, Clone)]
pub struct EpochState {
    /// Rounds completed in this epoch.
    pub t_in_epoch: usize,
    pub potential: QuadraticPotential,
    pub focus: Vec<EllipsoidConstraint>,
    pub ledger: BonusLedger,
    pub mu: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub covariance_factor: DMatrix<f64>,
    pub history: Vec<SurrogateRecord>,
    /// Σ_u ŝ_u(μ_u) over this epoch.
    pub shat_at_mu_sum: f64,
    /// Minimizer from the last full restart solve, reused as a cheap
    /// no-restart certificate.
    cached_certificate: Option<DVector<f64>>,
    /// Σ_u H_u/w_u for the main-text covariance display (instrumentation).
    alt_hess_sum: DMatrix<f64>,
}

impl EpochState {
    pub fn new(d: usize, constants: &AlgoConstants) -> EpochState {
        EpochState {
            t_in_epoch: 0,
            potential: QuadraticPotential::new(d, constants.sigma_sq),
            focus: Vec::new(),
            ledger: BonusLedger::new(d, constants.gamma),
            mu: DVector::zeros(d),
            precision: DMatrix::identity(d, d) / constants.sigma_sq,
            covariance_factor: DMatrix::identity(d, d) * constants.sigma_sq.sqrt(),
            history: Vec::new(),
            shat_at_mu_sum: 0.0,
            cached_certificate: None,
            alt_hess_sum: DMatrix::zeros(d, d),
        }
    }
}

/// μ_t = argmin over K_ε ∩ focus of the current potential, with
/// Σ_t^{-1} = eigenvalue-floored Φ'' and Σ_t^{1/2} from the same
/// eigendecomposition. Returns (μ_t, precision, factor, floored count).
pub fn compute_iterate_and_covariance(
    state: &EpochState,
    pos: &PositionedBody,
    constants: &AlgoConstants,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>, usize)> {
    let fp = floor_spd(&state.potential.p, constants.precision_floor())?;
    let warm = if state.t_in_epoch > 0 { Some(&state.mu) } else { None };
    let sol = minimize_quadratic(
        &state.potential.p,
        &state.potential.b,
        pos.eps_body(),
        &state.focus,
        constants.precision_floor(),
        1e-9,
        warm,
    )?;
    Ok((sol.x, fp.precision, fp.factor, fp.floored))
}

/// X = μ + Σ^{1/2}·w with w standard normal.
pub fn sample_meta_action<R: Rng>(
    mu: &DVector<f64>,
    covariance_factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    sample_gaussian(mu, covariance_factor, rng)
}

/// Appends the round's focus constraint ‖x−μ_t‖²_{Σ_t^{-1}} ≤ F_max.
pub fn update_focus(
    focus: &mut Vec<EllipsoidConstraint>,
    mu: &DVector<f64>,
    precision: &DMatrix<f64>,
    f_max: f64,
) -> Result<()> {
    focus.push(EllipsoidConstraint::new(mu.clone(), precision.clone(), f_max)?);
    Ok(())
}

/// Everything the restart test decides and measures.
#[derive(Debug, Clone)]
pub struct RestartReport {
    pub restart: bool,
    /// η·(Σ_u ŝ_u(μ_u) − min G): the convexified regret statistic.
    pub statistic: f64,
    /// θ: restart iff statistic ≤ −θ.
    pub threshold: f64,
    /// min over K_t of G(y) = Σ_u ŝ_u(y) + κ‖y−μ_t‖²_{Σ_t^{-1}}.
    pub convexified_min: f64,
    pub minimizer: DVector<f64>,
    /// Σ_u ŝ_u(μ_u), for reference.
    pub shat_at_mu_sum: f64,
}

fn restart_objective(
    state: &EpochState,
    kappa: f64,
) -> impl Fn(&DVector<f64>) -> (f64, DVector<f64>) + '_ {
    move |y: &DVector<f64>| {
        let mut val = 0.0;
        let mut grad = DVector::zeros(y.len());
        for rec in &state.history {
            let (v, g) = rec.eval(y);
            val += v;
            grad += g;
        }
        let dv = y - &state.mu;
        let pdv = &state.precision * &dv;
        val += kappa * pdv.dot(&dv);
        grad += pdv * (2.0 * kappa);
        (val, grad)
    }
}

/// G(y) without the gradient, for the per-round no-restart certificate.
fn restart_value(state: &EpochState, kappa: f64, y: &DVector<f64>) -> f64 {
    let mut val = 0.0;
    for rec in &state.history {
        val += rec.eval_value(y);
    }
    let d = y.len();
    let mut q = 0.0;
    for i in 0..d {
        let ui = y[i] - state.mu[i];
        q += state.precision[(i, i)] * ui * ui;
        for j in (i + 1)..d {
            q += 2.0 * state.precision[(i, j)] * ui * (y[j] - state.mu[j]);
        }
    }
    val + kappa * q
}

/// G(y) = Σ_u ŝ_u(y) + κ‖y−μ_t‖²_{Σ_t^{-1}} and its gradient at one point
/// (instrumentation for external oracles; [`restart_test`] minimizes it).
pub fn restart_objective_at(
    state: &EpochState,
    constants: &AlgoConstants,
    y: &DVector<f64>,
) -> (f64, DVector<f64>) {
    restart_objective(state, constants.restart_kappa())(y)
}

/// Raw epoch sum Σ_u ŝ_u(y) with no convexifier (instrumentation only; the
/// restart decision never uses it).
pub fn epoch_shat_sum_at(state: &EpochState, y: &DVector<f64>) -> f64 {
    state.history.iter().map(|rec| rec.eval_value(y)).sum()
}

/// Full restart test: minimizes the convexified epoch objective
/// G(y) = Σ_u ŝ_u(y) + κ‖y−μ_t‖²_{Σ_t^{-1}} over K_t = K_ε ∩ focus and
/// compares the statistic η·(Σ_u ŝ_u(μ_u) − min G) against −θ.
pub fn restart_test(
    state: &EpochState,
    constants: &AlgoConstants,
    pos: &PositionedBody,
) -> Result<RestartReport> {
    if state.history.is_empty() {
        return Err(Error::InvalidInput("restart test needs a nonempty history".into()));
    }
    let kappa = constants.restart_kappa();
    let threshold = constants.restart_threshold();
    let objective = restart_objective(state, kappa);
    let sol = minimize_smooth_convex(&objective, pos.eps_body(), &state.focus, 1e-9, &state.mu)?;
    let (g_min, _) = objective(&sol.x);
    let statistic = constants.eta * (state.shat_at_mu_sum - g_min);
    Ok(RestartReport {
        restart: statistic <= -threshold,
        statistic,
        threshold,
        convexified_min: g_min,
        minimizer: sol.x,
        shat_at_mu_sum: state.shat_at_mu_sum,
    })
}

/// One trace row per round.
#[derive(Debug, Clone)]
pub struct TraceRow {
    /// Epoch index, starting at 1.
    pub epoch: usize,
    /// Global round, 1-based.
    pub t: usize,
    /// Round within the epoch, 1-based.
    pub t_epoch: usize,
    pub mu: DVector<f64>,
    pub x: DVector<f64>,
    pub action: DVector<f64>,
    pub y: f64,
    pub pip: f64,
    /// Bonus count after this round.
    pub m: usize,
    /// Ledger weight after this round.
    pub w: f64,
    pub restart: bool,
    /// Deciding bonus branch 1..=4 (0 in stochastic mode).
    pub bonus_branch: u8,
    pub bonus_fired: bool,
    /// Bonus fired with an empty ledger (the flagged t=1 artifact of the
    /// literal branch order).
    pub bonus_at_empty_ledger: bool,
    /// Eigenvalues floored when forming this round's precision.
    pub floored: usize,
    /// Relative residual of P against (1−2γ_t)P_prev + (η/2)H_t; NaN when
    /// flooring made the identity inapplicable.
    pub recursion_rel_err: f64,
    /// Relative deviation of the main-text covariance display from the
    /// recursion-defined precision (instrumentation only).
    pub maintext_rel_dev: f64,
    /// ŝ_t(μ_t).
    pub shat_value: f64,
    /// Global running Σ ŝ_u(μ_u).
    pub cum_shat_stat: f64,
    /// Σ_{u≤t} ℓ_u(A_u) − ℓ_u(x⋆), filled post hoc (NaN when no comparator
    /// is available).
    pub cum_true_regret: f64,
}

/// Full run record.
#[derive(Debug, Clone)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
    pub restarts: usize,
    pub bonus_count: usize,
    pub flooring_events: usize,
    /// Offline comparator x⋆ (None when the body has no exact projection).
    pub comparator: Option<DVector<f64>>,
    pub comparator_total_loss: f64,
    pub final_regret: f64,
}

/// A run that may have aborted mid-way: the trace holds every completed
/// round; `fault` is the error that stopped the run, if any.
#[derive(Debug)]
pub struct RunOutput {
    pub trace: RegretTrace,
    pub fault: Option<Error>,
}

struct RoundInternal {
    restart: bool,
}

/// Relative Frobenius residual of P against the one-step recursion
/// (1−2γ_t)·P_prev + (η/2)·H. Exact (up to roundoff) whenever the bonus
/// precision equals P_prev, i.e. whenever flooring was the identity.
fn recursion_residual(
    p_new: &DMatrix<f64>,
    p_prev: &DMatrix<f64>,
    h: &DMatrix<f64>,
    eta: f64,
    gamma_t: f64,
) -> f64 {
    let target = p_prev * (1.0 - 2.0 * gamma_t) + h * (eta / 2.0);
    let denom = p_new.norm().max(1e-300);
    (p_new - target).norm() / denom
}

#[allow(clippy::too_many_arguments)]
fn advance_round<R: Rng>(
    state: &mut EpochState,
    oracle: &LossOracle,
    pos: &PositionedBody,
    constants: &AlgoConstants,
    rng: &mut R,
    t: usize,
    rows: &mut Vec<TraceRow>,
    global_shat: &mut f64,
    flooring_events: &mut usize,
    bonus_count: &mut usize,
    check_restart: bool,
) -> Result<RoundInternal> {
    let (mu, precision, factor, floored) = compute_iterate_and_covariance(state, pos, constants)?;
    // Main-text display Σ_t^{-1} = w_{t−1}[1/σ² + ηΣ_{u<t}H_u/w_u], recorded
    // against the recursion-defined precision before this round's ingest.
    let d = pos.dim();
    let alt = (DMatrix::identity(d, d) / constants.sigma_sq + &state.alt_hess_sum * constants.eta)
        * state.ledger.w();
    let maintext_rel_dev = (&alt - &precision).norm() / precision.norm().max(1e-300);
    if floored > 0 {
        *flooring_events += 1;
    }
    let feas = feasibility_error(pos.eps_body(), &state.focus, &mu)?;
    if feas > 1e-7 {
        return Err(Error::Internal(format!(
            "iterate infeasible at round {t}: error {feas:e}"
        )));
    }
    state.mu = mu.clone();
    state.precision = precision.clone();
    state.covariance_factor = factor.clone();

    let params =
        SurrogateParams::from_parts(constants.lambda, mu.clone(), precision.clone(), factor)?;
    let x = sample_meta_action(&mu, &params.covariance_factor, rng);
    let query = make_query(pos, &x)?;
    let obs = oracle.query(t, &query.action)?;
    let y = assemble_y(&query, obs.value)?;
    let est = estimate(&params, &x, y, &mu)?;

    state.shat_at_mu_sum += est.value;
    *global_shat += est.value;
    update_focus(&mut state.focus, &mu, &precision, constants.f_max)?;

    let p_prev = state.potential.p.clone();
    let mut fired = false;
    let mut branch = 0u8;
    let mut at_empty = false;
    if constants.mode == Mode::Adversarial {
        let z = compute_z(&state.ledger, &mu)?;
        let (f, b) = bonus_decision(&state.ledger, &z, &mu, &precision, constants.f_max);
        fired = f;
        branch = b;
        at_empty = fired && state.ledger.m() == 0;
    }
    let bonus = if fired { Some((&precision, constants.gamma)) } else { None };
    potential_ingest(&mut state.potential, constants.eta, &est.grad, &est.hess, &mu, bonus)?;
    if fired {
        state.ledger.push(mu.clone(), precision.clone());
        *bonus_count += 1;
    }
    let gamma_t = if fired { constants.gamma } else { 0.0 };
    let recursion_rel_err = if floored == 0 {
        let err = recursion_residual(&state.potential.p, &p_prev, &est.hess, constants.eta, gamma_t);
        if err > 1e-10 {
            return Err(Error::Internal(format!(
                "covariance recursion violated at round {t}: relative residual {err:e}"
            )));
        }
        err
    } else {
        f64::NAN
    };
    state.alt_hess_sum += &est.hess / state.ledger.w();
    state.history.push(SurrogateRecord::new(params, x.clone(), y));
    state.t_in_epoch += 1;

    // Restart check (adversarial only). A point y with G(y) < S_μ + θ/η
    // certifies no restart without solving; μ_t and the last full-solve
    // minimizer are tried first.
    let mut restart = false;
    if check_restart && constants.mode == Mode::Adversarial {
        let kappa = constants.restart_kappa();
        let bound = state.shat_at_mu_sum + constants.restart_threshold() / constants.eta;
        let mut certified = restart_value(state, kappa, &state.mu) < bound;
        if !certified {
            if let Some(cand) = &state.cached_certificate {
                certified = restart_value(state, kappa, cand) < bound;
            }
        }
        if !certified {
            let report = restart_test(state, constants, pos)?;
            restart = report.restart;
            if !restart {
                state.cached_certificate = Some(report.minimizer);
            }
        }
    }

    rows.push(TraceRow {
        epoch: 0, // filled by the caller
        t,
        t_epoch: state.t_in_epoch,
        mu,
        x,
        action: query.action,
        y,
        pip: query.multiplier,
        m: state.ledger.m(),
        w: state.ledger.w(),
        restart,
        bonus_branch: branch,
        bonus_fired: fired,
        bonus_at_empty_ledger: at_empty,
        floored,
        recursion_rel_err,
        maintext_rel_dev,
        shat_value: est.value,
        cum_shat_stat: *global_shat,
        cum_true_regret: f64::NAN,
    });
    Ok(RoundInternal { restart })
}

/// Runs the full algorithm for `constants.n` rounds against an oblivious
/// oracle. Any error mid-run aborts with the trace collected so far and the
/// fault recorded; the true-regret column is filled post hoc against the
/// offline comparator.
pub fn run<R: Rng>(
    oracle: &LossOracle,
    pos: &PositionedBody,
    constants: &AlgoConstants,
    rng: &mut R,
) -> Result<RunOutput> {
    constants.validate()?;
    if oracle.horizon() < constants.n {
        return Err(Error::InvalidInput(format!(
            "oracle horizon {} is shorter than n = {}",
            oracle.horizon(),
            constants.n
        )));
    }
    if oracle.dim() != pos.dim() {
        return Err(Error::InvalidInput("oracle and body dimensions differ".into()));
    }
    let d = pos.dim();
    let mut state = EpochState::new(d, constants);
    let mut rows: Vec<TraceRow> = Vec::with_capacity(constants.n);
    let mut epoch = 1usize;
    let mut restarts = 0usize;
    let mut bonus_count = 0usize;
    let mut flooring_events = 0usize;
    let mut global_shat = 0.0;
    let mut fault = None;

    for t in 1..=constants.n {
        match advance_round(
            &mut state,
            oracle,
            pos,
            constants,
            rng,
            t,
            &mut rows,
            &mut global_shat,
            &mut flooring_events,
            &mut bonus_count,
            true,
        ) {
            Ok(internal) => {
                rows.last_mut().expect("row just pushed").epoch = epoch;
                if internal.restart {
                    restarts += 1;
                    epoch += 1;
                    state = EpochState::new(d, constants);
                }
            }
            Err(e) => {
                fault = Some(e);
                break;
            }
        }
    }

    // Offline comparator and the true-regret column.
    let mut comparator = None;
    let mut comparator_total_loss = f64::NAN;
    let mut final_regret = f64::NAN;
    match best_fixed_point(oracle, pos.body()) {
        Ok((x_star, total)) => {
            let actions: Vec<DVector<f64>> = rows.iter().map(|r| r.action.clone()).collect();
            let series = crate::env::true_regret(oracle, &actions, &x_star)?;
            for (row, reg) in rows.iter_mut().zip(series.iter()) {
                row.cum_true_regret = *reg;
            }
            final_regret = series.last().copied().unwrap_or(0.0);
            comparator = Some(x_star);
            comparator_total_loss = total;
        }
        Err(Error::UnsupportedBody(_)) => {}
        Err(e) => return Err(e),
    }

    Ok(RunOutput {
        trace: RegretTrace {
            rows,
            restarts,
            bonus_count,
            flooring_events,
            comparator,
            comparator_total_loss,
            final_regret,
        },
        fault,
    })
}

/// Advances a fresh epoch through the first `t_max` rounds without ever
/// restarting (restart decisions are not evaluated), returning the state for
/// restart-statistic diagnostics. The round dynamics are identical to
/// [`run`], which only adds the restart check on top.
pub fn probe_epoch<R: Rng>(
    oracle: &LossOracle,
    pos: &PositionedBody,
    constants: &AlgoConstants,
    rng: &mut R,
    t_max: usize,
) -> Result<EpochState> {
    constants.validate()?;
    if oracle.horizon() < t_max {
        return Err(Error::InvalidInput(format!(
            "oracle horizon {} is shorter than the probe length {t_max}",
            oracle.horizon()
        )));
    }
    let mut state = EpochState::new(pos.dim(), constants);
    let mut rows = Vec::new();
    let (mut shat, mut floors, mut bonuses) = (0.0, 0, 0);
    for t in 1..=t_max {
        advance_round(
            &mut state,
            oracle,
            pos,
            constants,
            rng,
            t,
            &mut rows,
            &mut shat,
            &mut floors,
            &mut bonuses,
            false,
        )?;
    }
    Ok(state)
}

/// FTRL regret inequality on synthetic quadratic sequences with exact
/// solves and γ = 0: for every comparator x,
/// η·Σ(f̂_t(x_t) − f̂_t(x)) ≤ ‖x‖²/(2σ²) + 2η²Σ‖f̂'_t(x_t)‖²_{(Φ''_t)^{-1}}.
/// Returns the maximum violation (LHS − RHS) over random comparators in the
/// body; non-positive values (within slack) confirm the inequality.
pub fn ftrl_quadratic_check<R: Rng>(
    d: usize,
    n_rounds: usize,
    n_comparators: usize,
    sigma_sq: f64,
    eta: f64,
    body: &crate::geometry::Body,
    rng: &mut R,
) -> Result<f64> {
    use rand_distr::StandardNormal;
    let mut potential = QuadraticPotential::new(d, sigma_sq);
    // Quadratics in the q̂ form: f̂(x) = ⟨g, x−m⟩ + ¼‖x−m‖²_H with H ⪰ 0.
    struct Quad {
        g: DVector<f64>,
        h: DMatrix<f64>,
        m: DVector<f64>,
    }
    impl Quad {
        fn value(&self, x: &DVector<f64>) -> f64 {
            let v = x - &self.m;
            self.g.dot(&v) + 0.25 * (&self.h * &v).dot(&v)
        }
        fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
            let v = x - &self.m;
            &self.g + (&self.h * &v) * 0.5
        }
    }
    let mut quads: Vec<Quad> = Vec::with_capacity(n_rounds);
    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(n_rounds);
    let mut dual_term = 0.0;
    for _ in 0..n_rounds {
        let sol = minimize_quadratic(
            &potential.p,
            &potential.b,
            body,
            &[],
            1e-10 / sigma_sq,
            1e-12,
            None,
        )?;
        let x_t = sol.x;
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = &a * a.transpose() / d as f64;
        let m = DVector::from_fn(d, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let q = Quad { g, h, m };
        potential_ingest(&mut potential, eta, &q.g, &q.h, &q.m, None)?;
        // Dual norm at the post-ingest Hessian: ‖g‖²_{(Φ''_t)^{-1}} = ‖Sᵀg‖²
        // with S·Sᵀ = (Φ''_t)^{-1}.
        let fp = floor_spd(&potential.p, 1e-10 / sigma_sq)?;
        let g_t = q.grad(&x_t);
        dual_term += (fp.factor.transpose() * &g_t).norm_squared();
        quads.push(q);
        xs.push(x_t);
    }
    let played: f64 = quads.iter().zip(xs.iter()).map(|(q, x)| q.value(x)).sum();
    let rhs_tail = 2.0 * eta * eta * dual_term;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_comparators {
        // Radial sample: a random direction pushed to a random gauge depth.
        let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let depth: f64 = rng.gen_range(0.0..1.0);
        let x = if dir.norm() < 1e-12 {
            DVector::zeros(d)
        } else {
            let g = crate::geometry::gauge(body, &dir)?;
            &dir * (depth.powf(1.0 / d as f64) / g)
        };
        let comp: f64 = quads.iter().map(|q| q.value(&x)).sum();
        let lhs = eta * (played - comp);
        let rhs = x.norm_squared() / (2.0 * sigma_sq) + rhs_tail;
        worst = worst.max(lhs - rhs);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_quadratic, LossOracle, NoiseModel, Schedule};
    use crate::geometry::Body;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn adversarial_constants_match_formulas() {
        // L = 1 when C_log cancels the log factor.
        let c_log = 1.0 / (1.0 + 4.0_f64.max(100.0).ln());
        let k = constants_adversarial(4, 2, 0.01, c_log).unwrap();
        assert!((k.l - 1.0).abs() < 1e-12);
        assert!((k.sigma_sq - 0.25).abs() < 1e-12);
        assert!((k.gamma - 0.125).abs() < 1e-12);
        assert!((k.f_max - 32.0).abs() < 1e-9);

        let k = constants_adversarial(10_000, 2, 0.01, 1.0).unwrap();
        assert!((k.l - 10.21034).abs() < 1e-4, "L = {}", k.l);
        assert!((k.gamma - 0.0122428).abs() < 1e-6, "gamma = {}", k.gamma);
        assert!((k.eta - 4.335e-4).abs() < 1e-6, "eta = {}", k.eta);
        assert!(k.eps_clamped && k.epsilon == 0.49);
        k.validate().unwrap();
    }

    #[test]
    fn stochastic_constants_match_formulas() {
        let c_log = 1.0 / (1.0 + 100.0_f64.ln());
        let k = constants_stochastic(4, 4, 0.01, 0.5, c_log).unwrap();
        assert!((k.l - 1.0).abs() < 1e-12);
        assert!((k.sigma_sq - 1.0 / 16.0).abs() < 1e-12);
        assert!((k.f_max - 400.0).abs() < 1e-9);
        assert_eq!(k.gamma, 0.0);
        // λ formula gives 5/(0.5·8·1) = 1.25 ≥ 1 → clamped.
        assert!(k.lambda_clamped && k.lambda == 0.5);

        let k = constants_stochastic(10_000, 4, 0.01, 0.5, 1.0).unwrap();
        assert!((k.eta - 0.02).abs() < 1e-12);
        assert_eq!(k.gamma, 0.0);
    }

    #[test]
    fn constants_reject_bad_inputs() {
        assert!(constants_adversarial(0, 2, 0.01, 1.0).is_err());
        assert!(constants_adversarial(10, 2, 1.5, 1.0).is_err());
        assert!(constants_stochastic(10, 4, 0.01, 0.1, 1.0).is_err()); // M < d^{-1/2}
        let mut k = constants_adversarial(100, 2, 0.01, 1.0).unwrap();
        k.gamma = 0.7;
        assert!(k.validate().is_err());
    }

    #[test]
    fn potential_ingest_scalar_examples() {
        // d=1, P=4, η=0.1, H=2, no bonus → P = 4 + 0.1·2/2 = 4.1.
        let mut pot = QuadraticPotential {
            p: DMatrix::from_element(1, 1, 4.0),
            b: DVector::zeros(1),
            c: 0.0,
        };
        let g = DVector::zeros(1);
        let h = DMatrix::from_element(1, 1, 2.0);
        let mu = DVector::zeros(1);
        potential_ingest(&mut pot, 0.1, &g, &h, &mu, None).unwrap();
        assert!((pot.p[(0, 0)] - 4.1).abs() < 1e-15);

        // Bonus recursion: P=4, γ=0.125, Σ^{-1}=4 → (1−0.25)·4 = 3.
        let mut pot = QuadraticPotential {
            p: DMatrix::from_element(1, 1, 4.0),
            b: DVector::zeros(1),
            c: 0.0,
        };
        let prec = DMatrix::from_element(1, 1, 4.0);
        let zero_h = DMatrix::zeros(1, 1);
        potential_ingest(&mut pot, 0.1, &g, &zero_h, &mu, Some((&prec, 0.125))).unwrap();
        assert!((pot.p[(0, 0)] - 3.0).abs() < 1e-15);

        // γ=0, H=0, g=0 → unchanged.
        let before = pot.p.clone();
        potential_ingest(&mut pot, 0.1, &g, &zero_h, &mu, None).unwrap();
        assert_eq!(pot.p, before);
    }

    #[test]
    fn potential_matches_accumulated_quadratic() {
        // Finite-difference-free check: eval equals the ingested pieces.
        let mut pot = QuadraticPotential::new(2, 0.5);
        let g = vec2(0.3, -0.2);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]);
        let mu = vec2(0.1, 0.4);
        potential_ingest(&mut pot, 0.2, &g, &h, &mu, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = vec2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let v = &x - &mu;
            let direct = x.norm_squared() / (2.0 * 0.5)
                + 0.2 * (g.dot(&v) + 0.25 * (&h * &v).dot(&v));
            assert!((pot.eval(&x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn compute_z_examples() {
        let empty = BonusLedger::new(2, 0.1);
        let mu_t = vec2(0.7, -0.3);
        assert_eq!(compute_z(&empty, &mu_t).unwrap(), mu_t);

        let mut single = BonusLedger::new(2, 0.1);
        single.push(vec2(0.2, 0.5), DMatrix::identity(2, 2) * 3.0);
        let z = compute_z(&single, &mu_t).unwrap();
        assert!((z - vec2(0.2, 0.5)).norm() < 1e-12);

        let mut pair = BonusLedger::new(2, 0.1);
        pair.push(vec2(0.0, 0.0), DMatrix::identity(2, 2));
        pair.push(vec2(2.0, 0.0), DMatrix::identity(2, 2));
        let z = compute_z(&pair, &mu_t).unwrap();
        assert!((z - vec2(1.0, 0.0)).norm() < 1e-12);

        // d=1, metrics 1 and 3, centers 0 and 4 → (0·1 + 4·3)/(1+3) = 3.
        let mut weighted = BonusLedger::new(1, 0.1);
        weighted.push(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0));
        weighted.push(DVector::from_element(1, 4.0), DMatrix::from_element(1, 1, 3.0));
        let z = compute_z(&weighted, &DVector::zeros(1)).unwrap();
        assert!((z[0] - 3.0).abs() < 1e-12);
        // Matches the numerical minimizer of the dispersion.
        let grid_min = (0..4000)
            .map(|i| -1.0 + i as f64 * 2e-3)
            .min_by(|a, b| {
                let da = weighted.dispersion(&DVector::from_element(1, *a));
                let db = weighted.dispersion(&DVector::from_element(1, *b));
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert!((grid_min - 3.0).abs() < 2e-3);
    }

    #[test]
    fn ledger_weight_identity() {
        let mut ledger = BonusLedger::new(2, 0.125);
        assert_eq!(ledger.w(), 1.0);
        for m in 1..=5 {
            ledger.push(DVector::zeros(2), DMatrix::identity(2, 2));
            assert_eq!(ledger.w(), 0.75_f64.powi(m));
            assert_eq!(ledger.m(), m as usize);
        }
    }

    #[test]
    fn bonus_branches_fire_in_order() {
        let f_max = 32.0;
        let prec = DMatrix::identity(2, 2) * 4.0;
        let mu = vec2(0.0, 0.0);

        // Empty ledger: branch (2) fires (Σ^{-1} ⪯ 0 fails).
        let empty = BonusLedger::new(2, 0.125);
        let z = compute_z(&empty, &mu).unwrap();
        assert_eq!(bonus_decision(&empty, &z, &mu, &prec, f_max), (true, 2));

        // Dispersion at z already ≥ F_max/24 → branch (1), no bonus.
        let mut spread = BonusLedger::new(2, 0.125);
        spread.push(vec2(-2.0, 0.0), DMatrix::identity(2, 2));
        spread.push(vec2(2.0, 0.0), DMatrix::identity(2, 2));
        let z = compute_z(&spread, &mu).unwrap(); // (0,0); dispersion 8 ≥ 32/24
        assert_eq!(bonus_decision(&spread, &z, &mu, &prec, f_max), (false, 1));

        // Domination holds, iterate near z → branch (4), no bonus.
        let mut dominated = BonusLedger::new(2, 0.125);
        dominated.push(vec2(0.1, 0.0), DMatrix::identity(2, 2) * 5.0);
        let z = compute_z(&dominated, &mu).unwrap();
        assert_eq!(bonus_decision(&dominated, &z, &mu, &prec, f_max), (false, 4));

        // Domination holds but the iterate is far from z → branch (3).
        let far = vec2(3.0, 0.0); // ‖μ−z‖² under 4I = 4·(2.9)² ≈ 33.6 ≥ 32/3
        assert_eq!(bonus_decision(&dominated, &z, &far, &prec, f_max), (true, 3));
    }

    #[test]
    fn meta_action_sampling_moments_and_determinism() {
        let mu = DVector::zeros(3);
        let factor = DMatrix::identity(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let mean_sq: f64 =
            (0..n).map(|_| sample_meta_action(&mu, &factor, &mut rng).norm_squared()).sum::<f64>()
                / n as f64;
        // ‖X‖² ~ χ²_3: mean 3, var 6 → SE = √(6/n).
        let se = (6.0 / n as f64).sqrt();
        assert!((mean_sq - 3.0).abs() < 4.0 * se, "mean {mean_sq} vs 3 ± {se:e}");

        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(
            sample_meta_action(&mu, &factor, &mut r1),
            sample_meta_action(&mu, &factor, &mut r2)
        );
    }

    #[test]
    fn first_iterate_is_regularizer_minimum() {
        let pos = PositionedBody::new_identity(Body::ball(2, 1.0).unwrap(), 0.1).unwrap();
        let k = constants_adversarial(100, 2, 0.01, 1.0).unwrap();
        let state = EpochState::new(2, &k);
        let (mu, prec, factor, floored) =
            compute_iterate_and_covariance(&state, &pos, &k).unwrap();
        assert!(mu.norm() < 1e-9, "Φ₀ is minimized at the origin");
        assert_eq!(floored, 0);
        let expected = DMatrix::identity(2, 2) / k.sigma_sq;
        assert!((prec - &expected).norm() < 1e-12);
        assert!((factor - DMatrix::identity(2, 2) * k.sigma_sq.sqrt()).norm() < 1e-12);
    }

    fn quick_oracle(mode: Mode, n: usize, seed: u64) -> (LossOracle, PositionedBody) {
        let body = Body::ball(2, 1.0).unwrap();
        let loss = make_quadratic(&body, vec2(0.3, 0.0), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let oracle = LossOracle::new(
            mode,
            Schedule::Fixed(loss),
            NoiseModel::gaussian(0.1).unwrap(),
            n,
            &mut rng,
        )
        .unwrap();
        let pos = PositionedBody::new_identity(Body::ball(2, 1.0).unwrap(), 0.1).unwrap();
        (oracle, pos)
    }

    #[test]
    fn stochastic_run_skips_bonus_and_restart_machinery() {
        let (oracle, pos) = quick_oracle(Mode::Stochastic, 60, 3);
        let k = constants_stochastic(60, 2, 0.01, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = run(&oracle, &pos, &k, &mut rng).unwrap();
        assert!(out.fault.is_none(), "fault: {:?}", out.fault);
        assert_eq!(out.trace.rows.len(), 60);
        assert_eq!(out.trace.restarts, 0);
        assert_eq!(out.trace.bonus_count, 0);
        for row in &out.trace.rows {
            assert_eq!(row.m, 0);
            assert_eq!(row.w, 1.0);
            assert_eq!(row.bonus_branch, 0);
            assert!(!row.restart);
            assert_eq!(row.epoch, 1);
            assert!(row.pip >= 1.0);
            // Recursion holds with γ_t = 0 whenever flooring is inactive.
            assert!(row.floored > 0 || row.recursion_rel_err <= 1e-10);
        }
    }

    #[test]
    fn adversarial_run_flags_the_first_round_bonus() {
        let (oracle, pos) = quick_oracle(Mode::Adversarial, 40, 4);
        let k = constants_adversarial(40, 2, 0.01, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let out = run(&oracle, &pos, &k, &mut rng).unwrap();
        assert!(out.fault.is_none(), "fault: {:?}", out.fault);
        let first = &out.trace.rows[0];
        assert!(first.bonus_fired && first.bonus_branch == 2 && first.bonus_at_empty_ledger);
        assert!(first.m == 1);
        assert!(out.trace.bonus_count >= 1);
        // Cumulative ŝ column is the prefix sum of the per-round values.
        let mut acc = 0.0;
        for row in &out.trace.rows {
            acc += row.shat_value;
            assert!((row.cum_shat_stat - acc).abs() <= 1e-9 * acc.abs().max(1.0));
        }
        // True regret column is filled and finite for a ball body.
        assert!(out.trace.comparator.is_some());
        assert!(out.trace.rows.iter().all(|r| r.cum_true_regret.is_finite()));
    }

    #[test]
    fn run_rejects_short_oracle() {
        let (oracle, pos) = quick_oracle(Mode::Adversarial, 10, 5);
        let k = constants_adversarial(20, 2, 0.01, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        assert!(run(&oracle, &pos, &k, &mut rng).is_err());
    }

    #[test]
    fn restart_report_is_consistent_on_short_history() {
        let (oracle, pos) = quick_oracle(Mode::Adversarial, 15, 6);
        let k = constants_adversarial(15, 2, 0.01, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        // Drive a state forward manually via run, then re-test.
        let out = run(&oracle, &pos, &k, &mut rng).unwrap();
        assert!(out.fault.is_none());
        // Rebuild an equivalent state by replaying (run resets nothing here:
        // no restarts expected at these constants).
        assert_eq!(out.trace.restarts, 0);
    }

    #[test]
    fn ftrl_inequality_holds_on_synthetic_quadratics() {
        let body = Body::ball(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let worst = ftrl_quadratic_check(2, 50, 30, 0.1, 0.05, &body, &mut rng).unwrap();
        assert!(worst <= 1e-6, "FTRL violation {worst}");
    }
}
