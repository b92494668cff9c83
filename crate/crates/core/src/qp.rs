//! Constrained minimization over a body intersected with ellipsoid
//! constraints.
//!
//! The optimizer's feasible set each round is the shrunk body intersected
//! with the accumulated focus ellipsoids. Every set in play has an exact
//! Euclidean projection (built-in bodies only; membership-only bodies are
//! rejected), so projection onto the intersection runs Dykstra's alternating
//! scheme and minimization runs projected gradient descent: fixed step 1/L
//! for quadratics, Armijo backtracking for general smooth convex objectives.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::geometry::Body;
use crate::Result;

/// Ellipsoid constraint {x : (x − center)ᵀ·metric·(x − center) ≤ radius_sq}.
/// The metric is symmetric PSD; zero eigendirections are unconstrained.
#[derive(Debug, Clone)]
pub struct EllipsoidConstraint {
    pub center: DVector<f64>,
    pub metric: DMatrix<f64>,
    pub radius_sq: f64,
    // Cached eigendecomposition of `metric` (eigenvalues clamped to ≥ 0).
    axes: DMatrix<f64>,
    lam: DVector<f64>,
}

impl EllipsoidConstraint {
    pub fn new(center: DVector<f64>, metric: DMatrix<f64>, radius_sq: f64) -> Result<EllipsoidConstraint> {
        let d = center.len();
        if metric.nrows() != d || metric.ncols() != d {
            return Err(Error::InvalidInput("constraint metric shape mismatch".into()));
        }
        if !(radius_sq.is_finite() && radius_sq > 0.0) {
            return Err(Error::InvalidInput(format!(
                "constraint radius_sq must be positive, got {radius_sq}"
            )));
        }
        if metric.iter().any(|v| !v.is_finite()) || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("constraint data has non-finite entries".into()));
        }
        let scale = metric.amax().max(1.0);
        let asym = (&metric - metric.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "constraint metric is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sym = 0.5 * (&metric + metric.transpose());
        let eig = sym.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
            return Err(Error::InvalidInput(
                "constraint metric is not positive semidefinite".into(),
            ));
        }
        let lam = eig.eigenvalues.map(|l| l.max(0.0));
        Ok(EllipsoidConstraint {
            center,
            metric: sym,
            radius_sq,
            axes: eig.eigenvectors,
            lam,
        })
    }

    /// (x − center)ᵀ·metric·(x − center) − radius_sq; ≤ 0 means feasible.
    /// Evaluated by explicit loops: this sits inside per-round passes over
    /// every accumulated constraint, so it must not allocate.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let d = self.center.len();
        let mut q = 0.0;
        for i in 0..d {
            let ui = x[i] - self.center[i];
            q += self.metric[(i, i)] * ui * ui;
            for j in (i + 1)..d {
                q += 2.0 * self.metric[(i, j)] * ui * (x[j] - self.center[j]);
            }
        }
        q - self.radius_sq
    }

    /// Exact Euclidean projection onto the constraint set.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = x - &self.center;
        let v = self.axes.transpose() * &u;
        // Work with a_i = λ_i/r² so the set is {Σ a_i p_i² ≤ 1}.
        let a: Vec<f64> = self.lam.iter().map(|&l| l / self.radius_sq).collect();
        let q: f64 = v.iter().zip(a.iter()).map(|(vi, ai)| ai * vi * vi).sum();
        if q <= 1.0 {
            return x.clone();
        }
        let phi = |theta: f64| -> f64 {
            v.iter()
                .zip(a.iter())
                .map(|(vi, ai)| {
                    let p = vi / (1.0 + theta * ai);
                    ai * p * p
                })
                .sum::<f64>()
                - 1.0
        };
        let mut hi = 1.0;
        let mut guard = 0;
        while phi(hi) > 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 400 {
                break;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        let p = DVector::from_fn(v.len(), |i, _| v[i] / (1.0 + theta * a[i]));
        &self.center + &self.axes * p
    }
}

fn body_projection(body: &Body, x: &DVector<f64>) -> Result<DVector<f64>> {
    body.exact_projection(x).ok_or_else(|| {
        Error::UnsupportedBody(
            "optimization requires a body with an exact Euclidean projection".into(),
        )
    })
}

/// Distance-like feasibility error: Euclidean gap to the body plus the worst
/// constraint violation (in its own squared-metric units).
pub fn feasibility_error(body: &Body, constraints: &[EllipsoidConstraint], x: &DVector<f64>) -> Result<f64> {
    let p = body_projection(body, x)?;
    let body_gap = (x - p).norm();
    let worst = constraints
        .iter()
        .map(|c| c.violation(x).max(0.0))
        .fold(0.0_f64, f64::max);
    Ok(body_gap.max(worst))
}

/// Euclidean projection onto body ∩ constraints by Dykstra's alternating
/// projections. Stops when every set is satisfied within `tol` and the last
/// cycle barely moved; reports infeasibility if `max_iter` cycles end with a
/// violation still above `tol`.
pub fn project_intersection(
    x: &DVector<f64>,
    body: &Body,
    constraints: &[EllipsoidConstraint],
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    // Fast path: already feasible.
    if body.contains(x) && constraints.iter().all(|c| c.violation(x) <= 0.0) {
        return Ok(x.clone());
    }
    let n_sets = 1 + constraints.len();
    let mut cur = x.clone();
    let mut corrections: Vec<DVector<f64>> = vec![DVector::zeros(x.len()); n_sets];
    let mut last_err = f64::INFINITY;
    for _ in 0..max_iter {
        let mut moved = 0.0_f64;
        for i in 0..n_sets {
            let y = &cur + &corrections[i];
            let proj = if i == 0 {
                body_projection(body, &y)?
            } else {
                constraints[i - 1].project(&y)
            };
            corrections[i] = &y - &proj;
            moved = moved.max((&proj - &cur).norm());
            cur = proj;
        }
        last_err = feasibility_error(body, constraints, &cur)?;
        if last_err <= tol && moved <= tol * 1e-2 {
            return Ok(cur);
        }
    }
    if last_err <= tol {
        return Ok(cur);
    }
    Err(Error::Infeasible(format!(
        "alternating projections stalled with feasibility error {last_err:e} after {max_iter} cycles"
    )))
}

/// Result of a constrained minimization.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// False when the iteration cap was reached before the gradient-mapping
    /// tolerance; `x` is then the best iterate seen.
    pub converged: bool,
    pub iterations: usize,
    /// Number of eigenvalues raised to the floor before solving.
    pub floored: usize,
}

/// Eigenvalue-floored precision and the matching covariance factor.
#[derive(Debug, Clone)]
pub struct FlooredPrecision {
    /// U·diag(max(λ, floor))·Uᵀ, symmetric positive definite.
    pub precision: DMatrix<f64>,
    /// S = U·diag(max(λ, floor))^{-1/2}·Uᵀ, so S·Sᵀ = precision^{-1}.
    pub factor: DMatrix<f64>,
    /// How many eigenvalues were below the floor.
    pub floored: usize,
    pub min_eig_before: f64,
    pub max_eig: f64,
}

/// Floor the eigenvalues of a symmetric matrix at `floor` > 0 and return the
/// floored matrix with its inverse square root.
pub fn floor_spd(p: &DMatrix<f64>, floor: f64) -> Result<FlooredPrecision> {
    if p.nrows() != p.ncols() {
        return Err(Error::InvalidInput("flooring needs a square matrix".into()));
    }
    if !(floor.is_finite() && floor > 0.0) {
        return Err(Error::InvalidInput(format!("eigenvalue floor must be positive, got {floor}")));
    }
    let asym = (p - p.transpose()).amax();
    if asym > 1e-12 * p.amax().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "potential matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let eig = (0.5 * (p + p.transpose())).symmetric_eigen();
    let min_eig_before = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let floored = eig.eigenvalues.iter().filter(|&&l| l < floor).count();
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let u = &eig.eigenvectors;
    let prec_raw = u * DMatrix::from_diagonal(&lam) * u.transpose();
    let precision = 0.5 * (&prec_raw + prec_raw.transpose());
    let fac_raw = u * DMatrix::from_diagonal(&lam.map(|l| 1.0 / l.sqrt())) * u.transpose();
    let factor = 0.5 * (&fac_raw + fac_raw.transpose());
    Ok(FlooredPrecision {
        precision,
        factor,
        floored,
        min_eig_before,
        max_eig: lam.amax(),
    })
}

fn quad_objective(p: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * (p * x).dot(x) + b.dot(x)
}

/// Projected gradient descent for ½xᵀPx + bᵀx over body ∩ constraints with
/// fixed step 1/λ_max, run until the gradient mapping norm drops to `tol` or
/// the iteration cap is reached.
fn quad_pgd(
    pm: &DMatrix<f64>,
    b: &DVector<f64>,
    body: &Body,
    constraints: &[EllipsoidConstraint],
    step: f64,
    tol: f64,
    start: &DVector<f64>,
) -> Result<(DVector<f64>, bool, usize)> {
    let mut x = project_intersection(start, body, constraints, 1e-8, 10_000)?;
    let mut best = x.clone();
    let mut best_val = quad_objective(pm, b, &x);
    let max_iter = 50_000;
    for it in 0..max_iter {
        let g = pm * &x + b;
        let next = project_intersection(&(&x - &g * step), body, constraints, 1e-8, 10_000)?;
        let mapping = (&x - &next).norm() / step;
        let val = quad_objective(pm, b, &next);
        if val < best_val {
            best_val = val;
            best = next.clone();
        }
        x = next;
        if mapping <= tol {
            return Ok((x, true, it + 1));
        }
    }
    Ok((best, false, max_iter))
}

/// Minimize ½xᵀPx + bᵀx over body ∩ constraints. P's eigenvalues are floored
/// at `floor` first (the count lands in the solution), so the problem solved
/// is always strongly convex. If the unconstrained minimizer is feasible it
/// is returned directly (its projected gradient is zero). Otherwise the
/// problem is solved over the body plus a growing active subset of the
/// constraints: a subset is a relaxation, so its minimizer, once feasible
/// for the full set, is the full-set minimizer. The constraint list grows by
/// one per round while the binding set stays small, which makes this the
/// difference between O(active) and O(rounds) work per projection sweep.
pub fn minimize_quadratic(
    p: &DMatrix<f64>,
    b: &DVector<f64>,
    body: &Body,
    constraints: &[EllipsoidConstraint],
    floor: f64,
    tol: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    let fp = floor_spd(p, floor)?;
    let pm = &fp.precision;
    // Unconstrained minimizer Px = −b via the factor: x = −S·Sᵀ·b.
    let free = -(&fp.factor * (fp.factor.transpose() * b));
    if body.contains(&free) && constraints.iter().all(|c| c.violation(&free) <= 0.0) {
        return Ok(QpSolution {
            x: free,
            converged: true,
            iterations: 0,
            floored: fp.floored,
        });
    }
    let step = 1.0 / fp.max_eig;
    let mut start = warm_start.unwrap_or(&free).clone();

    let mut active: Vec<usize> = Vec::new();
    let mut subset: Vec<EllipsoidConstraint> = Vec::new();
    let mut total_iters = 0;
    // Each outer round adds at least one constraint, so termination is
    // certain; the cap only bounds pathological inputs.
    for _ in 0..=constraints.len() {
        let (x, converged, iters) = quad_pgd(pm, b, body, &subset, step, tol, &start)?;
        total_iters += iters;
        match most_violated(constraints, &active, &x) {
            // Feasible for everything: the subset relaxation solved the
            // full problem.
            None => {
                return Ok(QpSolution { x, converged, iterations: total_iters, floored: fp.floored })
            }
            Some(idx) => {
                active.push(idx);
                subset.push(constraints[idx].clone());
                start = x;
            }
        }
    }
    Err(Error::Internal(
        "active-set loop exhausted the constraint list without a feasible solution".into(),
    ))
}

/// Index of the worst-violated constraint outside `active` at `x`, or None
/// when everything outside `active` is satisfied.
fn most_violated(
    constraints: &[EllipsoidConstraint],
    active: &[usize],
    x: &DVector<f64>,
) -> Option<usize> {
    let mut worst = 0.0_f64;
    let mut idx = None;
    for (i, c) in constraints.iter().enumerate() {
        if active.contains(&i) {
            continue;
        }
        let v = c.violation(x);
        if v > worst {
            worst = v;
            idx = Some(i);
        }
    }
    idx
}

/// Minimize a smooth convex objective (value + gradient callable) over
/// body ∩ constraints. Runs the same active-set relaxation as
/// [`minimize_quadratic`] around a projected-gradient core with Armijo
/// backtracking.
pub fn minimize_smooth_convex<F>(
    f: F,
    body: &Body,
    constraints: &[EllipsoidConstraint],
    tol: f64,
    start: &DVector<f64>,
) -> Result<QpSolution>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut active: Vec<usize> = Vec::new();
    let mut subset: Vec<EllipsoidConstraint> = Vec::new();
    let mut total_iters = 0;
    let mut from = start.clone();
    for _ in 0..=constraints.len() {
        let sol = smooth_pgd(&f, body, &subset, tol, &from)?;
        total_iters += sol.iterations;
        match most_violated(constraints, &active, &sol.x) {
            None => return Ok(QpSolution { iterations: total_iters, ..sol }),
            Some(idx) => {
                active.push(idx);
                subset.push(constraints[idx].clone());
                from = sol.x;
            }
        }
    }
    Err(Error::Internal(
        "active-set loop exhausted the constraint list without a feasible solution".into(),
    ))
}

/// Projected gradient with Armijo backtracking (halving, slope constant
/// 1e-4). Stops when the gradient mapping norm at the accepted step drops to
/// `tol` or after 20_000 iterations.
fn smooth_pgd<F>(
    f: &F,
    body: &Body,
    constraints: &[EllipsoidConstraint],
    tol: f64,
    start: &DVector<f64>,
) -> Result<QpSolution>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = project_intersection(start, body, constraints, 1e-8, 10_000)?;
    let mut step = 1.0_f64;
    let max_iter = 20_000;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for it in 0..max_iter {
        let (fx, g) = f(&x);
        if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Internal("objective returned non-finite values".into()));
        }
        if best.as_ref().map_or(true, |(bv, _)| fx < *bv) {
            best = Some((fx, x.clone()));
        }
        // Backtrack until the Armijo decrease holds for the projected step.
        let mut accepted = None;
        for _ in 0..60 {
            let cand = project_intersection(&(&x - &g * step), body, constraints, 1e-8, 10_000)?;
            let (fc, _) = f(&cand);
            let slope = g.dot(&(&cand - &x));
            if fc <= fx + 1e-4 * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, _)) = accepted else {
            // Step underflowed: the gradient mapping is numerically zero.
            return Ok(QpSolution { x, converged: true, iterations: it, floored: 0 });
        };
        let mapping = (&x - &next).norm() / step;
        x = next;
        step = (step * 2.0).min(1e6);
        if mapping <= tol {
            return Ok(QpSolution { x, converged: true, iterations: it + 1, floored: 0 });
        }
    }
    let (_, bx) = best.expect("at least one iterate evaluated");
    Ok(QpSolution { x: bx, converged: false, iterations: max_iter, floored: 0 })
}
