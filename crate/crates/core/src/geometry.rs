//! Convex bodies, gauges, and positioning.
//!
//! A [`Body`] is a convex, compact set with the origin in its interior,
//! described at minimum by a membership oracle. Built-in variants also carry
//! closed-form gauges and exact Euclidean projections, which the optimizer
//! requires. A [`PositionedBody`] wraps a body together with the affine map
//! that placed it (approximately) in isotropic position, the shrink factor
//! epsilon, and the mean-width constant M.
//!
//! Positioning convention: the map y = T(x - c) is chosen so the uniform law
//! on the body has roughly zero mean and identity covariance. In that frame
//! the body contains the unit ball and sits inside the ball of radius
//! 2(d + 1); the gauge bisection bracket relies on exactly that sandwich.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Error;
use crate::Result;

/// Membership oracle for bodies without a closed form.
pub type MembershipFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Convex body with the origin in its interior (membership-only bodies may
/// relax this; gauge computation then fails with a positioning error).
#[derive(Clone)]
pub enum Body {
    /// {x : ‖x − center‖ ≤ radius}
    Ball { radius: f64, center: DVector<f64> },
    /// {x : (x − center)ᵀ A (x − center) ≤ 1}, A symmetric positive definite.
    /// `axes`/`lam` cache the eigendecomposition A = axes·diag(lam)·axesᵀ for
    /// projection and support queries.
    Ellipsoid {
        a: DMatrix<f64>,
        center: DVector<f64>,
        axes: DMatrix<f64>,
        lam: DVector<f64>,
    },
    /// {x : lo ≤ x ≤ hi} componentwise.
    Box { lo: DVector<f64>, hi: DVector<f64> },
    /// conv{0, scale·e_1, …, scale·e_d} translated so its centroid is the
    /// origin.
    Simplex { dim: usize, scale: f64 },
    /// {x : rows·x ≤ rhs} rowwise; bounded with strictly positive rhs when
    /// built through [`Body::polytope`].
    Polytope {
        rows: DMatrix<f64>,
        rhs: DVector<f64>,
    },
    /// Membership oracle only: gauge falls back to bisection, no exact
    /// projection, not usable as an optimizer feasible set.
    Membership { dim: usize, contains: MembershipFn },
}

impl fmt::Debug for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Body::Ball { radius, center } => f
                .debug_struct("Ball")
                .field("radius", radius)
                .field("center", center)
                .finish(),
            Body::Ellipsoid { a, center, .. } => f
                .debug_struct("Ellipsoid")
                .field("a", a)
                .field("center", center)
                .finish(),
            Body::Box { lo, hi } => f.debug_struct("Box").field("lo", lo).field("hi", hi).finish(),
            Body::Simplex { dim, scale } => f
                .debug_struct("Simplex")
                .field("dim", dim)
                .field("scale", scale)
                .finish(),
            Body::Polytope { rows, rhs } => f
                .debug_struct("Polytope")
                .field("rows", rows)
                .field("rhs", rhs)
                .finish(),
            Body::Membership { dim, .. } => {
                f.debug_struct("Membership").field("dim", dim).finish()
            }
        }
    }
}

fn check_finite(x: &DVector<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite coordinates")))
    }
}

fn check_dim(x: &DVector<f64>, d: usize) -> Result<()> {
    if x.len() == d {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "dimension mismatch: point has {} coordinates, body is {}-dimensional",
            x.len(),
            d
        )))
    }
}

impl Body {
    /// Ball of the given radius centered at the origin.
    pub fn ball(dim: usize, radius: f64) -> Result<Body> {
        Body::ball_at(radius, DVector::zeros(dim))
    }

    /// Ball with an explicit center.
    pub fn ball_at(radius: f64, center: DVector<f64>) -> Result<Body> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidInput(format!("ball radius must be positive, got {radius}")));
        }
        check_finite(&center, "ball center")?;
        Ok(Body::Ball { radius, center })
    }

    /// Ellipsoid {(x − center)ᵀ A (x − center) ≤ 1}; A must be symmetric
    /// positive definite.
    pub fn ellipsoid(a: DMatrix<f64>, center: DVector<f64>) -> Result<Body> {
        let d = center.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::InvalidInput("ellipsoid matrix shape mismatch".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("ellipsoid matrix has non-finite entries".into()));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-10 * (1.0 + a.amax()) {
            return Err(Error::InvalidInput(format!(
                "ellipsoid matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        check_finite(&center, "ellipsoid center")?;
        let sym = 0.5 * (&a + a.transpose());
        let eig = sym.clone().symmetric_eigen();
        let max_l = eig.eigenvalues.amax();
        if eig.eigenvalues.iter().any(|&l| l <= 1e-14 * max_l.max(1.0)) {
            return Err(Error::DegenerateBody("ellipsoid matrix is not positive definite".into()));
        }
        Ok(Body::Ellipsoid {
            a: sym,
            center,
            axes: eig.eigenvectors,
            lam: eig.eigenvalues,
        })
    }

    /// Axis-aligned box [lo, hi].
    pub fn box_body(lo: DVector<f64>, hi: DVector<f64>) -> Result<Body> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidInput("box bounds have mismatched lengths".into()));
        }
        check_finite(&lo, "box lower bound")?;
        check_finite(&hi, "box upper bound")?;
        if lo.iter().zip(hi.iter()).any(|(a, b)| a >= b) {
            return Err(Error::InvalidInput("box needs lo < hi componentwise".into()));
        }
        Ok(Body::Box { lo, hi })
    }

    /// Centered simplex: conv{0, scale·e_i} shifted so its centroid is 0.
    pub fn simplex(dim: usize, scale: f64) -> Result<Body> {
        if dim == 0 {
            return Err(Error::InvalidInput("simplex dimension must be positive".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidInput(format!("simplex scale must be positive, got {scale}")));
        }
        Ok(Body::Simplex { dim, scale })
    }

    /// H-polytope {x : rows·x ≤ rhs}. Every rhs entry must be strictly
    /// positive so the origin is interior; the caller is responsible for
    /// boundedness.
    pub fn polytope(rows: DMatrix<f64>, rhs: DVector<f64>) -> Result<Body> {
        if rows.nrows() == 0 || rows.nrows() != rhs.len() {
            return Err(Error::InvalidInput("polytope needs one rhs entry per row".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("polytope data has non-finite entries".into()));
        }
        if rhs.iter().any(|&b| b <= 0.0) {
            return Err(Error::InvalidInput(
                "polytope rhs must be strictly positive (origin must be interior)".into(),
            ));
        }
        if (0..rows.nrows()).any(|i| rows.row(i).norm() == 0.0) {
            return Err(Error::InvalidInput("polytope has a zero row".into()));
        }
        Ok(Body::Polytope { rows, rhs })
    }

    /// Body given only by a membership oracle.
    pub fn from_membership(dim: usize, contains: MembershipFn) -> Body {
        Body::Membership { dim, contains }
    }

    pub fn dim(&self) -> usize {
        match self {
            Body::Ball { center, .. } => center.len(),
            Body::Ellipsoid { center, .. } => center.len(),
            Body::Box { lo, .. } => lo.len(),
            Body::Simplex { dim, .. } => *dim,
            Body::Polytope { rows, .. } => rows.ncols(),
            Body::Membership { dim, .. } => *dim,
        }
    }

    /// Membership test (closed set, exact comparisons).
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Body::Ball { radius, center } => (x - center).norm() <= *radius,
            Body::Ellipsoid { a, center, .. } => {
                let u = x - center;
                (a * &u).dot(&u) <= 1.0
            }
            Body::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *l <= *v && *v <= *h),
            Body::Simplex { dim, scale } => {
                let bound = scale / (*dim as f64 + 1.0);
                x.iter().all(|&v| -v <= bound) && x.sum() <= bound
            }
            Body::Polytope { rows, rhs } => {
                let v = rows * x;
                v.iter().zip(rhs.iter()).all(|(l, r)| l <= r)
            }
            Body::Membership { contains, .. } => contains(x),
        }
    }

    /// Closed-form gauge where available. The gauge of x is the smallest
    /// t > 0 with x ∈ tK; 0 at the origin.
    pub fn exact_gauge(&self, x: &DVector<f64>) -> Option<f64> {
        match self {
            Body::Ball { radius, center } => {
                // Positive root of ‖x − t·center‖ = t·radius.
                let alpha = radius * radius - center.norm_squared();
                if alpha <= 0.0 {
                    return None; // origin not interior
                }
                let beta = x.dot(center);
                let q = x.norm_squared();
                Some((-beta + (beta * beta + alpha * q).sqrt()) / alpha)
            }
            Body::Ellipsoid { a, center, .. } => {
                let ac = a * center;
                let alpha = 1.0 - ac.dot(center);
                if alpha <= 0.0 {
                    return None;
                }
                let beta = ac.dot(x);
                let q = (a * x).dot(x);
                Some((-beta + (beta * beta + alpha * q).sqrt()) / alpha)
            }
            Body::Box { lo, hi } => {
                if lo.iter().any(|&l| l >= 0.0) || hi.iter().any(|&h| h <= 0.0) {
                    return None; // origin not interior
                }
                let mut g: f64 = 0.0;
                for i in 0..x.len() {
                    g = g.max(x[i] / hi[i]).max(x[i] / lo[i]);
                }
                Some(g)
            }
            Body::Simplex { dim, scale } => {
                let d1 = *dim as f64 + 1.0;
                let mut g = x.sum();
                for &v in x.iter() {
                    g = g.max(-v);
                }
                Some((g * d1 / scale).max(0.0))
            }
            Body::Polytope { rows, rhs } => {
                if rhs.iter().any(|&b| b <= 0.0) {
                    return None;
                }
                let v = rows * x;
                let mut g: f64 = 0.0;
                for i in 0..v.len() {
                    g = g.max(v[i] / rhs[i]);
                }
                Some(g)
            }
            Body::Membership { .. } => None,
        }
    }

    /// Exact Euclidean projection onto the body where available.
    pub fn exact_projection(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Body::Ball { radius, center } => {
                let u = x - center;
                let n = u.norm();
                if n <= *radius {
                    Some(x.clone())
                } else {
                    Some(center + u * (*radius / n))
                }
            }
            Body::Ellipsoid { center, axes, lam, .. } => {
                let u = x - center;
                let v = axes.transpose() * &u;
                let q: f64 = v.iter().zip(lam.iter()).map(|(vi, li)| li * vi * vi).sum();
                if q <= 1.0 {
                    return Some(x.clone());
                }
                // Secular equation for p_i = v_i/(1 + θλ_i): find θ ≥ 0 with
                // Σ λ_i p_i² = 1; the sum is decreasing in θ.
                let phi = |theta: f64| -> f64 {
                    v.iter()
                        .zip(lam.iter())
                        .map(|(vi, li)| {
                            let p = vi / (1.0 + theta * li);
                            li * p * p
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
                        return None;
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
                let p = DVector::from_fn(v.len(), |i, _| v[i] / (1.0 + theta * lam[i]));
                Some(center + axes * p)
            }
            Body::Box { lo, hi } => Some(DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))),
            Body::Simplex { dim, scale } => {
                // Scaling and translation commute with Euclidean projection:
                // project q = x/scale + centroid onto conv{0, e_i}.
                let d = *dim;
                let g = 1.0 / (d as f64 + 1.0);
                let q = DVector::from_fn(d, |i, _| x[i] / scale + g);
                let mut p = q.map(|v| v.max(0.0));
                if p.sum() > 1.0 {
                    // Sum face active: sort-based projection onto the
                    // probability simplex {p ≥ 0, Σp = 1}.
                    let mut sorted: Vec<f64> = q.iter().cloned().collect();
                    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let mut cum = 0.0;
                    let mut tau = 0.0;
                    for (k, &v) in sorted.iter().enumerate() {
                        cum += v;
                        let cand = (cum - 1.0) / (k as f64 + 1.0);
                        if v - cand > 0.0 {
                            tau = cand;
                        }
                    }
                    p = q.map(|v| (v - tau).max(0.0));
                }
                Some(DVector::from_fn(d, |i, _| (p[i] - g) * scale))
            }
            Body::Polytope { rows, rhs } => Some(project_halfspaces(rows, rhs, x)),
            Body::Membership { .. } => None,
        }
    }

    /// A point known to be strictly inside the body, used to start sampling
    /// chains. Membership-only bodies fall back to the origin.
    pub fn interior_point(&self) -> Option<DVector<f64>> {
        match self {
            Body::Ball { center, .. } => Some(center.clone()),
            Body::Ellipsoid { center, .. } => Some(center.clone()),
            Body::Box { lo, hi } => Some(DVector::from_fn(lo.len(), |i, _| 0.5 * (lo[i] + hi[i]))),
            Body::Simplex { dim, .. } => Some(DVector::zeros(*dim)),
            Body::Polytope { rows, .. } => {
                let z = DVector::zeros(rows.ncols());
                if self.contains(&z) {
                    Some(z)
                } else {
                    None
                }
            }
            Body::Membership { dim, contains } => {
                let z = DVector::zeros(*dim);
                if contains(&z) {
                    Some(z)
                } else {
                    None
                }
            }
        }
    }

    /// Support function h(c) = max over the body of ⟨c, x⟩, where a closed
    /// form or vertex enumeration exists.
    pub fn support(&self, c: &DVector<f64>) -> Option<f64> {
        match self {
            Body::Ball { radius, center } => Some(c.dot(center) + radius * c.norm()),
            Body::Ellipsoid { center, axes, lam, .. } => {
                // max ⟨c, u⟩ over uᵀAu ≤ 1 is √(cᵀA⁻¹c).
                let v = axes.transpose() * c;
                let q: f64 = v.iter().zip(lam.iter()).map(|(vi, li)| vi * vi / li).sum();
                Some(c.dot(center) + q.sqrt())
            }
            Body::Box { lo, hi } => Some(
                (0..c.len())
                    .map(|i| (c[i] * lo[i]).max(c[i] * hi[i]))
                    .sum(),
            ),
            Body::Simplex { dim, scale } => {
                let mean = c.sum() / (*dim as f64 + 1.0);
                let best = c.iter().cloned().fold(0.0_f64, f64::max);
                Some(scale * (best - mean))
            }
            Body::Polytope { .. } | Body::Membership { .. } => None,
        }
    }

    /// Upper bound on max over the body of ‖x − a‖. Exact where vertices are
    /// enumerable, conservative (positioning radius 2(d+1)) otherwise.
    pub fn max_dist_from(&self, a: &DVector<f64>) -> f64 {
        match self {
            Body::Ball { radius, center } => (center - a).norm() + radius,
            Body::Ellipsoid { center, lam, .. } => {
                let reach = lam.iter().cloned().fold(f64::INFINITY, f64::min).sqrt().recip();
                (center - a).norm() + reach
            }
            Body::Box { lo, hi } => {
                // Furthest corner, coordinatewise.
                (0..a.len())
                    .map(|i| {
                        let d = (lo[i] - a[i]).abs().max((hi[i] - a[i]).abs());
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            Body::Simplex { dim, scale } => {
                let d = *dim;
                let g = 1.0 / (d as f64 + 1.0);
                let mut best: f64 = 0.0;
                // Vertices: scale·(v − centroid) for v ∈ {0, e_1, …, e_d}.
                for k in 0..=d {
                    let mut dist2 = 0.0;
                    for i in 0..d {
                        let coord = if k >= 1 && i == k - 1 { 1.0 - g } else { -g };
                        let diff = scale * coord - a[i];
                        dist2 += diff * diff;
                    }
                    best = best.max(dist2);
                }
                best.sqrt()
            }
            Body::Polytope { .. } | Body::Membership { .. } => {
                let d = self.dim() as f64;
                2.0 * (d + 1.0) + a.norm()
            }
        }
    }

    /// The shrunk body s·K for s ∈ (0, 1].
    pub fn scaled(&self, s: f64) -> Body {
        match self {
            Body::Ball { radius, center } => Body::Ball {
                radius: radius * s,
                center: center * s,
            },
            Body::Ellipsoid { a, center, axes, lam } => Body::Ellipsoid {
                a: a / (s * s),
                center: center * s,
                axes: axes.clone(),
                lam: lam / (s * s),
            },
            Body::Box { lo, hi } => Body::Box { lo: lo * s, hi: hi * s },
            Body::Simplex { dim, scale } => Body::Simplex {
                dim: *dim,
                scale: scale * s,
            },
            Body::Polytope { rows, rhs } => Body::Polytope {
                rows: rows.clone(),
                rhs: rhs * s,
            },
            Body::Membership { dim, contains } => {
                let inner = contains.clone();
                Body::Membership {
                    dim: *dim,
                    contains: Arc::new(move |y: &DVector<f64>| inner(&(y / s))),
                }
            }
        }
    }

    /// Image of the body under y = T(x − c). Built-in bodies stay exact
    /// (balls become ellipsoids, boxes and simplices become polytopes);
    /// membership bodies are wrapped.
    pub fn transformed(&self, t: &DMatrix<f64>, c: &DVector<f64>) -> Result<Body> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateBody("positioning map is singular".into()))?;
        match self {
            Body::Ball { radius, center } => {
                let a = (&t_inv.transpose() * &t_inv) / (radius * radius);
                let y0 = t * (center - c);
                Body::ellipsoid(0.5 * (&a + a.transpose()), y0)
            }
            Body::Ellipsoid { a, center, .. } => {
                let a2 = t_inv.transpose() * a * &t_inv;
                let y0 = t * (center - c);
                Body::ellipsoid(0.5 * (&a2 + a2.transpose()), y0)
            }
            Body::Box { lo, hi } => {
                let d = lo.len();
                let mut rows = DMatrix::zeros(2 * d, d);
                let mut rhs = DVector::zeros(2 * d);
                for i in 0..d {
                    rows[(i, i)] = 1.0;
                    rhs[i] = hi[i];
                    rows[(d + i, i)] = -1.0;
                    rhs[d + i] = -lo[i];
                }
                transform_polytope(&rows, &rhs, &t_inv, t, c)
            }
            Body::Simplex { dim, scale } => {
                let d = *dim;
                let bound = scale / (d as f64 + 1.0);
                let mut rows = DMatrix::zeros(d + 1, d);
                let mut rhs = DVector::zeros(d + 1);
                for i in 0..d {
                    rows[(i, i)] = -1.0;
                    rhs[i] = bound;
                }
                for j in 0..d {
                    rows[(d, j)] = 1.0;
                }
                rhs[d] = bound;
                transform_polytope(&rows, &rhs, &t_inv, t, c)
            }
            Body::Polytope { rows, rhs } => transform_polytope(rows, rhs, &t_inv, t, c),
            Body::Membership { dim, contains } => {
                let inner = contains.clone();
                let t_inv = t_inv.clone();
                let c = c.clone();
                Ok(Body::Membership {
                    dim: *dim,
                    contains: Arc::new(move |y: &DVector<f64>| inner(&(&t_inv * y + &c))),
                })
            }
        }
    }
}

/// {x : rows·x ≤ rhs} mapped through y = T(x − c): rows·T⁻¹·y ≤ rhs − rows·c.
fn transform_polytope(
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    t_inv: &DMatrix<f64>,
    _t: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<Body> {
    let new_rows = rows * t_inv;
    let new_rhs = rhs - rows * c;
    if new_rhs.iter().any(|&b| b <= 0.0) {
        // Origin not interior after the map; keep the set but only as a
        // membership oracle (no closed-form gauge about the origin exists).
        let nr = new_rows.clone();
        let nb = new_rhs.clone();
        return Ok(Body::Membership {
            dim: rows.ncols(),
            contains: Arc::new(move |y: &DVector<f64>| {
                let v = &nr * y;
                v.iter().zip(nb.iter()).all(|(l, r)| l <= r)
            }),
        });
    }
    Ok(Body::Polytope {
        rows: new_rows,
        rhs: new_rhs,
    })
}

/// Exact projection onto an intersection of halfspaces via cyclic Dykstra
/// iterations (each halfspace has a closed-form projection).
fn project_halfspaces(rows: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let m = rows.nrows();
    let mut cur = x.clone();
    let mut corrections: Vec<DVector<f64>> = vec![DVector::zeros(x.len()); m];
    for _ in 0..20_000 {
        let mut moved = 0.0_f64;
        for i in 0..m {
            let a = rows.row(i).transpose();
            let y = &cur + &corrections[i];
            let viol = (a.dot(&y) - rhs[i]) / a.norm_squared();
            let proj = if viol > 0.0 { &y - &a * viol } else { y.clone() };
            corrections[i] = &y - &proj;
            moved = moved.max((&proj - &cur).norm());
            cur = proj;
        }
        let worst = (0..m)
            .map(|i| rows.row(i).transpose().dot(&cur) - rhs[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if worst <= 1e-12 && moved <= 1e-13 {
            break;
        }
    }
    cur
}

/// Minkowski gauge π(x) = inf{t > 0 : x ∈ tK}, via the closed form when the
/// body has one and otherwise by bisection over the membership oracle using
/// the positioning bracket [‖x‖/(2(d+1)), ‖x‖].
pub fn gauge(body: &Body, x: &DVector<f64>) -> Result<f64> {
    check_finite(x, "gauge input")?;
    check_dim(x, body.dim())?;
    if let Some(g) = body.exact_gauge(x) {
        return Ok(g);
    }
    let norm = x.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let d = body.dim() as f64;
    let mut hi = norm;
    let mut lo = norm / (2.0 * (d + 1.0));
    if !body.contains(&(x / hi)) {
        return Err(Error::PositioningViolation(format!(
            "unit direction x/‖x‖ is outside the body (‖x‖ = {norm:.6e}); the unit ball is not contained"
        )));
    }
    // If the body overfills the positioning bracket, widen downward.
    let mut guard = 0;
    while body.contains(&(x / lo)) {
        hi = lo;
        lo *= 0.5;
        guard += 1;
        if guard > 200 {
            return Err(Error::InvalidInput(
                "gauge bisection found no outer bracket; the body appears unbounded along this ray"
                    .into(),
            ));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if body.contains(&(x / mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Body in (approximately) isotropic position together with the shrink
/// factor epsilon and the mean-width constant M.
#[derive(Debug, Clone)]
pub struct PositionedBody {
    body: Body,
    eps_body: Body,
    /// Positioning map y = map_t(x − map_c) from the source frame.
    pub map_t: DMatrix<f64>,
    pub map_c: DVector<f64>,
    pub epsilon: f64,
    pub mean_width: f64,
    /// Diagnostics recorded by `position_isotropic`: failed unit-direction
    /// containment spot checks and the hold-out covariance deviation.
    pub ball_check_violations: usize,
    pub cov_deviation: f64,
}

impl PositionedBody {
    /// Wrap a body that is already positioned (identity map). Mean width
    /// defaults to 1, the conservative top of its admissible range; use
    /// [`PositionedBody::with_mean_width`] or [`estimate_mean_width`] to
    /// refine it.
    pub fn new_identity(body: Body, epsilon: f64) -> Result<PositionedBody> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidInput(format!(
                "epsilon must lie in (0, 1/2), got {epsilon}"
            )));
        }
        let d = body.dim();
        let eps_body = body.scaled(1.0 - epsilon);
        Ok(PositionedBody {
            body,
            eps_body,
            map_t: DMatrix::identity(d, d),
            map_c: DVector::zeros(d),
            epsilon,
            mean_width: 1.0,
            ball_check_violations: 0,
            cov_deviation: 0.0,
        })
    }

    /// Replace the mean-width constant; must lie in [d^{-1/2}, 1].
    pub fn with_mean_width(mut self, m: f64) -> Result<PositionedBody> {
        let floor = 1.0 / (self.dim() as f64).sqrt();
        if !(m.is_finite() && m >= floor - 1e-12 && m <= 1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "mean width {m} outside [{floor}, 1]"
            )));
        }
        self.mean_width = m.clamp(floor, 1.0);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.body.dim()
    }

    /// The positioned body K.
    pub fn body(&self) -> &Body {
        &self.body
    }

    /// The shrunk body (1 − ε)K the optimizer stays inside.
    pub fn eps_body(&self) -> &Body {
        &self.eps_body
    }

    /// Gauge of the positioned body.
    pub fn gauge(&self, x: &DVector<f64>) -> Result<f64> {
        gauge(&self.body, x)
    }

    /// π⁺(x) = max(1, gauge(x)/(1 − ε)); equals 1 exactly on (1 − ε)K.
    pub fn pip(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((self.gauge(x)? / (1.0 - self.epsilon)).max(1.0))
    }

    /// Radial projection x / π⁺(x): identity on (1 − ε)K, maps everything
    /// else onto its boundary.
    pub fn radial_project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(x / self.pip(x)?)
    }

    /// Membership of the shrunk body, inflated by `tol` in gauge units.
    pub fn contains_eps(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.gauge(x)? <= (1.0 - self.epsilon) * (1.0 + tol))
    }

    /// Count unit directions (of `n_dirs` sampled) that fall outside the
    /// body; nonzero counts mean the unit ball is not fully contained.
    pub fn check_unit_ball<R: Rng>(&self, n_dirs: usize, rng: &mut R) -> usize {
        (0..n_dirs)
            .filter(|_| {
                let u = random_unit(self.dim(), rng);
                !self.body.contains(&u)
            })
            .count()
    }
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// One hit-and-run step chain: from `start` (must be inside), take `burn_in`
/// steps, each jumping to a uniform point of the chord through the current
/// point in a uniform random direction. Chord endpoints come from doubling
/// plus bisection on the membership oracle.
pub fn hit_and_run_sample<R: Rng>(
    body: &Body,
    start: &DVector<f64>,
    burn_in: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_finite(start, "hit-and-run start")?;
    check_dim(start, body.dim())?;
    if !body.contains(start) {
        return Err(Error::InvalidInput("hit-and-run start point is outside the body".into()));
    }
    let mut x = start.clone();
    for _ in 0..burn_in {
        let u = random_unit(body.dim(), rng);
        let t_pos = chord_extent(body, &x, &u)?;
        let t_neg = chord_extent(body, &x, &(-&u))?;
        if t_pos + t_neg <= 0.0 {
            continue; // degenerate chord; stay put
        }
        let t = rng.gen_range(-t_neg..=t_pos);
        x += u * t;
    }
    Ok(x)
}

/// Largest step t ≥ 0 with x + t·u certified inside the body.
fn chord_extent(body: &Body, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    let mut inside = 0.0_f64;
    let mut step = 1.0_f64;
    let mut outside = None;
    for _ in 0..60 {
        let t = inside + step;
        if body.contains(&(x + u * t)) {
            inside = t;
            step *= 2.0;
        } else {
            outside = Some(t);
            break;
        }
    }
    let mut hi = outside.ok_or_else(|| {
        Error::InvalidInput("body appears unbounded along a sampling chord".into())
    })?;
    let mut lo = inside;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if body.contains(&(x + u * mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Estimate the uniform law's mean and covariance by hit-and-run and return
/// the body positioned by y = Ĉ^{-1/2}(x − m̂), so the positioned uniform law
/// has approximately zero mean and identity covariance. Also estimates the
/// mean-width constant and spot-checks unit-ball containment (violations are
/// recorded, not fatal).
pub fn position_isotropic<R: Rng>(
    body: &Body,
    n_samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<PositionedBody> {
    let d = body.dim();
    if n_samples < 2 * d + 2 {
        return Err(Error::InvalidInput(format!(
            "need at least {} samples to estimate a {d}-dimensional covariance",
            2 * d + 2
        )));
    }
    let start = body.interior_point().ok_or_else(|| {
        Error::InvalidInput("no known interior point to start the sampling chain".into())
    })?;
    if !body.contains(&start) {
        return Err(Error::InvalidInput("interior point candidate is outside the body".into()));
    }
    let burn = 30 * d;
    let mut samples: Vec<DVector<f64>> = Vec::with_capacity(n_samples);
    let mut cur = start;
    for _ in 0..n_samples {
        cur = hit_and_run_sample(body, &cur, burn, rng)?;
        samples.push(cur.clone());
    }
    let mean = samples.iter().fold(DVector::zeros(d), |acc, s| acc + s) / n_samples as f64;
    let cov = sample_covariance(&samples, &mean);
    let eig = cov.clone().symmetric_eigen();
    let max_l = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l < 1e-10 * max_l) {
        return Err(Error::DegenerateBody(
            "sample covariance is numerically singular; the body may be flat".into(),
        ));
    }
    let u = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let t = u * inv_sqrt * u.transpose();

    // Hold-out diagnostic: covariance of the second half of the chain, pushed
    // through the fitted map, against the identity.
    let half = &samples[n_samples / 2..];
    let hmean = half.iter().fold(DVector::zeros(d), |acc, s| acc + s) / half.len() as f64;
    let hcov = sample_covariance(half, &hmean);
    let cov_deviation = (&t * hcov * t.transpose() - DMatrix::identity(d, d)).norm();

    let positioned = body.transformed(&t, &mean)?;
    let mut pos = PositionedBody::new_identity(positioned, epsilon)?;
    pos.map_t = t;
    pos.map_c = mean;
    pos.cov_deviation = cov_deviation;
    pos.ball_check_violations = pos.check_unit_ball(100, rng);

    // Mean width of the positioned body, clamped into its admissible range
    // (sampling noise can push the raw average slightly past 1).
    let raw = estimate_mean_width(&pos, 500, rng)?;
    pos.mean_width = raw.clamp(1.0 / (d as f64).sqrt(), 1.0);
    Ok(pos)
}

fn sample_covariance(samples: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let u = s - mean;
        cov += &u * u.transpose();
    }
    cov / (samples.len() as f64 - 1.0)
}

/// Spherical average of the gauge over `n_dirs` uniform unit vectors,
/// floored at d^{-1/2}.
pub fn estimate_mean_width<R: Rng>(
    pos: &PositionedBody,
    n_dirs: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_dirs == 0 {
        return Err(Error::InvalidInput("mean-width estimate needs at least one direction".into()));
    }
    let d = pos.dim();
    let mut acc = 0.0;
    for _ in 0..n_dirs {
        let u = random_unit(d, rng);
        acc += pos.gauge(&u)?;
    }
    Ok((acc / n_dirs as f64).max(1.0 / (d as f64).sqrt()))
}
