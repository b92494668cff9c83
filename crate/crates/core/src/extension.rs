//! Convex extension of a loss from the body to all of space.
//!
//! Losses are only observable inside the body K, but the optimizer queries
//! arbitrary points. The extension evaluates a query point X by playing the
//! radially projected action A = X/π⁺(X) (always inside (1 − ε)K) and
//! assembling the extended value
//!
//!   f(X) = π⁺(X)·ℓ(A) + 2(π⁺(X) − 1)/ε
//!
//! which is convex whenever ℓ is, agrees with ℓ on (1 − ε)K, and dominates
//! it everywhere. The second term is the nudge: a gauge-growth penalty that
//! drives the extension's minimizer into the shrunk body.

use nalgebra::DVector;

use crate::error::Error;
use crate::geometry::PositionedBody;
use crate::Result;

/// A query point together with the in-body action it resolves to.
#[derive(Debug, Clone)]
pub struct MetaQuery {
    /// The raw query point X (anywhere in space).
    pub x: DVector<f64>,
    /// The played action A = X/π⁺(X) ∈ (1 − ε)K.
    pub action: DVector<f64>,
    /// π⁺(X) = max(1, gauge(X)/(1 − ε)) ≥ 1.
    pub multiplier: f64,
    /// Nudge v(X) = (π⁺(X) − 1)/ε ≥ 0.
    pub nudge: f64,
}

/// Resolve a query point into the action to play and the scaling data needed
/// to assemble the extended observation afterwards.
pub fn make_query(pos: &PositionedBody, x: &DVector<f64>) -> Result<MetaQuery> {
    let multiplier = pos.pip(x)?;
    let action = x / multiplier;
    let nudge = (multiplier - 1.0) / pos.epsilon;
    Ok(MetaQuery {
        x: x.clone(),
        action,
        multiplier,
        nudge,
    })
}

/// Assemble the extended observation Y = π⁺(X)·(observed loss) + 2v(X) from
/// the bandit feedback at the played action. The observed value may carry
/// additive noise; the same affine map applies.
pub fn assemble_y(query: &MetaQuery, observed: f64) -> Result<f64> {
    if !observed.is_finite() {
        return Err(Error::InvalidInput(format!(
            "observed loss is not finite: {observed}"
        )));
    }
    Ok(query.multiplier * observed + 2.0 * query.nudge)
}

/// Evaluate the extension of a noiseless loss at an arbitrary point:
/// f(x) = π⁺(x)·ℓ(x/π⁺(x)) + 2(π⁺(x) − 1)/ε.
pub fn extend_eval<F>(pos: &PositionedBody, loss: F, x: &DVector<f64>) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let q = make_query(pos, x)?;
    let raw = loss(&q.action);
    if !raw.is_finite() {
        return Err(Error::InvalidInput(format!("loss returned non-finite value {raw}")));
    }
    Ok(q.multiplier * raw + 2.0 * q.nudge)
}
