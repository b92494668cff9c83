//! Simulated loss environments: bounded convex losses on a body, additive
//! observation noise, submodular losses through the Lovász extension, and
//! offline comparator / regret computation.
//!
//! All adversaries are oblivious: the full loss schedule and every noise
//! draw are generated at construction from a seed, so an oracle is pure (and
//! thread-safe) afterwards. Loss constructors rescale their parameters so
//! noiseless values land in [0, 1] on the body, using exact support
//! functions where the body has them and the positioning radius bound
//! 2(d + 1) otherwise.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::geometry::Body;
use crate::{Mode, Result};

/// Additive observation noise. The subgaussian budget E[exp(ε²)] ≤ 2 caps
/// the Gaussian std at √(3/8) and the uniform half-width at 0.8.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    None,
    Gaussian { std: f64 },
    BoundedUniform { half_width: f64 },
}

/// Largest Gaussian std with E[exp(ε²)] = 1/√(1 − 2s²) ≤ 2.
pub const MAX_GAUSSIAN_STD: f64 = 0.612372435695794; // √(3/8)

impl NoiseModel {
    pub fn gaussian(std: f64) -> Result<NoiseModel> {
        if !(std > 0.0 && std <= MAX_GAUSSIAN_STD + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "gaussian noise std must lie in (0, {MAX_GAUSSIAN_STD:.6}], got {std}"
            )));
        }
        Ok(NoiseModel::Gaussian { std })
    }

    pub fn bounded_uniform(half_width: f64) -> Result<NoiseModel> {
        if !(half_width > 0.0 && half_width <= 0.8) {
            return Err(Error::InvalidInput(format!(
                "uniform noise half-width must lie in (0, 0.8], got {half_width}"
            )));
        }
        Ok(NoiseModel::BoundedUniform { half_width })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { std } => std * rng.sample::<f64, _>(StandardNormal),
            NoiseModel::BoundedUniform { half_width } => rng.gen_range(-half_width..=*half_width),
        }
    }
}

/// Set function on a ground set of size d, stored as a table indexed by
/// bitmask. F(∅) must be 0 and values must lie in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SetFunctionTable {
    d: usize,
    values: Vec<f64>,
}

impl SetFunctionTable {
    pub fn new(d: usize, values: Vec<f64>) -> Result<SetFunctionTable> {
        if d == 0 || d > 20 {
            return Err(Error::InvalidInput(format!("ground set size must be 1..=20, got {d}")));
        }
        if values.len() != 1 << d {
            return Err(Error::InvalidInput(format!(
                "set function table needs {} entries, got {}",
                1 << d,
                values.len()
            )));
        }
        if values[0].abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "set function must vanish on the empty set, got F(∅) = {}",
                values[0]
            )));
        }
        if values.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
            return Err(Error::InvalidInput("set function values must lie in [0, 1]".into()));
        }
        Ok(SetFunctionTable { d, values })
    }

    /// Normalized graph cut: F(S) = (weight of edges crossing S) / (total
    /// weight). Vertices are 0-based; weights must be positive.
    pub fn cut(n_vertices: usize, edges: &[(usize, usize, f64)]) -> Result<SetFunctionTable> {
        if edges.is_empty() {
            return Err(Error::InvalidInput("cut function needs at least one edge".into()));
        }
        let mut total = 0.0;
        for &(u, v, w) in edges {
            if u >= n_vertices || v >= n_vertices || u == v {
                return Err(Error::InvalidInput(format!("bad edge ({u}, {v})")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("edge weight must be positive, got {w}")));
            }
            total += w;
        }
        let mut values = vec![0.0; 1 << n_vertices];
        for (mask, slot) in values.iter_mut().enumerate() {
            let mut cut = 0.0;
            for &(u, v, w) in edges {
                if ((mask >> u) & 1) != ((mask >> v) & 1) {
                    cut += w;
                }
            }
            *slot = cut / total;
        }
        SetFunctionTable::new(n_vertices, values)
    }

    pub fn ground_size(&self) -> usize {
        self.d
    }

    pub fn eval(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    /// Minimum of F over every subset, as (mask, value).
    pub fn brute_force_min(&self) -> (usize, f64) {
        let mut best = (0, self.values[0]);
        for (mask, &v) in self.values.iter().enumerate() {
            if v < best.1 {
                best = (mask, v);
            }
        }
        best
    }

    /// Exhaustive submodularity check: F(S∩T) + F(S∪T) ≤ F(S) + F(T) for all
    /// pairs, within 1e-12.
    pub fn is_submodular(&self) -> bool {
        let n = 1usize << self.d;
        for s in 0..n {
            for t in 0..n {
                let lhs = self.values[s & t] + self.values[s | t];
                if lhs > self.values[s] + self.values[t] + 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}

/// Coordinates sorted descending; ties broken by index for determinism.
fn descending_order(x: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));
    idx
}

fn check_unit_cube(x: &DVector<f64>, d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::InvalidInput(format!(
            "Lovász extension input has {} coordinates, ground set has {d}",
            x.len()
        )));
    }
    if x.iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
        return Err(Error::InvalidInput("Lovász extension input must lie in [0, 1]^d".into()));
    }
    Ok(())
}

/// Lovász extension: sort coordinates descending and telescope,
/// Σ_i x_{π(i)}·(F(S_i) − F(S_{i−1})) with S_i = {π(1), …, π(i)}.
pub fn lovasz_extension(f: &SetFunctionTable, x: &DVector<f64>) -> Result<f64> {
    check_unit_cube(x, f.d)?;
    let order = descending_order(x);
    let mut mask = 0usize;
    let mut prev = 0.0;
    let mut acc = 0.0;
    for &i in &order {
        mask |= 1 << i;
        let cur = f.eval(mask);
        acc += x[i].clamp(0.0, 1.0) * (cur - prev);
        prev = cur;
    }
    Ok(acc)
}

/// Subgradient of the Lovász extension at x: weight F(S_i) − F(S_{i−1}) on
/// coordinate π(i) for the same descending order.
pub fn lovasz_subgradient(f: &SetFunctionTable, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_unit_cube(x, f.d)?;
    let order = descending_order(x);
    let mut g = DVector::zeros(f.d);
    let mut mask = 0usize;
    let mut prev = 0.0;
    for &i in &order {
        mask |= 1 << i;
        let cur = f.eval(mask);
        g[i] = cur - prev;
        prev = cur;
    }
    Ok(g)
}

/// Best threshold rounding of a point u ∈ [0,1]^d: the cheapest set in the
/// sorted-prefix chain ∅ ⊂ S_1 ⊂ … ⊂ S_d. Its value never exceeds the
/// Lovász extension at u.
pub fn best_threshold_round(f: &SetFunctionTable, u: &DVector<f64>) -> Result<(usize, f64)> {
    check_unit_cube(u, f.d)?;
    let order = descending_order(u);
    let mut best = (0usize, f.eval(0));
    let mut mask = 0usize;
    for &i in &order {
        mask |= 1 << i;
        let v = f.eval(mask);
        if v < best.1 {
            best = (mask, v);
        }
    }
    Ok(best)
}

/// One convex loss on the body, pre-rescaled so values lie in [0, 1].
#[derive(Debug, Clone)]
pub enum LossFn {
    /// coeff·‖x − center‖².
    Quadratic { center: DVector<f64>, coeff: f64 },
    /// ⟨slope, x⟩ + offset (rescale already applied).
    Affine { slope: DVector<f64>, offset: f64 },
    /// (max_i(⟨cᵢ, x⟩ + bᵢ) − lo) / range.
    MaxAffine {
        slopes: Vec<DVector<f64>>,
        offsets: Vec<f64>,
        lo: f64,
        range: f64,
    },
    /// Lovász extension of F at u = (x + 1)/2, defined on the box [−1, 1]^d.
    Lovasz { table: SetFunctionTable },
}

impl LossFn {
    pub fn dim(&self) -> usize {
        match self {
            LossFn::Quadratic { center, .. } => center.len(),
            LossFn::Affine { slope, .. } => slope.len(),
            LossFn::MaxAffine { slopes, .. } => slopes[0].len(),
            LossFn::Lovasz { table } => table.ground_size(),
        }
    }

    /// Noiseless value. Defined on all of ℝ^d for the affine/quadratic
    /// families; the Lovász loss clamps into its box (only body points are
    /// meaningful).
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            LossFn::Quadratic { center, coeff } => coeff * (x - center).norm_squared(),
            LossFn::Affine { slope, offset } => slope.dot(x) + offset,
            LossFn::MaxAffine { slopes, offsets, lo, range } => {
                let m = slopes
                    .iter()
                    .zip(offsets.iter())
                    .map(|(c, b)| c.dot(x) + b)
                    .fold(f64::NEG_INFINITY, f64::max);
                (m - lo) / range
            }
            LossFn::Lovasz { table } => {
                let u = x.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0));
                lovasz_extension(table, &u).expect("clamped input is in the cube")
            }
        }
    }

    /// A subgradient of the loss at x.
    pub fn subgrad(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LossFn::Quadratic { center, coeff } => (x - center) * (2.0 * coeff),
            LossFn::Affine { slope, .. } => slope.clone(),
            LossFn::MaxAffine { slopes, offsets, range, .. } => {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, (c, b)) in slopes.iter().zip(offsets.iter()).enumerate() {
                    let v = c.dot(x) + b;
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                &slopes[best] / *range
            }
            LossFn::Lovasz { table } => {
                let u = x.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0));
                lovasz_subgradient(table, &u).expect("clamped input is in the cube") * 0.5
            }
        }
    }
}

/// Support value of the body in direction c, or the positioning radius
/// bound 2(d + 1)·‖c‖ when no closed form exists.
fn support_or_bound(body: &Body, c: &DVector<f64>) -> f64 {
    body.support(c)
        .unwrap_or_else(|| 2.0 * (body.dim() as f64 + 1.0) * c.norm())
}

/// Quadratic loss coeff·‖x − center‖² with coeff = scale/(4(d+1))², the
/// normalizer that keeps values in [0, 1] on any positioned body when
/// scale ≤ 1. Larger scales are allowed as long as the body's reach from
/// the center keeps the range inside [0, 1].
pub fn make_quadratic(body: &Body, center: DVector<f64>, scale: f64) -> Result<LossFn> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("quadratic scale must be positive, got {scale}")));
    }
    if center.len() != body.dim() {
        return Err(Error::InvalidInput("quadratic center dimension mismatch".into()));
    }
    if !body.contains(&center) {
        return Err(Error::InvalidInput("quadratic center must lie in the body".into()));
    }
    let d = body.dim() as f64;
    let coeff = scale / (4.0 * (d + 1.0)).powi(2);
    let reach = body.max_dist_from(&center);
    if coeff * reach * reach > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!(
            "quadratic scale {scale} pushes values to {:.3} > 1 on the body",
            coeff * reach * reach
        )));
    }
    Ok(LossFn::Quadratic { center, coeff })
}

/// Linear loss ⟨c, x⟩ affinely rescaled onto [0, 1] over the body (exactly,
/// when the body has a support function).
pub fn make_linear(body: &Body, c: DVector<f64>) -> Result<LossFn> {
    if c.len() != body.dim() {
        return Err(Error::InvalidInput("linear slope dimension mismatch".into()));
    }
    let hi = support_or_bound(body, &c);
    let lo = -support_or_bound(body, &(-&c));
    let range = hi - lo;
    if !(range > 1e-12) {
        return Err(Error::InvalidInput("linear loss is constant on the body; cannot rescale".into()));
    }
    Ok(LossFn::Affine {
        slope: &c / range,
        offset: -lo / range,
    })
}

/// Max-affine loss max_i(⟨cᵢ, x⟩ + bᵢ) rescaled onto [0, 1] over the body.
/// The upper end is exact (max commutes with max); the lower end uses the
/// certified bound max_i min_K(⟨cᵢ, x⟩ + bᵢ) ≤ min_K max_i(...), so the
/// rescaled values stay in [0, 1] without clipping (which would break
/// convexity). A single piece reduces exactly to the linear rescale.
pub fn make_maxlinear(body: &Body, pieces: &[(DVector<f64>, f64)]) -> Result<LossFn> {
    if pieces.is_empty() {
        return Err(Error::InvalidInput("max-affine loss needs at least one piece".into()));
    }
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::NEG_INFINITY;
    for (c, b) in pieces {
        if c.len() != body.dim() {
            return Err(Error::InvalidInput("max-affine piece dimension mismatch".into()));
        }
        hi = hi.max(b + support_or_bound(body, c));
        lo = lo.max(b - support_or_bound(body, &(-c)));
    }
    let range = hi - lo;
    if !(range > 1e-12) {
        return Err(Error::InvalidInput(
            "max-affine pieces are degenerate (constant on the body); cannot rescale".into(),
        ));
    }
    Ok(LossFn::MaxAffine {
        slopes: pieces.iter().map(|(c, _)| c.clone()).collect(),
        offsets: pieces.iter().map(|(_, b)| *b).collect(),
        lo,
        range,
    })
}

/// Lovász-extension loss of a set function, on the box [−1, 1]^d.
pub fn make_lovasz(table: SetFunctionTable) -> LossFn {
    LossFn::Lovasz { table }
}

/// When each loss applies.
#[derive(Debug, Clone)]
pub enum Schedule {
    /// Same loss every round.
    Fixed(LossFn),
    /// One loss per round, pre-generated.
    Sequence(Vec<LossFn>),
    /// `first` for rounds 1..=at, `second` afterwards.
    Switch {
        first: LossFn,
        second: LossFn,
        at: usize,
    },
}

impl Schedule {
    fn loss_at(&self, t: usize) -> Result<&LossFn> {
        if t == 0 {
            return Err(Error::InvalidInput("rounds are 1-based".into()));
        }
        match self {
            Schedule::Fixed(l) => Ok(l),
            Schedule::Sequence(v) => v.get(t - 1).ok_or_else(|| {
                Error::InvalidInput(format!("round {t} beyond the schedule length {}", v.len()))
            }),
            Schedule::Switch { first, second, at } => {
                Ok(if t <= *at { first } else { second })
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Schedule::Fixed(l) => l.dim(),
            Schedule::Sequence(v) => v[0].dim(),
            Schedule::Switch { first, .. } => first.dim(),
        }
    }
}

/// Drifting-center quadratics: centers move on a circle of the given
/// amplitude in the first two coordinates (one coordinate in d = 1),
/// completing a cycle every `period` rounds.
pub fn drifting_quadratics(
    body: &Body,
    base: DVector<f64>,
    amplitude: f64,
    period: usize,
    scale: f64,
    n: usize,
) -> Result<Vec<LossFn>> {
    if period == 0 {
        return Err(Error::InvalidInput("drift period must be positive".into()));
    }
    let d = body.dim();
    let mut out = Vec::with_capacity(n);
    for t in 1..=n {
        let phase = 2.0 * std::f64::consts::PI * (t as f64) / (period as f64);
        let mut center = base.clone();
        center[0] += amplitude * phase.cos();
        if d > 1 {
            center[1] += amplitude * phase.sin();
        }
        out.push(make_quadratic(body, center, scale)?);
    }
    Ok(out)
}

/// One bandit observation.
#[derive(Debug, Clone, Copy)]
pub struct Observed {
    /// raw + noise: what the learner sees.
    pub value: f64,
    /// Noiseless loss (white-box, for regret accounting only).
    pub raw: f64,
    pub noise: f64,
}

/// An oblivious environment: the loss schedule and all noise draws are fixed
/// at construction, so queries are pure.
#[derive(Debug, Clone)]
pub struct LossOracle {
    pub mode: Mode,
    schedule: Schedule,
    noise: NoiseModel,
    horizon: usize,
    noise_seq: Vec<f64>,
}

impl LossOracle {
    pub fn new<R: Rng>(
        mode: Mode,
        schedule: Schedule,
        noise: NoiseModel,
        horizon: usize,
        rng: &mut R,
    ) -> Result<LossOracle> {
        if let Schedule::Sequence(v) = &schedule {
            if v.len() < horizon {
                return Err(Error::InvalidInput(format!(
                    "schedule has {} losses but the horizon is {horizon}",
                    v.len()
                )));
            }
            if v.is_empty() && horizon > 0 {
                return Err(Error::InvalidInput("empty loss sequence".into()));
            }
        }
        let noise_seq = (0..horizon).map(|_| noise.draw(rng)).collect();
        Ok(LossOracle {
            mode,
            schedule,
            noise,
            horizon,
            noise_seq,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.schedule.dim()
    }

    pub fn noise_model(&self) -> &NoiseModel {
        &self.noise
    }

    /// Bandit query at round t (1-based): noiseless loss plus that round's
    /// pre-drawn noise.
    pub fn query(&self, t: usize, action: &DVector<f64>) -> Result<Observed> {
        if t == 0 || t > self.horizon {
            return Err(Error::InvalidInput(format!(
                "query round {t} outside horizon 1..={}",
                self.horizon
            )));
        }
        let raw = self.schedule.loss_at(t)?.value(action);
        let noise = self.noise_seq[t - 1];
        Ok(Observed { value: raw + noise, raw, noise })
    }

    /// White-box noiseless value (tests and regret accounting only).
    pub fn value_noiseless(&self, t: usize, x: &DVector<f64>) -> Result<f64> {
        Ok(self.schedule.loss_at(t)?.value(x))
    }

    /// White-box subgradient of ℓ_t.
    pub fn subgrad_noiseless(&self, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.schedule.loss_at(t)?.subgrad(x))
    }

    /// Average loss over the horizon: value and one subgradient.
    fn average(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let n = self.horizon;
        if n == 0 {
            return Ok((0.0, DVector::zeros(x.len())));
        }
        match &self.schedule {
            Schedule::Fixed(l) => Ok((l.value(x), l.subgrad(x))),
            Schedule::Switch { first, second, at } => {
                let k = (*at).min(n) as f64;
                let w1 = k / n as f64;
                let w2 = 1.0 - w1;
                Ok((
                    w1 * first.value(x) + w2 * second.value(x),
                    first.subgrad(x) * w1 + second.subgrad(x) * w2,
                ))
            }
            Schedule::Sequence(v) => {
                let mut val = 0.0;
                let mut g = DVector::zeros(x.len());
                for l in &v[..n] {
                    val += l.value(x);
                    g += l.subgrad(x);
                }
                Ok((val / n as f64, g / n as f64))
            }
        }
    }
}

/// Offline comparator: projected subgradient descent on the average loss
/// over the body (1500 iterations, step 1/√k, best iterate kept). Returns
/// the comparator point and its total loss Σ_t ℓ_t(x⋆).
pub fn best_fixed_point(oracle: &LossOracle, body: &Body) -> Result<(DVector<f64>, f64)> {
    if body.exact_projection(&DVector::zeros(body.dim())).is_none() {
        return Err(Error::UnsupportedBody(
            "comparator search needs a body with an exact Euclidean projection".into(),
        ));
    }
    let mut x = body
        .interior_point()
        .unwrap_or_else(|| DVector::zeros(body.dim()));
    if oracle.horizon() == 0 {
        return Ok((x, 0.0));
    }
    let (mut best_val, _) = oracle.average(&x)?;
    let mut best = x.clone();
    // Steps are normalized by the largest subgradient norm seen, so the
    // schedule is invariant to the loss's [0, 1] rescale factor.
    let radius = 2.0 * (body.dim() as f64 + 1.0);
    let mut g_max = 1e-12_f64;
    for k in 1..=1500 {
        let (_, g) = oracle.average(&x)?;
        g_max = g_max.max(g.norm());
        let step = radius / (g_max * (k as f64).sqrt());
        x = body
            .exact_projection(&(&x - g * step))
            .expect("projection checked above");
        let (val, _) = oracle.average(&x)?;
        if val < best_val {
            best_val = val;
            best = x.clone();
        }
    }
    Ok((best.clone(), best_val * oracle.horizon() as f64))
}

/// Prefix sums of ℓ_t(A_t) − ℓ_t(x⋆), the true-regret series.
pub fn true_regret(
    oracle: &LossOracle,
    actions: &[DVector<f64>],
    x_star: &DVector<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(actions.len());
    let mut acc = 0.0;
    for (i, a) in actions.iter().enumerate() {
        let t = i + 1;
        acc += oracle.value_noiseless(t, a)? - oracle.value_noiseless(t, x_star)?;
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn unit_ball() -> Body {
        Body::ball(2, 1.0).unwrap()
    }

    #[test]
    fn quadratic_normalizer_and_zero_at_center() {
        let l = make_quadratic(&unit_ball(), DVector::zeros(2), 1.0).unwrap();
        assert_eq!(l.value(&DVector::zeros(2)), 0.0);
        // coeff = 1/(4·3)² = 1/144.
        let v = l.value(&vec2(1.0, 0.0));
        assert!((v - 1.0 / 144.0).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn quadratic_rejects_range_overflow() {
        // scale far too large for the unit ball.
        assert!(make_quadratic(&unit_ball(), DVector::zeros(2), 200.0).is_err());
        // center outside the body.
        assert!(make_quadratic(&unit_ball(), vec2(2.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn linear_rescale_hits_zero_and_one() {
        let l = make_linear(&unit_ball(), vec2(1.0, 0.0)).unwrap();
        assert!((l.value(&vec2(-1.0, 0.0)) - 0.0).abs() < 1e-12);
        assert!((l.value(&vec2(1.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((l.value(&DVector::zeros(2)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_piece_maxlinear_equals_linear() {
        let c = vec2(0.7, -0.4);
        let lin = make_linear(&unit_ball(), c.clone()).unwrap();
        let max1 = make_maxlinear(&unit_ball(), &[(c, 0.3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let x = vec2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            assert!((lin.value(&x) - max1.value(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn maxlinear_values_in_unit_interval_on_body() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pieces: Vec<(DVector<f64>, f64)> = (0..4)
            .map(|_| {
                (
                    vec2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    rng.gen_range(-0.5..0.5),
                )
            })
            .collect();
        let l = make_maxlinear(&unit_ball(), &pieces).unwrap();
        for _ in 0..1000 {
            let x = loop {
                let c = vec2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if unit_ball().contains(&c) {
                    break c;
                }
            };
            let v = l.value(&x);
            assert!((-1e-9..=1.0 + 1e-9).contains(&v), "value {v} escaped [0,1]");
        }
    }

    #[test]
    fn losses_are_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let losses = vec![
            make_quadratic(&unit_ball(), vec2(0.2, -0.1), 1.0).unwrap(),
            make_linear(&unit_ball(), vec2(0.3, 0.9)).unwrap(),
            make_maxlinear(
                &unit_ball(),
                &[(vec2(1.0, 0.0), 0.0), (vec2(-0.5, 0.5), 0.1)],
            )
            .unwrap(),
        ];
        for l in &losses {
            for _ in 0..2000 {
                let x = vec2(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
                let y = vec2(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
                let mid = (&x + &y) * 0.5;
                assert!(l.value(&mid) <= 0.5 * (l.value(&x) + l.value(&y)) + 1e-9);
            }
        }
    }

    #[test]
    fn lovasz_cardinality_example() {
        // F(S) = |S|/2 on two elements.
        let f = SetFunctionTable::new(2, vec![0.0, 0.5, 0.5, 1.0]).unwrap();
        let v = lovasz_extension(&f, &vec2(0.3, 0.7)).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
        assert_eq!(lovasz_extension(&f, &DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn lovasz_single_edge_cut_is_absolute_difference() {
        let f = SetFunctionTable::cut(2, &[(0, 1, 1.0)]).unwrap();
        let v = lovasz_extension(&f, &vec2(0.8, 0.3)).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "cut extension is |x₁−x₂|, got {v}");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = vec2(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let got = lovasz_extension(&f, &x).unwrap();
            assert!((got - (x[0] - x[1]).abs()) < 1e-12);
        }
    }

    #[test]
    fn lovasz_matches_set_function_at_vertices() {
        let f = SetFunctionTable::cut(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)])
            .unwrap();
        for mask in 0..16usize {
            let x = DVector::from_fn(4, |i, _| if (mask >> i) & 1 == 1 { 1.0 } else { 0.0 });
            let v = lovasz_extension(&f, &x).unwrap();
            assert!((v - f.eval(mask)).abs() < 1e-12);
        }
    }

    #[test]
    fn lovasz_rejects_points_outside_cube() {
        let f = SetFunctionTable::new(2, vec![0.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(lovasz_extension(&f, &vec2(1.2, 0.0)).is_err());
        assert!(lovasz_extension(&f, &vec2(0.5, -0.1)).is_err());
        // Boundary noise within 1e-9 is tolerated.
        assert!(lovasz_extension(&f, &vec2(1.0 + 5e-10, 0.0)).is_ok());
    }

    #[test]
    fn cycle_cut_is_submodular_and_rounding_dominates() {
        let f = SetFunctionTable::cut(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)])
            .unwrap();
        assert!(f.is_submodular());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let u = DVector::from_fn(4, |_, _| rng.gen_range(0.0..1.0));
            let (_, rounded) = best_threshold_round(&f, &u).unwrap();
            let ext = lovasz_extension(&f, &u).unwrap();
            assert!(rounded <= ext + 1e-12, "rounding must not exceed the extension");
        }
        // A non-submodular table is caught.
        let bad = SetFunctionTable::new(2, vec![0.0, 0.1, 0.1, 1.0]).unwrap();
        assert!(!bad.is_submodular());
    }

    #[test]
    fn noise_models_enforce_subgaussian_budget() {
        assert!(NoiseModel::gaussian(0.1).is_ok());
        assert!(NoiseModel::gaussian(MAX_GAUSSIAN_STD).is_ok());
        assert!(NoiseModel::gaussian(0.7).is_err());
        assert!(NoiseModel::bounded_uniform(0.8).is_ok());
        assert!(NoiseModel::bounded_uniform(0.9).is_err());
    }

    #[test]
    fn oracle_is_deterministic_and_oblivious() {
        let l = make_quadratic(&unit_ball(), DVector::zeros(2), 1.0).unwrap();
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            LossOracle::new(
                Mode::Stochastic,
                Schedule::Fixed(l.clone()),
                NoiseModel::gaussian(0.1).unwrap(),
                50,
                &mut rng,
            )
            .unwrap()
        };
        let o1 = mk();
        let o2 = mk();
        let a = vec2(0.1, 0.2);
        for t in 1..=50 {
            let q1 = o1.query(t, &a).unwrap();
            let q2 = o2.query(t, &a).unwrap();
            assert_eq!(q1.value, q2.value);
            assert_eq!(q1.noise, q2.noise);
            assert_eq!(q1.raw + q1.noise, q1.value);
        }
        // Same round twice → same noise (pre-drawn).
        assert_eq!(o1.query(3, &a).unwrap().noise, o1.query(3, &a).unwrap().noise);
        assert!(o1.query(0, &a).is_err());
        assert!(o1.query(51, &a).is_err());
    }

    #[test]
    fn comparator_finds_quadratic_center() {
        let l = make_quadratic(&unit_ball(), vec2(0.3, -0.2), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = LossOracle::new(
            Mode::Stochastic,
            Schedule::Fixed(l),
            NoiseModel::None,
            100,
            &mut rng,
        )
        .unwrap();
        let (x, total) = best_fixed_point(&o, &unit_ball()).unwrap();
        assert!((x - vec2(0.3, -0.2)).norm() < 1e-3);
        assert!(total.abs() < 1e-4, "total loss at the minimizer is ~0, got {total}");
    }

    #[test]
    fn comparator_rides_linear_to_boundary() {
        let c = vec2(0.6, 0.8);
        let l = make_linear(&unit_ball(), c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = LossOracle::new(Mode::Adversarial, Schedule::Fixed(l), NoiseModel::None, 10, &mut rng)
            .unwrap();
        let (x, _) = best_fixed_point(&o, &unit_ball()).unwrap();
        assert!((x - (-&c / c.norm())).norm() < 1e-3);
    }

    #[test]
    fn comparator_splits_two_quadratics() {
        let a = vec2(0.3, 0.0);
        let b = vec2(-0.3, 0.2);
        let la = make_quadratic(&unit_ball(), a.clone(), 1.0).unwrap();
        let lb = make_quadratic(&unit_ball(), b.clone(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = LossOracle::new(
            Mode::Adversarial,
            Schedule::Switch { first: la, second: lb, at: 50 },
            NoiseModel::None,
            100,
            &mut rng,
        )
        .unwrap();
        let (x, _) = best_fixed_point(&o, &unit_ball()).unwrap();
        let mid = (&a + &b) * 0.5;
        assert!((x - mid).norm() < 1e-3, "equal-weight switch minimizes at the midpoint");
    }

    #[test]
    fn regret_series_is_prefix_sum() {
        let l = make_linear(&unit_ball(), vec2(1.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let o = LossOracle::new(Mode::Adversarial, Schedule::Fixed(l), NoiseModel::None, 3, &mut rng)
            .unwrap();
        let star = vec2(-1.0, 0.0); // loss 0
        let actions = vec![vec2(1.0, 0.0), star.clone(), vec2(0.0, 0.0)];
        let series = true_regret(&o, &actions, &star).unwrap();
        assert!((series[0] - 1.0).abs() < 1e-12);
        assert!((series[1] - 1.0).abs() < 1e-12);
        assert!((series[2] - 1.5).abs() < 1e-12);
        // Playing the comparator forever gives zero regret.
        let zeros = true_regret(&o, &vec![star.clone(); 3], &star).unwrap();
        assert!(zeros.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn drifting_centers_stay_valid() {
        let seq =
            drifting_quadratics(&unit_ball(), DVector::zeros(2), 0.4, 500, 1.0, 1000).unwrap();
        assert_eq!(seq.len(), 1000);
        for l in seq.iter().step_by(97) {
            if let LossFn::Quadratic { center, .. } = l {
                assert!(unit_ball().contains(center));
            } else {
                panic!("expected quadratic");
            }
        }
    }
}
