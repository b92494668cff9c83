//! Quick self-diagnostics runnable from the CLI: gauge bisection against
//! closed forms, scalar surrogate unbiasedness against the quadratic closed
//! form, and the follow-the-regularized-leader inequality on random
//! quadratic instances. Each suite prints one [PASS]/[FAIL] line per check
//! and returns whether everything passed.

use bco_core::geometry::{gauge, Body};
use bco_core::surrogate::{s_exact_quadratic, s_monte_carlo, QuadraticLoss, SurrogateParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn report(name: &str, ok: bool, detail: &str) -> bool {
    let tag = if ok { "[PASS]" } else { "[FAIL]" };
    println!("{tag} {name}: {detail}");
    ok
}

/// Membership-oracle bisection vs closed-form gauges on a ball, an offset
/// ellipsoid, and an asymmetric box, 200 points each.
pub fn diag_gauge() -> bool {
    let ball = Body::ball(2, 1.3).unwrap();
    let ellipsoid = Body::ellipsoid(
        DMatrix::from_row_slice(2, 2, &[0.5, 0.05, 0.05, 0.6]),
        DVector::from_vec(vec![0.1, -0.05]),
    )
    .unwrap();
    let boxy = Body::box_body(
        DVector::from_vec(vec![-1.2, -1.05]),
        DVector::from_vec(vec![1.05, 1.3]),
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut all_ok = true;
    for (name, body) in [("ball", ball), ("ellipsoid", ellipsoid), ("box", boxy)] {
        let exact = body.clone();
        let mem = Body::from_membership(
            2,
            Arc::new(move |x: &DVector<f64>| exact.exact_gauge(x).map(|g| g <= 1.0).unwrap_or(false)),
        );
        let mut worst = 0.0_f64;
        for _ in 0..200 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.5..1.5));
            if x.norm() < 1e-6 {
                continue;
            }
            let reference = body.exact_gauge(&x).unwrap();
            let bisected = gauge(&mem, &x).unwrap();
            worst = worst.max((bisected - reference).abs());
        }
        all_ok &= report(
            &format!("gauge/{name}"),
            worst <= 1e-9,
            &format!("max |bisection - closed form| = {worst:.3e} over 200 points (tol 1e-9)"),
        );
    }
    all_ok
}

/// Monte-Carlo mean of the one-point surrogate against the quadratic closed
/// form, 200k draws, 4 standard errors.
pub fn diag_unbiasedness() -> bool {
    let params = SurrogateParams::new(
        0.05,
        DVector::from_vec(vec![0.1, -0.2, 0.3]),
        DMatrix::from_row_slice(3, 3, &[8.0, 1.0, 0.0, 1.0, 6.0, -0.5, 0.0, -0.5, 10.0]),
    )
    .unwrap();
    let loss = QuadraticLoss::new(
        DMatrix::from_row_slice(3, 3, &[1.2, 0.3, 0.0, 0.3, 0.8, -0.2, 0.0, -0.2, 1.5]),
        DVector::from_vec(vec![0.1, -0.4, 0.2]),
        0.3,
    )
    .unwrap();
    let z = DVector::from_vec(vec![-0.2, 0.1, 0.0]);

    let exact = s_exact_quadratic(&params, &loss, &z).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mean, se) = s_monte_carlo(&params, |x| loss.eval(x), &z, 200_000, &mut rng).unwrap();
    let gap = (mean - exact.value).abs();
    report(
        "unbiasedness",
        gap <= 4.0 * se,
        &format!("MC mean {mean:.6} vs exact {:.6}, |gap| = {gap:.2e} <= 4·SE = {:.2e}", exact.value, 4.0 * se),
    )
}

/// FTRL regret inequality on random quadratic instances: the regularized
/// leader's excess loss stays below the regularization plus dual-norm term.
pub fn diag_ftrl() -> bool {
    let body = Body::ball(3, 1.0).unwrap();
    let mut all_ok = true;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        match bco_core::ons::ftrl_quadratic_check(3, 200, 100, 0.1, 0.05, &body, &mut rng) {
            Ok(worst) => {
                all_ok &= report(
                    &format!("ftrl/seed{seed}"),
                    worst <= 1e-6,
                    &format!("worst slack {worst:.3e} (tol 1e-6, 200 rounds, 100 comparators)"),
                );
            }
            Err(e) => {
                all_ok &= report(&format!("ftrl/seed{seed}"), false, &format!("error: {e}"));
            }
        }
    }
    all_ok
}
