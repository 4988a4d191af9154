//! Pull-back metric algebra.
//!
//! Embedding the loss surface `L = f(loss(θ))` in an ambient space with metric
//! `diag(γ, 1)` induces the metric `γ + ∇f ∇fᵀ` on parameter space. Its inverse
//! is a rank-one correction of `γ⁻¹`, and the preconditioned gradient collapses
//! to `γ⁻¹∇f / (1 + ∇fᵀγ⁻¹∇f)`: the direction of `γ⁻¹∇f` is kept and only the
//! step length shrinks.
//!
//! The production updates ([`induced_update_flat`], [`induced_update_log`]) are
//! O(N). The dense routines ([`pullback_metric_dense`],
//! [`sherman_morrison_inverse`]) materialise N×N matrices and exist only to
//! cross-check the O(N) forms on small problems.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{dot, ParamVector};

/// Largest dimension accepted by the dense routines.
pub const DENSE_MAX_DIM: usize = 16;

const SYMMETRY_TOL: f64 = 1e-12;

/// Height function used to embed the loss surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    /// `L = loss`
    Identity,
    /// `L = ln(loss)`; requires strictly positive losses.
    LogLoss,
}

/// Inverse of the ambient parameter-space metric γ.
#[derive(Debug, Clone, PartialEq)]
pub enum InverseMetric {
    Euclidean,
    DiagonalScaled(ParamVector),
}

impl InverseMetric {
    /// Diagonal inverse metric; every entry must be positive and finite.
    pub fn diagonal(entries: ParamVector) -> Result<Self> {
        if entries.iter().all(|&d| d > 0.0 && d.is_finite()) {
            Ok(Self::DiagonalScaled(entries))
        } else {
            Err(Error::Domain(
                "diagonal inverse metric entries must be positive and finite".into(),
            ))
        }
    }
}

/// `γ⁻¹ g`.
pub fn apply_inverse_metric(gamma_inv: &InverseMetric, g: &ParamVector) -> Result<ParamVector> {
    match gamma_inv {
        InverseMetric::Euclidean => Ok(g.clone()),
        InverseMetric::DiagonalScaled(d) => d.zip_map(g, |di, gi| di * gi),
    }
}

fn check_step_params(eta: f64, xi: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", format!("must be > 0, got {eta}")));
    }
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::invalid("xi", format!("must be >= 0, got {xi}")));
    }
    Ok(())
}

/// Preconditioned step for the identity embedding:
/// `-η γ⁻¹g / (1 + ξ gᵀγ⁻¹g)`.
pub fn induced_update_flat(
    g: &ParamVector,
    gamma_inv: &InverseMetric,
    eta: f64,
    xi: f64,
) -> Result<ParamVector> {
    check_step_params(eta, xi)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let raised = apply_inverse_metric(gamma_inv, g)?;
    let denom = 1.0 + xi * dot(g, &raised)?;
    let update = raised.scale(-eta / denom);
    if update.is_finite() {
        Ok(update)
    } else {
        Err(Error::NonFinite("flat update"))
    }
}

/// Preconditioned step for the log embedding:
/// `-η L γ⁻¹g / (L² + ξ gᵀγ⁻¹g)`.
///
/// Multiplying both `g` and `loss` by the same constant leaves the result
/// unchanged, so the absolute normalisation of the loss drops out.
pub fn induced_update_log(
    g: &ParamVector,
    loss: f64,
    gamma_inv: &InverseMetric,
    eta: f64,
    xi: f64,
) -> Result<ParamVector> {
    check_step_params(eta, xi)?;
    if !loss.is_finite() || loss <= 0.0 {
        return Err(Error::Domain(format!(
            "log-loss embedding needs a positive finite loss, got {loss}"
        )));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let raised = apply_inverse_metric(gamma_inv, g)?;
    let denom = loss * loss + xi * dot(g, &raised)?;
    let update = raised.scale(-eta * loss / denom);
    if update.is_finite() {
        Ok(update)
    } else {
        Err(Error::NonFinite("log update"))
    }
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension {
            expected: n,
            got: m.ncols(),
        });
    }
    if n > DENSE_MAX_DIM {
        return Err(Error::Usage(format!(
            "dense metric routines are limited to N <= {DENSE_MAX_DIM}, got {n}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dense matrix"));
    }
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Domain(format!("{what} is not symmetric")));
            }
        }
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Domain(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Induced metric `γ + g gᵀ` as a dense matrix.
pub fn pullback_metric_dense(gamma: &DMatrix<f64>, g: &ParamVector) -> Result<DMatrix<f64>> {
    check_spd(gamma, "gamma")?;
    Error::check_len(gamma.nrows(), g.len())?;
    let n = g.len();
    Ok(DMatrix::from_fn(n, n, |i, j| gamma[(i, j)] + g[i] * g[j]))
}

/// Inverse of `γ + g gᵀ` from `γ⁻¹` by the rank-one update
/// `γ⁻¹ - (γ⁻¹g)(γ⁻¹g)ᵀ / (1 + gᵀγ⁻¹g)`.
pub fn sherman_morrison_inverse(gamma_inv: &DMatrix<f64>, g: &ParamVector) -> Result<DMatrix<f64>> {
    check_spd(gamma_inv, "gamma_inv")?;
    Error::check_len(gamma_inv.nrows(), g.len())?;
    let n = g.len();
    // raised = γ⁻¹ g
    let raised: Vec<f64> = (0..n)
        .map(|i| (0..n).fold(0.0, |acc, k| acc + gamma_inv[(i, k)] * g[k]))
        .collect();
    let denom = 1.0 + (0..n).fold(0.0, |acc, k| acc + g[k] * raised[k]);
    Ok(DMatrix::from_fn(n, n, |i, j| {
        gamma_inv[(i, j)] - raised[i] * raised[j] / denom
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn assert_close(a: &ParamVector, b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn inverse_metric_application() {
        let g = pv(&[2.0, 3.0]);
        assert_eq!(apply_inverse_metric(&InverseMetric::Euclidean, &g).unwrap(), g);
        let d = InverseMetric::diagonal(pv(&[0.5, 2.0])).unwrap();
        assert_eq!(apply_inverse_metric(&d, &g).unwrap(), pv(&[1.0, 6.0]));
        let ones = InverseMetric::diagonal(pv(&[1.0, 1.0])).unwrap();
        assert_eq!(apply_inverse_metric(&ones, &g).unwrap(), g);
        let short = InverseMetric::diagonal(pv(&[1.0])).unwrap();
        assert!(apply_inverse_metric(&short, &g).is_err());
    }

    #[test]
    fn diagonal_must_be_positive() {
        assert!(InverseMetric::diagonal(pv(&[1.0, 0.0])).is_err());
        assert!(InverseMetric::diagonal(pv(&[-1.0])).is_err());
    }

    #[test]
    fn flat_update_examples() {
        let e = InverseMetric::Euclidean;
        let zero = ParamVector::zeros(3);
        assert_eq!(induced_update_flat(&zero, &e, 0.3, 2.0).unwrap(), zero.scale(-1.0));

        let g = pv(&[1.5, -0.25, 4.0]);
        let plain = induced_update_flat(&g, &e, 0.1, 0.0).unwrap();
        assert_eq!(plain, g.scale(-0.1));

        let u = induced_update_flat(&pv(&[3.0, 4.0]), &e, 1.0, 1.0).unwrap();
        assert_close(&u, &[-3.0 / 26.0, -4.0 / 26.0], 1e-15);
    }

    #[test]
    fn flat_update_rejects_bad_params() {
        let g = pv(&[1.0]);
        assert!(induced_update_flat(&g, &InverseMetric::Euclidean, 0.0, 1.0).is_err());
        assert!(induced_update_flat(&g, &InverseMetric::Euclidean, 1.0, -1.0).is_err());
    }

    #[test]
    fn log_update_examples() {
        let e = InverseMetric::Euclidean;
        let zero = ParamVector::zeros(2);
        let u = induced_update_log(&zero, 0.7, &e, 1.0, 1.0).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
        assert_close(
            &induced_update_log(&pv(&[1.0]), 1.0, &e, 1.0, 1.0).unwrap(),
            &[-0.5],
            1e-15,
        );
        assert_close(
            &induced_update_log(&pv(&[2.0]), 2.0, &e, 1.0, 1.0).unwrap(),
            &[-0.5],
            1e-15,
        );
    }

    #[test]
    fn log_update_needs_positive_loss() {
        let g = pv(&[1.0]);
        for loss in [0.0, -1.0, f64::NAN] {
            let err = induced_update_log(&g, loss, &InverseMetric::Euclidean, 1.0, 1.0);
            assert!(matches!(err, Err(Error::Domain(_))), "loss {loss}");
        }
    }

    #[test]
    fn dense_pullback_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(pullback_metric_dense(&i2, &ParamVector::zeros(2)).unwrap(), i2);
        let i1 = DMatrix::<f64>::identity(1, 1);
        assert_eq!(
            pullback_metric_dense(&i1, &pv(&[2.0])).unwrap(),
            DMatrix::from_row_slice(1, 1, &[5.0])
        );
        assert_eq!(
            pullback_metric_dense(&i2, &pv(&[1.0, 1.0])).unwrap(),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])
        );
    }

    #[test]
    fn dense_rejects_non_spd() {
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            pullback_metric_dense(&not_pd, &pv(&[0.0, 0.0])),
            Err(Error::Domain(_))
        ));
        let not_sym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(sherman_morrison_inverse(&not_sym, &pv(&[0.0, 0.0])).is_err());
        let big = DMatrix::<f64>::identity(17, 17);
        assert!(matches!(
            sherman_morrison_inverse(&big, &ParamVector::zeros(17)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn sherman_morrison_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(sherman_morrison_inverse(&i3, &ParamVector::zeros(3)).unwrap(), i3);
        let i1 = DMatrix::<f64>::identity(1, 1);
        assert_eq!(
            sherman_morrison_inverse(&i1, &pv(&[1.0])).unwrap()[(0, 0)],
            0.5
        );
    }

    #[test]
    fn sherman_morrison_matches_lu_inverse() {
        use crate::numcore::RngStream;
        use rand::Rng;
        let mut rng = RngStream::new(8);
        let n = 8;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let gamma = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let gamma_inv = gamma.clone().lu().try_inverse().unwrap();
        let gamma_inv = (&gamma_inv + gamma_inv.transpose()) * 0.5;
        let g = ParamVector::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();

        let sm = sherman_morrison_inverse(&gamma_inv, &g).unwrap();
        let oracle = pullback_metric_dense(&gamma, &g).unwrap().lu().try_inverse().unwrap();
        assert!((sm - oracle).amax() < 1e-10);
    }

    proptest! {
        #[test]
        fn flat_update_keeps_direction(
            g in proptest::collection::vec(-1e3f64..1e3, 1..32),
            eta in 1e-4f64..10.0,
            xi in 0.0f64..100.0,
        ) {
            let g = pv(&g);
            prop_assume!(g.norm() > 1e-9);
            let u = induced_update_flat(&g, &InverseMetric::Euclidean, eta, xi).unwrap();
            let cos = -dot(&u, &g).unwrap() / (u.norm() * g.norm());
            prop_assert!((cos - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn flat_step_never_exceeds_plain_gradient_step(
            g in proptest::collection::vec(-1e3f64..1e3, 1..16),
            xi in 0.0f64..10.0,
        ) {
            let g = pv(&g);
            let u = induced_update_flat(&g, &InverseMetric::Euclidean, 1.0, xi).unwrap();
            prop_assert!(u.norm() <= g.norm() * (1.0 + 1e-15));
        }
    }
}
