//! Losses and the Gaussian latent helpers. Every function returns its value
//! together with the exact gradient(s).

use ndarray::Zip;

use super::{check_finite, Matrix};
use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-7;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Average over every entry.
    Mean,
    /// Sum over columns, average over rows (per-sample sum, batch mean).
    SumPerRow,
}

impl Reduction {
    fn scale(self, m: &Matrix) -> f64 {
        match self {
            Reduction::Mean => 1.0 / (m.len().max(1) as f64),
            Reduction::SumPerRow => 1.0 / (m.nrows().max(1) as f64),
        }
    }
}

fn same_shape(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context,
            expected: vec![a.nrows(), a.ncols()],
            actual: vec![b.nrows(), b.ncols()],
        });
    }
    Ok(())
}

/// Binary cross-entropy of probabilities `pred` against `target`, with the
/// prediction clamped to `[ε, 1 − ε]`. Clamped entries have zero gradient.
pub fn bce(pred: &Matrix, target: &Matrix, reduction: Reduction) -> Result<(f64, Matrix)> {
    same_shape("bce", pred, target)?;
    let scale = reduction.scale(pred);
    let mut grad = Matrix::zeros(pred.raw_dim());
    let mut total = 0.0;
    Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        if p > BCE_EPS && p < 1.0 - BCE_EPS {
            *g = scale * (pc - t) / (pc * (1.0 - pc));
        }
    });
    let value = total * scale;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "bce".into() });
    }
    Ok((value, grad))
}

pub fn mse(pred: &Matrix, target: &Matrix, reduction: Reduction) -> Result<(f64, Matrix)> {
    same_shape("mse", pred, target)?;
    let scale = reduction.scale(pred);
    let diff = pred - target;
    let value = scale * diff.iter().map(|d| d * d).sum::<f64>();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "mse".into() });
    }
    Ok((value, diff * (2.0 * scale)))
}

/// Per-row `0.5 Σ (μ² + e^{logvar} − logvar − 1)`, i.e. `KL(N(μ, σ²) ‖ N(0, I))`.
/// Returns the per-row values and the gradients of their sum.
pub fn kl_diag_gaussian(mu: &Matrix, logvar: &Matrix) -> Result<(Vec<f64>, Matrix, Matrix)> {
    same_shape("kl_diag_gaussian", mu, logvar)?;
    check_finite("kl_diag_gaussian mu", mu)?;
    check_finite("kl_diag_gaussian logvar", logvar)?;
    let per_row = mu
        .outer_iter()
        .zip(logvar.outer_iter())
        .map(|(m, l)| 0.5 * m.iter().zip(l.iter()).map(|(&m, &l)| m * m + l.exp() - l - 1.0).sum::<f64>())
        .collect::<Vec<_>>();
    if per_row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "kl_diag_gaussian".into() });
    }
    let g_mu = mu.clone();
    let g_lv = logvar.mapv(|l| 0.5 * (l.exp() - 1.0));
    Ok((per_row, g_mu, g_lv))
}

/// Scalar convenience form of [`kl_diag_gaussian`] over all rows.
pub fn kl_total(mu: &Matrix, logvar: &Matrix) -> Result<f64> {
    Ok(kl_diag_gaussian(mu, logvar)?.0.iter().sum())
}

/// `z = μ + e^{logvar/2} ⊙ ε`.
pub fn reparameterize(mu: &Matrix, logvar: &Matrix, eps: &Matrix) -> Result<Matrix> {
    same_shape("reparameterize", mu, logvar)?;
    same_shape("reparameterize noise", mu, eps)?;
    let mut z = mu.clone();
    Zip::from(&mut z).and(logvar).and(eps).for_each(|z, &l, &e| {
        let sd = (0.5 * l).exp();
        if sd != 0.0 {
            *z += sd * e;
        }
    });
    check_finite("reparameterize", &z)?;
    Ok(z)
}

/// Gradients of `z` with respect to `(μ, logvar)` given `dL/dz`.
pub fn reparameterize_backward(logvar: &Matrix, eps: &Matrix, grad_z: &Matrix) -> (Matrix, Matrix) {
    let mut g_lv = grad_z.clone();
    Zip::from(&mut g_lv)
        .and(logvar)
        .and(eps)
        .for_each(|g, &l, &e| *g *= 0.5 * (0.5 * l).exp() * e);
    (grad_z.clone(), g_lv)
}

/// Clamps log-variances into `[LOGVAR_MIN, LOGVAR_MAX]`; the returned mask is
/// 1 where the gradient passes through.
pub fn clamp_logvar(raw: &Matrix) -> (Matrix, Matrix) {
    let clamped = raw.mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
    let mask = raw.mapv(|v| if (LOGVAR_MIN..=LOGVAR_MAX).contains(&v) { 1.0 } else { 0.0 });
    (clamped, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn kl_closed_form_points() {
        assert_eq!(kl_total(&array![[0.0, 0.0]], &array![[0.0, 0.0]]).unwrap(), 0.0);
        assert_eq!(kl_total(&array![[1.0]], &array![[0.0]]).unwrap(), 0.5);
    }

    #[test]
    fn bce_and_mse_basics() {
        let (v, _) = bce(&array![[1.0, 0.0]], &array![[1.0, 0.0]], Reduction::Mean).unwrap();
        assert!(v < 1e-6);
        let (v, _) = mse(&array![[1.0, 1.0]], &array![[0.0, 0.0]], Reduction::Mean).unwrap();
        assert_eq!(v, 1.0);
        assert!(mse(&array![[1.0]], &array![[1.0, 2.0]], Reduction::Mean).is_err());
    }

    #[test]
    fn zero_variance_reparameterization_is_the_mean() {
        let mu = array![[0.3, -1.2]];
        let lv = array![[f64::NEG_INFINITY, f64::NEG_INFINITY]];
        let z = reparameterize(&mu, &lv, &array![[2.0, -3.0]]).unwrap();
        assert_eq!(z, mu);
    }

    #[test]
    fn reparameterized_draws_match_moments() {
        let mut r = rng::stream(11, &[]);
        let n = 100_000;
        let (mu, lv) = (1.5, (0.8f64).ln() * 2.0);
        let eps = Matrix::from_shape_fn((n, 1), |_| StandardNormal.sample(&mut r));
        let z = reparameterize(&Matrix::from_elem((n, 1), mu), &Matrix::from_elem((n, 1), lv), &eps).unwrap();
        let mean = z.mean().unwrap();
        let sd = (z.mapv(|v| (v - mean).powi(2)).sum() / (n as f64 - 1.0)).sqrt();
        assert!((mean - mu).abs() < 0.01 * mu, "mean {mean}");
        assert!((sd - 0.8).abs() < 0.01 * 0.8, "sd {sd}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::neural::gradcheck::{assert_close, numeric};
        use rand::Rng as _;
        let mut r = rng::stream(24, &[]);
        let pred = Matrix::from_shape_fn((3, 4), |_| r.random_range(0.05..0.95));
        let target = Matrix::from_shape_fn((3, 4), |_| r.random_range(0.0..1.0));
        for red in [Reduction::Mean, Reduction::SumPerRow] {
            let (_, g) = bce(&pred, &target, red).unwrap();
            assert_close(g.iter(), numeric(&pred, |p| bce(p, &target, red).unwrap().0).iter());
            let (_, g) = mse(&pred, &target, red).unwrap();
            assert_close(g.iter(), numeric(&pred, |p| mse(p, &target, red).unwrap().0).iter());
        }
        let mu = Matrix::from_shape_fn((2, 3), |_| r.random_range(-2.0..2.0));
        let lv = Matrix::from_shape_fn((2, 3), |_| r.random_range(-2.0..2.0));
        let (_, g_mu, g_lv) = kl_diag_gaussian(&mu, &lv).unwrap();
        assert_close(g_mu.iter(), numeric(&mu, |m| kl_total(m, &lv).unwrap()).iter());
        assert_close(g_lv.iter(), numeric(&lv, |l| kl_total(&mu, l).unwrap()).iter());
        let eps = Matrix::from_shape_fn((2, 3), |_| StandardNormal.sample(&mut r));
        let w = Matrix::from_shape_fn((2, 3), |_| r.random_range(-1.0..1.0));
        let (g_m, g_l) = reparameterize_backward(&lv, &eps, &w);
        let f = |m: &Matrix, l: &Matrix| (&reparameterize(m, l, &eps).unwrap() * &w).sum();
        assert_close(g_m.iter(), numeric(&mu, |m| f(m, &lv)).iter());
        assert_close(g_l.iter(), numeric(&lv, |l| f(&mu, l)).iter());
    }

    #[test]
    fn kl_matches_quadrature() {
        // KL(q || p) = ∫ q log(q / p) for one dimension, midpoint rule on ±12σ.
        for &(mu, sd) in &[(0.0, 1.0), (1.3, 0.4), (-0.7, 2.5), (2.0, 0.1)] {
            let pdf = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            let (lo, hi, steps) = (mu - 12.0 * sd, mu + 12.0 * sd, 200_000);
            let dx = (hi - lo) / steps as f64;
            let mut acc = 0.0;
            for i in 0..steps {
                let x = lo + (i as f64 + 0.5) * dx;
                let q = pdf(x, mu, sd);
                if q > 0.0 {
                    acc += q * (q / pdf(x, 0.0, 1.0)).ln() * dx;
                }
            }
            let closed = kl_total(&array![[mu]], &array![[2.0 * sd.ln()]]).unwrap();
            assert!((acc - closed).abs() < 1e-6 * closed.max(1.0), "mu {mu} sd {sd}: {acc} vs {closed}");
        }
    }
}
