//! Deterministic numeric primitives: stable softmax, sharpening, cosine
//! similarity, and their vector-Jacobian products.

use crate::error::{Error, Result};
use crate::types::SharpenMode;

/// Lower clamp applied before every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Smallest vector norm accepted by cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

#[inline]
pub fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

/// Derivative of [`clamped_ln`]; zero inside the clamped region.
#[inline]
pub fn clamped_ln_grad(x: f64) -> f64 {
    if x > LOG_EPS {
        1.0 / x
    } else {
        0.0
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Softmax of `v / temperature`, computed with max subtraction.
pub fn softmax(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_finite(v, "softmax input")?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    Ok(softmax_scaled(v, 1.0 / temperature))
}

/// Infallible softmax of `v * scale` for internal hot paths.
pub(crate) fn softmax_scaled(v: &[f64], scale: f64) -> Vec<f64> {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x * scale));
    let mut out: Vec<f64> = v.iter().map(|&x| (x * scale - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Vector-Jacobian product of softmax: given `p = softmax(s)` and an upstream
/// gradient `g = dL/dp`, returns `dL/ds = p * (g - <p, g>)`.
pub fn softmax_vjp(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Sharpens a probability vector with temperature `sr`.
///
/// Zero entries are clamped to [`LOG_EPS`] before the logarithm.
pub fn sharpen(p: &[f64], sr: f64, mode: SharpenMode) -> Result<Vec<f64>> {
    check_finite(p, "sharpen input")?;
    if !(sr > 0.0 && sr.is_finite()) {
        return Err(Error::invalid(format!(
            "sharpening temperature must be positive, got {sr}"
        )));
    }
    if p.is_empty() {
        return Err(Error::invalid("sharpen of an empty vector"));
    }
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::invalid("sharpen input entries must lie in [0, 1]"));
    }
    Ok(sharpen_unchecked(p, sr, mode))
}

pub(crate) fn sharpen_unchecked(p: &[f64], sr: f64, mode: SharpenMode) -> Vec<f64> {
    match mode {
        SharpenMode::LogDomain => {
            let logs: Vec<f64> = p.iter().map(|&x| clamped_ln(x)).collect();
            softmax_scaled(&logs, 1.0 / sr)
        }
        SharpenMode::Probability => softmax_scaled(p, 1.0 / sr),
    }
}

/// Vector-Jacobian product of [`sharpen`]: maps `dL/d(sharpened)` to `dL/dp`.
pub fn sharpen_vjp(
    p: &[f64],
    sharpened: &[f64],
    g: &[f64],
    sr: f64,
    mode: SharpenMode,
) -> Vec<f64> {
    let d_scaled = softmax_vjp(sharpened, g);
    match mode {
        SharpenMode::LogDomain => d_scaled
            .iter()
            .zip(p)
            .map(|(d, &x)| d / sr * clamped_ln_grad(x))
            .collect(),
        SharpenMode::Probability => d_scaled.iter().map(|d| d / sr).collect(),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; rejects vectors with norm at most [`NORM_EPS`].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine operands", a.len(), b.len()));
    }
    check_finite(a, "cosine operand")?;
    check_finite(b, "cosine operand")?;
    let (na, nb) = (norm(a), norm(b));
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Err(Error::invalid(format!(
            "cosine similarity of a near-zero vector (norms {na:e}, {nb:e})"
        )));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Unit-normalizes `v`. Norms below [`NORM_EPS`] are floored, so a zero
/// vector maps to zero rather than NaN.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v).max(NORM_EPS);
    v.iter().map(|x| x / n).collect()
}

/// Vector-Jacobian product of [`l2_normalize`]: `(g - u <u, g>) / |v|`.
pub fn l2_normalize_vjp(v: &[f64], unit: &[f64], g: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n <= NORM_EPS {
        return g.iter().map(|x| x / NORM_EPS).collect();
    }
    let ug = dot(unit, g);
    g.iter()
        .zip(unit)
        .map(|(gi, ui)| (gi - ui * ug) / n)
        .collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }
        let p = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
        let p = softmax(&[5.0; 4], 0.1).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable_and_validates() {
        let p = softmax(&[1000.0, -1000.0, 999.0], 1.0).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(softmax(&[f64::NAN, 1.0], 1.0).is_err());
        assert!(softmax(&[1.0], 0.0).is_err());
    }

    #[test]
    fn sharpen_examples() {
        let s = sharpen(&[0.25; 4], 0.3, SharpenMode::LogDomain).unwrap();
        for x in s {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-12);
        }
        let s = sharpen(&[0.6, 0.4], 0.5, SharpenMode::LogDomain).unwrap();
        assert_abs_diff_eq!(s[0], 0.36 / 0.52, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.16 / 0.52, epsilon = 1e-12);
        let s = sharpen(&[0.3, 0.7], 0.1, SharpenMode::LogDomain).unwrap();
        assert_eq!(argmax(&s), 1);
        // Zero entries are clamped, not propagated as -inf.
        let s = sharpen(&[0.0, 1.0], 0.1, SharpenMode::LogDomain).unwrap();
        assert!(s.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(
            cosine_similarity(&[1., 2., 3.], &[1., 2., 3.]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cosine_similarity(&[1., 0.], &[0., 1.]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cosine_similarity(&[1., 1.], &[1., 0.]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(cosine_similarity(&[0., 0.], &[1., 0.]).is_err());
        assert!(cosine_similarity(&[1.], &[1., 0.]).is_err());
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..8)
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(v in vec_strategy(), c in -100.0f64..100.0, t in 0.05f64..5.0) {
            let a = softmax(&v, t).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted, t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn sharpen_keeps_argmax(v in vec_strategy(), sr in 0.01f64..1.0) {
            let p = softmax(&v, 10.0).unwrap();
            let s = sharpen(&p, sr, SharpenMode::LogDomain).unwrap();
            // Ties can legitimately resolve either way; compare values instead of indices.
            prop_assert!(s[argmax(&p)] >= s.iter().cloned().fold(0.0, f64::max) - 1e-12);
            let s = sharpen(&p, sr, SharpenMode::Probability).unwrap();
            prop_assert!(s[argmax(&p)] >= s.iter().cloned().fold(0.0, f64::max) - 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 3),
            b in prop::collection::vec(-10.0f64..10.0, 3),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let c = cosine_similarity(&a, &b).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
            prop_assert!((cosine_similarity(&sa, &sb).unwrap() - c).abs() < 1e-9);
            prop_assert!((cosine_similarity(&b, &a).unwrap() - c).abs() < 1e-12);
        }
    }
}
