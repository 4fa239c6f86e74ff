use super::{mean, MetricError};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionChange {
    pub delta: f64,
    /// `delta / |s_orig|`; `Err(ZeroOriginal)` when the original score is zero.
    pub pct: Result<f64, MetricError>,
}

pub fn prediction_change(s_orig: f64, s_masked: f64) -> PredictionChange {
    let delta = (s_orig - s_masked).abs();
    let pct = if s_orig == 0.0 {
        Err(MetricError::ZeroOriginal)
    } else {
        Ok(delta / s_orig.abs())
    };
    PredictionChange { delta, pct }
}

pub fn mean_prediction_difference(pairs: &[(f64, f64)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(pairs.iter().map(|(o, m)| (o - m).abs()).sum::<f64>() / pairs.len() as f64)
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), MetricError> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(MetricError::NotDistribution(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(MetricError::NotDistribution(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// `KL(p || q) / ln(n)` with natural logs; `0 * ln(0 / q) = 0`.
pub fn kl_normalized(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch(p.len(), q.len()));
    }
    if p.len() < 2 {
        return Err(MetricError::NotDistribution("need at least two classes".into()));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(MetricError::InfiniteDivergence(i));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl / (p.len() as f64).ln())
}

fn sorted(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) - F_b(x)|`,
/// evaluated at every sample point by a merged sweep.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Mean K-S statistic over the severity levels of one corruption type.
pub fn robustness(d_ks_by_severity: &[f64]) -> Result<f64, MetricError> {
    mean(d_ks_by_severity)
}

/// Mean corruption error relative to a reference model.
pub fn mce(err_model: &[f64], err_ref: &[f64]) -> Result<f64, MetricError> {
    if err_model.len() != err_ref.len() {
        return Err(MetricError::LengthMismatch(err_model.len(), err_ref.len()));
    }
    if let Some(i) = err_ref.iter().position(|&e| !(e > 0.0)) {
        return Err(MetricError::ZeroReference(i));
    }
    let ratios: Vec<f64> = err_model.iter().zip(err_ref).map(|(m, r)| m / r).collect();
    mean(&ratios)
}

/// Cliff's delta via sorted counting: `(#{a > b} - #{a < b}) / (|a| |b|)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let b = sorted(b)?;
    if a.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    let mut greater: i64 = 0;
    let mut lesser: i64 = 0;
    for &x in a {
        let below = b.partition_point(|&y| y < x);
        let not_above = b.partition_point(|&y| y <= x);
        greater += below as i64;
        lesser += (b.len() - not_above) as i64;
    }
    Ok((greater - lesser) as f64 / (a.len() * b.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, uniform01};
    use proptest::prelude::*;

    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    fn cliffs_brute(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0i64;
        for x in a {
            for y in b {
                s += (x > y) as i64 - (x < y) as i64;
            }
        }
        s as f64 / (a.len() * b.len()) as f64
    }

    #[test]
    fn prediction_change_examples() {
        let c = prediction_change(0.9, 0.9);
        assert_eq!((c.delta, c.pct), (0.0, Ok(0.0)));
        let c = prediction_change(0.8, 0.6);
        assert!((c.delta - 0.2).abs() < 1e-12);
        assert!((c.pct.unwrap() - 0.25).abs() < 1e-12);
        let c = prediction_change(0.0, 0.5);
        assert_eq!(c.delta, 0.5);
        assert_eq!(c.pct, Err(MetricError::ZeroOriginal));
    }

    #[test]
    fn mean_prediction_difference_examples() {
        assert_eq!(mean_prediction_difference(&[(1.0, 1.0), (0.5, 0.5)]).unwrap(), 0.0);
        assert!((mean_prediction_difference(&[(0.9, 0.8), (0.7, 0.4)]).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(mean_prediction_difference(&[(0.3, 0.75)]).unwrap(), 0.45);
        assert_eq!(mean_prediction_difference(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_normalized(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        // 0.5 ln(25/9) / ln 2
        let v = kl_normalized(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((v - 0.736_965_594_166_206).abs() < 1e-4, "{v}");
        assert!((kl_normalized(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            kl_normalized(&[0.5, 0.5], &[1.0, 0.0]),
            Err(MetricError::InfiniteDivergence(1))
        );
        assert!(kl_normalized(&[0.5, 0.5], &[0.5]).is_err());
    }

    #[test]
    fn kl_is_not_bounded_by_one_for_skewed_q() {
        // KL(p||q) grows without bound as q -> vertex; only KL(p||uniform) <= ln n.
        let v = kl_normalized(&[0.5, 0.5], &[0.999, 0.001]).unwrap();
        assert!(v > 1.0, "{v}");
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[0.3, 0.1, 0.2], &[0.1, 0.2, 0.3]).unwrap(), 0.0);
        let v = ks_statistic(&[0.1, 0.2, 0.3], &[0.2, 0.3, 0.4]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ks_statistic(&[0.1, 0.2], &[0.5, 0.9, 0.7]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[], &[0.1]), Err(MetricError::Empty));
    }

    #[test]
    fn ks_matches_brute_force_with_ties() {
        let mut rng = seeded_rng(17);
        for _ in 0..50 {
            let n = 1 + (uniform01(&mut rng) * 40.0) as usize;
            let m = 1 + (uniform01(&mut rng) * 40.0) as usize;
            // coarse grid forces ties within and across samples
            let a: Vec<f64> = (0..n).map(|_| (uniform01(&mut rng) * 8.0).floor() / 8.0).collect();
            let b: Vec<f64> = (0..m).map(|_| (uniform01(&mut rng) * 8.0).floor() / 8.0).collect();
            assert!((ks_statistic(&a, &b).unwrap() - ks_brute(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn robustness_and_mce_examples() {
        assert_eq!(robustness(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((robustness(&[0.1, 0.2, 0.3]).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(robustness(&[0.4]).unwrap(), 0.4);
        assert_eq!(robustness(&[]), Err(MetricError::Empty));
        assert_eq!(mce(&[0.3, 0.5], &[0.3, 0.5]).unwrap(), 1.0);
        assert!((mce(&[0.2, 0.4], &[0.4, 0.8]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(mce(&[0.2, 0.4], &[0.4, 0.0]), Err(MetricError::ZeroReference(1)));
    }

    #[test]
    fn cliffs_examples() {
        assert_eq!(cliffs_delta(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cliffs_delta(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cliffs_delta(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cliffs_delta(&[], &[1.0]), Err(MetricError::Empty));
    }

    proptest! {
        #[test]
        fn ks_equals_brute_force(
            a in proptest::collection::vec(0.0f64..1.0, 1..200),
            b in proptest::collection::vec(0.0f64..1.0, 1..200),
        ) {
            let fast = ks_statistic(&a, &b).unwrap();
            prop_assert!((fast - ks_brute(&a, &b)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn cliffs_equals_brute_force(
            a in proptest::collection::vec(-3i32..3, 1..40),
            b in proptest::collection::vec(-3i32..3, 1..40),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = cliffs_delta(&a, &b).unwrap();
            prop_assert_eq!(d, cliffs_brute(&a, &b));
            prop_assert!((-1.0..=1.0).contains(&d));
        }
    }
}
