use super::MetricError;
use crate::types::{ExplanationSummary, SaliencyMask, TabularMatrix, TensorImage, CHANNELS};

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(values);
    let span = hi - lo;
    if !(span > 0.0) {
        // constant: uniform importance keeps the input unchanged
        return vec![1.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / span).collect()
}

/// `(M - min M) / (max M - min M)`; a constant mask becomes all ones.
pub fn normalize_mask(m: &SaliencyMask) -> SaliencyMask {
    SaliencyMask {
        height: m.height,
        width: m.width,
        values: min_max_scale(&m.values),
    }
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(m: &SaliencyMask, height: usize, width: usize) -> SaliencyMask {
    if m.height == height && m.width == width {
        return m.clone();
    }
    let src = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut values = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = src(y, m.height, height);
        for x in 0..width {
            let (x0, x1, fx) = src(x, m.width, width);
            let top = m.get(y0, x0) * (1.0 - fx) + m.get(y0, x1) * fx;
            let bottom = m.get(y1, x0) * (1.0 - fx) + m.get(y1, x1) * fx;
            values.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    SaliencyMask { height, width, values }
}

/// Resizes the mask to the image if needed, normalises it, and multiplies
/// every channel of the image by it.
pub fn apply_mask(img: &TensorImage, m: &SaliencyMask) -> Result<TensorImage, MetricError> {
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    if m.values.len() != m.height * m.width || m.height == 0 || m.width == 0 {
        return Err(MetricError::Shape(format!("mask {}x{} with {} values", m.height, m.width, m.values.len())));
    }
    let resized = resize_bilinear(m, img.height(), img.width());
    let norm = normalize_mask(&resized);
    let data: Vec<f32> = img
        .data()
        .chunks_exact(CHANNELS)
        .zip(&norm.values)
        .flat_map(|(px, &w)| px.iter().map(move |&v| (f64::from(v) * w) as f32))
        .collect();
    TensorImage::new(img.height(), img.width(), data).map_err(|e| MetricError::Shape(e.to_string()))
}

/// Min-max scaled importance weights, one per feature.
pub fn normalize_importances(summary: &ExplanationSummary) -> Vec<f64> {
    min_max_scale(&summary.importances)
}

/// Tabular counterpart of [`apply_mask`]: row `r` has its numeric cells
/// scaled by the normalised importances of `summaries[r]`.
pub fn apply_importances(tab: &TabularMatrix, summaries: &[ExplanationSummary]) -> Result<TabularMatrix, MetricError> {
    if summaries.len() != tab.rows() {
        return Err(MetricError::LengthMismatch(summaries.len(), tab.rows()));
    }
    let mut data = tab.data().to_vec();
    let n = tab.n_columns();
    for (r, s) in summaries.iter().enumerate() {
        if s.importances.len() != n {
            return Err(MetricError::LengthMismatch(s.importances.len(), n));
        }
        if s.importances.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        let w = normalize_importances(s);
        for (c, col) in tab.columns().iter().enumerate() {
            if col.is_numeric() {
                data[r * n + c] *= w[c];
            }
        }
    }
    tab.with_data(data).map_err(|e| MetricError::Shape(e.to_string()))
}

/// `1 - (p_orig - p_masked)`, both read at the original top-1 class. Not clamped.
pub fn explanation_deviation(p_orig: f64, p_masked: f64) -> f64 {
    1.0 - (p_orig - p_masked)
}

/// Drop in explanation deviation from clean to adversarial input.
pub fn explanation_resilience(dev_orig: f64, dev_adv: f64) -> f64 {
    dev_orig - dev_adv
}

fn check_lengths(summaries: &[ExplanationSummary]) -> Result<(), MetricError> {
    if let Some(first) = summaries.first() {
        for s in summaries {
            if s.importances.len() != first.importances.len() {
                return Err(MetricError::LengthMismatch(first.importances.len(), s.importances.len()));
            }
        }
    }
    Ok(())
}

/// Mean of `f_d` over all unordered pairs of summaries.
pub fn stability<F>(summaries: &[ExplanationSummary], f_d: F) -> Result<f64, MetricError>
where
    F: Fn(&ExplanationSummary, &ExplanationSummary) -> f64,
{
    let m = summaries.len();
    if m < 2 {
        return Err(MetricError::TooFewSummaries { need: 2, got: m });
    }
    check_lengths(summaries)?;
    let mut total = 0.0;
    let mut k = 0usize;
    for i in 0..m {
        for j in i + 1..m {
            total += f_d(&summaries[i], &summaries[j]);
            k += 1;
        }
    }
    Ok(total / k as f64)
}

/// Mean of `f_d(x, s)` over every other summary `s` in the set containing `x`.
pub fn consistency<F>(summaries: &[ExplanationSummary], x: &ExplanationSummary, f_d: F) -> Result<f64, MetricError>
where
    F: Fn(&ExplanationSummary, &ExplanationSummary) -> f64,
{
    let m = summaries.len();
    if m < 2 {
        return Err(MetricError::TooFewSummaries { need: 2, got: m });
    }
    check_lengths(summaries)?;
    let anchor = summaries.iter().position(|s| s == x).ok_or(MetricError::AnchorMissing)?;
    let total: f64 = summaries
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != anchor)
        .map(|(_, s)| f_d(x, s))
        .sum();
    Ok(total / (m - 1) as f64)
}

/// Mean absolute difference of two equal-length vectors.
///
/// Applied to per-sample deviations this is the mean prediction difference
/// between two explainers on the same inputs (vision default `f_d`).
pub fn mean_abs_distance(a: &ExplanationSummary, b: &ExplanationSummary) -> f64 {
    let n = a.importances.len().max(1) as f64;
    a.importances
        .iter()
        .zip(&b.importances)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n
}

/// Fraction of feature pairs ranked in opposite order (tabular default `f_d`).
/// Pairs tied in either ranking count as concordant.
pub fn kendall_tau_distance(a: &ExplanationSummary, b: &ExplanationSummary) -> f64 {
    let (x, y) = (&a.importances, &b.importances);
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mut discordant = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if (x[i] - x[j]) * (y[i] - y[j]) < 0.0 {
                discordant += 1;
            }
        }
    }
    discordant as f64 / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, uniform01};
    use crate::types::Column;

    fn mask(h: usize, w: usize, v: &[f64]) -> SaliencyMask {
        SaliencyMask::new(h, w, v.to_vec()).unwrap()
    }

    fn summary(v: &[f64]) -> ExplanationSummary {
        ExplanationSummary::new("m", v.to_vec())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_mask(&mask(2, 2, &[0.0, 2.0, 4.0, 4.0])).values, vec![0.0, 0.5, 1.0, 1.0]);
        let unit = mask(1, 3, &[0.0, 0.25, 1.0]);
        assert_eq!(normalize_mask(&unit), unit);
        assert_eq!(normalize_mask(&mask(1, 2, &[3.0, 3.0])).values, vec![1.0, 1.0]);
    }

    #[test]
    fn apply_mask_examples() {
        let img = TensorImage::from_fn(2, 3, |y, x, c| (y + x + c) as f32 / 6.0);
        assert_eq!(apply_mask(&img, &mask(2, 3, &[1.0; 6])).unwrap(), img);
        assert_eq!(apply_mask(&img, &mask(2, 3, &[0.0; 6])).unwrap(), img);
        let white = TensorImage::filled(1, 2, 1.0);
        let out = apply_mask(&white, &mask(1, 2, &[0.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let bad = SaliencyMask {
            height: 1,
            width: 2,
            values: vec![0.0, f64::NAN],
        };
        assert_eq!(apply_mask(&white, &bad), Err(MetricError::NonFinite));
    }

    #[test]
    fn apply_mask_resizes_low_resolution_mask() {
        let img = TensorImage::filled(4, 4, 1.0);
        let out = apply_mask(&img, &mask(2, 2, &[0.0, 1.0, 0.0, 1.0])).unwrap();
        // left column dark, right column bright, monotone across
        let row: Vec<f32> = (0..4).map(|x| out.get(0, x, 0)).collect();
        assert_eq!(row[0], 0.0);
        assert_eq!(row[3], 1.0);
        assert!(row.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let m = mask(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(resize_bilinear(&m, 2, 3), m);
        let c = resize_bilinear(&mask(2, 2, &[0.7; 4]), 5, 3);
        assert!(c.values.iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn deviation_and_resilience() {
        assert_eq!(explanation_deviation(0.4, 0.4), 1.0);
        assert!((explanation_deviation(0.9, 0.8) - 0.9).abs() < 1e-12);
        assert!((explanation_deviation(0.6, 0.7) - 1.1).abs() < 1e-12);
        let d0 = explanation_deviation(0.5, 0.3);
        assert_eq!(explanation_deviation(0.5, 0.3 + 0.125) - d0, 0.125);
        assert!((explanation_resilience(0.267, 0.160) - 0.107).abs() < 1e-12);
        assert!((explanation_resilience(0.763, 0.327) - 0.436).abs() < 1e-12);
        assert_eq!(explanation_resilience(0.3, 0.3), 0.0);
        assert_eq!(explanation_resilience(0.2, 0.5), -explanation_resilience(0.5, 0.2));
    }

    #[test]
    fn stability_examples() {
        let same = vec![summary(&[1.0, 2.0]); 4];
        assert_eq!(stability(&same, mean_abs_distance).unwrap(), 0.0);
        // scalar summaries 0, 0.1, 0.3 -> pair distances 0.1, 0.3, 0.2
        let s = vec![summary(&[0.0]), summary(&[0.1]), summary(&[0.3])];
        assert!((stability(&s, mean_abs_distance).unwrap() - 0.2).abs() < 1e-12);
        let two = vec![summary(&[0.0, 1.0]), summary(&[1.0, 0.0])];
        assert_eq!(stability(&two, mean_abs_distance).unwrap(), 1.0);
        assert!(matches!(stability(&two[..1], mean_abs_distance), Err(MetricError::TooFewSummaries { .. })));
    }

    #[test]
    fn consistency_examples() {
        let s = vec![summary(&[0.5]), summary(&[0.6]), summary(&[0.7])];
        assert!((consistency(&s, &s[0], mean_abs_distance).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(consistency(&vec![summary(&[1.0]); 3], &summary(&[1.0]), mean_abs_distance).unwrap(), 0.0);
        assert!((consistency(&s[..2], &s[1], mean_abs_distance).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(
            consistency(&s, &summary(&[9.0]), mean_abs_distance),
            Err(MetricError::AnchorMissing)
        );
    }

    #[test]
    fn stability_matches_pair_enumeration() {
        let mut rng = seeded_rng(4);
        for m in 2..=6 {
            let set: Vec<ExplanationSummary> = (0..m)
                .map(|_| summary(&(0..5).map(|_| uniform01(&mut rng)).collect::<Vec<_>>()))
                .collect();
            let mut pairs = Vec::new();
            for i in 0..m {
                for j in 0..m {
                    if i < j {
                        pairs.push(kendall_tau_distance(&set[i], &set[j]));
                    }
                }
            }
            assert_eq!(pairs.len(), m * (m - 1) / 2);
            let expected = pairs.iter().sum::<f64>() / pairs.len() as f64;
            assert_eq!(stability(&set, kendall_tau_distance).unwrap(), expected);
        }
    }

    #[test]
    fn kendall_distance_bounds() {
        let a = summary(&[1.0, 2.0, 3.0, 4.0]);
        let rev = summary(&[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(kendall_tau_distance(&a, &a), 0.0);
        assert_eq!(kendall_tau_distance(&a, &rev), 1.0);
    }

    #[test]
    fn importances_scale_numeric_cells_only() {
        let t = TabularMatrix::new(
            vec![Column::numeric("a"), Column::categorical("c", &["x", "y"]), Column::numeric("b")],
            vec![2.0, 1.0, 4.0],
        )
        .unwrap();
        let out = apply_importances(&t, &[summary(&[0.0, 5.0, 10.0])]).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 4.0]);
    }
}
