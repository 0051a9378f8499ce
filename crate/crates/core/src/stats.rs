//! Small statistics used by the estimators.

use serde::{Deserialize, Serialize};

/// Median of finite values; `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Some(LineFit { slope, intercept, residual })
}

/// Summary of one radius or distance decade `[10^decade, 10^(decade+1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecadeStat {
    pub decade: i32,
    pub median: f64,
    pub max: f64,
    pub n: usize,
}

pub fn decade_of(r: f64) -> i32 {
    // Nudge so exact powers of ten land in their own decade.
    (r.log10() + 1e-12).floor() as i32
}

/// Groups `(scale, value)` pairs by decade of `scale`, ascending.
pub fn by_decade(pairs: &[(f64, f64)]) -> Vec<DecadeStat> {
    let mut groups: std::collections::BTreeMap<i32, Vec<f64>> = Default::default();
    for &(r, v) in pairs {
        groups.entry(decade_of(r)).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(decade, vals)| DecadeStat {
            decade,
            median: median(&vals),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: vals.len(),
        })
        .collect()
}

/// `max / min` of decade medians; 1 when fewer than two decades.
pub fn spread(stats: &[DecadeStat]) -> f64 {
    let meds: Vec<f64> = stats.iter().map(|s| s.median).collect();
    let hi = meds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = meds.iter().copied().fold(f64::INFINITY, f64::min);
    if meds.len() < 2 {
        1.0
    } else {
        hi / lo
    }
}

/// True when decade medians strictly increase as the decade shrinks.
pub fn grows_toward_small_scales(stats: &[DecadeStat]) -> bool {
    stats.len() >= 2 && stats.windows(2).all(|w| w[0].median > w[1].median)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let f = fit_line(&xs, &ys).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12);
        assert!((f.intercept + 1.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert!(fit_line(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn decades() {
        assert_eq!(decade_of(1e-3), -3);
        assert_eq!(decade_of(0.0099), -3);
        assert_eq!(decade_of(0.5), -1);
        let s = by_decade(&[(0.002, 1.0), (0.003, 3.0), (0.2, 2.0)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].decade, -3);
        assert_eq!(s[0].median, 2.0);
        assert_eq!(s[0].max, 3.0);
        assert_eq!(spread(&s), 1.0);
        assert!(!grows_toward_small_scales(&s));
    }
}
