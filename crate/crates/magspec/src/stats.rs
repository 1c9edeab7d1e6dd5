//! Small statistics helpers: least-squares power-law fits, correlation
//! measures, and seeded bootstrap confidence intervals for fitted slopes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Ordinary least squares fit `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Slope of `log y` against `log x` (power-law exponent).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).1
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
        sxy += (xi - mx) * (yi - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Seeded bootstrap of the log-log slope: resamples point pairs with
/// replacement and returns `(slope, lo, hi)` for the central 95% interval.
pub fn bootstrap_loglog_slope(
    x: &[f64],
    y: &[f64],
    resamples: usize,
    seed: u64,
) -> (f64, f64, f64) {
    let slope = loglog_slope(x, y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut slopes = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        // Reject degenerate resamples with all-identical x.
        loop {
            xs.clear();
            ys.clear();
            for _ in 0..n {
                let k = rng.gen_range(0..n);
                xs.push(x[k]);
                ys.push(y[k]);
            }
            let spread = xs.iter().cloned().fold(f64::MIN, f64::max)
                - xs.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-12 {
                break;
            }
        }
        slopes.push(loglog_slope(&xs, &ys));
    }
    slopes.sort_by(f64::total_cmp);
    let lo = slopes[(0.025 * resamples as f64) as usize];
    let hi = slopes[((0.975 * resamples as f64) as usize).min(resamples - 1)];
    (slope, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let x = [1.0f64, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-1.5)).collect();
        assert!((loglog_slope(&x, &y) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn correlations_on_monotone_data() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 3.0, 7.0, 8.0, 20.0];
        assert!(spearman(&x, &y) > 0.999);
        assert!(pearson(&x, &y) > 0.8);
    }

    #[test]
    fn bootstrap_brackets_true_slope() {
        let x: Vec<f64> = (1..=12).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powf(2.0) * (1.0 + 0.01 * v.sin())).collect();
        let (slope, lo, hi) = bootstrap_loglog_slope(&x, &y, 200, 1);
        assert!((slope - 2.0).abs() < 0.05);
        assert!(lo < 2.0 && hi > 2.0);
    }
}
