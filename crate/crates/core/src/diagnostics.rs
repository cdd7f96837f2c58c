//! Convergence summaries for scalar chains.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub split_rhat: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Sample autocorrelations up to `max_lag` (biased normalisation).
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return vec![1.0];
    }
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            let ck: f64 = (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / n as f64;
            ck / c0
        })
        .collect()
}

/// Effective sample size with Geyer's initial monotone positive sequence.
/// Constant chains report their length.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let rho = autocorrelation(x, n - 1);
    if rho.len() == 1 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < rho.len() {
        let mut pair = rho[k] + rho[k + 1];
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Potential scale reduction from the two halves of a single chain.
pub fn split_rhat(x: &[f64]) -> f64 {
    let half = x.len() / 2;
    if half < 2 {
        return f64::NAN;
    }
    let (a, b) = (&x[..half], &x[x.len() - half..]);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let w = 0.5 * (va + vb);
    if w <= 0.0 {
        return if ma == mb { 1.0 } else { f64::INFINITY };
    }
    let n = half as f64;
    let grand = 0.5 * (ma + mb);
    let b_between = n * ((ma - grand).powi(2) + (mb - grand).powi(2));
    let var_plus = (n - 1.0) / n * w + b_between / n;
    (var_plus / w).sqrt()
}

pub fn summarize(name: impl Into<String>, x: &[f64]) -> ScalarSummary {
    let (mean, var) = if x.is_empty() { (f64::NAN, f64::NAN) } else { mean_var(x) };
    ScalarSummary {
        name: name.into(),
        mean,
        sd: var.sqrt(),
        ess: effective_sample_size(x),
        split_rhat: split_rhat(x),
    }
}

/// Equal-tailed empirical quantile with linear interpolation; `x` must be sorted.
pub fn quantile_sorted(x: &[f64], p: f64) -> f64 {
    assert!(!x.is_empty(), "quantile of an empty sample");
    let pos = p.clamp(0.0, 1.0) * (x.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    x[lo] + (pos - lo as f64) * (x[hi] - x[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iid_ess_near_length_and_ar1_matches_theory() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let iid: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&iid);
        assert!((ess / 20_000.0 - 1.0).abs() < 0.1, "{ess}");

        // AR(1) with φ = 0.9: ESS/n = (1 − φ)/(1 + φ)
        let phi = 0.9;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..100_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + e;
                x
            })
            .collect();
        let ratio = effective_sample_size(&ar) / 100_000.0;
        let theory = (1.0 - phi) / (1.0 + phi);
        assert!((ratio / theory - 1.0).abs() < 0.15, "{ratio} vs {theory}");
    }

    #[test]
    fn rhat_flags_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let iid: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!((split_rhat(&iid) - 1.0).abs() < 0.01);
        let drift: Vec<f64> = iid.iter().enumerate().map(|(i, v)| v + i as f64 / 400.0).collect();
        assert!(split_rhat(&drift) > 1.5);
    }

    #[test]
    fn quantiles_interpolate() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.5), 2.0);
        assert_eq!(quantile_sorted(&x, 0.125), 0.5);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
    }
}
