//! Reference distributions for the residual tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};

use super::lilliefors_table::{LILLIEFORS_N, LILLIEFORS_P, LILLIEFORS_Q};

/// Upper tail `P(χ²_df > x)`.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if !x.is_finite() || !df.is_finite() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map_or(f64::NAN, |d| d.sf(x)).clamp(0.0, 1.0)
}

/// Upper tail `P(F_{d1,d2} > x)`.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if !x.is_finite() || !d1.is_finite() || !d2.is_finite() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(d1, d2).map_or(f64::NAN, |d| d.sf(x)).clamp(0.0, 1.0)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Asymptotic Kolmogorov upper tail `2 Σ_{j=1}^{20} (−1)^{j−1} e^{−2j²λ²}`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        // the alternating series has not converged here; the tail is 1 to 1e-10
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=20 {
        let jf = j as f64;
        sum += sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Kolmogorov p-value for a statistic `d` from `n` points with a fully
/// specified null, using the usual `√n + 0.12 + 0.11/√n` scaling.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// Upper-tail p-value of the KS distance when the normal mean and standard
/// deviation were estimated from the same sample.
///
/// Interpolates a simulated table of quantiles of `D·(√n − 0.01 + 0.85/√n)`:
/// linearly in `ln n` across sample sizes and in `ln p` across quantiles, with
/// a Gaussian-type tail `ln p ∝ −q²` beyond the 0.1% point.
pub fn lilliefors_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let stat = d * (sn - 0.01 + 0.85 / sn);
    let q = quantiles_for(n);
    let p = &LILLIEFORS_P;
    if stat <= q[0] {
        return 1.0 - (1.0 - p[0]) * stat.max(0.0) / q[0];
    }
    let last = q.len() - 1;
    if stat >= q[last] {
        let (a, b) = (q[last - 1], q[last]);
        let slope = (p[last].ln() - p[last - 1].ln()) / (b * b - a * a);
        return (p[last].ln() + slope * (stat * stat - b * b)).exp().clamp(0.0, p[last]);
    }
    let i = q.iter().position(|&v| v > stat).expect("inside the table") - 1;
    let w = (stat - q[i]) / (q[i + 1] - q[i]);
    (p[i].ln() * (1.0 - w) + p[i + 1].ln() * w).exp()
}

fn quantiles_for(n: usize) -> Vec<f64> {
    let ns = &LILLIEFORS_N;
    let rows = &LILLIEFORS_Q;
    if n <= ns[0] {
        return rows[0].to_vec();
    }
    if n >= ns[ns.len() - 1] {
        return rows[rows.len() - 1].to_vec();
    }
    let k = ns.iter().position(|&v| v > n).expect("inside the table") - 1;
    let w = ((n as f64).ln() - (ns[k] as f64).ln()) / ((ns[k + 1] as f64).ln() - (ns[k] as f64).ln());
    rows[k]
        .iter()
        .zip(&rows[k + 1])
        .map(|(a, b)| a * (1.0 - w) + b * w)
        .collect()
}

/// Deterministic terms of the Dickey–Fuller regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdfSpec {
    Constant,
    ConstantTrend,
}

struct Surface {
    tau_max: f64,
    tau_min: f64,
    tau_star: f64,
    small: [f64; 3],
    large: [f64; 4],
}

// MacKinnon (1994) response surfaces for one integrated variable, as tabulated
// in statsmodels' adfvalues (large-p coefficients with their scaling applied).
const SURFACE_C: Surface = Surface {
    tau_max: 2.74,
    tau_min: -18.83,
    tau_star: -1.61,
    small: [2.1659, 1.4412, 0.038269],
    large: [1.7339, 0.93202, -0.12745, -0.010368],
};
const SURFACE_CT: Surface = Surface {
    tau_max: 0.7,
    tau_min: -16.18,
    tau_star: -2.89,
    small: [3.2512, 1.6047, 0.049588],
    large: [2.5261, 0.61654, -0.37956, -0.060285],
};

/// Asymptotic p-value of a Dickey–Fuller t-ratio.
pub fn mackinnon_pvalue(tau: f64, spec: AdfSpec) -> f64 {
    let s = match spec {
        AdfSpec::Constant => &SURFACE_C,
        AdfSpec::ConstantTrend => &SURFACE_CT,
    };
    if tau > s.tau_max {
        return 1.0;
    }
    if tau < s.tau_min {
        return 0.0;
    }
    let poly = |c: &[f64]| c.iter().rev().fold(0.0, |acc, &ci| acc * tau + ci);
    if tau <= s.tau_star {
        normal_cdf(poly(&s.small))
    } else {
        normal_cdf(poly(&s.large))
    }
}
