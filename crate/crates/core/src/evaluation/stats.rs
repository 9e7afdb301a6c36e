//! Rank-based tests and the distribution tails they need.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest sample size for which [`WilcoxonMethod::Auto`] enumerates the
/// exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Upper bound for explicitly requested exact enumeration (counts are held
/// in `u128`).
const WILCOXON_EXACT_LIMIT: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 when n < 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Some(Summary { n, mean, std })
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Average ranks (1-based) and the sizes of tied groups with more than one
/// member.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite value".into()))
    }
}

/// Kruskal-Wallis H with tie correction; p from the chi-square upper tail
/// with `groups − 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("at least two groups are required".into()));
    }
    if let Some(k) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::InvalidInput(format!("group {k} is empty")));
    }
    let all: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    check_finite(all.iter().copied())?;
    let n = all.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("{n} observations; at least 3 are required")));
    }
    let (ranks, ties) = average_ranks(&all);
    let nf = n as f64;
    let correction = 1.0 - tie_term(&ties) / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Err(Error::DegenerateData("all values are identical".into()));
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (nf * (nf + 1.0)) * sum - 3.0 * (nf + 1.0)) / correction;
    // rounding can leave a tiny negative value when rank sums are equal
    let h = h.max(0.0);
    Ok(TestResult {
        statistic: h,
        p_value: chi_square_sf(h, (groups.len() - 1) as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WilcoxonMethod {
    /// Exact for up to [`WILCOXON_EXACT_MAX_N`] non-zero differences,
    /// normal approximation above.
    #[default]
    Auto,
    Exact,
    Normal,
}

/// Two-sided Wilcoxon signed-rank test on `a − b`. Zero differences are
/// dropped; `W = min(W+, W−)`.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<TestResult> {
    wilcoxon_signed_rank_with(pairs, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(pairs: &[(f64, f64)], method: WilcoxonMethod) -> Result<TestResult> {
    check_finite(pairs.iter().flat_map(|&(a, b)| [a, b]))?;
    let diffs: Vec<f64> = pairs.iter().map(|&(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::DegenerateData("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    // an empty float sum is -0.0
    let w_plus = w_plus + 0.0;
    let w = w_plus.min(total - w_plus);

    let exact = match method {
        WilcoxonMethod::Auto => n <= WILCOXON_EXACT_MAX_N,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let p_value = if exact {
        if n > WILCOXON_EXACT_LIMIT {
            return Err(Error::InvalidInput(format!(
                "exact enumeration supports at most {WILCOXON_EXACT_LIMIT} differences, got {n}"
            )));
        }
        exact_p(&ranks, w)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = ((mean - w).abs() - 0.5).max(0.0) / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        }
    };
    Ok(TestResult {
        statistic: w,
        p_value,
    })
}

/// Fraction of the `2^n` sign assignments whose `min(W+, W−)` does not
/// exceed `w`. Average ranks are multiples of ½, so the distribution of W+
/// is counted over doubled (integer) ranks.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u128; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (2.0 * w).round() as usize;
    let hits: u128 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| s.min(total - s) <= w2)
        .map(|(_, c)| *c)
        .sum();
    hits as f64 / 2f64.powi(ranks.len() as i32)
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    regularized_gamma_q(dof / 2.0, x / 2.0)
}

/// Regularized upper incomplete gamma `Q(a, x)`. Series for `x < a + 1`,
/// Lentz continued fraction otherwise.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // P(a, x) = e^{-x} x^a / Γ(a+1) · Σ x^k / ((a+1)…(a+k))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (1.0 - sum * log_prefix.exp()).max(0.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (log_prefix.exp() * h).min(1.0)
    }
}
