//! Independent reference implementations used as test oracles. None of
//! these call into the library's statistics or geometry code.
#![allow(dead_code)]

use facelm::dataset::synth::canonical_template;
use facelm::geometry::{Point2, Shape68};

/// Average ranks by direct counting: `#less + (#equal + 1) / 2`.
pub fn ranks_by_counting(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|w| *w < v).count() as f64;
            let equal = values.iter().filter(|w| *w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Kruskal-Wallis H from the rank-sum formula with tie correction.
pub fn kruskal_wallis_h(groups: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let ranks = ranks_by_counting(&all);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        ties += (j * j * j - j) as f64;
        i += j;
    }
    h / (1.0 - ties / (n * n * n - n))
}

/// Signed-rank statistic and two-sided p by visiting all 2ⁿ sign vectors.
pub fn wilcoxon_brute_force(pairs: &[(f64, f64)]) -> (f64, f64) {
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    assert!(n > 0 && n <= 20);
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = ranks_by_counting(&abs);
    let total: f64 = ranks.iter().sum();
    let positive: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let observed = positive.min(total - positive);
    let mut count = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s.min(total - s) <= observed {
            count += 1;
        }
    }
    (observed, count as f64 / (1u64 << n) as f64)
}

/// Canonical face scaled to an inter-ocular distance of `iod` pixels and
/// centred at `centre`.
pub fn face(iod: f64, centre: Point2) -> Shape68 {
    canonical_template().map(|p| Point2::new(centre.x + iod * p.x, centre.y + iod * p.y))
}

pub fn max_point_error(a: &Shape68, b: &Shape68) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| p.distance(q)).fold(0.0, f64::max)
}
