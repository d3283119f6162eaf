//! Rank correlations with asymptotic p-values, and the 2x2 chi-squared test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// A correlation coefficient with its two-sided p-value. Both are `None`
/// when one series is constant and the coefficient is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: Option<f64>,
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

impl Correlation {
    fn degenerate() -> Self {
        Correlation {
            value: None,
            p_value: None,
            degenerate: true,
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Input("NaN in correlation input".into()));
    }
    Ok(())
}

/// Sizes of runs of equal values in `sorted`.
fn tie_groups(sorted: &[f64]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        out.push((j - i) as u64);
        i = j;
    }
    out
}

/// Counts inversions of `v` while merge-sorting it in place.
fn inversions(v: &mut [f64], scratch: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (left, right) = v.split_at_mut(mid);
        inversions(left, scratch) + inversions(right, scratch)
    };
    scratch.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            scratch.push(v[j]);
            count += (mid - i) as u64;
            j += 1;
        } else {
            scratch.push(v[i]);
            i += 1;
        }
    }
    scratch.extend_from_slice(&v[i..mid]);
    scratch.extend_from_slice(&v[j..n]);
    v.copy_from_slice(scratch);
    count
}

/// Kendall's tau-b with the tie-corrected normal-approximation p-value.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let n = x.len();
    if n < 2 {
        return Ok(Correlation::degenerate());
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let x_ties = tie_groups(&xs);
    let mut joint = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pairs[j] == pairs[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        joint += t * (t - 1) / 2;
        i = j;
    }
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = inversions(&mut ys, &mut Vec::with_capacity(n));
    let y_ties = tie_groups(&ys);

    let n64 = n as u64;
    let total = n64 * (n64 - 1) / 2;
    let tied_x: u64 = x_ties.iter().map(|t| t * (t - 1) / 2).sum();
    let tied_y: u64 = y_ties.iter().map(|t| t * (t - 1) / 2).sum();
    if tied_x == total || tied_y == total {
        return Ok(Correlation::degenerate());
    }
    let con_minus_dis =
        total as i128 - tied_x as i128 - tied_y as i128 + joint as i128 - 2 * swaps as i128;
    let denom = ((total - tied_x) as f64 * (total - tied_y) as f64).sqrt();
    let tau = (con_minus_dis as f64 / denom).clamp(-1.0, 1.0);

    let p = if n < 3 {
        1.0
    } else {
        let sums = |ties: &[u64]| {
            let mut a = 0.0;
            let mut b = 0.0;
            let mut c = 0.0;
            for &t in ties {
                let t = t as f64;
                a += t * (t - 1.0);
                b += t * (t - 1.0) * (t - 2.0);
                c += t * (t - 1.0) * (2.0 * t + 5.0);
            }
            (a, b, c)
        };
        let (x_pairs, x_triples, x_var) = sums(&x_ties);
        let (y_pairs, y_triples, y_var) = sums(&y_ties);
        let nf = n as f64;
        let m = nf * (nf - 1.0);
        let var = (m * (2.0 * nf + 5.0) - x_var - y_var) / 18.0
            + x_pairs * y_pairs / (2.0 * m)
            + x_triples * y_triples / (9.0 * m * (nf - 2.0));
        let z = con_minus_dis as f64 / var.sqrt();
        let normal = Normal::standard();
        (2.0 * normal.sf(z.abs())).min(1.0)
    };
    Ok(Correlation {
        value: Some(tau),
        p_value: Some(p),
        degenerate: false,
    })
}

/// Average ranks (1-based), doubled so that they are integers.
fn doubled_ranks(x: &[f64]) -> Vec<i64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0i64; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let doubled = (i + 1 + j) as i64;
        for &k in &idx[i..j] {
            out[k] = doubled;
        }
        i = j;
    }
    out
}

/// Spearman's rho (Pearson correlation of average ranks) with the
/// Student-t p-value on `n - 2` degrees of freedom.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let n = x.len();
    if n < 2 {
        return Ok(Correlation::degenerate());
    }
    let rx = doubled_ranks(x);
    let ry = doubled_ranks(y);
    // doubled mean rank is exactly n + 1
    let mean = n as i64 + 1;
    let (mut sxy, mut sxx, mut syy) = (0i64, 0i64, 0i64);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0 || syy == 0 {
        return Ok(Correlation::degenerate());
    }
    let rho = (sxy as f64 / (sxx as f64 * syy as f64).sqrt()).clamp(-1.0, 1.0);
    let p = if n < 3 {
        1.0
    } else if rho.abs() == 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / ((1.0 - rho) * (1.0 + rho))).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Internal(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation {
        value: Some(rho),
        p_value: Some(p),
        degenerate: false,
    })
}

/// Pearson chi-squared test of independence on a 2x2 table (no continuity
/// correction). `None` when a row or column total is zero.
pub fn chi2_2x2(table: [[u64; 2]; 2]) -> Option<f64> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let total = (rows[0] + rows[1]) as f64;
    if rows.contains(&0) || cols.contains(&0) {
        return None;
    }
    let mut stat = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let expected = rows[r] as f64 * cols[c] as f64 / total;
            stat += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let dist = ChiSquared::new(1.0).expect("one degree of freedom");
    Some(dist.sf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed_orderings() {
        let a = [0.1, 0.4, 0.2, 0.9, 0.5];
        let rev: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
        let k = kendall_tau_b(&a, &a).unwrap();
        let s = spearman_rho(&a, &a).unwrap();
        assert_eq!((k.value, s.value), (Some(1.0), Some(1.0)));
        let k = kendall_tau_b(&a, &rev).unwrap();
        let s = spearman_rho(&a, &rev).unwrap();
        assert_eq!((k.value, s.value), (Some(-1.0), Some(-1.0)));
    }

    #[test]
    fn constant_series_is_degenerate() {
        let k = kendall_tau_b(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap();
        assert!(k.degenerate && k.value.is_none() && k.p_value.is_none());
        assert!(spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap().degenerate);
    }

    #[test]
    fn known_values() {
        // Reference values from a standard statistics package.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let y = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 8.0, 7.0, 10.0, 9.0];
        let k = kendall_tau_b(&x, &y).unwrap();
        assert!((k.value.unwrap() - 0.777_777_777_777_777_8).abs() < 1e-12);
        assert!((k.p_value.unwrap() - 0.001_745_118_699_528_905).abs() < 1e-10);
        let s = spearman_rho(&x, &y).unwrap();
        assert!((s.value.unwrap() - 0.939_393_939_393_939_4).abs() < 1e-12);
        assert!((s.p_value.unwrap() - 5.484_052_998_513_666e-5).abs() < 1e-12);

        // with ties in both series
        let x = [1.0, 1.0, 2.0, 3.0, 5.0, 4.0, 6.0, 6.0, 7.0];
        let y = [2.0, 1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 7.0, 6.0];
        let k = kendall_tau_b(&x, &y).unwrap();
        assert!((k.value.unwrap() - 0.823_529_411_764_705_7).abs() < 1e-12);
        assert!((k.p_value.unwrap() - 0.002_855_056_517_118_807).abs() < 1e-10);
        let s = spearman_rho(&x, &y).unwrap();
        assert!((s.value.unwrap() - 0.927_966_101_694_915_3).abs() < 1e-12);
        assert!((s.p_value.unwrap() - 3.076_821_981_731_16e-4).abs() < 1e-10);
    }

    #[test]
    fn ties_use_tau_b() {
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 2.0, 3.0];
        // C = 4, D = 0, ties x = 1, ties y = 1, n0 = 6
        let k = kendall_tau_b(&x, &y).unwrap();
        assert!((k.value.unwrap() - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn chi_squared_table() {
        // perfectly coupled 5/5 split: statistic 10
        let p = chi2_2x2([[5, 0], [0, 5]]).unwrap();
        assert!((p - 0.001_565_402_5).abs() < 1e-9);
        assert!(chi2_2x2([[0, 0], [3, 7]]).is_none());
        assert!(chi2_2x2([[4, 0], [6, 0]]).is_none());
    }
}
