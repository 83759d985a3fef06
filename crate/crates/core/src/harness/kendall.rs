//! Kendall's tau-b in O(n log n) (Knight's algorithm).

use super::benchmark::{Benchmark, Column};
use super::HarnessError;

/// Tie-corrected Kendall rank correlation.
///
/// `tau_b = (n0 - n1 - n2 + n3 - 2 * swaps) / sqrt((n0 - n1) (n0 - n2))`
/// where `n1`, `n2` count pairs tied in `a`, `b`, `n3` pairs tied in both and
/// `swaps` the discordant pairs found by merge sort.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64, HarnessError> {
    if a.len() != b.len() {
        return Err(HarnessError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(HarnessError::TooShort(n));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(HarnessError::NonFinite);
    }
    // fold -0.0 into 0.0 so sort order agrees with `==`
    let a: Vec<f64> = a.iter().map(|v| v + 0.0).collect();
    let b: Vec<f64> = b.iter().map(|v| v + 0.0).collect();

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tie_pairs(&idx, |i, j| a[i] == a[j]);
    let n3 = tie_pairs(&idx, |i, j| a[i] == a[j] && b[i] == b[j]);

    let mut bs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut bs, &mut buf);

    let order: Vec<usize> = (0..n).collect();
    let n2 = tie_pairs(&order, |i, j| bs[i] == bs[j]);

    if n1 == n0 || n2 == n0 {
        return Err(HarnessError::AllTies);
    }
    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    let denom = ((n0 - n1) as u128 * (n0 - n2) as u128) as f64;
    Ok(s as f64 / denom.sqrt())
}

/// Pairs within runs of consecutive equal elements.
fn tie_pairs(order: &[usize], eq: impl Fn(usize, usize) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if eq(w[0], w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau between the plain low-fidelity column and `val_acc_high`.
pub fn correlate_fidelities(bench: &Benchmark) -> Result<f64, HarnessError> {
    correlate_column(bench, Column::Low)
}

pub fn correlate_column(bench: &Benchmark, column: Column) -> Result<f64, HarnessError> {
    kendall_tau(&bench.column(column)?, &bench.column(Column::High)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn with_ties() {
        // a: one tie pair (0,1); b: one tie pair (2,3).
        // pairs: (0,1) a-tie, (2,3) b-tie, other four concordant
        let t = kendall_tau(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 3.0]).unwrap();
        assert!((t - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(HarnessError::TooShort(1))));
        assert!(matches!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(HarnessError::LengthMismatch(2, 1))));
        assert!(matches!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(HarnessError::AllTies)));
        assert!(matches!(kendall_tau(&[1.0, 2.0], &[f64::NAN, 1.0]), Err(HarnessError::NonFinite)));
    }
}
