//! Brute-force reference implementations for tests. Nothing here shares code
//! with the library it checks; inputs and outputs are plain slices.

use libm::erfc;

/// LU factorization with partial pivoting of a dense `n x n` matrix.
/// Returns `(lu, perm, sign)` or `None` when singular.
fn lu(a: &[f64], n: usize) -> Option<(Vec<f64>, Vec<usize>, f64)> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if m[i * n + k].abs() > m[p * n + k].abs() {
                p = i;
            }
        }
        if m[p * n + k] == 0.0 {
            return None;
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
            sign = -sign;
        }
        for i in k + 1..n {
            let f = m[i * n + k] / m[k * n + k];
            m[i * n + k] = f;
            for j in k + 1..n {
                m[i * n + j] -= f * m[k * n + j];
            }
        }
    }
    Some((m, perm, sign))
}

fn lu_solve(lu: &[f64], perm: &[usize], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            y[i] -= lu[i * n + j] * y[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            y[i] -= lu[i * n + j] * y[j];
        }
        y[i] /= lu[i * n + i];
    }
    y
}

/// Explicit inverse of a dense matrix via LU, column by column.
pub fn oracle_inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let (f, perm, _) = lu(a, n)?;
    let mut inv = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = lu_solve(&f, &perm, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Some(inv)
}

pub fn oracle_det(a: &[f64], n: usize) -> f64 {
    match lu(a, n) {
        Some((f, _, sign)) => sign * (0..n).map(|i| f[i * n + i]).product::<f64>(),
        None => 0.0,
    }
}

/// `−½(ln((2π)^d det Σ) + vᵀΣ⁻¹v)` with an explicit inverse and determinant.
pub fn oracle_mvn_logpdf(sigma: &[f64], v: &[f64]) -> f64 {
    let d = v.len();
    assert_eq!(sigma.len(), d * d, "covariance must be d x d");
    let inv = oracle_inverse(sigma, d).expect("covariance must be invertible");
    let det = oracle_det(sigma, d);
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += v[i] * inv[i * d + j] * v[j];
        }
    }
    -0.5 * ((2.0 * std::f64::consts::PI).powi(d as i32).ln() + det.ln() + quad)
}

/// Standard normal CDF through `erfc`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF by bisection.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

/// Textbook rank-normalized split-R̂. `None` when the within-chain variance
/// is zero.
pub fn oracle_split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let n_full = chains[0].len();
    let start = n_full % 2;
    let half = (n_full - start) / 2;
    let mut split: Vec<Vec<f64>> = Vec::new();
    for c in chains {
        split.push(c[start..start + half].to_vec());
        split.push(c[start + half..].to_vec());
    }
    let all: Vec<f64> = split.iter().flatten().copied().collect();
    let s = all.len();
    // O(S²) average ranks
    let rank = |x: f64| -> f64 {
        let less = all.iter().filter(|&&y| y < x).count() as f64;
        let equal = all.iter().filter(|&&y| y == x).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let z: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|&x| normal_quantile((rank(x) - 0.375) / (s as f64 + 0.25))).collect())
        .collect();
    let m = z.len() as f64;
    let nh = half as f64;
    let w = z.iter().map(|c| sample_variance(c)).sum::<f64>() / m;
    if w == 0.0 {
        return None;
    }
    let means: Vec<f64> = z.iter().map(|c| c.iter().sum::<f64>() / nh).collect();
    let b = nh * sample_variance(&means);
    let var_plus = (nh - 1.0) / nh * w + b / nh;
    Some((var_plus / w).sqrt())
}

/// All-pairs AUROC, ties counted half.
pub fn oracle_auroc(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let mut count = 0.0;
    for &a in in_scores {
        for &b in out_scores {
            if a > b {
                count += 1.0;
            } else if a == b {
                count += 0.5;
            }
        }
    }
    count / (in_scores.len() as f64 * out_scores.len() as f64)
}

/// Direct ECE: for each bin `(b/B, (b+1)/B]` scan every prediction.
pub fn oracle_ece(probs: &[Vec<f64>], labels: &[usize], bins: usize) -> f64 {
    let n = labels.len() as f64;
    let mut conf = Vec::new();
    let mut pred = Vec::new();
    for row in probs {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        conf.push(row[best]);
        pred.push(best);
    }
    let bf = bins as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bf;
        let hi = (b + 1) as f64 / bf;
        let mut count = 0usize;
        let mut conf_sum = 0.0;
        let mut correct = 0.0;
        for i in 0..labels.len() {
            let inside = (conf[i] > lo || (b == 0 && conf[i] <= lo)) && (conf[i] <= hi || b + 1 == bins);
            if inside {
                count += 1;
                conf_sum += conf[i];
                if pred[i] == labels[i] {
                    correct += 1.0;
                }
            }
        }
        if count > 0 {
            let nb = count as f64;
            total += (nb / n) * (correct / nb - conf_sum / nb).abs();
        }
    }
    total
}

/// Every `k`-subset of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Columnwise mean of equal-length rows.
pub fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    up[i] += h;
    let mut dn = x.to_vec();
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

/// Full central-difference gradient.
pub fn finite_difference_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len()).map(|i| central_difference(f, x, i, h)).collect()
}

/// Descending singular values from nalgebra's SVD.
pub fn oracle_singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, a);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Entry `(j, j')` of the exponential kernel on a `kh x kw` pixel grid,
/// evaluated straight from the pixel coordinates.
pub fn oracle_matern_entry(kw: usize, j: usize, jp: usize, sigma: f64, lengthscale: f64) -> f64 {
    let (r1, c1) = ((j / kw) as f64, (j % kw) as f64);
    let (r2, c2) = ((jp / kw) as f64, (jp % kw) as f64);
    let d = ((r1 - r2).powi(2) + (c1 - c2).powi(2)).sqrt();
    sigma * sigma * (-d / lengthscale).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvn_examples() {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        assert!((oracle_mvn_logpdf(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]) + ln2pi).abs() < 1e-14);
        assert!((oracle_mvn_logpdf(&[4.0], &[0.0]) + 0.5 * (8.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn inverse_and_det() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let inv = oracle_inverse(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        assert!((oracle_det(&[0.0, 1.0, 1.0, 0.0], 2) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-6, 0.025, 0.5, 0.9] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-14, "{p} {}", normal_cdf(normal_quantile(p)));
        }
        let q = normal_quantile(0.975);
        assert!((q - 1.959_963_984_540_054).abs() < 1e-12, "{q}");
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(oracle_auroc(&[0.9, 0.8], &[0.7, 0.6]), 1.0);
        assert_eq!(oracle_auroc(&[0.5, 0.5], &[0.5]), 0.5);
    }

    #[test]
    fn rhat_is_permutation_invariant_and_flags_constants() {
        let a: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| ((i * 5) % 13) as f64 + 0.5).collect();
        let r1 = oracle_split_rhat(&[a.clone(), b.clone()]).unwrap();
        let r2 = oracle_split_rhat(&[b, a]).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
        assert!(oracle_split_rhat(&[vec![2.0; 8], vec![2.0; 8]]).is_none());
    }

    #[test]
    fn ece_examples() {
        let p = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(oracle_ece(&p, &[0, 0], 15), 0.0);
        assert_eq!(oracle_ece(&p, &[0, 1], 15), 0.5);
    }

    #[test]
    fn subsets_count() {
        assert_eq!(subsets(6, 2).len(), 15);
        assert_eq!(subsets(5, 5), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn finite_difference_of_cubic() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let g = finite_difference_gradient(&f, &[1.0, 5.0], 1e-5);
        assert!((g[0] - 3.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn singular_values_of_diagonal() {
        let s = oracle_singular_values(&[3.0, 0.0, 0.0, -5.0], 2, 2);
        assert!((s[0] - 5.0).abs() < 1e-14 && (s[1] - 3.0).abs() < 1e-14);
    }
}
