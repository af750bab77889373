//! Small numerical helpers shared across modules.

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// LU factorisation with partial pivoting of a row-major `n x n` matrix.
///
/// Returns the determinant and, if it is non-zero, the inverse.
pub fn det_and_inverse(a: &[f64], n: usize) -> (f64, Option<Vec<f64>>) {
    debug_assert_eq!(a.len(), n * n);
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = lu[col * n + col].abs();
        for r in col + 1..n {
            let v = lu[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return (0.0, None);
        }
        if piv != col {
            for k in 0..n {
                lu.swap(col * n + k, piv * n + k);
            }
            perm.swap(col, piv);
            det = -det;
        }
        let d = lu[col * n + col];
        det *= d;
        for r in col + 1..n {
            let f = lu[r * n + col] / d;
            lu[r * n + col] = f;
            for k in col + 1..n {
                lu[r * n + k] -= f * lu[col * n + k];
            }
        }
    }
    // Solve L U X = P I column by column.
    let mut inv = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    for c in 0..n {
        for i in 0..n {
            let mut s = if perm[i] == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= lu[i * n + k] * y[k];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= lu[i * n + k] * inv[k * n + c];
            }
            inv[i * n + c] = s / lu[i * n + i];
        }
    }
    (det, Some(inv))
}

pub fn determinant(a: &[f64], n: usize) -> f64 {
    det_and_inverse(a, n).0
}

/// Piecewise-linear interpolation on increasing knots; `None` outside the knot range.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let n = xs.len();
    if n == 0 || x < xs[0] || x > xs[n - 1] || x.is_nan() {
        return None;
    }
    if n == 1 {
        return Some(ys[0]);
    }
    // First knot strictly greater than x, clamped so that [i-1, i] is a segment.
    let i = xs.partition_point(|&k| k <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    if x == x1 {
        return Some(y1);
    }
    let w = (x - x0) / (x1 - x0);
    Some(y0 + w * (y1 - y0))
}

/// Slope of the interpolant at `x` (right-continuous at knots).
pub fn interp_slope(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let i = xs.partition_point(|&k| k <= x).clamp(1, n - 1);
    (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1])
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
