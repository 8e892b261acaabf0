//! Plain numeric kernels shared by the autodiff graph and the pure
//! (graph-free) operations.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Valid convolution of a row-major `n × d` input with `m` filters of
/// `window · d` weights. Output is row-major `m × (n − window + 1)`.
pub fn conv1d(input: &[f64], d: usize, filters: &[f64], bias: &[f64], window: usize) -> Vec<f64> {
    let n = input.len() / d;
    let m = bias.len();
    let span = window * d;
    let out_len = n + 1 - window;
    let mut out = Vec::with_capacity(m * out_len);
    for t in 0..m {
        let f = &filters[t * span..(t + 1) * span];
        for i in 0..out_len {
            // rows i..i+window are contiguous in row-major storage
            out.push(dot(f, &input[i * d..i * d + span]) + bias[t]);
        }
    }
    out
}

/// Segment ranges `[0, b1]`, `(b1, b2]`, `(b2, n)` after sorting and
/// clamping the cut positions to `[0, n)`.
pub fn segments(n: usize, b1: usize, b2: usize) -> [std::ops::Range<usize>; 3] {
    let last = n.saturating_sub(1);
    let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
    let (lo, hi) = (lo.min(last), hi.min(last));
    [0..lo + 1, lo + 1..hi + 1, hi + 1..n]
}

/// Per-row maxima over the three segments. Returns the pooled values
/// (`3m`, per-row triples) and the flat input index of each maximum, the
/// lowest index winning ties. Empty segments pool to 0.
pub fn piecewise_max(
    input: &[f64],
    m: usize,
    n: usize,
    b1: usize,
    b2: usize,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let segs = segments(n, b1, b2);
    let mut values = Vec::with_capacity(3 * m);
    let mut argmax = Vec::with_capacity(3 * m);
    for t in 0..m {
        let row = &input[t * n..(t + 1) * n];
        for seg in &segs {
            let mut best: Option<usize> = None;
            for i in seg.clone() {
                if best.is_none_or(|b| row[i] > row[b]) {
                    best = Some(i);
                }
            }
            match best {
                Some(i) => {
                    values.push(row[i]);
                    argmax.push(Some(t * n + i));
                }
                None => {
                    values.push(0.0);
                    argmax.push(None);
                }
            }
        }
    }
    (values, argmax)
}

/// Structured transition: the first coordinate is scaled, every other
/// coordinate receives `column[k] · h[0]` on top of itself.
pub fn transition(column: &[f64], h: &[f64]) -> Vec<f64> {
    let h0 = h[0];
    column
        .iter()
        .zip(h)
        .enumerate()
        .map(|(k, (w, hk))| if k == 0 { w * h0 } else { w * h0 + hk })
        .collect()
}

/// Numerically stable log-sum-exp together with the softmax it implies.
pub fn log_sum_exp_softmax(x: &[f64]) -> (f64, Vec<f64>) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let lse = max + z.ln();
    (lse, exps.into_iter().map(|e| e / z).collect())
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    log_sum_exp_softmax(x).1
}

/// Index of the largest element, lowest index on ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate().skip(1) {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_cover_range() {
        assert_eq!(segments(5, 1, 3), [0..2, 2..4, 4..5]);
        assert_eq!(segments(5, 3, 1), [0..2, 2..4, 4..5]);
        assert_eq!(segments(5, 9, 9), [0..5, 5..5, 5..5]);
        assert_eq!(segments(5, 2, 2), [0..3, 3..3, 3..5]);
    }

    #[test]
    fn lse_is_stable() {
        let (lse, p) = log_sum_exp_softmax(&[1000.0, 1000.0]);
        assert!((lse - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
