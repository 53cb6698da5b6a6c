//! Small numerical kernels shared across modules.

/// `log Σ exp(v)`, max-shifted. Returns `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-place softmax of `v`, max-shifted.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Softmax of `v / temperature`.
pub fn softmax_with_temperature(v: &[f64], temperature: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x / temperature).collect();
    softmax_in_place(&mut out);
    out
}

/// Index drawn from the discrete distribution `p` using a uniform variate `u ∈ [0, 1)`.
pub fn sample_index(p: &[f64], u: f64) -> usize {
    let total: f64 = p.iter().sum();
    let mut acc = 0.0;
    let target = u * total;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if target < acc {
            return i;
        }
    }
    // rounding left `target` at the very top; return the last index with mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let v = [0.1, -2.0, 3.5];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-12);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn sampling_respects_zero_mass() {
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.999_999_9), 1);
        assert_eq!(sample_index(&[0.5, 0.5], 0.0), 0);
        assert_eq!(sample_index(&[0.5, 0.5], 0.5), 1);
    }
}
