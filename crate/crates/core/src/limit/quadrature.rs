//! Trapezoidal time-convolutions on a uniform grid.

/// Dot product with eight independent accumulators, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Kernel samples stored back to front so every interior sum is a
/// contiguous dot product.
struct Reversed(Vec<f64>);

impl Reversed {
    fn new(kernel: &[f64]) -> Self {
        Self(kernel.iter().rev().copied().collect())
    }

    /// `kernel[k-1], ..., kernel[1]`, which pairs with `g[1..k]`.
    #[inline]
    fn interior(&self, k: usize) -> &[f64] {
        let n = self.0.len();
        &self.0[n - k..n - 1]
    }
}

/// Writes `out[k] ≈ ∫_0^{t_k} kernel(t_k - r) g(r) dr` for every grid index.
///
/// Both inputs are samples on the same grid with step `dt`. Uses the
/// composite trapezoid over `r_0..r_k`, so `out[0] = 0`.
pub fn convolve_into(kernel: &[f64], g: &[f64], dt: f64, out: &mut [f64]) {
    let n = kernel.len();
    assert!(
        g.len() == n && out.len() == n,
        "convolution inputs must share a grid"
    );
    if n == 0 {
        return;
    }
    let rev = Reversed::new(kernel);
    out[0] = 0.0;
    for k in 1..n {
        let interior = dot(rev.interior(k), &g[1..k]);
        out[k] = dt * (0.5 * kernel[k] * g[0] + interior + 0.5 * kernel[0] * g[k]);
    }
}

pub fn convolve(kernel: &[f64], g: &[f64], dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; kernel.len()];
    convolve_into(kernel, g, dt, &mut out);
    out
}

/// Two kernels against the same `g` in one pass; same arithmetic as two
/// [`convolve`] calls.
pub fn convolve_pair(first: &[f64], second: &[f64], g: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = g.len();
    assert!(
        first.len() == n && second.len() == n,
        "convolution inputs must share a grid"
    );
    let (r1, r2) = (Reversed::new(first), Reversed::new(second));
    let mut o1 = vec![0.0; n];
    let mut o2 = vec![0.0; n];
    for k in 1..n {
        let gi = &g[1..k];
        o1[k] = dt * (0.5 * first[k] * g[0] + dot(r1.interior(k), gi) + 0.5 * first[0] * g[k]);
        o2[k] = dt * (0.5 * second[k] * g[0] + dot(r2.interior(k), gi) + 0.5 * second[0] * g[k]);
    }
    (o1, o2)
}

/// Single grid index of [`convolve`].
pub fn convolve_at(kernel: &[f64], g: &[f64], dt: f64, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let rev: Vec<f64> = kernel[1..k].iter().rev().copied().collect();
    dt * (0.5 * kernel[k] * g[0] + dot(&rev, &g[1..k]) + 0.5 * kernel[0] * g[k])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum() {
        let n = 37;
        let kern: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let g: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let fast = convolve(&kern, &g, 0.1);
        for k in 1..n {
            let naive: f64 = (0..=k)
                .map(|j| {
                    let w = if j == 0 || j == k { 0.5 } else { 1.0 };
                    w * kern[k - j] * g[j]
                })
                .sum::<f64>()
                * 0.1;
            assert!((fast[k] - naive).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_kernel_integrates_g() {
        // ∫_0^t 1 · r dr = t^2 / 2, exact for the trapezoid
        let n = 101;
        let dt = 0.01;
        let k = vec![1.0; n];
        let g: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let c = convolve(&k, &g, dt);
        for (i, v) in c.iter().enumerate() {
            let t = i as f64 * dt;
            assert!((v - t * t / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn second_order_in_dt() {
        // ∫_0^1 e^{-(1-r)} sin(r) dr by quadrature at two resolutions
        let exact = {
            // closed form: (sin 1 - cos 1 + e^{-1}) / 2
            let (s, c) = (1.0f64.sin(), 1.0f64.cos());
            (s - c + (-1.0f64).exp()) / 2.0
        };
        let err = |n: usize| {
            let dt = 1.0 / n as f64;
            let kern: Vec<f64> = (0..=n).map(|i| (-(i as f64) * dt).exp()).collect();
            let g: Vec<f64> = (0..=n).map(|i| (i as f64 * dt).sin()).collect();
            (convolve(&kern, &g, dt)[n] - exact).abs()
        };
        let ratio = err(100) / err(200);
        assert!((3.9..4.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn single_index_matches_full() {
        let n = 50;
        let kern: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let g: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let full = convolve(&kern, &g, 0.02);
        for k in [0, 1, 2, 17, n - 1] {
            assert_eq!(convolve_at(&kern, &g, 0.02, k), full[k]);
        }
        let other: Vec<f64> = kern.iter().map(|x| x * x).collect();
        let (a, b) = convolve_pair(&kern, &other, &g, 0.02);
        assert_eq!(a, full);
        assert_eq!(b, convolve(&other, &g, 0.02));
    }
}
