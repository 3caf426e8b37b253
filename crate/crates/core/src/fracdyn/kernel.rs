/// Grünwald–Letnikov weights `psi(alpha, j)` for `j = 0..=horizon`.
///
/// Built by the recurrence `psi(alpha, j) = psi(alpha, j-1) (j - 1 - alpha) / j`
/// from `psi(alpha, 0) = 1`, which avoids the poles of the gamma-ratio form
/// at integer orders.
#[derive(Debug, Clone, PartialEq)]
pub struct GlKernel {
    alpha: f64,
    coeffs: Vec<f64>,
}

impl GlKernel {
    pub fn new(alpha: f64, horizon: usize) -> Self {
        let mut coeffs = Vec::with_capacity(horizon + 1);
        coeffs.push(1.0);
        for j in 1..=horizon {
            let prev = coeffs[j - 1];
            coeffs.push(prev * (j as f64 - 1.0 - alpha) / j as f64);
        }
        Self { alpha, coeffs }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `sum_{j=0}^{min(k, J)} psi(j) x[k - j]`
    pub fn apply_at(&self, x: &[f64], k: usize) -> f64 {
        let taps = k.min(self.horizon());
        (0..=taps).map(|j| self.coeffs[j] * x[k - j]).sum()
    }
}

pub fn gl_coefficients(alpha: f64, horizon: usize) -> GlKernel {
    GlKernel::new(alpha, horizon.max(1))
}

/// Truncated fractional difference `z[k] = sum_{j=0}^{min(k, J)} psi(alpha, j) x[k-j]`.
pub fn frac_difference(x: &[f64], alpha: f64, horizon: usize) -> Vec<f64> {
    let kernel = GlKernel::new(alpha, horizon);
    (0..x.len()).map(|k| kernel.apply_at(x, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_orders() {
        assert_eq!(gl_coefficients(1.0, 4).coeffs(), &[1.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(gl_coefficients(0.0, 3).coeffs(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(gl_coefficients(2.0, 3).coeffs(), &[1.0, -2.0, 1.0, 0.0]);
    }

    #[test]
    fn half_order() {
        let k = gl_coefficients(0.5, 2);
        assert_eq!(k.coeffs()[1], -0.5);
        assert_eq!(k.coeffs()[2], -0.125);
    }

    #[test]
    fn first_difference_and_identity() {
        let x = [1.0, 4.0, 9.0, 16.0];
        assert_eq!(frac_difference(&x, 1.0, 3), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(frac_difference(&x, 0.0, 3), x.to_vec());
    }

    #[test]
    fn difference_inverts_cumulative_sum() {
        let x = [0.5, -1.25, 3.0, 2.0, -0.75];
        let cum: Vec<f64> = x
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let back = frac_difference(&cum, 1.0, 10);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
