//! Small dense-math toolkit shared by the trainable models: row-major
//! matrices, activations, softmax and an Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape mismatch");
        Matrix { rows, cols, data }
    }

    pub fn random_normal<R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, sd).expect("finite positive sd");
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    /// Glorot-normal initialisation for a `rows x cols` weight.
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let sd = (2.0 / (rows + cols) as f64).sqrt();
        Self::random_normal(rows, cols, sd, rng)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * y`
    pub fn t_matvec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), &mut out);
            }
        }
        out
    }

    /// `self += scale * a b^T`
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s != 0.0 {
                axpy(s, b, self.row_mut(r));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Negative log-likelihood of `gold` under `softmax(logits)`.
pub fn cross_entropy(logits: &[f64], gold: usize) -> f64 {
    log_sum_exp(logits) - logits[gold]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam state for one parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub params: AdamParams,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Adam {
            params,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.params.learning_rate = lr;
    }

    fn bias_corrections(&mut self) -> (f64, f64) {
        self.t += 1;
        (
            1.0 - self.params.beta1.powi(self.t),
            1.0 - self.params.beta2.powi(self.t),
        )
    }

    #[inline]
    fn update_one(&mut self, i: usize, param: &mut f64, g: f64, c1: f64, c2: f64) {
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
        self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        *param -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        let (c1, c2) = self.bias_corrections();
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.update_one(i, p, g, c1, c2);
        }
    }

    /// Lazy update touching only the listed rows of a row-major buffer;
    /// untouched rows keep their moments frozen.
    pub fn step_rows(&mut self, params: &mut [f64], grads: &[f64], rows: &[usize], cols: usize) {
        let (c1, c2) = self.bias_corrections();
        for &r in rows {
            for i in r * cols..(r + 1) * cols {
                self.update_one(i, &mut params[i], grads[i], c1, c2);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert_abs_diff_eq!(gelu(1.0), 0.841_344_746_068_542_9, epsilon = 1e-12);
        assert_abs_diff_eq!(gelu(-1.0), -0.158_655_253_931_457_05, epsilon = 1e-12);
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 0.7, 3.1] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn softmax_and_cross_entropy() {
        let p = softmax(&[0.0, 3f64.ln()]);
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&[0.0, 3f64.ln()], 1), -(0.75f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&[0.0, 3f64.ln()], 1), 0.2877, epsilon = 1e-4);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert_abs_diff_eq!(softplus(-800.0), 0.0, epsilon = 1e-300);
        assert_abs_diff_eq!(softplus(800.0), 800.0, epsilon = 1e-9);
    }

    #[test]
    fn matrix_products() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.t_matvec(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        let mut z = Matrix::zeros(2, 2);
        z.add_outer(2.0, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(z.data, vec![6.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut adam = Adam::new(2, AdamParams::default());
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[1.0, -1.0]);
        assert!(p[0] < 1.0 && p[1] > -1.0);
        assert_abs_diff_eq!(p[0], 1.0 - 1e-3, epsilon = 1e-9);
    }
}
