//! Dense `f64` tensors in row-major order.
//!
//! [`Tensor`] is a plain value type: the autodiff tape in [`crate::tape`]
//! copies tensor data into its nodes and hands gradients back as fresh
//! tensors. Everything is 64-bit; the verification suite in
//! [`crate::theory`] relies on agreement with enumeration oracles down to
//! 1e-10, which f32 cannot deliver.

use rand::Rng;

/// Dense multi-dimensional array of `f64` with optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    /// Same layout as `data`; present iff `requires_grad`.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} does not match {} values",
            shape,
            data.len()
        );
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    /// Weight matrix initialised uniformly on [-1/sqrt(fan_in), 1/sqrt(fan_in)],
    /// where `fan_in` is the number of rows as used in `x · W`.
    pub fn uniform_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::matrix(rows, cols, data)
    }

    /// Embedding table initialised uniformly on [-1/sqrt(d), 1/sqrt(d)]:
    /// rows are looked up, not contracted, so the embedding width sets the
    /// scale rather than the table height.
    pub fn embedding_init(rows: usize, d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let data = (0..rows * d).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::matrix(rows, d, data)
    }

    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows/cols of a tensor viewed as a matrix; 1-D tensors are rows.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("expected 1-D or 2-D tensor, got shape {:?}", self.shape),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Plain `A[m,k] · B[k,n]` used by forward-only paths and test oracles.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k, "matmul lhs size");
    assert_eq!(b.len(), k * n, "matmul rhs size");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_matches_data_length() {
        let t = Tensor::matrix(2, 3, vec![0.0; 6]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.dims2(), (2, 3));
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn shape_mismatch_panics() {
        Tensor::new(vec![2, 2], vec![1.0; 3]);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] · [[5,6],[7,8]] = [[19,22],[43,50]]
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn uniform_init_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Tensor::uniform_init(16, 4, &mut rng);
        let bound = 1.0 / 4.0;
        assert!(w.data.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn stable_activations_at_extremes() {
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0).is_finite());
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0).is_finite() && softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
