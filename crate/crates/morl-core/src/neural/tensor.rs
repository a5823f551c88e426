//! Row-major 2-D tensors and the shared GEMM kernel.

use alloc::vec::Vec;

use rand::Rng;

/// A dense row-major matrix of `f64` with an optional gradient buffer of the
/// same shape. Vectors are represented as single-row or single-column
/// matrices.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: alloc::vec![0.0; rows * cols], grad: None }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Self { rows, cols, data, grad: None }
    }

    /// Uniform init on `(-scale, scale)`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect();
        Self { rows, cols, data, grad: None }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Allocates the gradient buffer (zeroed) if absent.
    pub fn ensure_grad(&mut self) -> &mut [f64] {
        if self.grad.is_none() {
            self.grad = Some(alloc::vec![0.0; self.data.len()]);
        }
        self.grad.as_deref_mut().expect("just ensured")
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn drop_grad(&mut self) {
        self.grad = None;
    }

    pub fn add_to_grad(&mut self, grad: &[f64]) {
        assert_eq!(grad.len(), self.data.len());
        let buf = self.ensure_grad();
        for (g, d) in buf.iter_mut().zip(grad) {
            *g += d;
        }
    }

    /// Mutable data alongside the (read-only) gradient, for optimizer steps.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], &[f64]) {
        if self.grad.is_none() {
            self.grad = Some(alloc::vec![0.0; self.data.len()]);
        }
        (self.data.as_mut_slice(), self.grad.as_deref().expect("just ensured"))
    }
}

/// `C <- alpha * op(A) op(B) + beta * C` for row-major buffers, where `op`
/// optionally transposes. Logical shapes: A is m×k, B is k×n, C is m×n.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
