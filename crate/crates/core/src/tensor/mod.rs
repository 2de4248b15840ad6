//! A small dense-matrix engine with tape-based reverse-mode differentiation.
//!
//! Everything is a row-major 2-D matrix of `f64`; vectors are `1 x n` rows and
//! scalars are `1 x 1`. A [`Graph`] records operations as they execute and
//! [`Graph::backward`] walks the tape in reverse to accumulate gradients.

mod adam;
mod gradcheck;
mod graph;

pub use adam::{clip_global_norm, Adam};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub(crate) use graph::{log_softmax_in_place, matmul_into, sigmoid};
pub use graph::{Graph, Var};

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data does not match shape {rows}x{cols}"
        );
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Tensor { rows: 1, cols, data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, range: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-range..range)).collect();
        Tensor { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rounds every element to the nearest `f32`; used for 32-bit parameter storage.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }
}
