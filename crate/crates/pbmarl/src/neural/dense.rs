//! Dense layers with Xavier-uniform initialisation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

/// A fully connected layer. Weights are `(input, output)` so a batch of
/// rows maps through plain matrix multiplication.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Dense {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn xavier(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let mut weights = Array2::zeros((input, output));
        for w in weights.iter_mut() {
            *w = rng.gen_range(-bound..=bound);
        }
        Dense {
            weights,
            biases: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weights: Array2::zeros((input, output)),
            biases: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.weights) + &self.biases
    }

    pub fn forward_batch(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.biases
    }
}

/// Gradient of a [`Dense`] layer, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrad {
            weights: Array2::zeros(layer.weights.raw_dim()),
            biases: Array1::zeros(layer.biases.raw_dim()),
        }
    }

    pub fn matches(&self, layer: &Dense) -> bool {
        self.weights.raw_dim() == layer.weights.raw_dim()
            && self.biases.raw_dim() == layer.biases.raw_dim()
    }
}

pub fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

pub fn relu_vec(x: &mut Array1<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Zeroes the entries of `grad` where the rectifier was inactive,
/// judged from the post-activation values.
pub fn relu_backward(grad: &mut Array2<f64>, activated: &Array2<f64>) {
    grad.zip_mut_with(activated, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}
