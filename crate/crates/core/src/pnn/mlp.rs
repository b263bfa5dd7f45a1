use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{PnnError, Result};

/// Fully connected layer `out = W in + b`, with `W` stored column-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let weight = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Dense {
            rows,
            cols,
            weight,
            bias: vec![0.0; rows],
        }
    }

    pub fn w(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.weight, self.rows, self.cols)
    }

    fn apply(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.w() * input;
        for mut col in out.column_iter_mut() {
            col += DVector::from_column_slice(&self.bias);
        }
        out
    }
}

/// Multi-layer perceptron mapping each input column to a scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input of each layer.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    pub fn init(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &h in hidden {
            layers.push(Dense::init(h, width, rng));
            width = h;
        }
        layers.push(Dense::init(1, width, rng));
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|d| Dense::zeros(d.rows, d.cols)).collect(),
        }
    }

    /// Returns a `1 x t` row of outputs.
    pub fn forward(&self, input: &DMatrix<f64>, act: Activation) -> Result<(DMatrix<f64>, MlpTape)> {
        if input.nrows() != self.input_dim() {
            return Err(PnnError::dim(format!(
                "readout expects {} inputs, got {}",
                self.input_dim(),
                input.nrows()
            )));
        }
        let mut tape = MlpTape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len() - 1),
        };
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            tape.inputs.push(h);
            if i == last {
                h = z;
            } else {
                h = z.map(|v| act.apply(v));
                tape.pre.push(z);
            }
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(PnnError::Numerical("readout output".into()));
        }
        Ok((h, tape))
    }

    /// Accumulates weight gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        tape: &MlpTape,
        dout: DMatrix<f64>,
        act: Activation,
        grads: &mut Mlp,
    ) -> DMatrix<f64> {
        let mut delta = dout;
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let pre = &tape.pre[i];
                delta.zip_apply(pre, |d, p| *d *= act.derivative(p));
            }
            let g = &mut grads.layers[i];
            let dw = &delta * tape.inputs[i].transpose();
            for (acc, v) in g.weight.iter_mut().zip(dw.iter()) {
                *acc += v;
            }
            for (acc, row) in g.bias.iter_mut().zip(delta.row_iter()) {
                *acc += row.sum();
            }
            delta = self.layers[i].w().transpose() * delta;
        }
        delta
    }

    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        for d in &self.layers {
            out.extend_from_slice(&d.weight);
            out.extend_from_slice(&d.bias);
        }
    }

    pub(crate) fn assign_from(&mut self, it: &mut impl Iterator<Item = f64>) -> Result<()> {
        for d in &mut self.layers {
            for v in d.weight.iter_mut().chain(d.bias.iter_mut()) {
                *v = it.next().ok_or_else(|| PnnError::dim("parameter vector too short"))?;
            }
        }
        Ok(())
    }

    pub(crate) fn len(&self) -> usize {
        self.layers.iter().map(|d| d.weight.len() + d.bias.len()).sum()
    }
}
