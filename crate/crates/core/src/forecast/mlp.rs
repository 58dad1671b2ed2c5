//! Fully connected network: rectifier on hidden layers, identity output.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `[input, hidden.., output]`.
    sizes: Vec<usize>,
    /// Per layer: weights `(out x in)` row-major, then biases.
    params: Vec<f64>,
}

struct Layer {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: Vec<usize>, rng: &mut SplitMix64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in net.layers() {
            let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut net.params[layer.w..layer.b] {
                *w = rng.uniform(-limit, limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad MLP layer sizes {sizes:?}")));
        }
        let n = param_count(&sizes);
        Ok(Self {
            sizes,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(format!(
                "MLP expects {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|p| {
                let layer = Layer {
                    w: off,
                    b: off + p[0] * p[1],
                    n_in: p[0],
                    n_out: p[1],
                };
                off = layer.b + p[1];
                layer
            })
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::shape(format!(
                "MLP input has {} values, expected {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Post-activation outputs of every layer.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            let w = &self.params[layer.w..layer.b];
            let b = &self.params[layer.b..layer.b + layer.n_out];
            let out: Vec<f64> = (0..layer.n_out)
                .map(|o| {
                    let row = &w[o * layer.n_in..(o + 1) * layer.n_in];
                    let z = b[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                    if l < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().unwrap())
    }

    /// Forward pass plus backpropagation of `d_out(outputs)`, accumulated
    /// into `grad`. Returns the outputs.
    pub fn backward(
        &self,
        x: &[f64],
        d_out: impl FnOnce(&[f64]) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let acts = self.activations(x);
        let layers = self.layers();
        let output = acts.last().unwrap().clone();
        let mut delta = d_out(&output);
        for (l, layer) in layers.iter().enumerate().rev() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[layer.w + o * layer.n_in..layer.w + (o + 1) * layer.n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[layer.b + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[layer.w..layer.b];
            let mut prev = vec![0.0; layer.n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(output)
    }
}
