//! Single-layer LSTM over hourly steps with an affine readout of the final
//! hidden state. Gate order in the stacked weights: input, forget, cell,
//! output.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    input: usize,
    hidden: usize,
    output: usize,
    /// `W (4H x (D+H))`, `b (4H)`, `V (O x H)`, `c (O)`.
    params: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Trace {
    /// `(T+1) x H`; row 0 is the zero initial state.
    h: Vec<f64>,
    c: Vec<f64>,
    /// `T x 4H` post-activation gates.
    gates: Vec<f64>,
}

impl Lstm {
    /// Glorot-uniform weights per gate, zero biases except forget = 1.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut SplitMix64) -> Result<Self> {
        let mut net = Self::zeros(input, hidden, output)?;
        let cols = input + hidden;
        let gate_limit = (6.0 / (cols + hidden) as f64).sqrt();
        for w in &mut net.params[..4 * hidden * cols] {
            *w = rng.uniform(-gate_limit, gate_limit);
        }
        let b = net.b_off();
        for x in &mut net.params[b + hidden..b + 2 * hidden] {
            *x = 1.0;
        }
        let v = net.v_off();
        let out_limit = (6.0 / (hidden + output) as f64).sqrt();
        for w in &mut net.params[v..v + output * hidden] {
            *w = rng.uniform(-out_limit, out_limit);
        }
        Ok(net)
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::invalid("LSTM sizes must be positive"));
        }
        let n = 4 * hidden * (input + hidden) + 4 * hidden + output * hidden + output;
        Ok(Self {
            input,
            hidden,
            output,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(
        input: usize,
        hidden: usize,
        output: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(input, hidden, output)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(format!(
                "LSTM expects {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn input_len(&self) -> usize {
        self.input
    }

    pub fn hidden_len(&self) -> usize {
        self.hidden
    }

    pub fn output_len(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn b_off(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden)
    }

    fn v_off(&self) -> usize {
        self.b_off() + 4 * self.hidden
    }

    fn c_off(&self) -> usize {
        self.v_off() + self.output * self.hidden
    }

    fn steps(&self, x: &[f64]) -> Result<usize> {
        if x.is_empty() || x.len() % self.input != 0 {
            return Err(Error::shape(format!(
                "LSTM input of {} values is not a positive multiple of the step size {}",
                x.len(),
                self.input
            )));
        }
        Ok(x.len() / self.input)
    }

    fn run(&self, x: &[f64], steps: usize) -> Trace {
        let (d, hd) = (self.input, self.hidden);
        let cols = d + hd;
        let w = &self.params[..self.b_off()];
        let b = &self.params[self.b_off()..self.v_off()];
        let mut h = vec![0.0; (steps + 1) * hd];
        let mut c = vec![0.0; (steps + 1) * hd];
        let mut gates = vec![0.0; steps * 4 * hd];
        let mut z = vec![0.0; 4 * hd];
        for t in 0..steps {
            let xt = &x[t * d..(t + 1) * d];
            let hp = &h[t * hd..(t + 1) * hd];
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * cols..(r + 1) * cols];
                let (wx, wh) = row.split_at(d);
                *zr = b[r]
                    + wx.iter().zip(xt).map(|(w, x)| w * x).sum::<f64>()
                    + wh.iter().zip(hp).map(|(w, h)| w * h).sum::<f64>();
            }
            let g = &mut gates[t * 4 * hd..(t + 1) * 4 * hd];
            for j in 0..hd {
                g[j] = sigmoid(z[j]);
                g[hd + j] = sigmoid(z[hd + j]);
                g[2 * hd + j] = z[2 * hd + j].tanh();
                g[3 * hd + j] = sigmoid(z[3 * hd + j]);
            }
            for j in 0..hd {
                let cn = g[hd + j] * c[t * hd + j] + g[j] * g[2 * hd + j];
                c[(t + 1) * hd + j] = cn;
                h[(t + 1) * hd + j] = g[3 * hd + j] * cn.tanh();
            }
        }
        Trace { h, c, gates }
    }

    fn readout(&self, h_last: &[f64]) -> Vec<f64> {
        let v = &self.params[self.v_off()..self.c_off()];
        let c = &self.params[self.c_off()..];
        (0..self.output)
            .map(|o| {
                c[o] + v[o * self.hidden..(o + 1) * self.hidden]
                    .iter()
                    .zip(h_last)
                    .map(|(v, h)| v * h)
                    .sum::<f64>()
            })
            .collect()
    }

    /// `x` is hour-major: step `t` is `x[t*input..(t+1)*input]`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let steps = self.steps(x)?;
        let trace = self.run(x, steps);
        Ok(self.readout(&trace.h[steps * self.hidden..]))
    }

    /// Forward pass plus backpropagation through time of `d_out(outputs)`,
    /// accumulated into `grad`. Returns the outputs.
    pub fn backward(
        &self,
        x: &[f64],
        d_out: impl FnOnce(&[f64]) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let steps = self.steps(x)?;
        let (d, hd) = (self.input, self.hidden);
        let cols = d + hd;
        let trace = self.run(x, steps);
        let h_last = &trace.h[steps * hd..];
        let output = self.readout(h_last);
        let dy = d_out(&output);

        let (b_off, v_off, c_off) = (self.b_off(), self.v_off(), self.c_off());
        let v = &self.params[v_off..c_off];
        let mut dh = vec![0.0; hd];
        for (o, &g) in dy.iter().enumerate() {
            grad[c_off + o] += g;
            for j in 0..hd {
                grad[v_off + o * hd + j] += g * h_last[j];
                dh[j] += g * v[o * hd + j];
            }
        }

        let w = &self.params[..b_off];
        let mut dc = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        for t in (0..steps).rev() {
            let g = &trace.gates[t * 4 * hd..(t + 1) * 4 * hd];
            let c_prev = &trace.c[t * hd..(t + 1) * hd];
            let c_now = &trace.c[(t + 1) * hd..(t + 2) * hd];
            for j in 0..hd {
                let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let tc = c_now[j].tanh();
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dcj * gg * i * (1.0 - i);
                dz[hd + j] = dcj * c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dcj * i * (1.0 - gg * gg);
                dz[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            let xt = &x[t * d..(t + 1) * d];
            let hp = &trace.h[t * hd..(t + 1) * hd];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (r, &dzr) in dz.iter().enumerate() {
                grad[b_off + r] += dzr;
                if dzr == 0.0 {
                    continue;
                }
                let gr = &mut grad[r * cols..(r + 1) * cols];
                let (gx, gh) = gr.split_at_mut(d);
                for (g, x) in gx.iter_mut().zip(xt) {
                    *g += dzr * x;
                }
                for (g, h) in gh.iter_mut().zip(hp) {
                    *g += dzr * h;
                }
                let wh = &w[r * cols + d..(r + 1) * cols];
                for (a, w) in dh.iter_mut().zip(wh) {
                    *a += dzr * w;
                }
            }
        }
        Ok(output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_reads_out_bias() {
        let mut net = Lstm::zeros(3, 4, 2).unwrap();
        let n = net.params().len();
        net.params_mut()[n - 2] = 0.25;
        net.params_mut()[n - 1] = -1.0;
        let x = vec![1.0; 3 * 5];
        assert_eq!(net.forward(&x).unwrap(), vec![0.25, -1.0]);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let net = Lstm::new(2, 3, 1, &mut SplitMix64::new(1)).unwrap();
        let b = net.b_off();
        assert_eq!(&net.params()[b..b + 3], &[0.0; 3]);
        assert_eq!(&net.params()[b + 3..b + 6], &[1.0; 3]);
        assert_eq!(&net.params()[b + 6..b + 12], &[0.0; 6]);
    }

    #[test]
    fn one_step_hand_computed() {
        // D = H = O = 1; only the cell-gate input weight, input and output
        // gate biases and the readout are set.
        let mut net = Lstm::zeros(1, 1, 1).unwrap();
        // W rows (i, f, g, o), each [w_x, w_h].
        net.params_mut()[4] = 2.0; // g: w_x
        let b = net.b_off();
        net.params_mut()[b] = 100.0; // input gate ~ 1
        net.params_mut()[b + 1] = -100.0; // forget gate ~ 0
        net.params_mut()[b + 3] = 100.0; // output gate ~ 1
        let v = net.v_off();
        net.params_mut()[v] = 3.0;
        let y = net.forward(&[0.5]).unwrap()[0];
        let expect = 3.0 * (1.0f64).tanh().tanh();
        assert!((y - expect).abs() < 1e-12, "{y} vs {expect}");
    }

    #[test]
    fn ragged_input_is_rejected() {
        let net = Lstm::zeros(3, 2, 1).unwrap();
        assert!(net.forward(&[0.0; 4]).is_err());
        assert!(net.forward(&[]).is_err());
    }
}
