use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    /// Absolute offset of the row-major `fan_out x fan_in` weight block; the
    /// `fan_out` biases follow it.
    offset: usize,
}

/// Shape and position of a tanh MLP inside a flat parameter buffer.
///
/// Flattening order: layer by layer from the input, each layer contributing
/// its weight matrix in row-major `(fan_out, fan_in)` order followed by its
/// bias vector. Hidden layers use tanh; the last layer uses `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayout {
    layers: Vec<LayerLayout>,
    output: Activation,
    offset: usize,
    len: usize,
}

/// Activations recorded during a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTape {
    acts: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("tape holds the input at least")
    }
}

impl MlpLayout {
    /// `sizes` lists widths from input to output; `offset` is where the block
    /// starts inside the owner's buffer.
    pub fn new(sizes: &[usize], output: Activation, offset: usize) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let mut cursor = offset;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset: cursor,
                };
                cursor += w[0] * w[1] + w[1];
                l
            })
            .collect();
        Self {
            layers,
            output,
            offset,
            len: cursor - offset,
        }
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    /// Uniform `±gain / sqrt(fan_in)` weights, zero biases. The final layer
    /// uses `out_gain` instead of 1.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng, out_gain: f64) {
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let gain = if li == last { out_gain } else { 1.0 };
            let bound = gain / (l.fan_in as f64).sqrt();
            let (w, b) = params[l.offset..l.offset + l.fan_in * l.fan_out + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
            for v in w {
                *v = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            }
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn weights<'a>(&self, l: &LayerLayout, params: &'a [f64]) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let nw = l.fan_in * l.fan_out;
        let w = ArrayView2::from_shape((l.fan_out, l.fan_in), &params[l.offset..l.offset + nw]).unwrap();
        let b = ArrayView1::from(&params[l.offset + nw..l.offset + nw + l.fan_out]);
        (w, b)
    }

    fn weights_mut<'a>(&self, l: &LayerLayout, grad: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let nw = l.fan_in * l.fan_out;
        let (w, b) = grad[l.offset..l.offset + nw + l.fan_out].split_at_mut(nw);
        (
            ArrayViewMut2::from_shape((l.fan_out, l.fan_in), w).unwrap(),
            ArrayViewMut1::from(b),
        )
    }

    /// Batched forward pass over the rows of `x`.
    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<MlpTape> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape("mlp input", self.input_width(), x.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (li, l) in self.layers.iter().enumerate() {
            let (w, b) = self.weights(l, params);
            let mut z = acts[li].dot(&w.t());
            z += &b;
            if li < last || self.output == Activation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Ok(MlpTape { acts })
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` into
    /// `grad` (same indexing as `params`) and returns the input gradient.
    pub fn backward(&self, params: &[f64], tape: &MlpTape, d_out: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut g = d_out.to_owned();
        for (li, l) in self.layers.iter().enumerate().rev() {
            if li < last || self.output == Activation::Tanh {
                let a = &tape.acts[li + 1];
                g.zip_mut_with(a, |g, &a| *g *= 1.0 - a * a);
            }
            let (w, _) = self.weights(l, params);
            let (mut dw, mut db) = self.weights_mut(l, grad);
            dw += &g.t().dot(&tape.acts[li]);
            db += &g.sum_axis(Axis(0));
            g = g.dot(&w);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(sizes: &[usize], out: Activation, seed: u64) -> (MlpLayout, Vec<f64>) {
        let layout = MlpLayout::new(sizes, out, 0);
        let mut params = vec![0.0; layout.num_params()];
        layout.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        for (i, b) in params.iter_mut().enumerate() {
            // Nonzero biases exercise the bias path.
            if *b == 0.0 {
                *b = 0.05 * ((i % 7) as f64 - 3.0);
            }
        }
        (layout, params)
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let l = MlpLayout::new(&[5, 8, 8, 3], Activation::Identity, 10);
        assert_eq!(l.num_params(), 5 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(l.range(), 10..10 + l.num_params());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let l = MlpLayout::new(&[3, 4, 2], Activation::Tanh, 0);
        let p = vec![0.0; l.num_params()];
        let tape = l.forward(&p, array![[1.0, -2.0, 0.5]].view()).unwrap();
        assert_eq!(tape.output(), &array![[0.0, 0.0]]);
    }

    #[test]
    fn input_width_checked() {
        let l = MlpLayout::new(&[3, 2], Activation::Identity, 0);
        let p = vec![0.0; l.num_params()];
        assert!(l.forward(&p, Array2::zeros((1, 4)).view()).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        for out in [Activation::Identity, Activation::Tanh] {
            let (layout, params) = random_net(&[4, 8, 8, 3], out, 3);
            let x = array![[0.3, -0.1, 0.7, 0.2], [-0.5, 0.4, 0.0, 0.9]];
            let weights = array![[1.0, -2.0, 0.5], [0.3, 0.7, -1.1]];
            let loss = |p: &[f64]| (layout.forward(p, x.view()).unwrap().output() * &weights).sum();
            let tape = layout.forward(&params, x.view()).unwrap();
            let mut grad = vec![0.0; params.len()];
            let dx = layout.backward(&params, &tape, weights.view(), &mut grad);
            let h = 1e-5;
            let mut p = params.clone();
            for i in 0..params.len() {
                p[i] = params[i] + h;
                let up = loss(&p);
                p[i] = params[i] - h;
                let down = loss(&p);
                p[i] = params[i];
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[i]).abs() <= 1e-7 * fd.abs().max(1.0), "param {i}: {fd} vs {}", grad[i]);
            }
            // Input gradient.
            for r in 0..2 {
                for c in 0..4 {
                    let mut xp = x.clone();
                    xp[[r, c]] += h;
                    let up = (layout.forward(&params, xp.view()).unwrap().output() * &weights).sum();
                    xp[[r, c]] -= 2.0 * h;
                    let down = (layout.forward(&params, xp.view()).unwrap().output() * &weights).sum();
                    let fd = (up - down) / (2.0 * h);
                    assert!((fd - dx[[r, c]]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn backward_accumulates() {
        let (layout, params) = random_net(&[2, 3, 1], Activation::Identity, 1);
        let x = array![[0.1, 0.2]];
        let tape = layout.forward(&params, x.view()).unwrap();
        let ones = array![[1.0]];
        let mut once = vec![0.0; params.len()];
        layout.backward(&params, &tape, ones.view(), &mut once);
        let mut twice = vec![0.0; params.len()];
        layout.backward(&params, &tape, ones.view(), &mut twice);
        layout.backward(&params, &tape, ones.view(), &mut twice);
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }
}
