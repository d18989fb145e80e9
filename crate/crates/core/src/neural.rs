//! Perceptrons, 2-layer MLPs, the LSTM cell and the simple recurrent cell.
//!
//! Each block has a plain `f64` forward pass and a `bind` method placing its
//! weights on an autodiff [`Tape`] at a given offset of the flat parameter
//! vector. Weights are stored row-major, `out x in`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Single layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perceptron {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Perceptron {
    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
            activation,
        }
    }

    /// Weights uniform in `[-1/sqrt(n_in), 1/sqrt(n_in)]`, zero biases.
    pub fn random<R: Rng + ?Sized>(n_in: usize, n_out: usize, activation: Activation, rng: &mut R) -> Self {
        let mut p = Self::zeros(n_in, n_out, activation);
        if n_in > 0 {
            let bound = 1.0 / (n_in as f64).sqrt();
            for w in &mut p.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn n_params(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in {
            return Err(Error::Dimension {
                context: "perceptron input",
                expected: self.n_in,
                actual: x.len(),
            });
        }
        Ok((0..self.n_out)
            .map(|r| {
                let row = &self.weights[r * self.n_in..(r + 1) * self.n_in];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.biases[r];
                self.activation.apply(z)
            })
            .collect())
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.biases);
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let nw = self.weights.len();
        let nb = self.biases.len();
        self.weights.copy_from_slice(&src[..nw]);
        self.biases.copy_from_slice(&src[nw..nw + nb]);
        nw + nb
    }

    /// Place the weights on `tape`, taking them from `theta[offset..]`.
    pub fn bind(&self, tape: &mut Tape, theta: &[f64], offset: usize) -> (BoundPerceptron, usize) {
        let nw = self.weights.len();
        let w = tape.param(offset, &theta[offset..offset + nw]);
        let b = tape.param(offset + nw, &theta[offset + nw..offset + nw + self.n_out]);
        (
            BoundPerceptron {
                w,
                b,
                n_out: self.n_out,
                activation: self.activation,
            },
            offset + self.n_params(),
        )
    }
}

/// A perceptron whose weights live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundPerceptron {
    w: Var,
    b: Var,
    n_out: usize,
    activation: Activation,
}

impl BoundPerceptron {
    pub fn record(&self, tape: &mut Tape, x: Var) -> Var {
        let wx = tape.matvec(self.w, x, self.n_out);
        let z = tape.add(wx, self.b);
        self.activation.record(tape, z)
    }
}

/// Stack of perceptrons applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Perceptron>,
}

impl Mlp {
    pub fn new(layers: Vec<Perceptron>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Dimension {
                    context: "mlp layer chaining",
                    expected: pair[0].n_out,
                    actual: pair[1].n_in,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Two layers `n_in -> hidden -> n_out`: tanh hidden, sigmoid output.
    pub fn two_layer<R: Rng + ?Sized>(n_in: usize, hidden: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            layers: vec![
                Perceptron::random(n_in, hidden, Activation::Tanh, rng),
                Perceptron::random(hidden, n_out, Activation::Sigmoid, rng),
            ],
        }
    }

    pub fn two_layer_zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Self {
            layers: vec![
                Perceptron::zeros(n_in, hidden, Activation::Tanh),
                Perceptron::zeros(hidden, n_out, Activation::Sigmoid),
            ],
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Perceptron::n_params).sum()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn bind(&self, tape: &mut Tape, theta: &[f64], mut offset: usize) -> (BoundMlp, usize) {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (b, next) = l.bind(tape, theta, offset);
            layers.push(b);
            offset = next;
        }
        (BoundMlp { layers }, offset)
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.layers.iter().for_each(|l| l.write_flat(out));
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut used = 0;
        for l in &mut self.layers {
            used += l.read_flat(&src[used..]);
        }
        used
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<BoundPerceptron>,
}

impl BoundMlp {
    pub fn record(&self, tape: &mut Tape, x: Var) -> Var {
        self.layers.iter().fold(x, |h, l| l.record(tape, h))
    }
}

/// LSTM cell with state `(c, h)`; every gate reads `h ++ x`.
///
/// `c' = P1 * c + P2 * P3`, `h' = P4 * act(c')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub hidden: usize,
    pub input: usize,
    pub gates: [Perceptron; 4],
    pub state_activation: Activation,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let g = || Perceptron::zeros(hidden + input, hidden, Activation::Sigmoid);
        Self {
            hidden,
            input,
            gates: [g(), g(), g(), g()],
            state_activation: Activation::Sigmoid,
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut g = || Perceptron::random(hidden + input, hidden, Activation::Sigmoid, rng);
        let gates = [g(), g(), g(), g()];
        Self {
            hidden,
            input,
            gates,
            state_activation: Activation::Sigmoid,
        }
    }

    pub fn n_params(&self) -> usize {
        self.gates.iter().map(Perceptron::n_params).sum()
    }

    /// One step; returns `(c', h')`.
    pub fn step(&self, c: &[f64], h: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        for (what, got) in [("lstm cell state", c.len()), ("lstm hidden state", h.len())] {
            if got != self.hidden {
                return Err(Error::Dimension {
                    context: what,
                    expected: self.hidden,
                    actual: got,
                });
            }
        }
        if x.len() != self.input {
            return Err(Error::Dimension {
                context: "lstm input",
                expected: self.input,
                actual: x.len(),
            });
        }
        let hx: Vec<f64> = h.iter().chain(x).copied().collect();
        let p1 = self.gates[0].forward(&hx)?;
        let p2 = self.gates[1].forward(&hx)?;
        let p3 = self.gates[2].forward(&hx)?;
        let p4 = self.gates[3].forward(&hx)?;
        let c_next: Vec<f64> = (0..self.hidden).map(|i| p1[i] * c[i] + p2[i] * p3[i]).collect();
        let h_next = (0..self.hidden)
            .map(|i| p4[i] * self.state_activation.apply(c_next[i]))
            .collect();
        Ok((c_next, h_next))
    }

    pub fn bind(&self, tape: &mut Tape, theta: &[f64], mut offset: usize) -> (BoundLstm, usize) {
        let mut gates = Vec::with_capacity(4);
        for g in &self.gates {
            let (b, next) = g.bind(tape, theta, offset);
            gates.push(b);
            offset = next;
        }
        (
            BoundLstm {
                gates: [gates[0], gates[1], gates[2], gates[3]],
                state_activation: self.state_activation,
            },
            offset,
        )
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.gates.iter().for_each(|g| g.write_flat(out));
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut used = 0;
        for g in &mut self.gates {
            used += g.read_flat(&src[used..]);
        }
        used
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    gates: [BoundPerceptron; 4],
    state_activation: Activation,
}

impl BoundLstm {
    pub fn record(&self, tape: &mut Tape, c: Var, h: Var, x: Var) -> (Var, Var) {
        let hx = tape.concat(&[h, x]);
        let p1 = self.gates[0].record(tape, hx);
        let p2 = self.gates[1].record(tape, hx);
        let p3 = self.gates[2].record(tape, hx);
        let p4 = self.gates[3].record(tape, hx);
        let keep = tape.mul(p1, c);
        let write = tape.mul(p2, p3);
        let c_next = tape.add(keep, write);
        let act = self.state_activation.record(tape, c_next);
        let h_next = tape.mul(p4, act);
        (c_next, h_next)
    }
}

/// Simple recurrent cell: `s' = F1(s ++ x)`, `y = F2(s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Srnn {
    pub recurrence: Perceptron,
    pub readout: Perceptron,
}

impl Srnn {
    pub fn zeros(input: usize, state: usize, output: usize) -> Self {
        Self {
            recurrence: Perceptron::zeros(state + input, state, Activation::Sigmoid),
            readout: Perceptron::zeros(state, output, Activation::Sigmoid),
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, state: usize, output: usize, rng: &mut R) -> Self {
        let recurrence = Perceptron::random(state + input, state, Activation::Sigmoid, rng);
        let readout = Perceptron::random(state, output, Activation::Sigmoid, rng);
        Self { recurrence, readout }
    }

    pub fn state_size(&self) -> usize {
        self.recurrence.n_out
    }

    pub fn input_size(&self) -> usize {
        self.recurrence.n_in - self.recurrence.n_out
    }

    pub fn n_params(&self) -> usize {
        self.recurrence.n_params() + self.readout.n_params()
    }

    pub fn step(&self, s: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if s.len() != self.state_size() {
            return Err(Error::Dimension {
                context: "srnn state",
                expected: self.state_size(),
                actual: s.len(),
            });
        }
        if x.len() != self.input_size() {
            return Err(Error::Dimension {
                context: "srnn input",
                expected: self.input_size(),
                actual: x.len(),
            });
        }
        let sx: Vec<f64> = s.iter().chain(x).copied().collect();
        let s_next = self.recurrence.forward(&sx)?;
        let y = self.readout.forward(&s_next)?;
        Ok((s_next, y))
    }

    pub fn bind(&self, tape: &mut Tape, theta: &[f64], offset: usize) -> (BoundSrnn, usize) {
        let (recurrence, offset) = self.recurrence.bind(tape, theta, offset);
        let (readout, offset) = self.readout.bind(tape, theta, offset);
        (BoundSrnn { recurrence, readout }, offset)
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.recurrence.write_flat(out);
        self.readout.write_flat(out);
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let used = self.recurrence.read_flat(src);
        used + self.readout.read_flat(&src[used..])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundSrnn {
    recurrence: BoundPerceptron,
    readout: BoundPerceptron,
}

impl BoundSrnn {
    pub fn record(&self, tape: &mut Tape, s: Var, x: Var) -> (Var, Var) {
        let sx = tape.concat(&[s, x]);
        let s_next = self.recurrence.record(tape, sx);
        let y = self.readout.record(tape, s_next);
        (s_next, y)
    }
}

/// Blocks that can be flattened into and restored from a parameter vector.
pub trait Flatten {
    fn n_params(&self) -> usize;
    fn write_flat(&self, out: &mut Vec<f64>);
    /// Returns the number of values consumed.
    fn read_flat(&mut self, src: &[f64]) -> usize;
}

macro_rules! impl_flatten {
    ($($t:ty),*) => {$(
        impl Flatten for $t {
            fn n_params(&self) -> usize { <$t>::n_params(self) }
            fn write_flat(&self, out: &mut Vec<f64>) { <$t>::write_flat(self, out) }
            fn read_flat(&mut self, src: &[f64]) -> usize { <$t>::read_flat(self, src) }
        }
    )*};
}
impl_flatten!(Perceptron, Mlp, Lstm, Srnn);

/// Count parameters by walking every stored weight and bias.
pub fn count_params<B: Flatten>(block: &B) -> usize {
    let mut buf = Vec::new();
    block.write_flat(&mut buf);
    buf.len()
}

/// Closed-form block sizes for `n_i` interfaces and `n_o` observed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub mlp1: usize,
    pub extractor: usize,
    pub mlp2: usize,
    /// Elman predictor as built here: `3 n_i^2 + 2 n_i`.
    pub predictor: usize,
    /// Predictor size listed in the reference table, `3 n_i (n_i + 1)`.
    pub predictor_table: usize,
}

impl BlockCounts {
    pub fn total(&self) -> usize {
        self.mlp1 + self.extractor + self.mlp2 + self.predictor
    }

    /// `predictor_table - predictor`, which equals `n_i`.
    pub fn predictor_delta(&self) -> usize {
        self.predictor_table - self.predictor
    }
}

pub fn closed_form_counts(n_i: usize, n_o: usize) -> BlockCounts {
    BlockCounts {
        mlp1: 2 * n_i * (2 * n_i + n_o + 2),
        extractor: 4 * n_i * (n_i + n_o + 1),
        mlp2: (n_i - 1) * (n_i + n_o + 1),
        predictor: 3 * n_i * n_i + 2 * n_i,
        predictor_table: 3 * n_i * (n_i + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perceptron_examples() {
        let p = Perceptron::zeros(3, 2, Activation::Sigmoid);
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);

        let id = Perceptron {
            n_in: 2,
            n_out: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            biases: vec![0.0, 0.0],
            activation: Activation::Identity,
        };
        assert_eq!(id.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);

        let p = Perceptron {
            n_in: 2,
            n_out: 1,
            weights: vec![1.0, 2.0],
            biases: vec![-1.0],
            activation: Activation::Sigmoid,
        };
        assert_abs_diff_eq!(p.forward(&[1.0, 1.0]).unwrap()[0], 0.8808, epsilon = 1e-4);
        assert!(matches!(p.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mlp_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Perceptron::random(3, 2, Activation::Tanh, &mut rng);
        let single = Mlp::new(vec![layer.clone()]).unwrap();
        let x = [0.2, -0.4, 0.9];
        assert_eq!(single.forward(&x).unwrap(), layer.forward(&x).unwrap());

        let zero = Mlp::new(vec![
            Perceptron::zeros(2, 3, Activation::Sigmoid),
            Perceptron::zeros(3, 1, Activation::Sigmoid),
        ])
        .unwrap();
        assert_eq!(zero.forward(&[4.0, -1.0]).unwrap(), vec![0.5]);

        assert!(Mlp::new(vec![
            Perceptron::zeros(2, 3, Activation::Sigmoid),
            Perceptron::zeros(4, 1, Activation::Sigmoid),
        ])
        .is_err());
        assert_eq!(count_params(&Mlp::new(vec![]).unwrap()), 0);
    }

    #[test]
    fn mlp_matches_hand_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::two_layer(2, 3, 1, &mut rng);
        let x = [0.7, -0.3];
        let (l1, l2) = (&m.layers[0], &m.layers[1]);
        let mut hidden = [0.0; 3];
        for (r, h) in hidden.iter_mut().enumerate() {
            let z = l1.weights[2 * r] * x[0] + l1.weights[2 * r + 1] * x[1] + l1.biases[r];
            *h = z.tanh();
        }
        let z = l2.weights[0] * hidden[0] + l2.weights[1] * hidden[1] + l2.weights[2] * hidden[2] + l2.biases[0];
        let expected = 1.0 / (1.0 + (-z).exp());
        assert_abs_diff_eq!(m.forward(&x).unwrap()[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn lstm_zero_parameters() {
        let l = Lstm::zeros(2, 3);
        let (c, h) = l.step(&[0.0; 3], &[0.0; 3], &[0.4, 0.1]).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(c[i], 0.25, epsilon = 1e-15);
            assert_abs_diff_eq!(h[i], 0.2811, epsilon = 1e-4);
        }
    }

    #[test]
    fn lstm_saturated_gates() {
        let mut l = Lstm::zeros(1, 2);
        // P1 -> 1, P2 -> 0: pure memory
        l.gates[0].biases = vec![60.0; 2];
        l.gates[1].biases = vec![-60.0; 2];
        let (c, _) = l.step(&[0.3, 0.8], &[0.1, 0.2], &[0.5]).unwrap();
        assert_abs_diff_eq!(c[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 0.8, epsilon = 1e-12);
        // P4 -> 0: closed output gate
        l.gates[3].biases = vec![-800.0; 2];
        let (_, h) = l.step(&[0.3, 0.8], &[0.1, 0.2], &[0.5]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert!(l.step(&[0.3], &[0.1, 0.2], &[0.5]).is_err());
    }

    #[test]
    fn srnn_examples() {
        let s = Srnn::zeros(2, 3, 2);
        let (state, y) = s.step(&[0.9, 0.1, 0.3], &[1.0, 2.0]).unwrap();
        assert_eq!(state, vec![0.5; 3]);
        assert_eq!(y, vec![0.5; 2]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Srnn::random(2, 2, 1, &mut rng);
        let (a, _) = s.step(&[0.2, 0.6], &[0.0, 0.0]).unwrap();
        let (b, _) = s.step(&[0.2, 0.6], &[0.0, 0.0]).unwrap();
        assert_eq!(a, b);
        // hand composition
        let r = &s.recurrence;
        let sx = [0.2, 0.6, 0.0, 0.0];
        let s0: f64 = (0..4).map(|k| r.weights[k] * sx[k]).sum::<f64>() + r.biases[0];
        assert_abs_diff_eq!(a[0], 1.0 / (1.0 + (-s0).exp()), epsilon = 1e-14);
    }

    #[test]
    fn closed_forms_reference_sizes() {
        let c = closed_form_counts(55, 15);
        assert_eq!((c.mlp1, c.extractor, c.mlp2), (13970, 15620, 3834));
        assert_eq!(c.predictor, 9185);
        assert_eq!(c.predictor_table, 9240);
        assert_eq!(c.predictor_delta(), 55);
        assert_eq!(closed_form_counts(2, 1).mlp1, 28);
    }

    #[test]
    fn enumerated_counts_match_closed_forms() {
        for n_i in 2..=64 {
            for n_o in 1..=n_i {
                let c = closed_form_counts(n_i, n_o);
                let mlp1 = Mlp::two_layer_zeros(n_o, 2 * n_i, 2 * n_i);
                let ext = Lstm::zeros(n_o, n_i);
                let mlp2 = Mlp::two_layer_zeros(n_o, n_i - 1, n_i - 1);
                let pred = Srnn::zeros(n_i, n_i, n_i);
                assert_eq!(count_params(&mlp1), c.mlp1);
                assert_eq!(count_params(&ext), c.extractor);
                assert_eq!(count_params(&mlp2), c.mlp2);
                assert_eq!(count_params(&pred), c.predictor);
            }
        }
    }

    #[test]
    fn sigmoid_cells_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let l = Lstm::random(3, 4, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let (_, h2) = l.step(&c, &h, &x).unwrap();
            assert!(h2.iter().all(|&v| v > 0.0 && v < 1.0));
            let s = Srnn::random(3, 4, 2, &mut rng);
            let (s2, y) = s.step(&h, &x).unwrap();
            assert!(s2.iter().chain(&y).all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn tape_path_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = Lstm::random(2, 3, &mut rng);
        let mut theta = Vec::new();
        l.write_flat(&mut theta);
        let mut tape = Tape::new(theta.len());
        let (bound, end) = l.bind(&mut tape, &theta, 0);
        assert_eq!(end, theta.len());
        let (c0, h0, x) = ([0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, -0.1]);
        let cv = tape.constant(c0.to_vec());
        let hv = tape.constant(h0.to_vec());
        let xv = tape.constant(x.to_vec());
        let (c1, h1) = bound.record(&mut tape, cv, hv, xv);
        let (pc, ph) = l.step(&c0, &h0, &x).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(tape.value(c1)[i], pc[i], epsilon = 1e-15);
            assert_abs_diff_eq!(tape.value(h1)[i], ph[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = Srnn::random(2, 3, 2, &mut rng);
        let mut flat = Vec::new();
        s.write_flat(&mut flat);
        let mut z = Srnn::zeros(2, 3, 2);
        assert_eq!(z.read_flat(&flat), flat.len());
        assert_eq!(z, s);
    }

    #[test]
    fn cells_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let l = Lstm::random(2, 3, &mut rng);
            let s = Srnn::random(3, 3, 2, &mut rng);
            let mut theta = Vec::new();
            l.write_flat(&mut theta);
            s.write_flat(&mut theta);
            let record = |tape: &mut Tape, th: &[f64]| {
                let (bl, off) = l.bind(tape, th, 0);
                let (bs, _) = s.bind(tape, th, off);
                let c = tape.constant(vec![0.2, 0.4, 0.1]);
                let h = tape.constant(vec![0.3, 0.9, 0.5]);
                let x = tape.constant(vec![0.6, -0.2]);
                let (c1, h1) = bl.record(tape, c, h, x);
                let (_, h2) = bl.record(tape, c1, h1, x);
                let (_, y) = bs.record(tape, h2, h1);
                let sq = tape.square(y);
                Ok(tape.sum(sq))
            };
            let r = grad_check(record, &theta, 1e-6, 1e-5).unwrap();
            let w = r.worst_index.unwrap_or(0);
            assert!(
                r.passed,
                "max err {} at {w}: {} vs {}",
                r.max_relative_error, r.analytic.0[w], r.numeric.0[w]
            );
        }
    }
}
