//! Reverse-mode differentiation on a vector-valued tape.
//!
//! Every node holds a dense `Vec<f64>`. Parameter leaves are bound to a
//! contiguous slice of a flat parameter vector `theta`, and [`Tape::backward`]
//! returns the gradient of a scalar node with respect to the whole of
//! `theta`. Nodes are appended in evaluation order, so the reverse sweep is a
//! plain walk from the back of the node list.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param {
        offset: usize,
    },
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    /// `scale * x + shift`
    Affine {
        x: usize,
        scale: f64,
        shift: f64,
    },
    Sigmoid(usize),
    Tanh(usize),
    Square(usize),
    Sum(usize),
    Dot(usize, usize),
    /// Row-major `rows x cols` matrix times vector.
    MatVec {
        w: usize,
        x: usize,
        rows: usize,
        cols: usize,
    },
    Slice {
        x: usize,
        start: usize,
    },
    Gather {
        x: usize,
        indices: Vec<usize>,
    },
    Concat(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Gradient aligned index-for-index with the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
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

#[derive(Debug, Clone)]
pub struct Tape {
    n_params: usize,
    nodes: Vec<Node>,
}

impl Tape {
    /// A tape differentiating with respect to a parameter vector of length `n_params`.
    pub fn new(n_params: usize) -> Self {
        Self {
            n_params,
            nodes: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn same_len(&self, a: Var, b: Var) {
        assert_eq!(
            self.dim(a),
            self.dim(b),
            "tape: operand lengths differ ({} vs {})",
            self.dim(a),
            self.dim(b)
        );
    }

    /// Leaf bound to `theta[offset .. offset + values.len()]`.
    pub fn param(&mut self, offset: usize, values: &[f64]) -> Var {
        assert!(offset + values.len() <= self.n_params, "parameter slice exceeds theta");
        self.push(Op::Param { offset }, values.to_vec())
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(Op::Const, values)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let v = zip(self.value(a), self.value(b), |x, y| x / y);
        self.push(Op::Div(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| -x).collect();
        self.push(Op::Neg(a.0), v)
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).iter().map(|x| scale * x + shift).collect();
        self.push(Op::Affine { x: a.0, scale, shift }, v)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a.0), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a.0), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).collect();
        self.push(Op::Square(a.0), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a.0), vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a.0, b.0), vec![s])
    }

    /// `w` holds a row-major `rows x cols` matrix.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize) -> Var {
        let cols = self.dim(x);
        assert_eq!(self.dim(w), rows * cols, "tape: matvec shape mismatch");
        let wv = self.value(w);
        let xv = self.value(x);
        let v = (0..rows)
            .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(
            Op::MatVec {
                w: w.0,
                x: x.0,
                rows,
                cols,
            },
            v,
        )
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a)[start..start + len].to_vec();
        self.push(Op::Slice { x: a.0, start }, v)
    }

    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = self.value(a);
        let v = indices.iter().map(|&i| src[i]).collect();
        self.push(
            Op::Gather {
                x: a.0,
                indices: indices.to_vec(),
            },
            v,
        )
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(self.value(*p));
        }
        self.push(Op::Concat(parts.iter().map(|p| p.0).collect()), v)
    }

    /// Gradient of the scalar node `loss` with respect to theta.
    pub fn backward(&self, loss: Var) -> Result<GradientVector> {
        if self.dim(loss) != 1 {
            return Err(Error::Dimension {
                context: "backward on non-scalar node",
                expected: 1,
                actual: self.dim(loss),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut grad = vec![0.0; self.n_params];

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (dst, gi) in grad[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.iter().copied());
                    accumulate(&mut adj, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, g.iter().copied());
                    accumulate(&mut adj, *b, g.iter().map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut adj, *a, g.iter().zip(vb).map(|(gi, y)| gi * y));
                    accumulate(&mut adj, *b, g.iter().zip(va).map(|(gi, x)| gi * x));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut adj, *a, g.iter().zip(vb).map(|(gi, y)| gi / y));
                    accumulate(
                        &mut adj,
                        *b,
                        g.iter().zip(va.iter().zip(vb)).map(|(gi, (x, y))| -gi * x / (y * y)),
                    );
                }
                Op::Neg(a) => accumulate(&mut adj, *a, g.iter().map(|x| -x)),
                Op::Affine { x, scale, .. } => accumulate(&mut adj, *x, g.iter().map(|gi| gi * scale)),
                Op::Sigmoid(a) => accumulate(
                    &mut adj,
                    *a,
                    g.iter().zip(&node.value).map(|(gi, s)| gi * s * (1.0 - s)),
                ),
                Op::Tanh(a) => accumulate(
                    &mut adj,
                    *a,
                    g.iter().zip(&node.value).map(|(gi, t)| gi * (1.0 - t * t)),
                ),
                Op::Square(a) => {
                    let va = &self.nodes[*a].value;
                    accumulate(&mut adj, *a, g.iter().zip(va).map(|(gi, x)| 2.0 * gi * x));
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.len();
                    accumulate(&mut adj, *a, std::iter::repeat_n(g[0], n));
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut adj, *a, vb.iter().map(|y| g[0] * y));
                    accumulate(&mut adj, *b, va.iter().map(|x| g[0] * x));
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (vw, vx) = (&self.nodes[*w].value, &self.nodes[*x].value);
                    let gw = (0..rows * cols).map(|k| g[k / cols] * vx[k % cols]);
                    accumulate(&mut adj, *w, gw);
                    let gx = (0..*cols).map(|c| (0..*rows).map(|r| g[r] * vw[r * cols + c]).sum());
                    accumulate(&mut adj, *x, gx);
                }
                Op::Slice { x, start } => {
                    let n = self.nodes[*x].value.len();
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; n]);
                    for (k, gi) in g.iter().enumerate() {
                        slot[start + k] += gi;
                    }
                }
                Op::Gather { x, indices } => {
                    let n = self.nodes[*x].value.len();
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; n]);
                    for (gi, &k) in g.iter().zip(indices) {
                        slot[k] += gi;
                    }
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        accumulate(&mut adj, p, g[start..start + n].iter().copied());
                        start += n;
                    }
                }
            }
        }
        Ok(GradientVector(grad))
    }

    /// Recompute every node from `theta` (and the recorded constants).
    pub fn replay(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Param { offset } => theta[*offset..*offset + node.value.len()].to_vec(),
                Op::Const => node.value.clone(),
                Op::Add(a, b) => zip(&out[*a], &out[*b], |x, y| x + y),
                Op::Sub(a, b) => zip(&out[*a], &out[*b], |x, y| x - y),
                Op::Mul(a, b) => zip(&out[*a], &out[*b], |x, y| x * y),
                Op::Div(a, b) => zip(&out[*a], &out[*b], |x, y| x / y),
                Op::Neg(a) => out[*a].iter().map(|x| -x).collect(),
                Op::Affine { x, scale, shift } => out[*x].iter().map(|v| scale * v + shift).collect(),
                Op::Sigmoid(a) => out[*a].iter().map(|&x| sigmoid(x)).collect(),
                Op::Tanh(a) => out[*a].iter().map(|x| x.tanh()).collect(),
                Op::Square(a) => out[*a].iter().map(|x| x * x).collect(),
                Op::Sum(a) => vec![out[*a].iter().sum()],
                Op::Dot(a, b) => vec![out[*a].iter().zip(&out[*b]).map(|(x, y)| x * y).sum()],
                Op::MatVec { w, x, rows, cols } => (0..*rows)
                    .map(|r| {
                        out[*w][r * cols..(r + 1) * cols]
                            .iter()
                            .zip(&out[*x])
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect(),
                Op::Slice { x, start } => out[*x][*start..start + node.value.len()].to_vec(),
                Op::Gather { x, indices } => indices.iter().map(|&i| out[*x][i]).collect(),
                Op::Concat(parts) => parts.iter().flat_map(|&p| out[p].iter().copied()).collect(),
            };
            out.push(v);
        }
        out
    }

    /// True when replaying with `theta` reproduces every recorded value bit for bit.
    pub fn replay_matches(&self, theta: &[f64]) -> bool {
        self.replay(theta)
            .iter()
            .zip(&self.nodes)
            .all(|(a, n)| a.len() == n.value.len() && a.iter().zip(&n.value).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(adj: &mut [Option<Vec<f64>>], target: usize, g: impl Iterator<Item = f64>) {
    match &mut adj[target] {
        Some(slot) => {
            for (s, gi) in slot.iter_mut().zip(g) {
                *s += gi;
            }
        }
        slot @ None => *slot = Some(g.collect()),
    }
}

/// Central finite differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h`.
pub fn finite_difference<F>(f: F, theta: &[f64], h: f64) -> GradientVector
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = theta.to_vec();
    let g = (0..theta.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + h;
            let up = f(&work);
            work[i] = orig - h;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect();
    GradientVector(g)
}

/// Per-coordinate comparison of an analytic gradient with finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: GradientVector,
    pub numeric: GradientVector,
    /// `|g_ad - g_fd| / (|g_ad| + |g_fd| + floor)` per coordinate; see [`GRAD_CHECK_FLOOR_REL`].
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// The relative-error denominator gets a floor of
/// `GRAD_CHECK_FLOOR_REL * max_i |g_fd,i| + GRAD_CHECK_FLOOR_ABS`, so that
/// coordinates whose gradient is at the finite-difference rounding level are
/// judged on absolute error instead.
pub const GRAD_CHECK_FLOOR_REL: f64 = 1e-3;
pub const GRAD_CHECK_FLOOR_ABS: f64 = 1e-10;

/// Compare `analytic` against central differences of `f` at `theta`.
pub fn grad_check_with<F>(f: F, analytic: GradientVector, theta: &[f64], h: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert!(tolerance > 0.0, "tolerance must be positive");
    let numeric = finite_difference(f, theta, h);
    let scale = numeric.values().iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let floor = GRAD_CHECK_FLOOR_REL * scale + GRAD_CHECK_FLOOR_ABS;
    let relative_errors: Vec<f64> = analytic
        .values()
        .iter()
        .zip(numeric.values())
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + floor))
        .collect();
    let (worst_index, max_relative_error) =
        relative_errors
            .iter()
            .copied()
            .enumerate()
            .fold((None, 0.0_f64), |(wi, wm), (i, e)| {
                if e > wm || e.is_nan() {
                    (Some(i), e)
                } else {
                    (wi, wm)
                }
            });
    let passed = relative_errors.iter().all(|e| *e < tolerance);
    GradCheckReport {
        analytic,
        numeric,
        relative_errors,
        max_relative_error,
        worst_index,
        tolerance,
        passed,
    }
}

/// Gradient check for a function that can record itself on a tape.
///
/// `record` builds the scalar loss on the supplied tape from `theta`.
pub fn grad_check<R>(record: R, theta: &[f64], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    R: Fn(&mut Tape, &[f64]) -> Result<Var>,
{
    let mut tape = Tape::new(theta.len());
    let loss = record(&mut tape, theta)?;
    let analytic = tape.backward(loss)?;
    let eval = |t: &[f64]| {
        let mut tape = Tape::new(t.len());
        match record(&mut tape, t) {
            Ok(v) => tape.scalar(v),
            Err(_) => f64::NAN,
        }
    };
    Ok(grad_check_with(eval, analytic, theta, h, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar_param(tape: &mut Tape, theta: &[f64], i: usize) -> Var {
        tape.param(i, &theta[i..i + 1])
    }

    #[test]
    fn square_gradient() {
        let theta = [3.0];
        let mut t = Tape::new(1);
        let x = scalar_param(&mut t, &theta, 0);
        let y = t.square(x);
        assert_eq!(t.backward(y).unwrap().0, vec![6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new(1);
        let x = t.param(0, &[0.0]);
        let y = t.sigmoid(x);
        assert_eq!(t.backward(y).unwrap().0, vec![0.25]);
    }

    #[test]
    fn product_plus_term() {
        let theta = [2.0, 5.0];
        let mut t = Tape::new(2);
        let a = scalar_param(&mut t, &theta, 0);
        let b = scalar_param(&mut t, &theta, 1);
        let ab = t.mul(a, b);
        let y = t.add(ab, b);
        let g = t.backward(y).unwrap();
        assert_eq!(g.0, vec![5.0, 3.0]);
        let fd = finite_difference(|p| p[0] * p[1] + p[1], &theta, 1e-5);
        assert_abs_diff_eq!(fd.0[0], 5.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fd.0[1], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn non_scalar_backward_is_an_error() {
        let mut t = Tape::new(2);
        let x = t.param(0, &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_difference(|p| p[0] * p[0], &[3.0], 1e-5);
        assert_abs_diff_eq!(g.0[0], 6.0, epsilon = 1e-8);
        let g = finite_difference(|_| 4.2, &[1.0, -2.0, 0.5], 1e-3);
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    fn quadratic(tape: &mut Tape, theta: &[f64]) -> Result<Var> {
        let x = tape.param(0, theta);
        let c = tape.constant(vec![1.0, -2.0, 0.5]);
        let d = tape.sub(x, c);
        let s = tape.square(d);
        Ok(tape.sum(s))
    }

    #[test]
    fn grad_check_quadratic_passes() {
        let r = grad_check(quadratic, &[0.3, 0.7, -1.1], 1e-5, 1e-7).unwrap();
        assert!(r.passed, "max err {}", r.max_relative_error);
    }

    #[test]
    fn grad_check_detects_corruption() {
        let theta = [0.3, 0.7, -1.1];
        let mut t = Tape::new(3);
        let l = quadratic(&mut t, &theta).unwrap();
        let mut g = t.backward(l).unwrap();
        g.0[1] += 0.01;
        let eval = |p: &[f64]| {
            let mut t = Tape::new(3);
            let l = quadratic(&mut t, p).unwrap();
            t.scalar(l)
        };
        let r = grad_check_with(eval, g, &theta, 1e-5, 1e-5);
        assert!(!r.passed);
        assert_eq!(r.worst_index, Some(1));
    }

    /// Exercises every primitive in one expression.
    fn all_ops(tape: &mut Tape, theta: &[f64]) -> Result<Var> {
        let w = tape.param(0, &theta[0..6]);
        let x = tape.param(6, &theta[6..9]);
        let y = tape.matvec(w, x, 2);
        let s = tape.sigmoid(y);
        let th = tape.tanh(x);
        let a = tape.slice(th, 1, 2);
        let m = tape.mul(s, a);
        let d = tape.div(m, s);
        let n = tape.neg(d);
        let q = tape.one_minus(n);
        let cat = tape.concat(&[q, s, th]);
        let g = tape.gather(cat, &[0, 3, 3, 6]);
        let sq = tape.square(g);
        let c = tape.constant(vec![0.5, 1.5, -0.5, 2.0]);
        let dt = tape.dot(sq, c);
        let tot = tape.sum(cat);
        let sc = tape.scale(tot, 0.3);
        let r = tape.add(dt, sc);
        let back = tape.sub(r, sc);
        Ok(tape.add(back, sc))
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        let theta = [0.3, -0.2, 0.8, 0.1, -0.5, 0.4, 0.9, -0.3, 0.6];
        let r = grad_check(all_ops, &theta, 1e-6, 1e-6).unwrap();
        assert!(r.passed, "max err {} at {:?}", r.max_relative_error, r.worst_index);
    }

    #[test]
    fn replay_is_bit_exact_and_backward_deterministic() {
        let theta = [0.3, -0.2, 0.8, 0.1, -0.5, 0.4, 0.9, -0.3, 0.6];
        let mut t = Tape::new(theta.len());
        let l = all_ops(&mut t, &theta).unwrap();
        assert!(t.replay_matches(&theta));
        let g1 = t.backward(l).unwrap();
        let g2 = t.backward(l).unwrap();
        let bits = |g: &GradientVector| g.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&g1), bits(&g2));
    }

    #[test]
    fn stable_sigmoid_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    proptest! {
        #[test]
        fn gradient_is_linear(
            theta in prop::collection::vec(-2.0f64..2.0, 3),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = |tape: &mut Tape, th: &[f64]| {
                let x = tape.param(0, th);
                let s = tape.sigmoid(x);
                tape.dot(s, x)
            };
            let g = |tape: &mut Tape, th: &[f64]| {
                let x = tape.param(0, th);
                let t = tape.tanh(x);
                let sq = tape.square(t);
                tape.sum(sq)
            };
            let mut t = Tape::new(3);
            let fv = f(&mut t, &theta);
            let gf = t.backward(fv).unwrap();
            let mut t = Tape::new(3);
            let gv = g(&mut t, &theta);
            let gg = t.backward(gv).unwrap();
            let mut t = Tape::new(3);
            let fv = f(&mut t, &theta);
            let gv = g(&mut t, &theta);
            let fa = t.scale(fv, a);
            let gb = t.scale(gv, b);
            let comb = t.add(fa, gb);
            let gc = t.backward(comb).unwrap();
            for i in 0..3 {
                let expected = a * gf.0[i] + b * gg.0[i];
                prop_assert!((gc.0[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }
}
