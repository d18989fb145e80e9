//! Tape recording of the network and of the per-example cost.

use rayon::prelude::*;

use super::{check_past, PipelineConfig, PipelineParams, WindowExample, RATE_SCALE};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Nodes of one recorded example.
#[derive(Debug, Clone)]
pub struct ExampleNodes {
    /// Rate rows, one per measurement period.
    pub rates: Vec<Var>,
    /// Flux rows sampled every `p_t` substeps.
    pub sampled_fluxes: Vec<Var>,
    pub data_term: Var,
    pub regularizer: Var,
    /// `data_term + reg_weight * regularizer`
    pub loss: Var,
}

/// Record the network and the cost of `example` on `tape`, reading the
/// parameters from `theta` (the flat layout of `params`).
pub fn record_example(
    tape: &mut Tape,
    config: &PipelineConfig,
    params: &PipelineParams,
    theta: &[f64],
    example: &WindowExample,
) -> Result<ExampleNodes> {
    check_past(config, &example.past)?;
    if example.target.len() != config.n_rows() {
        return Err(Error::Dimension {
            context: "target rows",
            expected: config.n_rows(),
            actual: example.target.len(),
        });
    }
    let n_i = config.n_interfaces();
    let n_s = n_i - 1;
    let (n_p, n_f) = (config.n_past, config.n_future);
    let p_t = config.trm.p_t;

    let (mlp1, off) = params.mlp1.bind(tape, theta, 0);
    let (lstm, off) = params.extractor.bind(tape, theta, off);
    let (mlp2, off) = params.mlp2.bind(tape, theta, off);
    let (srnn, off) = params.predictor.bind(tape, theta, off);
    debug_assert_eq!(off, theta.len());

    // extractor
    let first = tape.constant(example.past[0].clone());
    let init = mlp1.record(tape, first);
    let mut c = tape.slice(init, 0, n_i);
    let mut h = tape.slice(init, n_i, n_i);
    let mut rates = Vec::with_capacity(n_p + n_f);
    for (k, row) in example.past.iter().enumerate() {
        let x = if k == 0 { first } else { tape.constant(row.clone()) };
        let (c2, h2) = lstm.record(tape, c, h, x);
        rates.push(tape.scale(h2, RATE_SCALE));
        c = c2;
        h = h2;
    }

    // predictor
    let zeros = tape.constant(vec![0.0; params.predictor.input_size()]);
    let mut s = h;
    for _ in 0..n_f {
        let (s2, y) = srnn.record(tape, s, zeros);
        rates.push(tape.scale(y, RATE_SCALE));
        s = s2;
    }

    // TRM rollout, rates held constant over each measurement period
    let mut u = mlp2.record(tape, first);
    let one = tape.constant(vec![1.0]);
    let zero = tape.constant(vec![0.0]);
    let n_sub = config.n_substeps();
    let mut sampled = Vec::with_capacity(n_p + n_f);
    for k in 0..n_sub {
        let rate = rates[k / p_t];
        let left = tape.concat(&[one, u]);
        let right = tape.concat(&[u, zero]);
        let free = tape.one_minus(right);
        let kernel = tape.mul(left, free);
        let flux = tape.mul(rate, kernel);
        if k % p_t == 0 {
            sampled.push(flux);
        }
        if k + 1 < n_sub {
            let inflow = tape.slice(flux, 0, n_s);
            let outflow = tape.slice(flux, 1, n_s);
            let gained = tape.add(u, inflow);
            u = tape.sub(gained, outflow);
        }
    }

    // data terms on observed interfaces
    let observed = config.geometry.observed();
    let mut past_terms = Vec::with_capacity(n_p);
    let mut future_terms = Vec::with_capacity(n_f);
    for (m, (&flux, target)) in sampled.iter().zip(&example.target).enumerate() {
        let at_obs = tape.gather(flux, &observed);
        let t = tape.constant(target.clone());
        let diff = tape.sub(at_obs, t);
        let sq = tape.square(diff);
        let e = tape.sum(sq);
        if m < n_p {
            past_terms.push(e);
        } else {
            future_terms.push(e);
        }
    }
    let past_sum = sum_scalars(tape, &past_terms);
    let future_sum = sum_scalars(tape, &future_terms);
    let past_mean = tape.scale(past_sum, 1.0 / n_p as f64);
    let future_mean = tape.scale(future_sum, 1.0 / n_f as f64);
    let data_term = tape.add(past_mean, future_mean);

    // spatial rate variation
    let mut reg_terms = Vec::with_capacity(rates.len());
    for &r in &rates {
        let hi = tape.slice(r, 1, n_s);
        let lo = tape.slice(r, 0, n_s);
        let d = tape.sub(hi, lo);
        let sq = tape.square(d);
        reg_terms.push(tape.sum(sq));
    }
    let reg_sum = sum_scalars(tape, &reg_terms);
    let regularizer = tape.scale(reg_sum, 1.0 / (n_s as f64 * rates.len() as f64));
    let weighted = tape.scale(regularizer, config.reg_weight);
    let loss = tape.add(data_term, weighted);

    Ok(ExampleNodes {
        rates,
        sampled_fluxes: sampled,
        data_term,
        regularizer,
        loss,
    })
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Var {
    let v = tape.concat(terms);
    tape.sum(v)
}

fn example_loss(
    config: &PipelineConfig,
    params: &PipelineParams,
    theta: &[f64],
    example: &WindowExample,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mut tape = Tape::new(theta.len());
    let nodes = record_example(&mut tape, config, params, theta, example)?;
    let value = tape.scalar(nodes.loss);
    let grad = if with_grad {
        Some(tape.backward(nodes.loss)?.0)
    } else {
        None
    };
    Ok((value, grad))
}

/// Mean loss over the batch, evaluated in parallel; reduction is sequential
/// in example order so the result does not depend on thread scheduling.
pub(super) fn batch_loss(
    config: &PipelineConfig,
    params: &PipelineParams,
    examples: &[WindowExample],
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if examples.is_empty() {
        return Err(Error::Data("loss over an empty batch".into()));
    }
    params.check_shape(config)?;
    let theta = params.to_flat();
    let per_example: Vec<(f64, Option<Vec<f64>>)> = examples
        .par_iter()
        .map(|ex| example_loss(config, params, &theta, ex, with_grad))
        .collect::<Result<_>>()?;
    let inv = 1.0 / examples.len() as f64;
    let mut total = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; theta.len()]);
    for (value, g) in per_example {
        total += value;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += gi;
            }
        }
    }
    if let Some(acc) = grad.as_mut() {
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Ok((total * inv, grad))
}
