//! Finite-difference verification of the backward pass.
//!
//! Central differences over leaf coordinates are the independent oracle
//! for every adjoint rule: only the forward pass is shared between the
//! two gradient routes. Kept in the library so the acceptance checks and
//! unit tests run the identical battery.
//!
//! `stop_gradient` is the one primitive finite differences cannot probe
//! (its whole point is to disagree with the true derivative), so it gets
//! exact assertions instead: forward bitwise identity, backward-zero, and
//! the frozen-factor product rule.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::rng::{self, Stream};
use crate::tensor::{backward, Tape, Tensor};
use crate::Result;

/// Relative error with a small absolute floor so 0-vs-0 compares equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = math::abs(a).max(math::abs(b)).max(1e-6);
    math::abs(a - b) / scale
}

/// Central-difference gradient of `f` w.r.t. every coordinate of every leaf.
pub fn central_difference<F>(f: &mut F, leaves: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut work: Vec<Vec<f64>> = leaves.to_vec();
    let mut grads = Vec::with_capacity(leaves.len());
    for li in 0..leaves.len() {
        let mut g = vec![0.0; leaves[li].len()];
        for ci in 0..leaves[li].len() {
            let orig = work[li][ci];
            work[li][ci] = orig + eps;
            let fp = f(&work);
            work[li][ci] = orig - eps;
            let fm = f(&work);
            work[li][ci] = orig;
            g[ci] = (fp - fm) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Compare backward gradients against central differences for a graph
/// builder; returns the maximum relative error over all coordinates.
///
/// `build` receives leaf tensors registered on a fresh tape and returns
/// the scalar loss. The builder must describe the same function on every
/// call (no data-dependent graph decisions).
pub fn check_graph<B>(
    shapes: &[(usize, usize)],
    values: &[Vec<f64>],
    build: B,
    eps: f64,
) -> Result<f64>
where
    B: Fn(&[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = shapes
        .iter()
        .zip(values)
        .map(|(&(r, c), v)| tape.leaf(r, c, v))
        .collect::<Result<_>>()?;
    let loss = build(&leaves)?;
    let grads = backward(&loss)?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| grads.wrt(l)).collect();

    let mut forward_only = |vals: &[Vec<f64>]| -> f64 {
        let consts: Vec<Tensor> = shapes
            .iter()
            .zip(vals)
            .map(|(&(r, c), v)| Tensor::constant(r, c, v.clone()).expect("shape"))
            .collect();
        build(&consts).expect("forward").item().expect("scalar")
    };
    let numeric = central_difference(&mut forward_only, values, eps);

    let mut worst = 0.0_f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            worst = worst.max(rel_err(av, nv));
        }
    }
    Ok(worst)
}

/// Outcome of a gradient-check battery.
#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub graphs: usize,
    pub max_rel_err: f64,
}

fn rand_values(rng: &mut Stream, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Targeted finite-difference check of every primitive adjoint rule,
/// plus the exact stop-gradient assertions.
///
/// Inputs are kept away from the relu/clamp kinks so the central
/// difference is valid at the probe step.
pub fn check_primitives(eps: f64, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::stream(seed, 0);
    let mut worst = 0.0_f64;
    let mut graphs = 0;

    let a34 = rand_values(&mut rng, 12);
    let b34 = rand_values(&mut rng, 12);
    let row = rand_values(&mut rng, 4);
    let m43 = rand_values(&mut rng, 12);

    {
        let mut run = |shapes: &[(usize, usize)],
                       values: &[Vec<f64>],
                       build: &dyn Fn(&[Tensor]) -> Result<Tensor>|
         -> Result<()> {
            worst = worst.max(check_graph(shapes, values, build, eps)?);
            graphs += 1;
            Ok(())
        };

        let sh2 = [(3, 4), (3, 4)];
        let shrow = [(3, 4), (1, 4)];
        let shmm = [(3, 4), (4, 3)];
        let sh1 = [(3, 4)];
        let v2 = [a34.clone(), b34.clone()];
        let vrow = [a34.clone(), row.clone()];
        let vmm = [a34.clone(), m43.clone()];
        let v1 = [a34.clone()];

        run(&sh2, &v2, &|l| l[0].add(&l[1]).map(|t| t.mean_all()))?;
        run(&sh2, &v2, &|l| l[0].sub(&l[1]).map(|t| t.mean_all()))?;
        run(&sh2, &v2, &|l| l[0].mul(&l[1]).map(|t| t.mean_all()))?;
        run(&shrow, &vrow, &|l| l[0].add(&l[1]).map(|t| t.mean_all()))?;
        run(&shrow, &vrow, &|l| l[0].mul(&l[1]).map(|t| t.mean_all()))?;
        run(&shmm, &vmm, &|l| l[0].matmul(&l[1]).map(|t| t.mean_all()))?;
        run(&sh1, &v1, &|l| Ok(l[0].exp().mean_all()))?;
        // log over a strictly positive composite
        run(&sh1, &v1, &|l| {
            Ok(l[0].softplus().add_scalar(0.2).log().mean_all())
        })?;
        run(&sh1, &v1, &|l| Ok(l[0].tanh().mean_all()))?;
        // relu with inputs bounded away from the kink
        let relu_in: Vec<f64> = a34
            .iter()
            .map(|&v| if math::abs(v) < 0.1 { v + 0.2 } else { v })
            .collect();
        run(&sh1, &[relu_in], &|l| Ok(l[0].relu().mean_all()))?;
        run(&sh1, &v1, &|l| Ok(l[0].softplus().mean_all()))?;
        run(&sh1, &v1, &|l| Ok(l[0].neg().mean_all()))?;
        run(&sh1, &v1, &|l| Ok(l[0].scale(-1.7).mean_all()))?;
        run(&sh1, &v1, &|l| Ok(l[0].add_scalar(2.5).exp().mean_all()))?;
        run(&sh1, &v1, &|l| Ok(l[0].sum_all()))?;
        run(&sh1, &v1, &|l| {
            let s = l[0].sum_cols();
            s.mul(&s).map(|t| t.mean_all())
        })?;
        run(&sh1, &v1, &|l| {
            let s = l[0].sum_rows();
            s.mul(&s).map(|t| t.mean_all())
        })?;
        run(&sh1, &v1, &|l| Ok(l[0].mean_all()))?;
        run(&sh2, &v2, &|l| l[0].hcat(&l[1]).map(|t| t.exp().mean_all()))?;
        run(&sh1, &v1, &|l| l[0].slice_cols(1, 3).map(|t| t.exp().mean_all()))?;
        // clamp with inputs away from both boundaries
        let clamp_in: Vec<f64> = a34
            .iter()
            .map(|&v| {
                if math::abs(math::abs(v) - 1.0) < 0.1 {
                    v * 0.5
                } else {
                    v
                }
            })
            .collect();
        run(&sh1, &[clamp_in], &|l| Ok(l[0].clamp(-1.0, 1.0).mean_all()))?;
        // composite mixing reuse, matmul and nonlinearities
        run(&shmm, &vmm, &|l| {
            l[0].matmul(&l[1])?
                .tanh()
                .sum_rows()
                .mul(&l[0].sum_rows())
                .map(|t| t.mean_all())
        })?;
    }

    // Exact stop-gradient semantics: forward identity, backward zero,
    // frozen-factor product rule d/dx sum(x ⊙ sg(x)) = x.
    let tape = Tape::new();
    let x = tape.leaf(3, 4, &a34)?;
    let sg = x.stop_gradient();
    if sg.values() != x.values() {
        worst = worst.max(1.0);
    }
    let g0 = backward(&sg.sum_all())?.wrt(&x);
    if g0.iter().any(|&v| v != 0.0) {
        worst = worst.max(1.0);
    }
    let tape = Tape::new();
    let x = tape.leaf(3, 4, &a34)?;
    let g1 = backward(&x.mul(&x.stop_gradient())?.sum_all())?.wrt(&x);
    for (gv, &xv) in g1.iter().zip(&a34) {
        worst = worst.max(rel_err(*gv, xv));
    }
    graphs += 1;

    Ok(CheckReport {
        graphs,
        max_rel_err: worst,
    })
}

#[derive(Clone, Copy)]
enum Step {
    Add(usize),
    Sub(usize),
    Mul(usize),
    Tanh,
    Exp,
    Softplus,
    Neg,
    Scale(f64),
    Relu(f64),
    LogShift,
}

/// Randomized composite graphs: chains of primitives over 2–3 leaves,
/// depth-limited, magnitudes kept tame.
///
/// All graph decisions (op choice, rescale factors, relu shifts) are
/// fixed during a dry run on the unperturbed values, so the finite
/// difference probes a single well-defined function.
pub fn check_random_graphs(
    graphs: usize,
    max_depth: usize,
    eps: f64,
    seed: u64,
) -> Result<CheckReport> {
    let mut worst = 0.0_f64;
    for gi in 0..graphs {
        let mut rng = rng::stream(seed, 100 + gi as u64);
        let n_leaves = rng.random_range(2..=3usize);
        let rows = rng.random_range(2..=4usize);
        let cols = rng.random_range(2..=4usize);
        let shapes: Vec<(usize, usize)> = (0..n_leaves).map(|_| (rows, cols)).collect();
        let values: Vec<Vec<f64>> = shapes
            .iter()
            .map(|&(r, c)| rand_values(&mut rng, r * c))
            .collect();
        let depth = rng.random_range(2..=max_depth);

        // Dry run: pick ops and freeze every data-dependent decision.
        let mut steps: Vec<Step> = Vec::with_capacity(depth + 4);
        {
            let mut cur: Vec<f64> = values[0].clone();
            for _ in 0..depth {
                let code = rng.random_range(0..10u32);
                let pick = rng.random_range(0..n_leaves);
                let step = match code {
                    0 => Step::Add(pick),
                    1 => Step::Sub(pick),
                    2 => Step::Mul(pick),
                    3 => Step::Tanh,
                    4 => Step::Exp,
                    5 => Step::Softplus,
                    6 => Step::Neg,
                    7 => Step::Scale(0.7),
                    8 => {
                        // shift so every input clears the relu kink by a margin
                        let mut shift = 0.35;
                        for _ in 0..50 {
                            if cur.iter().all(|&v| math::abs(v + shift) > 1e-2) {
                                break;
                            }
                            shift += 3.3e-3;
                        }
                        Step::Relu(shift)
                    }
                    _ => Step::LogShift,
                };
                cur = apply_step(&cur, &values, step);
                let maxabs = cur.iter().fold(0.0_f64, |m, &v| m.max(math::abs(v)));
                steps.push(step);
                if maxabs > 3.0 {
                    let k = 1.0 / maxabs;
                    steps.push(Step::Scale(k));
                    cur = cur.iter().map(|&v| k * v).collect();
                }
            }
        }

        let build = |leaves: &[Tensor]| -> Result<Tensor> {
            let mut cur = leaves[0].clone();
            for &step in &steps {
                cur = match step {
                    Step::Add(p) => cur.add(&leaves[p])?,
                    Step::Sub(p) => cur.sub(&leaves[p])?,
                    Step::Mul(p) => cur.mul(&leaves[p])?,
                    Step::Tanh => cur.tanh(),
                    Step::Exp => cur.exp(),
                    Step::Softplus => cur.softplus(),
                    Step::Neg => cur.neg(),
                    Step::Scale(k) => cur.scale(k),
                    Step::Relu(shift) => cur.add_scalar(shift).relu(),
                    Step::LogShift => cur.softplus().add_scalar(0.2).log(),
                };
            }
            Ok(cur.mean_all())
        };
        worst = worst.max(check_graph(&shapes, &values, build, eps)?);
    }
    Ok(CheckReport {
        graphs,
        max_rel_err: worst,
    })
}

fn apply_step(cur: &[f64], leaves: &[Vec<f64>], step: Step) -> Vec<f64> {
    match step {
        Step::Add(p) => cur.iter().zip(&leaves[p]).map(|(&a, &b)| a + b).collect(),
        Step::Sub(p) => cur.iter().zip(&leaves[p]).map(|(&a, &b)| a - b).collect(),
        Step::Mul(p) => cur.iter().zip(&leaves[p]).map(|(&a, &b)| a * b).collect(),
        Step::Tanh => cur.iter().map(|&v| math::tanh(v)).collect(),
        Step::Exp => cur.iter().map(|&v| math::exp(v)).collect(),
        Step::Softplus => cur.iter().map(|&v| math::softplus(v)).collect(),
        Step::Neg => cur.iter().map(|&v| -v).collect(),
        Step::Scale(k) => cur.iter().map(|&v| k * v).collect(),
        Step::Relu(shift) => cur
            .iter()
            .map(|&v| if v + shift > 0.0 { v + shift } else { 0.0 })
            .collect(),
        Step::LogShift => cur
            .iter()
            .map(|&v| math::ln(math::softplus(v) + 0.2))
            .collect(),
    }
}
