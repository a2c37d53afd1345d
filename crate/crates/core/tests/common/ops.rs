//! Finite-difference checks for every tape operation on random shapes.

use std::sync::Arc;

use ctxgraph::autodiff::{grad_check, AutodiffError, Axis, GradCheckOptions, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REPS: u64 = 25;
pub const TOLERANCE: f64 = 1e-6;
pub const STEP: f64 = 1e-5;

type Loss = Box<dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, AutodiffError>>;

/// One randomized instance: parameter tensors and a scalar objective.
pub struct Case {
    pub params: Vec<Tensor<f64>>,
    pub loss: Loss,
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.5..1.5))
}

/// Values kept away from the kink at zero.
fn off_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| {
        let m = rng.gen_range(0.05..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Contracts an output with fixed random weights so every entry matters.
fn weighted(tape: &mut Tape<'_, f64>, out: Var, w: &Tensor<f64>) -> Result<Var, AutodiffError> {
    let w = tape.constant(w.clone());
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn segments(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Arc<[usize]> {
    // Every segment gets at least one row.
    let mut s: Vec<usize> = (0..rows).map(|r| if r < n { r } else { rng.gen_range(0..n) }).collect();
    for i in (1..s.len()).rev() {
        let j = rng.gen_range(0..=i);
        s.swap(i, j);
    }
    s.into()
}

macro_rules! case {
    ($params:expr, |$tape:ident, $p:ident| $body:expr) => {
        Case {
            params: $params,
            loss: Box::new(move |$tape: &mut Tape<'_, f64>, $p: &[Var]| $body),
        }
    };
}

pub const OPS: [&str; 25] = [
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "add_row",
    "mul_row",
    "scale",
    "scale_by",
    "concat_rows",
    "concat_cols",
    "slice_cols",
    "row_softmax",
    "segment_softmax",
    "sigmoid",
    "leaky_relu",
    "elu",
    "mean_rows",
    "gather_rows",
    "scatter_add_rows",
    "group_sum",
    "group_scale",
    "mul_col",
    "sum",
    "bce_loss",
];

pub fn make_case(op: &str, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..6);
    let n = rng.gen_range(1..6);
    let k = rng.gen_range(1..6);
    let a = rand_t(&mut rng, m, n);
    let w_mn = rand_t(&mut rng, m, n);
    match op {
        "matmul" => {
            let b = rand_t(&mut rng, n, k);
            let w = rand_t(&mut rng, m, k);
            case!(vec![a, b], |t, p| {
                let o = t.matmul(p[0], p[1])?;
                weighted(t, o, &w)
            })
        }
        "transpose" => {
            let w = w_mn.transpose();
            case!(vec![a], |t, p| {
                let o = t.transpose(p[0])?;
                weighted(t, o, &w)
            })
        }
        "add" | "sub" | "mul" => {
            let b = rand_t(&mut rng, m, n);
            let op = op.to_string();
            case!(vec![a, b], |t, p| {
                let o = match op.as_str() {
                    "add" => t.add(p[0], p[1])?,
                    "sub" => t.sub(p[0], p[1])?,
                    _ => t.mul(p[0], p[1])?,
                };
                weighted(t, o, &w_mn)
            })
        }
        "add_row" | "mul_row" => {
            let row = rand_t(&mut rng, 1, n);
            let add = op == "add_row";
            case!(vec![a, row], |t, p| {
                let o = if add {
                    t.add_row(p[0], p[1])?
                } else {
                    t.mul_row(p[0], p[1])?
                };
                weighted(t, o, &w_mn)
            })
        }
        "scale" => {
            let c = rng.gen_range(-2.0..2.0);
            case!(vec![a], |t, p| {
                let o = t.scale(p[0], c)?;
                weighted(t, o, &w_mn)
            })
        }
        "scale_by" => {
            let s = rand_t(&mut rng, 1, 1);
            case!(vec![a, s], |t, p| {
                let o = t.scale_by(p[0], p[1])?;
                weighted(t, o, &w_mn)
            })
        }
        "concat_rows" => {
            let b = rand_t(&mut rng, k, n);
            let w = rand_t(&mut rng, m + k, n);
            case!(vec![a, b], |t, p| {
                let o = t.concat(&[p[0], p[1]], Axis::Rows)?;
                weighted(t, o, &w)
            })
        }
        "concat_cols" => {
            let b = rand_t(&mut rng, m, k);
            let w = rand_t(&mut rng, m, n + k);
            case!(vec![a, b], |t, p| {
                let o = t.concat(&[p[0], p[1]], Axis::Cols)?;
                weighted(t, o, &w)
            })
        }
        "slice_cols" => {
            let start = rng.gen_range(0..n);
            let len = rng.gen_range(1..=n - start);
            let w = rand_t(&mut rng, m, len);
            case!(vec![a], |t, p| {
                let o = t.slice_cols(p[0], start, len)?;
                weighted(t, o, &w)
            })
        }
        "row_softmax" => case!(vec![a], |t, p| {
            let o = t.row_softmax(p[0])?;
            weighted(t, o, &w_mn)
        }),
        "segment_softmax" => {
            let ns = rng.gen_range(1..=m);
            let seg = segments(&mut rng, m, ns);
            case!(vec![a], |t, p| {
                let o = t.segment_softmax(p[0], seg.clone(), ns)?;
                weighted(t, o, &w_mn)
            })
        }
        "sigmoid" => case!(vec![a], |t, p| {
            let o = t.sigmoid(p[0])?;
            weighted(t, o, &w_mn)
        }),
        "leaky_relu" => {
            let a = off_zero(&mut rng, m, n);
            case!(vec![a], |t, p| {
                let o = t.leaky_relu(p[0], 0.2)?;
                weighted(t, o, &w_mn)
            })
        }
        "elu" => {
            let a = off_zero(&mut rng, m, n);
            case!(vec![a], |t, p| {
                let o = t.elu(p[0], 1.0)?;
                weighted(t, o, &w_mn)
            })
        }
        "mean_rows" => {
            let ns = rng.gen_range(1..=m);
            let seg = segments(&mut rng, m, ns);
            let w = rand_t(&mut rng, ns, n);
            case!(vec![a], |t, p| {
                let o = t.mean_rows(p[0], seg.clone(), ns)?;
                weighted(t, o, &w)
            })
        }
        "gather_rows" => {
            let idx: Arc<[usize]> = (0..k + 2).map(|_| rng.gen_range(0..m)).collect();
            let w = rand_t(&mut rng, idx.len(), n);
            case!(vec![a], |t, p| {
                let o = t.gather_rows(p[0], idx.clone())?;
                weighted(t, o, &w)
            })
        }
        "scatter_add_rows" => {
            let rows = k;
            let idx: Arc<[usize]> = (0..m).map(|_| rng.gen_range(0..rows)).collect();
            let w = rand_t(&mut rng, rows, n);
            case!(vec![a], |t, p| {
                let o = t.scatter_add_rows(p[0], idx.clone(), rows)?;
                weighted(t, o, &w)
            })
        }
        "group_sum" => {
            let a = rand_t(&mut rng, m, n * k);
            let w = rand_t(&mut rng, m, k);
            case!(vec![a], |t, p| {
                let o = t.group_sum(p[0], k)?;
                weighted(t, o, &w)
            })
        }
        "group_scale" => {
            let a = rand_t(&mut rng, m, n * k);
            let g = rand_t(&mut rng, m, k);
            let w = rand_t(&mut rng, m, n * k);
            case!(vec![a, g], |t, p| {
                let o = t.group_scale(p[0], p[1])?;
                weighted(t, o, &w)
            })
        }
        "mul_col" => {
            let c = rand_t(&mut rng, m, 1);
            case!(vec![a, c], |t, p| {
                let o = t.mul_col(p[0], p[1])?;
                weighted(t, o, &w_mn)
            })
        }
        "sum" => case!(vec![a], |t, p| t.sum(p[0])),
        "bce_loss" => {
            let pred = Tensor::from_fn(m, 1, |_, _| rng.gen_range(0.05..0.95));
            let labels: Vec<f64> = (0..m).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
            case!(vec![pred], |t, p| t.bce_loss(p[0], &labels, 1e-7))
        }
        other => panic!("unknown op {other}"),
    }
}

/// Worst relative error for `op` over all repetitions.
pub fn check_op(op: &str) -> Result<f64, AutodiffError> {
    let mut worst = 0.0f64;
    for rep in 0..REPS {
        let mut case = make_case(op, 1000 + rep);
        let opts = GradCheckOptions {
            h: STEP,
            max_coords: usize::MAX,
            seed: rep,
        };
        let r = grad_check(&case.loss, &mut case.params, opts)?;
        worst = worst.max(r.max_rel_error);
    }
    Ok(worst)
}
