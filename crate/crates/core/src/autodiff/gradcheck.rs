//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Total coordinates checked across all tensors.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst: Option<Worst>,
    /// Coordinates checked and worst error, per tensor.
    pub per_tensor: Vec<(usize, f64)>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-8, a.abs() + n.abs())
}

fn value_of<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.shape() != [1, 1] {
        return Err(AutodiffError::NonScalarLoss(v.shape()));
    }
    let value = v.item();
    if !value.is_finite() {
        return Err(AutodiffError::NonFiniteObjective(format!("{value}")));
    }
    Ok(value)
}

fn analytic<F>(f: &F, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>, AutodiffError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&x, p)| {
            tape.grad(x)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect())
}

/// Splits the coordinate budget: small tensors are checked in full, the rest
/// share what remains evenly.
fn allocate(lens: &[usize], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.sort_by_key(|&i| (lens[i], i));
    let mut take = vec![0; lens.len()];
    let mut left = budget;
    for (k, &i) in order.iter().enumerate() {
        let share = left / (order.len() - k);
        take[i] = lens[i].min(share.max(1)).min(left);
        left -= take[i];
    }
    take
}

/// Compares the tape gradient of `f` with central differences of step `h`.
pub fn grad_check<F>(f: F, params: &mut [Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    value_of(&f, params)?;
    let grads = analytic(&f, params)?;
    let lens: Vec<usize> = params.iter().map(Tensor::len).collect();
    let take = allocate(&lens, opts.max_coords);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
        per_tensor: vec![(0, 0.0); params.len()],
    };
    for t in 0..params.len() {
        let mut idx: Vec<usize> = if take[t] == lens[t] {
            (0..lens[t]).collect()
        } else {
            sample(&mut rng, lens[t], take[t]).into_vec()
        };
        idx.sort_unstable();
        for i in idx {
            let orig = params[t].data()[i];
            params[t].data_mut()[i] = orig + opts.h;
            let plus = value_of(&f, params);
            params[t].data_mut()[i] = orig - opts.h;
            let minus = value_of(&f, params);
            params[t].data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            let a = grads[t].data()[i];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            let slot = &mut report.per_tensor[t];
            slot.0 += 1;
            slot.1 = slot.1.max(err);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(Worst {
                    tensor: t,
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
