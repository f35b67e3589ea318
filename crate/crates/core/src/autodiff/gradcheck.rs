use rand::seq::index::sample;

use super::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates sampled when the model has more than this many scalars.
    pub max_coords: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { h: 1e-5, max_coords: 200, floor: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink.
    pub skipped: usize,
}

fn evaluate<F>(params: &ParamStore, f: &F) -> Result<(f64, Vec<bool>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let loss = f(&tape, &vars)?;
    Ok((loss.item(), tape.kink_signature()))
}

/// Pins the higher-ranked signature expected by [`gradcheck`] on a closure.
pub fn objective<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    f
}

/// Compares reverse-mode gradients of `f` with central differences.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`. Perturbations that
/// change the on/off pattern of any rectifier are skipped, so points sitting
/// on a kink never count.
pub fn gradcheck<F>(params: &ParamStore, f: F, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let loss = f(&tape, &vars)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.of(*v)).collect();
    drop(tape);

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (i, t) in params.tensors().iter().enumerate() {
        coords.extend((0..t.len()).map(|j| (i, j)));
    }
    if coords.len() > opts.max_coords {
        let mut rng = rng_from_seed(opts.seed);
        let mut picked = sample(&mut rng, coords.len(), opts.max_coords).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|k| coords[k]).collect();
    }

    let mut work = params.clone();
    let mut report = GradcheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for (i, j) in coords {
        let x0 = work.tensors()[i].values[j];
        work.tensors_mut()[i].values[j] = x0 + opts.h;
        let (lp, sp) = evaluate(&work, &f)?;
        work.tensors_mut()[i].values[j] = x0 - opts.h;
        let (lm, sm) = evaluate(&work, &f)?;
        work.tensors_mut()[i].values[j] = x0;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * opts.h);
        let a = analytic[i][j];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
