//! Finite-difference verification of tape gradients.
//!
//! The harness compares [`Tape::backward`] against central differences
//! `(f(x + ε) − f(x − ε)) / 2ε`, one scalar coordinate at a time, and reports
//! the worst relative error `|a − n| / max(|a|, |n|, 1e-8)`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    /// `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// When set, coordinates whose one-sided differences disagree by more
    /// than this fraction are treated as non-differentiable points (see
    /// [`FdReport::kinks`]).
    pub kink_threshold: Option<f64>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            eps: 1e-5,
            max_coords_per_param: None,
            seed: 0,
            kink_threshold: None,
        }
    }
}

/// The coordinate with the largest disagreement.
#[derive(Clone, Debug, PartialEq)]
pub struct FdWorst {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates excluded from `max_rel_error` because a kink of the loss
    /// lies within `±eps`. A coordinate only counts as a kink when the two
    /// one-sided differences disagree and the analytic gradient matches one
    /// of them, so a wrong gradient is never absorbed here.
    pub kinks: usize,
    pub worst: Option<FdWorst>,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks every coordinate of every parameter with step `eps`.
///
/// `loss` must build a scalar on the given tape from the current parameter
/// values and be deterministic. Gradients in `params` are reset first and
/// hold the analytic gradient afterwards.
pub fn finite_diff_check<F>(loss: F, params: &mut ParamStore, eps: f64) -> Result<FdReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    finite_diff_check_with(
        loss,
        params,
        &FdOptions {
            eps,
            ..FdOptions::default()
        },
    )
}

pub fn finite_diff_check_with<F>(loss: F, params: &mut ParamStore, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let root = loss(params, &mut tape)?;
    tape.backward(root, params)?;
    let center = tape.value(root).item()?;
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = loss(store, &mut tape)?;
        tape.value(v).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut report = FdReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        kinks: 0,
        worst: None,
    };
    for name in names {
        let numel = params.value(&name)?.shape().numel();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < numel => {
                let mut picked = index::sample(&mut rng, numel, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..numel).collect(),
        };
        for i in coords {
            let analytic = params.grad(&name)?.data()[i];
            let original = params.value(&name)?.data()[i];
            set_coord(params, &name, i, original + opts.eps)?;
            let up = eval(params)?;
            set_coord(params, &name, i, original - opts.eps)?;
            let down = eval(params)?;
            set_coord(params, &name, i, original)?;
            let numeric = (up - down) / (2.0 * opts.eps);
            report.coords_checked += 1;
            if let Some(t) = opts.kink_threshold {
                if is_kink(analytic, (up - center) / opts.eps, (center - down) / opts.eps, t) {
                    report.kinks += 1;
                    continue;
                }
            }
            let err = relative_error(analytic, numeric);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(FdWorst {
                    param: name.clone(),
                    index: i,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

fn is_kink(analytic: f64, right: f64, left: f64, threshold: f64) -> bool {
    let scale = right.abs().max(left.abs()).max(REL_ERROR_FLOOR);
    let disagree = (right - left).abs() > threshold * scale;
    let one_sided = (analytic - left).abs().min((analytic - right).abs()) <= threshold * scale;
    disagree && one_sided
}

fn set_coord(params: &mut ParamStore, name: &str, i: usize, v: f64) -> Result<()> {
    let p = params.get_mut(name)?;
    let (value, _) = p.value_and_grad_mut();
    value[i] = v;
    Ok(())
}
