use rand::seq::SliceRandom;

use super::{AdError, BoundParams, ParamStore, Tape, Var};
use crate::stream;

/// Outcome of one finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub worst_rel_err: f64,
    /// Parameter name and flat coordinate of the worst error.
    pub worst_coord: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates skipped because the ±step evaluations landed on
    /// different sides of a non-smooth point (relu kink, max switch).
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel_err < tol
    }
}

/// Denominator floor: finite differences at step ~1e-4 carry O(step²)
/// truncation error, so coordinates with near-zero gradients would
/// otherwise dominate the relative error for no informative reason.
const REL_FLOOR: f64 = 1e-2;

/// Compares analytic gradients against central finite differences over
/// at most `max_coords_per_param` sampled coordinates per parameter.
///
/// `build` must record a deterministic scalar loss (dropout disabled).
pub fn grad_check<F>(
    store: &ParamStore,
    mut build: F,
    step: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, AdError>
where
    F: FnMut(&mut Tape, &BoundParams) -> Result<Var, AdError>,
{
    // analytic gradients at the base point
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    tape.backward(loss)?;
    let analytic: Vec<Option<Vec<f64>>> = bound
        .vars()
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()))
        .collect();

    let mut work = store.clone();
    let mut rng = stream(seed, "grad-check");
    let mut report = GradCheckReport {
        worst_rel_err: 0.0,
        worst_coord: None,
        checked: 0,
        excluded: 0,
    };

    let eval = |work: &ParamStore, build: &mut F| -> Result<(f64, u64), AdError> {
        let mut tape = Tape::new();
        let bound = work.bind(&mut tape);
        let loss = build(&mut tape, &bound)?;
        Ok((tape.scalar_value(loss), tape.nonsmooth_signature()))
    };

    for p in 0..store.len() {
        let id = super::ParamId(p);
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(max_coords_per_param);
            all
        };
        for c in coords {
            let orig = work.value(id)[c];
            work.value_mut(id)[c] = orig + step;
            let (f_plus, sig_plus) = eval(&work, &mut build)?;
            work.value_mut(id)[c] = orig - step;
            let (f_minus, sig_minus) = eval(&work, &mut build)?;
            work.value_mut(id)[c] = orig;

            if sig_plus != sig_minus {
                report.excluded += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[p].as_ref().map_or(0.0, |g| g[c]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.worst_rel_err {
                report.worst_rel_err = rel;
                report.worst_coord = Some((store.name(id).to_string(), c));
            }
        }
    }
    Ok(report)
}
