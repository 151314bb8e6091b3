//! Derivative-free compass (pattern) search on a box, shared by GP
//! hyperparameter fitting and acquisition maximization.

/// Maximize `f` on the box `[lower, upper]` starting from `start`.
///
/// Classic compass search: probe +/- step along every axis, move to the best
/// improving probe, expand the step on success, shrink on failure. Stops when
/// the relative step falls below `min_step` or `max_evals` evaluations are
/// spent. Deterministic. Points where `f` is `-inf` are treated as
/// out-of-set and never accepted.
pub(crate) fn compass_max<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    init_step: f64,
    min_step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let widths: Vec<f64> = lower.iter().zip(upper).map(|(lo, hi)| hi - lo).collect();
    let mut x = start.to_vec();
    let mut fx = f(&x);
    let mut evals = 1usize;
    let mut frac = init_step;

    while frac >= min_step && evals < max_evals {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for j in 0..d {
            for sign in [1.0, -1.0] {
                if evals >= max_evals {
                    break;
                }
                let mut probe = x.clone();
                probe[j] = (probe[j] + sign * frac * widths[j]).clamp(lower[j], upper[j]);
                if probe[j] == x[j] {
                    continue;
                }
                let fp = f(&probe);
                evals += 1;
                if fp > fx && best.as_ref().map_or(true, |(_, b)| fp > *b) {
                    best = Some((probe, fp));
                }
            }
        }
        match best {
            Some((probe, fp)) => {
                x = probe;
                fx = fp;
                frac = (frac * 2.0).min(0.5);
            }
            None => frac *= 0.5,
        }
    }
    (x, fx)
}
