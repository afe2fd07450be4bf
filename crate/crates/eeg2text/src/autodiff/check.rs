//! Finite-difference gradient checking.
//!
//! Central differences in f64: perturb each parameter element by +-step,
//! rebuild the forward pass, and compare the slope against the recorded
//! backward pass. Used by the gradient test suites; not part of training.

use super::{AutodiffError, Bound, Graph, Params, ValueId};

#[derive(Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(floor, |analytic|, |numeric|)`
    /// over all checked elements.
    pub max_rel_err: f64,
    /// Where the maximum occurred, for failure messages.
    pub worst: String,
    pub n_checked: usize,
}

/// Checks d(loss)/d(param) for every element of every parameter in `params`
/// against central finite differences with the given `step`.
///
/// `build` must construct the full forward pass from bound parameters and
/// return the scalar loss node. It runs once for the analytic gradients and
/// twice per parameter element for the numeric ones, so keep inputs small.
pub fn check_gradients<F>(
    params: &Params<f64>,
    build: F,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<ValueId, AutodiffError>,
{
    let mut g = Graph::<f64>::new();
    let bound = Bound::bind(&mut g, params, |_| true);
    let loss = build(&mut g, &bound)?;
    g.backward(loss)?;
    let analytic = bound.grads(&g);

    let eval = |p: &Params<f64>| -> Result<f64, AutodiffError> {
        let mut g = Graph::<f64>::new();
        let bound = Bound::bind(&mut g, p, |_| false);
        let loss = build(&mut g, &bound)?;
        Ok(g.values(loss)[0])
    };

    let mut work = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = String::from("(nothing checked)");
    let mut n_checked = 0usize;
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let numel = params.get(name)?.numel();
        let grad = analytic.get(name).cloned().unwrap_or_else(|| vec![0.0; numel]);
        for i in 0..numel {
            let orig = params.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = grad[i];
            let rel = (a - numeric).abs() / floor.max(a.abs()).max(numeric.abs());
            n_checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = format!("{name}[{i}]: analytic {a:.3e} vs numeric {numeric:.3e}");
            }
        }
    }
    Ok(GradCheckReport { max_rel_err, worst, n_checked })
}
