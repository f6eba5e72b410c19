//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamSet, Tape};
use crate::error::Result;

/// Compares the analytic gradient of `f` against central finite differences
/// (L(x+h) − L(x−h)) / 2h on `n` randomly sampled parameter components, and
/// returns the maximum relative error
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// `f` must build the same scalar loss for the same parameter values on every
/// call. Sampling is seeded so runs are reproducible.
pub fn grad_check<F>(
    mut f: F,
    params: &mut ParamSet,
    h: f64,
    n: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<NodeId>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    assert!(n >= 1, "at least one sample required");

    // Analytic pass.
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let grads = tape.backward(loss)?;
    tape.accumulate_grads(&grads, params)?;
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .map(|(name, p)| (name.to_string(), p.grad.data().to_vec()))
        .collect();
    let analytic_lookup = |name: &str, idx: usize| -> f64 {
        analytic
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g[idx])
            .unwrap_or(0.0)
    };

    let total = params.component_count();
    assert!(total > 0, "parameter set is empty");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..n {
        let flat = rng.gen_range(0..total);
        let (name, idx) = {
            let (name, idx) = params.component(flat).expect("flat index in range");
            (name.to_string(), idx)
        };
        let x0 = params.value(&name).unwrap().data()[idx];

        let eval = |params: &ParamSet, f: &mut F| -> Result<f64> {
            let mut t = Tape::new();
            let l = f(&mut t, params)?;
            Ok(t.value(l).item())
        };

        params.value_mut(&name).unwrap().data_mut()[idx] = x0 + h;
        let lp = eval(params, &mut f)?;
        params.value_mut(&name).unwrap().data_mut()[idx] = x0 - h;
        let lm = eval(params, &mut f)?;
        params.value_mut(&name).unwrap().data_mut()[idx] = x0;

        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic_lookup(&name, idx);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
