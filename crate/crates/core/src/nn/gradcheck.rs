//! Central-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Minimum number of coordinates to probe, spread across tensors.
    pub min_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            min_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub tensors_checked: usize,
    /// (parameter, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coords: Vec<CoordCheck>,
}

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares analytic gradients from `objective` against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` on a stratified subsample of coordinates.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    objective: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = objective(store)?;
    let ids: Vec<ParamId> = store.ids().collect();
    let total: usize = ids.iter().map(|&id| store.value(id).numel()).sum();
    let target = opts.min_coords.min(total);
    let per_tensor = target.div_ceil(ids.len().max(1));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks: Vec<(ParamId, usize)> = Vec::new();
    for &id in &ids {
        let n = store.value(id).numel();
        let k = per_tensor.min(n);
        let mut chosen: Vec<usize> = sample(&mut rng, n, k).into_vec();
        chosen.sort_unstable();
        picks.extend(chosen.into_iter().map(|i| (id, i)));
    }
    // small tensors may leave the quota short; top up from the largest
    if picks.len() < target {
        let mut by_size = ids.clone();
        by_size.sort_by_key(|&id| std::cmp::Reverse(store.value(id).numel()));
        'outer: for &id in &by_size {
            for i in 0..store.value(id).numel() {
                if picks.len() >= target {
                    break 'outer;
                }
                if !picks.contains(&(id, i)) {
                    picks.push((id, i));
                }
            }
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        tensors_checked: 0,
        worst: None,
        coords: Vec::new(),
    };
    let mut seen = std::collections::BTreeSet::new();
    for (id, i) in picks {
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + opts.eps;
        let (fp, _) = objective(store)?;
        store.value_mut(id).data_mut()[i] = orig - opts.eps;
        let (fm, _) = objective(store)?;
        store.value_mut(id).data_mut()[i] = orig;

        let numeric = (fp - fm) / (2.0 * opts.eps);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((store.name(id).to_string(), i, a, numeric));
        }
        report.coords.push(CoordCheck {
            param: store.name(id).to_string(),
            index: i,
            analytic: a,
            numeric,
            rel_error: rel,
        });
        report.coords_checked += 1;
        seen.insert(id);
    }
    report.tensors_checked = seen.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use crate::nn::layers::Linear;
    use crate::nn::tensor::Tensor;

    fn linear_objective<'a>(
        lin: &'a Linear,
        x: &'a Tensor,
        scale_grad: f64,
    ) -> impl Fn(&ParamStore) -> Result<(f64, Gradients)> + 'a {
        move |store| {
            let mut g = Graph::new(store);
            let xi = g.input(x.clone());
            let y = lin.forward(&mut g, xi)?;
            let s = g.sum(y);
            let mut grads = g.backward(s)?;
            grads.scale(scale_grad);
            Ok((g.value(s).item(), grads))
        }
    }

    fn setup() -> (ParamStore, Linear, Tensor) {
        let mut store = ParamStore::new(4);
        let lin = Linear::new(&mut store, "lin", 15, 14).unwrap();
        let x = Tensor::matrix(1, 15, (0..15).map(|v| 0.5 + (v as f64 * 0.37).sin().abs()).collect()).unwrap();
        (store, lin, x)
    }

    #[test]
    fn linear_model_is_exact() {
        let (mut store, lin, x) = setup();
        let r = finite_diff_check(&mut store, linear_objective(&lin, &x, 1.0), &Default::default())
            .unwrap();
        assert!(r.coords_checked >= 200, "{}", r.coords_checked);
        assert_eq!(r.tensors_checked, 2);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn detects_corrupted_gradient() {
        let (mut store, lin, x) = setup();
        let r = finite_diff_check(&mut store, linear_objective(&lin, &x, 1.01), &Default::default())
            .unwrap();
        assert!(r.max_rel_error > 1e-3, "{r:?}");
    }
}
