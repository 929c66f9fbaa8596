use cast_core::nn::{
    finite_diff_check, softmax_rows_masked, Activation, GradCheckOptions, GradCheckReport, Graph, Init, ParamStore,
    Tensor, Var,
};
use cast_core::Result;
use proptest::prelude::*;

/// Gradient check of `sum(op(params) ⊙ W)` for a fixed, irregular `W`.
fn check(shapes: &[(&str, usize, usize)], op: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> GradCheckReport {
    let mut store = ParamStore::new(11);
    let ids: Vec<_> = shapes
        .iter()
        .map(|(n, r, c)| store.add(n, &[*r, *c], Init::Uniform(1.0)).unwrap())
        .collect();
    let total = store.num_scalars();
    let objective = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = op(&mut g, &vars)?;
        let (r, c) = (g.value(out).rows(), g.value(out).cols());
        let w = Tensor::matrix(r, c, (0..r * c).map(|k| (1.3 * k as f64 + 0.5).sin() + 0.2).collect())?;
        let w = g.input(w);
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod);
        Ok((g.value(loss).item(), g.backward(loss)?))
    };
    let opts = GradCheckOptions {
        min_coords: total,
        ..Default::default()
    };
    finite_diff_check(&mut store, objective, &opts).unwrap()
}

fn assert_exact(name: &str, r: GradCheckReport) {
    assert!(r.max_rel_error < 1e-6, "{name}: {:?}", r.worst);
}

#[test]
fn products_and_reshapes() {
    assert_exact("matmul", check(&[("a", 3, 4), ("b", 4, 2)], |g, v| g.matmul(v[0], v[1])));
    assert_exact("matmul_nt", check(&[("a", 3, 4), ("b", 5, 4)], |g, v| g.matmul_nt(v[0], v[1])));
    assert_exact("add_row", check(&[("a", 3, 4), ("b", 1, 4)], |g, v| g.add_row(v[0], v[1])));
    assert_exact("mul", check(&[("a", 3, 4), ("b", 3, 4)], |g, v| g.mul(v[0], v[1])));
    assert_exact("mul_scalar", check(&[("a", 3, 4), ("s", 1, 1)], |g, v| g.mul_scalar(v[0], v[1])));
    assert_exact("concat", check(&[("a", 3, 2), ("b", 3, 3)], |g, v| g.concat(&[v[0], v[1]])));
    assert_exact("stack_rows", check(&[("a", 1, 3), ("b", 2, 3)], |g, v| g.stack_rows(&[v[0], v[1]])));
    assert_exact("slice_cols", check(&[("a", 3, 5)], |g, v| g.slice_cols(v[0], 1, 3)));
    assert_exact("gather_rows", check(&[("a", 4, 3)], |g, v| g.gather_rows(v[0], &[2, 0, 2, 3])));
    assert_exact("scatter_mean", check(&[("a", 5, 3)], |g, v| g.scatter_mean(v[0], &[1, 0, 1, 1, 3], 4)));
    assert_exact("mean_rows", check(&[("a", 4, 3)], |g, v| Ok(g.mean_rows(v[0]))));
    assert_exact("transpose", check(&[("a", 2, 3)], |g, v| Ok(g.transpose(v[0]))));
}

#[test]
fn nonlinearities() {
    assert_exact("softmax", check(&[("a", 3, 5)], |g, v| g.softmax_rows(v[0], None)));
    let allowed = [true, false, true, true, false];
    assert_exact("masked softmax", check(&[("a", 3, 5)], |g, v| g.softmax_rows(v[0], Some(&allowed))));
    assert_exact(
        "layer_norm",
        check(&[("x", 3, 4), ("gain", 1, 4), ("bias", 1, 4)], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
    );
    for act in [Activation::Silu, Activation::Gelu] {
        assert_exact("activation", check(&[("a", 3, 4)], move |g, v| Ok(g.activation(v[0], act))));
    }
    assert_exact("exp", check(&[("a", 2, 3)], |g, v| Ok(g.exp(v[0]))));
    assert_exact("l2_normalize", check(&[("a", 3, 4)], |g, v| Ok(g.l2_normalize_rows(v[0]))));
}

#[test]
fn losses() {
    assert_exact(
        "cross_entropy",
        check(&[("logits", 4, 5)], |g, v| g.cross_entropy_masked(v[0], &[1, 4, 0, 2], &[true, false, true, true])),
    );
    // targets far from the initial range keep every residual away from the kink
    assert_exact("mae", check(&[("p", 4, 1)], |g, v| g.mae(v[0], &[3.0, -2.5, 4.0, -3.5])));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        vals in proptest::collection::vec(-30.0f64..30.0, 12),
        mask in proptest::collection::vec(any::<bool>(), 4),
    ) {
        let t = Tensor::matrix(3, 4, vals).unwrap();
        let allowed = mask.iter().any(|&b| b).then_some(mask.as_slice());
        let p = softmax_rows_masked(&t, allowed);
        for r in 0..3 {
            let row = p.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (c, &x) in row.iter().enumerate() {
                prop_assert!(x >= 0.0);
                if let Some(m) = allowed {
                    if !m[c] {
                        prop_assert_eq!(x, 0.0);
                    }
                }
            }
        }
    }
}
