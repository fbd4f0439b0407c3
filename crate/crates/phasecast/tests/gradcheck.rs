//! Finite-difference verification of the backward pass: every graph
//! primitive, a few compositions, and full training losses through real
//! models. Inputs sit away from the kinks of `abs` and `leaky_relu` so
//! central differences are trustworthy at `h = 1e-6`.

use phasecast::autodiff::{gradient_check, Graph, NodeId, Tensor};
use phasecast::neural::{
    BoundParams, Family, ForwardCtx, LstmSpec, Model, ModelSpec, TeacherForcing,
};
use phasecast::objective::build_loss;
use phasecast::dynsys::SystemKind;
use phasecast::Result;

use proptest::prelude::*;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Fixed quasi-random filler, bounded away from zero so `abs` and
/// `leaky_relu` never see an input within `H` of a kink.
fn filler(rows: usize, cols: usize, phase: f64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|i| {
            let v = (0.37 + phase + 0.71 * i as f64).sin();
            if v.abs() < 0.05 {
                0.05 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn check<F>(build: F, inputs: &[Tensor])
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let worst = gradient_check(build, inputs, H).unwrap();
    assert!(worst < TOL, "worst relative error {worst:.3e} exceeds {TOL:.0e}");
}

#[test]
fn elementwise_binary_ops() {
    let a = filler(2, 3, 0.0);
    let b = filler(2, 3, 1.3);
    check(
        |g, ids| {
            let s = g.add(ids[0], ids[1])?;
            Ok(g.sum(s))
        },
        &[a.clone(), b.clone()],
    );
    check(
        |g, ids| {
            let s = g.sub(ids[0], ids[1])?;
            Ok(g.sum(s))
        },
        &[a.clone(), b.clone()],
    );
    check(
        |g, ids| {
            let s = g.mul(ids[0], ids[1])?;
            Ok(g.sum(s))
        },
        &[a, b],
    );
}

#[test]
fn row_broadcast_ops() {
    let a = filler(3, 4, 0.2);
    let row = filler(1, 4, 2.1);
    check(
        |g, ids| {
            let s = g.add_row(ids[0], ids[1])?;
            let sq = g.square(s);
            Ok(g.sum(sq))
        },
        &[a.clone(), row.clone()],
    );
    check(
        |g, ids| {
            let s = g.mul_row(ids[0], ids[1])?;
            Ok(g.sum(s))
        },
        &[a, row],
    );
}

#[test]
fn matmul_pulls_gradients_through_both_sides() {
    let a = filler(2, 3, 0.4);
    let b = filler(3, 4, 1.7);
    check(
        |g, ids| {
            let p = g.matmul(ids[0], ids[1])?;
            let sq = g.square(p);
            Ok(g.sum(sq))
        },
        &[a, b],
    );
}

#[test]
fn unary_ops() {
    let x = filler(2, 3, 0.9);
    check(
        |g, ids| {
            let s = g.scale(ids[0], -1.7);
            Ok(g.sum(s))
        },
        &[x.clone()],
    );
    check(
        |g, ids| {
            let s = g.leaky_relu(ids[0], 0.01);
            Ok(g.sum(s))
        },
        &[x.clone()],
    );
    check(
        |g, ids| {
            let s = g.sigmoid(ids[0]);
            Ok(g.sum(s))
        },
        &[x.clone()],
    );
    check(
        |g, ids| {
            let s = g.tanh(ids[0]);
            Ok(g.sum(s))
        },
        &[x.clone()],
    );
    check(
        |g, ids| {
            let s = g.exp(ids[0]);
            Ok(g.sum(s))
        },
        &[x.clone()],
    );
    check(
        |g, ids| {
            let s = g.abs(ids[0]);
            Ok(g.sum(s))
        },
        &[x.clone()],
    );
    check(
        |g, ids| {
            let s = g.square(ids[0]);
            Ok(g.sum(s))
        },
        &[x.clone()],
    );
    check(|g, ids| Ok(g.mean(ids[0])), &[x]);

    // log needs positive inputs.
    let pos = Tensor::from_vec(2, 2, vec![0.3, 1.1, 2.7, 0.6]).unwrap();
    check(
        |g, ids| {
            let s = g.log(ids[0])?;
            Ok(g.sum(s))
        },
        &[pos],
    );
}

#[test]
fn column_surgery_ops() {
    let a = filler(2, 3, 0.1);
    let b = filler(2, 2, 1.9);
    check(
        |g, ids| {
            let c = g.concat_cols(ids[0], ids[1])?;
            let sq = g.square(c);
            Ok(g.sum(sq))
        },
        &[a.clone(), b],
    );
    check(
        |g, ids| {
            let s = g.slice_cols(ids[0], 1, 3)?;
            let sq = g.square(s);
            Ok(g.sum(sq))
        },
        &[a],
    );
}

#[test]
fn layer_norm_gradient_survives_the_mean_and_variance_coupling() {
    let x = filler(3, 5, 0.6);
    check(
        |g, ids| {
            let n = g.layer_norm(ids[0], 1e-5);
            // Weight the entries so the gradient is not the trivial
            // all-ones direction that row centering annihilates.
            let w = g.constant(filler(3, 5, 2.8));
            let p = g.mul(n, w)?;
            Ok(g.sum(p))
        },
        &[x],
    );
}

#[test]
fn reparameterization_composite() {
    let mu = filler(2, 3, 0.0);
    let log_sigma = filler(2, 3, 1.1);
    let eps = filler(2, 3, 2.2);
    check(
        |g, ids| {
            let e = g.exp(ids[1]);
            let noise = g.mul(e, ids[2])?;
            let z = g.add(ids[0], noise)?;
            let sq = g.square(z);
            Ok(g.sum(sq))
        },
        &[mu, log_sigma, eps],
    );
}

/// Clones the model's parameters so a graph can rebind them as leaves.
fn params_of(model: &Model) -> Vec<Tensor> {
    model.param_tensors().into_iter().cloned().collect()
}

#[test]
fn vae_ssd_loss_gradient_matches_finite_differences() {
    let spec = ModelSpec::new(Family::VaeSsd, 4, 2, 5)
        .with_hidden(vec![6])
        .with_latent(2)
        .with_layer_norm(true)
        .with_gamma(0.5)
        .with_delta(0.3);
    let mut model = Model::build(spec, SystemKind::Pendulum).unwrap();
    model.set_factor_ranges(vec![(1.0, 1.5)]).unwrap();

    let x = filler(3, 8, 0.3);
    let target = filler(3, 4, 1.4);
    let factors = Tensor::from_vec(3, 1, vec![1.1, 1.3, 1.45]).unwrap();
    let eps = filler(3, 2, 2.6);

    let worst = gradient_check(
        |g, ids| {
            let bound = BoundParams { ids: ids.to_vec() };
            let xid = g.constant(x.clone());
            let ctx = ForwardCtx {
                eps: Some(&eps),
                ..ForwardCtx::default()
            };
            let out = model.forward_graph(g, &bound, xid, &ctx)?;
            let loss = build_loss(g, &model, &out, &target, Some(&factors))?;
            Ok(loss.total)
        },
        &params_of(&model),
        H,
    )
    .unwrap();
    assert!(worst < TOL, "worst relative error {worst:.3e}");
}

#[test]
fn lstm_loss_gradient_matches_finite_differences_under_teacher_forcing() {
    let mut spec = ModelSpec::new(Family::Lstm, 3, 2, 8);
    spec.lstm = Some(LstmSpec {
        layers: 1,
        hidden_size: 5,
        teacher_forcing: TeacherForcing::Full,
    });
    let model = Model::build(spec, SystemKind::Pendulum).unwrap();

    let x = filler(2, 6, 0.5);
    let target = filler(2, 4, 1.8);
    let coins = vec![true];

    let worst = gradient_check(
        |g, ids| {
            let bound = BoundParams { ids: ids.to_vec() };
            let xid = g.constant(x.clone());
            let ctx = ForwardCtx {
                teacher: Some(&target),
                teacher_coins: Some(&coins),
                ..ForwardCtx::default()
            };
            let out = model.forward_graph(g, &bound, xid, &ctx)?;
            let loss = build_loss(g, &model, &out, &target, None)?;
            Ok(loss.total)
        },
        &params_of(&model),
        H,
    )
    .unwrap();
    assert!(worst < TOL, "worst relative error {worst:.3e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// d/dx sum(a ⊙ x) = a exactly, for any a and x.
    #[test]
    fn linear_losses_have_constant_gradients(
        a in proptest::collection::vec(-3.0_f64..3.0, 6),
        x in proptest::collection::vec(-3.0_f64..3.0, 6),
    ) {
        let at = Tensor::from_vec(2, 3, a.clone()).unwrap();
        let xt = Tensor::from_vec(2, 3, x).unwrap();

        let mut g = Graph::new();
        let xid = g.leaf(xt);
        let aid = g.constant(at);
        let prod = g.mul(aid, xid).unwrap();
        let loss = g.sum(prod);
        let mut grads = g.backward(loss).unwrap();
        let gx = grads.take(xid).unwrap();
        for (got, want) in gx.data().iter().zip(&a) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }

    /// Scaling the loss scales the gradient by exactly the same factor.
    #[test]
    fn gradient_is_homogeneous_in_the_loss_scale(
        x in proptest::collection::vec(0.1_f64..2.0, 4),
        c in -5.0_f64..5.0,
    ) {
        let xt = Tensor::from_vec(2, 2, x).unwrap();

        let grad_of = |scale: Option<f64>| -> Vec<f64> {
            let mut g = Graph::new();
            let xid = g.leaf(xt.clone());
            let sq = g.square(xid);
            let base = g.sum(sq);
            let loss = match scale {
                Some(c) => g.scale(base, c),
                None => base,
            };
            let mut grads = g.backward(loss).unwrap();
            grads.take(xid).unwrap().data().to_vec()
        };

        let plain = grad_of(None);
        let scaled = grad_of(Some(c));
        for (p, s) in plain.iter().zip(&scaled) {
            prop_assert!((c * p - s).abs() < 1e-9 * (1.0 + p.abs() * c.abs()));
        }
    }
}
