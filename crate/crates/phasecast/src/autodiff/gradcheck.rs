//! Central-difference verification of the backward pass.

use crate::error::{Error, Result};

use super::{Graph, NodeId, Tensor};

/// Compares analytic gradients against central finite differences.
///
/// `build` constructs a scalar loss from the given leaves; it runs once per
/// perturbed input, so it must be deterministic. Returns the worst
/// `|analytic - numeric| / max(1, |numeric|)` over every component of every
/// input.
pub fn gradient_check<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::config(format!("step size must be positive and finite, got {h}")));
    }

    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let loss = build(&mut graph, &ids)?;
    let lt = graph.value(loss);
    if lt.rows() != 1 || lt.cols() != 1 {
        return Err(Error::shape(
            "gradient_check",
            format!("loss must be scalar, got {}", lt.shape_string()),
        ));
    }
    let mut grads = graph.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).value())
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
