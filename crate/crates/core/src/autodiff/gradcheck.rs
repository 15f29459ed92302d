use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafError {
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Per-input comparison of reverse-mode gradients against central
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub leaves: Vec<LeafError>,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves.iter().fold(0.0, |m, l| m.max(l.max_rel))
    }

    pub fn max_abs_error(&self) -> f64 {
        self.leaves.iter().fold(0.0, |m, l| m.max(l.max_abs))
    }
}

/// Checks the gradients of the scalar function `f` at `inputs`.
///
/// Inputs are promoted to double precision. Each element is perturbed by
/// `±eps` and `(f(x+eps) - f(x-eps)) / 2eps` is compared against the
/// backward pass, with relative error `|a-n| / max(|a|, |n|, 1e-8)`.
/// The caller keeps inputs away from non-differentiable points.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradientReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let inputs: Vec<Tensor> = inputs.iter().map(|t| t.to_precision(Precision::Double)).collect();

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = f(&mut g, &ids)?;
    let grads = g.backward(root)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &ids)?;
        let v = g.value(root);
        if v.rank() != 0 {
            return Err(Error::invalid(
                "finite_diff_check: function must return a rank-0 tensor",
            ));
        }
        Ok(v.item())
    };

    let mut leaves = Vec::with_capacity(inputs.len());
    let mut work = inputs.clone();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("every variable has a gradient");
        let mut leaf = LeafError {
            max_rel: 0.0,
            max_abs: 0.0,
        };
        for j in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[j];
            work[k].data_mut()[j] = x0 + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[j] = x0 - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            leaf.max_abs = leaf.max_abs.max(abs);
            leaf.max_rel = leaf.max_rel.max(rel);
        }
        leaves.push(leaf);
    }
    Ok(GradientReport { leaves })
}
