//! Standalone tensor ops with the same math as the graph versions.
//!
//! These are thin wrappers that run the corresponding graph op on
//! leaves, so forward semantics cannot drift between the two paths.

use crate::error::Result;
use crate::tensorcore::graph::Graph;
use crate::tensorcore::params::ParamStore;
use crate::tensorcore::tensor::Tensor;

/// y = x W + b.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, false);
    let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
    let y = g.linear(xv, wv, bv)?;
    Ok(g.value_cloned(y))
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, false);
    let xv = g.leaf(x.clone());
    let y = g.softmax_rows(xv)?;
    Ok(g.value_cloned(y))
}

/// Row-wise layer normalization.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, false);
    let (xv, gv, bv) = (g.leaf(x.clone()), g.leaf(gamma.clone()), g.leaf(beta.clone()));
    let y = g.layer_norm(xv, gv, bv, eps)?;
    Ok(g.value_cloned(y))
}
