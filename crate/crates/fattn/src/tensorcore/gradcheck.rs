//! Central-difference verification of analytic gradients.

use crate::error::{FattnError, Result};
use crate::tensorcore::graph::{Graph, Var};
use crate::tensorcore::params::ParamStore;

/// Compare the analytic gradient of a scalar objective against central
/// differences (f(p+eps) - f(p-eps)) / (2 eps), coordinate by
/// coordinate over every registered parameter. Returns the worst
/// relative error, with the denominator clamped at 1 so that
/// near-zero gradients are compared on an absolute scale.
///
/// The objective builds its graph from whatever store the graph wraps,
/// so the same closure serves both the analytic pass and the
/// perturbed forward-only evaluations.
pub fn grad_check<F>(f: F, store: &ParamStore, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s, false);
        let root = f(&mut g)?;
        let v = g.value(root).scalar_value();
        if !v.is_finite() {
            return Err(FattnError::NonFinite("objective value".into()));
        }
        Ok(v)
    };

    // analytic pass
    let analytic = {
        let mut g = Graph::new(store, true);
        let root = f(&mut g)?;
        if !g.value(root).scalar_value().is_finite() {
            return Err(FattnError::NonFinite("objective value".into()));
        }
        g.backward(root)?
    };

    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for entry in store.iter() {
        let name = entry.name.clone();
        for i in 0..entry.value.len() {
            let orig = entry.value.data()[i];
            work.value_mut(&name)?.data_mut()[i] = orig + eps;
            let fp = eval(&work)?;
            work.value_mut(&name)?.data_mut()[i] = orig - eps;
            let fm = eval(&work)?;
            work.value_mut(&name)?.data_mut()[i] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[i]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        store
            .register("w", Tensor::new(vec![4], vec![0.5, -1.2, 2.0, 0.1]).unwrap())
            .unwrap();
        // f = sum of squares = 1^T (w .* w); build via matmul of w row with itself
        let worst = grad_check(
            |g| {
                let w = g.param("w")?;
                let row = g.reshape(w, vec![1, 4])?;
                g.matmul_nt(row, row)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(worst < 1e-9, "quadratic check should be near-exact, got {worst}");
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(3.0)).unwrap();
        let worst = grad_check(|g| Ok(g.leaf(Tensor::scalar(42.0))), &store, 1e-5).unwrap();
        assert!(worst < 1e-12);
    }

    #[test]
    fn catches_a_broken_adjoint() {
        // analytic path computes w^2 but we check against objective w^3;
        // the reported error must be far above any tolerance in use
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(2.0)).unwrap();
        // emulate a wrong gradient by checking f(w) = w*w against
        // a perturbation of a different function is not expressible here,
        // so instead verify the checker flags a genuinely nonlinear case
        // evaluated with too coarse a step: cubic with eps=1e-1 has a
        // visible second-order truncation error.
        let worst = grad_check(
            |g| {
                let w = g.param("w")?;
                let row = g.reshape(w, vec![1, 1])?;
                let sq = g.matmul_nt(row, row)?;
                g.matmul_nt(sq, row)
            },
            &store,
            1e-1,
        )
        .unwrap();
        assert!(worst > 1e-4, "coarse eps on w^3 must show truncation error, got {worst}");

        // and passes with a sane eps
        let fine = grad_check(
            |g| {
                let w = g.param("w")?;
                let row = g.reshape(w, vec![1, 1])?;
                let sq = g.matmul_nt(row, row)?;
                g.matmul_nt(sq, row)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(fine < 1e-8);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(0.0)).unwrap();
        let r = grad_check(|g| Ok(g.leaf(Tensor::scalar(f64::NAN))), &store, 1e-5);
        assert!(matches!(r, Err(FattnError::NonFinite(_))));
    }
}
