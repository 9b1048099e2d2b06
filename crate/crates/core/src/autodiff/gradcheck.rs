use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max over entries of `|analytic − numeric| / max(1, |analytic|)`
    pub max_rel_error: f64,
    /// Parameter holding the worst entry.
    pub worst_param: String,
    pub entries_checked: usize,
}

fn evaluate<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::contract("grad_check function must return a scalar"));
    }
    Ok(v.item())
}

/// Checks reverse-mode gradients of `f` against central differences over
/// every entry of every trainable parameter in `store`.
///
/// `f` builds a fresh graph from the current parameter values and returns
/// the scalar loss. It is evaluated twice at the unperturbed point; any
/// bitwise difference is reported as a contract error.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::contract(format!("eps must be in (0, 1e-3], got {eps}")));
    }

    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let base = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; store.len()];
    for (id, g) in grads.params() {
        let slot = analytic[id.index()].get_or_insert_with(|| vec![0.0; g.numel()]);
        for (a, b) in slot.iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    drop(tape);

    let again = evaluate(store, &mut f)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::contract(format!(
            "function is not deterministic: {base} then {again}"
        )));
    }

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
    };
    let ids: Vec<ParamId> = store.trainable_ids();
    for id in ids {
        let n = store.get(id).value().numel();
        for i in 0..n {
            let orig = store.get(id).value().data()[i];
            store.get_mut(id).value_mut().data_mut()[i] = orig + eps;
            let plus = evaluate(store, &mut f);
            store.get_mut(id).value_mut().data_mut()[i] = orig - eps;
            let minus = evaluate(store, &mut f);
            store.get_mut(id).value_mut().data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                if rel >= report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst_param = store.get(id).name().to_string();
                }
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Group, Tensor};

    #[test]
    fn sum_of_squares_is_exact() {
        let mut s = ParamStore::new();
        let id = s.add(
            "x",
            Tensor::vector(&[0.5, -1.5, 2.0, 3.25]),
            Group::Downstream,
        );
        let r = grad_check(&mut s, 1e-5, |t, s| {
            let x = t.param(s, id);
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.entries_checked, 4);
    }

    #[test]
    fn rejects_bad_eps() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(1.0), Group::Downstream);
        for eps in [0.0, -1e-5, 1e-2] {
            let r = grad_check(&mut s, eps, |t, s| Ok(t.param(s, id)));
            assert!(matches!(r, Err(Error::Contract(_))));
        }
    }

    #[test]
    fn detects_nondeterminism() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(1.0), Group::Downstream);
        let mut calls = 0.0;
        let r = grad_check(&mut s, 1e-5, |t, s| {
            calls += 1.0;
            let x = t.param(s, id);
            Ok(t.add_scalar(x, calls))
        });
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
