use super::{NumError, ParamStore, Tape, Var};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Compares `backward()` gradients against centered finite differences
/// `(f(p+h) − f(p−h)) / 2h` for every scalar of every parameter.
///
/// Returns the largest relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator. Parameter values
/// are restored before returning; gradients are left holding the analytic
/// result.
pub fn finite_difference_check<F>(store: &mut ParamStore, h: f64, f: F) -> Result<f64, NumError>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>, NumError>,
{
    if !(h > 0.0) {
        return Err(NumError::Contract(format!("finite-difference step must be positive, got {h}")));
    }
    store.zero_grads();
    {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        tape.backward(loss, store)?;
    }

    let eval = |store: &ParamStore| -> Result<f64, NumError> {
        let tape = Tape::new();
        Ok(f(&tape, store)?.item())
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let original = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = original + h;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = original - h;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let analytic = store.grad(id).data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap());
        let coef = Tensor::vector(vec![2.0, -1.0, 0.5]).unwrap();
        let err = finite_difference_check(&mut store, DEFAULT_FD_STEP, |tape, s| {
            let c = tape.leaf(coef.clone())?;
            tape.param(s, w).mul(c)?.sum()
        })
        .unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn quadratic_function_is_exact_up_to_roundoff() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap());
        let err = finite_difference_check(&mut store, DEFAULT_FD_STEP, |tape, s| {
            let p = tape.param(s, w);
            p.mul(p)?.scale(0.5)?.sum()
        })
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn parameters_are_restored() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.25, -0.5]).unwrap());
        let before = store.value(w).clone();
        finite_difference_check(&mut store, 1e-3, |tape, s| {
            let p = tape.param(s, w);
            p.mul(p)?.sum()
        })
        .unwrap();
        assert_eq!(store.value(w), &before);
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0));
        assert!(finite_difference_check(&mut store, 0.0, |tape, s| Ok(tape.param(s, w))).is_err());
    }
}
