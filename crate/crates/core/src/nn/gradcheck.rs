use rand::seq::index::sample;

use super::{seeded_rng, Graph, ParamStore, ShapeError, Var};

/// Compare reverse-mode gradients with five-point central differences,
/// whose truncation error is O(eps^4).
///
/// `build` records the loss on a fresh graph. With `sample_per_tensor`
/// set, at most that many coordinates per parameter are checked, chosen
/// with a fixed seed. Returns the maximum over checked coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    build: F,
    eps: f64,
    sample_per_tensor: Option<usize>,
) -> Result<f64, ShapeError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, ShapeError>,
{
    let analytic = {
        let mut g = Graph::new(&*store);
        let loss = build(&mut g)?;
        g.backward(loss)
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64, ShapeError> {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut rng = seeded_rng(0x6772_6164);
    let mut worst = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        if store.is_frozen(id) {
            continue;
        }
        let n = store.value(id).len();
        let coords: Vec<usize> = match sample_per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.value(id).data()[i];
            let mut at = |delta: f64| -> Result<f64, ShapeError> {
                store.value_mut(id).data_mut()[i] = orig + delta;
                let v = eval(store);
                store.value_mut(id).data_mut()[i] = orig;
                v
            };
            let near = at(eps)? - at(-eps)?;
            let far = at(2.0 * eps)? - at(-2.0 * eps)?;
            let numeric = (8.0 * near - far) / (12.0 * eps);
            let an = analytic.get(id).map(|t| t.data()[i]).unwrap_or(0.0);
            let rel = (an - numeric).abs() / (an.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{OpKind, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let theta = store.add("theta", Tensor::from_fn(&[7], |i| i as f64 * 0.3 - 1.0));
        // ‖θ‖²/2 = mean(θ ⊙ θ) * n / 2
        let err = grad_check(
            &mut store,
            |g| {
                let t = g.param(theta);
                let sq = g.mul(t, t)?;
                let m = g.mean(sq);
                Ok(g.scale(m, 3.5))
            },
            1e-4,
            None,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let mut store = ParamStore::<f64>::new();
        let theta = store.add("theta", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.2 - 0.4));
        let build = |g: &mut Graph<'_, f64>, faulty: bool| {
            if faulty {
                g.inject_backward_fault(OpKind::Softmax);
            }
            let t = g.param(theta);
            let s = g.softmax(t);
            let w = g.input(Tensor::from_fn(&[2, 3], |i| i as f64));
            let p = g.mul(s, w)?;
            Ok(g.mean(p))
        };
        let good = grad_check(&mut store, |g| build(g, false), 1e-4, None).unwrap();
        let bad = grad_check(&mut store, |g| build(g, true), 1e-4, None).unwrap();
        assert!(good < 1e-8, "{good}");
        assert!(bad > 1e-2, "{bad}");
    }
}
