//! Selective scan kernels over flat row-major slices.
//!
//! Layouts: `x`, `delta`: `len × d_inner`; `b`, `c`: `len × d_state`;
//! `a`: `d_inner × d_state` (strictly negative); `d`: `d_inner`.
//! The recurrence per channel `c` and state `s` is
//!
//! ```text
//! h[t] = exp(delta[t,c] * a[c,s]) * h[t-1] + delta[t,c] * b[t,s] * x[t,c]
//! y[t,c] = sum_s c[t,s] * h[t,s] + d[c] * x[t,c]
//! ```

use crate::nn::{Scalar, ShapeError, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a, T> {
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub x: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d: &'a [T],
}

impl<'a, T: Scalar> ScanInputs<'a, T> {
    pub fn validate(&self) -> Result<(), ShapeError> {
        let (l, di, ds) = (self.len, self.d_inner, self.d_state);
        let checks = [
            ("x", self.x.len(), l * di),
            ("delta", self.delta.len(), l * di),
            ("a", self.a.len(), di * ds),
            ("b", self.b.len(), l * ds),
            ("c", self.c.len(), l * ds),
            ("d", self.d.len(), di),
        ];
        if l == 0 || di == 0 || ds == 0 {
            return Err(ShapeError::new(
                "selective_scan",
                format!("empty dimension (len {l}, d_inner {di}, d_state {ds})"),
            ));
        }
        for (name, got, want) in checks {
            if got != want {
                return Err(ShapeError::new(
                    "selective_scan",
                    format!("{name} has {got} elements, expected {want} (len {l}, d_inner {di}, d_state {ds})"),
                ));
            }
        }
        Ok(())
    }
}

/// Recurrent state of the scan, `d_inner × d_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanState<T> {
    pub h: Vec<T>,
    pub d_inner: usize,
    pub d_state: usize,
}

impl<T: Scalar> ScanState<T> {
    pub fn zeros(d_inner: usize, d_state: usize) -> Self {
        Self {
            h: vec![T::zero(); d_inner * d_state],
            d_inner,
            d_state,
        }
    }
}

/// Zero-order-hold decay and simplified input matrix for one step.
///
/// Returns `(a_bar, b_bar)`, both `d_inner × d_state`, with
/// `a_bar = exp(delta ⊗ a)` and `b_bar = delta ⊗ b_t`.
pub fn discretize<T: Scalar>(
    delta: &[T],
    a: &Tensor<T>,
    b_t: &[T],
) -> Result<(Tensor<T>, Tensor<T>), ShapeError> {
    let (di, ds) = a.dims2();
    if delta.len() != di || b_t.len() != ds {
        return Err(ShapeError::new(
            "discretize",
            format!(
                "delta {} and b {} incompatible with a {:?}",
                delta.len(),
                b_t.len(),
                a.shape()
            ),
        ));
    }
    let a_bar = Tensor::from_fn(&[di, ds], |i| (delta[i / ds] * a.data()[i]).exp());
    let b_bar = Tensor::from_fn(&[di, ds], |i| delta[i / ds] * b_t[i % ds]);
    Ok((a_bar, b_bar))
}

/// Reference sequential scan.
pub fn selective_scan_seq<T: Scalar>(inp: &ScanInputs<'_, T>) -> Result<Vec<T>, ShapeError> {
    inp.validate()?;
    let mut state = ScanState::zeros(inp.d_inner, inp.d_state);
    let mut y = vec![T::zero(); inp.len * inp.d_inner];
    scan_range(inp, 0, inp.len, &mut state.h, &mut y);
    Ok(y)
}

/// Advance `h` through steps `start..end`, writing outputs into `y`.
fn scan_range<T: Scalar>(inp: &ScanInputs<'_, T>, start: usize, end: usize, h: &mut [T], y: &mut [T]) {
    let (di, ds) = (inp.d_inner, inp.d_state);
    for t in start..end {
        let bt = &inp.b[t * ds..(t + 1) * ds];
        let ct = &inp.c[t * ds..(t + 1) * ds];
        for ch in 0..di {
            let dt = inp.delta[t * di + ch];
            let xv = inp.x[t * di + ch];
            let arow = &inp.a[ch * ds..(ch + 1) * ds];
            let hrow = &mut h[ch * ds..(ch + 1) * ds];
            let dx = dt * xv;
            let mut acc = T::zero();
            for s in 0..ds {
                let hv = (dt * arow[s]).exp() * hrow[s] + dx * bt[s];
                hrow[s] = hv;
                acc += ct[s] * hv;
            }
            y[t * di + ch] = acc + inp.d[ch] * xv;
        }
    }
}

/// Two-level chunked scan.
///
/// Each chunk is first scanned from a zero state while tracking the running
/// product of its decays; the carried state from the previous chunk is then
/// folded in as `h[t] = h_local[t] + decay_prod[t] ⊙ carry`. The local
/// phase of different chunks is independent.
pub fn selective_scan_chunked<T: Scalar>(
    inp: &ScanInputs<'_, T>,
    chunk_len: usize,
) -> Result<Vec<T>, ShapeError> {
    inp.validate()?;
    if chunk_len == 0 {
        return Err(ShapeError::new("selective_scan_chunked", "chunk_len must be >= 1".into()));
    }
    let (di, ds) = (inp.d_inner, inp.d_state);
    let width = di * ds;
    let mut carry = ScanState::zeros(di, ds);
    let mut y = vec![T::zero(); inp.len * di];
    let mut local = vec![T::zero(); chunk_len * width];
    let mut prod = vec![T::zero(); chunk_len * width];

    let mut start = 0;
    while start < inp.len {
        let end = (start + chunk_len).min(inp.len);
        // local phase: zero initial state, cumulative decay products
        for t in start..end {
            let r = t - start;
            let bt = &inp.b[t * ds..(t + 1) * ds];
            for ch in 0..di {
                let dt = inp.delta[t * di + ch];
                let dx = dt * inp.x[t * di + ch];
                for s in 0..ds {
                    let idx = ch * ds + s;
                    let decay = (dt * inp.a[idx]).exp();
                    let (h_prev, p_prev) = if r == 0 {
                        (T::zero(), T::one())
                    } else {
                        (local[(r - 1) * width + idx], prod[(r - 1) * width + idx])
                    };
                    local[r * width + idx] = decay * h_prev + dx * bt[s];
                    prod[r * width + idx] = decay * p_prev;
                }
            }
        }
        // combine with the carried state and read out
        for t in start..end {
            let r = t - start;
            let ct = &inp.c[t * ds..(t + 1) * ds];
            for ch in 0..di {
                let mut acc = T::zero();
                for s in 0..ds {
                    let idx = ch * ds + s;
                    let hv = local[r * width + idx] + prod[r * width + idx] * carry.h[idx];
                    local[r * width + idx] = hv;
                    acc += ct[s] * hv;
                }
                let xv = inp.x[t * di + ch];
                y[t * di + ch] = acc + inp.d[ch] * xv;
            }
        }
        let last = end - start - 1;
        carry.h.copy_from_slice(&local[last * width..(last + 1) * width]);
        start = end;
    }
    Ok(y)
}

/// Gradients of a scalar loss with respect to every scan input.
#[derive(Debug, Clone)]
pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d: Vec<T>,
}

/// Reverse pass of the sequential scan given `gy = dL/dy`.
///
/// States are recomputed forward, then the adjoint `gh` is propagated
/// backwards through `gh[t-1] += exp(delta[t] a) ⊙ gh[t]`.
pub fn selective_scan_backward<T: Scalar>(
    inp: &ScanInputs<'_, T>,
    gy: &[T],
) -> Result<ScanGrads<T>, ShapeError> {
    inp.validate()?;
    let (l, di, ds) = (inp.len, inp.d_inner, inp.d_state);
    if gy.len() != l * di {
        return Err(ShapeError::new(
            "selective_scan_backward",
            format!("gy has {} elements, expected {}", gy.len(), l * di),
        ));
    }
    let width = di * ds;
    // states[t] = h after step t
    let mut states = vec![T::zero(); l * width];
    for t in 0..l {
        let bt = &inp.b[t * ds..(t + 1) * ds];
        for ch in 0..di {
            let dt = inp.delta[t * di + ch];
            let dx = dt * inp.x[t * di + ch];
            for s in 0..ds {
                let idx = ch * ds + s;
                let prev = if t == 0 { T::zero() } else { states[(t - 1) * width + idx] };
                states[t * width + idx] = (dt * inp.a[idx]).exp() * prev + dx * bt[s];
            }
        }
    }

    let mut g = ScanGrads {
        x: vec![T::zero(); l * di],
        delta: vec![T::zero(); l * di],
        a: vec![T::zero(); width],
        b: vec![T::zero(); l * ds],
        c: vec![T::zero(); l * ds],
        d: vec![T::zero(); di],
    };
    // adjoint of h carried from step t+1 (already multiplied by its decay)
    let mut gh_next = vec![T::zero(); width];
    for t in (0..l).rev() {
        let bt = &inp.b[t * ds..(t + 1) * ds];
        let ct = &inp.c[t * ds..(t + 1) * ds];
        for ch in 0..di {
            let dt = inp.delta[t * di + ch];
            let xv = inp.x[t * di + ch];
            let gyv = gy[t * di + ch];
            g.d[ch] += gyv * xv;
            let mut gx = gyv * inp.d[ch];
            let mut gdelta = T::zero();
            for s in 0..ds {
                let idx = ch * ds + s;
                let h = states[t * width + idx];
                let h_prev = if t == 0 { T::zero() } else { states[(t - 1) * width + idx] };
                g.c[t * ds + s] += gyv * h;
                let gh = gyv * ct[s] + gh_next[idx];
                let av = inp.a[idx];
                let decay = (dt * av).exp();
                // dh/d(decay) = h_prev, d(decay)/d(delta) = decay * a
                let g_decay = gh * h_prev;
                gdelta += g_decay * decay * av + gh * bt[s] * xv;
                g.a[idx] += g_decay * decay * dt;
                g.b[t * ds + s] += gh * dt * xv;
                gx += gh * dt * bt[s];
                gh_next[idx] = gh * decay;
            }
            g.x[t * di + ch] = gx;
            g.delta[t * di + ch] = gdelta;
        }
    }
    Ok(g)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_inputs(
        rng: &mut rand_chacha::ChaCha8Rng,
        l: usize,
        di: usize,
        ds: usize,
    ) -> [Vec<f64>; 6] {
        let x = (0..l * di).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta = (0..l * di).map(|_| rng.gen_range(0.001..0.5)).collect();
        let a = (0..di * ds).map(|_| -rng.gen_range(0.1..2.0)).collect();
        let b = (0..l * ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = (0..l * ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = (0..di).map(|_| rng.gen_range(-1.0..1.0)).collect();
        [x, delta, a, b, c, d]
    }

    fn view<'a>(v: &'a [Vec<f64>; 6], l: usize, di: usize, ds: usize) -> ScanInputs<'a, f64> {
        ScanInputs {
            len: l,
            d_inner: di,
            d_state: ds,
            x: &v[0],
            delta: &v[1],
            a: &v[2],
            b: &v[3],
            c: &v[4],
            d: &v[5],
        }
    }

    #[test]
    fn hand_recurrence() {
        let ln2 = std::f64::consts::LN_2;
        let (x, delta, a, b, c, d) = ([1.0, 1.0], [ln2, ln2], [-1.0], [1.0, 1.0], [1.0, 1.0], [0.0]);
        let inp = ScanInputs { len: 2, d_inner: 1, d_state: 1, x: &x, delta: &delta, a: &a, b: &b, c: &c, d: &d };
        let y = selective_scan_seq(&inp).unwrap();
        // h1 = ln2, h2 = 0.5 * ln2 + ln2
        assert!((y[0] - 0.693_147_180_559_945_3).abs() < 1e-12);
        assert!((y[1] - 1.039_720_770_839_917_9).abs() < 1e-12);
        assert!((y[0] - 0.6931).abs() < 1e-4 && (y[1] - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn zero_input_and_zero_readout() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (l, di, ds) = (9, 3, 4);
        let mut v = random_inputs(&mut rng, l, di, ds);
        v[0].iter_mut().for_each(|x| *x = 0.0);
        assert!(selective_scan_seq(&view(&v, l, di, ds)).unwrap().iter().all(|&y| y == 0.0));

        let mut v = random_inputs(&mut rng, l, di, ds);
        v[4].iter_mut().for_each(|c| *c = 0.0);
        let y = selective_scan_seq(&view(&v, l, di, ds)).unwrap();
        for t in 0..l {
            for ch in 0..di {
                assert_eq!(y[t * di + ch], v[5][ch] * v[0][t * di + ch]);
            }
        }
    }

    #[test]
    fn discretize_closed_forms() {
        let a = Tensor::new(vec![1, 1], vec![-1.0f64]).unwrap();
        let (ab, bb) = discretize(&[std::f64::consts::LN_2], &a, &[2.0]).unwrap();
        assert!((ab.data()[0] - 0.5).abs() < 1e-15);
        assert!((bb.data()[0] - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        let (ab, bb) = discretize(&[0.0], &a, &[2.0]).unwrap();
        assert_eq!(ab.data()[0], 1.0);
        assert_eq!(bb.data()[0], 0.0);
    }

    #[test]
    fn discretize_decay_in_unit_interval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let di = rng.gen_range(1..4);
            let ds = rng.gen_range(1..5);
            let delta: Vec<f64> = (0..di).map(|_| rng.gen_range(1e-4..5.0)).collect();
            let a = Tensor::from_fn(&[di, ds], |_| -rng.gen_range(1e-3..10.0));
            let b: Vec<f64> = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (ab, _) = discretize(&delta, &a, &b).unwrap();
            assert!(ab.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn chunked_degenerate_chunks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (l, di, ds) = (17, 3, 4);
        let v = random_inputs(&mut rng, l, di, ds);
        let inp = view(&v, l, di, ds);
        let seq = selective_scan_seq(&inp).unwrap();
        assert_eq!(selective_scan_chunked(&inp, l).unwrap(), seq);
        assert_eq!(selective_scan_chunked(&inp, l + 5).unwrap(), seq);
        let one = selective_scan_chunked(&inp, 1).unwrap();
        let diff = one.iter().zip(&seq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
        assert!(selective_scan_chunked(&inp, 0).is_err());
    }

    #[test]
    fn chunked_random_l37_c8_f32() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let (l, di, ds) = (37, 6, 16);
        let v = random_inputs(&mut rng, l, di, ds);
        let v32: Vec<Vec<f32>> = v.iter().map(|s| s.iter().map(|&x| x as f32).collect()).collect();
        let inp = ScanInputs {
            len: l,
            d_inner: di,
            d_state: ds,
            x: &v32[0],
            delta: &v32[1],
            a: &v32[2],
            b: &v32[3],
            c: &v32[4],
            d: &v32[5],
        };
        let seq = selective_scan_seq(&inp).unwrap();
        let ch = selective_scan_chunked(&inp, 8).unwrap();
        let diff = seq.iter().zip(&ch).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let v = [vec![0.0; 4], vec![0.1; 4], vec![-1.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 1]];
        let bad = ScanInputs { len: 2, d_inner: 2, d_state: 1, x: &v[0], delta: &v[1], a: &v[2], b: &v[3], c: &v[4], d: &v[5] };
        let err = selective_scan_seq(&bad).unwrap_err();
        assert!(err.to_string().contains("selective_scan"));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (l, di, ds) = (6, 2, 3);
        let v = random_inputs(&mut rng, l, di, ds);
        let w: Vec<f64> = (0..l * di).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |v: &[Vec<f64>; 6]| -> f64 {
            let y = selective_scan_seq(&view(v, l, di, ds)).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let g = selective_scan_backward(&view(&v, l, di, ds), &w).unwrap();
        let analytic = [&g.x, &g.delta, &g.a, &g.b, &g.c, &g.d];
        let eps = 1e-6;
        for (k, an) in analytic.iter().enumerate() {
            for i in 0..v[k].len() {
                let mut p = v.clone();
                p[k][i] += eps;
                let mut m = v.clone();
                m[k][i] -= eps;
                let fd = (loss(&p) - loss(&m)) / (2.0 * eps);
                assert!((fd - an[i]).abs() < 1e-7, "input {k} idx {i}: {fd} vs {}", an[i]);
            }
        }
    }
}
