use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Softplus,
    Silu,
    Gelu,
    Relu,
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` as `max(x, 0) + ln(1 + e^{-|x|})`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Silu => silu(x),
            Activation::Gelu => gelu(x),
            Activation::Relu => relu(x),
        }
    }

    /// Derivative at `x`, given the already computed output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Softplus => sigmoid(x),
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
            Activation::Gelu => {
                let c = T::of(GELU_C);
                let k = T::of(GELU_K);
                let u = c * (x + k * x * x * x);
                let th = u.tanh();
                let du = c * (T::one() + T::of(3.0) * k * x * x);
                T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * du
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Elementwise activation of a whole tensor.
pub fn activate<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(silu(0.0f64), 0.0);
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(relu(-3.0f64), 0.0);
    }

    #[test]
    fn stable_for_large_inputs() {
        for &x in &[-1000.0f32, -80.0, 80.0, 1000.0] {
            for kind in [
                Activation::Sigmoid,
                Activation::Softplus,
                Activation::Silu,
                Activation::Gelu,
            ] {
                assert!(kind.apply(x).is_finite(), "{kind:?}({x})");
            }
        }
        assert_eq!(sigmoid(1000.0f32), 1.0);
        assert_eq!(sigmoid(-1000.0f32), 0.0);
        assert_eq!(softplus(1000.0f32), 1000.0);
        assert_eq!(softplus(-1000.0f32), 0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for kind in [
            Activation::Sigmoid,
            Activation::Softplus,
            Activation::Silu,
            Activation::Gelu,
            Activation::Relu,
        ] {
            for &x in &[-3.1f64, -0.7, 0.3, 2.2] {
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                let an = kind.derivative(x, kind.apply(x));
                assert!((fd - an).abs() < 1e-7, "{kind:?} at {x}: {fd} vs {an}");
            }
        }
    }
}
