use super::{DenseArray, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: DenseArray<T>,
    pub v: DenseArray<T>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Real> AdamState<T> {
    pub fn new(dims: &[usize], hyper: AdamHyper) -> Self {
        AdamState {
            m: DenseArray::zeros(dims),
            v: DenseArray::zeros(dims),
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Real>(
    name: &str,
    param: &mut DenseArray<T>,
    grad: &DenseArray<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != state.m.dims() || param.dims() != state.v.dims() {
        return Err(Error::dim(format!(
            "adam {name}: param {:?}, grad {:?}, m {:?}, v {:?}",
            param.dims(),
            grad.dims(),
            state.m.dims(),
            state.v.dims()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::Training(format!("non-finite gradient for {name}")));
    }
    state.t += 1;
    let h = state.hyper;
    let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
    let c1 = T::lit(1.0 - h.beta1.powi(state.t as i32));
    let c2 = T::lit(1.0 - h.beta2.powi(state.t as i32));
    let (lr, eps) = (T::lit(h.lr), T::lit(h.eps));
    let one = T::one();

    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, &g) in grad.data().iter().enumerate() {
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
