use rand::Rng;

use super::{check_len, matvec_acc, matvec_t_acc, outer_acc, sigmoid, DenseArray, Real};
use crate::error::{Error, Result};

/// Weights of one GRU layer mapping `input_dim` inputs to `hidden_dim` state.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T = f32> {
    pub w_z: DenseArray<T>,
    pub w_r: DenseArray<T>,
    pub w_c: DenseArray<T>,
    pub u_z: DenseArray<T>,
    pub u_r: DenseArray<T>,
    pub u_c: DenseArray<T>,
    pub b_z: DenseArray<T>,
    pub b_r: DenseArray<T>,
    pub b_c: DenseArray<T>,
}

pub(crate) const GRU_FIELDS: [&str; 9] = ["w_z", "w_r", "w_c", "u_z", "u_r", "u_c", "b_z", "b_r", "b_c"];

impl<T: Real> GruParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let wi = || DenseArray::zeros(&[hidden_dim, input_dim]);
        let wh = || DenseArray::zeros(&[hidden_dim, hidden_dim]);
        let b = || DenseArray::zeros(&[hidden_dim]);
        GruParams {
            w_z: wi(),
            w_r: wi(),
            w_c: wi(),
            u_z: wh(),
            u_r: wh(),
            u_c: wh(),
            b_z: b(),
            b_r: b(),
            b_c: b(),
        }
    }

    /// Matrices from uniform(-scale, scale), biases zero.
    pub fn uniform<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for m in [&mut p.w_z, &mut p.w_r, &mut p.w_c] {
            *m = DenseArray::uniform(&[hidden_dim, input_dim], scale, rng);
        }
        for m in [&mut p.u_z, &mut p.u_r, &mut p.u_c] {
            *m = DenseArray::uniform(&[hidden_dim, hidden_dim], scale, rng);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn arrays(&self) -> [&DenseArray<T>; 9] {
        [
            &self.w_z, &self.w_r, &self.w_c, &self.u_z, &self.u_r, &self.u_c, &self.b_z, &self.b_r,
            &self.b_c,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut DenseArray<T>; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_c,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_c,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_c,
        ]
    }

    pub(crate) fn from_arrays(mut arrays: Vec<DenseArray<T>>) -> Result<Self> {
        if arrays.len() != 9 {
            return Err(Error::dim(format!("GRU needs 9 arrays, got {}", arrays.len())));
        }
        let b_c = arrays.pop().unwrap();
        let b_r = arrays.pop().unwrap();
        let b_z = arrays.pop().unwrap();
        let u_c = arrays.pop().unwrap();
        let u_r = arrays.pop().unwrap();
        let u_z = arrays.pop().unwrap();
        let w_c = arrays.pop().unwrap();
        let w_r = arrays.pop().unwrap();
        let w_z = arrays.pop().unwrap();
        let p = GruParams {
            w_z,
            w_r,
            w_c,
            u_z,
            u_r,
            u_c,
            b_z,
            b_r,
            b_c,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        for (name, a) in GRU_FIELDS.iter().zip(self.arrays()) {
            let want: &[usize] = match name.as_bytes()[0] {
                b'w' => &[h, d],
                b'u' => &[h, h],
                _ => &[h],
            };
            if a.dims() != want {
                return Err(Error::dim(format!(
                    "GRU {name}: expected {want:?}, got {:?}",
                    a.dims()
                )));
            }
        }
        Ok(())
    }
}

/// Intermediates of one GRU step, consumed by [`gru_cell_backward`].
#[derive(Clone, Debug)]
pub struct GruCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    reset_h: Vec<T>,
    mask: Option<Vec<T>>,
}

impl<T: Real> GruCache<T> {
    pub fn update_gate(&self) -> &[T] {
        &self.z
    }

    pub fn candidate(&self) -> &[T] {
        &self.cand
    }
}

/// One GRU step:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// c = tanh(W_c x + U_c (r ⊙ h) + b_c)
/// h' = (1 - z) ⊙ h + z ⊙ c
/// ```
///
/// With a dropout mask the returned state is `mask ⊙ h'`.
pub fn gru_cell_forward<T: Real>(
    x: &[T],
    h_prev: &[T],
    p: &GruParams<T>,
    dropout_mask: Option<&[T]>,
) -> Result<(Vec<T>, GruCache<T>)> {
    let (h, d) = (p.hidden_dim(), p.input_dim());
    check_len("gru input x", x.len(), d)?;
    check_len("gru state h_prev", h_prev.len(), h)?;
    if let Some(m) = dropout_mask {
        check_len("gru dropout_mask", m.len(), h)?;
    }

    let mut z = p.b_z.data().to_vec();
    matvec_acc(&p.w_z, x, &mut z);
    matvec_acc(&p.u_z, h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = p.b_r.data().to_vec();
    matvec_acc(&p.w_r, x, &mut r);
    matvec_acc(&p.u_r, h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let reset_h: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
    let mut cand = p.b_c.data().to_vec();
    matvec_acc(&p.w_c, x, &mut cand);
    matvec_acc(&p.u_c, &reset_h, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());

    let mut out: Vec<T> = (0..h)
        .map(|i| (T::one() - z[i]) * h_prev[i] + z[i] * cand[i])
        .collect();
    if let Some(m) = dropout_mask {
        out.iter_mut().zip(m).for_each(|(o, &k)| *o *= k);
    }
    let cache = GruCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        cand,
        reset_h,
        mask: dropout_mask.map(<[T]>::to_vec),
    };
    Ok((out, cache))
}

/// Backward pass of one GRU step. Parameter gradients are accumulated into
/// `grads`; returns `(grad_x, grad_h_prev)`.
pub fn gru_cell_backward<T: Real>(
    grad_h_new: &[T],
    cache: &GruCache<T>,
    p: &GruParams<T>,
    grads: &mut GruParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let (h, d) = (p.hidden_dim(), p.input_dim());
    if cache.x.len() != d || cache.h_prev.len() != h {
        return Err(Error::Usage(format!(
            "GRU cache was produced for ({}, {}) but params are ({d}, {h})",
            cache.x.len(),
            cache.h_prev.len()
        )));
    }
    check_len("gru grad_h_new", grad_h_new.len(), h)?;
    if grads.input_dim() != d || grads.hidden_dim() != h {
        return Err(Error::dim("GRU gradient accumulator shape differs from params"));
    }

    let g: Vec<T> = match &cache.mask {
        Some(m) => grad_h_new.iter().zip(m).map(|(&a, &b)| a * b).collect(),
        None => grad_h_new.to_vec(),
    };
    let (z, r, c, hp) = (&cache.z, &cache.r, &cache.cand, &cache.h_prev);

    let mut grad_h_prev: Vec<T> = (0..h).map(|i| g[i] * (T::one() - z[i])).collect();
    let mut grad_x = vec![T::zero(); d];

    let da_c: Vec<T> = (0..h)
        .map(|i| g[i] * z[i] * (T::one() - c[i] * c[i]))
        .collect();
    let da_z: Vec<T> = (0..h)
        .map(|i| g[i] * (c[i] - hp[i]) * z[i] * (T::one() - z[i]))
        .collect();

    outer_acc(&mut grads.w_c, &da_c, &cache.x);
    outer_acc(&mut grads.u_c, &da_c, &cache.reset_h);
    add_into(grads.b_c.data_mut(), &da_c);
    matvec_t_acc(&p.w_c, &da_c, &mut grad_x);
    let mut grad_reset_h = vec![T::zero(); h];
    matvec_t_acc(&p.u_c, &da_c, &mut grad_reset_h);

    let da_r: Vec<T> = (0..h)
        .map(|i| grad_reset_h[i] * hp[i] * r[i] * (T::one() - r[i]))
        .collect();
    for i in 0..h {
        grad_h_prev[i] += grad_reset_h[i] * r[i];
    }

    outer_acc(&mut grads.w_r, &da_r, &cache.x);
    outer_acc(&mut grads.u_r, &da_r, hp);
    add_into(grads.b_r.data_mut(), &da_r);
    matvec_t_acc(&p.w_r, &da_r, &mut grad_x);
    matvec_t_acc(&p.u_r, &da_r, &mut grad_h_prev);

    outer_acc(&mut grads.w_z, &da_z, &cache.x);
    outer_acc(&mut grads.u_z, &da_z, hp);
    add_into(grads.b_z.data_mut(), &da_z);
    matvec_t_acc(&p.w_z, &da_z, &mut grad_x);
    matvec_t_acc(&p.u_z, &da_z, &mut grad_h_prev);

    Ok((grad_x, grad_h_prev))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
}

/// A stack of GRU layers unrolled over a sequence. Layer `l + 1` consumes the
/// output of layer `l`; the top layer's outputs are the sequence outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStack<T = f32> {
    pub layers: Vec<GruParams<T>>,
}

/// Per-step, per-layer caches from [`GruStack::forward`].
#[derive(Clone, Debug)]
pub struct GruStackCache<T> {
    steps: Vec<Vec<GruCache<T>>>,
}

impl<T: Real> GruStackCache<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl<T: Real> GruStack<T> {
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn zeros_like(&self) -> Self {
        GruStack {
            layers: self
                .layers
                .iter()
                .map(|l| GruParams::zeros(l.input_dim(), l.hidden_dim()))
                .collect(),
        }
    }

    /// Advances every layer by one step in place and returns the top output.
    pub fn step(&self, x: &[T], states: &mut [Vec<T>]) -> Result<Vec<T>> {
        let mut input = x.to_vec();
        for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
            let (out, _) = gru_cell_forward(&input, state, layer, None)?;
            *state = out.clone();
            input = out;
        }
        Ok(input)
    }

    /// Runs the stack over `inputs` from per-layer initial states. `masks`, if
    /// given, is indexed `[step][layer]`. Returns the top-layer output per step,
    /// the final per-layer states and the caches.
    #[allow(clippy::type_complexity)]
    pub fn forward(
        &self,
        inputs: &[Vec<T>],
        init: &[Vec<T>],
        masks: Option<&[Vec<Vec<T>>]>,
    ) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>, GruStackCache<T>)> {
        if init.len() != self.layers.len() {
            return Err(Error::dim(format!(
                "{} initial states for {} layers",
                init.len(),
                self.layers.len()
            )));
        }
        let mut states = init.to_vec();
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let mut input = x.clone();
            let mut caches = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate() {
                let mask = masks.map(|m| m[t][l].as_slice());
                let (out, cache) = gru_cell_forward(&input, &states[l], layer, mask)?;
                states[l] = out.clone();
                caches.push(cache);
                input = out;
            }
            outputs.push(input);
            steps.push(caches);
        }
        Ok((outputs, states, GruStackCache { steps }))
    }

    /// Backpropagates gradients of the top-layer outputs through time.
    /// Returns gradients for every input and for every layer's initial state.
    pub fn backward(
        &self,
        grad_outputs: &[Vec<T>],
        cache: &GruStackCache<T>,
        grads: &mut GruStack<T>,
    ) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
        if grad_outputs.len() != cache.steps.len() {
            return Err(Error::Usage(format!(
                "{} output gradients for a {}-step cache",
                grad_outputs.len(),
                cache.steps.len()
            )));
        }
        let n_layers = self.layers.len();
        let mut carry: Vec<Vec<T>> = self
            .layers
            .iter()
            .map(|l| vec![T::zero(); l.hidden_dim()])
            .collect();
        let mut grad_inputs = vec![Vec::new(); cache.steps.len()];
        for t in (0..cache.steps.len()).rev() {
            let mut from_above = grad_outputs[t].clone();
            for l in (0..n_layers).rev() {
                let g: Vec<T> = from_above
                    .iter()
                    .zip(&carry[l])
                    .map(|(&a, &b)| a + b)
                    .collect();
                let (gx, gh) =
                    gru_cell_backward(&g, &cache.steps[t][l], &self.layers[l], &mut grads.layers[l])?;
                carry[l] = gh;
                from_above = gx;
            }
            grad_inputs[t] = from_above;
        }
        Ok((grad_inputs, carry))
    }
}
