//! Intra-session GRU recommender and its inter-session extension.
//!
//! For history-aware variants the inter-session GRU runs over the user's
//! buffered session representations (oldest first, from a zero state) and
//! its final output becomes the initial hidden state of every intra-session
//! GRU layer. Stored last-hidden-state representations are constants during
//! backpropagation; average-pooled ones are recomputed from the live
//! embedding table, so the current loss reaches past-session item rows.

mod buffer;
mod params;

use std::cmp::Ordering;

use log::warn;
use rand::RngCore;

pub use buffer::{SessionRepr, UserReprBuffer};
pub use params::{ModelDims, ModelParams, Variant};

use crate::corpus::{ItemId, Session};
use crate::error::{Error, Result};
use crate::numerics::{
    gradient_check, make_dropout_mask, output_layer_backward, output_layer_forward,
    softmax_cross_entropy, DenseArray, GradCheckReport, GruStack, Real,
};

/// Training-time dropout on GRU outputs.
pub struct Dropout<'a> {
    pub keep_prob: f64,
    pub rng: &'a mut dyn RngCore,
}

#[derive(Clone, Debug)]
pub struct IntraOutput<T> {
    /// `logits[t]` scores the item following `prefix[t]`.
    pub logits: Vec<Vec<T>>,
    /// Top-layer output after each step.
    pub hidden: Vec<Vec<T>>,
    pub final_hidden: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct SessionLoss<T> {
    /// Mean cross-entropy over the session's `len - 1` targets.
    pub loss: T,
    pub grads: ModelParams<T>,
    /// Top-layer state after the last item; the LHS representation.
    pub final_hidden: Vec<T>,
    pub targets: usize,
}

fn embedding_row<T: Real>(params: &ModelParams<T>, item: ItemId) -> Result<&[T]> {
    if item.0 == 0 || item.0 as usize > params.num_items() {
        return Err(Error::Inference(format!(
            "item id {item} outside vocabulary 1..={}",
            params.num_items()
        )));
    }
    Ok(params.embeddings.row(item.0 as usize))
}

/// Mean of the embedding rows of `items`.
pub fn session_repr_avg<T: Real>(items: &[ItemId], embeddings: &DenseArray<T>) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(Error::Usage("average pooling over an empty session".into()));
    }
    let mut acc = vec![T::zero(); embeddings.cols()];
    for &item in items {
        if item.0 == 0 || item.0 as usize >= embeddings.rows() {
            return Err(Error::Inference(format!("item id {item} outside embedding table")));
        }
        for (a, &e) in acc.iter_mut().zip(embeddings.row(item.0 as usize)) {
            *a += e;
        }
    }
    let n = T::lit(items.len() as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// The final intra-session hidden state, tagged with the session start.
pub fn session_repr_lhs<T: Real>(final_hidden: &[T], session: &Session) -> SessionRepr<T> {
    SessionRepr {
        vector: final_hidden.to_vec(),
        session_start: session.start_time,
        items: session.items.clone(),
    }
}

/// Representation appended to the buffer after `session` completes.
pub fn make_repr<T: Real>(
    params: &ModelParams<T>,
    session: &Session,
    final_hidden: &[T],
) -> Result<SessionRepr<T>> {
    match params.variant {
        Variant::IiLhs => Ok(session_repr_lhs(final_hidden, session)),
        _ => Ok(SessionRepr {
            vector: session_repr_avg(&session.items, &params.embeddings)?,
            session_start: session.start_time,
            items: session.items.clone(),
        }),
    }
}

fn inter_inputs<T: Real>(buffer: &UserReprBuffer<T>, params: &ModelParams<T>) -> Result<Vec<Vec<T>>> {
    let width = params.repr_dim();
    buffer
        .iter()
        .map(|r| {
            let v = match params.variant {
                Variant::IiAp if !r.items.is_empty() => session_repr_avg(&r.items, &params.embeddings)?,
                _ => r.vector.clone(),
            };
            if v.len() != width {
                return Err(Error::Config(format!(
                    "{} expects {width}-wide session representations, got {}",
                    params.variant,
                    v.len()
                )));
            }
            Ok(v)
        })
        .collect()
}

fn stack_masks<T: Real>(
    stack: &GruStack<T>,
    steps: usize,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<Option<Vec<Vec<Vec<T>>>>> {
    let Some(d) = dropout.as_mut() else {
        return Ok(None);
    };
    if d.keep_prob >= 1.0 {
        return Ok(None);
    }
    let mut masks = Vec::with_capacity(steps);
    for _ in 0..steps {
        let per_layer = stack
            .layers
            .iter()
            .map(|l| make_dropout_mask(l.hidden_dim(), d.keep_prob, &mut d.rng))
            .collect::<Result<Vec<_>>>()?;
        masks.push(per_layer);
    }
    Ok(Some(masks))
}

/// Initial intra-session state from the user's recent sessions. Zero for
/// the plain model or an empty buffer.
pub fn inter_forward<T: Real>(buffer: &UserReprBuffer<T>, params: &ModelParams<T>) -> Result<Vec<T>> {
    let h = params.hidden_dim();
    let Some(inter) = params.inter.as_ref().filter(|_| !buffer.is_empty()) else {
        return Ok(vec![T::zero(); h]);
    };
    let inputs = inter_inputs(buffer, params)?;
    let init = vec![vec![T::zero(); h]; inter.layers.len()];
    let (outs, _, _) = inter.forward(&inputs, &init, None)?;
    Ok(outs.last().cloned().unwrap_or_else(|| vec![T::zero(); h]))
}

/// Runs the intra-session GRU over `prefix` from `h0`, producing one logit
/// vector per consumed item.
pub fn intra_forward<T: Real>(
    prefix: &[ItemId],
    h0: &[T],
    params: &ModelParams<T>,
    mut dropout: Option<Dropout<'_>>,
) -> Result<IntraOutput<T>> {
    if prefix.is_empty() {
        return Err(Error::Usage("intra_forward needs at least one item".into()));
    }
    if h0.len() != params.hidden_dim() {
        return Err(Error::dim(format!(
            "initial state has width {}, model hidden width is {}",
            h0.len(),
            params.hidden_dim()
        )));
    }
    let inputs = prefix
        .iter()
        .map(|&i| embedding_row(params, i).map(<[T]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let masks = stack_masks(&params.intra, inputs.len(), &mut dropout)?;
    let init = vec![h0.to_vec(); params.intra.layers.len()];
    let (hidden, _, _) = params.intra.forward(&inputs, &init, masks.as_deref())?;
    let logits = hidden
        .iter()
        .map(|h| output_layer_forward(h, &params.output_w, params.output_b.data()))
        .collect::<Result<Vec<_>>>()?;
    let final_hidden = hidden.last().cloned().unwrap();
    Ok(IntraOutput {
        logits,
        hidden,
        final_hidden,
    })
}

/// Top `k` items by score, ties broken by ascending id.
pub fn top_k<T: Real>(scores: &[T], k: usize) -> Vec<(ItemId, T)> {
    let k = k.min(scores.len());
    let cmp = |a: &(usize, T), b: &(usize, T)| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    let mut idx: Vec<(usize, T)> = scores.iter().copied().enumerate().collect();
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx.into_iter().map(|(i, s)| (ItemId::from_class(i), s)).collect()
}

/// Eval-mode top-`k` recommendation for the item following `prefix`.
pub fn predict_next<T: Real>(
    buffer: &UserReprBuffer<T>,
    prefix: &[ItemId],
    k: usize,
    params: &ModelParams<T>,
) -> Result<Vec<(ItemId, T)>> {
    if k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    if k > params.num_items() {
        warn!("k = {k} exceeds the {} known items; clipping", params.num_items());
    }
    let h0 = inter_forward(buffer, params)?;
    let out = intra_forward(prefix, &h0, params, None)?;
    Ok(top_k(out.logits.last().unwrap(), k))
}

/// Mean next-item cross-entropy over one session and its gradient with
/// respect to every parameter.
pub fn session_loss_and_grads<T: Real>(
    buffer: &UserReprBuffer<T>,
    session: &[ItemId],
    params: &ModelParams<T>,
    mut dropout: Option<Dropout<'_>>,
) -> Result<SessionLoss<T>> {
    let l = session.len();
    if l < 2 {
        return Err(Error::Usage(format!("session of length {l} has no targets")));
    }
    let h = params.hidden_dim();
    let layers = params.intra.layers.len();

    let inter_pass = match params.inter.as_ref() {
        Some(inter) if !buffer.is_empty() => {
            let inputs = inter_inputs(buffer, params)?;
            let masks = stack_masks(inter, inputs.len(), &mut dropout)?;
            let init = vec![vec![T::zero(); h]; inter.layers.len()];
            let (outs, _, cache) = inter.forward(&inputs, &init, masks.as_deref())?;
            Some((outs.last().cloned().unwrap(), cache))
        }
        _ => None,
    };
    let h0 = inter_pass
        .as_ref()
        .map_or_else(|| vec![T::zero(); h], |(h0, _)| h0.clone());

    let inputs = session
        .iter()
        .map(|&i| embedding_row(params, i).map(<[T]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let masks = stack_masks(&params.intra, l, &mut dropout)?;
    let (outs, _, cache) = params
        .intra
        .forward(&inputs, &vec![h0; layers], masks.as_deref())?;

    let mut grads = params.zeros_like();
    let scale = T::lit(1.0 / (l - 1) as f64);
    let mut grad_outs = vec![vec![T::zero(); h]; l];
    let mut loss = T::zero();
    for t in 0..l - 1 {
        let logits = output_layer_forward(&outs[t], &params.output_w, params.output_b.data())?;
        let (ce, mut g) = softmax_cross_entropy(&logits, session[t + 1].class())?;
        loss += ce;
        g.iter_mut().for_each(|v| *v *= scale);
        grad_outs[t] = output_layer_backward(
            &g,
            &outs[t],
            &params.output_w,
            &mut grads.output_w,
            grads.output_b.data_mut(),
        );
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite session loss {loss}")));
    }

    let (grad_inputs, grad_init) = params.intra.backward(&grad_outs, &cache, &mut grads.intra)?;
    for (item, g) in session.iter().zip(&grad_inputs) {
        add_row(&mut grads.embeddings, item.0 as usize, g, T::one());
    }

    if let (Some((_, inter_cache)), Some(inter)) = (inter_pass, params.inter.as_ref()) {
        let mut grad_h0 = vec![T::zero(); h];
        for g in &grad_init {
            grad_h0.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
        let mut grad_top = vec![vec![T::zero(); h]; inter_cache.len()];
        *grad_top.last_mut().unwrap() = grad_h0;
        let inter_grads = grads.inter.as_mut().expect("inter grads allocated with params");
        let (grad_reprs, _) = inter.backward(&grad_top, &inter_cache, inter_grads)?;
        if params.variant == Variant::IiAp {
            for (entry, g) in buffer.iter().zip(&grad_reprs) {
                if entry.items.is_empty() {
                    continue;
                }
                let w = T::lit(1.0 / entry.items.len() as f64);
                for item in &entry.items {
                    add_row(&mut grads.embeddings, item.0 as usize, g, w);
                }
            }
        }
    }
    grads.embeddings.row_mut(0).iter_mut().for_each(|v| *v = T::zero());

    Ok(SessionLoss {
        loss,
        grads,
        final_hidden: outs[l - 1].clone(),
        targets: l - 1,
    })
}

fn add_row<T: Real>(m: &mut DenseArray<T>, row: usize, g: &[T], w: T) {
    m.row_mut(row).iter_mut().zip(g).for_each(|(a, &b)| *a += w * b);
}

/// Rebuilds a user's buffer by replaying `sessions` in order with eval-mode
/// forward passes.
pub fn replay_history<T: Real>(
    params: &ModelParams<T>,
    sessions: &[Session],
    capacity: usize,
) -> Result<UserReprBuffer<T>> {
    let mut buffer = UserReprBuffer::new(capacity);
    if !params.variant.uses_history() {
        return Ok(buffer);
    }
    for s in sessions {
        let repr = match params.variant {
            Variant::IiLhs => {
                let h0 = inter_forward(&buffer, params)?;
                let out = intra_forward(&s.items, &h0, params, None)?;
                session_repr_lhs(&out.final_hidden, s)
            }
            _ => make_repr(params, s, &[])?,
        };
        buffer.push(repr)?;
    }
    Ok(buffer)
}

/// Step-at-a-time eval-mode intra-session pass, used for teacher-forced
/// evaluation.
pub struct IntraCursor<'a, T> {
    params: &'a ModelParams<T>,
    states: Vec<Vec<T>>,
}

impl<'a, T: Real> IntraCursor<'a, T> {
    pub fn new(params: &'a ModelParams<T>, h0: &[T]) -> Self {
        IntraCursor {
            params,
            states: vec![h0.to_vec(); params.intra.layers.len()],
        }
    }

    /// Consumes `item` and returns logits for the next one.
    pub fn observe(&mut self, item: ItemId) -> Result<Vec<T>> {
        let x = embedding_row(self.params, item)?;
        let h = self.params.intra.step(x, &mut self.states)?;
        output_layer_forward(&h, &self.params.output_w, self.params.output_b.data())
    }

    pub fn hidden(&self) -> &[T] {
        self.states.last().unwrap()
    }
}

/// Finite-difference check of [`session_loss_and_grads`] over every
/// parameter array. Dropout masks are redrawn from `seed` on every
/// evaluation so the loss stays a deterministic function.
pub fn model_gradient_check(
    params: &ModelParams<f64>,
    buffer: &UserReprBuffer<f64>,
    session: &[ItemId],
    keep_prob: f64,
    seed: u64,
    step: f64,
) -> GradCheckReport {
    use rand::SeedableRng;
    let variant = params.variant;
    let point: Vec<(String, DenseArray<f64>)> = params
        .named()
        .into_iter()
        .map(|(n, a)| (n, a.clone()))
        .collect();
    gradient_check(
        |arrays| {
            let p = ModelParams::from_named(variant, arrays.to_vec()).expect("same layout");
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dropout = Dropout {
                keep_prob,
                rng: &mut rng,
            };
            let out = session_loss_and_grads(buffer, session, &p, Some(dropout)).expect("loss");
            let grads = out.grads.named().into_iter().map(|(_, a)| a.clone()).collect();
            (out.loss, grads)
        },
        &point,
        step,
    )
}
