use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, GruParams, GruStack, Real, GRU_FIELDS};

/// Which model is being trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Plain intra-session GRU, zero initial state in every session.
    IntraOnly,
    /// Inter-session GRU over average-pooled item embeddings of past sessions.
    IiAp,
    /// Inter-session GRU over the last intra-session hidden state of past
    /// sessions.
    IiLhs,
}

impl Variant {
    pub fn uses_history(self) -> bool {
        !matches!(self, Variant::IntraOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::IntraOnly => "rnn",
            Variant::IiAp => "ii-rnn-ap",
            Variant::IiLhs => "ii-rnn-lhs",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" | "intra" | "intra-only" => Ok(Variant::IntraOnly),
            "ii-rnn-ap" | "ii-ap" | "ap" => Ok(Variant::IiAp),
            "ii-rnn-lhs" | "ii-lhs" | "lhs" => Ok(Variant::IiLhs),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected rnn, ii-rnn-ap or ii-rnn-lhs)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub num_items: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
}

/// All trainable arrays of one model.
///
/// `embeddings` has `num_items + 1` rows; row 0 is padding and never
/// receives gradient. The output layer scores items `1..=num_items` in rows
/// `0..num_items`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub variant: Variant,
    pub embeddings: DenseArray<T>,
    pub intra: GruStack<T>,
    pub inter: Option<GruStack<T>>,
    pub output_w: DenseArray<T>,
    pub output_b: DenseArray<T>,
}

fn stack<T: Real>(input: usize, hidden: usize, layers: usize, f: &mut impl FnMut(usize, usize) -> GruParams<T>) -> GruStack<T> {
    GruStack {
        layers: (0..layers)
            .map(|l| f(if l == 0 { input } else { hidden }, hidden))
            .collect(),
    }
}

impl<T: Real> ModelParams<T> {
    /// Uniform(-scale, scale) matrices and embeddings, zero biases.
    pub fn init<R: Rng + ?Sized>(variant: Variant, dims: ModelDims, scale: f64, rng: &mut R) -> Result<Self> {
        if dims.num_items == 0 || dims.embed_dim == 0 || dims.hidden_dim == 0 || dims.layers == 0 {
            return Err(Error::Config(format!("all model dimensions must be positive: {dims:?}")));
        }
        let (n, d, h) = (dims.num_items, dims.embed_dim, dims.hidden_dim);
        let mut embeddings = DenseArray::uniform(&[n + 1, d], scale, rng);
        embeddings.row_mut(0).iter_mut().for_each(|v| *v = T::zero());
        let intra = stack(d, h, dims.layers, &mut |i, o| GruParams::uniform(i, o, scale, rng));
        let inter = match variant {
            Variant::IntraOnly => None,
            Variant::IiAp => Some(stack(d, h, dims.layers, &mut |i, o| GruParams::uniform(i, o, scale, rng))),
            Variant::IiLhs => Some(stack(h, h, dims.layers, &mut |i, o| GruParams::uniform(i, o, scale, rng))),
        };
        let output_w = DenseArray::uniform(&[n, h], scale, rng);
        Ok(ModelParams {
            variant,
            embeddings,
            intra,
            inter,
            output_w,
            output_b: DenseArray::zeros(&[n]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            variant: self.variant,
            embeddings: DenseArray::zeros(self.embeddings.dims()),
            intra: self.intra.zeros_like(),
            inter: self.inter.as_ref().map(GruStack::zeros_like),
            output_w: DenseArray::zeros(self.output_w.dims()),
            output_b: DenseArray::zeros(self.output_b.dims()),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            num_items: self.num_items(),
            embed_dim: self.embed_dim(),
            hidden_dim: self.hidden_dim(),
            layers: self.intra.layers.len(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.output_b.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.intra.hidden_dim()
    }

    /// Width of a stored session representation.
    pub fn repr_dim(&self) -> usize {
        match self.variant {
            Variant::IiLhs => self.hidden_dim(),
            _ => self.embed_dim(),
        }
    }

    pub fn named(&self) -> Vec<(String, &DenseArray<T>)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        push_stack_names("intra", &self.intra, &mut out);
        if let Some(inter) = &self.inter {
            push_stack_names("inter", inter, &mut out);
        }
        out.push(("output.w".to_string(), &self.output_w));
        out.push(("output.b".to_string(), &self.output_b));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut DenseArray<T>> {
        let mut out = vec![&mut self.embeddings];
        for layer in self.intra.layers.iter_mut() {
            out.extend(layer.arrays_mut());
        }
        if let Some(inter) = self.inter.as_mut() {
            for layer in inter.layers.iter_mut() {
                out.extend(layer.arrays_mut());
            }
        }
        out.push(&mut self.output_w);
        out.push(&mut self.output_b);
        out
    }

    /// Rebuilds a model from arrays in [`ModelParams::named`] order.
    pub fn from_named(variant: Variant, arrays: Vec<(String, DenseArray<T>)>) -> Result<Self> {
        let mut cur = NamedCursor(arrays.into());
        let embeddings = cur.take("embeddings")?;
        let intra = cur.take_stack("intra")?;
        let inter = if variant.uses_history() {
            Some(cur.take_stack("inter")?)
        } else {
            None
        };
        let output_w = cur.take("output.w")?;
        let output_b = cur.take("output.b")?;
        if let Some((name, _)) = cur.0.front() {
            return Err(Error::Format(format!("unexpected extra array {name}")));
        }
        let p = ModelParams {
            variant,
            embeddings,
            intra,
            inter,
            output_w,
            output_b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d, h) = (self.num_items(), self.embed_dim(), self.hidden_dim());
        if self.embeddings.dims() != [n + 1, d] {
            return Err(Error::dim(format!("embeddings {:?}, want [{}, {d}]", self.embeddings.dims(), n + 1)));
        }
        if self.output_w.dims() != [n, h] {
            return Err(Error::dim(format!("output.w {:?}, want [{n}, {h}]", self.output_w.dims())));
        }
        check_stack("intra", &self.intra, d, h)?;
        match (&self.inter, self.variant) {
            (None, Variant::IntraOnly) => {}
            (Some(s), Variant::IiAp | Variant::IiLhs) => {
                check_stack("inter", s, self.repr_dim(), h)?;
                if s.layers.len() != self.intra.layers.len() {
                    return Err(Error::Config("inter and intra GRU depth differ".into()));
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "variant {} does not match presence of inter GRU",
                    self.variant
                )))
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, a)| a.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let cast_stack = |s: &GruStack<T>| GruStack {
            layers: s
                .layers
                .iter()
                .map(|l| GruParams::from_arrays(l.arrays().iter().map(|a| a.cast()).collect()).unwrap())
                .collect(),
        };
        ModelParams {
            variant: self.variant,
            embeddings: self.embeddings.cast(),
            intra: cast_stack(&self.intra),
            inter: self.inter.as_ref().map(cast_stack),
            output_w: self.output_w.cast(),
            output_b: self.output_b.cast(),
        }
    }

    /// `self += alpha * other`, array by array.
    pub fn axpy(&mut self, alpha: T, other: &ModelParams<T>) -> Result<()> {
        let others: Vec<&DenseArray<T>> = other.named().into_iter().map(|(_, a)| a).collect();
        let mine = self.arrays_mut();
        if mine.len() != others.len() {
            return Err(Error::dim("parameter sets differ in array count"));
        }
        for (a, b) in mine.into_iter().zip(others) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }
}

fn push_stack_names<'a, T: Real>(prefix: &str, s: &'a GruStack<T>, out: &mut Vec<(String, &'a DenseArray<T>)>) {
    for (l, layer) in s.layers.iter().enumerate() {
        for (field, a) in GRU_FIELDS.iter().zip(layer.arrays()) {
            out.push((format!("{prefix}.{l}.{field}"), a));
        }
    }
}

fn check_stack<T: Real>(name: &str, s: &GruStack<T>, input: usize, hidden: usize) -> Result<()> {
    for (l, layer) in s.layers.iter().enumerate() {
        layer.validate()?;
        let want_in = if l == 0 { input } else { hidden };
        if layer.input_dim() != want_in || layer.hidden_dim() != hidden {
            return Err(Error::Config(format!(
                "{name} layer {l} maps {} -> {}, expected {want_in} -> {hidden}",
                layer.input_dim(),
                layer.hidden_dim()
            )));
        }
    }
    Ok(())
}

struct NamedCursor<T>(VecDeque<(String, DenseArray<T>)>);

impl<T: Real> NamedCursor<T> {
    fn take(&mut self, want: &str) -> Result<DenseArray<T>> {
        match self.0.pop_front() {
            Some((name, a)) if name == want => Ok(a),
            Some((name, _)) => Err(Error::Format(format!("expected array {want}, found {name}"))),
            None => Err(Error::Format(format!("missing array {want}"))),
        }
    }

    fn take_stack(&mut self, prefix: &str) -> Result<GruStack<T>> {
        let mut layers = Vec::new();
        loop {
            let l = layers.len();
            let first = format!("{prefix}.{l}.w_z");
            if !self.0.front().is_some_and(|(n, _)| *n == first) {
                break;
            }
            let arrays = GRU_FIELDS
                .iter()
                .map(|f| self.take(&format!("{prefix}.{l}.{f}")))
                .collect::<Result<Vec<_>>>()?;
            layers.push(GruParams::from_arrays(arrays)?);
        }
        if layers.is_empty() {
            return Err(Error::Format(format!("no {prefix} GRU layers")));
        }
        Ok(GruStack { layers })
    }
}
