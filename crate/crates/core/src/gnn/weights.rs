//! Portable weight document for the graph network.
//!
//! Layout of the document (JSON):
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "n_layers": 4, "S": 4, "M": 4, "N_t": 16, "N_r": 2,
//!   "activation_vocabulary": ["sigmoid", "tanh", "softplus", "identity"],
//!   "provenance": "...",
//!   "tensors": { "layer0/F_t/w0": {"shape": [1, 7], "data": [...]}, ... },
//!   "activations": { "layer0/F_t/0": "sigmoid", ... }
//! }
//! ```
//!
//! Weight matrices are `out x in`, row-major. Keys are emitted sorted.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result, WeightsError};
use crate::scalar::{lit, to_f64, Real};
use crate::scenario::ScenarioConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_LAYERS: usize = 4;
pub const HIDDEN_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    pub const VOCABULARY: [Activation; 4] =
        [Activation::Sigmoid, Activation::Tanh, Activation::Softplus, Activation::Identity];

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::VOCABULARY.into_iter().find(|a| a.tag() == tag)
    }

    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => crate::scalar::sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => crate::scalar::softplus(x),
            Activation::Identity => x,
        }
    }
}

/// One affine map followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Real> {
    /// `out x in`.
    pub w: DMatrix<T>,
    pub b: DVector<T>,
    pub act: Activation,
}

/// A feed-forward network as a sequence of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Fnn<T: Real> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Fnn<T> {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.ncols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    /// Network that returns its first `out` inputs unchanged through
    /// identity-activated layers of the given hidden widths.
    pub fn echo(input: usize, out: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(out);
        let layers = dims
            .windows(2)
            .map(|d| Dense {
                w: DMatrix::from_fn(d[1], d[0], |r, c| if r == c && r < out { T::one() } else { T::zero() }),
                b: DVector::zeros(d[1]),
                act: Activation::Identity,
            })
            .collect();
        Self { layers }
    }

    fn cast<U: Real>(&self) -> Fnn<U> {
        Fnn {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: l.w.map(|x| lit::<U>(to_f64(x))),
                    b: l.b.map(|x| lit::<U>(to_f64(x))),
                    act: l.act,
                })
                .collect(),
        }
    }
}

/// The six updaters of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Updater {
    Tx,
    Rx,
    Beta,
    Xi,
    Power,
    Filter,
}

impl Updater {
    pub const ALL: [Updater; 6] = [Updater::Tx, Updater::Rx, Updater::Beta, Updater::Xi, Updater::Power, Updater::Filter];

    pub fn name(self) -> &'static str {
        match self {
            Updater::Tx => "F_t",
            Updater::Rx => "F_r",
            Updater::Beta => "F_beta",
            Updater::Xi => "F_xi",
            Updater::Power => "F_p",
            Updater::Filter => "F_V",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|u| u.name() == name)
    }

    /// Input and output widths fixed by the message encoding.
    pub fn io(self) -> (usize, usize) {
        match self {
            Updater::Tx => (7, 1),
            Updater::Rx => (3, 1),
            Updater::Beta => (3, 1),
            Updater::Xi => (6, 2),
            Updater::Power => (3, 1),
            Updater::Filter => (4, 2),
        }
    }

    /// Hidden widths and activations of the reference architecture.
    fn reference(self) -> (Vec<usize>, Vec<Activation>) {
        use Activation::*;
        let h = HIDDEN_WIDTH;
        match self {
            Updater::Tx | Updater::Rx => (vec![], vec![Sigmoid]),
            Updater::Beta | Updater::Power => (vec![h, h], vec![Softplus, Softplus, Softplus]),
            Updater::Xi => (vec![h, h], vec![Tanh, Tanh, Identity]),
            Updater::Filter => (vec![h, h], vec![Softplus, Softplus, Identity]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T: Real> {
    pub f_t: Fnn<T>,
    pub f_r: Fnn<T>,
    pub f_beta: Fnn<T>,
    pub f_xi: Fnn<T>,
    pub f_p: Fnn<T>,
    pub f_v: Fnn<T>,
}

impl<T: Real> LayerWeights<T> {
    pub fn get(&self, u: Updater) -> &Fnn<T> {
        match u {
            Updater::Tx => &self.f_t,
            Updater::Rx => &self.f_r,
            Updater::Beta => &self.f_beta,
            Updater::Xi => &self.f_xi,
            Updater::Power => &self.f_p,
            Updater::Filter => &self.f_v,
        }
    }

    fn get_mut(&mut self, u: Updater) -> &mut Fnn<T> {
        match u {
            Updater::Tx => &mut self.f_t,
            Updater::Rx => &mut self.f_r,
            Updater::Beta => &mut self.f_beta,
            Updater::Xi => &mut self.f_xi,
            Updater::Power => &mut self.f_p,
            Updater::Filter => &mut self.f_v,
        }
    }

    /// Every updater echoes its own previous value.
    pub fn echo() -> Self {
        let mk = |u: Updater| {
            let (i, o) = u.io();
            let hidden = u.reference().0;
            Fnn::echo(i, o, &hidden)
        };
        Self {
            f_t: mk(Updater::Tx),
            f_r: mk(Updater::Rx),
            f_beta: mk(Updater::Beta),
            f_xi: mk(Updater::Xi),
            f_p: mk(Updater::Power),
            f_v: mk(Updater::Filter),
        }
    }
}

/// Scenario dimensions bound by a weight set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnDims {
    pub segments: usize,
    pub pas_per_segment: usize,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl GnnDims {
    pub fn of<T: Real>(config: &ScenarioConfig<T>) -> Self {
        Self {
            segments: config.segments,
            pas_per_segment: config.pas_per_segment,
            n_tx: config.n_tx,
            n_rx: config.n_rx,
        }
    }

    pub fn check<T: Real>(&self, config: &ScenarioConfig<T>) -> Result<()> {
        let other = Self::of(config);
        if *self != other {
            return Err(Error::Dimension(format!("weights bound to {self:?}, scenario has {other:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnWeights<T: Real> {
    pub dims: GnnDims,
    pub layers: Vec<LayerWeights<T>>,
    pub provenance: String,
}

impl<T: Real> GnnWeights<T> {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Reference architecture with Glorot-uniform weights and zero biases.
    pub fn seeded_init(dims: GnnDims, n_layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..n_layers)
            .map(|_| {
                let mut lw = LayerWeights::echo();
                for u in Updater::ALL {
                    let (input, out) = u.io();
                    let (hidden, acts) = u.reference();
                    let mut widths = vec![input];
                    widths.extend(hidden);
                    widths.push(out);
                    let layers = widths
                        .windows(2)
                        .zip(acts)
                        .map(|(d, act)| {
                            let bound = (6.0 / (d[0] + d[1]) as f64).sqrt();
                            let w = DMatrix::from_fn(d[1], d[0], |_, _| {
                                lit::<T>((2.0 * rng.random::<f64>() - 1.0) * bound)
                            });
                            Dense { w, b: DVector::zeros(d[1]), act }
                        })
                        .collect();
                    *lw.get_mut(u) = Fnn { layers };
                }
                lw
            })
            .collect();
        Self { dims, layers, provenance: format!("seeded_init(seed={seed})") }
    }

    /// Identity-bypass weights: every updater returns its previous value.
    pub fn echo(dims: GnnDims, n_layers: usize) -> Self {
        Self { dims, layers: vec![LayerWeights::echo(); n_layers], provenance: "echo".into() }
    }

    pub fn cast<U: Real>(&self) -> GnnWeights<U> {
        GnnWeights {
            dims: self.dims,
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    f_t: l.f_t.cast(),
                    f_r: l.f_r.cast(),
                    f_beta: l.f_beta.cast(),
                    f_xi: l.f_xi.cast(),
                    f_p: l.f_p.cast(),
                    f_v: l.f_v.cast(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

fn tensor_json<T: Real>(shape: &[usize], data: impl Iterator<Item = T>) -> Value {
    json!({ "shape": shape, "data": data.map(to_f64).collect::<Vec<f64>>() })
}

/// Serializes weights to the document format.
pub fn save_weights<T: Real>(weights: &GnnWeights<T>) -> String {
    let mut tensors = Map::new();
    let mut acts = Map::new();
    for (l, lw) in weights.layers.iter().enumerate() {
        for u in Updater::ALL {
            for (d, dense) in lw.get(u).layers.iter().enumerate() {
                let prefix = format!("layer{l}/{}", u.name());
                let (r, c) = dense.w.shape();
                // row-major
                let rows = (0..r).flat_map(|i| (0..c).map(move |j| (i, j)));
                tensors.insert(format!("{prefix}/w{d}"), tensor_json(&[r, c], rows.map(|(i, j)| dense.w[(i, j)])));
                tensors.insert(format!("{prefix}/b{d}"), tensor_json(&[r], dense.b.iter().copied()));
                acts.insert(format!("{prefix}/{d}"), Value::String(dense.act.tag().into()));
            }
        }
    }
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "n_layers": weights.n_layers(),
        "S": weights.dims.segments,
        "M": weights.dims.pas_per_segment,
        "N_t": weights.dims.n_tx,
        "N_r": weights.dims.n_rx,
        "activation_vocabulary": Activation::VOCABULARY.iter().map(|a| a.tag()).collect::<Vec<_>>(),
        "provenance": weights.provenance,
        "tensors": tensors,
        "activations": acts,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("weight document serializes");
    text.push('\n');
    text
}

pub fn save_weights_file<T: Real>(weights: &GnnWeights<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_weights(weights))?;
    Ok(())
}

fn malformed(msg: impl Into<String>) -> WeightsError {
    WeightsError::Malformed(msg.into())
}

fn header_usize(obj: &Map<String, Value>, key: &str) -> Result<usize, WeightsError> {
    obj.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| malformed(format!("header field `{key}` missing or not a nonnegative integer")))
}

/// Splits `layer{l}/{F}/{rest}` into its parts.
fn parse_name(name: &str) -> Option<(usize, Updater, &str)> {
    let mut parts = name.split('/');
    let layer = parts.next()?.strip_prefix("layer")?;
    if layer.is_empty() || !layer.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let u = Updater::from_name(parts.next()?)?;
    let rest = parts.next()?;
    if parts.next().is_some() {
        return None;
    }
    Some((layer.parse().ok()?, u, rest))
}

fn parse_depth(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        None
    } else {
        s.parse().ok()
    }
}

struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn parse_tensor(name: &str, v: &Value) -> Result<RawTensor, WeightsError> {
    let obj = v.as_object().ok_or_else(|| malformed(format!("tensor `{name}` is not an object")))?;
    if let Some(k) = obj.keys().find(|k| *k != "shape" && *k != "data") {
        return Err(malformed(format!("tensor `{name}` has unexpected field `{k}`")));
    }
    let shape = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(format!("tensor `{name}` lacks a shape array")))?
        .iter()
        .map(|x| x.as_u64().map(|x| x as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| malformed(format!("tensor `{name}` shape is not integral")))?;
    let data = obj
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(format!("tensor `{name}` lacks a data array")))?
        .iter()
        .map(Value::as_f64)
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| malformed(format!("tensor `{name}` data is not numeric")))?;
    if shape.iter().product::<usize>() != data.len() {
        return Err(WeightsError::Dimension(format!(
            "tensor `{name}` shape {shape:?} does not match {} values",
            data.len()
        )));
    }
    Ok(RawTensor { shape, data })
}

/// Parses and validates a weight document.
pub fn load_weights<T: Real>(text: &str) -> Result<GnnWeights<T>, WeightsError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let obj = doc.as_object().ok_or_else(|| malformed("document is not an object"))?;
    const KEYS: [&str; 10] = [
        "format_version",
        "n_layers",
        "S",
        "M",
        "N_t",
        "N_r",
        "activation_vocabulary",
        "provenance",
        "tensors",
        "activations",
    ];
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(malformed(format!("unknown header field `{k}`")));
    }
    let version = obj
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| malformed("format_version missing"))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(WeightsError::Version { found: version as u32, expected: FORMAT_VERSION });
    }
    let n_layers = header_usize(obj, "n_layers")?;
    let dims = GnnDims {
        segments: header_usize(obj, "S")?,
        pas_per_segment: header_usize(obj, "M")?,
        n_tx: header_usize(obj, "N_t")?,
        n_rx: header_usize(obj, "N_r")?,
    };
    let vocab = obj
        .get("activation_vocabulary")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("activation_vocabulary missing"))?;
    for v in vocab {
        let tag = v.as_str().ok_or_else(|| malformed("activation_vocabulary entry is not a string"))?;
        if Activation::from_tag(tag).is_none() {
            return Err(WeightsError::UnknownActivation(tag.into()));
        }
    }
    let allowed: Vec<&str> = vocab.iter().filter_map(Value::as_str).collect();
    let provenance = match obj.get("provenance") {
        None => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(malformed("provenance is not a string")),
    };
    let tensors = obj
        .get("tensors")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("tensors missing"))?;
    let acts = obj
        .get("activations")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("activations missing"))?;

    // (layer, updater index, depth) -> pieces
    let mut ws: BTreeMap<(usize, usize, usize), RawTensor> = BTreeMap::new();
    let mut bs: BTreeMap<(usize, usize, usize), RawTensor> = BTreeMap::new();
    let mut tags: BTreeMap<(usize, usize, usize), Activation> = BTreeMap::new();
    let uidx = |u: Updater| Updater::ALL.iter().position(|x| *x == u).unwrap_or(0);

    for (name, v) in tensors {
        let unknown = || WeightsError::UnknownTensor(name.clone());
        let (l, u, rest) = parse_name(name).ok_or_else(unknown)?;
        if l >= n_layers {
            return Err(unknown());
        }
        let (is_w, depth) = match (rest.strip_prefix('w'), rest.strip_prefix('b')) {
            (Some(d), _) => (true, d),
            (_, Some(d)) => (false, d),
            _ => return Err(unknown()),
        };
        let depth = parse_depth(depth).ok_or_else(unknown)?;
        let t = parse_tensor(name, v)?;
        if is_w {
            ws.insert((l, uidx(u), depth), t);
        } else {
            bs.insert((l, uidx(u), depth), t);
        }
    }
    for (name, v) in acts {
        let unknown = || WeightsError::UnknownTensor(name.clone());
        let (l, u, rest) = parse_name(name).ok_or_else(unknown)?;
        let depth = parse_depth(rest).ok_or_else(unknown)?;
        if l >= n_layers {
            return Err(unknown());
        }
        let tag = v.as_str().ok_or_else(|| malformed(format!("activation `{name}` is not a string")))?;
        let act = Activation::from_tag(tag)
            .filter(|_| allowed.contains(&tag))
            .ok_or_else(|| WeightsError::UnknownActivation(tag.into()))?;
        tags.insert((l, uidx(u), depth), act);
    }

    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let mut lw = LayerWeights::<T>::echo();
        for u in Updater::ALL {
            let ui = uidx(u);
            let prefix = format!("layer{l}/{}", u.name());
            let depth_count = ws.range((l, ui, 0)..(l, ui, usize::MAX)).count();
            if depth_count == 0 {
                return Err(WeightsError::MissingTensor(format!("{prefix}/w0")));
            }
            let (input, out) = u.io();
            let mut prev = input;
            let mut dense = Vec::with_capacity(depth_count);
            for d in 0..depth_count {
                let w = ws.get(&(l, ui, d)).ok_or_else(|| WeightsError::MissingTensor(format!("{prefix}/w{d}")))?;
                let b = bs.get(&(l, ui, d)).ok_or_else(|| WeightsError::MissingTensor(format!("{prefix}/b{d}")))?;
                let act = *tags.get(&(l, ui, d)).ok_or_else(|| WeightsError::MissingTensor(format!("{prefix}/{d}")))?;
                if w.shape.len() != 2 || w.shape[1] != prev {
                    return Err(WeightsError::Dimension(format!(
                        "{prefix}/w{d} has shape {:?}, expected [_, {prev}]",
                        w.shape
                    )));
                }
                let rows = w.shape[0];
                if b.shape != [rows] {
                    return Err(WeightsError::Dimension(format!(
                        "{prefix}/b{d} has shape {:?}, expected [{rows}]",
                        b.shape
                    )));
                }
                dense.push(Dense {
                    w: DMatrix::from_row_iterator(rows, prev, w.data.iter().map(|&x| lit::<T>(x))),
                    b: DVector::from_iterator(rows, b.data.iter().map(|&x| lit::<T>(x))),
                    act,
                });
                prev = rows;
            }
            if prev != out {
                return Err(WeightsError::Dimension(format!("{prefix} outputs {prev} values, expected {out}")));
            }
            *lw.get_mut(u) = Fnn { layers: dense };
        }
        layers.push(lw);
    }
    // stray biases or activations beyond the last weight matrix
    for key in bs.keys().chain(tags.keys()) {
        if !ws.contains_key(key) {
            let (l, ui, d) = *key;
            return Err(WeightsError::UnknownTensor(format!("layer{l}/{}/{d}", Updater::ALL[ui].name())));
        }
    }
    Ok(GnnWeights { dims, layers, provenance })
}

pub fn load_weights_file<T: Real>(path: impl AsRef<Path>) -> Result<GnnWeights<T>> {
    let text = std::fs::read_to_string(path)?;
    Ok(load_weights(&text)?)
}
