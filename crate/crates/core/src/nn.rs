//! Named parameter storage and the layer helpers shared by both networks.
//!
//! Layers create their parameters lazily: running a forward pass through a
//! [`Ctx`] built with [`Ctx::initializing`] fills an empty store using shapes
//! inferred from the actual inputs, so the architecture is written once.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvGeom, Grads, Graph, Var};
use crate::error::{shape_err, Result, SscError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param { value, frozen: false });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.frozen)
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for (k, p) in self.params.iter_mut() {
            if k.starts_with(prefix) {
                p.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Copy of the parameters under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Adds every entry of `other`, replacing existing names.
    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Overwrites values of existing entries from `other`; every name in
    /// `other` matching `prefix` must exist here with the same shape.
    pub fn load_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (k, p) in self.params.iter_mut().filter(|(k, _)| k.starts_with(prefix)) {
            let src = other.get(k).ok_or_else(|| SscError::MissingParameter(k.clone()))?;
            if src.shape() != p.value.shape() {
                return Err(shape_err(format!(
                    "parameter {k}: expected {:?}, found {:?}",
                    p.value.shape(),
                    src.shape()
                )));
            }
            p.value = src.clone();
            n += 1;
        }
        Ok(n)
    }

    pub fn zero_all(&mut self) {
        for p in self.params.values_mut() {
            p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Forward-pass context: a graph plus the parameters bound into it.
pub struct Ctx<'a> {
    pub graph: Graph,
    store: Cow<'a, ParamStore>,
    init: Option<ChaCha8Rng>,
    bound: BTreeMap<String, Var>,
    constant_prefixes: Vec<String>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Ctx {
            graph: Graph::new(),
            store: Cow::Borrowed(store),
            init: None,
            bound: BTreeMap::new(),
            constant_prefixes: Vec::new(),
        }
    }

    /// Context that creates missing parameters with He-uniform weights and
    /// zero biases drawn from `rng`.
    pub fn initializing(rng: ChaCha8Rng) -> Ctx<'static> {
        Ctx {
            graph: Graph::new(),
            store: Cow::Owned(ParamStore::new()),
            init: Some(rng),
            bound: BTreeMap::new(),
            constant_prefixes: Vec::new(),
        }
    }

    /// Context over its own copy of `store`.
    pub fn owned(store: ParamStore) -> Ctx<'static> {
        Ctx {
            graph: Graph::new(),
            store: Cow::Owned(store),
            init: None,
            bound: BTreeMap::new(),
            constant_prefixes: Vec::new(),
        }
    }

    /// Mutable access to the parameters; values already bound into the
    /// graph are not affected.
    pub fn store_mut(&mut self) -> &mut ParamStore {
        self.store.to_mut()
    }

    /// Parameters under `prefix` enter the graph as constants.
    pub fn treat_as_constant(&mut self, prefix: &str) {
        self.constant_prefixes.push(prefix.to_string());
    }

    pub fn into_store(self) -> ParamStore {
        self.store.into_owned()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    /// Binds `name`, creating it with `shape` and fan-in `fan_in` (0 means a
    /// zero-initialised bias) when initialising.
    pub fn param(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        if !self.store.contains(name) {
            let Some(rng) = self.init.as_mut() else {
                return Err(SscError::MissingParameter(name.to_string()));
            };
            let n: usize = shape.iter().product();
            let t = if fan_in == 0 {
                Tensor::zeros(shape)
            } else {
                let a = (6.0 / fan_in as f64).sqrt();
                Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-a..a)).collect())?
            };
            self.store.to_mut().insert(name, t);
        }
        let t = self.store.get(name).expect("present");
        if t.shape() != shape {
            return Err(shape_err(format!("parameter {name}: expected {shape:?}, stored {:?}", t.shape())));
        }
        let t = t.clone();
        let constant =
            self.store.is_frozen(name) || self.constant_prefixes.iter().any(|p| name.starts_with(p.as_str()));
        let v = if constant { self.graph.constant(t) } else { self.graph.param(t) };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every trainable bound parameter, zero where unreached.
    pub fn param_grads(&self, grads: &Grads) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter(|(_, &v)| self.graph.needs_grad(v))
            .map(|(k, &v)| (k.clone(), grads.get_or_zeros(v, self.graph.value(v))))
            .collect()
    }

    pub fn bound_var(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    /// Convolution with weight `[c_out, c_in, k...]` and bias.
    pub fn conv(&mut self, name: &str, x: Var, c_out: usize, geom: ConvGeom) -> Result<Var> {
        let c_in = self.value(x).shape()[0];
        let k = geom.kernel;
        let w = self.param(&format!("{name}.w"), &[c_out, c_in, k[0], k[1], k[2]], c_in * geom.taps())?;
        let b = self.param(&format!("{name}.b"), &[c_out], 0)?;
        self.graph.conv(x, w, Some(b), geom)
    }

    pub fn conv_relu(&mut self, name: &str, x: Var, c_out: usize, geom: ConvGeom) -> Result<Var> {
        let y = self.conv(name, x, c_out, geom)?;
        Ok(self.graph.relu(y))
    }

    /// Transposed convolution with weight `[c_in, c_out, k...]` and bias.
    pub fn deconv(&mut self, name: &str, x: Var, c_out: usize, geom: ConvGeom) -> Result<Var> {
        let c_in = self.value(x).shape()[0];
        let k = geom.kernel;
        let s: usize = geom.stride.iter().product();
        let fan_in = (c_in * geom.taps() / s).max(1);
        let w = self.param(&format!("{name}.w"), &[c_in, c_out, k[0], k[1], k[2]], fan_in)?;
        let b = self.param(&format!("{name}.b"), &[c_out], 0)?;
        self.graph.conv_transpose(x, w, Some(b), geom)
    }

    pub fn linear(&mut self, name: &str, x: Var, out: usize) -> Result<Var> {
        let n = self.value(x).len();
        let w = self.param(&format!("{name}.w"), &[out, n], n)?;
        let b = self.param(&format!("{name}.b"), &[out], 0)?;
        self.graph.linear(x, w, b)
    }

    /// Dimensional-decomposition residual block: 1x1x1 reduce, three 1D
    /// convolutions along x, y and z (dilation `d`, stride `s`), 1x1x1
    /// expand, plus an identity or strided 1x1x1 shortcut, then ReLU.
    pub fn ddr(&mut self, name: &str, x: Var, c_out: usize, d: usize, s: [usize; 3]) -> Result<Var> {
        let c_in = self.value(x).shape()[0];
        let r = (c_out / 4).max(2);
        let mut h = self.conv_relu(&format!("{name}.reduce"), x, r, ConvGeom::pointwise(1))?;
        for (a, tag) in ["x", "y", "z"].iter().enumerate() {
            h = self.conv_relu(&format!("{name}.{tag}"), h, r, ConvGeom::axis(a, d, s[a]))?;
        }
        let h = self.conv(&format!("{name}.expand"), h, c_out, ConvGeom::pointwise(1))?;
        let skip = if c_in == c_out && s == [1, 1, 1] {
            x
        } else {
            let mut g = ConvGeom::pointwise(1);
            g.stride = s;
            self.conv(&format!("{name}.short"), x, c_out, g)?
        };
        let y = self.graph.add(h, skip)?;
        Ok(self.graph.relu(y))
    }
}

/// 2D convolution geometry on `[C, 1, H, W]` maps.
pub fn geom2d(k: usize, s: usize) -> ConvGeom {
    ConvGeom {
        kernel: [1, k, k],
        stride: [1, s, s],
        dilation: [1; 3],
        padding: [0, k / 2, k / 2],
    }
}

/// Kernel-2 stride-2 geometry used for exact 2x down/upsampling.
pub fn geom_k2s2() -> ConvGeom {
    ConvGeom {
        kernel: [2; 3],
        stride: [2; 3],
        dilation: [1; 3],
        padding: [0; 3],
    }
}
