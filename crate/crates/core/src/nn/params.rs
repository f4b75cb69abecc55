use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScheme {
    XavierUniform,
    /// Xavier-uniform with the adaLN gate columns set to zero.
    XavierZeroGates,
    Zeros,
    Ones,
}

/// Named model tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    schemes: Vec<InitScheme>,
    index: HashMap<String, usize>,
    pub seed: u64,
}

/// `(name, rows, cols, scheme)` for every tensor of a configuration.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, usize, usize, InitScheme)> {
    use InitScheme::*;
    let (dm, dff) = (cfg.d_model, cfg.d_ff);
    let mut v = Vec::new();
    let lin = |v: &mut Vec<_>, name: &str, i: usize, o: usize, w: InitScheme| {
        v.push((format!("{name}.w"), i, o, w));
        v.push((format!("{name}.b"), 1, o, Zeros));
    };
    let ln = |v: &mut Vec<(String, usize, usize, InitScheme)>, name: &str| {
        v.push((format!("{name}.g"), 1, dm, Ones));
        v.push((format!("{name}.b"), 1, dm, Zeros));
    };
    lin(&mut v, "enc.embed", cfg.input_dim, dm, XavierUniform);
    for l in 0..cfg.n_encoder_layers {
        ln(&mut v, &format!("enc.{l}.ln1"));
        lin(&mut v, &format!("enc.{l}.attn.qkv"), dm, 3 * dm, XavierUniform);
        lin(&mut v, &format!("enc.{l}.attn.out"), dm, dm, XavierUniform);
        ln(&mut v, &format!("enc.{l}.ln2"));
        lin(&mut v, &format!("enc.{l}.ff.w1"), dm, dff, XavierUniform);
        lin(&mut v, &format!("enc.{l}.ff.w2"), dff, dm, XavierUniform);
    }
    ln(&mut v, "enc.ln_f");
    for i in 0..cfg.n_time_layers {
        lin(&mut v, &format!("time.{i}"), if i == 0 { 1 } else { dm }, dm, XavierUniform);
    }
    lin(&mut v, "dec.in", cfg.latent_dim, dm, XavierUniform);
    for b in 0..cfg.n_decoder_blocks {
        lin(&mut v, &format!("dec.{b}.ada"), dm, 6 * dm, XavierZeroGates);
        lin(&mut v, &format!("dec.{b}.attn.q"), dm, dm, XavierUniform);
        lin(&mut v, &format!("dec.{b}.attn.kv"), dm, 2 * dm, XavierUniform);
        lin(&mut v, &format!("dec.{b}.attn.out"), dm, dm, XavierUniform);
        lin(&mut v, &format!("dec.{b}.ff.w1"), dm, dff, XavierUniform);
        lin(&mut v, &format!("dec.{b}.ff.w2"), dff, dm, XavierUniform);
    }
    for h in 0..cfg.n_head_layers {
        lin(&mut v, &format!("head.{h}.ada"), dm, 3 * dm, XavierZeroGates);
        lin(&mut v, &format!("head.{h}.ff.w1"), dm, dff, XavierUniform);
        lin(&mut v, &format!("head.{h}.ff.w2"), dff, dm, XavierUniform);
    }
    lin(&mut v, "head.final.ada", dm, 2 * dm, XavierUniform);
    lin(&mut v, "head.out", dm, cfg.output_dim(), Zeros);
    v
}

/// Gate chunks inside an adaLN projection of width `cols`: the decoder block
/// emits (shift, scale, gate) twice, a head layer once.
fn gate_columns(cols: usize, dm: usize) -> Vec<std::ops::Range<usize>> {
    match cols / dm {
        6 => vec![2 * dm..3 * dm, 5 * dm..6 * dm],
        3 => vec![2 * dm..3 * dm],
        _ => vec![],
    }
}

impl<T: Real> ParamStore<T> {
    /// Fresh initialization: Xavier-uniform weights, zero biases, unit
    /// layer-norm gains, zero adaLN gates and a zero output projection.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut schemes = Vec::new();
        for (name, r, c, scheme) in layout(cfg) {
            let t = match scheme {
                InitScheme::Zeros => Tensor::zeros(r, c),
                InitScheme::Ones => Tensor::filled(r, c, T::one()),
                InitScheme::XavierUniform | InitScheme::XavierZeroGates => {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    let mut t = Tensor::from_vec(
                        r,
                        c,
                        (0..r * c).map(|_| T::c(rng.random_range(-bound..bound))).collect(),
                    );
                    if scheme == InitScheme::XavierZeroGates {
                        for range in gate_columns(c, cfg.d_model) {
                            for i in 0..r {
                                for j in range.clone() {
                                    t.set(i, j, T::zero());
                                }
                            }
                        }
                    }
                    t
                }
            };
            names.push(name);
            tensors.push(t);
            schemes.push(scheme);
        }
        Ok(Self::assemble(names, tensors, schemes, seed))
    }

    pub(crate) fn assemble(names: Vec<String>, tensors: Vec<Tensor<T>>, schemes: Vec<InitScheme>, seed: u64) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, schemes, index, seed }
    }

    /// Rebuild from named tensors, checking them against the configuration.
    pub fn from_named(cfg: &ModelConfig, mut named: HashMap<String, Tensor<T>>, seed: u64) -> Result<Self> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut schemes = Vec::new();
        for (name, r, c, scheme) in layout(cfg) {
            let t = named
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != (r, c) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, configuration expects ({r}, {c})",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
            schemes.push(scheme);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self::assemble(names, tensors, schemes, seed))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn schemes(&self) -> &[InitScheme] {
        &self.schemes
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("no parameter `{name}`"))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Zero tensors shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }

    /// Add `U(-scale, scale)` noise to every entry, zero-initialized ones
    /// included. Used to probe the model away from its initialization.
    pub fn perturb(&mut self, seed: u64, scale: f64) {
        let mut rng = seeded(seed);
        for t in self.tensors.iter_mut() {
            for v in t.data_mut() {
                *v = *v + T::c(rng.random_range(-scale..scale));
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore::assemble(
            self.names.clone(),
            self.tensors.iter().map(|t| t.cast()).collect(),
            self.schemes.clone(),
            self.seed,
        )
    }
}

/// Parameter count of a configuration without allocating it.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(|(_, r, c, _)| r * c).sum()
}
