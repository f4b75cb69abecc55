use rand::{Rng, RngCore};

use super::{HeadKind, ModelConfig, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real, Tensor};

const LN_EPS: f64 = 1e-5;

/// Parameters together with their configuration.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
}

/// Everything the decoder needs from one dataset: the encoded rows and the
/// per-block cross-attention keys and values.
#[derive(Clone, Debug)]
pub struct DecoderContext<T: Real> {
    pub repr: Tensor<T>,
    pub kv: Vec<Tensor<T>>,
}

/// Forward-pass state on a tape: dropout randomness (training only).
struct Pass<'r> {
    dropout: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl Pass<'_> {
    fn mask<T: Real>(&mut self, n: usize) -> Option<Vec<T>> {
        let rng = self.rng.as_mut()?;
        if self.dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout;
        let scale = T::c(1.0 / keep);
        Some((0..n).map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() }).collect())
    }
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&cfg, seed)?;
        Ok(Self { cfg, params })
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore<T>) -> Self {
        Self { cfg, params }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { cfg: self.cfg.clone(), params: self.params.cast() }
    }

    fn p<'a>(&'a self, tape: &mut Tape<'a, T>, name: &str) -> Var {
        let id = self.params.id(name);
        tape.param(id, &self.params.tensors()[id])
    }

    fn linear<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, name: &str) -> Var {
        let w = self.p(tape, &format!("{name}.w"));
        let b = self.p(tape, &format!("{name}.b"));
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn layer_norm<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, name: &str) -> Var {
        let g = self.p(tape, &format!("{name}.g"));
        let b = self.p(tape, &format!("{name}.b"));
        let n = tape.layer_norm(x, T::c(LN_EPS));
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }

    fn drop<'a>(&self, tape: &mut Tape<'a, T>, x: Var, pass: &mut Pass<'_>) -> Var {
        match pass.mask(tape.value(x).len()) {
            Some(m) => tape.dropout(x, m),
            None => x,
        }
    }

    fn feed_forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, name: &str, pass: &mut Pass<'_>) -> Var {
        let h = self.linear(tape, x, &format!("{name}.w1"));
        let h = tape.gelu(h);
        let h = self.linear(tape, h, &format!("{name}.w2"));
        self.drop(tape, h, pass)
    }

    /// Scaled dot-product attention of `q` over `k`/`v`, all with `d_model`
    /// columns split into heads.
    fn attention(&self, tape: &mut Tape<'_, T>, q: Var, k: Var, v: Var, qo: usize, ko: usize, vo: usize) -> Var {
        let (nh, dh) = (self.cfg.n_heads, self.cfg.head_dim());
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(nh);
        for h in 0..nh {
            let qh = tape.slice_cols(q, qo + h * dh, dh);
            let kh = tape.slice_cols(k, ko + h * dh, dh);
            let vh = tape.slice_cols(v, vo + h * dh, dh);
            let s = tape.matmul_t(qh, false, kh, true);
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s);
            heads.push(tape.matmul(a, vh));
        }
        if nh == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        }
    }

    fn check_input(&self, data: &Tensor<T>) -> Result<()> {
        if data.cols() != self.cfg.input_dim {
            return Err(Error::Dimension(format!(
                "dataset rows have width {}, model expects {}",
                data.cols(),
                self.cfg.input_dim
            )));
        }
        if data.rows() == 0 || data.rows() > self.cfg.max_context {
            return Err(Error::Dimension(format!(
                "context of {} rows outside 1..={}",
                data.rows(),
                self.cfg.max_context
            )));
        }
        Ok(())
    }

    fn encode_on<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, pass: &mut Pass<'_>, check: bool) -> Result<Var> {
        let dm = self.cfg.d_model;
        let mut h = self.linear(tape, x, "enc.embed");
        for l in 0..self.cfg.n_encoder_layers {
            let n = self.layer_norm(tape, h, &format!("enc.{l}.ln1"));
            let qkv = self.linear(tape, n, &format!("enc.{l}.attn.qkv"));
            let a = self.attention(tape, qkv, qkv, qkv, 0, dm, 2 * dm);
            let a = self.linear(tape, a, &format!("enc.{l}.attn.out"));
            let a = self.drop(tape, a, pass);
            h = tape.add(h, a);
            let n = self.layer_norm(tape, h, &format!("enc.{l}.ln2"));
            let f = self.feed_forward(tape, n, &format!("enc.{l}.ff"), pass);
            h = tape.add(h, f);
            if check {
                finite(tape, h, &format!("enc.{l}"))?;
            }
        }
        Ok(self.layer_norm(tape, h, "enc.ln_f"))
    }

    fn time_on<'a>(&'a self, tape: &mut Tape<'a, T>, t: T) -> Result<Var> {
        let tf = t.f64();
        if !(0.0..=1.0).contains(&tf) {
            return Err(Error::Domain(format!("time {tf} outside [0, 1]")));
        }
        let mut c = tape.constant(Tensor::filled(1, 1, t));
        for i in 0..self.cfg.n_time_layers {
            if i > 0 {
                c = tape.silu(c);
            }
            c = self.linear(tape, c, &format!("time.{i}"));
        }
        Ok(c)
    }

    fn kv_on<'a>(&'a self, tape: &mut Tape<'a, T>, repr: Var) -> Vec<Var> {
        (0..self.cfg.n_decoder_blocks)
            .map(|b| self.linear(tape, repr, &format!("dec.{b}.attn.kv")))
            .collect()
    }

    /// Modulate a normalized row: `LN(x) * (1 + scale) + shift`.
    fn modulate(&self, tape: &mut Tape<'_, T>, x: Var, shift: Var, scale: Var) -> Var {
        let n = tape.layer_norm(x, T::c(LN_EPS));
        let s1 = tape.add_scalar(scale, T::one());
        let y = tape.mul_row(n, s1);
        tape.add_row(y, shift)
    }

    fn decode_on<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        kv: &[Var],
        z: &[T],
        c: Var,
        pass: &mut Pass<'_>,
        check: bool,
    ) -> Result<Var> {
        let dm = self.cfg.d_model;
        if z.len() != self.cfg.latent_dim {
            return Err(Error::Dimension(format!("latent has {} coordinates, model expects {}", z.len(), self.cfg.latent_dim)));
        }
        let zt = tape.constant(Tensor::row_vector(z.to_vec()));
        let mut x = self.linear(tape, zt, "dec.in");
        let sc = tape.silu(c);
        for (b, &kvb) in kv.iter().enumerate() {
            let m = self.linear(tape, sc, &format!("dec.{b}.ada"));
            let chunk: Vec<Var> = (0..6).map(|i| tape.slice_cols(m, i * dm, dm)).collect();
            let h = self.modulate(tape, x, chunk[0], chunk[1]);
            let q = self.linear(tape, h, &format!("dec.{b}.attn.q"));
            let a = self.attention(tape, q, kvb, kvb, 0, 0, dm);
            let a = self.linear(tape, a, &format!("dec.{b}.attn.out"));
            let a = self.drop(tape, a, pass);
            let a = tape.mul_row(a, chunk[2]);
            x = tape.add(x, a);
            let h = self.modulate(tape, x, chunk[3], chunk[4]);
            let f = self.feed_forward(tape, h, &format!("dec.{b}.ff"), pass);
            let f = tape.mul_row(f, chunk[5]);
            x = tape.add(x, f);
            if check {
                finite(tape, x, &format!("dec.{b}"))?;
            }
        }
        for h in 0..self.cfg.n_head_layers {
            let m = self.linear(tape, sc, &format!("head.{h}.ada"));
            let chunk: Vec<Var> = (0..3).map(|i| tape.slice_cols(m, i * dm, dm)).collect();
            let y = self.modulate(tape, x, chunk[0], chunk[1]);
            let f = self.feed_forward(tape, y, &format!("head.{h}.ff"), pass);
            let f = tape.mul_row(f, chunk[2]);
            x = tape.add(x, f);
        }
        let m = self.linear(tape, sc, "head.final.ada");
        let shift = tape.slice_cols(m, 0, dm);
        let scale = tape.slice_cols(m, dm, dm);
        let y = self.modulate(tape, x, shift, scale);
        let out = self.linear(tape, y, "head.out");
        finite(tape, out, "head.out")?;
        Ok(out)
    }

    /// Full forward pass on `tape` for one example: `1 x output_dim`.
    /// Passing an rng turns on dropout.
    pub fn forward_tape<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        data: &'a Tensor<T>,
        z: &[T],
        t: T,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_input(data)?;
        let mut pass = Pass { dropout: self.cfg.dropout_rate, rng };
        let x = tape.constant_ref(data);
        let repr = self.encode_on(tape, x, &mut pass, false)?;
        let c = self.time_on(tape, t)?;
        let kv = self.kv_on(tape, repr);
        self.decode_on(tape, &kv, z, c, &mut pass, false)
    }

    /// Evaluation-mode encoding of a dataset: `K x d_model`.
    pub fn encode(&self, data: &Matrix) -> Result<Tensor<T>> {
        let x = data.cast::<T>();
        self.check_input(&x)?;
        let mut tape = Tape::new();
        let xv = tape.constant_ref(&x);
        let mut pass = Pass { dropout: 0.0, rng: None };
        let r = self.encode_on(&mut tape, xv, &mut pass, true)?;
        finite(&tape, r, "enc.ln_f")?;
        Ok(tape.value(r).clone())
    }

    pub fn time_embedding(&self, t: T) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let c = self.time_on(&mut tape, t)?;
        Ok(tape.value(c).data().to_vec())
    }

    /// Encode once and precompute cross-attention keys and values.
    pub fn prepare(&self, data: &Matrix) -> Result<DecoderContext<T>> {
        let repr = self.encode(data)?;
        self.context_from_repr(repr)
    }

    pub fn context_from_repr(&self, repr: Tensor<T>) -> Result<DecoderContext<T>> {
        if repr.cols() != self.cfg.d_model {
            return Err(Error::Dimension(format!("representation width {} != d_model {}", repr.cols(), self.cfg.d_model)));
        }
        let kv = {
            let mut tape = Tape::new();
            let r = tape.constant_ref(&repr);
            let vars = self.kv_on(&mut tape, r);
            vars.iter().map(|v| tape.value(*v).clone()).collect()
        };
        Ok(DecoderContext { repr, kv })
    }

    /// Decoder output for one latent at time `t`.
    pub fn eval_with_context(&self, ctx: &DecoderContext<T>, z: &[T], t: T) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let kv: Vec<Var> = ctx.kv.iter().map(|k| tape.constant_ref(k)).collect();
        let c = self.time_on(&mut tape, t)?;
        let mut pass = Pass { dropout: 0.0, rng: None };
        let out = self.decode_on(&mut tape, &kv, z, c, &mut pass, true)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `v(z_t, t | repr)` in evaluation mode.
    pub fn vector_field(&self, repr: &Tensor<T>, z: &[T], t: T) -> Result<Vec<T>> {
        let ctx = self.context_from_repr(repr.clone())?;
        self.eval_with_context(&ctx, z, t)
    }

    /// Gaussian-head output for a dataset (queried at `z = 0`, `t = 0`).
    pub fn gaussian_params(&self, ctx: &DecoderContext<T>) -> Result<Vec<T>> {
        if self.cfg.head != HeadKind::Gaussian {
            return Err(Error::Config("model does not have a Gaussian head".into()));
        }
        self.eval_with_context(ctx, &vec![T::zero(); self.cfg.latent_dim], T::zero())
    }
}

/// Plain (tape-free) batched decoder used for ODE integration.
impl<T: Real> Model<T> {
    fn t_linear(&self, x: &Tensor<T>, name: &str) -> Tensor<T> {
        let w = &self.params.tensors()[self.params.id(&format!("{name}.w"))];
        let b = &self.params.tensors()[self.params.id(&format!("{name}.b"))];
        let mut out = Tensor::zeros(x.rows(), w.cols());
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(b.data());
        }
        crate::tensor::gemm_into(x, false, w, false, T::one(), T::one(), &mut out);
        out
    }

    /// `LN(x) * (1 + scale) + shift` with per-row modulation taken from
    /// column chunks `k` (shift) and `k + 1` (scale) of `ada`.
    fn t_modulate(&self, x: &Tensor<T>, ada: &Tensor<T>, k: usize) -> Tensor<T> {
        let dm = self.cfg.d_model;
        let n = T::c(dm as f64);
        let mut out = Tensor::zeros(x.rows(), dm);
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + T::c(LN_EPS)).sqrt();
            let a = ada.row(r);
            let (shift, scale) = (&a[k * dm..(k + 1) * dm], &a[(k + 1) * dm..(k + 2) * dm]);
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (row[j] - mean) * s * (T::one() + scale[j]) + shift[j];
            }
        }
        out
    }

    fn t_gated_add(&self, x: &mut Tensor<T>, y: &Tensor<T>, ada: &Tensor<T>, k: usize) {
        let dm = self.cfg.d_model;
        for r in 0..x.rows() {
            let gate = &ada.row(r)[k * dm..(k + 1) * dm];
            let yr = y.row(r);
            for (j, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = *v + gate[j] * yr[j];
            }
        }
    }

    fn t_ff(&self, x: &Tensor<T>, name: &str) -> Tensor<T> {
        let h = self.t_linear(x, &format!("{name}.w1")).map(crate::autodiff::gelu);
        self.t_linear(&h, &format!("{name}.w2"))
    }

    /// Decoder outputs for many `(z, t)` pairs at once: row `i` of the result
    /// is the output for row `i` of `zs` at time `ts[i]`.
    pub fn eval_batch(&self, ctx: &DecoderContext<T>, zs: &Tensor<T>, ts: &[T]) -> Result<Tensor<T>> {
        let (dm, nh, dh) = (self.cfg.d_model, self.cfg.n_heads, self.cfg.head_dim());
        let b = zs.rows();
        if zs.cols() != self.cfg.latent_dim || ts.len() != b {
            return Err(Error::Dimension(format!(
                "batch of {} latents of width {} with {} times",
                b,
                zs.cols(),
                ts.len()
            )));
        }
        if let Some(t) = ts.iter().find(|t| !(t.f64() >= 0.0 && t.f64() <= 1.0)) {
            return Err(Error::Domain(format!("time {} outside [0, 1]", t.f64())));
        }
        let sig = |x: T| x / (T::one() + (-x).exp());
        let mut c = Tensor::from_vec(b, 1, ts.to_vec());
        for i in 0..self.cfg.n_time_layers {
            if i > 0 {
                c = c.map(sig);
            }
            c = self.t_linear(&c, &format!("time.{i}"));
        }
        let sc = c.map(sig);
        let mut x = self.t_linear(zs, "dec.in");
        let scale = T::c(1.0 / (dh as f64).sqrt());
        for (blk, kv) in ctx.kv.iter().enumerate() {
            let ada = self.t_linear(&sc, &format!("dec.{blk}.ada"));
            let h = self.t_modulate(&x, &ada, 0);
            let q = self.t_linear(&h, &format!("dec.{blk}.attn.q"));
            let kn = kv.rows();
            let mut att = Tensor::zeros(b, dm);
            let mut scores = vec![T::zero(); kn];
            for r in 0..b {
                let qr = q.row(r);
                for hd in 0..nh {
                    let qh = &qr[hd * dh..(hd + 1) * dh];
                    let mut max = T::neg_infinity();
                    for (k, s) in scores.iter_mut().enumerate() {
                        let kr = &kv.row(k)[hd * dh..(hd + 1) * dh];
                        *s = qh.iter().zip(kr).map(|(&p, &q)| p * q).sum::<T>() * scale;
                        max = max.max(*s);
                    }
                    let mut tot = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        tot = tot + *s;
                    }
                    let dst = &mut att.row_mut(r)[hd * dh..(hd + 1) * dh];
                    for (k, &s) in scores.iter().enumerate() {
                        let w = s / tot;
                        let vr = &kv.row(k)[dm + hd * dh..dm + (hd + 1) * dh];
                        for (d, &v) in dst.iter_mut().zip(vr) {
                            *d = *d + w * v;
                        }
                    }
                }
            }
            let a = self.t_linear(&att, &format!("dec.{blk}.attn.out"));
            self.t_gated_add(&mut x, &a, &ada, 2);
            let h = self.t_modulate(&x, &ada, 3);
            let f = self.t_ff(&h, &format!("dec.{blk}.ff"));
            self.t_gated_add(&mut x, &f, &ada, 5);
            if !x.is_finite() {
                return Err(Error::eval(format!("dec.{blk}")));
            }
        }
        for hl in 0..self.cfg.n_head_layers {
            let ada = self.t_linear(&sc, &format!("head.{hl}.ada"));
            let h = self.t_modulate(&x, &ada, 0);
            let f = self.t_ff(&h, &format!("head.{hl}.ff"));
            self.t_gated_add(&mut x, &f, &ada, 2);
        }
        let ada = self.t_linear(&sc, "head.final.ada");
        let out = self.t_linear(&self.t_modulate(&x, &ada, 0), "head.out");
        if !out.is_finite() {
            return Err(Error::eval("head.out"));
        }
        Ok(out)
    }
}

fn finite<T: Real>(tape: &Tape<'_, T>, v: Var, layer: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::eval(layer))
    }
}
