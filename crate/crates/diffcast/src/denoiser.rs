//! Unified transformer that serves as both denoiser and predictor: patch
//! tokens from the past window and the noisy future, one linear
//! diffusion-time token, full self-attention with rotary positions, and a
//! head that projects future tokens back to series space by overlap
//! averaging.
//!
//! Channels are processed independently through shared weights; there is
//! no cross-channel mixing anywhere. Blocks are pre-norm with GELU FFNs
//! and the usual in-block residuals; there are no long skip connections
//! across the backbone.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::graph::{Graph, NodeId};
use crate::nn::{Tensor, TensorError};
use crate::rng;

pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("invalid denoiser config: {0}")]
    Config(String),
    #[error("patchify: series length {len} is shorter than patch length {patch}")]
    SeriesTooShort { len: usize, patch: usize },
    #[error("forward pass failed in {context}: {source}")]
    Forward {
        context: String,
        #[source]
        source: TensorError,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Patch length P.
    pub patch_len: usize,
    /// Patch stride; tokens overlap when it is smaller than `patch_len`.
    pub stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// FFN hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// Dropout rate on the attention and FFN branches during training.
    pub dropout: f64,
    /// Past window length L.
    pub lookback: usize,
    /// Forecast horizon H.
    pub horizon: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            patch_len: 8,
            stride: 4,
            d_model: 128,
            n_heads: 4,
            n_layers: 3,
            ffn_mult: 2,
            dropout: 0.0,
            lookback: 96,
            horizon: 24,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let fail = |m: String| Err(DenoiserError::Config(m));
        if self.patch_len == 0 {
            return fail("patch_len must be >= 1".into());
        }
        if self.stride == 0 || self.stride > self.patch_len {
            return fail(format!(
                "stride must satisfy 1 <= stride <= patch_len, got {} vs {}",
                self.stride, self.patch_len
            ));
        }
        if self.n_heads == 0 || self.n_layers == 0 || self.ffn_mult == 0 {
            return fail("n_heads, n_layers and ffn_mult must be >= 1".into());
        }
        if self.d_model % (2 * self.n_heads) != 0 {
            return fail(format!(
                "d_model {} must be divisible by 2*n_heads = {}",
                self.d_model,
                2 * self.n_heads
            ));
        }
        if self.lookback < self.patch_len || self.horizon < self.patch_len {
            return fail(format!(
                "lookback {} and horizon {} must be >= patch_len {}",
                self.lookback, self.horizon, self.patch_len
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Token count for a series of length `len`: `ceil((len-P)/St) + 1`.
    pub fn n_tokens(&self, len: usize) -> usize {
        (len - self.patch_len).div_ceil(self.stride) + 1
    }
}

/// Cut a series into (possibly overlapping) patch tokens. Token `i`
/// starts at `i * stride`; the last token is right-aligned to cover the
/// tail without padding. Returns the token matrix and per-token offsets.
pub fn patchify(
    series: &[f64],
    patch_len: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>), DenoiserError> {
    if series.len() < patch_len {
        return Err(DenoiserError::SeriesTooShort {
            len: series.len(),
            patch: patch_len,
        });
    }
    let last = series.len() - patch_len;
    let mut offsets = Vec::new();
    let mut pos = 0;
    loop {
        offsets.push(pos.min(last));
        if pos >= last {
            break;
        }
        pos += stride;
    }
    let mut data = Vec::with_capacity(offsets.len() * patch_len);
    for &off in &offsets {
        data.extend_from_slice(&series[off..off + patch_len]);
    }
    let tokens = Tensor::new(vec![offsets.len(), patch_len], data).expect("patch shape");
    Ok((tokens, offsets))
}

/// Standalone rotary transform of a query/key block (`n_tok × d_head`,
/// even `d_head`): dimension pair `(2i, 2i+1)` of row `r` is rotated by
/// `positions[r] * base^(-2i/d_head)`.
pub fn rope_rotate(x: &Tensor, positions: &[f64], base: f64) -> Result<Tensor, TensorError> {
    let mut g = Graph::new();
    let node = g.constant(x.clone());
    let out = g.rope(node, positions, base)?;
    Ok(g.value(out).clone())
}

#[derive(Clone)]
struct LayerParams {
    ln1_g: Tensor,
    ln1_b: Tensor,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    ln2_g: Tensor,
    ln2_b: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Full parameter set: patch/time embeddings, transformer blocks, output
/// head, and the per-channel normalization affine (`gamma` stored as
/// `exp(log_gamma)` so it can never reach zero).
#[derive(Clone)]
pub struct DenoiserModel {
    cfg: DenoiserConfig,
    channels: usize,
    embed_x_w: Tensor,
    embed_x_b: Tensor,
    embed_y_w: Tensor,
    embed_y_b: Tensor,
    embed_t_w: Tensor,
    embed_t_b: Tensor,
    layers: Vec<LayerParams>,
    final_ln_g: Tensor,
    final_ln_b: Tensor,
    head_w: Tensor,
    head_b: Tensor,
    log_gamma: Tensor,
    beta: Tensor,
}

/// Node handles for one graph's copy of the parameters.
pub(crate) struct GraphParams {
    embed_x_w: NodeId,
    embed_x_b: NodeId,
    embed_y_w: NodeId,
    embed_y_b: NodeId,
    embed_t_w: NodeId,
    embed_t_b: NodeId,
    layers: Vec<[NodeId; 16]>,
    final_ln_g: NodeId,
    final_ln_b: NodeId,
    head_w: NodeId,
    head_b: NodeId,
    pub(crate) log_gamma: NodeId,
    pub(crate) beta: NodeId,
}

impl DenoiserModel {
    /// Fresh model with seeded Xavier-style init; the affine starts at
    /// identity (`log_gamma = 0`, `beta = 0`).
    pub fn new(cfg: DenoiserConfig, channels: usize, seed: u64) -> Result<Self, DenoiserError> {
        cfg.validate()?;
        if channels == 0 {
            return Err(DenoiserError::Config("channels must be >= 1".into()));
        }
        let mut r = rng::stream(seed, &[0x6d6f64]);
        let d = cfg.d_model;
        let p = cfg.patch_len;
        let f = cfg.ffn_mult * d;
        let mut init = |rows: usize, cols: usize| -> Tensor {
            let std = (2.0 / (rows + cols) as f64).sqrt();
            let vals = rng::normal_vec(&mut r, rows * cols);
            Tensor::new(vec![rows, cols], vals.iter().map(|v| v * std).collect()).expect("init")
        };
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_g: Tensor::full(&[1, d], 1.0),
                ln1_b: Tensor::zeros(&[1, d]),
                wq: init(d, d),
                bq: Tensor::zeros(&[1, d]),
                wk: init(d, d),
                bk: Tensor::zeros(&[1, d]),
                wv: init(d, d),
                bv: Tensor::zeros(&[1, d]),
                wo: init(d, d),
                bo: Tensor::zeros(&[1, d]),
                ln2_g: Tensor::full(&[1, d], 1.0),
                ln2_b: Tensor::zeros(&[1, d]),
                w1: init(d, f),
                b1: Tensor::zeros(&[1, f]),
                w2: init(f, d),
                b2: Tensor::zeros(&[1, d]),
            })
            .collect();
        let model = Self {
            cfg,
            channels,
            embed_x_w: init(p, d),
            embed_x_b: Tensor::zeros(&[1, d]),
            embed_y_w: init(p, d),
            embed_y_b: Tensor::zeros(&[1, d]),
            embed_t_w: init(1, d),
            embed_t_b: Tensor::zeros(&[1, d]),
            layers,
            final_ln_g: Tensor::full(&[1, d], 1.0),
            final_ln_b: Tensor::zeros(&[1, d]),
            head_w: init(d, p),
            head_b: Tensor::zeros(&[1, p]),
            log_gamma: Tensor::zeros(&[1, channels]),
            beta: Tensor::zeros(&[1, channels]),
        };
        log::info!(
            "denoiser: {} parameters ({} layers, d_model {})",
            model.param_count(),
            model.cfg.n_layers,
            model.cfg.d_model
        );
        Ok(model)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Effective per-channel gamma (`exp(log_gamma)`), always nonzero.
    pub fn gamma(&self) -> Vec<f64> {
        self.log_gamma.data().iter().map(|v| v.exp()).collect()
    }

    /// Per-channel affine shift.
    pub fn beta_shift(&self) -> Vec<f64> {
        self.beta.data().to_vec()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed_x.w".into(), &self.embed_x_w),
            ("embed_x.b".into(), &self.embed_x_b),
            ("embed_y.w".into(), &self.embed_y_w),
            ("embed_y.b".into(), &self.embed_y_b),
            ("embed_t.w".into(), &self.embed_t_w),
            ("embed_t.b".into(), &self.embed_t_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let pairs: [(&str, &Tensor); 16] = [
                ("ln1.g", &l.ln1_g),
                ("ln1.b", &l.ln1_b),
                ("attn.wq", &l.wq),
                ("attn.bq", &l.bq),
                ("attn.wk", &l.wk),
                ("attn.bk", &l.bk),
                ("attn.wv", &l.wv),
                ("attn.bv", &l.bv),
                ("attn.wo", &l.wo),
                ("attn.bo", &l.bo),
                ("ln2.g", &l.ln2_g),
                ("ln2.b", &l.ln2_b),
                ("ffn.w1", &l.w1),
                ("ffn.b1", &l.b1),
                ("ffn.w2", &l.w2),
                ("ffn.b2", &l.b2),
            ];
            for (name, t) in pairs {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_ln.g".into(), &self.final_ln_g));
        out.push(("final_ln.b".into(), &self.final_ln_b));
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out.push(("norm.log_gamma".into(), &self.log_gamma));
        out.push(("norm.beta".into(), &self.beta));
        out
    }

    /// Mutable views in the same canonical order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.embed_x_w,
            &mut self.embed_x_b,
            &mut self.embed_y_w,
            &mut self.embed_y_b,
            &mut self.embed_t_w,
            &mut self.embed_t_b,
        ];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ] as [&mut Tensor; 16]);
        }
        out.push(&mut self.final_ln_g);
        out.push(&mut self.final_ln_b);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out.push(&mut self.log_gamma);
        out.push(&mut self.beta);
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.named_params()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect()
    }

    /// Register every parameter in `g` (as trainable leaves when
    /// `trainable`), in canonical order.
    pub(crate) fn insert_params(&self, g: &mut Graph, trainable: bool) -> GraphParams {
        let mut put = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        GraphParams {
            embed_x_w: put(&self.embed_x_w),
            embed_x_b: put(&self.embed_x_b),
            embed_y_w: put(&self.embed_y_w),
            embed_y_b: put(&self.embed_y_b),
            embed_t_w: put(&self.embed_t_w),
            embed_t_b: put(&self.embed_t_b),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    [
                        put(&l.ln1_g),
                        put(&l.ln1_b),
                        put(&l.wq),
                        put(&l.bq),
                        put(&l.wk),
                        put(&l.bk),
                        put(&l.wv),
                        put(&l.bv),
                        put(&l.wo),
                        put(&l.bo),
                        put(&l.ln2_g),
                        put(&l.ln2_b),
                        put(&l.w1),
                        put(&l.b1),
                        put(&l.w2),
                        put(&l.b2),
                    ]
                })
                .collect(),
            final_ln_g: put(&self.final_ln_g),
            final_ln_b: put(&self.final_ln_b),
            head_w: put(&self.head_w),
            head_b: put(&self.head_b),
            log_gamma: put(&self.log_gamma),
            beta: put(&self.beta),
        }
    }

    /// Node ids of every parameter in canonical order (for pairing graph
    /// gradients with [`Self::params_mut`]).
    pub(crate) fn param_nodes(gp: &GraphParams) -> Vec<NodeId> {
        let mut out = vec![
            gp.embed_x_w,
            gp.embed_x_b,
            gp.embed_y_w,
            gp.embed_y_b,
            gp.embed_t_w,
            gp.embed_t_b,
        ];
        for l in &gp.layers {
            out.extend_from_slice(l);
        }
        out.extend([
            gp.final_ln_g,
            gp.final_ln_b,
            gp.head_w,
            gp.head_b,
            gp.log_gamma,
            gp.beta,
        ]);
        out
    }

    /// Single-channel forward pass: token sequence `[past tokens; noisy
    /// future tokens; time token]`, RoPE attention over token positions
    /// (the time token is position-free), future-token outputs projected
    /// and overlap-averaged back to horizon length. Returns an `H×1` node.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build_forward(
        &self,
        g: &mut Graph,
        gp: &GraphParams,
        x_tokens: NodeId,
        y_tokens: NodeId,
        y_offsets: &[usize],
        time_frac: f64,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, DenoiserError> {
        let cfg = &self.cfg;
        let d = cfg.d_model;
        let n_x = g.value(x_tokens).rows();
        let n_y = g.value(y_tokens).rows();
        let ctx = |context: &str| {
            let context = context.to_string();
            move |source: TensorError| DenoiserError::Forward { context, source }
        };

        // embeddings
        let x_emb = {
            let h = g.matmul(x_tokens, gp.embed_x_w).map_err(ctx("past embedding"))?;
            g.add(h, gp.embed_x_b).map_err(ctx("past embedding"))?
        };
        let y_emb = {
            let h = g.matmul(y_tokens, gp.embed_y_w).map_err(ctx("future embedding"))?;
            g.add(h, gp.embed_y_b).map_err(ctx("future embedding"))?
        };
        let t_emb = {
            let t_in = g.constant(Tensor::scalar(time_frac));
            let h = g.matmul(t_in, gp.embed_t_w).map_err(ctx("time embedding"))?;
            g.add(h, gp.embed_t_b).map_err(ctx("time embedding"))?
        };
        let mut seq = g
            .concat_rows(&[x_emb, y_emb, t_emb])
            .map_err(ctx("token concat"))?;

        // series tokens carry their index; the time token is order-free
        // (rotation angle zero).
        let mut positions: Vec<f64> = (0..n_x + n_y).map(|i| i as f64).collect();
        positions.push(0.0);

        let n_tok = n_x + n_y + 1;
        let head_dim = cfg.head_dim();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut dropout_rng = dropout_rng;

        for (li, layer) in gp.layers.iter().enumerate() {
            let layer_ctx = |what: &str| ctx(&format!("layer {li} {what}"));
            let [ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2] =
                *layer;

            // attention branch (pre-norm)
            let normed = {
                let n = g.layer_norm(seq).map_err(layer_ctx("pre-norm"))?;
                let n = g.mul(n, ln1_g).map_err(layer_ctx("pre-norm"))?;
                g.add(n, ln1_b).map_err(layer_ctx("pre-norm"))?
            };
            let q = {
                let h = g.matmul(normed, wq).map_err(layer_ctx("query"))?;
                g.add(h, bq).map_err(layer_ctx("query"))?
            };
            let k = {
                let h = g.matmul(normed, wk).map_err(layer_ctx("key"))?;
                g.add(h, bk).map_err(layer_ctx("key"))?
            };
            let v = {
                let h = g.matmul(normed, wv).map_err(layer_ctx("value"))?;
                g.add(h, bv).map_err(layer_ctx("value"))?
            };
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for hi in 0..cfg.n_heads {
                let (c0, c1) = (hi * head_dim, (hi + 1) * head_dim);
                let qh = g.slice(q, 0, n_tok, c0, c1).map_err(layer_ctx("head split"))?;
                let kh = g.slice(k, 0, n_tok, c0, c1).map_err(layer_ctx("head split"))?;
                let vh = g.slice(v, 0, n_tok, c0, c1).map_err(layer_ctx("head split"))?;
                let qh = g.rope(qh, &positions, ROPE_BASE).map_err(layer_ctx("rope"))?;
                let kh = g.rope(kh, &positions, ROPE_BASE).map_err(layer_ctx("rope"))?;
                let kt = g.transpose(kh).map_err(layer_ctx("attention"))?;
                let scores = g.matmul(qh, kt).map_err(layer_ctx("attention"))?;
                let scores = g.scale(scores, scale).map_err(layer_ctx("attention"))?;
                let probs = g.softmax(scores).map_err(layer_ctx("attention"))?;
                let out = g.matmul(probs, vh).map_err(layer_ctx("attention"))?;
                heads.push(out);
            }
            let merged = g.concat_cols(&heads).map_err(layer_ctx("head merge"))?;
            let attn = {
                let h = g.matmul(merged, wo).map_err(layer_ctx("attention out"))?;
                g.add(h, bo).map_err(layer_ctx("attention out"))?
            };
            let attn = self
                .maybe_dropout(g, attn, &mut dropout_rng)
                .map_err(layer_ctx("dropout"))?;
            seq = g.add(seq, attn).map_err(layer_ctx("residual"))?;

            // FFN branch (pre-norm)
            let normed = {
                let n = g.layer_norm(seq).map_err(layer_ctx("pre-norm"))?;
                let n = g.mul(n, ln2_g).map_err(layer_ctx("pre-norm"))?;
                g.add(n, ln2_b).map_err(layer_ctx("pre-norm"))?
            };
            let ffn = {
                let h = g.matmul(normed, w1).map_err(layer_ctx("ffn"))?;
                let h = g.add(h, b1).map_err(layer_ctx("ffn"))?;
                let h = g.gelu(h).map_err(layer_ctx("ffn"))?;
                let h = g.matmul(h, w2).map_err(layer_ctx("ffn"))?;
                g.add(h, b2).map_err(layer_ctx("ffn"))?
            };
            let ffn = self
                .maybe_dropout(g, ffn, &mut dropout_rng)
                .map_err(layer_ctx("dropout"))?;
            seq = g.add(seq, ffn).map_err(layer_ctx("residual"))?;
        }

        let seq = {
            let n = g.layer_norm(seq).map_err(ctx("final norm"))?;
            let n = g.mul(n, gp.final_ln_g).map_err(ctx("final norm"))?;
            g.add(n, gp.final_ln_b).map_err(ctx("final norm"))?
        };
        // project future tokens back to patch space and overlap-average
        let future = g.slice(seq, n_x, n_x + n_y, 0, d).map_err(ctx("head"))?;
        let patches = {
            let h = g.matmul(future, gp.head_w).map_err(ctx("head"))?;
            g.add(h, gp.head_b).map_err(ctx("head"))?
        };
        g.overlap_fold(patches, y_offsets, cfg.horizon)
            .map_err(ctx("unpatch"))
    }

    fn maybe_dropout(
        &self,
        g: &mut Graph,
        node: NodeId,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, TensorError> {
        let p = self.cfg.dropout;
        let Some(r) = rng else { return Ok(node) };
        if p == 0.0 {
            return Ok(node);
        }
        use rand::Rng;
        let shape = g.value(node).shape().to_vec();
        let keep = 1.0 - p;
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask).expect("mask shape"));
        g.mul(node, mask)
    }

    /// Single-channel inference op: already-normalized past (affine
    /// applied) and noisy future in, clean-target estimate out.
    pub fn forward_channel(
        &self,
        x_norm: &[f64],
        y_k: &[f64],
        k: usize,
        n_steps: usize,
    ) -> Result<Vec<f64>, DenoiserError> {
        let (x_tok, _) = patchify(x_norm, self.cfg.patch_len, self.cfg.stride)?;
        let (y_tok, y_off) = patchify(y_k, self.cfg.patch_len, self.cfg.stride)?;
        let mut g = Graph::new();
        let gp = self.insert_params(&mut g, false);
        let x_node = g.constant(x_tok);
        let y_node = g.constant(y_tok);
        let out = self.build_forward(
            &mut g,
            &gp,
            x_node,
            y_node,
            &y_off,
            k as f64 / n_steps as f64,
            None,
        )?;
        Ok(g.value(out).data().to_vec())
    }

    /// Channel-independent multichannel wrapper: runs the single-channel
    /// forward over every column with shared weights (one graph, the
    /// parameters inserted once).
    pub fn predict(
        &self,
        x_norm: &Tensor,
        y_k: &Tensor,
        k: usize,
        n_steps: usize,
    ) -> Result<Tensor, DenoiserError> {
        let m = x_norm.cols();
        let h = self.cfg.horizon;
        let mut g = Graph::new();
        let gp = self.insert_params(&mut g, false);
        let mut out = Tensor::zeros(&[h, m]);
        for ch in 0..m {
            let x_col: Vec<f64> = (0..x_norm.rows()).map(|r| x_norm.at(r, ch)).collect();
            let y_col: Vec<f64> = (0..y_k.rows()).map(|r| y_k.at(r, ch)).collect();
            let (x_tok, _) = patchify(&x_col, self.cfg.patch_len, self.cfg.stride)?;
            let (y_tok, y_off) = patchify(&y_col, self.cfg.patch_len, self.cfg.stride)?;
            let x_node = g.constant(x_tok);
            let y_node = g.constant(y_tok);
            let node = self.build_forward(
                &mut g,
                &gp,
                x_node,
                y_node,
                &y_off,
                k as f64 / n_steps as f64,
                None,
            )?;
            for (t, &v) in g.value(node).data().iter().enumerate() {
                out.set(t, ch, v);
            }
        }
        Ok(out)
    }

    /// Same weights applied at a different window geometry. Patch models
    /// are length-agnostic: only token counts change with `lookback` and
    /// `horizon`, never parameter shapes.
    pub fn with_geometry(
        &self,
        lookback: usize,
        horizon: usize,
    ) -> Result<DenoiserModel, DenoiserError> {
        let mut copy = self.clone();
        copy.cfg.lookback = lookback;
        copy.cfg.horizon = horizon;
        copy.cfg.validate()?;
        Ok(copy)
    }

    /// Overwrite parameters from a name/tensor list (checkpoint load).
    pub fn load_named_params(
        &mut self,
        tensors: &[(String, Tensor)],
    ) -> Result<(), DenoiserError> {
        let expected: Vec<(String, Vec<usize>)> = self
            .named_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        if expected.len() != tensors.len() {
            return Err(DenoiserError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                expected.len()
            )));
        }
        for (slot, ((name, shape), (got_name, got))) in self
            .params_mut()
            .into_iter()
            .zip(expected.iter().zip(tensors))
            .map(|(s, pair)| (s, pair))
        {
            if name != got_name || shape != got.shape() {
                return Err(DenoiserError::Config(format!(
                    "checkpoint entry {got_name} {:?} does not match expected {name} {shape:?}",
                    got.shape()
                )));
            }
            *slot = got.clone();
        }
        Ok(())
    }
}
