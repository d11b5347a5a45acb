//! Forward pass and hand-written reverse mode for the decoder stack:
//! pre-norm RMSNorm blocks with causal multi-head attention, rotary or
//! learned positions, and a SwiGLU feed-forward.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use super::config::{EmbeddingMode, ModelConfig, PositionEncoding};
use super::params::{Embedding, LayerParams, Parameters};
use super::ModelError;
use crate::atlas::VocabAtlas;
use crate::scalar::{lit, Scalar};

/// Target value excluded from the loss.
pub const IGNORE: usize = usize::MAX;

/// One training sequence: `targets[i]` is the id following `inputs[i]`, or
/// [`IGNORE`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Example {
    /// Next-token example over `ids`: inputs `ids[..n-1]`, targets `ids[1..]`,
    /// with `pad` targets masked.
    pub fn shifted(ids: &[usize], pad: Option<usize>) -> Self {
        let n = ids.len().saturating_sub(1);
        let targets = ids[1.min(ids.len())..]
            .iter()
            .map(|&t| if Some(t) == pad { IGNORE } else { t })
            .collect();
        Self { inputs: ids[..n].to_vec(), targets }
    }
}

/// Decoder weights bound to their configuration. In pixel mode the model
/// also remembers the fingerprint of the atlas it was built against.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Parameters<T>,
    pub atlas_hash: Option<[u8; 32]>,
}

struct LayerCache<T> {
    x_in: Array2<T>,
    rms1: Array1<T>,
    n1: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// `probs[seg * heads + head]`, causal attention weights.
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    x_mid: Array2<T>,
    rms2: Array1<T>,
    n2: Array2<T>,
    gate: Array2<T>,
    up: Array2<T>,
    act: Array2<T>,
}

struct Trace<T> {
    layers: Vec<LayerCache<T>>,
    x_final: Array2<T>,
    rms_f: Array1<T>,
    hidden: Array2<T>,
}

/// Row spans of individual sequences inside a stacked batch.
#[derive(Clone, Debug)]
struct Segments(Vec<(usize, usize)>);

impl Segments {
    fn of<S: AsRef<[usize]>>(seqs: &[S]) -> Self {
        let mut start = 0;
        Self(
            seqs.iter()
                .map(|s| {
                    let span = (start, s.as_ref().len());
                    start += span.1;
                    span
                })
                .collect(),
        )
    }

    fn positions(&self) -> Vec<usize> {
        self.0.iter().flat_map(|&(_, len)| 0..len).collect()
    }
}

fn rms_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>, eps: T) -> (Array2<T>, Array1<T>) {
    let h = T::from_usize_lossy(x.ncols());
    let mut out = x.clone();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, r) in out.rows_mut().into_iter().zip(inv.iter_mut()) {
        let ms = row.iter().map(|&v| v * v).sum::<T>() / h;
        *r = T::one() / (ms + eps).sqrt();
        let rr = *r;
        row.iter_mut().zip(gain.iter()).for_each(|(v, &g)| *v = *v * rr * g);
    }
    (out, inv)
}

/// Returns `dx` and accumulates `dgain`.
fn rms_norm_backward<T: Scalar>(
    x: &Array2<T>,
    gain: &Array1<T>,
    inv: &Array1<T>,
    dy: &Array2<T>,
    dgain: &mut Array1<T>,
) -> Array2<T> {
    let h = T::from_usize_lossy(x.ncols());
    let mut dx = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let r = inv[i];
        let (xr, dyr) = (x.row(i), dy.row(i));
        let mut dot = T::zero();
        for j in 0..x.ncols() {
            dgain[j] += dyr[j] * xr[j] * r;
            dot += dyr[j] * gain[j] * xr[j];
        }
        let coef = r * r * r * dot / h;
        for j in 0..x.ncols() {
            dx[[i, j]] = r * gain[j] * dyr[j] - coef * xr[j];
        }
    }
    dx
}

struct Rope<T> {
    cos: Array2<T>,
    sin: Array2<T>,
}

impl<T: Scalar> Rope<T> {
    fn new(max_pos: usize, head_dim: usize, theta: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Array2::zeros((max_pos, half));
        let mut sin = Array2::zeros((max_pos, half));
        for p in 0..max_pos {
            for i in 0..half {
                let freq = theta.powf(-(2.0 * i as f64) / head_dim as f64);
                let angle = p as f64 * freq;
                cos[[p, i]] = lit(angle.cos());
                sin[[p, i]] = lit(angle.sin());
            }
        }
        Self { cos, sin }
    }

    /// Rotates every head of `x` in place; `inverse` applies the transpose.
    fn apply(&self, x: &mut Array2<T>, positions: &[usize], heads: usize, inverse: bool) {
        let d = x.ncols() / heads;
        let half = d / 2;
        for (mut row, &p) in x.rows_mut().into_iter().zip(positions) {
            for hd in 0..heads {
                let base = hd * d;
                for i in 0..half {
                    let (c, mut sn) = (self.cos[[p, i]], self.sin[[p, i]]);
                    if inverse {
                        sn = -sn;
                    }
                    let a = row[base + i];
                    let b = row[base + i + half];
                    row[base + i] = a * c - b * sn;
                    row[base + i + half] = b * c + a * sn;
                }
            }
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `c += a^T · b`
fn acc_at_b<T: Scalar>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>, c: &mut Array2<T>) {
    general_mat_mul(T::one(), &a.t(), b, T::one(), c);
}

fn row_softmax_in_place<T: Scalar>(mut row: ndarray::ArrayViewMut1<'_, T>) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    row.iter_mut().for_each(|v| {
        *v = (*v - max).exp();
        sum += *v;
    });
    row.iter_mut().for_each(|v| *v /= sum);
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters from `config.seed`. Pixel mode requires an atlas whose
    /// rows cover the vocabulary and whose images match `image_dims`.
    pub fn new(config: ModelConfig, atlas: Option<&VocabAtlas>) -> Result<Self, ModelError> {
        config.validate()?;
        let atlas_hash = match config.embedding_mode {
            EmbeddingMode::Pixel => {
                let atlas = atlas.ok_or(ModelError::AtlasRequired)?;
                check_atlas_shape(&config, atlas)?;
                Some(atlas.config_hash())
            }
            EmbeddingMode::Token => None,
        };
        let params = Parameters::init(&config);
        Ok(Self { config, params, atlas_hash })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters<T>, atlas_hash: Option<[u8; 32]>) -> Self {
        Self { config, params, atlas_hash }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn check_atlas<'a>(&self, atlas: Option<&'a VocabAtlas>) -> Result<&'a VocabAtlas, ModelError> {
        let atlas = atlas.ok_or(ModelError::AtlasRequired)?;
        if Some(atlas.config_hash()) != self.atlas_hash {
            return Err(ModelError::AtlasMismatch);
        }
        check_atlas_shape(&self.config, atlas)?;
        Ok(atlas)
    }

    /// Pixel mode: `lookup(atlas, ids) · W + b`.
    pub fn pixel_embed(&self, atlas: &VocabAtlas, ids: &[usize]) -> Result<Array2<T>, ModelError> {
        let Embedding::Pixel { weight, bias } = &self.params.embedding else {
            return Err(ModelError::WrongMode(EmbeddingMode::Token));
        };
        let atlas = self.check_atlas(Some(atlas))?;
        let images = atlas.lookup::<T>(ids)?;
        let mut out = images.dot(weight);
        out += bias;
        Ok(out)
    }

    /// Input vectors for `ids` (before position encoding).
    pub fn embed(&self, atlas: Option<&VocabAtlas>, ids: &[usize]) -> Result<Array2<T>, ModelError> {
        match &self.params.embedding {
            Embedding::Pixel { .. } => self.pixel_embed(self.check_atlas(atlas)?, ids),
            Embedding::Token { table } => {
                let mut out = Array2::zeros((ids.len(), self.config.hidden_size));
                for (j, &id) in ids.iter().enumerate() {
                    if id >= table.nrows() {
                        return Err(ModelError::IdOutOfRange { id, len: table.nrows() });
                    }
                    out.row_mut(j).assign(&table.row(id));
                }
                Ok(out)
            }
        }
    }

    fn check_lengths<S: AsRef<[usize]>>(&self, seqs: &[S]) -> Result<(), ModelError> {
        for s in seqs {
            let len = s.as_ref().len();
            if len == 0 {
                return Err(ModelError::EmptySequence);
            }
            if len > self.config.max_positions {
                return Err(ModelError::SequenceTooLong { len, max: self.config.max_positions });
            }
        }
        Ok(())
    }

    fn run(&self, x0: Array2<T>, segs: &Segments) -> Trace<T> {
        let cfg = &self.config;
        let eps: T = lit(cfg.rmsnorm_eps);
        let heads = cfg.num_heads;
        let d = cfg.head_dim();
        let scale: T = lit(1.0 / (d as f64).sqrt());
        let positions = segs.positions();
        let max_len = segs.0.iter().map(|s| s.1).max().unwrap_or(0);
        let rope = (cfg.position_encoding == PositionEncoding::Rotary).then(|| Rope::<T>::new(max_len, d, cfg.rope_theta));

        let mut x = x0;
        if let Some(table) = &self.params.positions {
            for (mut row, &p) in x.rows_mut().into_iter().zip(&positions) {
                row += &table.row(p);
            }
        }
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for lp in &self.params.layers {
            let (n1, rms1) = rms_norm(&x, &lp.attn_norm, eps);
            let mut q = n1.dot(&lp.wq);
            let mut k = n1.dot(&lp.wk);
            let v = n1.dot(&lp.wv);
            if let Some(rope) = &rope {
                rope.apply(&mut q, &positions, heads, false);
                rope.apply(&mut k, &positions, heads, false);
            }
            let mut ctx = Array2::zeros(x.raw_dim());
            let mut probs = Vec::with_capacity(segs.0.len() * heads);
            for &(start, len) in &segs.0 {
                for hd in 0..heads {
                    let cols = hd * d..(hd + 1) * d;
                    let qh = q.slice(s![start..start + len, cols.clone()]);
                    let kh = k.slice(s![start..start + len, cols.clone()]);
                    let vh = v.slice(s![start..start + len, cols.clone()]);
                    let mut p = qh.dot(&kh.t());
                    for i in 0..len {
                        let mut row = p.row_mut(i);
                        row.iter_mut().take(i + 1).for_each(|v| *v *= scale);
                        row.iter_mut().skip(i + 1).for_each(|v| *v = T::neg_infinity());
                        row_softmax_in_place(row);
                    }
                    ctx.slice_mut(s![start..start + len, cols]).assign(&p.dot(&vh));
                    probs.push(p);
                }
            }
            let x_mid = &x + &ctx.dot(&lp.wo);
            let (n2, rms2) = rms_norm(&x_mid, &lp.ffn_norm, eps);
            let gate = n2.dot(&lp.w_gate);
            let up = n2.dot(&lp.w_up);
            let act = ndarray::Zip::from(&gate).and(&up).map_collect(|&g, &u| g * sigmoid(g) * u);
            let x_out = &x_mid + &act.dot(&lp.w_down);
            layers.push(LayerCache { x_in: x, rms1, n1, q, k, v, probs, ctx, x_mid, rms2, n2, gate, up, act });
            x = x_out;
        }
        let (hidden, rms_f) = rms_norm(&x, &self.params.final_norm, eps);
        Trace { layers, x_final: x, rms_f, hidden }
    }

    /// Next-token logits `(s, |v|)` for one sequence.
    pub fn forward(&self, atlas: Option<&VocabAtlas>, ids: &[usize]) -> Result<Array2<T>, ModelError> {
        self.check_lengths(&[ids])?;
        let x0 = self.embed(atlas, ids)?;
        let trace = self.run(x0, &Segments::of(&[ids]));
        Ok(trace.hidden.dot(&self.params.head))
    }

    /// Decoder core on caller-supplied input vectors; shared by both modes.
    pub fn forward_embeddings(&self, x0: ArrayView2<'_, T>) -> Result<Array2<T>, ModelError> {
        let len = x0.nrows();
        if len == 0 {
            return Err(ModelError::EmptySequence);
        }
        if len > self.config.max_positions {
            return Err(ModelError::SequenceTooLong { len, max: self.config.max_positions });
        }
        if x0.ncols() != self.config.hidden_size {
            return Err(ModelError::Shape(format!("embeddings have {} columns", x0.ncols())));
        }
        let trace = self.run(x0.to_owned(), &Segments(vec![(0, len)]));
        Ok(trace.hidden.dot(&self.params.head))
    }

    /// Final normalized hidden states `(s, hidden)` of one sequence.
    pub fn hidden_states(&self, atlas: Option<&VocabAtlas>, ids: &[usize]) -> Result<Array2<T>, ModelError> {
        self.check_lengths(&[ids])?;
        let x0 = self.embed(atlas, ids)?;
        Ok(self.run(x0, &Segments::of(&[ids])).hidden)
    }

    /// Mean cross-entropy over the unmasked targets of `batch` and its exact
    /// gradient with respect to every parameter. Returns
    /// `(loss, gradient, counted targets)`.
    pub fn loss_and_grad(
        &self,
        atlas: Option<&VocabAtlas>,
        batch: &[Example],
    ) -> Result<(f64, Parameters<T>, usize), ModelError> {
        let inputs: Vec<&[usize]> = batch.iter().map(|e| e.inputs.as_slice()).collect();
        self.check_lengths(&inputs)?;
        for e in batch {
            if e.targets.len() != e.inputs.len() {
                return Err(ModelError::Shape(format!(
                    "{} inputs but {} targets",
                    e.inputs.len(),
                    e.targets.len()
                )));
            }
        }
        let flat_ids: Vec<usize> = inputs.iter().flat_map(|s| s.iter().copied()).collect();
        let targets: Vec<usize> = batch.iter().flat_map(|e| e.targets.iter().copied()).collect();
        let segs = Segments::of(&inputs);

        let pixel_images = match &self.params.embedding {
            Embedding::Pixel { .. } => Some(self.check_atlas(atlas)?.lookup::<T>(&flat_ids)?),
            Embedding::Token { .. } => None,
        };
        let x0 = match (&self.params.embedding, &pixel_images) {
            (Embedding::Pixel { weight, bias }, Some(images)) => images.dot(weight) + bias,
            _ => self.embed(atlas, &flat_ids)?,
        };
        let trace = self.run(x0, &segs);
        let logits = trace.hidden.dot(&self.params.head);
        let (loss, dlogits, count) = cross_entropy(logits.view(), &targets)?;

        let mut grad = self.params.zeros_like();
        self.backward(&trace, &segs, dlogits, &flat_ids, pixel_images.as_ref(), &mut grad);
        Ok((loss, grad, count))
    }

    fn backward(
        &self,
        trace: &Trace<T>,
        segs: &Segments,
        dlogits: Array2<T>,
        flat_ids: &[usize],
        pixel_images: Option<&Array2<T>>,
        grad: &mut Parameters<T>,
    ) {
        let cfg = &self.config;
        let heads = cfg.num_heads;
        let d = cfg.head_dim();
        let scale: T = lit(1.0 / (d as f64).sqrt());
        let positions = segs.positions();
        let max_len = segs.0.iter().map(|s| s.1).max().unwrap_or(0);
        let rope = (cfg.position_encoding == PositionEncoding::Rotary).then(|| Rope::<T>::new(max_len, d, cfg.rope_theta));

        acc_at_b(&trace.hidden.view(), &dlogits.view(), &mut grad.head);
        let dhidden = dlogits.dot(&self.params.head.t());
        let mut dx = rms_norm_backward(&trace.x_final, &self.params.final_norm, &trace.rms_f, &dhidden, &mut grad.final_norm);

        for (l, (lp, cache)) in self.params.layers.iter().zip(&trace.layers).enumerate().rev() {
            let g: &mut LayerParams<T> = &mut grad.layers[l];
            // feed-forward
            acc_at_b(&cache.act.view(), &dx.view(), &mut g.w_down);
            let dact = dx.dot(&lp.w_down.t());
            let mut dgate = Array2::zeros(cache.gate.raw_dim());
            let mut dup = Array2::zeros(cache.up.raw_dim());
            ndarray::Zip::from(&mut dgate)
                .and(&mut dup)
                .and(&dact)
                .and(&cache.gate)
                .and(&cache.up)
                .for_each(|dg, du, &da, &gv, &uv| {
                    let sg = sigmoid(gv);
                    let silu = gv * sg;
                    *du = da * silu;
                    *dg = da * uv * sg * (T::one() + gv * (T::one() - sg));
                });
            acc_at_b(&cache.n2.view(), &dgate.view(), &mut g.w_gate);
            acc_at_b(&cache.n2.view(), &dup.view(), &mut g.w_up);
            let dn2 = dgate.dot(&lp.w_gate.t()) + dup.dot(&lp.w_up.t());
            dx = dx + rms_norm_backward(&cache.x_mid, &lp.ffn_norm, &cache.rms2, &dn2, &mut g.ffn_norm);

            // attention
            acc_at_b(&cache.ctx.view(), &dx.view(), &mut g.wo);
            let dctx = dx.dot(&lp.wo.t());
            let mut dq = Array2::zeros(cache.q.raw_dim());
            let mut dk = Array2::zeros(cache.k.raw_dim());
            let mut dv = Array2::zeros(cache.v.raw_dim());
            for (si, &(start, len)) in segs.0.iter().enumerate() {
                for hd in 0..heads {
                    let cols = hd * d..(hd + 1) * d;
                    let rows = start..start + len;
                    let p = &cache.probs[si * heads + hd];
                    let qh = cache.q.slice(s![rows.clone(), cols.clone()]);
                    let kh = cache.k.slice(s![rows.clone(), cols.clone()]);
                    let vh = cache.v.slice(s![rows.clone(), cols.clone()]);
                    let doh = dctx.slice(s![rows.clone(), cols.clone()]);
                    dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&doh));
                    let mut ds = doh.dot(&vh.t());
                    softmax_backward_in_place(p.view(), ds.view_mut());
                    ds *= scale;
                    dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                    dk.slice_mut(s![rows, cols]).assign(&ds.t().dot(&qh));
                }
            }
            if let Some(rope) = &rope {
                rope.apply(&mut dq, &positions, heads, true);
                rope.apply(&mut dk, &positions, heads, true);
            }
            acc_at_b(&cache.n1.view(), &dq.view(), &mut g.wq);
            acc_at_b(&cache.n1.view(), &dk.view(), &mut g.wk);
            acc_at_b(&cache.n1.view(), &dv.view(), &mut g.wv);
            let dn1 = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
            dx = dx + rms_norm_backward(&cache.x_in, &lp.attn_norm, &cache.rms1, &dn1, &mut g.attn_norm);
        }

        if let Some(gpos) = &mut grad.positions {
            for (row, &p) in dx.rows().into_iter().zip(&positions) {
                let mut dst = gpos.row_mut(p);
                dst += &row;
            }
        }
        match &mut grad.embedding {
            Embedding::Pixel { weight, bias } => {
                let images = pixel_images.expect("pixel mode keeps its images");
                acc_at_b(&images.view(), &dx.view(), weight);
                *bias += &dx.sum_axis(Axis(0));
            }
            Embedding::Token { table } => {
                for (row, &id) in dx.rows().into_iter().zip(flat_ids) {
                    let mut dst = table.row_mut(id);
                    dst += &row;
                }
            }
        }
    }
}

/// `ds = p ⊙ (dp − rowsum(dp ⊙ p))`, in place over `dp`.
fn softmax_backward_in_place<T: Scalar>(p: ArrayView2<'_, T>, mut dp: ArrayViewMut2<'_, T>) {
    for (prow, mut drow) in p.rows().into_iter().zip(dp.rows_mut()) {
        let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
        drow.iter_mut().zip(prow.iter()).for_each(|(dv, &pv)| *dv = pv * (*dv - dot));
    }
}

fn check_atlas_shape(config: &ModelConfig, atlas: &VocabAtlas) -> Result<(), ModelError> {
    if atlas.len() < config.vocab_size {
        return Err(ModelError::Shape(format!(
            "atlas has {} rows, vocabulary has {}",
            atlas.len(),
            config.vocab_size
        )));
    }
    if Some((atlas.height(), atlas.width())) != config.image_dims || atlas.channels() != 1 {
        return Err(ModelError::Shape(format!(
            "atlas images are {}x{}, model expects {:?}",
            atlas.height(),
            atlas.width(),
            config.image_dims
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`; [`IGNORE`] targets are skipped. Returns the loss, its gradient
/// with respect to the logits and the number of counted targets.
pub fn cross_entropy<T: Scalar>(
    logits: ArrayView2<'_, T>,
    targets: &[usize],
) -> Result<(f64, Array2<T>, usize), ModelError> {
    if logits.nrows() != targets.len() {
        return Err(ModelError::Shape(format!(
            "{} logit rows but {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let vocab = logits.ncols();
    let count = targets.iter().filter(|&&t| t != IGNORE).count();
    let mut grad = Array2::zeros(logits.raw_dim());
    if count == 0 {
        return Ok((0.0, grad, 0));
    }
    let inv_n: T = lit(1.0 / count as f64);
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        if t == IGNORE {
            continue;
        }
        if t >= vocab {
            return Err(ModelError::IdOutOfRange { id: t, len: vocab });
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        total += lse - row[t].to_f64_lossy();
        let mut g = grad.row_mut(i);
        for (j, gv) in g.iter_mut().enumerate() {
            let p = T::from_f64_lossy((row[j].to_f64_lossy() - lse).exp());
            *gv = p * inv_n;
        }
        g[t] -= inv_n;
    }
    Ok((total / count as f64, grad, count))
}

/// Cross-entropy loss only.
pub fn loss<T: Scalar>(logits: ArrayView2<'_, T>, targets: &[usize]) -> Result<f64, ModelError> {
    cross_entropy(logits, targets).map(|(l, _, _)| l)
}

pub(crate) fn log_sum_exp<T: Scalar>(row: ArrayView1<'_, T>) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64_lossy()));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|&v| (v.to_f64_lossy() - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax in f64.
pub fn log_softmax<T: Scalar>(logits: ArrayView2<'_, T>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row);
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v.to_f64_lossy() - lse;
        }
    }
    out
}
