use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::{EmbeddingMode, ModelConfig, PositionEncoding};
use crate::scalar::Scalar;

/// Input embedding weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedding<T> {
    /// `(H*W, hidden)` projector and its bias.
    Pixel { weight: Array2<T>, bias: Array1<T> },
    /// `(|v|, hidden)` lookup table.
    Token { table: Array2<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Array1<T>,
    /// Projections are stored input-major, `y = x · W`.
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub ffn_norm: Array1<T>,
    pub w_gate: Array2<T>,
    pub w_up: Array2<T>,
    pub w_down: Array2<T>,
}

/// All learnable tensors of a decoder. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub embedding: Embedding<T>,
    pub positions: Option<Array2<T>>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Array1<T>,
    /// `(hidden, |v|)` output head, untied from the embedding.
    pub head: Array2<T>,
}

const INIT_STD: f64 = 0.02;

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal<T: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Array2<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Array2::from_shape_simple_fn((rows, cols), || T::from_f64_lossy(dist.sample(&mut self.rng)))
    }
}

impl<T: Scalar> Parameters<T> {
    /// Deterministic initialization from `config.seed`: N(0, 0.02) for
    /// every matrix, residual output projections scaled by `1/sqrt(2L)`,
    /// unit norms, zero projector bias.
    pub fn init(config: &ModelConfig) -> Self {
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(config.seed) };
        let h = config.hidden_size;
        let embedding = match config.embedding_mode {
            EmbeddingMode::Pixel => Embedding::Pixel {
                weight: init.normal(config.pixels_per_image(), h, INIT_STD),
                bias: Array1::zeros(h),
            },
            EmbeddingMode::Token => Embedding::Token { table: init.normal(config.vocab_size, h, INIT_STD) },
        };
        let positions = match config.position_encoding {
            PositionEncoding::Learned => Some(init.normal(config.max_positions, h, INIT_STD)),
            PositionEncoding::Rotary => None,
        };
        let resid_std = INIT_STD / (2.0 * config.num_layers as f64).sqrt();
        let i = config.intermediate_size;
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                attn_norm: Array1::ones(h),
                wq: init.normal(h, h, INIT_STD),
                wk: init.normal(h, h, INIT_STD),
                wv: init.normal(h, h, INIT_STD),
                wo: init.normal(h, h, resid_std),
                ffn_norm: Array1::ones(h),
                w_gate: init.normal(h, i, INIT_STD),
                w_up: init.normal(h, i, INIT_STD),
                w_down: init.normal(i, h, resid_std),
            })
            .collect();
        Self {
            embedding,
            positions,
            layers,
            final_norm: Array1::ones(h),
            head: init.normal(h, config.vocab_size, INIT_STD),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.visit_mut(|_, t| t.iter_mut().for_each(|v| *v = T::zero()));
        out
    }

    /// Calls `f(name, shape, values)` for every tensor in a fixed order.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, &[usize], &'a [T])) {
        match &self.embedding {
            Embedding::Pixel { weight, bias } => {
                f("embed.projector.weight", weight.shape(), weight.as_slice().expect("standard layout"));
                f("embed.projector.bias", bias.shape(), bias.as_slice().expect("standard layout"));
            }
            Embedding::Token { table } => f("embed.table", table.shape(), table.as_slice().expect("standard layout")),
        }
        if let Some(p) = &self.positions {
            f("embed.positions", p.shape(), p.as_slice().expect("standard layout"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let named: [(&str, &[usize], &'a [T]); 9] = [
                ("attn_norm", layer.attn_norm.shape(), layer.attn_norm.as_slice().unwrap()),
                ("wq", layer.wq.shape(), layer.wq.as_slice().unwrap()),
                ("wk", layer.wk.shape(), layer.wk.as_slice().unwrap()),
                ("wv", layer.wv.shape(), layer.wv.as_slice().unwrap()),
                ("wo", layer.wo.shape(), layer.wo.as_slice().unwrap()),
                ("ffn_norm", layer.ffn_norm.shape(), layer.ffn_norm.as_slice().unwrap()),
                ("w_gate", layer.w_gate.shape(), layer.w_gate.as_slice().unwrap()),
                ("w_up", layer.w_up.shape(), layer.w_up.as_slice().unwrap()),
                ("w_down", layer.w_down.shape(), layer.w_down.as_slice().unwrap()),
            ];
            for (name, shape, values) in named {
                f(&format!("layers.{l}.{name}"), shape, values);
            }
        }
        f("final_norm", self.final_norm.shape(), self.final_norm.as_slice().unwrap());
        f("head", self.head.shape(), self.head.as_slice().unwrap());
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        let names = self.names();
        for (name, t) in names.iter().zip(self.tensors_mut()) {
            f(name, t);
        }
    }

    /// Mutable views of every tensor, in [`visit`](Self::visit) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        match &mut self.embedding {
            Embedding::Pixel { weight, bias } => {
                out.push(weight.as_slice_mut().unwrap());
                out.push(bias.as_slice_mut().unwrap());
            }
            Embedding::Token { table } => out.push(table.as_slice_mut().unwrap()),
        }
        if let Some(p) = &mut self.positions {
            out.push(p.as_slice_mut().unwrap());
        }
        for layer in &mut self.layers {
            out.push(layer.attn_norm.as_slice_mut().unwrap());
            out.push(layer.wq.as_slice_mut().unwrap());
            out.push(layer.wk.as_slice_mut().unwrap());
            out.push(layer.wv.as_slice_mut().unwrap());
            out.push(layer.wo.as_slice_mut().unwrap());
            out.push(layer.ffn_norm.as_slice_mut().unwrap());
            out.push(layer.w_gate.as_slice_mut().unwrap());
            out.push(layer.w_up.as_slice_mut().unwrap());
            out.push(layer.w_down.as_slice_mut().unwrap());
        }
        out.push(self.final_norm.as_slice_mut().unwrap());
        out.push(self.head.as_slice_mut().unwrap());
        out
    }

    /// Names of every tensor, in [`visit`](Self::visit) order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(|n, _, _| names.push(n.to_string()));
        names
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, v| n += v.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    /// Sum of squares over every tensor, in f64.
    pub fn squared_norm(&self) -> f64 {
        let mut acc = 0.0;
        self.visit(|_, _, v| acc += v.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>());
        acc
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) {
        let src = {
            let mut v = Vec::new();
            other.visit(|_, _, t| v.push(t.to_vec()));
            v
        };
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    /// SHA-256 over every tensor name, shape and value (as LE f64), in
    /// [`visit`](Self::visit) order.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        self.visit(|name, shape, values| {
            h.update(name.as_bytes());
            shape.iter().for_each(|d| h.update((*d as u64).to_le_bytes()));
            values.iter().for_each(|v| h.update(v.to_f64_lossy().to_le_bytes()));
        });
        h.finalize().into()
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        let c2 = |a: &Array2<T>| a.mapv(|v| U::from_f64_lossy(v.to_f64_lossy()));
        let c1 = |a: &Array1<T>| a.mapv(|v| U::from_f64_lossy(v.to_f64_lossy()));
        Parameters {
            embedding: match &self.embedding {
                Embedding::Pixel { weight, bias } => Embedding::Pixel { weight: c2(weight), bias: c1(bias) },
                Embedding::Token { table } => Embedding::Token { table: c2(table) },
            },
            positions: self.positions.as_ref().map(c2),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: c1(&l.attn_norm),
                    wq: c2(&l.wq),
                    wk: c2(&l.wk),
                    wv: c2(&l.wv),
                    wo: c2(&l.wo),
                    ffn_norm: c1(&l.ffn_norm),
                    w_gate: c2(&l.w_gate),
                    w_up: c2(&l.w_up),
                    w_down: c2(&l.w_down),
                })
                .collect(),
            final_norm: c1(&self.final_norm),
            head: c2(&self.head),
        }
    }
}
