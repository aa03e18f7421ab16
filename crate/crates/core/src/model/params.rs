//! Parameter blocks of the shared transformer block, the embedding, and the
//! output head. Gradients and optimizer moments reuse the same struct.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Mat;

use super::ModelConfig;

/// All learnable parameters. Weights are stored input-dim x output-dim so
/// activations multiply from the left (`y = x W`); norm gains are 1 x dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embed: Mat,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub w_gate: Mat,
    pub w_up: Mat,
    pub w_down: Mat,
    pub g_attn: Mat,
    pub g_mlp: Mat,
    pub g_final: Mat,
    pub head: Mat,
}

impl Params {
    /// Gaussian initialization. Residual-branch outputs (wo, w_down) are
    /// scaled down by sqrt(2 * cycles) so the unrolled stream stays O(1).
    pub fn init(cfg: &ModelConfig, seed: u64) -> Params {
        let d = cfg.hidden_dim;
        let inner = cfg.mlp_inner;
        let v = cfg.vocab_size;
        let depth_scale = 1.0 / (2.0 * cfg.cycles as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize, std: f64| {
            let normal = StandardNormal;
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = normal.sample(&mut rng);
                    z * std
                })
                .collect();
            Mat::from_vec(rows, cols, data)
        };

        let din = 1.0 / (d as f64).sqrt();
        let dinner = 1.0 / (inner as f64).sqrt();
        Params {
            embed: gauss(v, d, 1.0),
            wq: gauss(d, d, din),
            wk: gauss(d, d, din),
            wv: gauss(d, d, din),
            wo: gauss(d, d, din * depth_scale),
            w_gate: gauss(d, inner, din),
            w_up: gauss(d, inner, din),
            w_down: gauss(inner, d, dinner * depth_scale),
            g_attn: ones(d),
            g_mlp: ones(d),
            g_final: ones(d),
            head: gauss(d, v, din),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Params {
        let d = cfg.hidden_dim;
        let inner = cfg.mlp_inner;
        let v = cfg.vocab_size;
        Params {
            embed: Mat::zeros(v, d),
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
            w_gate: Mat::zeros(d, inner),
            w_up: Mat::zeros(d, inner),
            w_down: Mat::zeros(inner, d),
            g_attn: Mat::zeros(1, d),
            g_mlp: Mat::zeros(1, d),
            g_final: Mat::zeros(1, d),
            head: Mat::zeros(d, v),
        }
    }

    pub fn zeros_like(&self) -> Params {
        let z = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        Params {
            embed: z(&self.embed),
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: z(&self.wo),
            w_gate: z(&self.w_gate),
            w_up: z(&self.w_up),
            w_down: z(&self.w_down),
            g_attn: z(&self.g_attn),
            g_mlp: z(&self.g_mlp),
            g_final: z(&self.g_final),
            head: z(&self.head),
        }
    }

    pub fn named(&self) -> [(&'static str, &Mat); 12] {
        [
            ("embed", &self.embed),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("w_gate", &self.w_gate),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
            ("g_attn", &self.g_attn),
            ("g_mlp", &self.g_mlp),
            ("g_final", &self.g_final),
            ("head", &self.head),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Mat); 12] {
        [
            ("embed", &mut self.embed),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("w_gate", &mut self.w_gate),
            ("w_up", &mut self.w_up),
            ("w_down", &mut self.w_down),
            ("g_attn", &mut self.g_attn),
            ("g_mlp", &mut self.g_mlp),
            ("g_final", &mut self.g_final),
            ("head", &mut self.head),
        ]
    }

    pub fn block(&self, name: &str) -> Option<&Mat> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, m)| m)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.named_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m)
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.named().iter().map(|(_, m)| m.sq_frobenius_norm()).sum()
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b);
        }
    }

    pub fn scale_all(&mut self, s: f64) {
        for (_, m) in self.named_mut() {
            m.scale(s);
        }
    }
}

/// Flat Euclidean distance between two parameter sets.
pub fn params_distance(a: &Params, b: &Params) -> f64 {
    a.named()
        .iter()
        .zip(b.named().iter())
        .map(|((_, x), (_, y))| x.sub(y).sq_frobenius_norm())
        .sum::<f64>()
        .sqrt()
}

/// Flat inner product between two parameter sets.
pub fn params_dot(a: &Params, b: &Params) -> f64 {
    a.named()
        .iter()
        .zip(b.named().iter())
        .map(|((_, x), (_, y))| {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| p * q)
                .sum::<f64>()
        })
        .sum()
}

fn ones(d: usize) -> Mat {
    Mat::from_vec(1, d, vec![1.0; d])
}
