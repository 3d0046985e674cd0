//! All learned weights, their initialization, and their enumeration in a
//! fixed declaration order (used by the optimizer, the checkpoint format
//! and the gradient checker alike).

use super::ModelConfig;
use crate::autodiff::{fl, ParamSet, Real, Tape, Tensor, Var};
use crate::util::stream_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One attention head: score_i = scoreᵀ · tanh(proj · [element_i; query]).
#[derive(Debug, Clone)]
pub struct AttnParams<F: Real> {
    /// d_phi × (element_dim + query_dim)
    pub proj: Tensor<F>,
    /// d_phi
    pub score: Tensor<F>,
}

/// One LSTM cell's weights: per gate an input matrix (hidden × input), a
/// recurrent matrix (hidden × hidden) and a bias (hidden).
#[derive(Debug, Clone)]
pub struct LstmWeights<F: Real> {
    pub w_input: Tensor<F>,
    pub u_input: Tensor<F>,
    pub b_input: Tensor<F>,
    pub w_forget: Tensor<F>,
    pub u_forget: Tensor<F>,
    pub b_forget: Tensor<F>,
    pub w_cell: Tensor<F>,
    pub u_cell: Tensor<F>,
    pub b_cell: Tensor<F>,
    pub w_output: Tensor<F>,
    pub u_output: Tensor<F>,
    pub b_output: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct LinearParams<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

/// The full weight set.
#[derive(Debug, Clone)]
pub struct ModelParams<F: Real> {
    /// d_v × (n_obj_classes + bbox_dim + feat_dim), applied to
    /// [soft label; bbox; feature].
    pub node_embed: Tensor<F>,
    /// d_e × feat_dim, applied to the union-box feature.
    pub edge_embed: Tensor<F>,
    /// Context attention over nodes (query: context).
    pub node_attn: AttnParams<F>,
    /// Context attention over edges (query: context).
    pub edge_attn: AttnParams<F>,
    /// Incoming-edge attention per node (query: the node itself).
    pub incoming_attn: AttnParams<F>,
    pub ctx_lstm: LstmWeights<F>,
    pub edge_lstm: LstmWeights<F>,
    pub node_lstm: LstmWeights<F>,
    pub obj_head: LinearParams<F>,
    pub pred_head: LinearParams<F>,
}

fn xavier<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<F> = (0..rows * cols).map(|_| fl(rng.gen_range(-s..s))).collect();
    Tensor::new(vec![rows, cols], data).expect("finite init")
}

fn xavier_vec<F: Real>(rng: &mut ChaCha8Rng, n: usize) -> Tensor<F> {
    let s = (6.0 / (n + 1) as f64).sqrt();
    let data: Vec<F> = (0..n).map(|_| fl(rng.gen_range(-s..s))).collect();
    Tensor::vector(data).expect("finite init")
}

impl<F: Real> LstmWeights<F> {
    fn init(rng: &mut ChaCha8Rng, hidden: usize, input: usize) -> Self {
        // Forget-gate bias starts at 1 so cells retain state early on.
        let ones = Tensor::new(vec![hidden], vec![F::one(); hidden]).unwrap();
        LstmWeights {
            w_input: xavier(rng, hidden, input),
            u_input: xavier(rng, hidden, hidden),
            b_input: Tensor::zeros(vec![hidden]),
            w_forget: xavier(rng, hidden, input),
            u_forget: xavier(rng, hidden, hidden),
            b_forget: ones,
            w_cell: xavier(rng, hidden, input),
            u_cell: xavier(rng, hidden, hidden),
            b_cell: Tensor::zeros(vec![hidden]),
            w_output: xavier(rng, hidden, input),
            u_output: xavier(rng, hidden, hidden),
            b_output: Tensor::zeros(vec![hidden]),
        }
    }

    fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Tensor::zeros(vec![hidden, input]);
        let u = || Tensor::zeros(vec![hidden, hidden]);
        let b = || Tensor::zeros(vec![hidden]);
        LstmWeights {
            w_input: w(),
            u_input: u(),
            b_input: b(),
            w_forget: w(),
            u_forget: u(),
            b_forget: b(),
            w_cell: w(),
            u_cell: u(),
            b_cell: b(),
            w_output: w(),
            u_output: u(),
            b_output: b(),
        }
    }
}

impl<F: Real> ModelParams<F> {
    /// Random initialization: uniform(−s, s) with s = √(6/(fan_in+fan_out))
    /// per matrix, zero biases except the LSTM forget gates.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &["model-init"]));
        ModelParams {
            node_embed: xavier(&mut rng, cfg.d_v, cfg.node_input_dim()),
            edge_embed: xavier(&mut rng, cfg.d_e, cfg.feat_dim),
            node_attn: AttnParams {
                proj: xavier(&mut rng, cfg.d_phi, cfg.d_v + cfg.d_c),
                score: xavier_vec(&mut rng, cfg.d_phi),
            },
            edge_attn: AttnParams {
                proj: xavier(&mut rng, cfg.d_phi, cfg.d_e + cfg.d_c),
                score: xavier_vec(&mut rng, cfg.d_phi),
            },
            incoming_attn: AttnParams {
                proj: xavier(&mut rng, cfg.d_phi, cfg.d_e + cfg.incoming_query_dim()),
                score: xavier_vec(&mut rng, cfg.d_phi),
            },
            ctx_lstm: LstmWeights::init(&mut rng, cfg.d_c, cfg.ctx_lstm_input()),
            edge_lstm: LstmWeights::init(&mut rng, cfg.d_e, cfg.edge_lstm_input()),
            node_lstm: LstmWeights::init(&mut rng, cfg.d_v, cfg.node_lstm_input()),
            obj_head: LinearParams {
                weight: xavier(&mut rng, cfg.n_obj_classes, cfg.d_v),
                bias: Tensor::zeros(vec![cfg.n_obj_classes]),
            },
            pred_head: LinearParams {
                weight: xavier(&mut rng, cfg.n_pred_classes + 1, cfg.d_e),
                bias: Tensor::zeros(vec![cfg.n_pred_classes + 1]),
            },
        }
    }

    /// All-zero weights with the right shapes (checkpoint loading target,
    /// fixed-point tests).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            node_embed: Tensor::zeros(vec![cfg.d_v, cfg.node_input_dim()]),
            edge_embed: Tensor::zeros(vec![cfg.d_e, cfg.feat_dim]),
            node_attn: AttnParams {
                proj: Tensor::zeros(vec![cfg.d_phi, cfg.d_v + cfg.d_c]),
                score: Tensor::zeros(vec![cfg.d_phi]),
            },
            edge_attn: AttnParams {
                proj: Tensor::zeros(vec![cfg.d_phi, cfg.d_e + cfg.d_c]),
                score: Tensor::zeros(vec![cfg.d_phi]),
            },
            incoming_attn: AttnParams {
                proj: Tensor::zeros(vec![cfg.d_phi, cfg.d_e + cfg.incoming_query_dim()]),
                score: Tensor::zeros(vec![cfg.d_phi]),
            },
            ctx_lstm: LstmWeights::zeros(cfg.d_c, cfg.ctx_lstm_input()),
            edge_lstm: LstmWeights::zeros(cfg.d_e, cfg.edge_lstm_input()),
            node_lstm: LstmWeights::zeros(cfg.d_v, cfg.node_lstm_input()),
            obj_head: LinearParams {
                weight: Tensor::zeros(vec![cfg.n_obj_classes, cfg.d_v]),
                bias: Tensor::zeros(vec![cfg.n_obj_classes]),
            },
            pred_head: LinearParams {
                weight: Tensor::zeros(vec![cfg.n_pred_classes + 1, cfg.d_e]),
                bias: Tensor::zeros(vec![cfg.n_pred_classes + 1]),
            },
        }
    }

    /// Visit every tensor with its stable name, in declaration order.
    pub fn visit(&self, f: &mut dyn FnMut(&'static str, &Tensor<F>)) {
        let lstm = |f: &mut dyn FnMut(&'static str, &Tensor<F>),
                    names: [&'static str; 12],
                    l: &LstmWeights<F>| {
            f(names[0], &l.w_input);
            f(names[1], &l.u_input);
            f(names[2], &l.b_input);
            f(names[3], &l.w_forget);
            f(names[4], &l.u_forget);
            f(names[5], &l.b_forget);
            f(names[6], &l.w_cell);
            f(names[7], &l.u_cell);
            f(names[8], &l.b_cell);
            f(names[9], &l.w_output);
            f(names[10], &l.u_output);
            f(names[11], &l.b_output);
        };
        f("node_embed", &self.node_embed);
        f("edge_embed", &self.edge_embed);
        f("node_attn.proj", &self.node_attn.proj);
        f("node_attn.score", &self.node_attn.score);
        f("edge_attn.proj", &self.edge_attn.proj);
        f("edge_attn.score", &self.edge_attn.score);
        f("incoming_attn.proj", &self.incoming_attn.proj);
        f("incoming_attn.score", &self.incoming_attn.score);
        lstm(f, CTX_LSTM_NAMES, &self.ctx_lstm);
        lstm(f, EDGE_LSTM_NAMES, &self.edge_lstm);
        lstm(f, NODE_LSTM_NAMES, &self.node_lstm);
        f("obj_head.weight", &self.obj_head.weight);
        f("obj_head.bias", &self.obj_head.bias);
        f("pred_head.weight", &self.pred_head.weight);
        f("pred_head.bias", &self.pred_head.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut Tensor<F>)) {
        let lstm = |f: &mut dyn FnMut(&'static str, &mut Tensor<F>),
                    names: [&'static str; 12],
                    l: &mut LstmWeights<F>| {
            f(names[0], &mut l.w_input);
            f(names[1], &mut l.u_input);
            f(names[2], &mut l.b_input);
            f(names[3], &mut l.w_forget);
            f(names[4], &mut l.u_forget);
            f(names[5], &mut l.b_forget);
            f(names[6], &mut l.w_cell);
            f(names[7], &mut l.u_cell);
            f(names[8], &mut l.b_cell);
            f(names[9], &mut l.w_output);
            f(names[10], &mut l.u_output);
            f(names[11], &mut l.b_output);
        };
        f("node_embed", &mut self.node_embed);
        f("edge_embed", &mut self.edge_embed);
        f("node_attn.proj", &mut self.node_attn.proj);
        f("node_attn.score", &mut self.node_attn.score);
        f("edge_attn.proj", &mut self.edge_attn.proj);
        f("edge_attn.score", &mut self.edge_attn.score);
        f("incoming_attn.proj", &mut self.incoming_attn.proj);
        f("incoming_attn.score", &mut self.incoming_attn.score);
        lstm(f, CTX_LSTM_NAMES, &mut self.ctx_lstm);
        lstm(f, EDGE_LSTM_NAMES, &mut self.edge_lstm);
        lstm(f, NODE_LSTM_NAMES, &mut self.node_lstm);
        f("obj_head.weight", &mut self.obj_head.weight);
        f("obj_head.bias", &mut self.obj_head.bias);
        f("pred_head.weight", &mut self.pred_head.weight);
        f("pred_head.bias", &mut self.pred_head.bias);
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _| n += 1);
        n
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Register every tensor as a gradient-bearing leaf on a tape.
    pub fn register(&self, tape: &mut Tape<F>) -> ParamVars {
        let mut vars = Vec::with_capacity(self.tensor_count());
        self.visit(&mut |name, t| {
            vars.push((name, tape.leaf(t.clone().with_grad())));
        });
        ParamVars { vars }
    }

    pub fn check_finite(&self) -> crate::error::Result<()> {
        let mut bad = None;
        self.visit(&mut |name, t| {
            if bad.is_none() && t.check_finite(name).is_err() {
                bad = Some(name);
            }
        });
        match bad {
            Some(name) => Err(crate::error::Error::NonFinite {
                context: format!("parameter {name}"),
                value: f64::NAN,
            }),
            None => Ok(()),
        }
    }
}

const CTX_LSTM_NAMES: [&str; 12] = [
    "ctx_lstm.w_input",
    "ctx_lstm.u_input",
    "ctx_lstm.b_input",
    "ctx_lstm.w_forget",
    "ctx_lstm.u_forget",
    "ctx_lstm.b_forget",
    "ctx_lstm.w_cell",
    "ctx_lstm.u_cell",
    "ctx_lstm.b_cell",
    "ctx_lstm.w_output",
    "ctx_lstm.u_output",
    "ctx_lstm.b_output",
];
const EDGE_LSTM_NAMES: [&str; 12] = [
    "edge_lstm.w_input",
    "edge_lstm.u_input",
    "edge_lstm.b_input",
    "edge_lstm.w_forget",
    "edge_lstm.u_forget",
    "edge_lstm.b_forget",
    "edge_lstm.w_cell",
    "edge_lstm.u_cell",
    "edge_lstm.b_cell",
    "edge_lstm.w_output",
    "edge_lstm.u_output",
    "edge_lstm.b_output",
];
const NODE_LSTM_NAMES: [&str; 12] = [
    "node_lstm.w_input",
    "node_lstm.u_input",
    "node_lstm.b_input",
    "node_lstm.w_forget",
    "node_lstm.u_forget",
    "node_lstm.b_forget",
    "node_lstm.w_cell",
    "node_lstm.u_cell",
    "node_lstm.b_cell",
    "node_lstm.w_output",
    "node_lstm.u_output",
    "node_lstm.b_output",
];

/// Tape handles for every parameter tensor of one forward pass, in the
/// same declaration order as [`ModelParams::visit`].
pub struct ParamVars {
    vars: Vec<(&'static str, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| *n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, Var)> + '_ {
        self.vars.iter().copied()
    }

    pub fn attn(&self, prefix: &str) -> (Var, Var) {
        (
            self.get(&format!("{prefix}.proj")),
            self.get(&format!("{prefix}.score")),
        )
    }

    pub fn lstm(&self, prefix: &str) -> LstmVars {
        let g = |suffix: &str| self.get(&format!("{prefix}.{suffix}"));
        LstmVars {
            w_input: g("w_input"),
            u_input: g("u_input"),
            b_input: g("b_input"),
            w_forget: g("w_forget"),
            u_forget: g("u_forget"),
            b_forget: g("b_forget"),
            w_cell: g("w_cell"),
            u_cell: g("u_cell"),
            b_cell: g("b_cell"),
            w_output: g("w_output"),
            u_output: g("u_output"),
            b_output: g("b_output"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub u_input: Var,
    pub b_input: Var,
    pub w_forget: Var,
    pub u_forget: Var,
    pub b_forget: Var,
    pub w_cell: Var,
    pub u_cell: Var,
    pub b_cell: Var,
    pub w_output: Var,
    pub u_output: Var,
    pub b_output: Var,
}

impl ParamSet for ModelParams<f64> {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.visit(&mut |name, t| f(name, t));
    }
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.visit_mut(&mut |name, t| f(name, t));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = ModelConfig {
            d_c: 8,
            d_v: 8,
            d_e: 8,
            d_phi: 4,
            feat_dim: 6,
            n_obj_classes: 5,
            n_pred_classes: 4,
            ..ModelConfig::default()
        };
        let a = ModelParams::<f64>::init(&cfg, 3);
        let b = ModelParams::<f64>::init(&cfg, 3);
        let c = ModelParams::<f64>::init(&cfg, 4);
        assert!(a.check_finite().is_ok());

        let flat = |p: &ModelParams<f64>| {
            let mut v = Vec::new();
            p.visit(&mut |_, t| v.extend_from_slice(t.data()));
            v
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn forget_gate_bias_is_one_other_biases_zero() {
        let cfg = ModelConfig::desk_scale();
        let p = ModelParams::<f64>::init(&cfg, 0);
        assert!(p.ctx_lstm.b_forget.data().iter().all(|&x| x == 1.0));
        assert!(p.ctx_lstm.b_input.data().iter().all(|&x| x == 0.0));
        assert!(p.obj_head.bias.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn declared_shapes_match_the_contract() {
        let cfg = ModelConfig {
            d_c: 16,
            d_v: 12,
            d_e: 10,
            d_phi: 6,
            feat_dim: 7,
            n_obj_classes: 9,
            n_pred_classes: 4,
            bbox_dim: 4,
            ..ModelConfig::default()
        };
        let p = ModelParams::<f64>::init(&cfg, 0);
        assert_eq!(p.node_embed.shape(), &[12, 9 + 4 + 7]);
        assert_eq!(p.edge_embed.shape(), &[10, 7]);
        assert_eq!(p.node_attn.proj.shape(), &[6, 12 + 16]);
        assert_eq!(p.edge_attn.proj.shape(), &[6, 10 + 16]);
        assert_eq!(p.incoming_attn.proj.shape(), &[6, 10 + 12]);
        assert_eq!(p.ctx_lstm.w_input.shape(), &[16, 12 + 10]);
        assert_eq!(p.edge_lstm.w_input.shape(), &[10, 2 * 12 + 16]);
        assert_eq!(p.node_lstm.w_input.shape(), &[12, 10 + 16]);
        assert_eq!(p.obj_head.weight.shape(), &[9, 12]);
        assert_eq!(p.pred_head.weight.shape(), &[5, 10]);
        assert_eq!(p.tensor_count(), 48);
    }
}
