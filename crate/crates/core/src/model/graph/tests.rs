use super::*;
use crate::autodiff::finite_diff_check;
use crate::data::pair_index;
use crate::model::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        d_c: 8,
        d_v: 8,
        d_e: 8,
        d_phi: 4,
        feat_dim: 6,
        n_obj_classes: 5,
        n_pred_classes: 4,
        n_iters: 2,
        ..ModelConfig::default()
    }
}

fn random_scene(seed: u64, n_objects: usize, cfg: &ModelConfig) -> EncodedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut soft_labels = Vec::new();
    let mut labels = Vec::new();
    let mut bboxes = Vec::new();
    let mut features = Vec::new();
    for _ in 0..n_objects {
        let raw: Vec<f64> = (0..cfg.n_obj_classes)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let z: f64 = raw.iter().map(|x| x.exp()).sum();
        let soft: Vec<f64> = raw.iter().map(|x| x.exp() / z).collect();
        labels.push(
            soft.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0,
        );
        soft_labels.push(soft);
        let x1 = rng.gen_range(0.0..0.5);
        let y1 = rng.gen_range(0.0..0.5);
        bboxes.push([
            x1,
            y1,
            x1 + rng.gen_range(0.1..0.5),
            y1 + rng.gen_range(0.1..0.5),
        ]);
        features.push(
            (0..cfg.feat_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        );
    }
    let union_features = ordered_pairs(n_objects)
        .map(|_| {
            (0..cfg.feat_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    EncodedScene {
        id: format!("test-{seed}"),
        labels,
        soft_labels,
        bboxes,
        features,
        union_features,
        relations: vec![],
    }
}

// ── Scripted replay oracle: Eqs. 1–5 as plain f64 loops ──────────────
// Independent of the tape: direct exp/tanh formulas, no max-subtraction
// in the softmax, no shared helpers.

fn o_matvec(m: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = m.dims2().unwrap();
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|i| (0..cols).map(|j| m.data()[i * cols + j] * x[j]).sum())
        .collect()
}

fn o_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn o_attend(
    elements: &[Vec<f64>],
    query: &[f64],
    attn: &crate::model::AttnParams<f64>,
) -> Vec<f64> {
    let scores: Vec<f64> = elements
        .iter()
        .map(|el| {
            let joint: Vec<f64> = el.iter().chain(query).copied().collect();
            let hidden = o_matvec(&attn.proj, &joint);
            attn.score
                .data()
                .iter()
                .zip(&hidden)
                .map(|(&w, &h)| w * h.tanh())
                .sum()
        })
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let weights: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    let dim = elements[0].len();
    let mut out = vec![0.0; dim];
    for (w, el) in weights.iter().zip(elements) {
        for (o, &e) in out.iter_mut().zip(el) {
            *o += w * e;
        }
    }
    out
}

fn o_lstm(
    w: &crate::model::LstmWeights<f64>,
    input: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let gate = |wm: &Tensor<f64>, um: &Tensor<f64>, b: &Tensor<f64>| -> Vec<f64> {
        o_matvec(wm, input)
            .iter()
            .zip(o_matvec(um, h))
            .zip(b.data())
            .map(|((&wx, uh), &bb)| wx + uh + bb)
            .collect()
    };
    let i: Vec<f64> = gate(&w.w_input, &w.u_input, &w.b_input)
        .iter()
        .map(|&x| o_sigmoid(x))
        .collect();
    let f: Vec<f64> = gate(&w.w_forget, &w.u_forget, &w.b_forget)
        .iter()
        .map(|&x| o_sigmoid(x))
        .collect();
    let g: Vec<f64> = gate(&w.w_cell, &w.u_cell, &w.b_cell)
        .iter()
        .map(|&x| x.tanh())
        .collect();
    let o: Vec<f64> = gate(&w.w_output, &w.u_output, &w.b_output)
        .iter()
        .map(|&x| o_sigmoid(x))
        .collect();
    let c_next: Vec<f64> = (0..c.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let h_next: Vec<f64> = (0..c.len()).map(|k| o[k] * c_next[k].tanh()).collect();
    (h_next, c_next)
}

struct OracleOut {
    node_h_init: Vec<Vec<f64>>,
    edge_h_init: Vec<Vec<f64>>,
    ctx_per_iter: Vec<Vec<f64>>,
    obj_logits: Vec<Vec<f64>>,
    pred_logits: Vec<Vec<f64>>,
}

fn oracle_forward(params: &ModelParams<f64>, scene: &EncodedScene, cfg: &ModelConfig) -> OracleOut {
    let n = scene.n_objects();
    let mut node_h: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let input: Vec<f64> = scene.soft_labels[i]
                .iter()
                .chain(scene.bboxes[i].iter())
                .chain(scene.features[i].iter())
                .copied()
                .collect();
            o_matvec(&params.node_embed, &input)
        })
        .collect();
    let mut node_c = vec![vec![0.0; cfg.d_v]; n];
    let pairs: Vec<(usize, usize)> = ordered_pairs(n).collect();
    let mut edge_h: Vec<Vec<f64>> = (0..pairs.len())
        .map(|s| o_matvec(&params.edge_embed, &scene.union_features[s]))
        .collect();
    let mut edge_c = vec![vec![0.0; cfg.d_e]; pairs.len()];
    let node_h_init = node_h.clone();
    let edge_h_init = edge_h.clone();

    let mut ctx_h = vec![0.0; cfg.d_c];
    let mut ctx_c = vec![0.0; cfg.d_c];
    let mut ctx_per_iter = Vec::new();

    for _ in 0..cfg.n_iters {
        let prev_ctx = ctx_h.clone();
        if !cfg.no_context {
            let c_o = o_attend(&node_h, &ctx_h, &params.node_attn);
            let c_r = o_attend(&edge_h, &ctx_h, &params.edge_attn);
            let input: Vec<f64> = c_o.iter().chain(&c_r).copied().collect();
            let (h, c) = o_lstm(&params.ctx_lstm, &input, &ctx_h, &ctx_c);
            ctx_h = h;
            ctx_c = c;
        }
        let mut new_eh = Vec::new();
        let mut new_ec = Vec::new();
        for (s, &(i, j)) in pairs.iter().enumerate() {
            let input: Vec<f64> = node_h[i]
                .iter()
                .chain(&node_h[j])
                .chain(&ctx_h)
                .copied()
                .collect();
            let (h, c) = o_lstm(&params.edge_lstm, &input, &edge_h[s], &edge_c[s]);
            new_eh.push(h);
            new_ec.push(c);
        }
        edge_h = new_eh;
        edge_c = new_ec;

        let ctx_for_node = match cfg.node_ctx {
            NodeContextStage::Updated => &ctx_h,
            NodeContextStage::Previous => &prev_ctx,
        };
        let mut new_nh = Vec::new();
        let mut new_nc = Vec::new();
        for i in 0..n {
            let incoming: Vec<Vec<f64>> = (0..n)
                .filter(|&j| j != i)
                .map(|j| edge_h[pair_index(j, i, n)].clone())
                .collect();
            let query: &Vec<f64> = match cfg.incoming_query {
                crate::model::IncomingQuery::Context => ctx_for_node,
                crate::model::IncomingQuery::Node => &node_h[i],
            };
            let e_in = o_attend(&incoming, query, &params.incoming_attn);
            let input: Vec<f64> = e_in.iter().chain(ctx_for_node).copied().collect();
            let (h, c) = o_lstm(&params.node_lstm, &input, &node_h[i], &node_c[i]);
            new_nh.push(h);
            new_nc.push(c);
        }
        node_h = new_nh;
        node_c = new_nc;
        ctx_per_iter.push(ctx_h.clone());
    }

    let obj_logits = node_h
        .iter()
        .map(|h| {
            o_matvec(&params.obj_head.weight, h)
                .iter()
                .zip(params.obj_head.bias.data())
                .map(|(&x, &b)| x + b)
                .collect()
        })
        .collect();
    let pred_logits = edge_h
        .iter()
        .map(|h| {
            o_matvec(&params.pred_head.weight, h)
                .iter()
                .zip(params.pred_head.bias.data())
                .map(|(&x, &b)| x + b)
                .collect()
        })
        .collect();

    OracleOut {
        node_h_init,
        edge_h_init,
        ctx_per_iter,
        obj_logits,
        pred_logits,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ── init_graph ────────────────────────────────────────────────────────

#[test]
fn three_objects_make_six_edge_slots() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 1);
    let scene = random_scene(7, 3, &cfg);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let state = init_graph(&mut tape, &scene, &vars, &cfg).unwrap();
    assert_eq!(state.edge_h.len(), 6);
    assert_eq!(state.node_h.len(), 3);
    assert_eq!(state.iteration, 0);
    assert_eq!(
        tape.value(state.ctx_h).data(),
        vec![0.0; cfg.d_c].as_slice()
    );
}

#[test]
fn all_zero_inputs_give_zero_initial_states() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 1);
    let mut scene = random_scene(7, 3, &cfg);
    for s in &mut scene.soft_labels {
        s.iter_mut().for_each(|x| *x = 0.0);
    }
    scene.bboxes.iter_mut().for_each(|b| *b = [0.0; 4]);
    for f in scene
        .features
        .iter_mut()
        .chain(scene.union_features.iter_mut())
    {
        f.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let state = init_graph(&mut tape, &scene, &vars, &cfg).unwrap();
    for &h in state.node_h.iter().chain(&state.edge_h) {
        assert!(tape.value(h).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn single_object_scene_is_too_small() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 1);
    let mut scene = random_scene(7, 2, &cfg);
    scene.labels.truncate(1);
    scene.soft_labels.truncate(1);
    scene.bboxes.truncate(1);
    scene.features.truncate(1);
    scene.union_features.clear();
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    assert!(matches!(
        init_graph(&mut tape, &scene, &vars, &cfg),
        Err(Error::SceneTooSmall { .. })
    ));
}

#[test]
fn init_matches_direct_matrix_multiply_oracle() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 2);
    let scene = random_scene(8, 3, &cfg);
    let oracle = oracle_forward(&params, &scene, &cfg);

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let state = init_graph(&mut tape, &scene, &vars, &cfg).unwrap();
    for (i, &h) in state.node_h.iter().enumerate() {
        assert!(max_abs_diff(tape.value(h).data(), &oracle.node_h_init[i]) < 1e-12);
    }
    for (s, &h) in state.edge_h.iter().enumerate() {
        assert!(max_abs_diff(tape.value(h).data(), &oracle.edge_h_init[s]) < 1e-12);
    }
}

// ── attend ────────────────────────────────────────────────────────────

#[test]
fn attend_over_one_element_returns_it_unchanged() {
    let mut tape = Tape::new();
    let el = tape.leaf(Tensor::vector(vec![0.4, -1.2, 3.0]).unwrap());
    let query = tape.leaf(Tensor::vector(vec![0.5, 0.5]).unwrap());
    let proj = tape.leaf(Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.1).collect()).unwrap());
    let score = tape.leaf(Tensor::vector(vec![1.0, -2.0]).unwrap());
    let (weights, summary) = attend(&mut tape, &[el], query, proj, score).unwrap();
    assert_eq!(tape.value(weights).data(), &[1.0]);
    assert_eq!(tape.value(summary).data(), tape.value(el).data());
}

#[test]
fn identical_elements_attract_uniform_weights() {
    let mut tape = Tape::new();
    let el = Tensor::vector(vec![0.7, 0.1]).unwrap();
    let els: Vec<Var> = (0..4).map(|_| tape.leaf(el.clone())).collect();
    let query = tape.leaf(Tensor::vector(vec![-0.3]).unwrap());
    let proj = tape.leaf(Tensor::matrix(3, 3, vec![0.2; 9]).unwrap());
    let score = tape.leaf(Tensor::vector(vec![0.5, -0.5, 1.5]).unwrap());
    let (weights, summary) = attend(&mut tape, &els, query, proj, score).unwrap();
    for &w in tape.value(weights).data() {
        assert!((w - 0.25f64).abs() < 1e-15);
    }
    assert!(max_abs_diff(tape.value(summary).data(), el.data()) < 1e-15);
}

#[test]
fn attend_matches_hand_computation_on_two_elements() {
    // Tiny fixed parameters, d_x = d_q = 2, d_phi = 2.
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let q = [0.5, -0.5];
    let proj_rows = [[0.1, 0.2, 0.3, -0.1], [-0.2, 0.4, 0.0, 0.2]];
    let w = [1.0, -1.0];

    // Hand evaluation of the attention formula.
    let score = |e: &[f64]| -> f64 {
        let joint = [e[0], e[1], q[0], q[1]];
        let mut s = 0.0;
        for (k, row) in proj_rows.iter().enumerate() {
            let pre: f64 = row.iter().zip(&joint).map(|(a, b)| a * b).sum();
            s += w[k] * pre.tanh();
        }
        s
    };
    let (s1, s2) = (score(&e1), score(&e2));
    let z = s1.exp() + s2.exp();
    let (a1, a2) = (s1.exp() / z, s2.exp() / z);
    let expected = [a1 * e1[0] + a2 * e2[0], a1 * e1[1] + a2 * e2[1]];

    let mut tape = Tape::new();
    let v1 = tape.leaf(Tensor::vector(e1).unwrap());
    let v2 = tape.leaf(Tensor::vector(e2).unwrap());
    let query = tape.leaf(Tensor::vector(q.to_vec()).unwrap());
    let proj = tape.leaf(Tensor::matrix(2, 4, proj_rows.concat()).unwrap());
    let score_v = tape.leaf(Tensor::vector(w.to_vec()).unwrap());
    let (weights, summary) = attend(&mut tape, &[v1, v2], query, proj, score_v).unwrap();
    assert!((tape.value(weights).data()[0] - a1).abs() < 1e-10);
    assert!((tape.value(weights).data()[1] - a2).abs() < 1e-10);
    assert!(max_abs_diff(tape.value(summary).data(), &expected) < 1e-10);
}

// ── lstm_step ─────────────────────────────────────────────────────────

#[test]
fn zero_everything_is_a_fixed_point() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::zeros(&cfg);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let lstm = vars.lstm("ctx_lstm");
    let input = tape.leaf(Tensor::zeros(vec![cfg.ctx_lstm_input()]));
    let h = tape.leaf(Tensor::zeros(vec![cfg.d_c]));
    let c = tape.leaf(Tensor::zeros(vec![cfg.d_c]));
    let (h2, c2) = lstm_step(&mut tape, &lstm, input, h, c).unwrap();
    assert!(tape.value(h2).data().iter().all(|&x| x == 0.0));
    assert!(tape.value(c2).data().iter().all(|&x| x == 0.0));
}

#[test]
fn zero_weights_halve_the_carried_cell() {
    // Gates at sigmoid(0) = 0.5, candidate at tanh(0) = 0:
    // c' = 0.5·2 = 1, h' = 0.5·tanh(1).
    let mut tape = Tape::new();
    fn tape_leaf_zeros(tape: &mut Tape<f64>, shape: Vec<usize>) -> Var {
        tape.leaf(Tensor::zeros(shape))
    }
    let w = LstmVars {
        w_input: tape_leaf_zeros(&mut tape, vec![1, 1]),
        u_input: tape_leaf_zeros(&mut tape, vec![1, 1]),
        b_input: tape_leaf_zeros(&mut tape, vec![1]),
        w_forget: tape_leaf_zeros(&mut tape, vec![1, 1]),
        u_forget: tape_leaf_zeros(&mut tape, vec![1, 1]),
        b_forget: tape_leaf_zeros(&mut tape, vec![1]),
        w_cell: tape_leaf_zeros(&mut tape, vec![1, 1]),
        u_cell: tape_leaf_zeros(&mut tape, vec![1, 1]),
        b_cell: tape_leaf_zeros(&mut tape, vec![1]),
        w_output: tape_leaf_zeros(&mut tape, vec![1, 1]),
        u_output: tape_leaf_zeros(&mut tape, vec![1, 1]),
        b_output: tape_leaf_zeros(&mut tape, vec![1]),
    };
    let input = tape.leaf(Tensor::vector(vec![0.0]).unwrap());
    let h = tape.leaf(Tensor::vector(vec![0.0]).unwrap());
    let c = tape.leaf(Tensor::vector(vec![2.0]).unwrap());
    let (h2, c2) = lstm_step(&mut tape, &w, input, h, c).unwrap();
    assert!((tape.scalar_value(c2) - 1.0).abs() < 1e-15);
    let expected_h = 0.5 * 1.0f64.tanh();
    assert!((expected_h - 0.3808).abs() < 1e-4);
    assert!((tape.scalar_value(h2) - expected_h).abs() < 1e-15);
}

#[test]
fn lstm_step_gradients_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hidden = 3;
    let input_dim = 4;
    let rt = |rng: &mut ChaCha8Rng, shape: Vec<usize>| {
        let numel: usize = shape.iter().product();
        Tensor::new(
            shape,
            (0..numel).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        )
        .unwrap()
    };
    let names = [
        "w_input", "u_input", "b_input", "w_forget", "u_forget", "b_forget", "w_cell", "u_cell",
        "b_cell", "w_output", "u_output", "b_output",
    ];
    let mut inputs: Vec<(String, Tensor<f64>)> = names
        .iter()
        .map(|&n| {
            let shape = if n.starts_with("w_") {
                vec![hidden, input_dim]
            } else if n.starts_with("u_") {
                vec![hidden, hidden]
            } else {
                vec![hidden]
            };
            (n.to_string(), rt(&mut rng, shape))
        })
        .collect();
    let x = rt(&mut rng, vec![input_dim]);
    let h0 = rt(&mut rng, vec![hidden]);
    let c0 = rt(&mut rng, vec![hidden]);
    let probe = rt(&mut rng, vec![hidden]);

    let build = move |tape: &mut Tape<f64>,
                      params: &[(String, Tensor<f64>)]|
          -> (Var, Vec<(String, Var)>) {
        let mut leaves = Vec::new();
        let mut g = |tape: &mut Tape<f64>, name: &str| {
            let t = &params.iter().find(|(n, _)| n == name).unwrap().1;
            let var = tape.leaf(t.clone().with_grad());
            leaves.push((name.to_string(), var));
            var
        };
        let w = LstmVars {
            w_input: g(tape, "w_input"),
            u_input: g(tape, "u_input"),
            b_input: g(tape, "b_input"),
            w_forget: g(tape, "w_forget"),
            u_forget: g(tape, "u_forget"),
            b_forget: g(tape, "b_forget"),
            w_cell: g(tape, "w_cell"),
            u_cell: g(tape, "u_cell"),
            b_cell: g(tape, "b_cell"),
            w_output: g(tape, "w_output"),
            u_output: g(tape, "u_output"),
            b_output: g(tape, "b_output"),
        };
        let xi = tape.leaf(x.clone());
        let hi = tape.leaf(h0.clone());
        let ci = tape.leaf(c0.clone());
        let (h2, c2) = lstm_step(tape, &w, xi, hi, ci).unwrap();
        let p = tape.leaf(probe.clone());
        let a = tape.dot(h2, p).unwrap();
        let b = tape.dot(c2, p).unwrap();
        (tape.add(a, b).unwrap(), leaves)
    };

    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, &inputs);
    let grads = tape.backward(loss).unwrap();
    let analytic: HashMap<String, Vec<f64>> = leaves
        .iter()
        .map(|(n, v)| (n.clone(), grads.get(*v).data().to_vec()))
        .collect();

    let report = finite_diff_check(
        &mut inputs,
        &analytic,
        |p| {
            let mut t = Tape::new();
            let (loss, _) = build(&mut t, p);
            Ok(t.scalar_value(loss))
        },
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.pass(), "{report}");
}

// ── update stages against the replay oracle ──────────────────────────

#[test]
fn zero_params_leave_context_edges_and_nodes_at_zero() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::zeros(&cfg);
    let scene = random_scene(3, 3, &cfg);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut state = init_graph(&mut tape, &scene, &vars, &cfg).unwrap();
    let mut trace = Vec::new();
    update_context(&mut tape, &mut state, &vars, &mut trace).unwrap();
    assert!(tape.value(state.ctx_h).data().iter().all(|&x| x == 0.0));
    update_edges(&mut tape, &mut state, &vars).unwrap();
    for &e in &state.edge_h {
        assert!(tape.value(e).data().iter().all(|&x| x == 0.0));
    }
    update_nodes(&mut tape, &mut state, &vars, &cfg, &mut trace).unwrap();
    for &v in &state.node_h {
        assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn directed_edges_differ_when_endpoints_differ() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 6);
    let scene = random_scene(4, 3, &cfg);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut state = init_graph(&mut tape, &scene, &vars, &cfg).unwrap();
    let mut trace = Vec::new();
    update_context(&mut tape, &mut state, &vars, &mut trace).unwrap();
    update_edges(&mut tape, &mut state, &vars).unwrap();
    let ij = tape.value(state.edge_h[pair_index(0, 1, 3)]).data();
    let ji = tape.value(state.edge_h[pair_index(1, 0, 3)]).data();
    assert!(max_abs_diff(ij, ji) > 1e-6);
}

#[test]
fn full_forward_matches_the_replay_oracle() {
    for (seed, n_objects, node_ctx) in [
        (10u64, 3usize, NodeContextStage::Updated),
        (11, 4, NodeContextStage::Updated),
        (12, 3, NodeContextStage::Previous),
    ] {
        let cfg = ModelConfig {
            node_ctx,
            ..small_cfg()
        };
        let params = ModelParams::<f64>::init(&cfg, seed);
        let scene = random_scene(seed + 100, n_objects, &cfg);
        let oracle = oracle_forward(&params, &scene, &cfg);

        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let pass = forward(&mut tape, &scene, &vars, &cfg).unwrap();

        for (got, want) in pass.ctx_trace.iter().zip(&oracle.ctx_per_iter) {
            assert!(max_abs_diff(tape.value(*got).data(), want) < 1e-9);
        }
        for (got, want) in pass.obj_logits.iter().zip(&oracle.obj_logits) {
            assert!(max_abs_diff(tape.value(*got).data(), want) < 1e-9);
        }
        for (got, want) in pass.pred_logits.iter().zip(&oracle.pred_logits) {
            assert!(max_abs_diff(tape.value(*got).data(), want) < 1e-9);
        }
    }
}

#[test]
fn no_context_forward_matches_oracle_and_keeps_ctx_zero() {
    let cfg = ModelConfig {
        no_context: true,
        ..small_cfg()
    };
    let params = ModelParams::<f64>::init(&cfg, 13);
    let scene = random_scene(14, 3, &cfg);
    let oracle = oracle_forward(&params, &scene, &cfg);

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let pass = forward(&mut tape, &scene, &vars, &cfg).unwrap();
    assert!(tape
        .value(pass.state.ctx_h)
        .data()
        .iter()
        .all(|&x| x == 0.0));
    for (got, want) in pass.obj_logits.iter().zip(&oracle.obj_logits) {
        assert!(max_abs_diff(tape.value(*got).data(), want) < 1e-9);
    }
}

// ── forward contract ──────────────────────────────────────────────────

#[test]
fn forward_shapes_follow_the_contract() {
    let cfg = ModelConfig {
        n_obj_classes: 30,
        n_pred_classes: 10,
        d_c: 8,
        d_v: 8,
        d_e: 8,
        d_phi: 4,
        feat_dim: 6,
        ..ModelConfig::default()
    };
    let params = ModelParams::<f64>::init(&cfg, 0);
    let scene = random_scene(20, 4, &cfg);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let pass = forward(&mut tape, &scene, &vars, &cfg).unwrap();
    assert_eq!(pass.obj_logits.len(), 4);
    assert_eq!(tape.value(pass.obj_logits[0]).shape(), &[30]);
    assert_eq!(pass.pred_logits.len(), 12);
    assert_eq!(tape.value(pass.pred_logits[0]).shape(), &[11]);
}

#[test]
fn zero_iterations_config_is_rejected() {
    let cfg = ModelConfig {
        n_iters: 0,
        ..small_cfg()
    };
    let params = ModelParams::<f64>::init(&small_cfg(), 0);
    let scene = random_scene(21, 3, &small_cfg());
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    assert!(forward(&mut tape, &scene, &vars, &cfg).is_err());
}

#[test]
fn two_iterations_differ_from_one() {
    let cfg1 = ModelConfig {
        n_iters: 1,
        ..small_cfg()
    };
    let cfg2 = small_cfg();
    let params = ModelParams::<f64>::init(&cfg2, 22);
    let scene = random_scene(23, 3, &cfg2);

    let run = |cfg: &ModelConfig| {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let pass = forward(&mut tape, &scene, &vars, cfg).unwrap();
        pass.obj_logits_f64(&tape)
    };
    let one = run(&cfg1);
    let two = run(&cfg2);
    let diff: f64 = one
        .iter()
        .zip(&two)
        .map(|(a, b)| max_abs_diff(a, b))
        .fold(0.0, f64::max);
    assert!(diff > 1e-9);
}

#[test]
fn zero_params_collapse_logits_to_the_head_biases() {
    let cfg = small_cfg();
    let mut params = ModelParams::<f64>::zeros(&cfg);
    let obj_bias: Vec<f64> = (0..cfg.n_obj_classes).map(|i| i as f64 * 0.25).collect();
    let pred_bias: Vec<f64> = (0..cfg.n_pred_classes + 1).map(|i| -(i as f64)).collect();
    params.obj_head.bias = Tensor::vector(obj_bias.clone()).unwrap();
    params.pred_head.bias = Tensor::vector(pred_bias.clone()).unwrap();

    let scene = random_scene(24, 3, &cfg);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let pass = forward(&mut tape, &scene, &vars, &cfg).unwrap();
    for &l in &pass.obj_logits {
        assert_eq!(tape.value(l).data(), obj_bias.as_slice());
    }
    for &l in &pass.pred_logits {
        assert_eq!(tape.value(l).data(), pred_bias.as_slice());
    }
}

#[test]
fn attention_weights_are_distributions_at_every_call() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 25);
    let scene = random_scene(26, 4, &cfg);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let pass = forward(&mut tape, &scene, &vars, &cfg).unwrap();
    assert!(!pass.attn_weights.is_empty());
    for &w in &pass.attn_weights {
        let data = tape.value(w).data();
        let sum: f64 = data.iter().sum();
        assert!(data.iter().all(|&x| x > 0.0 && x <= 1.0));
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 30);
    let n = 4;
    let scene = random_scene(31, n, &cfg);
    let perm = vec![2usize, 0, 3, 1];

    let permuted = permute_scene(&scene, &perm);
    let run = |s: &EncodedScene| {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let pass = forward(&mut tape, s, &vars, &cfg).unwrap();
        (
            pass.obj_logits_f64(&tape),
            pass.pred_logits_f64(&tape),
            pass.ctx_trace
                .iter()
                .map(|&c| tape.value(c).to_f64_vec())
                .collect::<Vec<_>>(),
        )
    };
    let (obj_a, pred_a, ctx_a) = run(&scene);
    let (obj_b, pred_b, ctx_b) = run(&permuted);

    for k in 0..n {
        assert!(max_abs_diff(&obj_b[k], &obj_a[perm[k]]) < 1e-9);
    }
    for (a, b) in ordered_pairs(n) {
        let new_slot = pair_index(a, b, n);
        let old_slot = pair_index(perm[a], perm[b], n);
        assert!(max_abs_diff(&pred_b[new_slot], &pred_a[old_slot]) < 1e-9);
    }
    for (ca, cb) in ctx_a.iter().zip(&ctx_b) {
        assert!(max_abs_diff(ca, cb) < 1e-9);
    }
}

/// New object k is old object perm[k]; edge features follow the pairs.
pub fn permute_scene(scene: &EncodedScene, perm: &[usize]) -> EncodedScene {
    let n = scene.n_objects();
    assert_eq!(perm.len(), n);
    let union_features = ordered_pairs(n)
        .map(|(a, b)| scene.union_features[pair_index(perm[a], perm[b], n)].clone())
        .collect();
    let inverse = {
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        inv
    };
    EncodedScene {
        id: scene.id.clone(),
        labels: perm.iter().map(|&o| scene.labels[o]).collect(),
        soft_labels: perm.iter().map(|&o| scene.soft_labels[o].clone()).collect(),
        bboxes: perm.iter().map(|&o| scene.bboxes[o]).collect(),
        features: perm.iter().map(|&o| scene.features[o].clone()).collect(),
        union_features,
        relations: scene
            .relations
            .iter()
            .map(|r| crate::data::Relation {
                subj: inverse[r.subj],
                obj: inverse[r.obj],
                pred: r.pred,
            })
            .collect(),
    }
}
