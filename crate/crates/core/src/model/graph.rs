//! The iterative refinement pass over one scene graph.
//!
//! Per iteration: the global context attends over all node and edge states
//! and updates itself through its LSTM; every edge then updates from its
//! endpoints plus the fresh context; every node aggregates its incoming
//! edges by attention (queried by the node itself) and updates from that
//! aggregate plus the context. Classification heads read the final states.

use super::params::{LstmVars, ParamVars};
use super::{IncomingQuery, ModelConfig, NodeContextStage};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::data::{ordered_pairs, EncodedScene};
use crate::error::{Error, Result};

/// Per-iteration hidden and cell state for one scene: one slot per node,
/// one per ordered pair (indexed by [`crate::data::pair_index`]), and the
/// single image-level context.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub node_h: Vec<Var>,
    pub node_cell: Vec<Var>,
    pub edge_h: Vec<Var>,
    pub edge_cell: Vec<Var>,
    pub ctx_h: Var,
    pub ctx_cell: Var,
    /// Context from before the most recent context update; node updates
    /// read this when the model runs with [`NodeContextStage::Previous`].
    pub prev_ctx_h: Var,
    pub iteration: usize,
    pub n_objects: usize,
}

/// Outcome of a full forward pass.
pub struct ForwardPass {
    /// Per-node object logits (each `n_obj_classes`).
    pub obj_logits: Vec<Var>,
    /// Per-ordered-pair predicate logits (each `n_pred_classes + 1`,
    /// background at index 0).
    pub pred_logits: Vec<Var>,
    pub state: GraphState,
    /// Softmax outputs of every attention call made during the pass.
    pub attn_weights: Vec<Var>,
    /// Context hidden state observed after each iteration.
    pub ctx_trace: Vec<Var>,
}

impl ForwardPass {
    pub fn obj_logits_f64<F: Real>(&self, tape: &Tape<F>) -> Vec<Vec<f64>> {
        self.obj_logits
            .iter()
            .map(|&v| tape.value(v).to_f64_vec())
            .collect()
    }

    pub fn pred_logits_f64<F: Real>(&self, tape: &Tape<F>) -> Vec<Vec<f64>> {
        self.pred_logits
            .iter()
            .map(|&v| tape.value(v).to_f64_vec())
            .collect()
    }
}

/// Build the initial state: node_h[i] = node_embed · [soft; bbox; feat],
/// edge_h[(i,j)] = edge_embed · f_ij, all cells and the context zero.
pub fn init_graph<F: Real>(
    tape: &mut Tape<F>,
    scene: &EncodedScene,
    params: &ParamVars,
    cfg: &ModelConfig,
) -> Result<GraphState> {
    let n = scene.n_objects();
    if n < 2 {
        return Err(Error::SceneTooSmall {
            id: scene.id.clone(),
            n_objects: n,
        });
    }

    let node_embed = params.get("node_embed");
    let edge_embed = params.get("edge_embed");

    let mut node_h = Vec::with_capacity(n);
    let mut node_cell = Vec::with_capacity(n);
    for i in 0..n {
        if scene.soft_labels[i].len() != cfg.n_obj_classes {
            return Err(Error::Dimension {
                op: "init_graph soft_label",
                lhs: vec![scene.soft_labels[i].len()],
                rhs: vec![cfg.n_obj_classes],
            });
        }
        if scene.features[i].len() != cfg.feat_dim {
            return Err(Error::Dimension {
                op: "init_graph feature",
                lhs: vec![scene.features[i].len()],
                rhs: vec![cfg.feat_dim],
            });
        }
        let soft = tape.leaf(Tensor::from_f64(
            vec![cfg.n_obj_classes],
            &scene.soft_labels[i],
        )?);
        let bbox = tape.leaf(Tensor::from_f64(vec![cfg.bbox_dim], &scene.bboxes[i])?);
        let feat = tape.leaf(Tensor::from_f64(vec![cfg.feat_dim], &scene.features[i])?);
        let input = tape.concat(&[soft, bbox, feat], 0)?;
        node_h.push(tape.matvec(node_embed, input)?);
        node_cell.push(tape.leaf(Tensor::zeros(vec![cfg.d_v])));
    }

    let mut edge_h = Vec::with_capacity(n * (n - 1));
    let mut edge_cell = Vec::with_capacity(n * (n - 1));
    for (slot, _) in scene.union_features.iter().enumerate() {
        let f_ij = &scene.union_features[slot];
        if f_ij.len() != cfg.feat_dim {
            return Err(Error::Dimension {
                op: "init_graph union_feature",
                lhs: vec![f_ij.len()],
                rhs: vec![cfg.feat_dim],
            });
        }
        let feat = tape.leaf(Tensor::from_f64(vec![cfg.feat_dim], f_ij)?);
        edge_h.push(tape.matvec(edge_embed, feat)?);
        edge_cell.push(tape.leaf(Tensor::zeros(vec![cfg.d_e])));
    }

    let ctx_h = tape.leaf(Tensor::zeros(vec![cfg.d_c]));
    let ctx_cell = tape.leaf(Tensor::zeros(vec![cfg.d_c]));

    Ok(GraphState {
        node_h,
        node_cell,
        edge_h,
        edge_cell,
        ctx_h,
        ctx_cell,
        prev_ctx_h: ctx_h,
        iteration: 0,
        n_objects: n,
    })
}

/// Soft attention: score each element by scoreᵀ·tanh(proj·[element; query]),
/// softmax the scores, and return (weights, weighted sum of the elements).
pub fn attend<F: Real>(
    tape: &mut Tape<F>,
    elements: &[Var],
    query: Var,
    proj: Var,
    score: Var,
) -> Result<(Var, Var)> {
    if elements.is_empty() {
        return Err(Error::Domain {
            op: "attend",
            msg: "no elements to attend over".into(),
        });
    }
    let mut scores = Vec::with_capacity(elements.len());
    for &el in elements {
        let joint = tape.concat(&[el, query], 0)?;
        let hidden = tape.matvec(proj, joint)?;
        let act = tape.tanh(hidden)?;
        scores.push(tape.dot(score, act)?);
    }
    let stacked = tape.concat(&scores, 0)?;
    let weights = tape.softmax(stacked)?;

    let mut summary: Option<Var> = None;
    for (i, &el) in elements.iter().enumerate() {
        let w_i = tape.select(weights, i)?;
        let term = tape.mul(el, w_i)?;
        summary = Some(match summary {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok((weights, summary.expect("non-empty elements")))
}

/// One LSTM cell step on the tape.
pub fn lstm_step<F: Real>(
    tape: &mut Tape<F>,
    weights: &LstmVars,
    input: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape<F>, w: Var, u: Var, b: Var| -> Result<Var> {
        let wx = tape.matvec(w, input)?;
        let uh = tape.matvec(u, h)?;
        let sum = tape.add(wx, uh)?;
        tape.add(sum, b)
    };
    let i_pre = gate(tape, weights.w_input, weights.u_input, weights.b_input)?;
    let i = tape.sigmoid(i_pre)?;
    let f_pre = gate(tape, weights.w_forget, weights.u_forget, weights.b_forget)?;
    let f = tape.sigmoid(f_pre)?;
    let g_pre = gate(tape, weights.w_cell, weights.u_cell, weights.b_cell)?;
    let g = tape.tanh(g_pre)?;
    let o_pre = gate(tape, weights.w_output, weights.u_output, weights.b_output)?;
    let o = tape.sigmoid(o_pre)?;

    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let c_act = tape.tanh(c_next)?;
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, c_next))
}

/// Refresh the image context: attend over nodes and over edges (query:
/// current context), then step the context LSTM on [c_o; c_r].
pub fn update_context<F: Real>(
    tape: &mut Tape<F>,
    state: &mut GraphState,
    params: &ParamVars,
    trace: &mut Vec<Var>,
) -> Result<()> {
    let (node_proj, node_score) = params.attn("node_attn");
    let (edge_proj, edge_score) = params.attn("edge_attn");
    let (w_o, c_o) = attend(tape, &state.node_h, state.ctx_h, node_proj, node_score)?;
    let (w_r, c_r) = attend(tape, &state.edge_h, state.ctx_h, edge_proj, edge_score)?;
    trace.push(w_o);
    trace.push(w_r);

    let input = tape.concat(&[c_o, c_r], 0)?;
    let lstm = params.lstm("ctx_lstm");
    let (h, c) = lstm_step(tape, &lstm, input, state.ctx_h, state.ctx_cell)?;
    state.prev_ctx_h = state.ctx_h;
    state.ctx_h = h;
    state.ctx_cell = c;
    Ok(())
}

/// Step every edge LSTM on [v_i; v_j; ctx], reading this iteration's
/// pre-update node states for both endpoints.
pub fn update_edges<F: Real>(
    tape: &mut Tape<F>,
    state: &mut GraphState,
    params: &ParamVars,
) -> Result<()> {
    let lstm = params.lstm("edge_lstm");
    let n = state.n_objects;
    let mut new_h = Vec::with_capacity(state.edge_h.len());
    let mut new_cell = Vec::with_capacity(state.edge_cell.len());
    for (slot, (i, j)) in ordered_pairs(n).enumerate() {
        let input = tape.concat(&[state.node_h[i], state.node_h[j], state.ctx_h], 0)?;
        let (h, c) = lstm_step(
            tape,
            &lstm,
            input,
            state.edge_h[slot],
            state.edge_cell[slot],
        )?;
        new_h.push(h);
        new_cell.push(c);
    }
    state.edge_h = new_h;
    state.edge_cell = new_cell;
    Ok(())
}

/// Aggregate each node's incoming edges by attention (query: the node),
/// then step the node LSTM on [e_in; ctx]. All nodes read the same
/// iteration-start node states, so the update is order-independent.
pub fn update_nodes<F: Real>(
    tape: &mut Tape<F>,
    state: &mut GraphState,
    params: &ParamVars,
    cfg: &ModelConfig,
    trace: &mut Vec<Var>,
) -> Result<()> {
    let (proj, score) = params.attn("incoming_attn");
    let lstm = params.lstm("node_lstm");
    let n = state.n_objects;
    let ctx = match cfg.node_ctx {
        NodeContextStage::Updated => state.ctx_h,
        NodeContextStage::Previous => state.prev_ctx_h,
    };

    let mut new_h = Vec::with_capacity(n);
    let mut new_cell = Vec::with_capacity(n);
    for i in 0..n {
        let incoming: Vec<Var> = (0..n)
            .filter(|&j| j != i)
            .map(|j| state.edge_h[crate::data::pair_index(j, i, n)])
            .collect();
        let query = match cfg.incoming_query {
            IncomingQuery::Context => ctx,
            IncomingQuery::Node => state.node_h[i],
        };
        let (w, e_in) = attend(tape, &incoming, query, proj, score)?;
        trace.push(w);
        let input = tape.concat(&[e_in, ctx], 0)?;
        let (h, c) = lstm_step(tape, &lstm, input, state.node_h[i], state.node_cell[i])?;
        new_h.push(h);
        new_cell.push(c);
    }
    state.node_h = new_h;
    state.node_cell = new_cell;
    state.iteration += 1;
    Ok(())
}

/// Full pass: init, `n_iters` refinement rounds, classification heads.
/// With `cfg.no_context` the context update is skipped and the context
/// stays at its zero initialization, so the context attention and LSTM
/// parameters never enter the computation.
pub fn forward<F: Real>(
    tape: &mut Tape<F>,
    scene: &EncodedScene,
    params: &ParamVars,
    cfg: &ModelConfig,
) -> Result<ForwardPass> {
    cfg.validate()?;
    let mut state = init_graph(tape, scene, params, cfg)?;
    let mut attn_weights = Vec::new();
    let mut ctx_trace = Vec::new();

    for _ in 0..cfg.n_iters {
        if !cfg.no_context {
            update_context(tape, &mut state, params, &mut attn_weights)?;
        }
        update_edges(tape, &mut state, params)?;
        update_nodes(tape, &mut state, params, cfg, &mut attn_weights)?;
        ctx_trace.push(state.ctx_h);
    }

    let obj_w = params.get("obj_head.weight");
    let obj_b = params.get("obj_head.bias");
    let mut obj_logits = Vec::with_capacity(state.n_objects);
    for &h in &state.node_h {
        let wx = tape.matvec(obj_w, h)?;
        obj_logits.push(tape.add(wx, obj_b)?);
    }

    let pred_w = params.get("pred_head.weight");
    let pred_b = params.get("pred_head.bias");
    let mut pred_logits = Vec::with_capacity(state.edge_h.len());
    for &h in &state.edge_h {
        let wx = tape.matvec(pred_w, h)?;
        pred_logits.push(tape.add(wx, pred_b)?);
    }

    Ok(ForwardPass {
        obj_logits,
        pred_logits,
        state,
        attn_weights,
        ctx_trace,
    })
}

#[cfg(test)]
mod tests;
