//! The graph network: initialization of node/edge states from detector and
//! appearance features, attentional aggregation into a global image
//! context, and iterative LSTM refinement of context, edges and nodes,
//! ending in the object and predicate classification heads.

mod checkpoint;
mod graph;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use graph::{forward, init_graph, lstm_step, ForwardPass, GraphState};
pub use params::{AttnParams, LinearParams, LstmWeights, ModelParams, ParamVars};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which context state the node update reads: the one just produced by the
/// context update of the same iteration, or the previous iteration's.
/// The edge update always reads the just-updated context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodeContextStage {
    #[default]
    Updated,
    Previous,
}

/// Query vector for the incoming-edge attention that aggregates a node's
/// incoming edges. The context query mirrors the object-context attention
/// verbatim; the node query personalizes the aggregation per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IncomingQuery {
    Context,
    #[default]
    Node,
}

/// Model dimensions and structural switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_c: usize,
    pub d_v: usize,
    pub d_e: usize,
    pub d_phi: usize,
    pub n_iters: usize,
    pub n_obj_classes: usize,
    pub n_pred_classes: usize,
    pub feat_dim: usize,
    pub bbox_dim: usize,
    /// Ablation: skip the context update entirely and feed a zero context
    /// into the edge and node updates. Context parameters stay allocated
    /// (and untrained), so parameter counts remain comparable.
    #[serde(default)]
    pub no_context: bool,
    #[serde(default)]
    pub node_ctx: NodeContextStage,
    #[serde(default)]
    pub incoming_query: IncomingQuery,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_c: 512,
            d_v: 512,
            d_e: 512,
            d_phi: 256,
            n_iters: 2,
            n_obj_classes: 150,
            n_pred_classes: 50,
            feat_dim: 4096,
            bbox_dim: 4,
            no_context: false,
            node_ctx: NodeContextStage::Updated,
            incoming_query: IncomingQuery::Node,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for CPU-scale experiments.
    pub fn desk_scale() -> Self {
        ModelConfig {
            d_c: 64,
            d_v: 64,
            d_e: 64,
            d_phi: 32,
            feat_dim: 32,
            n_obj_classes: 30,
            n_pred_classes: 10,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_c,
            self.d_v,
            self.d_e,
            self.d_phi,
            self.n_obj_classes,
            self.n_pred_classes,
            self.feat_dim,
            self.bbox_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Input(format!(
                "all dimensions must be >= 1: {self:?}"
            )));
        }
        if self.n_iters == 0 {
            return Err(Error::Input("n_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// Input width of the node embedding: [soft label; bbox; feature].
    pub fn node_input_dim(&self) -> usize {
        self.n_obj_classes + self.bbox_dim + self.feat_dim
    }

    /// LSTM input widths: context [c_o; c_r], edge [v_i; v_j; ctx],
    /// node [e_in; ctx].
    pub fn ctx_lstm_input(&self) -> usize {
        self.d_v + self.d_e
    }
    pub fn edge_lstm_input(&self) -> usize {
        2 * self.d_v + self.d_c
    }
    pub fn node_lstm_input(&self) -> usize {
        self.d_e + self.d_c
    }

    /// Query width of the incoming-edge attention.
    pub fn incoming_query_dim(&self) -> usize {
        match self.incoming_query {
            IncomingQuery::Context => self.d_c,
            IncomingQuery::Node => self.d_v,
        }
    }
}
