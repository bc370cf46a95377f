//! Gated graph network over the schema graph.
//!
//! ```text
//! h⁰_v = r_v · ρ_v
//! a^l_v = Σ_type Σ_{(u,v) ∈ E_type} (W_type h^{l-1}_u + b_type)
//! h^l_v = GRU(h^{l-1}_v, a^l_v)
//! φ_v  = h^L_v
//! ```
//!
//! Edge types are forward and backward along foreign keys and table/column
//! membership, each with its own `W`, `b`. One GRU is shared across types
//! and steps.

use std::cell::Cell;
use std::rc::Rc;

use rand::Rng;

use crate::schema::{EdgeType, ItemType, SchemaGraph};
use crate::tensor::{self, gru_cell, init_gru, init_linear, linear, Init, ParamStore, Tape, Tensor, TensorError, Var};

thread_local! {
    static RUN_GNN_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`run_gnn`] calls made on this thread.
pub fn run_gnn_calls() -> u64 {
    RUN_GNN_CALLS.with(|c| c.get())
}

pub fn reset_run_gnn_calls() {
    RUN_GNN_CALLS.with(|c| c.set(0));
}

/// Typed edge lists in tape-ready form.
#[derive(Clone, Debug)]
pub struct GnnEdges {
    pub num_nodes: usize,
    pub typed: Vec<(EdgeType, Rc<Vec<(usize, usize)>>)>,
}

impl GnnEdges {
    pub fn from_graph(g: &SchemaGraph) -> Self {
        GnnEdges {
            num_nodes: g.num_nodes(),
            typed: EdgeType::ALL
                .iter()
                .map(|&t| (t, Rc::new(g.edges(t).to_vec())))
                .collect(),
        }
    }

    /// Row-stochastic `[n × n]` matrix averaging over each node's membership
    /// neighbors; rows of nodes without neighbors are zero.
    pub fn membership_mean(&self) -> Tensor {
        let n = self.num_nodes;
        let mut m = vec![0.0; n * n];
        let mut deg = vec![0usize; n];
        for (t, edges) in &self.typed {
            if *t == EdgeType::Membership {
                for &(s, d) in edges.iter() {
                    m[d * n + s] += 1.0;
                    deg[d] += 1;
                }
            }
        }
        for (v, &k) in deg.iter().enumerate() {
            if k > 0 {
                for x in &mut m[v * n..(v + 1) * n] {
                    *x /= k as f64;
                }
            }
        }
        Tensor::matrix(n, n, m).expect("square matrix")
    }
}

pub fn param_prefix(t: EdgeType) -> String {
    format!("gnn.{}", t.tag())
}

/// Per-type message transforms `gnn.{fwd,back,bidir}` and the shared GRU `gnn.gru`.
pub fn init_params<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> tensor::Result<()> {
    for t in EdgeType::ALL {
        init_linear(store, &param_prefix(t), d, d, true, rng)?;
    }
    init_gru(store, "gnn.gru", d, d, rng)
}

/// Parameters of the base node embedding `r_v`: an item-type table
/// `node.type_emb [6 × d]` and the projection `node.w_r [d × (d + 2·d_word)]`.
pub fn init_node_params<R: Rng>(store: &mut ParamStore, d: usize, d_word: usize, rng: &mut R) -> tensor::Result<()> {
    store.add("node.type_emb", &[ItemType::ALL.len(), d], Init::Embedding, rng)?;
    init_linear(store, "node.w_r", d + 2 * d_word, d, false, rng)
}

/// `τ(v)` for each node.
pub fn type_embeddings(tape: &mut Tape, store: &ParamStore, types: &[ItemType]) -> tensor::Result<Var> {
    let table = tape.param(store, store.id("node.type_emb")?);
    let idx: Vec<usize> = types.iter().map(|t| t.index()).collect();
    tape.gather_rows(table, &idx)
}

/// `r_v = W_r · [τ(v); name(v); mean name of membership neighbors]`, one row
/// per node.
pub fn node_embeddings(
    tape: &mut Tape,
    store: &ParamStore,
    types: Var,
    names: Var,
    neighbor_names: Var,
) -> tensor::Result<Var> {
    let (a, b, c) = (tape.shape(types).to_vec(), tape.shape(names).to_vec(), tape.shape(neighbor_names).to_vec());
    if a[0] != b[0] || b[0] != c[0] {
        return Err(TensorError::Shape {
            op: "node_embeddings",
            left: a,
            right: b,
        });
    }
    let rows: Vec<Var> = (0..a[0])
        .map(|v| {
            let parts = [tape.row(types, v)?, tape.row(names, v)?, tape.row(neighbor_names, v)?];
            tape.concat(&parts)
        })
        .collect::<tensor::Result<_>>()?;
    let x = tape.stack_rows(&rows)?;
    linear(tape, store, "node.w_r", x)
}

#[derive(Clone, Copy, Debug)]
pub struct GnnState {
    /// `[nodes × d]`
    pub h: Var,
    /// Messages that produced `h`; `None` at step 0.
    pub a: Option<Var>,
    pub step: usize,
}

/// `h⁰ = r · ρ` row-wise.
pub fn init_node_states(tape: &mut Tape, r: Var, rho: Var) -> tensor::Result<GnnState> {
    let h = tape.scale_rows(r, rho)?;
    Ok(GnnState { h, a: None, step: 0 })
}

/// Sum over edge types and incoming edges of `W_type h_u + b_type`.
pub fn message_pass(tape: &mut Tape, store: &ParamStore, edges: &GnnEdges, h: Var) -> tensor::Result<Var> {
    let mut parts = Vec::with_capacity(edges.typed.len());
    for (t, list) in &edges.typed {
        let m = linear(tape, store, &param_prefix(*t), h)?;
        parts.push(tape.scatter_rows(m, list.clone(), edges.num_nodes)?);
    }
    tape.add_all(&parts)
}

pub fn gnn_step(tape: &mut Tape, store: &ParamStore, edges: &GnnEdges, state: GnnState) -> tensor::Result<GnnState> {
    let a = message_pass(tape, store, edges, state.h)?;
    let h = gru_cell(tape, store, "gnn.gru", state.h, a)?;
    Ok(GnnState {
        h,
        a: Some(a),
        step: state.step + 1,
    })
}

/// `steps` rounds of message passing and GRU updates; returns `φ`.
pub fn run_gnn(
    tape: &mut Tape,
    store: &ParamStore,
    edges: &GnnEdges,
    r: Var,
    rho: Var,
    steps: usize,
) -> tensor::Result<Var> {
    RUN_GNN_CALLS.with(|c| c.set(c.get() + 1));
    let mut state = init_node_states(tape, r, rho)?;
    for _ in 0..steps {
        state = gnn_step(tape, store, edges, state)?;
    }
    Ok(state.h)
}
