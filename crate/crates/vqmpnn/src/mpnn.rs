//! The quantized message-passing pipeline: feature encoding, T synchronous
//! rounds of message exchange and state combination, and position
//! estimation. The unquantized baseline shares all of the round machinery
//! and simply hands neighbors the raw previous state.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Mlp, ParamSet, Tape, ValueId};
use crate::rng;
use crate::scenario::{NodeKind, Position, ScenarioInstance};
use crate::vq::{self, Codebook, Quantized, VqLossTerms};

/// Model dimensions. Layer shapes are fixed by the layer table; only the
/// state dimension M, latent dimension D, codebook size K and round count T
/// vary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// M: dimension of node and edge states.
    pub state_dim: usize,
    /// D: dimension of codewords and latents.
    pub latent_dim: usize,
    /// K: number of codewords.
    pub codebook_size: usize,
    /// T: communication rounds.
    pub rounds: usize,
    /// Input/readout scale in meters (normally the deployment-area side).
    /// Positions and measurements are divided by it before entering the
    /// feature MLPs; raw estimate outputs are multiplied by it.
    pub feature_scale: f64,
}

impl ModelConfig {
    pub fn new(state_dim: usize, latent_dim: usize, codebook_size: usize, rounds: usize) -> Self {
        Self {
            state_dim,
            latent_dim,
            codebook_size,
            rounds,
            feature_scale: 50.0,
        }
    }
}

impl Default for ModelConfig {
    /// The standard setup: M = 16, D = 12, K = 2^10, T = 3.
    fn default() -> Self {
        Self::new(16, 12, 1 << 10, 3)
    }
}

/// All trainable blocks: the shared feature encoders, per-round message and
/// combination MLPs, the estimation head, the projection codec, and the
/// codebook. Weights are shared across nodes and edges, so one parameter set
/// runs on a network of any size.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub set: ParamSet,
    pub config: ModelConfig,
    pub g_v: Mlp,
    pub g_e: Mlp,
    /// One message MLP per round, `g_m[t-1]` for round t.
    pub g_m: Vec<Mlp>,
    /// One combination MLP per round.
    pub g_h: Vec<Mlp>,
    pub g_est: Mlp,
    pub proj_enc: Mlp,
    pub proj_dec: Mlp,
    pub codebook: Codebook,
}

impl ModelParams {
    /// Fresh parameters: Glorot-uniform weights, zero biases, codebook
    /// uniform in `[-1/K, 1/K]`.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, "model-init");
        let mut set = ParamSet::new();
        let m = config.state_dim;
        let d = config.latent_dim;
        let g_v = Mlp::register(&mut set, "g_v", &[2, 64, m], false, &mut r);
        let g_e = Mlp::register(&mut set, "g_e", &[1, 32, 64, 32, m], false, &mut r);
        let mut g_m = Vec::with_capacity(config.rounds);
        let mut g_h = Vec::with_capacity(config.rounds);
        for t in 1..=config.rounds {
            g_m.push(Mlp::register(
                &mut set,
                &format!("g_m.round{t}"),
                &[3 * m, 80, 16, m],
                false,
                &mut r,
            ));
            g_h.push(Mlp::register(
                &mut set,
                &format!("g_h.round{t}"),
                &[2 * m, m],
                false,
                &mut r,
            ));
        }
        let g_est = Mlp::register(&mut set, "g_v_est", &[m, 128, 256, 128, 2], true, &mut r);
        let proj_enc = Mlp::register(&mut set, "proj_encoder", &[m, 16, d], false, &mut r);
        let proj_dec = Mlp::register(&mut set, "proj_decoder", &[d, 16, m], false, &mut r);
        let codebook = Codebook::register(&mut set, config.codebook_size, d, &mut r);
        Self {
            set,
            config,
            g_v,
            g_e,
            g_m,
            g_h,
            g_est,
            proj_enc,
            proj_dec,
            codebook,
        }
    }
}

/// How neighbors' states travel between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassMode {
    /// Receivers reconstruct neighbors from transmitted codeword indices.
    Vq,
    /// Receivers consume raw previous states (the unquantized baseline).
    Unquantized,
    /// Diagnostic mode: runs the quantized plumbing but hands receivers the
    /// raw state, forcing decode(encode(h)) = h.
    IdentityCodec,
}

impl PassMode {
    pub fn quantizes(&self) -> bool {
        matches!(self, PassMode::Vq | PassMode::IdentityCodec)
    }
}

/// One recorded transmission event: node `from` sends its current codeword
/// index (or raw state in the unquantized baseline) to node `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub round: usize,
    pub from: usize,
    pub to: usize,
}

/// Payload carried by every transmission of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    CodewordIndex { codebook_size: usize },
    StateVector { state_dim: usize },
}

/// Record of all transmissions of one inference run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub n_nodes: usize,
    pub payload: PayloadKind,
    pub transmissions: Vec<Transmission>,
}

/// Mutable per-round network state. Edge states are computed once and never
/// change; node states are replaced every round.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub node_states: Vec<ValueId>,
    /// Directed edges `(from, to)` in receiver-major order, shared with
    /// `edge_states`.
    pub edges: Vec<(usize, usize)>,
    pub edge_states: Vec<ValueId>,
    /// Per-node quantization of the current state, in quantizing modes.
    pub outbound: Vec<Option<Quantized>>,
    /// What receivers of each node's transmission would reconstruct.
    pub decoded: Vec<Option<ValueId>>,
    pub round: usize,
}

fn encode_node(
    tape: &mut Tape,
    model: &ModelParams,
    mode: PassMode,
    state: ValueId,
    vq_beta: Option<f64>,
    vq_terms: &mut Vec<VqLossTerms>,
    encode_indices: &mut Vec<usize>,
) -> Result<(Quantized, ValueId), DiffError> {
    let q = vq::quantize(tape, &model.set, &model.proj_enc, &model.codebook, state)?;
    encode_indices.push(q.index.0);
    if let Some(beta) = vq_beta {
        vq_terms.push(vq::vq_loss(
            tape,
            &model.set,
            &model.proj_dec,
            state,
            &q,
            beta,
        )?);
    }
    let decoded = match mode {
        PassMode::Vq => vq::decode_straight_through(tape, &model.set, &model.proj_dec, &q)?,
        PassMode::IdentityCodec => state,
        PassMode::Unquantized => unreachable!("unquantized mode never encodes"),
    };
    Ok((q, decoded))
}

/// Map node features (initial positions) and edge features (measurements)
/// into M-dimensional states, and in quantizing modes produce the initial
/// outbound codeword index of every node.
#[allow(clippy::too_many_arguments)]
pub fn encode_features(
    tape: &mut Tape,
    scenario: &ScenarioInstance,
    init_positions: &[Position],
    model: &ModelParams,
    mode: PassMode,
    vq_beta: Option<f64>,
    vq_terms: &mut Vec<VqLossTerms>,
    encode_indices: &mut Vec<usize>,
) -> Result<GraphState, DiffError> {
    assert_eq!(
        init_positions.len(),
        scenario.n_nodes(),
        "one initial position per node"
    );
    let s = model.config.feature_scale;
    let n = scenario.n_nodes();

    let mut node_states = Vec::with_capacity(n);
    for p in init_positions {
        let x = tape.input(&[p.x / s, p.y / s]);
        node_states.push(model.g_v.forward(tape, &model.set, x)?);
    }

    let edges = scenario.directed_edges();
    let mut edge_states = Vec::with_capacity(edges.len());
    for &(from, to) in &edges {
        let z = scenario.measurement(from, to);
        let e = tape.input(&[z / s]);
        edge_states.push(model.g_e.forward(tape, &model.set, e)?);
    }

    let mut outbound = vec![None; n];
    let mut decoded = vec![None; n];
    if mode.quantizes() {
        for i in 0..n {
            let (q, dec) = encode_node(
                tape,
                model,
                mode,
                node_states[i],
                vq_beta,
                vq_terms,
                encode_indices,
            )?;
            outbound[i] = Some(q);
            decoded[i] = Some(dec);
        }
    }

    Ok(GraphState {
        node_states,
        edges,
        edge_states,
        outbound,
        decoded,
        round: 0,
    })
}

/// One message `m_{j->i}`: the round MLP applied to the concatenation of the
/// reconstructed neighbor state, the receiver's own state, and the edge
/// state, in that order.
pub fn message(
    tape: &mut Tape,
    params: &ParamSet,
    g_m_round: &Mlp,
    recovered_neighbor: ValueId,
    own_state: ValueId,
    edge_state: ValueId,
) -> Result<ValueId, DiffError> {
    let cat = tape.concat(&[recovered_neighbor, own_state, edge_state]);
    g_m_round.forward(tape, params, cat)
}

/// State update: the round MLP applied to `(previous state, sum of
/// messages)`. An empty message set sums to the zero vector.
pub fn combine(
    tape: &mut Tape,
    params: &ParamSet,
    g_h_round: &Mlp,
    own_state: ValueId,
    messages: &[ValueId],
    state_dim: usize,
) -> Result<ValueId, DiffError> {
    let agg = tape.sum_vec(messages, state_dim);
    let cat = tape.concat(&[own_state, agg]);
    g_h_round.forward(tape, params, cat)
}

/// Advance one synchronous round: every round-t message reads exclusively
/// the round-(t-1) snapshot, then every node re-encodes its new state.
#[allow(clippy::too_many_arguments)]
pub fn advance_round(
    tape: &mut Tape,
    scenario: &ScenarioInstance,
    state: &GraphState,
    model: &ModelParams,
    mode: PassMode,
    round: usize,
    vq_beta: Option<f64>,
    vq_terms: &mut Vec<VqLossTerms>,
    encode_indices: &mut Vec<usize>,
    trace: &mut Vec<Transmission>,
) -> Result<GraphState, DiffError> {
    let n = scenario.n_nodes();
    let m = model.config.state_dim;
    let g_m_round = &model.g_m[round - 1];
    let g_h_round = &model.g_h[round - 1];

    let mut new_states = Vec::with_capacity(n);
    let mut edge_cursor = 0;
    for i in 0..n {
        let nbrs = &scenario.neighbors[i];
        let mut msgs = Vec::with_capacity(nbrs.len());
        for &j in nbrs {
            let edge_state = state.edge_states[edge_cursor];
            debug_assert_eq!(state.edges[edge_cursor], (j, i));
            edge_cursor += 1;
            let recovered = match mode {
                PassMode::Unquantized => state.node_states[j],
                _ => state.decoded[j].expect("quantizing mode keeps decoded states"),
            };
            trace.push(Transmission {
                round,
                from: j,
                to: i,
            });
            msgs.push(message(
                tape,
                &model.set,
                g_m_round,
                recovered,
                state.node_states[i],
                edge_state,
            )?);
        }
        new_states.push(combine(
            tape,
            &model.set,
            g_h_round,
            state.node_states[i],
            &msgs,
            m,
        )?);
    }

    let mut outbound = vec![None; n];
    let mut decoded = vec![None; n];
    if mode.quantizes() {
        for (i, &h) in new_states.iter().enumerate() {
            let (q, dec) = encode_node(tape, model, mode, h, vq_beta, vq_terms, encode_indices)?;
            outbound[i] = Some(q);
            decoded[i] = Some(dec);
        }
    }

    Ok(GraphState {
        node_states: new_states,
        edges: state.edges.clone(),
        edge_states: state.edge_states.clone(),
        outbound,
        decoded,
        round,
    })
}

/// Run all T rounds.
#[allow(clippy::too_many_arguments)]
pub fn run_rounds(
    tape: &mut Tape,
    scenario: &ScenarioInstance,
    mut state: GraphState,
    model: &ModelParams,
    mode: PassMode,
    vq_beta: Option<f64>,
    vq_terms: &mut Vec<VqLossTerms>,
    encode_indices: &mut Vec<usize>,
    trace: &mut Vec<Transmission>,
) -> Result<GraphState, DiffError> {
    for t in 1..=model.config.rounds {
        state = advance_round(
            tape,
            scenario,
            &state,
            model,
            mode,
            t,
            vq_beta,
            vq_terms,
            encode_indices,
            trace,
        )?;
    }
    Ok(state)
}

/// Read out estimated positions for agent nodes from their final states.
/// Anchors are excluded.
pub fn estimate_positions(
    tape: &mut Tape,
    scenario: &ScenarioInstance,
    state: &GraphState,
    model: &ModelParams,
) -> Result<(Vec<ValueId>, Vec<Position>), DiffError> {
    let mut ids = Vec::with_capacity(scenario.n_agents());
    let mut positions = Vec::with_capacity(scenario.n_agents());
    for i in 0..scenario.n_nodes() {
        if scenario.kinds[i] != NodeKind::Agent {
            continue;
        }
        let raw = model
            .g_est
            .forward(tape, &model.set, state.node_states[i])?;
        let est = tape.scale(raw, model.config.feature_scale);
        let v = tape.value(est);
        positions.push(Position::new(v[0], v[1]));
        ids.push(est);
    }
    Ok((ids, positions))
}

/// A complete recorded inference run over one scenario.
#[derive(Debug)]
pub struct NetworkRun {
    pub tape: Tape,
    pub state: GraphState,
    /// One entry per encode event (every node, rounds 0..=T), present when
    /// `vq_beta` was supplied in a quantizing mode.
    pub vq_terms: Vec<VqLossTerms>,
    /// Codeword index chosen at each encode event.
    pub encode_indices: Vec<usize>,
    pub trace: RunTrace,
    /// Estimate value ids per agent, in node order.
    pub estimate_ids: Vec<ValueId>,
    pub estimates: Vec<Position>,
}

/// End-to-end forward pass: encode features, run T rounds, estimate agent
/// positions. `vq_beta = Some(beta)` additionally records the three VQ loss
/// terms at every encode event.
pub fn run_network(
    scenario: &ScenarioInstance,
    init_positions: &[Position],
    model: &ModelParams,
    mode: PassMode,
    vq_beta: Option<f64>,
) -> Result<NetworkRun, DiffError> {
    let mut tape = Tape::new();
    let mut vq_terms = Vec::new();
    let mut encode_indices = Vec::new();
    let mut transmissions = Vec::new();
    let state = encode_features(
        &mut tape,
        scenario,
        init_positions,
        model,
        mode,
        vq_beta,
        &mut vq_terms,
        &mut encode_indices,
    )?;
    let state = run_rounds(
        &mut tape,
        scenario,
        state,
        model,
        mode,
        vq_beta,
        &mut vq_terms,
        &mut encode_indices,
        &mut transmissions,
    )?;
    let (estimate_ids, estimates) = estimate_positions(&mut tape, scenario, &state, model)?;
    let payload = match mode {
        PassMode::Unquantized => PayloadKind::StateVector {
            state_dim: model.config.state_dim,
        },
        _ => PayloadKind::CodewordIndex {
            codebook_size: model.config.codebook_size,
        },
    };
    Ok(NetworkRun {
        tape,
        state,
        vq_terms,
        encode_indices,
        trace: RunTrace {
            n_nodes: scenario.n_nodes(),
            payload,
            transmissions,
        },
        estimate_ids,
        estimates,
    })
}
