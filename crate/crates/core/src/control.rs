//! The control module: a digestor LSTM that folds a variable-length
//! state into a fixed-size embedding, and a controller LSTM that picks
//! an operator per perception-action step.
//!
//! The digestor's state is zeroed before every digest call; the
//! controller ticks once per agent step and keeps its memory for the
//! whole episode.

use crate::cells::{dense_apply, lstm_run, zero_state, DenseParams, LstmParams};
use crate::env::{EnvState, OpSymbol, STATE_DIM};
use crate::operators::{operator_apply, OperatorKernels, HIDDEN_UNITS};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Number of operators the selection vector ranges over.
pub const SELECTION_DIM: usize = 5;

/// Feature extractor: consumes the state one position at a time and
/// emits the last hidden output as the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DigestorNet {
    pub lstm: LstmParams,
}

impl DigestorNet {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        DigestorNet {
            lstm: LstmParams::init(STATE_DIM, hidden, rng),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.lstm
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("lstm.{n}"), t))
            .collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.lstm
            .tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("lstm.{n}"), t))
            .collect()
    }

    pub fn on_tape(&self, tape: &mut Tape) -> DigestorOnTape {
        let lstm = self.lstm.on_tape(tape);
        let leaves = lstm.leaves.clone();
        DigestorOnTape { lstm, leaves }
    }
}

pub struct DigestorOnTape {
    lstm: crate::cells::LstmOnTape,
    pub leaves: Vec<NodeId>,
}

/// Policy: selects an operator from the embedding and its own memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerNet {
    pub lstm: LstmParams,
    pub head: DenseParams,
}

impl ControllerNet {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        ControllerNet {
            lstm: LstmParams::init(hidden, hidden, rng),
            head: DenseParams::init(SELECTION_DIM, hidden, rng),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .lstm
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("lstm.{n}"), t))
            .collect();
        for (n, t) in self.head.tensors() {
            out.push((format!("head.{n}"), t));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .lstm
            .tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("lstm.{n}"), t))
            .collect();
        for (n, t) in self.head.tensors_mut() {
            out.push((format!("head.{n}"), t));
        }
        out
    }

    pub fn on_tape(&self, tape: &mut Tape) -> ControllerOnTape {
        let lstm = self.lstm.on_tape(tape);
        let head = self.head.on_tape(tape);
        let mut leaves = lstm.leaves.clone();
        leaves.extend_from_slice(&head.leaves);
        ControllerOnTape { lstm, head, leaves }
    }
}

pub struct ControllerOnTape {
    lstm: crate::cells::LstmOnTape,
    head: crate::cells::DenseOnTape,
    pub leaves: Vec<NodeId>,
}

impl ControllerOnTape {
    pub fn hidden_size(&self) -> usize {
        self.lstm.hidden_size
    }
}

/// Digestor plus controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlModule {
    pub digestor: DigestorNet,
    pub controller: ControllerNet,
}

impl ControlModule {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        ControlModule {
            digestor: DigestorNet::init(hidden, rng),
            controller: ControllerNet::init(hidden, rng),
        }
    }
}

/// Everything a runnable agent needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub kernels: OperatorKernels,
    pub control: ControlModule,
}

impl AgentParams {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        AgentParams {
            kernels: OperatorKernels::init(hidden, rng),
            control: ControlModule::init(hidden, rng),
        }
    }

    pub fn init_default(rng: &mut Rng) -> Self {
        AgentParams::init(HIDDEN_UNITS, rng)
    }
}

/// Embeds a state: zero-initialized pass over per-position `[batch,12]`
/// rows, returning the final hidden output.
pub fn digest(tape: &mut Tape, d: &DigestorOnTape, steps: &[NodeId]) -> NodeId {
    assert!(!steps.is_empty(), "digest needs at least one position");
    let batch = tape.value(steps[0]).rows();
    let (h0, c0) = zero_state(tape, batch, d.lstm.hidden_size);
    let (_, h, _) = lstm_run(tape, &d.lstm, steps, h0, c0);
    h
}

/// One controller tick: consumes the embedding and the carried memory,
/// returns the 5-way selection distribution and the new memory.
pub fn control_step(
    tape: &mut Tape,
    c: &ControllerOnTape,
    embedding: NodeId,
    mem: (NodeId, NodeId),
) -> (NodeId, (NodeId, NodeId)) {
    let (h, cell) = crate::cells::lstm_step(tape, &c.lstm, embedding, mem.0, mem.1);
    let z = dense_apply(tape, &c.head, h);
    let s = tape.softmax_last(z);
    (s, (h, cell))
}

/// Safe episode-step bound: comfortably above the expert's
/// quadratic-length traces.
pub fn default_max_steps(max_len: usize) -> usize {
    3 * max_len * max_len + 5
}

/// Outcome of one teacher-free episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub final_state: EnvState,
    pub history: Vec<OpSymbol>,
    pub steps: usize,
    /// True when the step budget ran out before EOP was selected; a
    /// truncated episode counts as a sorting error.
    pub truncated: bool,
}

/// Runs the perception-action loop: digest, select by argmax, apply the
/// selected operator, until EOP or `max_steps`. Inference computes only
/// the selected operator's output.
pub fn run_agent(agent: &AgentParams, initial: &EnvState, max_steps: usize) -> EpisodeResult {
    run_agent_with_memory(agent, initial, max_steps, true)
}

/// [`run_agent`] with the controller-memory carry made explicit.
/// Passing `keep_memory = false` zeroes the controller state before
/// every step; it exists to demonstrate the memory actually matters and
/// is never used by training or evaluation.
pub fn run_agent_with_memory(
    agent: &AgentParams,
    initial: &EnvState,
    max_steps: usize,
    keep_memory: bool,
) -> EpisodeResult {
    assert!(max_steps >= 1);
    let hidden = agent.control.controller.lstm.hidden_size;
    let mut mem_h = Tensor::zeros(vec![1, hidden]);
    let mut mem_c = Tensor::zeros(vec![1, hidden]);
    let mut state = initial.clone();
    let mut history = Vec::new();
    let mut truncated = true;

    for _ in 0..max_steps {
        let mut tape = Tape::new();
        let dt = agent.control.digestor.on_tape(&mut tape);
        let ct = agent.control.controller.on_tape(&mut tape);
        let steps: Vec<NodeId> = state
            .merged_rows()
            .iter()
            .map(|row| tape.leaf(Tensor::matrix(1, STATE_DIM, row.to_vec())))
            .collect();
        let e = digest(&mut tape, &dt, &steps);
        let mh = tape.leaf(mem_h.clone());
        let mc = tape.leaf(mem_c.clone());
        let (s, (nh, nc)) = control_step(&mut tape, &ct, e, (mh, mc));
        if keep_memory {
            mem_h = tape.value(nh).clone();
            mem_c = tape.value(nc).clone();
        }

        let sv = tape.value(s).data();
        let mut best = 0;
        for (i, &v) in sv.iter().enumerate() {
            if v > sv[best] {
                best = i;
            }
        }
        let op = OpSymbol::from_index(best).expect("selection vector has 5 entries");
        history.push(op);
        if op == OpSymbol::Eop {
            truncated = false;
            break;
        }
        state = operator_apply(op, &agent.kernels, &state);
    }

    EpisodeResult {
        steps: history.len(),
        final_state: state,
        history,
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::encode_list;

    #[test]
    fn zero_params_digest_to_a_zero_embedding() {
        let d = DigestorNet {
            lstm: LstmParams::zeros(STATE_DIM, 4),
        };
        let state = encode_list(&[1, 2, 3], 3).unwrap();
        let mut tape = Tape::new();
        let dt = d.on_tape(&mut tape);
        let steps: Vec<NodeId> = state
            .merged_rows()
            .iter()
            .map(|r| tape.leaf(Tensor::matrix(1, STATE_DIM, r.to_vec())))
            .collect();
        let e = digest(&mut tape, &dt, &steps);
        assert!(tape.value(e).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn digest_is_referentially_transparent() {
        let mut rng = Rng::new(30);
        let d = DigestorNet::init(6, &mut rng);
        let state = encode_list(&[4, 0, 9, 9], 5).unwrap();
        let embed = |d: &DigestorNet| -> Vec<f64> {
            let mut tape = Tape::new();
            let dt = d.on_tape(&mut tape);
            let steps: Vec<NodeId> = state
                .merged_rows()
                .iter()
                .map(|r| tape.leaf(Tensor::matrix(1, STATE_DIM, r.to_vec())))
                .collect();
            let e = digest(&mut tape, &dt, &steps);
            tape.value(e).data().to_vec()
        };
        assert_eq!(embed(&d), embed(&d));
    }

    #[test]
    fn permuting_list_positions_moves_the_embedding() {
        let mut rng = Rng::new(31);
        let d = DigestorNet::init(8, &mut rng);
        let mut differing = 0;
        for _ in 0..100 {
            let digits = crate::data::sample_digits(5, &mut rng);
            let mut permuted = digits.clone();
            loop {
                let i = rng.below(5) as usize;
                let j = rng.below(5) as usize;
                if digits[i] != digits[j] {
                    permuted.swap(i, j);
                    break;
                }
                // identical digits permute to the same state; pick again
                if digits.iter().all(|&x| x == digits[0]) {
                    permuted[0] = (digits[0] + 1) % 10;
                    break;
                }
            }
            let embed = |digits: &[u8]| -> Vec<f64> {
                let state = encode_list(digits, 5).unwrap();
                let mut tape = Tape::new();
                let dt = d.on_tape(&mut tape);
                let steps: Vec<NodeId> = state
                    .merged_rows()
                    .iter()
                    .map(|r| tape.leaf(Tensor::matrix(1, STATE_DIM, r.to_vec())))
                    .collect();
                let e = digest(&mut tape, &dt, &steps);
                tape.value(e).data().to_vec()
            };
            if embed(&digits) != embed(&permuted) {
                differing += 1;
            }
        }
        assert!(differing >= 99, "only {differing} of 100 pairs differed");
    }

    #[test]
    fn zero_controller_emits_the_uniform_selection() {
        let c = ControllerNet {
            lstm: LstmParams::zeros(4, 4),
            head: DenseParams::zeros(SELECTION_DIM, 4),
        };
        let mut tape = Tape::new();
        let ct = c.on_tape(&mut tape);
        let e = tape.leaf(Tensor::zeros(vec![1, 4]));
        let (h0, c0) = zero_state(&mut tape, 1, 4);
        let (s, _) = control_step(&mut tape, &ct, e, (h0, c0));
        for &v in tape.value(s).data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_vector_sums_to_one() {
        let mut rng = Rng::new(32);
        let c = ControllerNet::init(6, &mut rng);
        let mut tape = Tape::new();
        let ct = c.on_tape(&mut tape);
        let e = tape.leaf(Tensor::from_vec(
            vec![1, 6],
            (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        ));
        let (h0, c0) = zero_state(&mut tape, 1, 6);
        let (s, _) = control_step(&mut tape, &ct, e, (h0, c0));
        let sum: f64 = tape.value(s).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    fn rigged_agent(favored: OpSymbol, hidden: usize) -> AgentParams {
        let mut rng = Rng::new(33);
        let mut agent = AgentParams::init(hidden, &mut rng);
        agent.control.controller.head = DenseParams::zeros(SELECTION_DIM, hidden);
        agent.control.controller.head.bias.data_mut()[favored.index()] = 50.0;
        agent
    }

    #[test]
    fn eop_at_step_one_leaves_the_state_untouched() {
        let agent = rigged_agent(OpSymbol::Eop, 6);
        let state = encode_list(&[7, 2, 5], 3).unwrap();
        let run = run_agent(&agent, &state, 40);
        assert_eq!(run.history, vec![OpSymbol::Eop]);
        assert_eq!(run.final_state, state);
        assert_eq!(run.steps, 1);
        assert!(!run.truncated);
    }

    #[test]
    fn never_selecting_eop_truncates_at_the_budget() {
        let agent = rigged_agent(OpSymbol::Mova, 6);
        let state = encode_list(&[7, 2, 5], 3).unwrap();
        let run = run_agent(&agent, &state, 9);
        assert!(run.truncated);
        assert_eq!(run.steps, 9);
        assert!(run.history.iter().all(|&op| op == OpSymbol::Mova));
    }

    #[test]
    fn default_step_budget_clears_expert_trace_lengths() {
        for n in 2..=8 {
            assert!(default_max_steps(n) > n * n + 2 * n);
        }
    }
}
