//! The five operators: programmatic selective input/update submodules
//! wrapped around trainable kernels, plus the structural identity EOP.
//!
//! A pointer kernel is an LSTM over the raw pointer track followed by a
//! one-output sigmoid head. The swap kernel is a bidirectional LSTM
//! over the merged 12-dim rows whose two streams share one 11-output
//! head; the streams are summed, softmaxed, and the eleventh element is
//! dropped so null rows stay representable.

use crate::cells::{
    bilstm_run, dense_apply, lstm_run, zero_state, DenseParams, LstmParams,
};
use crate::env::{EnvState, OpSymbol, DIGIT_DIM, STATE_DIM};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Every LSTM cell in the lab has 100 units.
pub const HIDDEN_UNITS: usize = 100;

/// Softmax width of the swap head: ten digit classes plus the
/// discarded null slot.
pub const SWAP_HEAD_DIM: usize = DIGIT_DIM + 1;

/// Functional kernel of the pointer operators.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerKernel {
    pub lstm: LstmParams,
    pub head: DenseParams,
}

impl PointerKernel {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        PointerKernel {
            lstm: LstmParams::init(1, hidden, rng),
            head: DenseParams::init(1, hidden, rng),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.lstm.tensors() {
            out.push((format!("lstm.{name}"), t));
        }
        for (name, t) in self.head.tensors() {
            out.push((format!("head.{name}"), t));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.lstm.tensors_mut() {
            out.push((format!("lstm.{name}"), t));
        }
        for (name, t) in self.head.tensors_mut() {
            out.push((format!("head.{name}"), t));
        }
        out
    }

    pub fn on_tape(&self, tape: &mut Tape) -> PointerKernelOnTape {
        let lstm = self.lstm.on_tape(tape);
        let head = self.head.on_tape(tape);
        let mut leaves = lstm.leaves.clone();
        leaves.extend_from_slice(&head.leaves);
        PointerKernelOnTape { lstm, head, leaves }
    }
}

pub struct PointerKernelOnTape {
    lstm: crate::cells::LstmOnTape,
    head: crate::cells::DenseOnTape,
    /// Leaf ids aligned with [`PointerKernel::named_tensors`].
    pub leaves: Vec<NodeId>,
}

/// Functional kernel of the swap operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapKernel {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub head: DenseParams,
}

impl SwapKernel {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        SwapKernel {
            fwd: LstmParams::init(STATE_DIM, hidden, rng),
            bwd: LstmParams::init(STATE_DIM, hidden, rng),
            head: DenseParams::init(SWAP_HEAD_DIM, hidden, rng),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.fwd.tensors() {
            out.push((format!("fwd.{name}"), t));
        }
        for (name, t) in self.bwd.tensors() {
            out.push((format!("bwd.{name}"), t));
        }
        for (name, t) in self.head.tensors() {
            out.push((format!("head.{name}"), t));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self.fwd.tensors_mut() {
            out.push((format!("fwd.{name}"), t));
        }
        for (name, t) in self.bwd.tensors_mut() {
            out.push((format!("bwd.{name}"), t));
        }
        for (name, t) in self.head.tensors_mut() {
            out.push((format!("head.{name}"), t));
        }
        out
    }

    pub fn on_tape(&self, tape: &mut Tape) -> SwapKernelOnTape {
        let fwd = self.fwd.on_tape(tape);
        let bwd = self.bwd.on_tape(tape);
        let head = self.head.on_tape(tape);
        let mut leaves = fwd.leaves.clone();
        leaves.extend_from_slice(&bwd.leaves);
        leaves.extend_from_slice(&head.leaves);
        SwapKernelOnTape {
            fwd,
            bwd,
            head,
            leaves,
        }
    }
}

pub struct SwapKernelOnTape {
    fwd: crate::cells::LstmOnTape,
    bwd: crate::cells::LstmOnTape,
    head: crate::cells::DenseOnTape,
    /// Leaf ids aligned with [`SwapKernel::named_tensors`].
    pub leaves: Vec<NodeId>,
}

/// Which tracks an operator reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackSel {
    PtrA,
    PtrB,
    List,
    Merged,
    Nothing,
}

/// Selective submodule wiring of one operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorSpec {
    pub symbol: OpSymbol,
    pub input_selection: TrackSel,
    pub update_selection: TrackSel,
}

/// The fixed wiring table: mova and movb select and update their own
/// pointer, retb reads A and writes B, swap reads the merged state and
/// writes the list, EOP touches nothing.
pub fn operator_spec(symbol: OpSymbol) -> OperatorSpec {
    let (input_selection, update_selection) = match symbol {
        OpSymbol::Mova => (TrackSel::PtrA, TrackSel::PtrA),
        OpSymbol::Movb => (TrackSel::PtrB, TrackSel::PtrB),
        OpSymbol::Retb => (TrackSel::PtrA, TrackSel::PtrB),
        OpSymbol::Swap => (TrackSel::Merged, TrackSel::List),
        OpSymbol::Eop => (TrackSel::Nothing, TrackSel::Nothing),
    };
    OperatorSpec {
        symbol,
        input_selection,
        update_selection,
    }
}

/// Trainable kernels of the four functional operators.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorKernels {
    pub mova: PointerKernel,
    pub movb: PointerKernel,
    pub retb: PointerKernel,
    pub swap: SwapKernel,
}

impl OperatorKernels {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        OperatorKernels {
            mova: PointerKernel::init(hidden, rng),
            movb: PointerKernel::init(hidden, rng),
            retb: PointerKernel::init(hidden, rng),
            swap: SwapKernel::init(hidden, rng),
        }
    }

    pub fn pointer(&self, symbol: OpSymbol) -> &PointerKernel {
        match symbol {
            OpSymbol::Mova => &self.mova,
            OpSymbol::Movb => &self.movb,
            OpSymbol::Retb => &self.retb,
            _ => panic!("{symbol} is not a pointer operator"),
        }
    }
}

/// Runs a pointer kernel over per-step `[batch, 1]` inputs from a zero
/// state. Outputs are per-step `[batch, 1]` sigmoid activations.
pub fn pointer_kernel_forward(
    tape: &mut Tape,
    kernel: &PointerKernelOnTape,
    steps: &[NodeId],
) -> Vec<NodeId> {
    let batch = if steps.is_empty() {
        1
    } else {
        tape.value(steps[0]).rows()
    };
    let (h0, c0) = zero_state(tape, batch, kernel.lstm.hidden_size);
    let (hs, _, _) = lstm_run(tape, &kernel.lstm, steps, h0, c0);
    hs.iter()
        .map(|&h| {
            let z = dense_apply(tape, &kernel.head, h);
            tape.sigmoid(z)
        })
        .collect()
}

/// Swap kernel forward pass over per-step `[batch, 12]` merged rows.
pub struct SwapForward {
    /// Per-step `[batch, 11]` softmax rows before the drop.
    pub pre_drop: Vec<NodeId>,
    /// Per-step `[batch, 10]` digit rows.
    pub output: Vec<NodeId>,
}

pub fn swap_kernel_forward(
    tape: &mut Tape,
    kernel: &SwapKernelOnTape,
    steps: &[NodeId],
) -> SwapForward {
    let (fwd, bwd) = bilstm_run(tape, &kernel.fwd, &kernel.bwd, steps);
    let mut pre_drop = Vec::with_capacity(steps.len());
    let mut output = Vec::with_capacity(steps.len());
    for (hf, hb) in fwd.into_iter().zip(bwd) {
        let zf = dense_apply(tape, &kernel.head, hf);
        let zb = dense_apply(tape, &kernel.head, hb);
        let z = tape.add(zf, zb);
        let sm = tape.softmax_last(z);
        pre_drop.push(sm);
        output.push(tape.slice(sm, 0, DIGIT_DIM));
    }
    SwapForward { pre_drop, output }
}

fn track_to_steps(tape: &mut Tape, track: &[f64]) -> Vec<NodeId> {
    track
        .iter()
        .map(|&v| tape.leaf(Tensor::matrix(1, 1, vec![v])))
        .collect()
}

fn rows_to_steps(tape: &mut Tape, rows: &[[f64; STATE_DIM]]) -> Vec<NodeId> {
    rows.iter()
        .map(|row| tape.leaf(Tensor::matrix(1, STATE_DIM, row.to_vec())))
        .collect()
}

/// Applies one operator to a state: the selected input track feeds the
/// kernel, the kernel output replaces the selected update track, and
/// every other track is copied verbatim. EOP returns the state as is.
pub fn operator_apply(
    symbol: OpSymbol,
    kernels: &OperatorKernels,
    state: &EnvState,
) -> EnvState {
    let spec = operator_spec(symbol);
    match spec.input_selection {
        TrackSel::Nothing => state.clone(),
        TrackSel::PtrA | TrackSel::PtrB => {
            let mut tape = Tape::new();
            let kernel = kernels.pointer(symbol).on_tape(&mut tape);
            let input = match spec.input_selection {
                TrackSel::PtrA => state.ptr_a(),
                _ => state.ptr_b(),
            };
            let steps = track_to_steps(&mut tape, input);
            let outs = pointer_kernel_forward(&mut tape, &kernel, &steps);
            let track: Vec<f64> = outs.iter().map(|&o| tape.value(o).item()).collect();
            match spec.update_selection {
                TrackSel::PtrA => state.with_ptr_a(track),
                TrackSel::PtrB => state.with_ptr_b(track),
                _ => unreachable!(),
            }
        }
        TrackSel::Merged => {
            let mut tape = Tape::new();
            let kernel = kernels.swap.on_tape(&mut tape);
            let steps = rows_to_steps(&mut tape, &state.merged_rows());
            let fwd = swap_kernel_forward(&mut tape, &kernel, &steps);
            let list: Vec<[f64; DIGIT_DIM]> = fwd
                .output
                .iter()
                .map(|&o| {
                    let mut row = [0.0; DIGIT_DIM];
                    row.copy_from_slice(tape.value(o).data());
                    row
                })
                .collect();
            state.with_list(list)
        }
        TrackSel::List => unreachable!("no operator selects the bare list as input"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::encode_list;

    #[test]
    fn wiring_table_matches_the_operator_roles() {
        assert_eq!(operator_spec(OpSymbol::Mova).update_selection, TrackSel::PtrA);
        assert_eq!(operator_spec(OpSymbol::Movb).update_selection, TrackSel::PtrB);
        let retb = operator_spec(OpSymbol::Retb);
        assert_eq!(retb.input_selection, TrackSel::PtrA);
        assert_eq!(retb.update_selection, TrackSel::PtrB);
        let swap = operator_spec(OpSymbol::Swap);
        assert_eq!(swap.input_selection, TrackSel::Merged);
        assert_eq!(swap.update_selection, TrackSel::List);
        assert_eq!(operator_spec(OpSymbol::Eop).input_selection, TrackSel::Nothing);
    }

    #[test]
    fn untrained_pointer_outputs_stay_in_the_open_unit_interval() {
        let mut rng = Rng::new(20);
        let kernels = OperatorKernels::init(8, &mut rng);
        let state = encode_list(&[1, 2, 3, 4], 4).unwrap();
        let out = operator_apply(OpSymbol::Mova, &kernels, &state);
        for &v in out.ptr_a() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn pointer_kernel_preserves_track_length() {
        let mut rng = Rng::new(21);
        let kernel = PointerKernel::init(6, &mut rng);
        for len in 2..=16 {
            let mut tape = Tape::new();
            let kt = kernel.on_tape(&mut tape);
            let track: Vec<f64> = (0..len).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
            let steps = track_to_steps(&mut tape, &track);
            let outs = pointer_kernel_forward(&mut tape, &kt, &steps);
            assert_eq!(outs.len(), len);
        }
    }

    #[test]
    fn eop_returns_the_state_unchanged() {
        let mut rng = Rng::new(22);
        let kernels = OperatorKernels::init(6, &mut rng);
        let state = encode_list(&[9, 1], 3).unwrap();
        assert_eq!(operator_apply(OpSymbol::Eop, &kernels, &state), state);
    }

    #[test]
    fn selective_update_isolation_for_every_operator() {
        let mut rng = Rng::new(23);
        let kernels = OperatorKernels::init(6, &mut rng);
        let state = encode_list(&[4, 7, 2], 4).unwrap();

        let out = operator_apply(OpSymbol::Mova, &kernels, &state);
        assert_eq!(out.list(), state.list());
        assert_eq!(out.ptr_b(), state.ptr_b());

        let out = operator_apply(OpSymbol::Movb, &kernels, &state);
        assert_eq!(out.list(), state.list());
        assert_eq!(out.ptr_a(), state.ptr_a());

        let out = operator_apply(OpSymbol::Retb, &kernels, &state);
        assert_eq!(out.list(), state.list());
        assert_eq!(out.ptr_a(), state.ptr_a());

        let out = operator_apply(OpSymbol::Swap, &kernels, &state);
        assert_eq!(out.ptr_a(), state.ptr_a());
        assert_eq!(out.ptr_b(), state.ptr_b());
    }

    #[test]
    fn kernel_forward_is_pure() {
        let mut rng = Rng::new(24);
        let kernels = OperatorKernels::init(6, &mut rng);
        let state = encode_list(&[3, 3, 0, 8], 5).unwrap();
        let a = operator_apply(OpSymbol::Swap, &kernels, &state);
        let b = operator_apply(OpSymbol::Swap, &kernels, &state);
        assert_eq!(a, b);
    }

    #[test]
    fn swap_pre_drop_rows_sum_to_one_for_random_params() {
        let mut rng = Rng::new(25);
        let kernel = SwapKernel::init(6, &mut rng);
        let state = encode_list(&[5, 0, 9], 4).unwrap();
        let mut tape = Tape::new();
        let kt = kernel.on_tape(&mut tape);
        let steps = rows_to_steps(&mut tape, &state.merged_rows());
        let fwd = swap_kernel_forward(&mut tape, &kt, &steps);
        for &sm in &fwd.pre_drop {
            let sum: f64 = tape.value(sm).data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_stream_is_causal_when_backward_params_are_zero() {
        let mut rng = Rng::new(26);
        let mut kernel = SwapKernel::init(6, &mut rng);
        kernel.bwd = LstmParams::zeros(STATE_DIM, 6);

        let state = encode_list(&[1, 2, 3, 4, 5], 5).unwrap();
        let mut perturbed_rows = state.merged_rows();
        perturbed_rows[4][2] = 1.0; // touch only the last position

        let run = |rows: &[[f64; STATE_DIM]]| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            let kt = kernel.on_tape(&mut tape);
            let steps = rows_to_steps(&mut tape, rows);
            let fwd = swap_kernel_forward(&mut tape, &kt, &steps);
            fwd.output
                .iter()
                .map(|&o| tape.value(o).data().to_vec())
                .collect()
        };

        let base = run(&state.merged_rows());
        let pert = run(&perturbed_rows);
        for i in 0..4 {
            assert_eq!(base[i], pert[i], "position {i} saw the future");
        }
        assert_ne!(base[4], pert[4]);
    }

    #[test]
    fn named_tensors_cover_both_directions_and_one_shared_head() {
        let mut rng = Rng::new(27);
        let k = SwapKernel::init(4, &mut rng);
        let names: Vec<String> = k.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"fwd.wi".to_string()));
        assert!(names.contains(&"bwd.wg".to_string()));
        assert_eq!(names.iter().filter(|n| n.starts_with("head.")).count(), 2);
    }
}
