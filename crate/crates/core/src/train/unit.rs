//! Module-wise training: one self-contained trainer per unit, driven
//! either standalone, five at a time (modular), or in lockstep by the
//! staged regime.

use super::adam::AdamState;
use super::measures::{
    gradient_stats, list_error_rate, pointer_error_rate, qualitative_error, selection_error_rate,
};
use super::metrics::{MetricsRow, MovingAverage, RunMetrics};
use super::{StopReason, TrainConfig};
use crate::control::{control_step, digest, ControlModule, ControllerOnTape, DigestorOnTape};
use crate::data::{
    build_module_dataset, sample_digits, sample_length, sample_length_uniform, CurriculumParams,
    SamplePayload, UnitId,
};
use crate::env::{generate_trace, OpSymbol, Trace, DIGIT_DIM, STATE_DIM};
use crate::operators::{
    pointer_kernel_forward, swap_kernel_forward, OperatorKernels, PointerKernel,
    PointerKernelOnTape, SwapKernel, SwapKernelOnTape,
};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use std::collections::VecDeque;
use std::time::Instant;

/// Trained parameters of one unit.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitParams {
    Pointer(PointerKernel),
    Swap(SwapKernel),
    Control(ControlModule),
}

impl UnitParams {
    fn init(unit: UnitId, hidden: usize, rng: &mut Rng) -> Self {
        match unit {
            UnitId::Mova | UnitId::Movb | UnitId::Retb => {
                UnitParams::Pointer(PointerKernel::init(hidden, rng))
            }
            UnitId::Swap => UnitParams::Swap(SwapKernel::init(hidden, rng)),
            UnitId::Control => UnitParams::Control(ControlModule::init(hidden, rng)),
        }
    }

    fn tensor_sizes(&self) -> Vec<usize> {
        match self {
            UnitParams::Pointer(k) => k.named_tensors().iter().map(|(_, t)| t.numel()).collect(),
            UnitParams::Swap(k) => k.named_tensors().iter().map(|(_, t)| t.numel()).collect(),
            UnitParams::Control(c) => {
                let mut sizes: Vec<usize> = c
                    .digestor
                    .named_tensors()
                    .iter()
                    .map(|(_, t)| t.numel())
                    .collect();
                sizes.extend(c.controller.named_tensors().iter().map(|(_, t)| t.numel()));
                sizes
            }
        }
    }

    fn apply_adam(&mut self, adam: &mut AdamState, lr: f64, grads: &[Tensor]) {
        let mut pairs: Vec<(&mut [f64], &[f64])> = Vec::with_capacity(grads.len());
        match self {
            UnitParams::Pointer(k) => {
                for ((_, t), g) in k.named_tensors_mut().into_iter().zip(grads) {
                    pairs.push((t.data_mut(), g.data()));
                }
            }
            UnitParams::Swap(k) => {
                for ((_, t), g) in k.named_tensors_mut().into_iter().zip(grads) {
                    pairs.push((t.data_mut(), g.data()));
                }
            }
            UnitParams::Control(c) => {
                let mut slots = c.digestor.named_tensors_mut();
                slots.extend(c.controller.named_tensors_mut());
                for ((_, t), g) in slots.into_iter().zip(grads) {
                    pairs.push((t.data_mut(), g.data()));
                }
            }
        }
        adam.step(lr, pairs);
    }
}

/// Result of one unit's training run.
#[derive(Debug, Clone)]
pub struct UnitOutcome {
    pub unit: UnitId,
    pub params: UnitParams,
    pub metrics: RunMetrics,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: u64,
    pub wall_ms: u64,
    /// First iteration at which the stop criteria held.
    pub iterations_to_criterion: Option<u64>,
    /// Raised when mean loss rose across consecutive 500-iteration
    /// windows early in the run.
    pub early_loss_divergence: bool,
}

// ── batch forward builders (shared with the monolithic regime) ───────

/// Per-position `[batch, 1]` step tensors from a batch of tracks.
pub(crate) fn track_steps(tape: &mut Tape, tracks: &[Vec<f64>]) -> Vec<NodeId> {
    let width = tracks[0].len();
    (0..width)
        .map(|p| {
            let col: Vec<f64> = tracks.iter().map(|t| t[p]).collect();
            tape.leaf(Tensor::matrix(tracks.len(), 1, col))
        })
        .collect()
}

/// Runs a pointer kernel over a batch of tracks; output is `[batch, N]`.
pub(crate) fn pointer_forward(
    tape: &mut Tape,
    kernel: &PointerKernelOnTape,
    tracks: &[Vec<f64>],
) -> NodeId {
    let steps = track_steps(tape, tracks);
    let outs = pointer_kernel_forward(tape, kernel, &steps);
    tape.concat_last(&outs)
}

pub(crate) fn pointer_target_tensor(targets: &[Vec<f64>]) -> Tensor {
    let width = targets[0].len();
    let mut data = Vec::with_capacity(targets.len() * width);
    for t in targets {
        data.extend_from_slice(t);
    }
    Tensor::matrix(targets.len(), width, data)
}

/// Per-position `[batch, 12]` step tensors from merged-row sequences.
pub(crate) fn merged_steps(tape: &mut Tape, rows: &[Vec<[f64; STATE_DIM]>]) -> Vec<NodeId> {
    let width = rows[0].len();
    (0..width)
        .map(|p| {
            let mut data = Vec::with_capacity(rows.len() * STATE_DIM);
            for r in rows {
                data.extend_from_slice(&r[p]);
            }
            tape.leaf(Tensor::matrix(rows.len(), STATE_DIM, data))
        })
        .collect()
}

/// Extends clean digit rows to the 11-way softmax targets: null rows
/// become one-hot at the discarded eleventh slot.
pub(crate) fn extended_swap_target(targets: &[Vec<[f64; DIGIT_DIM]>], position: usize) -> Tensor {
    let mut data = Vec::with_capacity(targets.len() * (DIGIT_DIM + 1));
    for t in targets {
        let row = &t[position];
        data.extend_from_slice(row);
        let is_null = row.iter().all(|&v| v == 0.0);
        data.push(if is_null { 1.0 } else { 0.0 });
    }
    Tensor::matrix(targets.len(), DIGIT_DIM + 1, data)
}

/// Swap-kernel batch loss: categorical cross-entropy on the pre-drop
/// softmax rows against the extended targets, averaged over positions.
pub(crate) fn swap_batch_loss(
    tape: &mut Tape,
    kernel: &SwapKernelOnTape,
    inputs: &[Vec<[f64; STATE_DIM]>],
    targets: &[Vec<[f64; DIGIT_DIM]>],
    mask: Option<&Tensor>,
) -> (NodeId, Vec<NodeId>) {
    let steps = merged_steps(tape, inputs);
    let fwd = swap_kernel_forward(tape, kernel, &steps);
    let width = inputs[0].len();
    let mut acc: Option<NodeId> = None;
    for p in 0..width {
        let target = extended_swap_target(targets, p);
        let ce = tape.ce_categorical(fwd.pre_drop[p], target, mask.cloned());
        acc = Some(match acc {
            None => ce,
            Some(prev) => tape.add(prev, ce),
        });
    }
    let loss = tape.scale(acc.expect("states have at least two positions"), 1.0 / width as f64);
    (loss, fwd.output)
}

/// One-hot `[batch, 5]` selection targets; masked rows stay zero.
pub(crate) fn selection_target_tensor(symbols: &[Option<OpSymbol>]) -> Tensor {
    let mut data = vec![0.0; symbols.len() * 5];
    for (i, sym) in symbols.iter().enumerate() {
        if let Some(s) = sym {
            data[i * 5 + s.index()] = 1.0;
        }
    }
    Tensor::matrix(symbols.len(), 5, data)
}

// ── sample buffering ─────────────────────────────────────────────────

enum SampleBuffer {
    Track(VecDeque<(Vec<f64>, Vec<f64>)>),
    Merged(VecDeque<(Vec<[f64; STATE_DIM]>, Vec<[f64; DIGIT_DIM]>)>),
    Episode(VecDeque<(Vec<Vec<[f64; STATE_DIM]>>, Vec<OpSymbol>)>),
}

impl SampleBuffer {
    fn new(unit: UnitId) -> Self {
        match unit {
            UnitId::Swap => SampleBuffer::Merged(VecDeque::new()),
            UnitId::Control => SampleBuffer::Episode(VecDeque::new()),
            _ => SampleBuffer::Track(VecDeque::new()),
        }
    }

    fn len(&self) -> usize {
        match self {
            SampleBuffer::Track(q) => q.len(),
            SampleBuffer::Merged(q) => q.len(),
            SampleBuffer::Episode(q) => q.len(),
        }
    }

    fn absorb(&mut self, unit: UnitId, trace: &Trace, noise: bool, rng: &mut Rng) {
        for sample in build_module_dataset(std::slice::from_ref(trace), unit, noise, rng) {
            match (sample.payload, &mut *self) {
                (SamplePayload::Track { input, target }, SampleBuffer::Track(q)) => {
                    q.push_back((input, target));
                }
                (SamplePayload::Merged { input, target }, SampleBuffer::Merged(q)) => {
                    q.push_back((input, target));
                }
                (SamplePayload::Episode { inputs, targets }, SampleBuffer::Episode(q)) => {
                    q.push_back((inputs, targets));
                }
                _ => unreachable!("payload kind always matches the unit"),
            }
        }
    }
}

// ── the trainer ──────────────────────────────────────────────────────

const DIVERGENCE_WINDOW: u64 = 500;
const DIVERGENCE_HORIZON: u64 = 2000;
const DIVERGENCE_SLACK: f64 = 1.05;

pub(crate) struct UnitTrainer {
    unit: UnitId,
    config: TrainConfig,
    pub(crate) params: UnitParams,
    adam: AdamState,
    data_rng: Rng,
    eval_rng: Rng,
    buffer: SampleBuffer,
    quant_ma: MovingAverage,
    qual_ma: MovingAverage,
    metrics: RunMetrics,
    iter: u64,
    started: Instant,
    converged: bool,
    iterations_to_criterion: Option<u64>,
    best_quant: f64,
    best_params: Option<UnitParams>,
    window_loss: f64,
    prev_window_mean: Option<f64>,
    early_loss_divergence: bool,
}

impl UnitTrainer {
    pub(crate) fn new(unit: UnitId, config: &TrainConfig) -> Self {
        let mut master = Rng::new(config.unit_seed(unit));
        let mut init_rng = master.split();
        let data_rng = master.split();
        let eval_rng = master.split();
        let params = UnitParams::init(unit, config.hidden, &mut init_rng);
        let adam = AdamState::new(&params.tensor_sizes());
        UnitTrainer {
            unit,
            config: config.clone(),
            params,
            adam,
            data_rng,
            eval_rng,
            buffer: SampleBuffer::new(unit),
            quant_ma: MovingAverage::new(config.ma_window),
            qual_ma: MovingAverage::new(config.ma_window),
            metrics: RunMetrics::default(),
            iter: 0,
            started: Instant::now(),
            converged: false,
            iterations_to_criterion: None,
            best_quant: f64::INFINITY,
            best_params: None,
            window_loss: 0.0,
            prev_window_mean: None,
            early_loss_divergence: false,
        }
    }

    pub(crate) fn unit(&self) -> UnitId {
        self.unit
    }

    pub(crate) fn iterations(&self) -> u64 {
        self.iter
    }

    fn draw_length(&mut self) -> usize {
        if self.config.uniform_sampling {
            sample_length_uniform(self.config.max_len, &mut self.data_rng)
        } else {
            let accuracy = 1.0 - self.quant_ma.mean_or(1.0);
            let cp = CurriculumParams::new(self.config.max_len, accuracy);
            sample_length(&cp, &mut self.data_rng)
        }
    }

    fn fill_buffer(&mut self, want: usize) {
        while self.buffer.len() < want {
            let len = self.draw_length();
            let digits = sample_digits(len, &mut self.data_rng);
            let trace =
                generate_trace(&digits, self.config.max_len).expect("sampled digits are valid");
            self.buffer
                .absorb(self.unit, &trace, self.config.noise, &mut self.data_rng);
        }
    }

    /// One train iteration: sample, forward, backward, Adam, metrics,
    /// and at the evaluation cadence a fresh clean evaluation plus stop
    /// bookkeeping.
    pub(crate) fn run_one_iteration(&mut self) {
        let batch = self.config.batch_size;
        self.fill_buffer(batch);

        let (loss, grads) = match (&self.params, &mut self.buffer) {
            (UnitParams::Pointer(kernel), SampleBuffer::Track(queue)) => {
                let mut inputs = Vec::with_capacity(batch);
                let mut targets = Vec::with_capacity(batch);
                for _ in 0..batch {
                    let (i, t) = queue.pop_front().unwrap();
                    inputs.push(i);
                    targets.push(t);
                }
                let mut tape = Tape::new();
                let kt = kernel.on_tape(&mut tape);
                let out = pointer_forward(&mut tape, &kt, &inputs);
                let loss = tape.ce_binary(out, pointer_target_tensor(&targets), None);
                tape.backward(loss).expect("loss is scalar");
                let grads: Vec<Tensor> =
                    kt.leaves.iter().map(|&id| tape.grad_tensor(id)).collect();
                (tape.value(loss).item(), grads)
            }
            (UnitParams::Swap(kernel), SampleBuffer::Merged(queue)) => {
                let mut inputs = Vec::with_capacity(batch);
                let mut targets = Vec::with_capacity(batch);
                for _ in 0..batch {
                    let (i, t) = queue.pop_front().unwrap();
                    inputs.push(i);
                    targets.push(t);
                }
                let mut tape = Tape::new();
                let kt = kernel.on_tape(&mut tape);
                let (loss, _) = swap_batch_loss(&mut tape, &kt, &inputs, &targets, None);
                tape.backward(loss).expect("loss is scalar");
                let grads: Vec<Tensor> =
                    kt.leaves.iter().map(|&id| tape.grad_tensor(id)).collect();
                (tape.value(loss).item(), grads)
            }
            (UnitParams::Control(control), SampleBuffer::Episode(queue)) => {
                let mut episodes = Vec::with_capacity(batch);
                for _ in 0..batch {
                    episodes.push(queue.pop_front().unwrap());
                }
                let mut tape = Tape::new();
                let dt = control.digestor.on_tape(&mut tape);
                let ct = control.controller.on_tape(&mut tape);
                let (loss, _) = control_episode_loss(&mut tape, &dt, &ct, &episodes);
                tape.backward(loss).expect("loss is scalar");
                let mut grads: Vec<Tensor> =
                    dt.leaves.iter().map(|&id| tape.grad_tensor(id)).collect();
                grads.extend(ct.leaves.iter().map(|&id| tape.grad_tensor(id)));
                (tape.value(loss).item(), grads)
            }
            _ => unreachable!("buffer kind always matches the unit"),
        };

        let (grad_mean_abs, grad_std) = gradient_stats(grads.iter().map(|g| g.data()));
        self.params
            .apply_adam(&mut self.adam, self.config.learning_rate, &grads);
        self.iter += 1;

        self.track_loss_window(loss);

        if self.iter % self.config.eval_every as u64 == 0 && !self.converged {
            let (quant, qual) = self.evaluate();
            self.quant_ma.push(quant);
            self.qual_ma.push(qual);
            if quant < self.best_quant {
                self.best_quant = quant;
                self.best_params = Some(self.params.clone());
            }
            let quant_ok = self.quant_ma.mean_or(1.0) < self.config.quant_threshold;
            let qual_ok = self.unit == UnitId::Control
                || self.qual_ma.mean_or(1.0) < self.config.qual_threshold;
            if quant_ok && qual_ok {
                self.converged = true;
                self.iterations_to_criterion = Some(self.iter);
            }
        }

        self.metrics.push(MetricsRow {
            iter: self.iter,
            wall_ms: self.started.elapsed().as_millis() as u64,
            loss,
            quant_err: self.quant_ma.mean_or(1.0),
            qual_err: self.qual_ma.mean_or(1.0),
            grad_mean_abs,
            grad_std,
        });
    }

    fn track_loss_window(&mut self, loss: f64) {
        if self.iter > DIVERGENCE_HORIZON {
            return;
        }
        self.window_loss += loss;
        if self.iter % DIVERGENCE_WINDOW == 0 {
            let mean = self.window_loss / DIVERGENCE_WINDOW as f64;
            if let Some(prev) = self.prev_window_mean {
                if mean > prev * DIVERGENCE_SLACK {
                    self.early_loss_divergence = true;
                }
            }
            self.prev_window_mean = Some(mean);
            self.window_loss = 0.0;
        }
    }

    /// Fresh clean evaluation at the maximum training length.
    fn evaluate(&mut self) -> (f64, f64) {
        let n = self.config.max_len;
        let want = self.config.eval_samples;
        let mut buffer = SampleBuffer::new(self.unit);
        while buffer.len() < want {
            let digits = sample_digits(n, &mut self.eval_rng);
            let trace = generate_trace(&digits, n).expect("sampled digits are valid");
            buffer.absorb(self.unit, &trace, false, &mut self.eval_rng);
        }

        let chunk = self.config.batch_size;
        let result = match (&self.params, &mut buffer) {
            (UnitParams::Pointer(kernel), SampleBuffer::Track(queue)) => {
                let mut outputs = Vec::with_capacity(want);
                let mut targets = Vec::with_capacity(want);
                let samples: Vec<_> = queue.drain(..).take(want).collect();
                for slab in samples.chunks(chunk) {
                    let inputs: Vec<Vec<f64>> = slab.iter().map(|(i, _)| i.clone()).collect();
                    let mut tape = Tape::new();
                    let kt = kernel.on_tape(&mut tape);
                    let out = pointer_forward(&mut tape, &kt, &inputs);
                    let data = tape.value(out).data();
                    for (row, (_, target)) in slab.iter().enumerate() {
                        outputs.push(data[row * n..(row + 1) * n].to_vec());
                        targets.push(target.clone());
                    }
                }
                let quant = pointer_error_rate(&outputs, &targets);
                let flat_out: Vec<f64> = outputs.concat();
                let flat_tgt: Vec<f64> = targets.concat();
                (quant, qualitative_error(&flat_out, &flat_tgt))
            }
            (UnitParams::Swap(kernel), SampleBuffer::Merged(queue)) => {
                let mut outputs: Vec<Vec<[f64; DIGIT_DIM]>> = Vec::with_capacity(want);
                let mut targets: Vec<Vec<[f64; DIGIT_DIM]>> = Vec::with_capacity(want);
                let samples: Vec<_> = queue.drain(..).take(want).collect();
                for slab in samples.chunks(chunk) {
                    let inputs: Vec<Vec<[f64; STATE_DIM]>> =
                        slab.iter().map(|(i, _)| i.clone()).collect();
                    let tgts: Vec<Vec<[f64; DIGIT_DIM]>> =
                        slab.iter().map(|(_, t)| t.clone()).collect();
                    let mut tape = Tape::new();
                    let kt = kernel.on_tape(&mut tape);
                    let (_, out10) = swap_batch_loss(&mut tape, &kt, &inputs, &tgts, None);
                    for (row, (_, target)) in slab.iter().enumerate() {
                        let mut rows = Vec::with_capacity(n);
                        for p in 0..n {
                            let mut r = [0.0; DIGIT_DIM];
                            r.copy_from_slice(
                                &tape.value(out10[p]).data()[row * DIGIT_DIM..(row + 1) * DIGIT_DIM],
                            );
                            rows.push(r);
                        }
                        outputs.push(rows);
                        targets.push(target.clone());
                    }
                }
                let quant = list_error_rate(&outputs, &targets);
                let flat_out: Vec<f64> = outputs.iter().flatten().flatten().copied().collect();
                let flat_tgt: Vec<f64> = targets.iter().flatten().flatten().copied().collect();
                (quant, qualitative_error(&flat_out, &flat_tgt))
            }
            (UnitParams::Control(control), SampleBuffer::Episode(queue)) => {
                let mut sel_outputs: Vec<Vec<f64>> = Vec::new();
                let mut sel_targets: Vec<usize> = Vec::new();
                let samples: Vec<_> = queue.drain(..).take(want).collect();
                for slab in samples.chunks(chunk) {
                    let mut tape = Tape::new();
                    let dt = control.digestor.on_tape(&mut tape);
                    let ct = control.controller.on_tape(&mut tape);
                    let (_, per_step) = control_episode_loss(&mut tape, &dt, &ct, slab);
                    for (t, s_node) in per_step {
                        let s = tape.value(s_node);
                        for (row, (_, targets)) in slab.iter().enumerate() {
                            if t < targets.len() {
                                sel_outputs.push(s.data()[row * 5..(row + 1) * 5].to_vec());
                                sel_targets.push(targets[t].index());
                            }
                        }
                    }
                }
                let quant = selection_error_rate(&sel_outputs, &sel_targets);
                let mut flat_out = Vec::new();
                let mut flat_tgt = Vec::new();
                for (s, &t) in sel_outputs.iter().zip(&sel_targets) {
                    flat_out.extend_from_slice(s);
                    let mut one_hot = [0.0; 5];
                    one_hot[t] = 1.0;
                    flat_tgt.extend_from_slice(&one_hot);
                }
                (quant, qualitative_error(&flat_out, &flat_tgt))
            }
            _ => unreachable!(),
        };
        result
    }

    pub(crate) fn should_stop(&self) -> Option<StopReason> {
        if self.converged {
            return Some(StopReason::Criterion);
        }
        if self.iter >= self.config.max_iterations {
            return Some(StopReason::IterationBudget);
        }
        if let Some(limit) = self.config.max_wall_ms {
            if self.started.elapsed().as_millis() as u64 >= limit {
                return Some(StopReason::WallClock);
            }
        }
        None
    }

    pub(crate) fn finish(self, stop_reason: StopReason) -> UnitOutcome {
        let params = if self.converged {
            self.params
        } else {
            self.best_params.unwrap_or(self.params)
        };
        UnitOutcome {
            unit: self.unit,
            params,
            metrics: self.metrics,
            converged: self.converged,
            stop_reason,
            iterations: self.iter,
            wall_ms: self.started.elapsed().as_millis() as u64,
            iterations_to_criterion: self.iterations_to_criterion,
            early_loss_divergence: self.early_loss_divergence,
        }
    }
}

/// Teacher-forced batched episode forward for the control nets: digest
/// each padded step, tick the controller, and take the masked selection
/// cross-entropy, averaged over the padded episode length.
///
/// Returns the loss and the per-step selection nodes.
pub(crate) fn control_episode_loss(
    tape: &mut Tape,
    dt: &DigestorOnTape,
    ct: &ControllerOnTape,
    episodes: &[(Vec<Vec<[f64; STATE_DIM]>>, Vec<OpSymbol>)],
) -> (NodeId, Vec<(usize, NodeId)>) {
    let batch = episodes.len();
    let width = episodes[0].0[0].len();
    let t_max = episodes.iter().map(|(i, _)| i.len()).max().unwrap();
    let hidden = ct.hidden_size();

    let (mut mem_h, mut mem_c) = crate::cells::zero_state(tape, batch, hidden);
    let mut acc: Option<NodeId> = None;
    let mut per_step = Vec::with_capacity(t_max);

    for t in 0..t_max {
        let steps: Vec<NodeId> = (0..width)
            .map(|p| {
                let mut data = Vec::with_capacity(batch * STATE_DIM);
                for (inputs, _) in episodes {
                    if t < inputs.len() {
                        data.extend_from_slice(&inputs[t][p]);
                    } else {
                        data.extend_from_slice(&[0.0; STATE_DIM]);
                    }
                }
                tape.leaf(Tensor::matrix(batch, STATE_DIM, data))
            })
            .collect();
        let e = digest(tape, dt, &steps);
        let (s, mem) = control_step(tape, ct, e, (mem_h, mem_c));
        mem_h = mem.0;
        mem_c = mem.1;
        per_step.push((t, s));

        let symbols: Vec<Option<OpSymbol>> = episodes
            .iter()
            .map(|(_, targets)| targets.get(t).copied())
            .collect();
        let mask = Tensor::from_vec(
            vec![batch],
            symbols
                .iter()
                .map(|s| if s.is_some() { 1.0 } else { 0.0 })
                .collect(),
        );
        let target = selection_target_tensor(&symbols);
        let ce = tape.ce_categorical(s, target, Some(mask));
        acc = Some(match acc {
            None => ce,
            Some(prev) => tape.add(prev, ce),
        });
    }
    let loss = tape.scale(acc.expect("episodes are non-empty"), 1.0 / t_max as f64);
    (loss, per_step)
}

/// Trains one unit to its stop criteria or budget.
pub fn train_module(unit: UnitId, config: &TrainConfig) -> UnitOutcome {
    let mut trainer = UnitTrainer::new(unit, config);
    loop {
        if let Some(reason) = trainer.should_stop() {
            return trainer.finish(reason);
        }
        trainer.run_one_iteration();
    }
}

/// Result of training all five units and assembling them.
#[derive(Debug, Clone)]
pub struct ModularOutcome {
    pub units: Vec<UnitOutcome>,
    pub agent: crate::control::AgentParams,
    /// Sum of the per-unit wall-clock times (the sequential cost, even
    /// when trained in parallel).
    pub summed_wall_ms: u64,
}

/// Trains the five units (sequentially or on threads per
/// `config.parallel`) and assembles the agent.
pub fn train_modular(config: &TrainConfig) -> ModularOutcome {
    let outcomes: Vec<UnitOutcome> = if config.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = UnitId::ALL
                .iter()
                .map(|&unit| scope.spawn(move || train_module(unit, config)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("unit thread")).collect()
        })
    } else {
        UnitId::ALL
            .iter()
            .map(|&unit| train_module(unit, config))
            .collect()
    };
    assemble(outcomes)
}

pub(crate) fn assemble(units: Vec<UnitOutcome>) -> ModularOutcome {
    let mut mova = None;
    let mut movb = None;
    let mut retb = None;
    let mut swap = None;
    let mut control = None;
    let summed_wall_ms = units.iter().map(|u| u.wall_ms).sum();
    for outcome in &units {
        match (&outcome.params, outcome.unit) {
            (UnitParams::Pointer(k), UnitId::Mova) => mova = Some(k.clone()),
            (UnitParams::Pointer(k), UnitId::Movb) => movb = Some(k.clone()),
            (UnitParams::Pointer(k), UnitId::Retb) => retb = Some(k.clone()),
            (UnitParams::Swap(k), UnitId::Swap) => swap = Some(k.clone()),
            (UnitParams::Control(c), UnitId::Control) => control = Some(c.clone()),
            _ => unreachable!("unit/params mismatch"),
        }
    }
    let agent = crate::control::AgentParams {
        kernels: OperatorKernels {
            mova: mova.expect("mova trained"),
            movb: movb.expect("movb trained"),
            retb: retb.expect("retb trained"),
            swap: swap.expect("swap trained"),
        },
        control: control.expect("control trained"),
    };
    ModularOutcome {
        units,
        agent,
        summed_wall_ms,
    }
}
