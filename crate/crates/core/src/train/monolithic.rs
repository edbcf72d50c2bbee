//! Monolithic training: all modules assembled and trained jointly,
//! with the trace symbol overriding the controller's selection during
//! training (teacher forcing) and an additional cross-entropy loss on
//! the selection vectors.

use super::adam::AdamState;
use super::measures::gradient_stats;
use super::metrics::{MetricsRow, MovingAverage, RunMetrics};
use super::unit::{
    extended_swap_target, merged_steps, pointer_forward, pointer_target_tensor,
    selection_target_tensor,
};
use super::{StopReason, TrainConfig};
use crate::control::{control_step, digest, AgentParams};
use crate::data::{noisy_state, sample_digits, sample_length, CurriculumParams};
use crate::env::{generate_trace, EnvState, OpSymbol};
use crate::eval::evaluate_sorting_with_rng;
use crate::operators::swap_kernel_forward;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct MonolithicOutcome {
    pub agent: AgentParams,
    pub metrics: RunMetrics,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: u64,
    pub wall_ms: u64,
    pub iterations_to_criterion: Option<u64>,
}

struct Episode {
    /// State observed before each step (teacher-provided).
    inputs: Vec<EnvState>,
    symbols: Vec<OpSymbol>,
    /// Clean target state after each step.
    next_states: Vec<EnvState>,
}

fn draw_episodes(config: &TrainConfig, accuracy: f64, rng: &mut Rng) -> Vec<Episode> {
    (0..config.batch_size)
        .map(|_| {
            let len = if config.uniform_sampling {
                crate::data::sample_length_uniform(config.max_len, rng)
            } else {
                let cp = CurriculumParams::new(config.max_len, accuracy);
                sample_length(&cp, rng)
            };
            let digits = sample_digits(len, rng);
            let trace = generate_trace(&digits, config.max_len).expect("valid digits");
            let inputs = (0..trace.step_count())
                .map(|i| {
                    if config.noise {
                        noisy_state(trace.state_before(i), rng)
                    } else {
                        trace.state_before(i).clone()
                    }
                })
                .collect();
            Episode {
                inputs,
                symbols: trace.ops().collect(),
                next_states: trace.steps.iter().map(|(_, s)| s.clone()).collect(),
            }
        })
        .collect()
}

/// The whole-batch teacher-forced loss: per step, every operator runs
/// on the current teacher state; the trace symbol picks which operator
/// output is supervised against the next state, and the selection
/// vector gets its own cross-entropy. Losses are summed over steps.
fn batch_loss(tape: &mut Tape, agent: &AgentParams, episodes: &[Episode]) -> (NodeId, Vec<NodeId>) {
    let batch = episodes.len();
    let width = episodes[0].inputs[0].width();
    let t_max = episodes.iter().map(|e| e.symbols.len()).max().unwrap();

    let mova = agent.kernels.mova.on_tape(tape);
    let movb = agent.kernels.movb.on_tape(tape);
    let retb = agent.kernels.retb.on_tape(tape);
    let swap = agent.kernels.swap.on_tape(tape);
    let dig = agent.control.digestor.on_tape(tape);
    let ctl = agent.control.controller.on_tape(tape);
    let mut leaves = Vec::new();
    leaves.extend_from_slice(&mova.leaves);
    leaves.extend_from_slice(&movb.leaves);
    leaves.extend_from_slice(&retb.leaves);
    leaves.extend_from_slice(&swap.leaves);
    leaves.extend_from_slice(&dig.leaves);
    leaves.extend_from_slice(&ctl.leaves);

    let hidden = ctl.hidden_size();
    let (mut mem_h, mut mem_c) = crate::cells::zero_state(tape, batch, hidden);
    let mut acc: Option<NodeId> = None;
    let add_loss = |tape: &mut Tape, acc: &mut Option<NodeId>, term: NodeId| {
        *acc = Some(match *acc {
            None => term,
            Some(prev) => tape.add(prev, term),
        });
    };

    for t in 0..t_max {
        // episodes that already ended feed zero padding under a zero mask
        let rows: Vec<Vec<[f64; crate::env::STATE_DIM]>> = episodes
            .iter()
            .map(|e| match e.inputs.get(t) {
                Some(s) => s.merged_rows(),
                None => vec![[0.0; crate::env::STATE_DIM]; width],
            })
            .collect();
        let merged = merged_steps(tape, &rows);

        let a_tracks: Vec<Vec<f64>> = episodes
            .iter()
            .map(|e| match e.inputs.get(t) {
                Some(s) => s.ptr_a().to_vec(),
                None => vec![0.0; width],
            })
            .collect();
        let b_tracks: Vec<Vec<f64>> = episodes
            .iter()
            .map(|e| match e.inputs.get(t) {
                Some(s) => s.ptr_b().to_vec(),
                None => vec![0.0; width],
            })
            .collect();

        // all five operators run; EOP is the identity and adds nothing
        let mova_out = pointer_forward(tape, &mova, &a_tracks);
        let movb_out = pointer_forward(tape, &movb, &b_tracks);
        let retb_out = pointer_forward(tape, &retb, &a_tracks);
        let swap_out = swap_kernel_forward(tape, &swap, &merged);

        let selected: Vec<Option<OpSymbol>> = episodes
            .iter()
            .map(|e| e.symbols.get(t).copied())
            .collect();
        let op_mask = |sym: OpSymbol| -> Tensor {
            Tensor::from_vec(
                vec![batch],
                selected
                    .iter()
                    .map(|s| if *s == Some(sym) { 1.0 } else { 0.0 })
                    .collect(),
            )
        };
        let any_selected =
            |sym: OpSymbol| -> bool { selected.iter().any(|s| *s == Some(sym)) };

        // pointer-state losses against the teacher's next state
        for (sym, out) in [
            (OpSymbol::Mova, mova_out),
            (OpSymbol::Movb, movb_out),
            (OpSymbol::Retb, retb_out),
        ] {
            if !any_selected(sym) {
                continue;
            }
            let targets: Vec<Vec<f64>> = episodes
                .iter()
                .map(|e| {
                    if e.symbols.get(t).copied() == Some(sym) {
                        let next = &e.next_states[t];
                        match sym {
                            OpSymbol::Mova => next.ptr_a().to_vec(),
                            _ => next.ptr_b().to_vec(),
                        }
                    } else {
                        vec![0.0; width]
                    }
                })
                .collect();
            let ce = tape.ce_binary(out, pointer_target_tensor(&targets), Some(op_mask(sym)));
            add_loss(tape, &mut acc, ce);
        }

        if any_selected(OpSymbol::Swap) {
            let targets: Vec<Vec<[f64; crate::env::DIGIT_DIM]>> = episodes
                .iter()
                .map(|e| {
                    if e.symbols.get(t).copied() == Some(OpSymbol::Swap) {
                        e.next_states[t].list().to_vec()
                    } else {
                        vec![[0.0; crate::env::DIGIT_DIM]; width]
                    }
                })
                .collect();
            let mask = op_mask(OpSymbol::Swap);
            let mut swap_acc: Option<NodeId> = None;
            for p in 0..width {
                let target = extended_swap_target(&targets, p);
                let ce = tape.ce_categorical(swap_out.pre_drop[p], target, Some(mask.clone()));
                add_loss(tape, &mut swap_acc, ce);
            }
            let swap_ce = tape.scale(swap_acc.unwrap(), 1.0 / width as f64);
            add_loss(tape, &mut acc, swap_ce);
        }

        // controller tick and the selection loss
        let e = digest(tape, &dig, &merged);
        let (s, mem) = control_step(tape, &ctl, e, (mem_h, mem_c));
        mem_h = mem.0;
        mem_c = mem.1;
        let sel_mask = Tensor::from_vec(
            vec![batch],
            selected
                .iter()
                .map(|s| if s.is_some() { 1.0 } else { 0.0 })
                .collect(),
        );
        let sel_ce = tape.ce_categorical(s, selection_target_tensor(&selected), Some(sel_mask));
        add_loss(tape, &mut acc, sel_ce);
    }

    (acc.expect("batch has at least one step"), leaves)
}

/// Trains the assembled configuration end to end.
pub fn train_monolithic(config: &TrainConfig) -> MonolithicOutcome {
    let mut master = Rng::new(config.seed);
    let mut init_rng = master.split();
    let mut data_rng = master.split();
    let mut eval_rng = master.split();

    let mut agent = AgentParams::init(config.hidden, &mut init_rng);
    let sizes: Vec<usize> = agent.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = AdamState::new(&sizes);

    let mut metrics = RunMetrics::default();
    let mut quant_ma = MovingAverage::new(config.ma_window);
    let mut qual_ma = MovingAverage::new(config.ma_window);
    let started = Instant::now();

    let mut iter: u64 = 0;
    let mut converged = false;
    let mut iterations_to_criterion = None;
    let mut best_window_loss = f64::INFINITY;
    let mut evals_since_improvement = 0usize;
    let mut window_loss_sum = 0.0;
    let stop_reason;

    loop {
        if converged {
            stop_reason = StopReason::Criterion;
            break;
        }
        if iter >= config.max_iterations {
            stop_reason = StopReason::IterationBudget;
            break;
        }
        if let Some(limit) = config.max_wall_ms {
            if started.elapsed().as_millis() as u64 >= limit {
                stop_reason = StopReason::WallClock;
                break;
            }
        }
        if evals_since_improvement >= config.stagnation_patience {
            stop_reason = StopReason::Stagnation;
            break;
        }

        let accuracy = 1.0 - quant_ma.mean_or(1.0);
        let episodes = draw_episodes(config, accuracy, &mut data_rng);

        let mut tape = Tape::new();
        let (loss_node, leaves) = batch_loss(&mut tape, &agent, &episodes);
        tape.backward(loss_node).expect("loss is scalar");
        let loss = tape.value(loss_node).item();
        let grads: Vec<Tensor> = leaves.iter().map(|&id| tape.grad_tensor(id)).collect();
        drop(tape);

        let (grad_mean_abs, grad_std) = gradient_stats(grads.iter().map(|g| g.data()));
        let pairs: Vec<(&mut [f64], &[f64])> = agent
            .named_tensors_mut()
            .into_iter()
            .map(|(_, t)| t.data_mut())
            .zip(grads.iter().map(|g| g.data()))
            .collect();
        adam.step(config.learning_rate, pairs);
        iter += 1;
        window_loss_sum += loss;

        if loss < config.loss_floor {
            metrics.push(MetricsRow {
                iter,
                wall_ms: started.elapsed().as_millis() as u64,
                loss,
                quant_err: quant_ma.mean_or(1.0),
                qual_err: qual_ma.mean_or(1.0),
                grad_mean_abs,
                grad_std,
            });
            stop_reason = StopReason::LossFloor;
            break;
        }

        if iter % config.eval_every as u64 == 0 {
            let outcome =
                evaluate_sorting_with_rng(&agent, config.max_len, config.eval_samples, &mut eval_rng);
            quant_ma.push(1.0 - outcome.accuracy);
            qual_ma.push(outcome.qualitative_error);
            if quant_ma.mean_or(1.0) < config.quant_threshold {
                converged = true;
                iterations_to_criterion = Some(iter);
            }
            let window_mean = window_loss_sum / config.eval_every as f64;
            window_loss_sum = 0.0;
            if window_mean < best_window_loss {
                best_window_loss = window_mean;
                evals_since_improvement = 0;
            } else {
                evals_since_improvement += 1;
            }
        }

        metrics.push(MetricsRow {
            iter,
            wall_ms: started.elapsed().as_millis() as u64,
            loss,
            quant_err: quant_ma.mean_or(1.0),
            qual_err: qual_ma.mean_or(1.0),
            grad_mean_abs,
            grad_std,
        });
    }

    MonolithicOutcome {
        agent,
        metrics,
        converged,
        stop_reason,
        iterations: iter,
        wall_ms: started.elapsed().as_millis() as u64,
        iterations_to_criterion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::encode_list;

    #[test]
    fn perfect_predictions_make_the_state_loss_zero() {
        // feed the exact next-state tracks through the loss terms
        let trace = generate_trace(&[2, 1], 2).unwrap();
        let next = &trace.steps[0].1; // after the swap
        let mut tape = Tape::new();
        let pred = tape.leaf(Tensor::matrix(1, 2, next.ptr_a().to_vec()));
        let loss = tape.ce_binary(
            pred,
            Tensor::matrix(1, 2, next.ptr_a().to_vec()),
            None,
        );
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn uniform_selection_costs_ln_five_per_step() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::matrix(1, 5, vec![0.2; 5]));
        let target = selection_target_tensor(&[Some(OpSymbol::Swap)]);
        let ce = tape.ce_categorical(s, target, None);
        assert!((tape.value(ce).item() - 5.0_f64.ln()).abs() < 1e-12);
        assert!((tape.value(ce).item() - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn short_monolithic_runs_are_seed_deterministic() {
        let config = TrainConfig {
            max_len: 3,
            hidden: 6,
            batch_size: 4,
            eval_every: 2,
            eval_samples: 4,
            max_iterations: 4,
            noise: false,
            ..TrainConfig::default()
        };
        let a = train_monolithic(&config);
        let b = train_monolithic(&config);
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (ra, rb) in a.metrics.rows.iter().zip(&b.metrics.rows) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
            assert_eq!(ra.grad_mean_abs.to_bits(), rb.grad_mean_abs.to_bits());
        }
        assert_eq!(a.agent, b.agent);
    }

    #[test]
    fn batch_loss_runs_on_every_operator_and_is_finite() {
        let mut rng = Rng::new(60);
        let agent = AgentParams::init(6, &mut rng);
        let trace = generate_trace(&[3, 1, 2], 3).unwrap();
        let episodes = vec![Episode {
            inputs: (0..trace.step_count())
                .map(|i| trace.state_before(i).clone())
                .collect(),
            symbols: trace.ops().collect(),
            next_states: trace.steps.iter().map(|(_, s)| s.clone()).collect(),
        }];
        let mut tape = Tape::new();
        let (loss, leaves) = batch_loss(&mut tape, &agent, &episodes);
        let v = tape.value(loss).item();
        assert!(v.is_finite() && v > 0.0);
        tape.backward(loss).unwrap();
        // the selection loss reaches the controller, the state losses
        // reach every kernel used by the trace
        let nonzero = leaves
            .iter()
            .filter(|&&id| tape.grad_tensor(id).data().iter().any(|&g| g != 0.0))
            .count();
        assert!(nonzero > leaves.len() / 2, "{nonzero} of {}", leaves.len());
        let _ = encode_list(&[1, 2], 2);
    }
}
