//! Staged training: the five units train independently but in
//! lockstep, and every 100 iterations the current modules are
//! assembled and tested as a full agent on a fixed evaluation set.

use super::unit::{assemble, UnitOutcome, UnitTrainer};
use super::{StopReason, TrainConfig};
use crate::control::AgentParams;
use crate::data::{sample_digits, UnitId};
use crate::eval::evaluate_on_lists;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Assembly cadence, in lockstep iterations.
pub const ASSEMBLY_EVERY: u64 = 100;

/// One assembled-accuracy observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyPoint {
    pub iteration: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct StagedOutcome {
    pub units: Vec<UnitOutcome>,
    pub agent: AgentParams,
    pub assembly: Vec<AssemblyPoint>,
    pub wall_ms: u64,
}

impl StagedOutcome {
    pub fn assembly_csv(&self) -> String {
        let mut out = String::from("iteration,accuracy\n");
        for p in &self.assembly {
            out.push_str(&format!("{},{}\n", p.iteration, p.accuracy));
        }
        out
    }
}

fn assemble_current(trainers: &[UnitTrainer]) -> AgentParams {
    let outcomes: Vec<UnitOutcome> = trainers
        .iter()
        .map(|t| UnitOutcome {
            unit: t.unit(),
            params: t.params.clone(),
            metrics: Default::default(),
            converged: false,
            stop_reason: StopReason::IterationBudget,
            iterations: t.iterations(),
            wall_ms: 0,
            iterations_to_criterion: None,
            early_loss_divergence: false,
        })
        .collect();
    assemble(outcomes).agent
}

/// Runs the staged regime to convergence of every unit or its budgets.
pub fn train_staged(config: &TrainConfig) -> StagedOutcome {
    let started = Instant::now();
    let mut trainers: Vec<UnitTrainer> = UnitId::ALL
        .iter()
        .map(|&unit| UnitTrainer::new(unit, config))
        .collect();
    let mut reasons: Vec<Option<StopReason>> = vec![None; trainers.len()];

    // fixed assembled-evaluation set, drawn once
    let mut fixed_rng = Rng::new(config.seed ^ 0x5354_4147);
    let eval_lists: Vec<Vec<u8>> = (0..config.assembly_eval_samples)
        .map(|_| sample_digits(config.max_len, &mut fixed_rng))
        .collect();
    let step_budget = config.episode_step_budget();

    let mut assembly = Vec::new();
    let untrained = assemble_current(&trainers);
    assembly.push(AssemblyPoint {
        iteration: 0,
        accuracy: evaluate_on_lists(&untrained, &eval_lists, step_budget).accuracy,
    });

    let mut global_iter: u64 = 0;
    loop {
        let mut all_stopped = true;
        for (trainer, reason) in trainers.iter_mut().zip(reasons.iter_mut()) {
            if reason.is_none() {
                match trainer.should_stop() {
                    Some(r) => *reason = Some(r),
                    None => {
                        trainer.run_one_iteration();
                        all_stopped = false;
                    }
                }
            }
        }
        if all_stopped {
            break;
        }
        global_iter += 1;
        if global_iter % ASSEMBLY_EVERY == 0 {
            let agent = assemble_current(&trainers);
            assembly.push(AssemblyPoint {
                iteration: global_iter,
                accuracy: evaluate_on_lists(&agent, &eval_lists, step_budget).accuracy,
            });
        }
    }

    // a final point on the exact returned parameters
    if assembly.last().map(|p| p.iteration) != Some(global_iter) {
        let agent = assemble_current(&trainers);
        assembly.push(AssemblyPoint {
            iteration: global_iter,
            accuracy: evaluate_on_lists(&agent, &eval_lists, step_budget).accuracy,
        });
    }

    let units: Vec<UnitOutcome> = trainers
        .into_iter()
        .zip(reasons)
        .map(|(t, r)| {
            let reason = r.or_else(|| t.should_stop()).unwrap_or(StopReason::IterationBudget);
            t.finish(reason)
        })
        .collect();
    let modular = assemble(units);

    StagedOutcome {
        units: modular.units,
        agent: modular.agent,
        assembly,
        wall_ms: started.elapsed().as_millis() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assembly_series_lands_on_the_cadence() {
        let config = TrainConfig {
            max_len: 3,
            hidden: 6,
            batch_size: 4,
            eval_every: 50,
            eval_samples: 8,
            max_iterations: 250,
            assembly_eval_samples: 8,
            ..TrainConfig::default()
        };
        let out = train_staged(&config);
        let iters: Vec<u64> = out.assembly.iter().map(|p| p.iteration).collect();
        assert!(iters.starts_with(&[0, 100, 200]), "{iters:?}");
        assert_eq!(out.units.len(), 5);
        let csv = out.assembly_csv();
        assert!(csv.starts_with("iteration,accuracy\n"));
        assert_eq!(csv.lines().count(), 1 + out.assembly.len());
    }

    #[test]
    fn untrained_assembly_accuracy_is_near_zero() {
        let config = TrainConfig {
            max_len: 4,
            hidden: 6,
            batch_size: 4,
            max_iterations: 1,
            assembly_eval_samples: 64,
            ..TrainConfig::default()
        };
        let out = train_staged(&config);
        assert!(out.assembly[0].accuracy <= 0.02, "{}", out.assembly[0].accuracy);
    }

    #[test]
    fn final_point_matches_a_fresh_evaluation_of_the_returned_agent() {
        let config = TrainConfig {
            max_len: 3,
            hidden: 6,
            batch_size: 4,
            eval_every: 10,
            eval_samples: 8,
            max_iterations: 30,
            assembly_eval_samples: 16,
            ..TrainConfig::default()
        };
        let out = train_staged(&config);
        let mut fixed_rng = Rng::new(config.seed ^ 0x5354_4147);
        let eval_lists: Vec<Vec<u8>> = (0..config.assembly_eval_samples)
            .map(|_| sample_digits(config.max_len, &mut fixed_rng))
            .collect();
        let direct = evaluate_on_lists(&out.agent, &eval_lists, config.episode_step_budget());
        assert_eq!(out.assembly.last().unwrap().accuracy, direct.accuracy);
    }
}
