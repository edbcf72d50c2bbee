//! Teacher-free evaluation and generalization sweeps over unseen
//! lengths, emitting plot-ready records.

use crate::control::{default_max_steps, run_agent, AgentParams};
use crate::data::sample_digits;
use crate::env::{decode_list, encode_list};
use crate::rng::Rng;
use crate::train::qualitative_error;
use serde::{Deserialize, Serialize};

/// Episode-level summary of one evaluation batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// Fraction of episodes whose decoded final list equals the sorted
    /// digits exactly. Truncated episodes count as errors.
    pub accuracy: f64,
    /// Fraction of episodes that hit the step budget before EOP.
    pub truncation_rate: f64,
    /// Saturation error of the final list values against the sorted
    /// one-hot labels.
    pub qualitative_error: f64,
}

/// Evaluates exact-sort accuracy on `episodes` uniformly sampled lists
/// of `length`, drawing from `rng`.
pub fn evaluate_sorting_with_rng(
    agent: &AgentParams,
    length: usize,
    episodes: usize,
    rng: &mut Rng,
) -> EvalOutcome {
    let lists: Vec<Vec<u8>> = (0..episodes).map(|_| sample_digits(length, rng)).collect();
    evaluate_on_lists(agent, &lists, default_max_steps(length))
}

/// Seeded wrapper around [`evaluate_sorting_with_rng`].
pub fn evaluate_sorting(agent: &AgentParams, length: usize, episodes: usize, seed: u64) -> EvalOutcome {
    let mut rng = Rng::new(seed);
    evaluate_sorting_with_rng(agent, length, episodes, &mut rng)
}

/// Runs the agent on a fixed collection of digit lists.
pub fn evaluate_on_lists(agent: &AgentParams, lists: &[Vec<u8>], max_steps: usize) -> EvalOutcome {
    assert!(!lists.is_empty());
    let mut exact = 0usize;
    let mut truncated = 0usize;
    let mut flat_out: Vec<f64> = Vec::new();
    let mut flat_tgt: Vec<f64> = Vec::new();

    for digits in lists {
        let state = encode_list(digits, digits.len()).expect("valid digits");
        let run = run_agent(agent, &state, max_steps);
        if run.truncated {
            truncated += 1;
        }
        let mut sorted = digits.clone();
        sorted.sort_unstable();
        let expected: Vec<Option<u8>> = sorted.iter().map(|&d| Some(d)).collect();
        if !run.truncated && decode_list(&run.final_state) == expected {
            exact += 1;
        }
        for (pos, row) in run.final_state.list().iter().enumerate() {
            flat_out.extend_from_slice(row);
            let mut label = [0.0; crate::env::DIGIT_DIM];
            if pos < sorted.len() {
                label[sorted[pos] as usize] = 1.0;
            }
            flat_tgt.extend_from_slice(&label);
        }
    }
    EvalOutcome {
        accuracy: exact as f64 / lists.len() as f64,
        truncation_rate: truncated as f64 / lists.len() as f64,
        qualitative_error: qualitative_error(&flat_out, &flat_tgt),
    }
}

/// One sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub length: usize,
    pub episodes: usize,
    pub accuracy: f64,
    pub truncation_rate: f64,
}

/// Per-length accuracies plus the two marker lengths of the
/// generalization plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Largest length whose accuracy is at least 0.9.
    pub pass_090_at: Option<usize>,
    /// Smallest length with exactly zero accuracy.
    pub zero_accuracy_at: Option<usize>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,episodes,accuracy,truncation_rate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.length, r.episodes, r.accuracy, r.truncation_rate
            ));
        }
        out
    }
}

/// Evaluates the agent at each requested length (strictly increasing)
/// and derives the marker lengths.
pub fn generalization_sweep(
    agent: &AgentParams,
    lengths: &[usize],
    episodes_per_length: usize,
    seed: u64,
) -> SweepReport {
    assert!(!lengths.is_empty(), "sweep needs at least one length");
    assert!(
        lengths.windows(2).all(|w| w[0] < w[1]),
        "sweep lengths must be strictly increasing"
    );
    let mut rows = Vec::with_capacity(lengths.len());
    for (i, &length) in lengths.iter().enumerate() {
        // one independent stream per length so reports are stable under
        // subsetting
        let outcome = evaluate_sorting(agent, length, episodes_per_length, seed ^ (i as u64) << 32);
        rows.push(SweepRow {
            length,
            episodes: episodes_per_length,
            accuracy: outcome.accuracy,
            truncation_rate: outcome.truncation_rate,
        });
    }
    let pass_090_at = rows
        .iter()
        .filter(|r| r.accuracy >= 0.9)
        .map(|r| r.length)
        .last();
    let zero_accuracy_at = rows
        .iter()
        .find(|r| r.accuracy == 0.0)
        .map(|r| r.length);
    SweepReport {
        rows,
        pass_090_at,
        zero_accuracy_at,
    }
}
