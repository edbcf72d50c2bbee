//! Training data machinery: list sampling with the accuracy-driven
//! curriculum, the uniform-sampling baseline, input noise injection,
//! and extraction of per-module supervised samples from expert traces.

use crate::env::{EnvState, OpSymbol, Trace, DIGIT_DIM, STATE_DIM};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use thiserror::Error;

/// Curriculum state: lengths are drawn from Beta(1 + accuracy,
/// 2 - accuracy) scaled onto `[2, max_len]`, so mass shifts toward long
/// lists as accuracy improves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumParams {
    pub max_len: usize,
    pub accuracy: f64,
}

impl CurriculumParams {
    pub fn new(max_len: usize, accuracy: f64) -> Self {
        assert!(max_len >= 2, "max_len must be at least 2");
        CurriculumParams {
            max_len,
            accuracy: accuracy.clamp(0.0, 1.0),
        }
    }

    pub fn alpha(&self) -> f64 {
        1.0 + self.accuracy
    }

    pub fn beta(&self) -> f64 {
        1.0 + (1.0 - self.accuracy)
    }
}

/// Curriculum length draw: `min(N, 2 + floor(x * (N - 1)))` with
/// `x ~ Beta(alpha, beta)`.
pub fn sample_length(cp: &CurriculumParams, rng: &mut Rng) -> usize {
    let x = rng.beta(cp.alpha(), cp.beta());
    let n = cp.max_len;
    n.min(2 + (x * (n as f64 - 1.0)).floor() as usize)
}

/// Baseline: uniform over the integers `[2, max_len]`.
pub fn sample_length_uniform(max_len: usize, rng: &mut Rng) -> usize {
    assert!(max_len >= 2);
    rng.range_inclusive(2, max_len as u64) as usize
}

/// I.i.d. uniform digits 0-9.
pub fn sample_digits(length: usize, rng: &mut Rng) -> Vec<u8> {
    (0..length).map(|_| rng.below(10) as u8).collect()
}

/// Largest deviation the uniform input noise can introduce.
pub const NOISE_SPAN: f64 = 0.4;

/// Per-element uniform noise: each value becomes `|x - u|` with
/// `u ~ U(0, 0.4)` drawn independently.
pub fn noise_uniform(values: &[f64], rng: &mut Rng) -> Vec<f64> {
    values
        .iter()
        .map(|&x| (x - rng.uniform(0.0, NOISE_SPAN)).abs())
        .collect()
}

/// Softmax-manifold noise for a digit row, before dropping the
/// eleventh element: the row is extended to 11 entries (a null row maps
/// to a hot eleventh), perturbed by [`noise_uniform`], and pushed
/// through `softmax(x * 100)`.
pub fn noise_softmax_extended(row: &[f64; DIGIT_DIM], rng: &mut Rng) -> [f64; DIGIT_DIM + 1] {
    let mut ext = [0.0; DIGIT_DIM + 1];
    ext[..DIGIT_DIM].copy_from_slice(row);
    if row.iter().all(|&v| v == 0.0) {
        ext[DIGIT_DIM] = 1.0;
    }
    let mut z = [0.0; DIGIT_DIM + 1];
    for (zi, &v) in z.iter_mut().zip(&ext) {
        *zi = (v - rng.uniform(0.0, NOISE_SPAN)).abs() * 100.0;
    }
    let max = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = [0.0; DIGIT_DIM + 1];
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(&z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

/// [`noise_softmax_extended`] with the eleventh element discarded, so
/// null rows come back as (numerically) zero vectors.
pub fn noise_softmax(row: &[f64; DIGIT_DIM], rng: &mut Rng) -> [f64; DIGIT_DIM] {
    let ext = noise_softmax_extended(row, rng);
    let mut out = [0.0; DIGIT_DIM];
    out.copy_from_slice(&ext[..DIGIT_DIM]);
    out
}

/// Applies channel-appropriate noise to a whole state: digit rows via
/// [`noise_softmax`], pointer tracks via [`noise_uniform`].
pub fn noisy_state(state: &EnvState, rng: &mut Rng) -> EnvState {
    let list = state
        .list()
        .iter()
        .map(|row| noise_softmax(row, rng))
        .collect();
    let ptr_a = noise_uniform(state.ptr_a(), rng);
    let ptr_b = noise_uniform(state.ptr_b(), rng);
    state.with_list(list).with_ptr_a(ptr_a).with_ptr_b(ptr_b)
}

/// Identifies a trainable unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitId {
    Mova,
    Movb,
    Retb,
    Swap,
    Control,
}

impl UnitId {
    pub const ALL: [UnitId; 5] = [
        UnitId::Mova,
        UnitId::Movb,
        UnitId::Retb,
        UnitId::Swap,
        UnitId::Control,
    ];

    /// Stable index used for deriving per-unit seeds.
    pub fn index(self) -> usize {
        match self {
            UnitId::Mova => 0,
            UnitId::Movb => 1,
            UnitId::Retb => 2,
            UnitId::Swap => 3,
            UnitId::Control => 4,
        }
    }

    pub fn is_pointer(self) -> bool {
        matches!(self, UnitId::Mova | UnitId::Movb | UnitId::Retb)
    }

    /// The operator symbol a kernel unit supervises; the control unit
    /// has none.
    pub fn op_symbol(self) -> Option<OpSymbol> {
        match self {
            UnitId::Mova => Some(OpSymbol::Mova),
            UnitId::Movb => Some(OpSymbol::Movb),
            UnitId::Retb => Some(OpSymbol::Retb),
            UnitId::Swap => Some(OpSymbol::Swap),
            UnitId::Control => None,
        }
    }
}

impl std::fmt::Display for UnitId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            UnitId::Mova => "mova",
            UnitId::Movb => "movb",
            UnitId::Retb => "retb",
            UnitId::Swap => "swap",
            UnitId::Control => "control",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("unknown module id {0:?} (expected mova, movb, retb, swap or control)")]
pub struct UnknownUnitId(String);

impl FromStr for UnitId {
    type Err = UnknownUnitId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mova" => Ok(UnitId::Mova),
            "movb" => Ok(UnitId::Movb),
            "retb" => Ok(UnitId::Retb),
            "swap" => Ok(UnitId::Swap),
            "control" => Ok(UnitId::Control),
            other => Err(UnknownUnitId(other.to_string())),
        }
    }
}

/// One supervised example for a unit. Targets are always noise-free;
/// inputs carry the noise flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleSample {
    pub module: UnitId,
    pub noisy: bool,
    #[serde(flatten)]
    pub payload: SamplePayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplePayload {
    /// Pointer-op pair: input track and the (shift-by-one) target track.
    Track { input: Vec<f64>, target: Vec<f64> },
    /// Swap pair: merged 12-dim rows in, clean post-swap digit rows out.
    Merged {
        input: Vec<[f64; STATE_DIM]>,
        target: Vec<[f64; DIGIT_DIM]>,
    },
    /// Control pair: the state sequence in, the op symbols out.
    Episode {
        inputs: Vec<Vec<[f64; STATE_DIM]>>,
        targets: Vec<OpSymbol>,
    },
}

/// Extracts every supervised sample for `module` from `traces`.
///
/// Pointer modules yield one sample per trace step that uses their
/// operator; the swap module likewise; the control module yields one
/// episode per trace.
pub fn build_module_dataset(
    traces: &[Trace],
    module: UnitId,
    noise: bool,
    rng: &mut Rng,
) -> Vec<ModuleSample> {
    let mut samples = Vec::new();
    for trace in traces {
        match module {
            UnitId::Mova | UnitId::Movb | UnitId::Retb => {
                let symbol = module.op_symbol().unwrap();
                for (i, (op, after)) in trace.steps.iter().enumerate() {
                    if *op != symbol {
                        continue;
                    }
                    let before = trace.state_before(i);
                    let input = match module {
                        UnitId::Movb => before.ptr_b().to_vec(),
                        _ => before.ptr_a().to_vec(),
                    };
                    let target = match module {
                        UnitId::Mova => after.ptr_a().to_vec(),
                        _ => after.ptr_b().to_vec(),
                    };
                    let input = if noise { noise_uniform(&input, rng) } else { input };
                    samples.push(ModuleSample {
                        module,
                        noisy: noise,
                        payload: SamplePayload::Track { input, target },
                    });
                }
            }
            UnitId::Swap => {
                for (i, (op, after)) in trace.steps.iter().enumerate() {
                    if *op != OpSymbol::Swap {
                        continue;
                    }
                    let before = if noise {
                        noisy_state(trace.state_before(i), rng)
                    } else {
                        trace.state_before(i).clone()
                    };
                    samples.push(ModuleSample {
                        module,
                        noisy: noise,
                        payload: SamplePayload::Merged {
                            input: before.merged_rows(),
                            target: after.list().to_vec(),
                        },
                    });
                }
            }
            UnitId::Control => {
                let mut inputs = Vec::with_capacity(trace.step_count());
                for i in 0..trace.step_count() {
                    let before = if noise {
                        noisy_state(trace.state_before(i), rng)
                    } else {
                        trace.state_before(i).clone()
                    };
                    inputs.push(before.merged_rows());
                }
                samples.push(ModuleSample {
                    module,
                    noisy: noise,
                    payload: SamplePayload::Episode {
                        inputs,
                        targets: trace.ops().collect(),
                    },
                });
            }
        }
    }
    samples
}
