//! The two training measures and the gradient summary.
//!
//! Quantitative: functional error rates (list mismatch, invalid
//! pointer, wrong selection). Qualitative: the saturation requirement,
//! the fraction of output values further than 0.1 from their one-hot
//! label.

use crate::env::DIGIT_DIM;

/// Saturation slack of the qualitative measure.
pub const SATURATION_TOLERANCE: f64 = 0.1;

/// A pointer output is valid iff the only value above 0.5 sits at the
/// target position.
pub fn pointer_output_valid(output: &[f64], target: &[f64]) -> bool {
    debug_assert_eq!(output.len(), target.len());
    let target_pos = target.iter().position(|&v| v == 1.0);
    match (crate::env::EnvState::decode_pointer(output), target_pos) {
        (Some(p), Some(t)) => p == t,
        _ => false,
    }
}

/// Error rate over pointer-track pairs.
pub fn pointer_error_rate(outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    assert_eq!(outputs.len(), targets.len());
    if outputs.is_empty() {
        return 0.0;
    }
    let errors = outputs
        .iter()
        .zip(targets)
        .filter(|(o, t)| !pointer_output_valid(o, t))
        .count();
    errors as f64 / outputs.len() as f64
}

fn decode_row(row: &[f64]) -> Option<u8> {
    if row.iter().all(|&v| v < 0.5) {
        None
    } else {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        Some(best as u8)
    }
}

/// An output list counts as an error on any decoded mismatch with the
/// expected list, padding included.
pub fn list_error_rate(outputs: &[Vec<[f64; DIGIT_DIM]>], targets: &[Vec<[f64; DIGIT_DIM]>]) -> f64 {
    assert_eq!(outputs.len(), targets.len());
    if outputs.is_empty() {
        return 0.0;
    }
    let errors = outputs
        .iter()
        .zip(targets)
        .filter(|(out, tgt)| {
            out.len() != tgt.len()
                || out
                    .iter()
                    .zip(tgt.iter())
                    .any(|(o, t)| decode_row(o) != decode_row(t))
        })
        .count();
    errors as f64 / outputs.len() as f64
}

/// Argmax-mismatch rate over selection vectors.
pub fn selection_error_rate(outputs: &[Vec<f64>], targets: &[usize]) -> f64 {
    assert_eq!(outputs.len(), targets.len());
    if outputs.is_empty() {
        return 0.0;
    }
    let errors = outputs
        .iter()
        .zip(targets)
        .filter(|(s, &t)| {
            let mut best = 0;
            for (i, &v) in s.iter().enumerate() {
                if v > s[best] {
                    best = i;
                }
            }
            best != t
        })
        .count();
    errors as f64 / outputs.len() as f64
}

/// Fraction of scalar values deviating more than 0.1 from their label.
pub fn qualitative_error(outputs: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(outputs.len(), labels.len());
    if outputs.is_empty() {
        return 0.0;
    }
    let bad = outputs
        .iter()
        .zip(labels)
        .filter(|(o, l)| (*o - *l).abs() > SATURATION_TOLERANCE)
        .count();
    bad as f64 / outputs.len() as f64
}

/// Mean and standard deviation of `|g|` over every parameter scalar.
pub fn gradient_stats<'a>(grads: impl Iterator<Item = &'a [f64]>) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for slice in grads {
        for &g in slice {
            let a = g.abs();
            n += 1;
            sum += a;
            sum_sq += a * a;
        }
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointer_validity_follows_the_single_above_half_rule() {
        assert!(pointer_output_valid(&[0.6, 0.4], &[1.0, 0.0]));
        // two values above 0.5 invalidate the track
        assert!(!pointer_output_valid(&[0.6, 0.6], &[1.0, 0.0]));
        // right shape, wrong position
        assert!(!pointer_output_valid(&[0.4, 0.6], &[1.0, 0.0]));
        // nothing above 0.5
        assert!(!pointer_output_valid(&[0.4, 0.4], &[1.0, 0.0]));
    }

    #[test]
    fn exact_list_outputs_have_zero_error() {
        let mut row = [0.0; DIGIT_DIM];
        row[3] = 1.0;
        let lists = vec![vec![row, [0.0; DIGIT_DIM]]];
        assert_eq!(list_error_rate(&lists, &lists.clone()), 0.0);
    }

    #[test]
    fn any_position_mismatch_counts_the_whole_list() {
        let mut a = [0.0; DIGIT_DIM];
        a[3] = 1.0;
        let mut b = [0.0; DIGIT_DIM];
        b[4] = 1.0;
        let out = vec![vec![a, a]];
        let tgt = vec![vec![a, b]];
        assert_eq!(list_error_rate(&out, &tgt), 1.0);
    }

    #[test]
    fn selection_error_is_argmax_mismatch() {
        let outputs = vec![vec![0.1, 0.7, 0.2], vec![0.5, 0.3, 0.2]];
        assert_eq!(selection_error_rate(&outputs, &[1, 0]), 0.0);
        assert_eq!(selection_error_rate(&outputs, &[1, 2]), 0.5);
    }

    #[test]
    fn qualitative_threshold_sits_at_point_one() {
        // 0.95 against 1 complies, 0.5 never does
        assert_eq!(qualitative_error(&[0.95], &[1.0]), 0.0);
        assert_eq!(qualitative_error(&[0.5], &[1.0]), 1.0);
        assert_eq!(qualitative_error(&[0.5], &[0.0]), 1.0);
        assert_eq!(qualitative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(qualitative_error(&[0.89, 0.0], &[1.0, 0.0]), 0.5);
    }

    #[test]
    fn gradient_stats_match_hand_values() {
        assert_eq!(gradient_stats([].into_iter()), (0.0, 0.0));
        let zeros = vec![0.0; 4];
        assert_eq!(gradient_stats([zeros.as_slice()].into_iter()), (0.0, 0.0));
        let pm = vec![1.0, -1.0];
        let (mean, std) = gradient_stats([pm.as_slice()].into_iter());
        assert_eq!(mean, 1.0);
        assert_eq!(std, 0.0);
        let mixed = vec![3.0, -1.0];
        let (mean, std) = gradient_stats([mixed.as_slice()].into_iter());
        assert_eq!(mean, 2.0);
        assert_eq!(std, 1.0);
    }
}
