//! Deterministic ranking helpers.
//!
//! Every ordering in the toolkit breaks ties toward the lowest index so that
//! reports are stable across runs and platforms.

/// Index of the maximum value; ties go to the lowest index.
pub fn argmax_f32(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices sorted by descending value; equal values keep ascending index
/// order (stable sort over an already-ascending index list).
pub fn argsort_desc_f32(values: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_low() {
        assert_eq!(argmax_f32(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argsort_desc_f32(&[1.0, 3.0, 3.0, 2.0]), vec![1, 2, 3, 0]);
        assert_eq!(argmax_f32(&[0.0, 0.0]), 0);
    }

    #[test]
    fn handles_negatives_and_order() {
        assert_eq!(argsort_desc_f32(&[-1.0, -3.0, 0.5]), vec![2, 0, 1]);
    }
}
