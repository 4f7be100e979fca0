//! Class-balanced scene resampling.

use crate::error::{HarnessError, Result};

/// Instances of each class over the dataset.
pub fn class_counts(scene_classes: &[Vec<usize>], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for c in scene_classes.iter().flatten() {
        counts[*c] += 1;
    }
    counts
}

/// Per-scene sampling weight `Σ_{c in scene} total / count_c` over the
/// distinct classes a scene contains; empty scenes weigh 1.
pub fn cbgs_resample(scene_classes: &[Vec<usize>], class_counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = class_counts.iter().sum();
    scene_classes
        .iter()
        .map(|classes| {
            let mut present: Vec<usize> = classes.clone();
            present.sort_unstable();
            present.dedup();
            if present.is_empty() {
                return Ok(1.0);
            }
            present
                .iter()
                .map(|&c| match class_counts.get(c) {
                    Some(&n) if n > 0 => Ok(total as f64 / n as f64),
                    _ => Err(HarnessError::Data(format!(
                        "class {c} appears in a scene but has no count"
                    ))),
                })
                .sum()
        })
        .collect()
}
