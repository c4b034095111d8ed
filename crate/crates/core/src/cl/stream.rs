use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Ordered, class-disjoint phases of a class-incremental benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub dataset_id: String,
    pub classes_per_phase: usize,
    phases: Vec<Vec<usize>>,
}

impl TaskStream {
    pub fn phases(&self) -> &[Vec<usize>] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Dataset labels introduced in phases `0..=phase`, in arrival order.
    pub fn seen_classes(&self, phase: usize) -> Vec<usize> {
        self.phases[..=phase].concat()
    }

    /// Output-head index of a dataset label: its position in arrival order.
    pub fn head_index(&self, label: usize) -> Option<usize> {
        self.phases.iter().flatten().position(|&c| c == label)
    }
}

/// Split `total_classes` into `phases` groups of `classes_per_phase`.
///
/// Without a seed classes arrive in ascending label order; with one they are
/// permuted reproducibly first.
pub fn build_stream(
    dataset_id: impl Into<String>,
    total_classes: usize,
    phases: usize,
    classes_per_phase: usize,
    seed: Option<u64>,
) -> Result<TaskStream> {
    if phases == 0 || classes_per_phase == 0 {
        return Err(Error::validation(
            "stream",
            "need at least one phase with at least one class",
        ));
    }
    if phases * classes_per_phase > total_classes {
        return Err(Error::validation(
            "stream",
            format!("{phases} phases x {classes_per_phase} classes exceeds the {total_classes} available"),
        ));
    }
    let mut order: Vec<usize> = (0..total_classes).collect();
    if let Some(s) = seed {
        order.shuffle(&mut seed::rng(s, Stream::ClassOrder, 0));
    }
    Ok(TaskStream {
        dataset_id: dataset_id.into(),
        classes_per_phase,
        phases: order
            .chunks(classes_per_phase)
            .take(phases)
            .map(<[usize]>::to_vec)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascending_split() {
        let s = build_stream("blobs", 10, 5, 2, None).unwrap();
        assert_eq!(
            s.phases(),
            &[vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]
        );
        assert_eq!(s.seen_classes(2), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(s.head_index(7), Some(7));
    }

    #[test]
    fn single_phase_is_joint_training() {
        let s = build_stream("blobs", 4, 1, 4, None).unwrap();
        assert_eq!(s.phases(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn seeded_order_is_reproducible_and_disjoint() {
        let a = build_stream("blobs", 10, 5, 2, Some(3)).unwrap();
        assert_eq!(a, build_stream("blobs", 10, 5, 2, Some(3)).unwrap());
        let mut all: Vec<usize> = a.phases().concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for (i, &c) in a.phases().concat().iter().enumerate() {
            assert_eq!(a.head_index(c), Some(i));
        }
    }

    #[test]
    fn insufficient_classes() {
        assert!(build_stream("blobs", 9, 5, 2, None).is_err());
        assert!(build_stream("blobs", 9, 0, 2, None).is_err());
    }
}
