//! One matching round.
//!
//! Tasks are ranked by matching priority, every (source, task) pair is scored
//! into a preference matrix, and columns are then served greedily from the
//! highest-priority task down. Leftover tasks are either deferred to the next
//! round or escalated to the cloud.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{
    matching_priority_unchecked, SourceId, SourceNode, Task, TaskId, WeightsConfig,
};
use crate::settlement::PriorityLedger;

/// Matrices with fewer cells than this are always filled on the calling thread.
#[cfg(feature = "parallel")]
const PARALLEL_MIN_CELLS: usize = 16 * 1024;

/// Sources × tasks preference scores, stored row-major.
///
/// A cell is `cycles_per_second / cycles_required` when the source can finish
/// the task in time and `0.0` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMatrix {
    values: Vec<f64>,
    row_ids: Vec<SourceId>,
    col_ids: Vec<TaskId>,
}

impl PreferenceMatrix {
    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.cols();
        &self.values[row * n..(row + 1) * n]
    }

    pub fn row_ids(&self) -> &[SourceId] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[TaskId] {
        &self.col_ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: TaskId,
    pub source_id: SourceId,
    pub busy_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// In column (priority) order.
    pub assignments: Vec<Assignment>,
    /// In column (priority) order.
    pub unmatched_task_ids: Vec<TaskId>,
    /// Idle seconds left on every source after this round, in row order.
    pub remaining_idle: Vec<(SourceId, f64)>,
}

/// Outcome of routing the tasks a round left unserved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Classification {
    /// Back into the queue for the next round.
    pub deferred: Vec<Task>,
    /// Escalated to the cloud.
    pub big_tasks: Vec<Task>,
}

/// Descending matching priority, ties by ascending task id.
///
/// Balances are read from `ledger` now, so the latest settlement counts.
pub fn sort_tasks_by_priority(
    tasks: &[Task],
    ledger: &PriorityLedger,
    weights: &WeightsConfig,
) -> Vec<Task> {
    let mut keyed: Vec<(f64, &Task)> = tasks
        .iter()
        .map(|t| {
            (
                matching_priority_unchecked(t, ledger.balance_of(t.owner), weights),
                t,
            )
        })
        .collect();
    keyed.sort_by(|(pa, a), (pb, b)| {
        pb.partial_cmp(pa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    keyed.into_iter().map(|(_, t)| t.clone()).collect()
}

/// Whether `source` has enough capacity and speed to finish `task` before
/// its deadline.
#[inline]
pub fn feasible(source: &SourceNode, task: &Task) -> bool {
    task.cycles_required <= source.cycles_per_second * source.idle_seconds
        && task.cycles_required / source.cycles_per_second <= task.deadline_s
}

#[inline]
fn prefer(source: &SourceNode, task: &Task) -> f64 {
    if feasible(source, task) {
        source.cycles_per_second / task.cycles_required
    } else {
        0.0
    }
}

fn fill_row(row: &mut [f64], source: &SourceNode, tasks: &[Task]) {
    for (cell, task) in row.iter_mut().zip(tasks) {
        *cell = prefer(source, task);
    }
}

fn matrix_shell(sources: &[SourceNode], ordered_tasks: &[Task]) -> PreferenceMatrix {
    PreferenceMatrix {
        values: vec![0.0; sources.len() * ordered_tasks.len()],
        row_ids: sources.iter().map(|s| s.id).collect(),
        col_ids: ordered_tasks.iter().map(|t| t.id).collect(),
    }
}

/// Fills the preference matrix on the calling thread.
pub fn build_prefer_matrix_sequential(
    sources: &[SourceNode],
    ordered_tasks: &[Task],
) -> PreferenceMatrix {
    let mut matrix = matrix_shell(sources, ordered_tasks);
    let n = ordered_tasks.len();
    if n > 0 {
        for (row, source) in matrix.values.chunks_mut(n).zip(sources) {
            fill_row(row, source, ordered_tasks);
        }
    }
    matrix
}

/// Fills the preference matrix one row per rayon job.
#[cfg(feature = "parallel")]
pub fn build_prefer_matrix_parallel(
    sources: &[SourceNode],
    ordered_tasks: &[Task],
) -> PreferenceMatrix {
    use rayon::prelude::*;

    let mut matrix = matrix_shell(sources, ordered_tasks);
    let n = ordered_tasks.len();
    if n > 0 {
        matrix
            .values
            .par_chunks_mut(n)
            .zip(sources.par_iter())
            .for_each(|(row, source)| fill_row(row, source, ordered_tasks));
    }
    matrix
}

/// Builds the preference matrix for priority-sorted tasks. Rows follow the
/// order of `sources`, columns the order of `ordered_tasks`.
pub fn build_prefer_matrix(sources: &[SourceNode], ordered_tasks: &[Task]) -> PreferenceMatrix {
    #[cfg(feature = "parallel")]
    {
        if sources.len() * ordered_tasks.len() >= PARALLEL_MIN_CELLS {
            return build_prefer_matrix_parallel(sources, ordered_tasks);
        }
    }
    build_prefer_matrix_sequential(sources, ordered_tasks)
}

/// Serves columns left to right. Each task takes the free source with the
/// highest positive score (lowest source id on ties), and that source is
/// closed for the rest of the round.
pub fn greedy_match(
    matrix: &PreferenceMatrix,
    sources: &[SourceNode],
    ordered_tasks: &[Task],
) -> MatchResult {
    debug_assert_eq!(matrix.rows(), sources.len());
    debug_assert_eq!(matrix.cols(), ordered_tasks.len());

    let mut taken = vec![false; sources.len()];
    let mut remaining: Vec<(SourceId, f64)> =
        sources.iter().map(|s| (s.id, s.idle_seconds)).collect();
    let mut result = MatchResult::default();

    for (col, task) in ordered_tasks.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (row, source) in sources.iter().enumerate() {
            if taken[row] {
                continue;
            }
            let score = matrix.get(row, col);
            if score <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((best_row, best_score)) => match score.total_cmp(&best_score) {
                    Ordering::Greater => true,
                    Ordering::Equal => source.id < sources[best_row].id,
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((row, score));
            }
        }
        match best {
            Some((row, _)) => {
                taken[row] = true;
                let source = &sources[row];
                let busy_seconds = task.cycles_required / source.cycles_per_second;
                remaining[row].1 = (source.idle_seconds - busy_seconds).max(0.0);
                result.assignments.push(Assignment {
                    task_id: task.id,
                    source_id: source.id,
                    busy_seconds,
                });
            }
            None => result.unmatched_task_ids.push(task.id),
        }
    }
    result.remaining_idle = remaining;
    result
}

/// Charges one lost round to each task. A task that has used up its retry
/// budget, or whose deadline has already run out, becomes a big task.
pub fn classify_unmatched(unmatched: Vec<Task>, weights: &WeightsConfig) -> Classification {
    let mut out = Classification::default();
    for mut task in unmatched {
        task.rounds_deferred = (task.rounds_deferred + 1).min(weights.max_rounds_w);
        if task.rounds_deferred >= weights.max_rounds_w || task.deadline_s <= 0.0 {
            out.big_tasks.push(task);
        } else {
            out.deferred.push(task);
        }
    }
    out
}

/// Sort, score and match in one call.
pub fn run_round(
    tasks: &[Task],
    sources: &[SourceNode],
    ledger: &PriorityLedger,
    weights: &WeightsConfig,
) -> (Vec<Task>, MatchResult) {
    let ordered = sort_tasks_by_priority(tasks, ledger, weights);
    let matrix = build_prefer_matrix(sources, &ordered);
    let result = greedy_match(&matrix, sources, &ordered);
    (ordered, result)
}
