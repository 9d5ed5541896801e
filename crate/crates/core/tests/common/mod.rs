//! Test-only oracles. Nothing here calls into the matching engine.

#![allow(dead_code)]

use std::collections::HashMap;

use crl_core::model::{DeviceId, SourceId, SourceNode, Task, TaskId, WeightsConfig};
use rand::seq::SliceRandom;
use rand::Rng;

/// Assignments as `(task id, source id)` in column order, plus unmatched task ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub assignments: Vec<(u64, u64)>,
    pub unmatched: Vec<u64>,
}

const D: usize = 0;
const A: usize = 1;
const V: usize = 2;
const P: usize = 3;
const N: usize = 4;

/// Straight transcription of the matching procedure: build the task
/// matrix, bubble-sort its columns by priority, fill the prefer matrix cell by
/// cell, then walk the columns and zero each chosen source's row.
pub fn literal_round(
    tasks: &[Task],
    sources: &[SourceNode],
    balances: &HashMap<DeviceId, f64>,
    w: &WeightsConfig,
) -> RoundOutcome {
    // Task matrix: one column [D, A, V, P, N, priority] per task.
    let mut t_all: Vec<[f64; 6]> = tasks
        .iter()
        .map(|t| {
            let priority = balances.get(&t.owner).copied().unwrap_or(0.0);
            let p = w.gamma_t * (t.value / t.cycles_required) + w.gamma_p * priority;
            [
                t.deadline_s,
                t.cycles_required,
                t.value,
                p,
                t.id.0 as f64,
                priority,
            ]
        })
        .collect();

    // Bubble sort, higher P first, equal P by smaller task number.
    let n = t_all.len();
    for pass in 0..n {
        for k in 0..n.saturating_sub(1 + pass) {
            let (left, right) = (t_all[k], t_all[k + 1]);
            if right[P] > left[P] || (right[P] == left[P] && right[N] < left[N]) {
                t_all.swap(k, k + 1);
            }
        }
    }

    // Source matrix: one column [E, Cal, M] per source.
    let s_all: Vec<[f64; 3]> = sources
        .iter()
        .map(|s| [s.idle_seconds, s.cycles_per_second, s.id.0 as f64])
        .collect();
    let m = s_all.len();

    let mut pref = vec![vec![0.0f64; n]; m];
    for j in 0..m {
        for i in 0..n {
            let (e, cal) = (s_all[j][0], s_all[j][1]);
            let (d, a) = (t_all[i][D], t_all[i][A]);
            let can_finish = a <= cal * e && a / cal <= d;
            pref[j][i] = if can_finish { cal / a } else { 0.0 };
        }
    }

    let mut out = RoundOutcome {
        assignments: Vec::new(),
        unmatched: Vec::new(),
    };
    for i in 0..n {
        let mut best: Option<usize> = None;
        for j in 0..m {
            if pref[j][i] <= 0.0 {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) if pref[j][i] > pref[b][i] => Some(j),
                Some(b) if pref[j][i] == pref[b][i] && s_all[j][2] < s_all[b][2] => Some(j),
                keep => keep,
            };
        }
        match best {
            Some(j) => {
                out.assignments
                    .push((t_all[i][N] as u64, s_all[j][2] as u64));
                for cell in pref[j].iter_mut() {
                    *cell = 0.0;
                }
            }
            None => out.unmatched.push(t_all[i][N] as u64),
        }
    }
    out
}

pub fn task(id: u64, owner: u64, value: f64, cycles: f64, deadline: f64) -> Task {
    Task {
        id: TaskId(id),
        owner: DeviceId(owner),
        deadline_s: deadline,
        cycles_required: cycles,
        value,
        arrival_step: 0,
        rounds_deferred: 0,
    }
}

pub fn source(id: u64, owner: u64, rate: f64, idle: f64) -> SourceNode {
    SourceNode {
        id: SourceId(id),
        owner: DeviceId(owner),
        idle_seconds: idle,
        cycles_per_second: rate,
    }
}

/// The eight (value, cycles, deadline) task shapes of the small grid.
pub fn task_grid() -> Vec<(f64, f64, f64)> {
    let mut shapes = Vec::new();
    for value in [1.0, 2.0] {
        for cycles in [1.0, 10.0] {
            for deadline in [1.0, 100.0] {
                shapes.push((value, cycles, deadline));
            }
        }
    }
    shapes
}

/// The four (rate, idle) source shapes of the small grid.
pub fn source_grid() -> Vec<(f64, f64)> {
    let mut shapes = Vec::new();
    for rate in [1.0, 10.0] {
        for idle in [1.0, 10.0] {
            shapes.push((rate, idle));
        }
    }
    shapes
}

/// Every length-`len` sequence over `0..base`.
pub fn tuples(base: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..base).map(move |d| {
                    let mut next = prefix.clone();
                    next.push(d);
                    next
                })
            })
            .collect();
    }
    out
}

/// Every non-decreasing length-`len` sequence over `0..base`.
pub fn multisets(base: usize, len: usize) -> Vec<Vec<usize>> {
    fn go(base: usize, len: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for d in start..base {
            cur.push(d);
            go(base, len, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(base, len, 0, &mut Vec::new(), &mut out);
    out
}

/// A random round with up to five tasks and sources, random owners,
/// shuffled identifiers and random balances. About half the instances draw
/// from the small grid so ties stay common.
pub fn random_instance<R: Rng>(
    rng: &mut R,
) -> (Vec<Task>, Vec<SourceNode>, HashMap<DeviceId, f64>) {
    let n = rng.random_range(0..=5usize);
    let m = rng.random_range(0..=5usize);
    let on_grid = rng.random_bool(0.5);
    let tg = task_grid();
    let sg = source_grid();

    let mut task_ids: Vec<u64> = (0..n as u64).map(|i| 10 + 3 * i).collect();
    task_ids.shuffle(rng);
    let mut source_ids: Vec<u64> = (0..m as u64).map(|i| 100 + 7 * i).collect();
    source_ids.shuffle(rng);

    let tasks = task_ids
        .iter()
        .map(|&id| {
            let owner = rng.random_range(0..4);
            if on_grid {
                let (v, c, d) = tg[rng.random_range(0..tg.len())];
                task(id, owner, v, c, d)
            } else {
                task(
                    id,
                    owner,
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.5..50.0),
                    rng.random_range(0.5..30.0),
                )
            }
        })
        .collect();
    let sources = source_ids
        .iter()
        .map(|&id| {
            let owner = rng.random_range(0..4);
            if on_grid {
                let (r, e) = sg[rng.random_range(0..sg.len())];
                source(id, owner, r, e)
            } else {
                source(
                    id,
                    owner,
                    rng.random_range(0.5..10.0),
                    rng.random_range(0.0..20.0),
                )
            }
        })
        .collect();
    let balances = (0..4)
        .map(|d| {
            let b = if on_grid {
                [0.0, 1.0, -1.0][rng.random_range(0..3)]
            } else {
                rng.random_range(-5.0..5.0)
            };
            (DeviceId(d), b)
        })
        .collect();
    (tasks, sources, balances)
}
