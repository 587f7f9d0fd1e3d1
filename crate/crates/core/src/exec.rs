//! CPU execution engine standing in for a GPU launch: independent work
//! groups scheduled over a fixed set of workers, two-level sum reductions,
//! and shared accumulators.
//!
//! In deterministic mode every floating-point sum is evaluated in a fixed
//! binary-tree order over the logical item index, so results do not depend
//! on the worker count or on which worker ran which group. Unordered mode
//! trades that for dynamic scheduling and atomic accumulation.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::thread;

use crate::error::{Error, Result};

/// Environment variable consulted when no explicit worker count is given.
pub const WORKERS_ENV: &str = "PARACUBE_WORKERS";

/// Leaves of the summation tree are summed sequentially up to this length.
const TREE_LEAF: usize = 16;

/// Below this length a reduction never fans out to threads.
const PAR_REDUCE_MIN: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionMode {
    /// Pairwise summation in a fixed order independent of the worker count.
    DeterministicTree,
    /// Partial sums combined in completion order.
    Unordered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    /// Worker threads; 0 picks `PARACUBE_WORKERS` or the available parallelism.
    pub workers: usize,
    pub deterministic: bool,
    /// Work items per scheduling unit.
    pub chunk: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            workers: 0,
            deterministic: true,
            chunk: 16,
        }
    }
}

impl ExecConfig {
    pub fn with_workers(workers: usize) -> Self {
        ExecConfig {
            workers,
            ..Default::default()
        }
    }

    pub fn unordered(mut self) -> Self {
        self.deterministic = false;
        self
    }
}

fn resolve_workers(requested: usize) -> usize {
    if requested > 0 {
        return requested;
    }
    if let Some(n) = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        return n;
    }
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// A configured execution engine.
#[derive(Debug, Clone)]
pub struct Exec {
    workers: usize,
    mode: ReductionMode,
    chunk: usize,
}

impl Default for Exec {
    fn default() -> Self {
        Exec::new(ExecConfig::default())
    }
}

impl Exec {
    pub fn new(cfg: ExecConfig) -> Self {
        Exec {
            workers: resolve_workers(cfg.workers),
            mode: if cfg.deterministic {
                ReductionMode::DeterministicTree
            } else {
                ReductionMode::Unordered
            },
            chunk: cfg.chunk.max(1),
        }
    }

    /// Single worker, deterministic.
    pub fn serial() -> Self {
        Exec::new(ExecConfig::with_workers(1))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn mode(&self) -> ReductionMode {
        self.mode
    }

    pub fn is_deterministic(&self) -> bool {
        self.mode == ReductionMode::DeterministicTree
    }

    /// Runs `task(g)` once for every `g` in `0..n_groups` and returns the
    /// results ordered by group id.
    ///
    /// The first failure stops workers from picking up further groups; the
    /// error with the lowest group id among those observed is returned
    /// wrapped in [`Error::Task`].
    pub fn parallel_for_groups<T, F>(&self, n_groups: usize, task: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync,
    {
        let n_blocks = n_groups.div_ceil(self.chunk);
        let workers = self.workers.min(n_blocks);
        if workers <= 1 {
            return (0..n_groups)
                .map(|g| task(g).map_err(|e| wrap_task_error(g, e)))
                .collect();
        }

        let cancel = AtomicBool::new(false);
        let failure: Mutex<Option<(usize, Error)>> = Mutex::new(None);
        let next_block = AtomicUsize::new(0);
        let chunk = self.chunk;
        let deterministic = self.is_deterministic();

        let run_block = |block: usize, out: &mut Vec<(usize, T)>| -> bool {
            let start = block * chunk;
            let end = (start + chunk).min(n_groups);
            for g in start..end {
                if cancel.load(Ordering::Relaxed) {
                    return false;
                }
                match task(g) {
                    Ok(v) => out.push((g, v)),
                    Err(e) => {
                        cancel.store(true, Ordering::Relaxed);
                        let mut slot = failure.lock().unwrap_or_else(|p| p.into_inner());
                        if slot.as_ref().is_none_or(|(first, _)| g < *first) {
                            *slot = Some((g, e));
                        }
                        return false;
                    }
                }
            }
            true
        };

        let partials: Vec<Vec<(usize, T)>> = thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run_block = &run_block;
                    let next_block = &next_block;
                    s.spawn(move || {
                        let mut out = Vec::new();
                        if deterministic {
                            // Static block-cyclic distribution.
                            let mut block = w;
                            while block < n_blocks && run_block(block, &mut out) {
                                block += workers;
                            }
                        } else {
                            loop {
                                let block = next_block.fetch_add(1, Ordering::Relaxed);
                                if block >= n_blocks || !run_block(block, &mut out) {
                                    break;
                                }
                            }
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });

        if let Some((g, e)) = failure.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(wrap_task_error(g, e));
        }

        let mut slots: Vec<Option<T>> = Vec::with_capacity(n_groups);
        slots.resize_with(n_groups, || None);
        for (g, v) in partials.into_iter().flatten() {
            slots[g] = Some(v);
        }
        Ok(slots
            .into_iter()
            .map(|v| v.expect("every group produces a result"))
            .collect())
    }

    /// Sum of `values` under the engine's reduction mode.
    pub fn reduce(&self, values: &[f64]) -> f64 {
        match self.mode {
            ReductionMode::DeterministicTree => {
                let depth = usize::BITS - (self.workers.max(1) - 1).leading_zeros();
                tree_sum_par(values, depth)
            }
            ReductionMode::Unordered => unordered_sum(values, self.workers),
        }
    }

    /// A zeroed accumulator of `len` slots fed by up to `streams` logical
    /// producers.
    pub fn accumulator(&self, len: usize, streams: usize) -> Accumulator {
        Accumulator::new(len, streams, self.mode)
    }
}

fn wrap_task_error(group: usize, e: Error) -> Error {
    match e {
        // Keep the innermost group id when kernels nest engine calls.
        Error::Task { .. } => e,
        other => Error::Task {
            group,
            source: Box::new(other),
        },
    }
}

/// Pairwise summation with a fixed tree shape determined by the length only.
pub fn tree_sum(values: &[f64]) -> f64 {
    if values.len() <= TREE_LEAF {
        let mut s = 0.0;
        for &v in values {
            s += v;
        }
        return s;
    }
    let (a, b) = values.split_at(values.len() / 2);
    tree_sum(a) + tree_sum(b)
}

/// Same tree as [`tree_sum`], with the top `depth` levels evaluated on
/// separate threads.
fn tree_sum_par(values: &[f64], depth: u32) -> f64 {
    if depth == 0 || values.len() < PAR_REDUCE_MIN {
        return tree_sum(values);
    }
    let (a, b) = values.split_at(values.len() / 2);
    let (x, y) = thread::scope(|s| {
        let h = s.spawn(|| tree_sum_par(a, depth - 1));
        let y = tree_sum_par(b, depth - 1);
        (h.join().expect("reduction worker panicked"), y)
    });
    x + y
}

fn unordered_sum(values: &[f64], workers: usize) -> f64 {
    if workers <= 1 || values.len() < PAR_REDUCE_MIN {
        return values.iter().sum();
    }
    let total = AtomicF64::new(0.0);
    let per = values.len().div_ceil(workers);
    thread::scope(|s| {
        for part in values.chunks(per) {
            let total = &total;
            s.spawn(move || total.add(part.iter().sum()));
        }
    });
    total.load()
}

/// `f64` with an atomic add built on compare-and-swap.
#[derive(Debug, Default)]
pub struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        AtomicF64(AtomicU64::new(v.to_bits()))
    }

    pub fn load(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }

    pub fn add(&self, v: f64) {
        let mut cur = self.0.load(Ordering::Relaxed);
        loop {
            let next = (f64::from_bits(cur) + v).to_bits();
            match self
                .0
                .compare_exchange_weak(cur, next, Ordering::AcqRel, Ordering::Relaxed)
            {
                Ok(_) => return,
                Err(seen) => cur = seen,
            }
        }
    }
}

enum Slots {
    /// One private buffer per logical stream, merged in stream order.
    Streams(Vec<Mutex<Vec<f64>>>),
    Shared(Vec<AtomicF64>),
}

/// Sums values per slot from many concurrent producers.
///
/// Producers identify themselves by a logical stream id. In deterministic
/// mode each stream owns a private buffer and [`Accumulator::snapshot`]
/// merges streams in id order with the fixed summation tree, so the result
/// depends only on what each stream added, not on thread scheduling. In
/// unordered mode every add goes straight to a shared atomic slot.
pub struct Accumulator {
    len: usize,
    slots: Slots,
}

impl Accumulator {
    pub fn new(len: usize, streams: usize, mode: ReductionMode) -> Self {
        let slots = match mode {
            ReductionMode::DeterministicTree => {
                Slots::Streams((0..streams.max(1)).map(|_| Mutex::new(Vec::new())).collect())
            }
            ReductionMode::Unordered => Slots::Shared((0..len).map(|_| AtomicF64::new(0.0)).collect()),
        };
        Accumulator { len, slots }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Opens stream `id` for a batch of adds.
    ///
    /// In deterministic mode a stream must not be opened from two threads
    /// at once; the second opener blocks until the first handle drops.
    pub fn stream(&self, id: usize) -> Result<AccumulatorStream<'_>> {
        let target = match &self.slots {
            Slots::Streams(bufs) => {
                let buf = bufs.get(id).ok_or(Error::IndexOutOfRange {
                    index: id,
                    len: bufs.len(),
                })?;
                let mut guard = buf.lock().unwrap_or_else(|p| p.into_inner());
                if guard.is_empty() {
                    guard.resize(self.len, 0.0);
                }
                StreamTarget::Private(guard)
            }
            Slots::Shared(cells) => StreamTarget::Shared(cells),
        };
        Ok(AccumulatorStream { target })
    }

    /// Single add through stream `stream`.
    pub fn add(&self, stream: usize, index: usize, value: f64) -> Result<()> {
        self.stream(stream)?.add(index, value)
    }

    /// Per-slot totals. Call after all producers have finished.
    pub fn snapshot(&self) -> Vec<f64> {
        match &self.slots {
            Slots::Shared(cells) => cells.iter().map(AtomicF64::load).collect(),
            Slots::Streams(bufs) => {
                let guards: Vec<MutexGuard<'_, Vec<f64>>> = bufs
                    .iter()
                    .map(|b| b.lock().unwrap_or_else(|p| p.into_inner()))
                    .collect();
                let mut column = vec![0.0; guards.len()];
                (0..self.len)
                    .map(|i| {
                        for (c, g) in column.iter_mut().zip(&guards) {
                            *c = g.get(i).copied().unwrap_or(0.0);
                        }
                        tree_sum(&column)
                    })
                    .collect()
            }
        }
    }
}

enum StreamTarget<'a> {
    Private(MutexGuard<'a, Vec<f64>>),
    Shared(&'a [AtomicF64]),
}

/// Write handle for one logical stream of an [`Accumulator`].
pub struct AccumulatorStream<'a> {
    target: StreamTarget<'a>,
}

impl AccumulatorStream<'_> {
    #[inline]
    pub fn add(&mut self, index: usize, value: f64) -> Result<()> {
        match &mut self.target {
            StreamTarget::Private(buf) => {
                let len = buf.len();
                let slot = buf.get_mut(index).ok_or(Error::IndexOutOfRange { index, len })?;
                *slot += value;
            }
            StreamTarget::Shared(cells) => {
                cells
                    .get(index)
                    .ok_or(Error::IndexOutOfRange {
                        index,
                        len: cells.len(),
                    })?
                    .add(value);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engines(deterministic: bool) -> Vec<Exec> {
        [1, 2, 4, 8]
            .into_iter()
            .map(|w| {
                Exec::new(ExecConfig {
                    workers: w,
                    deterministic,
                    chunk: 3,
                })
            })
            .collect()
    }

    #[test]
    fn empty_launch() {
        let out: Vec<usize> = Exec::default().parallel_for_groups(0, Ok).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn results_are_ordered_by_group() {
        for deterministic in [true, false] {
            for exec in engines(deterministic) {
                let out = exec.parallel_for_groups(1000, |g| Ok(g * 3)).unwrap();
                assert_eq!(out, (0..1000).map(|g| g * 3).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn failure_carries_group_id() {
        for exec in engines(true) {
            let err = exec
                .parallel_for_groups(200, |g| if g == 137 { Err(Error::invalid("boom")) } else { Ok(g) })
                .unwrap_err();
            match err {
                Error::Task { group, source } => {
                    assert_eq!(group, 137);
                    assert_eq!(*source, Error::invalid("boom"));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn reduce_examples() {
        let exec = Exec::serial();
        assert_eq!(exec.reduce(&[1.0, 2.0, 3.0, 4.0]), 10.0);
        assert_eq!(exec.reduce(&[]), 0.0);
    }

    #[test]
    fn tree_reduce_bit_identical_across_workers() {
        let mut values = vec![1e-8; 1_000_000];
        values[123_457] = 1.0;
        let expected = tree_sum(&values);
        for exec in engines(true) {
            assert_eq!(exec.reduce(&values).to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn unordered_reduce_is_close() {
        let values: Vec<f64> = (0..200_000).map(|i| (i % 7) as f64 * 0.25).collect();
        let expected: f64 = values.iter().sum();
        for exec in engines(false) {
            assert!((exec.reduce(&values) - expected).abs() <= 1e-9 * expected);
        }
    }

    #[test]
    fn accumulator_examples() {
        for mode in [ReductionMode::DeterministicTree, ReductionMode::Unordered] {
            let acc = Accumulator::new(4, 2, mode);
            assert_eq!(acc.snapshot(), vec![0.0; 4]);
            thread::scope(|s| {
                s.spawn(|| acc.add(0, 0, 1.0).unwrap());
                s.spawn(|| acc.add(1, 0, 2.0).unwrap());
            });
            assert_eq!(acc.snapshot()[0], 3.0);
            assert!(acc.add(0, 4, 1.0).is_err());
        }
        let acc = Accumulator::new(1, 2, ReductionMode::DeterministicTree);
        assert!(acc.add(2, 0, 1.0).is_err());
    }

    #[test]
    fn deterministic_accumulator_independent_of_workers() {
        let reference = {
            let exec = Exec::serial();
            let acc = exec.accumulator(5, 64);
            exec.parallel_for_groups(64, |g| {
                let mut s = acc.stream(g)?;
                for k in 0..100 {
                    s.add((g + k) % 5, 1.0 / (1.0 + (g * k) as f64))?;
                }
                Ok(())
            })
            .unwrap();
            acc.snapshot()
        };
        for exec in engines(true) {
            let acc = exec.accumulator(5, 64);
            exec.parallel_for_groups(64, |g| {
                let mut s = acc.stream(g)?;
                for k in 0..100 {
                    s.add((g + k) % 5, 1.0 / (1.0 + (g * k) as f64))?;
                }
                Ok(())
            })
            .unwrap();
            let snap = acc.snapshot();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&snap), bits(&reference));
        }
    }

    #[test]
    fn atomic_f64_add() {
        let a = AtomicF64::new(0.5);
        thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        a.add(1.0);
                    }
                });
            }
        });
        assert_eq!(a.load(), 4000.5);
    }
}
