//! Rayon drivers for the embarrassingly parallel parts of the pipeline.
//!
//! Every driver returns exactly what its serial counterpart in `qtb-core`
//! returns: simulation segments and Monte Carlo trials carry their own
//! generator streams and are aggregated by index, and counting splits the
//! reference channel into disjoint index ranges whose counts add up.

use qtb_core::coincidence::{count_triples, histogram_delays, Gate, Histogram};
use qtb_core::simulator::{Simulation, SimulationInfo};
use qtb_core::tags::{TagStream, Timeline};
use qtb_core::tomography::{monte_carlo_trial, summarize_trials, MeasurementRecord, MonteCarloSummary};
use qtb_core::{Result, C64};
use qtb_core::nalgebra::Vector4;
use rayon::prelude::*;

/// Thread pool capped at `threads` workers; `None` or 0 uses all cores.
pub fn pool(threads: Option<usize>) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .expect("thread pool")
}

pub fn simulate(sim: &Simulation, pool: &rayon::ThreadPool) -> Result<(TagStream, SimulationInfo)> {
    let segments = pool.install(|| (0..sim.segment_count()).into_par_iter().map(|i| sim.simulate_segment(i)).collect());
    sim.merge(segments)
}

pub fn monte_carlo(
    records: &[MeasurementRecord],
    target: &Vector4<C64>,
    trials: usize,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<MonteCarloSummary> {
    if trials < 2 {
        return Err(qtb_core::Error::Domain("Monte Carlo needs at least two trials".into()));
    }
    qtb_core::tomography::complete_set(records)?;
    let values = pool.install(|| {
        (0..trials as u64)
            .into_par_iter()
            .map(|t| monte_carlo_trial(records, target, seed, t))
            .collect::<Result<Vec<_>>>()
    })?;
    summarize_trials(values)
}

/// Contiguous index range of a timeline.
struct Window<'a, T: ?Sized> {
    inner: &'a T,
    start: usize,
    len: usize,
}

impl<T: Timeline + ?Sized> Timeline for Window<'_, T> {
    fn len(&self) -> usize {
        self.len
    }

    #[inline]
    fn at(&self, i: usize) -> u64 {
        self.inner.at(self.start + i)
    }

    fn lower_bound(&self, t: u64) -> usize {
        self.inner.lower_bound(t).clamp(self.start, self.start + self.len) - self.start
    }
}

fn chunks(n: usize, pool: &rayon::ThreadPool) -> Vec<(usize, usize)> {
    let parts = (pool.current_num_threads() * 4).clamp(1, n.max(1));
    let step = n.div_ceil(parts).max(1);
    (0..n).step_by(step).map(|s| (s, step.min(n - s))).collect()
}

/// [`histogram_delays`] with `a` split across workers.
pub fn histogram<A, B>(a: &A, b: &B, bin_width_ps: u64, half_range_ps: u64, pool: &rayon::ThreadPool) -> Result<Histogram>
where
    A: Timeline + Sync + ?Sized,
    B: Timeline + Sync + ?Sized,
{
    let parts = chunks(a.len(), pool);
    let partial = pool.install(|| {
        parts
            .par_iter()
            .map(|&(start, len)| histogram_delays(&Window { inner: a, start, len }, b, bin_width_ps, half_range_ps))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut total = histogram_delays(&[][..], &[][..], bin_width_ps, half_range_ps)?;
    for h in partial {
        for (t, c) in total.counts.iter_mut().zip(h.counts) {
            *t += c;
        }
    }
    Ok(total)
}

/// [`count_triples`] with the clock split across workers.
pub fn triples<C, A, B>(clock: &C, a: &A, b: &B, gate_a: Gate, gate_b: Gate, pool: &rayon::ThreadPool) -> u64
where
    C: Timeline + Sync + ?Sized,
    A: Timeline + Sync + ?Sized,
    B: Timeline + Sync + ?Sized,
{
    let parts = chunks(clock.len(), pool);
    if clock.is_empty() {
        return 0;
    }
    pool.install(|| {
        parts
            .par_iter()
            .map(|&(start, len)| {
                let c = Window { inner: clock, start, len };
                // tags before the first gate of this chunk can match no later gate
                let first = clock.at(start);
                let a0 = a.lower_bound(gate_a.bounds(first).0.max(0) as u64);
                let b0 = b.lower_bound(gate_b.bounds(first).0.max(0) as u64);
                count_triples(
                    &c,
                    &Window { inner: a, start: a0, len: a.len() - a0 },
                    &Window { inner: b, start: b0, len: b.len() - b0 },
                    gate_a,
                    gate_b,
                )
            })
            .sum()
    })
}
