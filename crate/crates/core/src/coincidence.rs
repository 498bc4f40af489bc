//! Counting engine over time-tag streams.
//!
//! All sweeps are single-pass sort-merge over sorted channels:
//!
//! - delay histograms count every pair within range (g²-style),
//! - two-fold coincidences use greedy one-to-one earliest matching, so each
//!   tag contributes to at most one event,
//! - three-fold coincidences count clock tags whose two gates both fire.
//!
//! Windows and gates are closed intervals evaluated in integer picoseconds.

use alloc::vec;
use alloc::vec::Vec;

use crate::quantities::{seconds_to_ps, PS_PER_S};
use crate::tags::{ChannelId, TagStream, Timeline};
use crate::{Error, Result};

/// Uniform-bin counts over a delay or time axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bin_width_ps: u64,
    /// Center of bin 0.
    pub first_center_ps: i64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_width_ps: u64, first_center_ps: i64, counts: Vec<u64>) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::domain("bin width must be positive"));
        }
        Ok(Histogram { bin_width_ps, first_center_ps, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_ps as f64 / PS_PER_S
    }

    /// Left edge of bin 0, seconds.
    pub fn origin_s(&self) -> f64 {
        (self.first_center_ps as f64 - 0.5 * self.bin_width_ps as f64) / PS_PER_S
    }

    pub fn center_ps(&self, i: usize) -> i64 {
        self.first_center_ps + self.bin_width_ps as i64 * i as i64
    }

    pub fn center_s(&self, i: usize) -> f64 {
        self.center_ps(i) as f64 / PS_PER_S
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin order reversed and the axis mirrored about zero.
    pub fn reversed(&self) -> Histogram {
        let mut counts = self.counts.clone();
        counts.reverse();
        let last = self.center_ps(self.len().saturating_sub(1));
        Histogram { bin_width_ps: self.bin_width_ps, first_center_ps: -last, counts }
    }
}

/// Delay bin for `delay` on a grid of centers `k·width`, ties rounded
/// toward zero so the binning is mirror symmetric.
#[inline]
pub fn delay_bin(delay: i64, width: u64) -> i64 {
    let mag = delay.unsigned_abs();
    let q = mag / width;
    let r = mag % width;
    let k = if 2 * r > width { q + 1 } else { q } as i64;
    if delay < 0 {
        -k
    } else {
        k
    }
}

/// All-pairs histogram of `t_a − t_b`.
///
/// Bins are centered on multiples of `bin_width_ps` from `−K` to `+K` with
/// `K = round(half_range_ps / bin_width_ps)`; a pair is counted when its
/// delay falls in one of those bins.
pub fn histogram_delays<A, B>(a: &A, b: &B, bin_width_ps: u64, half_range_ps: u64) -> Result<Histogram>
where
    A: Timeline + ?Sized,
    B: Timeline + ?Sized,
{
    if bin_width_ps == 0 {
        return Err(Error::domain("bin width must be positive"));
    }
    let k_max = ((half_range_ps + bin_width_ps / 2) / bin_width_ps) as i64;
    let nbins = (2 * k_max + 1) as usize;
    let mut counts = vec![0u64; nbins];
    // largest |Δ| that can land inside bin ±K
    let reach = k_max as u64 * bin_width_ps + bin_width_ps / 2;

    let mut lo = 0usize;
    for i in 0..a.len() {
        let ta = a.at(i);
        while lo < b.len() && b.at(lo).saturating_add(reach) < ta {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() {
            let tb = b.at(j);
            if tb > ta.saturating_add(reach) {
                break;
            }
            let k = delay_bin(ta as i64 - tb as i64, bin_width_ps);
            if k.abs() <= k_max {
                counts[(k + k_max) as usize] += 1;
            }
            j += 1;
        }
    }
    Histogram::new(bin_width_ps, -k_max * bin_width_ps as i64, counts)
}

/// Greedy earliest-match count of pairs with
/// `t_b − t_a − offset ∈ [−window/2, +window/2]`.
///
/// Windows of equal length make earliest matching a maximum matching, so
/// the count never decreases when the window grows.
pub fn match_pairs<A, B>(a: &A, b: &B, window_ps: u64, offset_ps: i64) -> u64
where
    A: Timeline + ?Sized,
    B: Timeline + ?Sized,
{
    let half = (window_ps / 2) as i64;
    let mut j = 0usize;
    let mut count = 0u64;
    for i in 0..a.len() {
        if j >= b.len() {
            break;
        }
        let center = a.at(i) as i64 + offset_ps;
        let (lo, hi) = (center - half, center + half);
        while j < b.len() && (b.at(j) as i64) < lo {
            j += 1;
        }
        if j < b.len() && b.at(j) as i64 <= hi {
            count += 1;
            j += 1;
        }
    }
    count
}

/// Counting gate placed relative to a reference (clock) tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gate {
    /// Gate center relative to the reference tag.
    pub offset_ps: i64,
    pub width_ps: u64,
}

impl Gate {
    pub fn new(offset_ps: i64, width_ps: u64) -> Result<Self> {
        if width_ps == 0 {
            return Err(Error::domain("gate width must be positive"));
        }
        Ok(Gate { offset_ps, width_ps })
    }

    pub fn from_seconds(offset: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::domain("gate width must be positive"));
        }
        Gate::new(seconds_to_ps(offset), seconds_to_ps(width) as u64)
    }

    /// Closed tag-time interval of this gate for a reference at `reference`.
    #[inline]
    pub fn bounds(&self, reference: u64) -> (i64, i64) {
        let c = reference as i64 + self.offset_ps;
        let h = (self.width_ps / 2) as i64;
        (c - h, c + h)
    }
}

/// Number of reference tags for which both gates contain at least one tag.
pub fn count_triples<C, A, B>(clock: &C, a: &A, b: &B, gate_a: Gate, gate_b: Gate) -> u64
where
    C: Timeline + ?Sized,
    A: Timeline + ?Sized,
    B: Timeline + ?Sized,
{
    // first clock tag whose gate can still reach a tag at `t`
    let next_clock = |t: u64, g: Gate, k: usize| {
        let lo = t as i64 - g.offset_ps - (g.width_ps / 2) as i64;
        clock.lower_bound(lo.max(0) as u64).max(k + 1)
    };
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut count = 0;
    let mut k = 0;
    while k < clock.len() {
        let c = clock.at(k);
        let (alo, ahi) = gate_a.bounds(c);
        while ia < a.len() && (a.at(ia) as i64) < alo {
            ia += 1;
        }
        if ia >= a.len() {
            break;
        }
        if a.at(ia) as i64 > ahi {
            k = next_clock(a.at(ia), gate_a, k);
            continue;
        }
        let (blo, bhi) = gate_b.bounds(c);
        while ib < b.len() && (b.at(ib) as i64) < blo {
            ib += 1;
        }
        if ib >= b.len() {
            break;
        }
        if b.at(ib) as i64 <= bhi {
            count += 1;
            k += 1;
        } else {
            k = next_clock(b.at(ib), gate_b, k);
        }
    }
    count
}

/// Outcome of a coincidence count over a stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceResult {
    pub count: u64,
    /// Count divided by the analyzed duration, s⁻¹.
    pub rate: f64,
    pub window_s: f64,
    pub offset_s: f64,
    pub duration_s: f64,
}

impl CoincidenceResult {
    fn new(count: u64, window_ps: u64, offset_ps: i64, duration_s: f64) -> Self {
        let rate = if duration_s > 0.0 { count as f64 / duration_s } else { 0.0 };
        CoincidenceResult {
            count,
            rate,
            window_s: window_ps as f64 / PS_PER_S,
            offset_s: offset_ps as f64 / PS_PER_S,
            duration_s,
        }
    }
}

fn sorted_channel(stream: &TagStream, id: ChannelId) -> Result<&crate::tags::Tags> {
    let tags = stream.require(id)?;
    if let Some(index) = tags.first_unsorted() {
        return Err(Error::Unsorted { channel: id, index });
    }
    Ok(tags)
}

/// Delay histogram `t_a − t_b` between two channels of a stream.
pub fn delay_histogram(
    stream: &TagStream,
    a: ChannelId,
    b: ChannelId,
    bin_width_ps: u64,
    half_range_ps: u64,
) -> Result<Histogram> {
    histogram_delays(sorted_channel(stream, a)?, sorted_channel(stream, b)?, bin_width_ps, half_range_ps)
}

/// Two-fold coincidences between channels `a` and `b`.
pub fn count_coincidences(
    stream: &TagStream,
    a: ChannelId,
    b: ChannelId,
    window_ps: u64,
    offset_ps: i64,
) -> Result<CoincidenceResult> {
    if window_ps == 0 {
        return Err(Error::domain("coincidence window must be positive"));
    }
    let n = match_pairs(sorted_channel(stream, a)?, sorted_channel(stream, b)?, window_ps, offset_ps);
    Ok(CoincidenceResult::new(n, window_ps, offset_ps, stream.duration_s()))
}

/// Accidental coincidences estimated with the window shifted by
/// `periods` whole pump periods.
pub fn count_accidentals(
    stream: &TagStream,
    a: ChannelId,
    b: ChannelId,
    window_ps: u64,
    offset_ps: i64,
    period_ps: u64,
    periods: i64,
) -> Result<CoincidenceResult> {
    count_coincidences(stream, a, b, window_ps, offset_ps + periods * period_ps as i64)
}

/// Clock-gated three-fold coincidences.
pub fn triple_coincidences(
    stream: &TagStream,
    clock: ChannelId,
    a: ChannelId,
    b: ChannelId,
    gate_a: Gate,
    gate_b: Gate,
) -> Result<CoincidenceResult> {
    let clock_tags = sorted_channel(stream, clock)?;
    if let Some(spacing) = clock_tags.min_spacing() {
        if gate_a.width_ps > spacing || gate_b.width_ps > spacing {
            return Err(Error::config("gate wider than the clock period"));
        }
    }
    let n = count_triples(clock_tags, sorted_channel(stream, a)?, sorted_channel(stream, b)?, gate_a, gate_b);
    let mut r = CoincidenceResult::new(n, gate_a.width_ps.max(gate_b.width_ps), gate_a.offset_ps, stream.duration_s());
    r.offset_s = gate_a.offset_ps as f64 / PS_PER_S;
    Ok(r)
}

/// A peak reported by [`find_peaks`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    pub center_s: f64,
    /// Smoothed height at the peak.
    pub height: f64,
    pub prominence: f64,
    /// Raw counts summed over bins within ±separation/2 of the center.
    pub area: u64,
}

/// Local maxima of the 3-bin moving average, filtered by prominence and
/// thinned to `min_separation_ps` (higher peaks win).
pub fn find_peaks(h: &Histogram, min_separation_ps: u64, min_prominence: f64) -> Vec<Peak> {
    let n = h.len();
    if n < 3 {
        return Vec::new();
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let s: u64 = h.counts[lo..=hi].iter().sum();
            s as f64 / (hi - lo + 1) as f64
        })
        .collect();

    let mut maxima = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if smooth[i - 1] < smooth[i] {
            let mut j = i;
            while j + 1 < n && smooth[j + 1] == smooth[i] {
                j += 1;
            }
            if j + 1 < n && smooth[j + 1] < smooth[i] {
                maxima.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let prominence = |p: usize| -> f64 {
        let top = smooth[p];
        let mut left_min = top;
        for k in (0..p).rev() {
            if smooth[k] > top {
                break;
            }
            left_min = left_min.min(smooth[k]);
        }
        let mut right_min = top;
        for &v in &smooth[p + 1..] {
            if v > top {
                break;
            }
            right_min = right_min.min(v);
        }
        top - left_min.max(right_min)
    };

    let mut candidates: Vec<(usize, f64)> = maxima
        .into_iter()
        .map(|p| (p, prominence(p)))
        .filter(|&(_, pr)| pr >= min_prominence && pr > 0.0)
        .collect();
    candidates.sort_by(|x, y| smooth[y.0].total_cmp(&smooth[x.0]).then(x.0.cmp(&y.0)));

    let sep_bins = min_separation_ps / h.bin_width_ps;
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| (k.0 as i64 - c.0 as i64).unsigned_abs() >= sep_bins.max(1)) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|k| k.0);

    let half = (min_separation_ps / 2) as i64;
    kept.into_iter()
        .map(|(p, pr)| {
            let c = h.center_ps(p);
            let area = (0..n)
                .filter(|&k| (h.center_ps(k) - c).abs() <= half)
                .map(|k| h.counts[k])
                .sum();
            Peak { bin: p, center_s: h.center_s(p), height: smooth[p], prominence: pr, area }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::TimeStamp;
    use crate::tags::{channel, ChannelMap, Tags};

    fn stream(a: &[u64], b: &[u64]) -> TagStream {
        let mut s = TagStream::new(ChannelMap::standard(), 100_000_000);
        s.set_channel(channel::A1, Tags::Events(a.to_vec())).unwrap();
        s.set_channel(channel::B1, Tags::Events(b.to_vec())).unwrap();
        s
    }

    #[test]
    fn coincident_zero_delay_lands_in_center_bin() {
        let h = histogram_delays(&[0u64][..], &[0u64][..], 1, 10).unwrap();
        assert_eq!(h.total(), 1);
        let k = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.center_ps(k), 0);
    }

    #[test]
    fn hand_enumerated_delay() {
        let h = histogram_delays(&[0u64, 10_000][..], &[1_000u64][..], 100, 2_000).unwrap();
        assert_eq!(h.total(), 1);
        let k = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.center_ps(k), -1_000);
        assert_eq!(h.len(), 41);
        assert!((h.origin_s() + 2.05e-9).abs() < 1e-18);
    }

    #[test]
    fn tie_rounding_is_symmetric() {
        assert_eq!(delay_bin(50, 100), 0);
        assert_eq!(delay_bin(-50, 100), 0);
        assert_eq!(delay_bin(51, 100), 1);
        assert_eq!(delay_bin(-151, 100), -2);
    }

    #[test]
    fn identical_streams_match_one_to_one() {
        let t: Vec<u64> = (0..1000).map(|i| i * 6250 + (i * 37) % 400).collect();
        let s = stream(&t, &t);
        let r = count_coincidences(&s, channel::A1, channel::B1, 1000, 0).unwrap();
        assert_eq!(r.count, 1000);
        assert!((r.rate - 1000.0 / 1e-4).abs() < 1e-6);
        let acc = count_accidentals(&s, channel::A1, channel::B1, 1000, 0, 6250, 1).unwrap();
        assert!(acc.count < 1000);
    }

    #[test]
    fn one_period_shift_on_true_pairs_finds_nothing() {
        let a: Vec<u64> = (0..500).map(|i| i * 6250 * 3 + 100).collect();
        let b: Vec<u64> = a.iter().map(|t| t + 150).collect();
        let s = stream(&a, &b);
        assert_eq!(count_coincidences(&s, channel::A1, channel::B1, 1000, 0).unwrap().count, 500);
        assert_eq!(count_accidentals(&s, channel::A1, channel::B1, 1000, 0, 6250, 1).unwrap().count, 0);
    }

    #[test]
    fn zero_window_is_rejected() {
        let s = stream(&[0], &[0]);
        assert!(matches!(count_coincidences(&s, channel::A1, channel::B1, 0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn unsorted_channel_is_a_precondition_error() {
        let s = stream(&[5, 1], &[0]);
        assert!(matches!(
            count_coincidences(&s, channel::A1, channel::B1, 10, 0),
            Err(Error::Unsorted { channel: channel::A1, index: 1 })
        ));
    }

    #[test]
    fn triple_coincidence_examples() {
        let mut s = stream(&[5_000], &[5_000]);
        s.set_channel(channel::CLOCK, Tags::Events(vec![0])).unwrap();
        let g = Gate::from_seconds(5e-9, 1e-9).unwrap();
        let r = triple_coincidences(&s, channel::CLOCK, channel::A1, channel::B1, g, g).unwrap();
        assert_eq!(r.count, 1);
        let mut empty = stream(&[], &[5_000]);
        empty.set_channel(channel::CLOCK, Tags::Events(vec![0])).unwrap();
        assert_eq!(triple_coincidences(&empty, channel::CLOCK, channel::A1, channel::B1, g, g).unwrap().count, 0);
    }

    #[test]
    fn gates_wider_than_the_clock_period_are_rejected() {
        let mut s = stream(&[100], &[100]);
        s.set_channel(channel::CLOCK, Tags::Periodic { first: 0, period: 6250, count: 10 }).unwrap();
        let wide = Gate::new(1000, 7000).unwrap();
        assert!(matches!(
            triple_coincidences(&s, channel::CLOCK, channel::A1, channel::B1, wide, wide),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn periodic_clock_matches_explicit_clock() {
        let a: Vec<u64> = (0..200).map(|i| i * 6250 * 2 + 1250 + (i % 7) * 30).collect();
        let b: Vec<u64> = (0..200).map(|i| i * 6250 * 3 + 1300).collect();
        let periodic = Tags::Periodic { first: 0, period: 6250, count: 2000 };
        let explicit = periodic.to_events();
        let g = Gate::new(1400, 1000).unwrap();
        assert_eq!(count_triples(&periodic, &a, &b, g, g), count_triples(&explicit, &a, &b, g, g));
        assert!(count_triples(&periodic, &a, &b, g, g) > 0);
    }

    #[test]
    fn peaks_of_a_delta_and_of_a_flat_histogram() {
        let mut counts = vec![0u64; 21];
        counts[7] = 100;
        let h = Histogram::new(10, -100, counts).unwrap();
        let p = find_peaks(&h, 30, 1.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].bin, 7);
        assert_eq!(p[0].area, 100);
        let flat = Histogram::new(10, -100, vec![5; 21]).unwrap();
        assert!(find_peaks(&flat, 30, 0.0).is_empty());
    }

    #[test]
    fn from_records_round_trip_counts() {
        let recs = [(channel::A1, TimeStamp(10)), (channel::B1, TimeStamp(12))];
        let s = TagStream::from_records(ChannelMap::standard(), recs).unwrap();
        assert_eq!(count_coincidences(&s, channel::A1, channel::B1, 10, 0).unwrap().count, 1);
        assert_eq!(s.duration_ps(), 13);
    }
}
