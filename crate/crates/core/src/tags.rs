//! Time-tag streams: per-channel detection times in integer picoseconds.
//!
//! Storage is columnar. A strictly periodic channel (the pump
//! synchronization clock) is kept as a `(first, period, count)` descriptor;
//! at 160 MHz a ten-second run would otherwise hold 1.6 × 10⁹ clock records.
//! [`TagStream::records`] yields the time-ordered `(channel, time)` view,
//! ties broken by channel id.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::quantities::{TimeStamp, PS_PER_S};
use crate::{Error, Result};

pub type ChannelId = u8;

/// Channel ids of the standard map.
pub mod channel {
    use super::ChannelId;
    pub const CLOCK: ChannelId = 0;
    pub const A1: ChannelId = 1;
    pub const A2: ChannelId = 2;
    pub const B1: ChannelId = 3;
    pub const B2: ChannelId = 4;
    pub const SIG: ChannelId = 5;
    pub const IDL: ChannelId = 6;
}

/// Longest channel name storable in the binary tag format.
pub const MAX_CHANNEL_NAME: usize = 15;

/// Bijection between channel ids and names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMap {
    entries: Vec<(ChannelId, String)>,
}

impl ChannelMap {
    pub fn new(mut entries: Vec<(ChannelId, String)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::config(alloc::format!("duplicate channel id {}", w[0].0)));
            }
        }
        for (i, (_, name)) in entries.iter().enumerate() {
            if name.is_empty() || name.len() > MAX_CHANNEL_NAME || !name.is_ascii() || name.contains('\0') {
                return Err(Error::config(alloc::format!("invalid channel name {name:?}")));
            }
            if entries[..i].iter().any(|(_, n)| n == name) {
                return Err(Error::config(alloc::format!("duplicate channel name {name:?}")));
            }
        }
        Ok(ChannelMap { entries })
    }

    /// `CLOCK, A1, A2, B1, B2, SIG, IDL` with ids 0 through 6.
    pub fn standard() -> Self {
        let names = ["CLOCK", "A1", "A2", "B1", "B2", "SIG", "IDL"];
        ChannelMap { entries: names.iter().enumerate().map(|(i, n)| (i as ChannelId, n.to_string())).collect() }
    }

    pub fn id(&self, name: &str) -> Option<ChannelId> {
        self.entries.iter().find(|(_, n)| n == name).map(|e| e.0)
    }

    pub fn name(&self, id: ChannelId) -> Option<&str> {
        self.entries.iter().find(|e| e.0 == id).map(|e| e.1.as_str())
    }

    pub fn contains(&self, id: ChannelId) -> bool {
        self.entries.iter().any(|e| e.0 == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ChannelId, &str)> {
        self.entries.iter().map(|(i, n)| (*i, n.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Random-access view of one sorted channel.
pub trait Timeline {
    fn len(&self) -> usize;
    /// Time of the `i`-th tag in picoseconds.
    fn at(&self, i: usize) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first tag at or after `t`.
    fn lower_bound(&self, t: u64) -> usize {
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.at(mid) < t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

impl Timeline for [u64] {
    fn len(&self) -> usize {
        <[u64]>::len(self)
    }

    #[inline]
    fn at(&self, i: usize) -> u64 {
        self[i]
    }
}

impl Timeline for Vec<u64> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    #[inline]
    fn at(&self, i: usize) -> u64 {
        self[i]
    }
}

/// Tags of one channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tags {
    Events(Vec<u64>),
    Periodic { first: u64, period: u64, count: u64 },
}

impl Default for Tags {
    fn default() -> Self {
        Tags::Events(Vec::new())
    }
}

impl Tags {
    /// Smallest spacing between consecutive tags, if there are at least two.
    pub fn min_spacing(&self) -> Option<u64> {
        match self {
            Tags::Events(v) => v.windows(2).map(|w| w[1] - w[0]).min(),
            Tags::Periodic { period, count, .. } => (*count >= 2).then_some(*period),
        }
    }

    pub fn first_unsorted(&self) -> Option<usize> {
        match self {
            Tags::Events(v) => v.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1),
            Tags::Periodic { .. } => None,
        }
    }

    /// Expands a periodic descriptor into explicit events.
    pub fn to_events(&self) -> Vec<u64> {
        (0..self.len()).map(|i| self.at(i)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len()).map(move |i| self.at(i))
    }
}

impl Timeline for Tags {
    fn len(&self) -> usize {
        match self {
            Tags::Events(v) => v.len(),
            Tags::Periodic { count, .. } => *count as usize,
        }
    }

    #[inline]
    fn at(&self, i: usize) -> u64 {
        match self {
            Tags::Events(v) => v[i],
            Tags::Periodic { first, period, .. } => first + period * i as u64,
        }
    }

    fn lower_bound(&self, t: u64) -> usize {
        match self {
            Tags::Events(v) => v.partition_point(|&x| x < t),
            Tags::Periodic { first, period, count } => {
                if t <= *first {
                    0
                } else {
                    let k = (t - first).div_ceil(*period);
                    k.min(*count) as usize
                }
            }
        }
    }
}

/// A multi-channel detection record with its channel map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    map: ChannelMap,
    channels: Vec<Tags>,
    /// Length of the acquisition in picoseconds.
    duration_ps: u64,
}

impl TagStream {
    /// Empty stream with one (empty) channel per map entry.
    pub fn new(map: ChannelMap, duration_ps: u64) -> Self {
        let channels = (0..map.len()).map(|_| Tags::default()).collect();
        TagStream { map, channels, duration_ps }
    }

    /// Builds a stream from `(channel, time)` records.
    ///
    /// Records are bucketed per channel in input order; no sorting is done,
    /// so out-of-order input is reported by [`TagStream::check_sorted`].
    /// The duration is taken as one picosecond past the last record.
    pub fn from_records<I>(map: ChannelMap, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ChannelId, TimeStamp)>,
    {
        let mut stream = TagStream::new(map, 0);
        let mut last = None;
        for (ch, t) in records {
            let slot = stream.slot(ch).ok_or_else(|| Error::config(alloc::format!("undeclared channel id {ch}")))?;
            match &mut stream.channels[slot] {
                Tags::Events(v) => v.push(t.0),
                Tags::Periodic { .. } => unreachable!("fresh streams hold events"),
            }
            last = Some(last.map_or(t.0, |l: u64| l.max(t.0)));
        }
        stream.duration_ps = last.map_or(0, |l| l + 1);
        Ok(stream)
    }

    fn slot(&self, id: ChannelId) -> Option<usize> {
        self.map.iter().position(|(i, _)| i == id)
    }

    pub fn map(&self) -> &ChannelMap {
        &self.map
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S
    }

    pub fn set_duration_ps(&mut self, duration_ps: u64) {
        self.duration_ps = duration_ps;
    }

    pub fn channel(&self, id: ChannelId) -> Option<&Tags> {
        self.slot(id).map(|s| &self.channels[s])
    }

    /// Channel lookup that reports undeclared ids as configuration errors.
    pub fn require(&self, id: ChannelId) -> Result<&Tags> {
        self.channel(id).ok_or_else(|| Error::config(alloc::format!("channel id {id} not in stream")))
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&Tags> {
        self.map.id(name).and_then(|id| self.channel(id))
    }

    pub fn set_channel(&mut self, id: ChannelId, tags: Tags) -> Result<()> {
        let slot = self.slot(id).ok_or_else(|| Error::config(alloc::format!("undeclared channel id {id}")))?;
        self.channels[slot] = tags;
        Ok(())
    }

    /// Total number of records over all channels.
    pub fn len(&self) -> usize {
        self.channels.iter().map(Timeline::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_sorted(&self) -> Result<()> {
        for ((id, _), tags) in self.map.iter().zip(&self.channels) {
            if let Some(index) = tags.first_unsorted() {
                return Err(Error::Unsorted { channel: id, index });
            }
        }
        Ok(())
    }

    /// Time-ordered records; equal times come out in channel-id order.
    pub fn records(&self) -> Records<'_> {
        Records { stream: self, cursors: alloc::vec![0; self.channels.len()] }
    }
}

/// Iterator returned by [`TagStream::records`].
pub struct Records<'a> {
    stream: &'a TagStream,
    cursors: Vec<usize>,
}

impl Iterator for Records<'_> {
    type Item = (ChannelId, TimeStamp);

    fn next(&mut self) -> Option<Self::Item> {
        let mut best: Option<(u64, ChannelId, usize)> = None;
        // map entries are sorted by id, so strict < keeps the lowest id on ties
        for (slot, ((id, _), tags)) in self.stream.map.iter().zip(&self.stream.channels).enumerate() {
            let c = self.cursors[slot];
            if c < tags.len() {
                let t = tags.at(c);
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, id, slot));
                }
            }
        }
        let (t, id, slot) = best?;
        self.cursors[slot] += 1;
        Some((id, TimeStamp(t)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left: usize = self
            .stream
            .channels
            .iter()
            .zip(&self.cursors)
            .map(|(t, &c)| t.len() - c)
            .sum();
        (left, Some(left))
    }
}

impl ExactSizeIterator for Records<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn periodic_lower_bound_matches_expansion() {
        let p = Tags::Periodic { first: 100, period: 6250, count: 50 };
        let ev = Tags::Events(p.to_events());
        for t in [0, 99, 100, 101, 6350, 6351, 400_000, 1_000_000] {
            assert_eq!(p.lower_bound(t), ev.lower_bound(t), "t = {t}");
        }
    }

    #[test]
    fn records_merge_in_time_then_channel_order() {
        let map = ChannelMap::standard();
        let mut s = TagStream::new(map, 100);
        s.set_channel(channel::CLOCK, Tags::Periodic { first: 0, period: 10, count: 3 }).unwrap();
        s.set_channel(channel::A1, Tags::Events(vec![0, 15])).unwrap();
        s.set_channel(channel::B1, Tags::Events(vec![10])).unwrap();
        let recs: Vec<_> = s.records().map(|(c, t)| (c, t.0)).collect();
        assert_eq!(recs, vec![(0, 0), (1, 0), (0, 10), (3, 10), (1, 15), (0, 20)]);
        assert_eq!(s.records().len(), 6);
    }

    #[test]
    fn from_records_flags_unsorted_channels() {
        let recs = [(1u8, TimeStamp(5)), (1, TimeStamp(3))];
        let s = TagStream::from_records(ChannelMap::standard(), recs).unwrap();
        assert_eq!(s.check_sorted(), Err(Error::Unsorted { channel: 1, index: 1 }));
        assert!(TagStream::from_records(ChannelMap::standard(), [(9u8, TimeStamp(0))]).is_err());
    }

    #[test]
    fn channel_map_validation() {
        assert!(ChannelMap::new(vec![(0, "A".into()), (0, "B".into())]).is_err());
        assert!(ChannelMap::new(vec![(0, "A".into()), (1, "A".into())]).is_err());
        assert!(ChannelMap::new(vec![(0, "THIS_NAME_IS_TOO_LONG".into())]).is_err());
        let m = ChannelMap::standard();
        assert_eq!(m.id("IDL"), Some(channel::IDL));
        assert_eq!(m.name(channel::B2), Some("B2"));
    }
}
