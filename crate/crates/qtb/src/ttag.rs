//! Tag-stream files.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "TTAG"  u16 version (1)  u16 channel count
//! count × { u8 id, 15 bytes ASCII name, zero padded }
//! records × { u8 channel id, u64 time in ps }, time ordered
//! ```
//!
//! Ties are written in channel-id order. The format stores no duration;
//! readers take the end of the last CLOCK period or one picosecond past
//! the last record, whichever is later. A strictly periodic `CLOCK`
//! channel is read back into the compact periodic representation.
//!
//! Input also accepts tab-separated `channel<TAB>time_ps` lines, where the
//! channel is a name or a numeric id; `#` starts a comment line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use qtb_core::tags::{ChannelId, ChannelMap, TagStream, Tags, MAX_CHANNEL_NAME};

use crate::error::{QtbError, Result};

pub const MAGIC: &[u8; 4] = b"TTAG";
pub const VERSION: u16 = 1;

/// Writes `stream` in the binary format.
pub fn write_ttag<W: Write>(stream: &TagStream, out: W) -> io::Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, out);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let n = u16::try_from(stream.map().len()).map_err(|_| io::Error::other("too many channels"))?;
    w.write_all(&n.to_le_bytes())?;
    for (id, name) in stream.map().iter() {
        let mut entry = [0u8; 1 + MAX_CHANNEL_NAME];
        entry[0] = id;
        entry[1..1 + name.len()].copy_from_slice(name.as_bytes());
        w.write_all(&entry)?;
    }
    let mut rec = [0u8; 9];
    for (id, t) in stream.records() {
        rec[0] = id;
        rec[1..].copy_from_slice(&t.0.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()
}

pub fn write_ttag_file(stream: &TagStream, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| QtbError::io(path, e))?;
    write_ttag(stream, f).map_err(|e| QtbError::io(path, e))
}

/// Per-channel accumulator that stays periodic while it can.
enum Builder {
    Periodic { first: u64, period: u64, count: u64 },
    Events(Vec<u64>),
}

impl Builder {
    fn new(periodic: bool) -> Self {
        if periodic {
            Builder::Periodic { first: 0, period: 0, count: 0 }
        } else {
            Builder::Events(Vec::new())
        }
    }

    fn push(&mut self, t: u64) {
        match self {
            Builder::Periodic { first, period, count } => match *count {
                0 => {
                    *first = t;
                    *count = 1;
                }
                1 if t > *first => {
                    *period = t - *first;
                    *count = 2;
                }
                c if c >= 2 && t == *first + *period * c => *count += 1,
                c => {
                    let mut v: Vec<u64> = (0..c).map(|k| *first + *period * k).collect();
                    v.push(t);
                    *self = Builder::Events(v);
                }
            },
            Builder::Events(v) => v.push(t),
        }
    }

    fn finish(self) -> Tags {
        match self {
            Builder::Periodic { first, period, count } if count >= 2 => Tags::Periodic { first, period, count },
            Builder::Periodic { first, count, .. } => Tags::Events((0..count).map(|_| first).collect()),
            Builder::Events(v) => Tags::Events(v),
        }
    }
}

struct StreamBuilder {
    map: ChannelMap,
    slots: Vec<Option<usize>>,
    builders: Vec<Builder>,
    last: Option<u64>,
}

impl StreamBuilder {
    fn new(map: ChannelMap) -> Self {
        let mut slots = vec![None; 256];
        let mut builders = Vec::new();
        for (i, (id, name)) in map.iter().enumerate() {
            slots[id as usize] = Some(i);
            builders.push(Builder::new(name == "CLOCK"));
        }
        StreamBuilder { map, slots, builders, last: None }
    }

    fn push(&mut self, id: ChannelId, t: u64) -> std::result::Result<(), String> {
        let slot = self.slots[id as usize].ok_or_else(|| format!("channel id {id} is not declared"))?;
        if let Some(l) = self.last {
            if t < l {
                return Err(format!("time {t} ps precedes the previous record at {l} ps"));
            }
        }
        self.last = Some(t);
        self.builders[slot].push(t);
        Ok(())
    }

    fn finish(self) -> Result<TagStream> {
        let mut duration = self.last.map_or(0, |l| l + 1);
        let ids: Vec<ChannelId> = self.map.iter().map(|e| e.0).collect();
        let mut stream = TagStream::new(self.map, 0);
        for (id, b) in ids.into_iter().zip(self.builders) {
            let tags = b.finish();
            if let Tags::Periodic { first, period, count } = tags {
                duration = duration.max(first + period * count);
            }
            stream.set_channel(id, tags).expect("declared channel");
        }
        stream.set_duration_ps(duration);
        Ok(stream)
    }
}

/// Reads the binary format.
pub fn read_ttag<R: Read>(input: R, label: &str) -> Result<TagStream> {
    let mut r = BufReader::with_capacity(1 << 20, input);
    let bad = |msg: &str| QtbError::format(label, 0, msg);
    let mut head = [0u8; 8];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(bad("missing TTAG magic"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u16::from_le_bytes([head[6], head[7]]) as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let mut e = [0u8; 1 + MAX_CHANNEL_NAME];
        r.read_exact(&mut e).map_err(|_| bad("truncated channel map"))?;
        let end = e[1..].iter().position(|&b| b == 0).map_or(MAX_CHANNEL_NAME, |p| p);
        if e[1 + end..].iter().any(|&b| b != 0) {
            return Err(bad("channel name is not zero padded"));
        }
        let name = std::str::from_utf8(&e[1..1 + end])
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| bad("channel name is not ASCII"))?;
        entries.push((e[0], name.to_string()));
    }
    let map = ChannelMap::new(entries).map_err(|e| bad(&e.to_string()))?;
    let mut builder = StreamBuilder::new(map);
    let mut rec = [0u8; 9];
    let mut index = 0u64;
    loop {
        match read_record(&mut r, &mut rec) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(QtbError::format(label, index, e.to_string())),
        }
        let t = u64::from_le_bytes(rec[1..].try_into().expect("8 bytes"));
        builder.push(rec[0], t).map_err(|m| QtbError::format(label, index, format!("record {index}: {m}")))?;
        index += 1;
    }
    builder.finish()
}

/// Fills `rec`; `Ok(false)` on a clean end of input.
fn read_record<R: BufRead>(r: &mut R, rec: &mut [u8; 9]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < rec.len() {
        match r.read(&mut rec[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated record")),
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Reads `channel<TAB>time_ps` lines.
///
/// Standard channel names keep their standard ids; other names get the
/// next free id from 7 upward in order of first appearance. Numeric
/// channels use the standard name where one exists and `CH<id>` otherwise.
pub fn read_tsv<R: Read>(input: R, label: &str) -> Result<TagStream> {
    let standard = ChannelMap::standard();
    let mut names: Vec<(ChannelId, String)> = Vec::new();
    let mut records: Vec<(ChannelId, u64)> = Vec::new();
    let mut next_id: u16 = 7;
    for (lineno, line) in BufReader::new(input).lines().enumerate() {
        let lineno = lineno as u64 + 1;
        let line = line.map_err(|e| QtbError::format(label, lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(ch), Some(t), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(QtbError::format(label, lineno, "expected `channel<TAB>time_ps`"));
        };
        let (ch, t) = (ch.trim(), t.trim());
        if lineno == 1 && t == "time_ps" {
            continue;
        }
        let time: u64 = t
            .parse()
            .map_err(|_| QtbError::format(label, lineno, format!("invalid time {t:?}")))?;
        let id = if let Ok(id) = ch.parse::<ChannelId>() {
            if !names.iter().any(|e| e.0 == id) {
                let name = standard.name(id).map_or_else(|| format!("CH{id}"), str::to_string);
                names.push((id, name));
            }
            id
        } else if let Some(e) = names.iter().find(|e| e.1 == ch) {
            e.0
        } else {
            let id = match standard.id(ch) {
                Some(id) => id,
                None => {
                    while names.iter().any(|e| e.0 as u16 == next_id) || standard.name(next_id as u8).is_some() {
                        next_id += 1;
                    }
                    if next_id > u8::MAX as u16 {
                        return Err(QtbError::format(label, lineno, "more than 256 channels"));
                    }
                    next_id as ChannelId
                }
            };
            names.push((id, ch.to_string()));
            id
        };
        records.push((id, time));
    }
    let map = ChannelMap::new(names).map_err(|e| QtbError::format(label, 0, e.to_string()))?;
    let mut builder = StreamBuilder::new(map);
    for (i, (id, t)) in records.into_iter().enumerate() {
        builder.push(id, t).map_err(|m| QtbError::format(label, i as u64 + 1, m))?;
    }
    builder.finish()
}

/// Writes the tab-separated form with channel names.
pub fn write_tsv<W: Write>(stream: &TagStream, out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "channel\ttime_ps")?;
    for (id, t) in stream.records() {
        writeln!(w, "{}\t{}", stream.map().name(id).unwrap_or("?"), t.0)?;
    }
    w.flush()
}

/// Reads either format, deciding by the leading magic bytes.
pub fn read_stream_file(path: &Path) -> Result<TagStream> {
    let mut f = File::open(path).map_err(|e| QtbError::io(path, e))?;
    let mut magic = [0u8; 4];
    let n = read_prefix(&mut f, &mut magic).map_err(|e| QtbError::io(path, e))?;
    let f = File::open(path).map_err(|e| QtbError::io(path, e))?;
    let label = path.display().to_string();
    if n == 4 && &magic == MAGIC {
        read_ttag(f, &label)
    } else {
        read_tsv(f, &label)
    }
}

fn read_prefix(f: &mut File, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match f.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qtb_core::quantities::TimeStamp;

    #[test]
    fn header_layout() {
        let map = ChannelMap::new(vec![(0, "CLOCK".into()), (3, "B1".into())]).unwrap();
        let s = TagStream::from_records(map, [(0, TimeStamp(5)), (3, TimeStamp(5)), (3, TimeStamp(7))]).unwrap();
        let mut buf = Vec::new();
        write_ttag(&s, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"TTAG");
        assert_eq!(&buf[4..8], &[1, 0, 2, 0]);
        assert_eq!(buf[8], 0);
        assert_eq!(&buf[9..14], b"CLOCK");
        assert!(buf[14..24].iter().all(|&b| b == 0));
        assert_eq!(buf[24], 3);
        assert_eq!(buf.len(), 8 + 2 * 16 + 3 * 9);
        let first = &buf[40..49];
        assert_eq!(first[0], 0);
        assert_eq!(u64::from_le_bytes(first[1..].try_into().unwrap()), 5);
        assert_eq!(buf[49], 3);
    }

    #[test]
    fn periodic_clock_survives_round_trip() {
        let mut s = TagStream::new(ChannelMap::new(vec![(0, "CLOCK".into()), (1, "A1".into())]).unwrap(), 60);
        s.set_channel(0, Tags::Periodic { first: 0, period: 10, count: 6 }).unwrap();
        s.set_channel(1, Tags::Events(vec![3, 10, 44])).unwrap();
        let mut buf = Vec::new();
        write_ttag(&s, &mut buf).unwrap();
        let back = read_ttag(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn irregular_clock_falls_back_to_events() {
        let map = ChannelMap::new(vec![(0, "CLOCK".into())]).unwrap();
        let s = TagStream::from_records(map, [0, 10, 20, 31].map(|t| (0, TimeStamp(t)))).unwrap();
        let mut buf = Vec::new();
        write_ttag(&s, &mut buf).unwrap();
        let back = read_ttag(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.channel(0), Some(&Tags::Events(vec![0, 10, 20, 31])));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_ttag(&b"TTAX\x01\x00\x00\x00"[..], "m").is_err());
        assert!(read_ttag(&b"TTAG\x02\x00\x00\x00"[..], "m").is_err());
        let mut buf = b"TTAG\x01\x00\x01\x00".to_vec();
        buf.push(1);
        buf.extend_from_slice(b"A1\0\0\0\0\0\0\0\0\0\0\0\0\0");
        let mut ok = buf.clone();
        ok.push(1);
        ok.extend_from_slice(&9u64.to_le_bytes());
        assert_eq!(read_ttag(ok.as_slice(), "m").unwrap().len(), 1);
        let mut undeclared = buf.clone();
        undeclared.push(2);
        undeclared.extend_from_slice(&9u64.to_le_bytes());
        assert!(read_ttag(undeclared.as_slice(), "m").is_err());
        let mut truncated = buf.clone();
        truncated.extend_from_slice(&[1, 0, 0]);
        assert!(read_ttag(truncated.as_slice(), "m").is_err());
        let mut backwards = ok.clone();
        backwards.push(1);
        backwards.extend_from_slice(&3u64.to_le_bytes());
        assert!(read_ttag(backwards.as_slice(), "m").is_err());
    }

    #[test]
    fn tsv_names_and_ids() {
        let text = "channel\ttime_ps\n# comment\nA1\t5\n4\t6\nFOO\t9\n";
        let s = read_tsv(text.as_bytes(), "t").unwrap();
        assert_eq!(s.map().id("A1"), Some(1));
        assert_eq!(s.map().id("B2"), Some(4));
        assert_eq!(s.map().id("FOO"), Some(7));
        assert_eq!(s.len(), 3);
        assert_eq!(s.duration_ps(), 10);
        let mut out = Vec::new();
        write_tsv(&s, &mut out).unwrap();
        let again = read_tsv(out.as_slice(), "t").unwrap();
        assert_eq!(again, s);
        assert!(read_tsv("A1 5\n".as_bytes(), "t").is_err());
        assert!(read_tsv("A1\t-5\n".as_bytes(), "t").is_err());
    }
}
