//! Time-tagged detector clicks and their file formats.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PSIM";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Click {
    pub timestamp_ps: u64,
    pub channel: u16,
}

/// Clicks sorted by time (ties by channel), all before `duration_ps`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClickStream {
    pub events: Vec<Click>,
    pub duration_ps: u64,
}

impl ClickStream {
    /// Sorts the events and checks the stream invariants.
    pub fn new(mut events: Vec<Click>, duration_ps: u64) -> Result<Self> {
        events.sort();
        let s = ClickStream {
            events,
            duration_ps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Format("events are not sorted".into()));
        }
        if let Some(last) = self.events.last() {
            if last.timestamp_ps >= self.duration_ps {
                return Err(Error::Format(format!(
                    "timestamp {} not below duration {}",
                    last.timestamp_ps, self.duration_ps
                )));
            }
        }
        let mut last: Vec<Option<u64>> = Vec::new();
        for e in &self.events {
            let c = e.channel as usize;
            if last.len() <= c {
                last.resize(c + 1, None);
            }
            if last[c] == Some(e.timestamp_ps) {
                return Err(Error::Format(format!(
                    "repeated timestamp {} on channel {c}",
                    e.timestamp_ps
                )));
            }
            last[c] = Some(e.timestamp_ps);
        }
        Ok(())
    }

    /// Timestamps of one channel.
    pub fn channel(&self, channel: u16) -> Vec<u64> {
        self.events
            .iter()
            .filter(|e| e.channel == channel)
            .map(|e| e.timestamp_ps)
            .collect()
    }

    /// Number of distinct channels, taken as one more than the largest index.
    pub fn channel_count(&self) -> u16 {
        self.events.iter().map(|e| e.channel + 1).max().unwrap_or(0)
    }

    /// Merges streams; ties keep the order of `streams`.
    pub fn merge(streams: &[&ClickStream]) -> ClickStream {
        let mut events: Vec<Click> = streams.iter().flat_map(|s| s.events.iter().copied()).collect();
        events.sort();
        ClickStream {
            events,
            duration_ps: streams.iter().map(|s| s.duration_ps).max().unwrap_or(0),
        }
    }

    /// Little-endian binary: `PSIM`, version, channel count, then
    /// `(u64 timestamp_ps, u16 channel)` per event.
    pub fn write_binary<W: Write>(&self, mut w: W, channels: u16) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&channels.to_le_bytes())?;
        for e in &self.events {
            w.write_all(&e.timestamp_ps.to_le_bytes())?;
            w.write_all(&e.channel.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the binary format; returns the stream and the header channel count.
    /// The duration is set just past the last event.
    pub fn read_binary<R: Read>(mut r: R) -> Result<(ClickStream, u16)> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let channels = u16::from_le_bytes([header[6], header[7]]);
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % 10 != 0 {
            return Err(Error::Format("truncated event record".into()));
        }
        let events: Vec<Click> = body
            .chunks_exact(10)
            .map(|c| Click {
                timestamp_ps: u64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                channel: u16::from_le_bytes([c[8], c[9]]),
            })
            .collect();
        let duration = events.last().map_or(0, |e| e.timestamp_ps + 1);
        let s = ClickStream {
            events,
            duration_ps: duration,
        };
        s.validate()?;
        Ok((s, channels))
    }

    /// CSV with header `timestamp_ps,channel`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "timestamp_ps,channel")?;
        for e in &self.events {
            writeln!(w, "{},{}", e.timestamp_ps, e.channel)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<ClickStream> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "timestamp_ps,channel" => {}
            _ => return Err(Error::Format("expected header `timestamp_ps,channel`".into())),
        }
        let mut events = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("line {}: missing field", n + 2)))?;
            let bad = |e: std::num::ParseIntError| Error::Format(format!("line {}: {e}", n + 2));
            events.push(Click {
                timestamp_ps: a.trim().parse().map_err(bad)?,
                channel: b.trim().parse().map_err(bad)?,
            });
        }
        let duration = events.iter().map(|e| e.timestamp_ps + 1).max().unwrap_or(0);
        ClickStream::new(events, duration)
    }
}

/// Non-paralysable deadtime applied per channel to time-ordered clicks: a click
/// is kept when at least `deadtime_ps` has passed since the last kept click on
/// its channel. With zero deadtime, coincident clicks on one channel collapse.
pub fn apply_deadtime(events: &[Click], deadtime_ps: u64) -> Vec<Click> {
    let mut last: Vec<Option<u64>> = Vec::new();
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        let c = e.channel as usize;
        if last.len() <= c {
            last.resize(c + 1, None);
        }
        let keep = match last[c] {
            None => true,
            Some(t) => e.timestamp_ps > t && e.timestamp_ps - t >= deadtime_ps.max(1),
        };
        if keep {
            last[c] = Some(e.timestamp_ps);
            out.push(*e);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ClickStream {
        ClickStream::new(
            vec![
                Click {
                    timestamp_ps: 50,
                    channel: 1,
                },
                Click {
                    timestamp_ps: 10,
                    channel: 0,
                },
                Click {
                    timestamp_ps: 50,
                    channel: 0,
                },
            ],
            100,
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_binary(&mut buf, 2).unwrap();
        assert_eq!(&buf[..4], b"PSIM");
        assert_eq!(buf.len(), 8 + 3 * 10);
        assert_eq!(&buf[8..16], &10u64.to_le_bytes());
        let (back, channels) = ClickStream::read_binary(&buf[..]).unwrap();
        assert_eq!(channels, 2);
        assert_eq!(back.events, s.events);
        assert!(ClickStream::read_binary(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_ps,channel\n10,0\n"));
        assert_eq!(ClickStream::read_csv(&buf[..]).unwrap().events, s.events);
    }

    #[test]
    fn invariants_are_checked() {
        let dup = vec![
            Click {
                timestamp_ps: 5,
                channel: 0,
            };
            2
        ];
        assert!(ClickStream::new(dup, 10).is_err());
        let late = vec![Click {
            timestamp_ps: 10,
            channel: 0,
        }];
        assert!(ClickStream::new(late, 10).is_err());
    }

    #[test]
    fn deadtime_is_non_paralysable() {
        let ev: Vec<Click> = [0u64, 40, 90, 100, 150, 260]
            .iter()
            .map(|&t| Click {
                timestamp_ps: t,
                channel: 0,
            })
            .collect();
        let kept: Vec<u64> = apply_deadtime(&ev, 100).iter().map(|c| c.timestamp_ps).collect();
        assert_eq!(kept, vec![0, 100, 260]);
        let same = [
            Click {
                timestamp_ps: 3,
                channel: 0,
            },
            Click {
                timestamp_ps: 3,
                channel: 0,
            },
            Click {
                timestamp_ps: 3,
                channel: 1,
            },
        ];
        assert_eq!(apply_deadtime(&same, 0).len(), 2);
    }
}
