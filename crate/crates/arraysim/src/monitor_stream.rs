//! Monitor data pipeline: samples, event-aligned batches, channels and the
//! archiving consumer.
//!
//! Every station collects the samples its monitors produce during a period
//! and flushes them as one batch when the period's closing event arrives.
//! Batches are numbered contiguously per source; empty flushes emit nothing
//! and do not advance the numbering, so a subscriber can prove losslessness
//! by watching the sequence alone. The pipeline never drops or reorders:
//! everything published on a channel reaches every subscriber of that
//! channel in publication order.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, Write};
use std::rc::Rc;

use crate::timebase::{ArrayTime, MasterClock, TimingEvent, EVENT_PERIOD_NS};

/// Quality flag a sample carries through the whole pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quality {
    /// Decoded fine and inside the declared range.
    Ok,
    /// Decoded fine but outside the declared range.
    Range,
    /// The device did not answer the poll.
    Timeout,
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quality::Ok => "ok",
            Quality::Range => "range",
            Quality::Timeout => "timeout",
        })
    }
}

/// One monitored value. The timestamp is carried as the event the sample
/// belongs to plus the offset of its bus transaction inside that period,
/// which keeps time integer end to end.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub device: String,
    pub property: String,
    pub value: f64,
    pub quality: Quality,
    pub event_seq: u64,
    pub offset_ns: u64,
}

impl Sample {
    pub fn timestamp(&self, master: &MasterClock) -> ArrayTime {
        master.event_time(self.event_seq).plus_ns(self.offset_ns)
    }
}

/// An event-aligned group of samples from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: String,
    pub batch_seq: u64,
    pub event_seq: u64,
    pub samples: Vec<Sample>,
}

/// Per-source staging area. Samples accumulate during a period; the closing
/// event flushes them as one batch.
pub struct Collector {
    source: String,
    next_seq: u64,
    buf: Vec<Sample>,
    collected: u64,
}

impl Collector {
    pub fn new(source: impl Into<String>) -> Self {
        Collector {
            source: source.into(),
            next_seq: 0,
            buf: Vec::new(),
            collected: 0,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Samples accepted over the collector's lifetime.
    pub fn collected(&self) -> u64 {
        self.collected
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn collect(&mut self, sample: Sample) {
        self.collected += 1;
        self.buf.push(sample);
    }

    /// Close the period ending at `event`. An empty buffer emits nothing and
    /// keeps the numbering unchanged, so batch_seq stays contiguous across
    /// what a subscriber actually receives.
    pub fn flush(&mut self, event: TimingEvent) -> Option<Batch> {
        if self.buf.is_empty() {
            return None;
        }
        let batch = Batch {
            source: self.source.clone(),
            batch_seq: self.next_seq,
            event_seq: event.seq,
            samples: std::mem::take(&mut self.buf),
        };
        self.next_seq += 1;
        Some(batch)
    }
}

/// A subscriber's end of a channel: an unbounded FIFO of batches.
pub struct Subscription {
    queue: Rc<RefCell<VecDeque<Batch>>>,
}

impl Subscription {
    pub fn try_next(&self) -> Option<Batch> {
        self.queue.borrow_mut().pop_front()
    }

    pub fn drain(&self) -> Vec<Batch> {
        self.queue.borrow_mut().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.borrow().is_empty()
    }
}

/// Named pub/sub channels. Publishing clones the batch into every
/// subscriber queue; subscribers consume at their own pace.
#[derive(Default)]
pub struct ChannelHub {
    channels: BTreeMap<String, Vec<Rc<RefCell<VecDeque<Batch>>>>>,
}

impl ChannelHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, channel: &str) -> Subscription {
        let queue = Rc::new(RefCell::new(VecDeque::new()));
        self.channels
            .entry(channel.to_string())
            .or_default()
            .push(Rc::clone(&queue));
        Subscription { queue }
    }

    pub fn publish(&mut self, channel: &str, batch: Batch) {
        if let Some(subs) = self.channels.get(channel) {
            for sub in subs {
                sub.borrow_mut().push_back(batch.clone());
            }
        }
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }
}

/// Header line of the archive CSV.
pub const ARCHIVE_HEADER: &str = "event_seq,offset_ns,device,property,value,quality";

fn write_sample<W: Write>(w: &mut W, s: &Sample) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{}",
        s.event_seq, s.offset_ns, s.device, s.property, s.value, s.quality
    )
}

/// Drain everything currently queued on `sub` into CSV records. Returns the
/// number of records written. The header must already be in place; see
/// `Archiver` for the incremental form that owns the whole file.
pub fn archive<W: Write>(sub: &Subscription, w: &mut W) -> io::Result<u64> {
    let mut records = 0;
    for batch in sub.drain() {
        for s in &batch.samples {
            write_sample(w, s)?;
            records += 1;
        }
    }
    Ok(records)
}

/// The archiving consumer: subscriptions in, one CSV out. Drained once per
/// event by the run loop so its work stays bounded.
pub struct Archiver<W: Write> {
    subs: Vec<Subscription>,
    sink: W,
    records: u64,
}

impl<W: Write> Archiver<W> {
    pub fn new(subs: Vec<Subscription>, mut sink: W) -> io::Result<Self> {
        writeln!(sink, "{ARCHIVE_HEADER}")?;
        Ok(Archiver {
            subs,
            sink,
            records: 0,
        })
    }

    /// Consume everything currently queued.
    pub fn drain(&mut self) -> io::Result<u64> {
        let mut new = 0;
        for sub in &self.subs {
            new += archive(sub, &mut self.sink)?;
        }
        self.records += new;
        Ok(new)
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> io::Result<(W, u64)> {
        self.drain()?;
        self.sink.flush()?;
        Ok((self.sink, self.records))
    }
}

/// True when `batches` is exactly what a lossless subscriber must see from
/// one source: contiguous batch_seq from `first`, strictly increasing
/// event_seq, no empty batches.
pub fn verify_stream(batches: &[Batch], first: u64) -> bool {
    let mut expect = first;
    let mut last_event: Option<u64> = None;
    for b in batches {
        if b.batch_seq != expect || b.samples.is_empty() {
            return false;
        }
        if let Some(prev) = last_event {
            if b.event_seq <= prev {
                return false;
            }
        }
        last_event = Some(b.event_seq);
        expect += 1;
    }
    true
}

/// Offsets must stay inside one period for the event/offset timestamp split
/// to be unambiguous.
pub fn offset_in_period(offset_ns: u64) -> bool {
    offset_ns < EVENT_PERIOD_NS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::MasterClock;

    fn sample(event_seq: u64, n: u64) -> Sample {
        Sample {
            device: "D".into(),
            property: "P".into(),
            value: n as f64,
            quality: Quality::Ok,
            event_seq,
            offset_ns: 1000 * n,
        }
    }

    #[test]
    fn empty_flush_emits_nothing_and_keeps_numbering() {
        let master = MasterClock::default();
        let mut c = Collector::new("ANT1/telemetry");
        assert!(c.flush(master.event(1)).is_none());

        c.collect(sample(1, 0));
        let b1 = c.flush(master.event(2)).unwrap();
        assert_eq!(b1.batch_seq, 0);

        assert!(c.flush(master.event(3)).is_none());
        c.collect(sample(3, 1));
        let b2 = c.flush(master.event(4)).unwrap();
        // The numbering did not advance across the empty flush.
        assert_eq!(b2.batch_seq, 1);
        assert!(verify_stream(&[b1, b2], 0));
    }

    #[test]
    fn every_subscriber_sees_every_batch_in_order() {
        let master = MasterClock::default();
        let mut hub = ChannelHub::new();
        let s1 = hub.subscribe("telemetry");
        let s2 = hub.subscribe("telemetry");
        let other = hub.subscribe("alarms");

        let mut c = Collector::new("ANT1/telemetry");
        for k in 0..5u64 {
            c.collect(sample(k, k));
            let b = c.flush(master.event(k + 1)).unwrap();
            hub.publish("telemetry", b);
        }

        for sub in [&s1, &s2] {
            let got = sub.drain();
            assert_eq!(got.len(), 5);
            assert!(verify_stream(&got, 0));
        }
        assert!(other.is_empty());
    }

    #[test]
    fn publishing_to_an_unsubscribed_channel_is_a_no_op() {
        let mut hub = ChannelHub::new();
        let master = MasterClock::default();
        let mut c = Collector::new("X");
        c.collect(sample(0, 0));
        hub.publish("nobody", c.flush(master.event(1)).unwrap());
    }

    #[test]
    fn archive_format_and_count() {
        let master = MasterClock::default();
        let mut hub = ChannelHub::new();
        let sub = hub.subscribe("telemetry");
        let mut c = Collector::new("ANT1/telemetry");

        c.collect(Sample {
            device: "ANT1/CRYO".into(),
            property: "TEMP_K".into(),
            value: 77.25,
            quality: Quality::Ok,
            event_seq: 2,
            offset_ns: 262_000,
        });
        c.collect(Sample {
            device: "ANT1/CRYO".into(),
            property: "HEATER_W".into(),
            value: 5.0,
            quality: Quality::Timeout,
            event_seq: 2,
            offset_ns: 524_000,
        });
        hub.publish("telemetry", c.flush(master.event(3)).unwrap());

        let mut archiver = Archiver::new(vec![sub], Vec::new()).unwrap();
        archiver.drain().unwrap();
        let (bytes, records) = archiver.finish().unwrap();
        assert_eq!(records, 2);
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], ARCHIVE_HEADER);
        assert_eq!(lines[1], "2,262000,ANT1/CRYO,TEMP_K,77.25,ok");
        assert_eq!(lines[2], "2,524000,ANT1/CRYO,HEATER_W,5,timeout");
    }

    #[test]
    fn verify_stream_catches_gaps() {
        let master = MasterClock::default();
        let mut c = Collector::new("S");
        c.collect(sample(1, 0));
        let b0 = c.flush(master.event(1)).unwrap();
        c.collect(sample(2, 1));
        let b1 = c.flush(master.event(2)).unwrap();
        c.collect(sample(3, 2));
        let b2 = c.flush(master.event(3)).unwrap();
        assert!(verify_stream(&[b0.clone(), b1.clone(), b2.clone()], 0));
        assert!(!verify_stream(&[b0.clone(), b2.clone()], 0));
        assert!(!verify_stream(&[b1, b0, b2], 0));
    }
}
