//! Two-channel pulse timelines.
//!
//! A timeline is written as an ordered list of [`SequenceEvent`]s. An event
//! starts when everything before it has finished, unless it is flagged
//! `concurrent`, in which case it starts together with the previous event
//! (on the other channel). Compilation cuts the timeline into [`Segment`]s
//! during which each channel is either idle or driven by one constant pulse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::Pulse;

/// Breakpoints closer than this are merged.
const TIME_EPS_S: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Target,
    Control,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventChannel {
    Target,
    Control,
    BothIdle,
}

impl From<Channel> for EventChannel {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Target => EventChannel::Target,
            Channel::Control => EventChannel::Control,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pulse(Pulse),
    Delay { duration_s: f64 },
}

impl EventKind {
    fn duration_s(&self) -> f64 {
        match self {
            EventKind::Pulse(p) => p.duration_s,
            EventKind::Delay { duration_s } => *duration_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEvent {
    pub channel: EventChannel,
    #[serde(flatten)]
    pub kind: EventKind,
    /// Start together with the previous event instead of after it.
    #[serde(default)]
    pub concurrent: bool,
}

impl SequenceEvent {
    pub fn pulse(channel: Channel, pulse: Pulse) -> Self {
        Self { channel: channel.into(), kind: EventKind::Pulse(pulse), concurrent: false }
    }

    pub fn delay(channel: EventChannel, duration_s: f64) -> Self {
        Self { channel, kind: EventKind::Delay { duration_s }, concurrent: false }
    }

    pub fn concurrent(self) -> Self {
        Self { concurrent: true, ..self }
    }
}

/// Interval of constant drive on both channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub duration_s: f64,
    pub target: Option<Pulse>,
    pub control: Option<Pulse>,
}

impl Segment {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn is_free(&self) -> bool {
        self.target.is_none() && self.control.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    segments: Vec<Segment>,
    duration_s: f64,
}

struct Interval {
    start: f64,
    end: f64,
    pulse: Pulse,
}

impl Timeline {
    pub fn from_events(events: &[SequenceEvent]) -> Result<Self> {
        let mut target: Vec<Interval> = Vec::new();
        let mut control: Vec<Interval> = Vec::new();
        let mut group_start = 0.0f64;
        let mut group_end = 0.0f64;
        let mut group_channels: Vec<EventChannel> = Vec::new();

        for (i, ev) in events.iter().enumerate() {
            let d = ev.kind.duration_s();
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Sequence(format!("event {i}: duration must be finite and >= 0, got {d}")));
            }
            if let EventKind::Pulse(p) = &ev.kind {
                p.validate().map_err(|e| Error::Sequence(format!("event {i}: {e}")))?;
                if ev.channel == EventChannel::BothIdle {
                    return Err(Error::Sequence(format!("event {i}: a pulse needs a target or control channel")));
                }
            }
            if ev.concurrent {
                if i == 0 {
                    return Err(Error::Sequence("the first event cannot be concurrent".into()));
                }
                if ev.channel == EventChannel::BothIdle || group_channels.contains(&EventChannel::BothIdle) {
                    return Err(Error::Sequence(format!("event {i}: both_idle events cannot run concurrently")));
                }
                if group_channels.contains(&ev.channel) {
                    return Err(Error::Sequence(format!("event {i}: channel already busy in this group")));
                }
            } else {
                group_start = group_end;
                group_channels.clear();
            }
            group_channels.push(ev.channel);
            let start = group_start;
            let end = start + d;
            group_end = group_end.max(end);
            if let EventKind::Pulse(p) = ev.kind {
                if d > 0.0 {
                    let iv = Interval { start, end, pulse: p };
                    match ev.channel {
                        EventChannel::Target => target.push(iv),
                        EventChannel::Control => control.push(iv),
                        EventChannel::BothIdle => unreachable!(),
                    }
                }
            }
        }

        let mut cuts: Vec<f64> = vec![0.0, group_end];
        for iv in target.iter().chain(&control) {
            cuts.push(iv.start);
            cuts.push(iv.end);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|b, a| (*b - *a).abs() < TIME_EPS_S);

        let active = |list: &[Interval], mid: f64| list.iter().find(|iv| iv.start <= mid && mid < iv.end).map(|iv| iv.pulse);
        let segments = cuts
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let mid = 0.5 * (a + b);
                Segment {
                    start_s: a,
                    duration_s: b - a,
                    target: active(&target, mid).map(|p| p.with_duration(b - a)),
                    control: active(&control, mid).map(|p| p.with_duration(b - a)),
                }
            })
            .collect();
        Ok(Self { segments, duration_s: group_end })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    /// Start of the trailing pulse-free stretch.
    pub fn final_free_start_s(&self) -> f64 {
        self.segments
            .iter()
            .rev()
            .find(|s| !s.is_free())
            .map_or(0.0, Segment::end_s)
    }
}

/// Incremental construction of an event list that also tracks start times.
#[derive(Clone, Debug, Default)]
pub struct TimelineBuilder {
    events: Vec<SequenceEvent>,
    group_start: f64,
    group_end: f64,
}

impl TimelineBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, ev: SequenceEvent) -> f64 {
        if !ev.concurrent {
            self.group_start = self.group_end;
        }
        self.group_end = self.group_end.max(self.group_start + ev.kind.duration_s());
        self.events.push(ev);
        self.group_start
    }

    /// Appends a pulse after everything so far; returns its start time.
    pub fn pulse(&mut self, channel: Channel, pulse: Pulse) -> f64 {
        self.push(SequenceEvent::pulse(channel, pulse))
    }

    /// Starts a pulse together with the previous event.
    pub fn with(&mut self, channel: Channel, pulse: Pulse) -> f64 {
        self.push(SequenceEvent::pulse(channel, pulse).concurrent())
    }

    pub fn delay(&mut self, duration_s: f64) -> f64 {
        self.push(SequenceEvent::delay(EventChannel::BothIdle, duration_s))
    }

    /// A wait on one channel, so the other can run a concurrent pulse.
    pub fn wait(&mut self, channel: Channel, duration_s: f64) -> f64 {
        self.push(SequenceEvent::delay(channel.into(), duration_s))
    }

    /// End time of the events added so far.
    pub fn end_s(&self) -> f64 {
        self.group_end
    }

    pub fn events(&self) -> &[SequenceEvent] {
        &self.events
    }

    pub fn build(&self) -> Result<Timeline> {
        Timeline::from_events(&self.events)
    }
}
