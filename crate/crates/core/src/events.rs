//! Event data model, log ingestion, idle-time compression, and time-window
//! extraction shared by the classifiers and the fusion engine.
//!
//! Two time axes are maintained: `wall_time` (seconds since epoch, never
//! modified after ingestion) and `active_time` (wall time with idle periods
//! compressed down to a cap). Folds and decision windows always operate on
//! active time.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

/// Idle gaps longer than this are compressed (seconds).
pub const DEFAULT_IDLE_THRESHOLD_SECS: i64 = 300;
/// Compressed value for an idle gap (seconds).
pub const DEFAULT_IDLE_CAP_SECS: i64 = 300;

/// One behavioral signal source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Text,
    App,
    Web,
    Location,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Text, Modality::App, Modality::Web, Modality::Location];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Text => "TEXT",
            Modality::App => "APP",
            Modality::Web => "WEB",
            Modality::Location => "LOCATION",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Modality> {
        match tag {
            "TEXT" => Some(Modality::Text),
            "APP" => Some(Modality::App),
            "WEB" => Some(Modality::Web),
            "LOCATION" => Some(Modality::Location),
            _ => None,
        }
    }

    /// Stable index used for per-modality arrays.
    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::App => 1,
            Modality::Web => 2,
            Modality::Location => 3,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Modality-specific event content.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// A single keystroke as typed (never autocorrected output).
    Text(char),
    /// App identifier receiving focus.
    App(String),
    /// Full URL entered/visited.
    Web(String),
    /// A position fix in decimal degrees.
    Location { lat: f64, lon: f64 },
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Text(_) => Modality::Text,
            Payload::App(_) => Modality::App,
            Payload::Web(_) => Modality::Web,
            Payload::Location { .. } => Modality::Location,
        }
    }
}

/// A timestamped behavioral event, prior to idle compression.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub user_id: String,
    /// Seconds since epoch, 1-second resolution.
    pub wall_time: i64,
    pub payload: Payload,
}

impl RawEvent {
    pub fn modality(&self) -> Modality {
        self.payload.modality()
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeRange(f64),
    #[error("events not sorted by wall time at index {0}")]
    Unsorted(usize),
}

fn validate_location(lat: f64, lon: f64) -> Result<(), EventError> {
    if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
        return Err(EventError::LatitudeRange(lat));
    }
    if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
        return Err(EventError::LongitudeRange(lon));
    }
    Ok(())
}

// --- Log format -------------------------------------------------------------
//
// One record per line, UTF-8, tab-separated:
//   user_id <TAB> wall_time <TAB> modality <TAB> payload
// TEXT payloads are a single character; backslash, tab, newline, carriage
// return, and space are escaped so that every field is visible and the file
// round-trips byte for byte. LOCATION payloads are "lat,lon".

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            ' ' => out.push_str("\\s"),
            _ => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('s') => out.push(' '),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".to_string()),
        }
    }
    Ok(out)
}

pub fn format_event(event: &RawEvent) -> String {
    let payload = match &event.payload {
        Payload::Text(c) => escape_field(&c.to_string()),
        Payload::App(name) => escape_field(name),
        Payload::Web(url) => escape_field(url),
        Payload::Location { lat, lon } => format!("{lat},{lon}"),
    };
    format!(
        "{}\t{}\t{}\t{}",
        escape_field(&event.user_id),
        event.wall_time,
        event.modality().tag(),
        payload
    )
}

pub fn parse_line(line: &str) -> Result<RawEvent, String> {
    let mut fields = line.split('\t');
    let user_raw = fields.next().ok_or("missing user_id")?;
    let time_raw = fields.next().ok_or("missing wall_time")?;
    let modality_raw = fields.next().ok_or("missing modality")?;
    let payload_raw = fields.next().ok_or("missing payload")?;
    if fields.next().is_some() {
        return Err("too many fields".to_string());
    }

    let user_id = unescape_field(user_raw)?;
    if user_id.is_empty() {
        return Err("empty user_id".to_string());
    }
    let wall_time: i64 = time_raw
        .parse()
        .map_err(|_| format!("invalid wall_time {time_raw:?}"))?;
    let modality =
        Modality::from_tag(modality_raw).ok_or_else(|| format!("unknown modality {modality_raw:?}"))?;

    let payload = match modality {
        Modality::Text => {
            let text = unescape_field(payload_raw)?;
            let mut chars = text.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Payload::Text(c),
                _ => return Err("TEXT payload must be exactly one character".to_string()),
            }
        }
        Modality::App => Payload::App(unescape_field(payload_raw)?),
        Modality::Web => Payload::Web(unescape_field(payload_raw)?),
        Modality::Location => {
            let (lat_raw, lon_raw) = payload_raw
                .split_once(',')
                .ok_or("LOCATION payload must be lat,lon")?;
            let lat: f64 = lat_raw.parse().map_err(|_| format!("invalid latitude {lat_raw:?}"))?;
            let lon: f64 = lon_raw.parse().map_err(|_| format!("invalid longitude {lon_raw:?}"))?;
            validate_location(lat, lon).map_err(|e| e.to_string())?;
            Payload::Location { lat, lon }
        }
    };

    Ok(RawEvent {
        user_id,
        wall_time,
        payload,
    })
}

/// A record that failed to parse; ingestion continues past it.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Default)]
pub struct IngestResult {
    /// Events grouped by user, sorted by wall time (stable: simultaneous
    /// events keep ingestion order).
    pub users: BTreeMap<String, Vec<RawEvent>>,
    pub errors: Vec<LineError>,
}

/// Parse an event log. Malformed records are reported with their line number;
/// an empty input yields an empty dataset.
pub fn ingest_log<R: BufRead>(reader: R) -> io::Result<IngestResult> {
    let mut result = IngestResult::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(event) => result.users.entry(event.user_id.clone()).or_default().push(event),
            Err(message) => result.errors.push(LineError {
                line: idx + 1,
                message,
            }),
        }
    }
    for events in result.users.values_mut() {
        events.sort_by_key(|e| e.wall_time);
    }
    Ok(result)
}

pub fn write_log<'a, W: Write>(w: &mut W, events: impl IntoIterator<Item = &'a RawEvent>) -> io::Result<()> {
    for event in events {
        writeln!(w, "{}", format_event(event))?;
    }
    Ok(())
}

// --- Idle compression -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdleConfig {
    pub threshold_secs: i64,
    pub cap_secs: i64,
}

impl Default for IdleConfig {
    fn default() -> Self {
        IdleConfig {
            threshold_secs: DEFAULT_IDLE_THRESHOLD_SECS,
            cap_secs: DEFAULT_IDLE_CAP_SECS,
        }
    }
}

/// An event paired with its position on the active-time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub event: RawEvent,
    pub active_time: i64,
}

/// A user's event stream after idle compression. Immutable once built; safe
/// to share across threads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveTimeline {
    entries: Vec<TimedEvent>,
    total_active_duration: i64,
}

impl ActiveTimeline {
    pub fn entries(&self) -> &[TimedEvent] {
        &self.entries
    }

    pub fn total_active_duration(&self) -> i64 {
        self.total_active_duration
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Events with `t_now - omega <= active_time <= t_now` (both boundaries
    /// closed), optionally restricted to one modality.
    pub fn window_at(&self, t_now: i64, omega: i64, modality: Option<Modality>) -> Window<'_> {
        assert!(omega > 0, "window length must be positive");
        let lo = self.entries.partition_point(|e| e.active_time < t_now - omega);
        let hi = self.entries.partition_point(|e| e.active_time <= t_now);
        let events = self.entries[lo..hi]
            .iter()
            .filter(|e| modality.map_or(true, |m| e.event.modality() == m))
            .collect();
        Window { t_now, omega, events }
    }
}

/// Build the active timeline: wall gaps above the threshold are replaced by
/// the cap on the active axis; wall times themselves are never modified.
pub fn compress_idle(events: Vec<RawEvent>, config: IdleConfig) -> Result<ActiveTimeline, EventError> {
    let mut entries = Vec::with_capacity(events.len());
    let mut active_time = 0i64;
    let mut prev_wall: Option<i64> = None;
    for (idx, event) in events.into_iter().enumerate() {
        if let Some(prev) = prev_wall {
            if event.wall_time < prev {
                return Err(EventError::Unsorted(idx));
            }
            let wall_gap = event.wall_time - prev;
            let active_gap = if wall_gap > config.threshold_secs {
                wall_gap.min(config.cap_secs)
            } else {
                wall_gap
            };
            active_time += active_gap;
        }
        prev_wall = Some(event.wall_time);
        entries.push(TimedEvent { event, active_time });
    }
    Ok(ActiveTimeline {
        total_active_duration: active_time,
        entries,
    })
}

// --- Decision windows -------------------------------------------------------

/// The events feeding one authentication decision: everything within the last
/// `omega` seconds of active time.
#[derive(Debug, Clone)]
pub struct Window<'a> {
    pub t_now: i64,
    pub omega: i64,
    pub events: Vec<&'a TimedEvent>,
}

impl<'a> Window<'a> {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Concatenated keystrokes of the window's TEXT events, in order.
    pub fn text_block(&self) -> String {
        self.events
            .iter()
            .filter_map(|e| match &e.event.payload {
                Payload::Text(c) => Some(*c),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text_event(user: &str, wall: i64, c: char) -> RawEvent {
        RawEvent {
            user_id: user.to_string(),
            wall_time: wall,
            payload: Payload::Text(c),
        }
    }

    fn app_event(user: &str, wall: i64, name: &str) -> RawEvent {
        RawEvent {
            user_id: user.to_string(),
            wall_time: wall,
            payload: Payload::App(name.to_string()),
        }
    }

    #[test]
    fn round_trip_log_format() {
        let events = vec![
            text_event("u1", 10, ' '),
            text_event("u1", 10, '\t'),
            text_event("u1", 11, '\\'),
            app_event("u1", 12, "com.example.app"),
            RawEvent {
                user_id: "u1".into(),
                wall_time: 13,
                payload: Payload::Web("https://m.example.com/a?b=1".into()),
            },
            RawEvent {
                user_id: "u1".into(),
                wall_time: 14,
                payload: Payload::Location { lat: 39.95, lon: -75.16 },
            },
        ];
        let mut buf = Vec::new();
        write_log(&mut buf, &events).unwrap();
        let parsed = ingest_log(&buf[..]).unwrap();
        assert!(parsed.errors.is_empty());
        assert_eq!(parsed.users["u1"], events);

        // Byte-exact re-emission.
        let mut buf2 = Vec::new();
        write_log(&mut buf2, &parsed.users["u1"]).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn malformed_latitude_reported_with_line_number() {
        let log = "u1\t1\tTEXT\ta\nu1\t2\tLOCATION\t95.0,10.0\nu1\t3\tTEXT\tb\nu1\t4\tTEXT\tc\n";
        let parsed = ingest_log(log.as_bytes()).unwrap();
        assert_eq!(parsed.users["u1"].len(), 3);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 2);
        assert!(parsed.errors[0].message.contains("latitude"));
    }

    #[test]
    fn out_of_order_lines_sorted_ascending() {
        let log = "u1\t5\tTEXT\ta\nu1\t2\tTEXT\tb\nu1\t9\tTEXT\tc\n";
        let parsed = ingest_log(log.as_bytes()).unwrap();
        let times: Vec<i64> = parsed.users["u1"].iter().map(|e| e.wall_time).collect();
        assert_eq!(times, vec![2, 5, 9]);
    }

    #[test]
    fn duplicate_lines_both_retained() {
        let log = "u1\t5\tTEXT\ta\nu1\t5\tTEXT\ta\n";
        let parsed = ingest_log(log.as_bytes()).unwrap();
        assert_eq!(parsed.users["u1"].len(), 2);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let parsed = ingest_log(&b""[..]).unwrap();
        assert!(parsed.users.is_empty());
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn unknown_modality_and_bad_timestamp_reported() {
        let log = "u1\txx\tTEXT\ta\nu1\t3\tMOUSE\tz\n";
        let parsed = ingest_log(log.as_bytes()).unwrap();
        assert!(parsed.users.is_empty());
        assert_eq!(parsed.errors.len(), 2);
    }

    #[test]
    fn idle_gap_compressed_to_cap() {
        // 20 minutes between A and B, nothing in between -> 5 minutes.
        let events = vec![text_event("u", 0, 'a'), text_event("u", 1200, 'b')];
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        assert_eq!(timeline.entries()[0].active_time, 0);
        assert_eq!(timeline.entries()[1].active_time, 300);
        assert_eq!(timeline.total_active_duration(), 300);
        // Wall times untouched.
        assert_eq!(timeline.entries()[1].event.wall_time, 1200);
    }

    #[test]
    fn below_threshold_gap_unchanged() {
        let events = vec![text_event("u", 0, 'a'), text_event("u", 240, 'b')];
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        assert_eq!(timeline.entries()[1].active_time, 240);
    }

    #[test]
    fn empty_sequence_yields_empty_timeline() {
        let timeline = compress_idle(Vec::new(), IdleConfig::default()).unwrap();
        assert!(timeline.is_empty());
        assert_eq!(timeline.total_active_duration(), 0);
    }

    #[test]
    fn unsorted_input_is_contract_violation() {
        let events = vec![text_event("u", 10, 'a'), text_event("u", 5, 'b')];
        assert!(matches!(
            compress_idle(events, IdleConfig::default()),
            Err(EventError::Unsorted(1))
        ));
    }

    #[test]
    fn compress_is_idempotent() {
        let events = vec![
            text_event("u", 0, 'a'),
            text_event("u", 1200, 'b'),
            text_event("u", 1300, 'c'),
            text_event("u", 9999, 'd'),
        ];
        let first = compress_idle(events, IdleConfig::default()).unwrap();
        let again: Vec<RawEvent> = first
            .entries()
            .iter()
            .map(|te| RawEvent {
                wall_time: te.active_time,
                ..te.event.clone()
            })
            .collect();
        let second = compress_idle(again, IdleConfig::default()).unwrap();
        let a: Vec<i64> = first.entries().iter().map(|e| e.active_time).collect();
        let b: Vec<i64> = second.entries().iter().map(|e| e.active_time).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn window_covers_whole_timeline_when_omega_large() {
        let events = vec![text_event("u", 0, 'a'), text_event("u", 100, 'b')];
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        let w = timeline.window_at(100, 10_000, None);
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn window_before_first_event_is_empty() {
        let events = vec![text_event("u", 100, 'a')];
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        // Active time of the only event is 0; probe a negative instant.
        let w = timeline.window_at(-1, 60, None);
        assert!(w.is_empty());
    }

    #[test]
    fn event_exactly_omega_old_is_included() {
        let events = vec![text_event("u", 0, 'a'), text_event("u", 60, 'b')];
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        let w = timeline.window_at(60, 60, None);
        assert_eq!(w.len(), 2, "boundary event at distance exactly omega is included");
    }

    #[test]
    fn window_respects_modality_filter_and_future_exclusion() {
        let events = vec![
            text_event("u", 0, 'a'),
            app_event("u", 10, "x"),
            text_event("u", 20, 'b'),
            text_event("u", 30, 'c'),
        ];
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        let w = timeline.window_at(20, 60, Some(Modality::Text));
        assert_eq!(w.len(), 2); // 'a' and 'b'; 'c' is in the future, app filtered
        assert_eq!(w.text_block(), "ab");
    }

    #[test]
    fn window_monotone_in_omega() {
        let events: Vec<RawEvent> = (0..50).map(|i| text_event("u", i * 37 % 400, 'x')).collect();
        let mut sorted = events.clone();
        sorted.sort_by_key(|e| e.wall_time);
        let timeline = compress_idle(sorted, IdleConfig::default()).unwrap();
        for t in [0i64, 50, 100, 399] {
            let small = timeline.window_at(t, 40, None).len();
            let large = timeline.window_at(t, 90, None).len();
            assert!(small <= large);
        }
    }

    #[test]
    fn gap_sum_equals_total_duration_and_counts_conserved() {
        let events = vec![
            text_event("u", 0, 'a'),
            app_event("u", 400, "x"),
            text_event("u", 5000, 'b'),
            app_event("u", 5100, "y"),
        ];
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        let entries = timeline.entries();
        let gap_sum: i64 = entries.windows(2).map(|p| p[1].active_time - p[0].active_time).sum();
        assert_eq!(gap_sum, timeline.total_active_duration());
        let text_count = entries.iter().filter(|e| e.event.modality() == Modality::Text).count();
        let app_count = entries.iter().filter(|e| e.event.modality() == Modality::App).count();
        assert_eq!((text_count, app_count), (2, 2));
        assert!(entries.windows(2).all(|p| p[1].active_time - p[0].active_time <= 300));
    }
}
