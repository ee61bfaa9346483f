//! Event trace: one row per MAC transmission attempt and per IP outcome.

use std::io::Write;

use serde::Serialize;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Mac,
    Ip,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Mac => "mac",
            Layer::Ip => "ip",
        }
    }
}

/// MAC rows carry SA/DA in `src`/`dst` and the transmitter/receiver pair in
/// `ta`/`ra`. IP rows carry addresses in `src`/`dst` and leave `ta`/`ra` empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub layer: Layer,
    pub src: String,
    pub dst: String,
    pub ta: String,
    pub ra: String,
    pub size: usize,
    pub outcome: String,
    pub ip_id: u32,
}

pub const TRACE_HEADER: [&str; 9] = ["time", "layer", "src", "dst", "ta", "ra", "size", "outcome", "ip_id"];

/// Writes the trace as CSV. Times are seconds with nanosecond precision.
pub fn write_trace_csv<W: Write>(records: &[TraceRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            format!("{:.9}", r.time.as_secs_f64()),
            r.layer.as_str().to_string(),
            r.src.clone(),
            r.dst.clone(),
            r.ta.clone(),
            r.ra.clone(),
            r.size.to_string(),
            r.outcome.clone(),
            r.ip_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_csv_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("trace is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let r = TraceRecord {
            time: SimTime::from_nanos(207_407),
            layer: Layer::Mac,
            src: "02:50:00:00:00:01".into(),
            dst: "02:50:00:00:00:02".into(),
            ta: "02:50:00:00:00:01".into(),
            ra: "02:50:00:00:00:02".into(),
            size: 1428,
            outcome: "ok".into(),
            ip_id: 3,
        };
        let s = trace_csv_string(&[r]);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("time,layer,src,dst,ta,ra,size,outcome,ip_id"));
        assert_eq!(
            lines.next(),
            Some("0.000207407,mac,02:50:00:00:00:01,02:50:00:00:00:02,02:50:00:00:00:01,02:50:00:00:00:02,1428,ok,3")
        );
    }
}
