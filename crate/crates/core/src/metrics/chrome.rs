//! Trace Event Format output, viewable in chrome://tracing or Perfetto.
//! One complete (`"ph": "X"`) event per segment; pid is the worker and tid
//! the resource name.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::sim_engine::SyntheticTrace;

#[derive(Serialize)]
struct Document<'a> {
    #[serde(rename = "traceEvents")]
    trace_events: Vec<Event<'a>>,
}

#[derive(Serialize)]
struct Event<'a> {
    name: &'a str,
    ph: &'static str,
    ts: f64,
    dur: f64,
    pid: usize,
    tid: String,
}

pub fn chrome_trace_json(trace: &SyntheticTrace) -> String {
    let doc = Document {
        trace_events: trace
            .events
            .iter()
            .map(|s| Event {
                name: &s.op,
                ph: "X",
                ts: s.start_us,
                dur: s.duration_us,
                pid: s.worker,
                tid: s.resource.to_string(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("trace serialization cannot fail")
}

pub fn export_chrome_trace(trace: &SyntheticTrace, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, chrome_trace_json(trace))
}
