use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::Micros;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
pub struct TraceEvent {
    pub function_id: u32,
    pub timestamp_us: Micros,
}

/// Reads a `function_id,timestamp_us` CSV. Timestamps must not decrease
/// within a function.
pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let malformed = |line: usize, reason: String| Error::MalformedTrace {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| malformed(0, e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers != ["function_id", "timestamp_us"] {
        return Err(malformed(
            1,
            format!("expected header `function_id,timestamp_us`, got `{}`", headers.join(",")),
        ));
    }
    let mut last: HashMap<u32, Micros> = HashMap::new();
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TraceEvent>().enumerate() {
        let line = i + 2;
        let ev = row.map_err(|e| malformed(line, e.to_string()))?;
        if let Some(&prev) = last.get(&ev.function_id) {
            if ev.timestamp_us < prev {
                return Err(malformed(
                    line,
                    format!(
                        "timestamp {} before {} for function {}",
                        ev.timestamp_us, prev, ev.function_id
                    ),
                ));
            }
        }
        last.insert(ev.function_id, ev.timestamp_us);
        out.push(ev);
    }
    Ok(out)
}
