use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{ChannelId, ChannelRegistry, TelemetryError, TelemetrySample};

/// Maps CSV column headers to channel ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelSchema {
    columns: BTreeMap<String, ChannelId>,
}

impl ChannelSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, column: &str, id: ChannelId) -> Self {
        self.columns.insert(column.to_owned(), id);
        self
    }

    /// One column per registered channel, named after the channel.
    pub fn from_registry(reg: &ChannelRegistry) -> Self {
        Self { columns: reg.iter().map(|c| (c.name.clone(), c.id)).collect() }
    }

    pub fn lookup(&self, column: &str) -> Option<ChannelId> {
        self.columns.get(column).copied()
    }
}

/// Reads a sensor log: header `t,<channel>,…`, one row per timestamp.
pub fn ingest_log_csv(
    path: impl AsRef<Path>,
    schema: &ChannelSchema,
) -> Result<Vec<TelemetrySample<f64>>, TelemetryError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| TelemetryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_log_csv(file, schema)
}

pub fn parse_log_csv<R: Read>(
    reader: R,
    schema: &ChannelSchema,
) -> Result<Vec<TelemetrySample<f64>>, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(TelemetryError::Parse { line: 1, message: e.to_string() }),
        None => return Err(TelemetryError::Parse { line: 1, message: "missing header row".into() }),
    };
    if header.get(0).map(str::trim) != Some("t") {
        return Err(TelemetryError::Parse { line: 1, message: "first column must be `t`".into() });
    }
    let mut columns = Vec::with_capacity(header.len().saturating_sub(1));
    for name in header.iter().skip(1) {
        let name = name.trim();
        let id = schema.lookup(name).ok_or_else(|| TelemetryError::Parse {
            line: 1,
            message: format!("column `{name}` is not in the channel schema"),
        })?;
        columns.push(id);
    }

    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| TelemetryError::Parse { line, message: e.to_string() })?;
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != columns.len() + 1 {
            return Err(TelemetryError::Parse {
                line,
                message: format!("expected {} fields, found {}", columns.len() + 1, rec.len()),
            });
        }
        let t = parse_number(&rec[0], line, "t")?;
        if t < 0.0 {
            return Err(TelemetryError::Validation { line, message: format!("negative t {t}") });
        }
        if t < last_t {
            return Err(TelemetryError::Validation {
                line,
                message: format!("non-monotone t: {t} after {last_t}"),
            });
        }
        last_t = t;
        for (cell, &channel) in rec.iter().skip(1).zip(&columns) {
            if cell.trim().is_empty() {
                continue;
            }
            let value = parse_number(cell, line, "value")?;
            out.push(TelemetrySample { t, channel, value });
        }
    }
    Ok(out)
}

fn parse_number(cell: &str, line: usize, what: &str) -> Result<f64, TelemetryError> {
    let v: f64 = cell.trim().parse().map_err(|_| TelemetryError::Parse {
        line,
        message: format!("{what} `{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TelemetryError::Parse { line, message: format!("{what} `{cell}` is not finite") });
    }
    Ok(v)
}
