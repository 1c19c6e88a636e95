use std::fmt::Write as _;
use std::path::Path;

use super::{header_usize, parse_header, read_to_string, write_atomic, FORMAT_VERSION};
use crate::error::StoreError;
use crate::mm::EnsembleFrame;
use crate::types::ProbVector;

pub const FRAME_FORMAT: &str = "annoqual.frame";

/// Model ids must not contain tabs, commas or colons.
pub fn write_frame(frame: &EnsembleFrame) -> String {
    let m = frame.num_classes();
    let mut out = format!(
        "#{FRAME_FORMAT} v{FORMAT_VERSION}\n#m={m}\n#models={}\ninstance_id\tlabel",
        frame.model_ids().join(",")
    );
    for model in frame.model_ids() {
        for k in 1..=m {
            let _ = write!(out, "\t{model}:p_{k}");
        }
    }
    out.push('\n');
    for (i, id) in frame.instance_ids().iter().enumerate() {
        let label = frame.labels().map_or("-".to_string(), |l| l[i].to_string());
        let _ = write!(out, "{id}\t{label}");
        for p in frame.row(i) {
            for v in p.values() {
                let _ = write!(out, "\t{v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_frame(text: &str) -> Result<EnsembleFrame, StoreError> {
    let lines: Vec<&str> = text.lines().collect();
    let (header, used) = parse_header(&lines, FRAME_FORMAT)?;
    let m = header_usize(&header, "m", used)?;
    let models: Vec<String> = header
        .get("models")
        .ok_or_else(|| StoreError::malformed(used, "missing header #models="))?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if m < 2 || models.is_empty() {
        return Err(StoreError::malformed(used, "need m >= 2 and at least one model"));
    }
    let column_line = used + 1;
    let columns: Vec<&str> = lines
        .get(used)
        .ok_or_else(|| StoreError::malformed(column_line, "missing column header"))?
        .split('\t')
        .collect();
    let mut expected = vec!["instance_id".to_string(), "label".to_string()];
    for model in &models {
        expected.extend((1..=m).map(|k| format!("{model}:p_{k}")));
    }
    if columns != expected {
        return Err(StoreError::malformed(column_line, "column header does not match #m and #models"));
    }

    let width = 2 + models.len() * m;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (offset, raw) in lines[used + 1..].iter().enumerate() {
        let line = column_line + 1 + offset;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != width {
            return Err(StoreError::malformed(line, format!("expected {width} fields, found {}", fields.len())));
        }
        let id = fields[0].to_string();
        let label = match fields[1] {
            "-" => None,
            s => {
                let l: usize = s.parse().map_err(|_| StoreError::malformed(line, format!("bad label {s:?}")))?;
                if l >= m {
                    return Err(StoreError::InvalidLabel { label: l, num_classes: m });
                }
                Some(l)
            }
        };
        let mut row = Vec::with_capacity(models.len());
        for chunk in fields[2..].chunks(m) {
            let values: Vec<f64> = chunk
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| StoreError::malformed(line, format!("bad probability: {e}")))?;
            row.push(ProbVector::new(values, m).map_err(|source| StoreError::InvalidProbabilities {
                instance: id.clone(),
                source,
            })?);
        }
        ids.push(id);
        rows.push(row);
        labels.push(label);
    }
    let labels = if labels.iter().all(Option::is_some) && !labels.is_empty() {
        Some(labels.into_iter().flatten().collect())
    } else if labels.iter().all(Option::is_none) {
        None
    } else {
        return Err(StoreError::malformed(column_line, "labels must be given for all rows or none"));
    };
    EnsembleFrame::new(m, models, ids, rows, labels).map_err(|e| StoreError::malformed(column_line, e.to_string()))
}

pub fn save_frame(path: impl AsRef<Path>, frame: &EnsembleFrame) -> Result<(), StoreError> {
    write_atomic(path, write_frame(frame).as_bytes())
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<EnsembleFrame, StoreError> {
    read_frame(&read_to_string(path.as_ref())?)
}
