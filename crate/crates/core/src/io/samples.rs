use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{header_usize, parse_header, read_to_string, write_atomic, FORMAT_VERSION};
use crate::error::StoreError;
use crate::triage::SampleMatrix;
use crate::types::ProbVector;

pub const SAMPLES_FORMAT: &str = "annoqual.samples";

/// Serializes with shortest round-trip float formatting, so reloading is exact.
pub fn write_samples(matrix: &SampleMatrix) -> String {
    let m = matrix.num_classes();
    let mut out = format!(
        "#{SAMPLES_FORMAT} v{FORMAT_VERSION}\n#model_id={}\n#T={}\n#m={m}\ninstance_id\tsample",
        matrix.model_id(),
        matrix.num_samples()
    );
    for k in 1..=m {
        let _ = write!(out, "\tp_{k}");
    }
    out.push('\n');
    for (id, samples) in matrix.iter() {
        for (s, p) in samples.iter().enumerate() {
            let _ = write!(out, "{id}\t{s}");
            for v in p.values() {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn read_samples(text: &str) -> Result<SampleMatrix, StoreError> {
    let lines: Vec<&str> = text.lines().collect();
    let (header, used) = parse_header(&lines, SAMPLES_FORMAT)?;
    let model_id = header
        .get("model_id")
        .ok_or_else(|| StoreError::malformed(used, "missing header #model_id="))?
        .to_string();
    let t = header_usize(&header, "T", used)?;
    let m = header_usize(&header, "m", used)?;
    if t == 0 || m < 2 {
        return Err(StoreError::malformed(used, "need T >= 1 and m >= 2"));
    }
    let column_line = used + 1;
    let columns: Vec<&str> = lines
        .get(used)
        .ok_or_else(|| StoreError::malformed(column_line, "missing column header"))?
        .split('\t')
        .collect();
    let mut expected = vec!["instance_id".to_string(), "sample".to_string()];
    expected.extend((1..=m).map(|k| format!("p_{k}")));
    if columns != expected {
        return Err(StoreError::malformed(column_line, format!("expected columns {}", expected.join(" "))));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Option<ProbVector>>> = HashMap::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (offset, raw) in lines[used + 1..].iter().enumerate() {
        let line = column_line + 1 + offset;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != m + 2 {
            return Err(StoreError::malformed(line, format!("expected {} fields, found {}", m + 2, fields.len())));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(StoreError::malformed(line, "empty instance id"));
        }
        let s: usize = fields[1]
            .parse()
            .map_err(|_| StoreError::malformed(line, format!("bad sample index {:?}", fields[1])))?;
        let values: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| StoreError::malformed(line, format!("bad probability: {e}")))?;
        let p = ProbVector::new(values, m).map_err(|source| StoreError::InvalidProbabilities {
            instance: id.clone(),
            source,
        })?;
        *counts.entry(id.clone()).or_default() += 1;
        let slots = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            vec![None; t]
        });
        if s < t {
            if slots[s].is_some() {
                return Err(StoreError::malformed(line, format!("sample {s} of {id:?} repeated")));
            }
            slots[s] = Some(p);
        }
    }

    let mut samples = Vec::with_capacity(order.len());
    for id in &order {
        let found = counts[id];
        let slots = rows.remove(id).expect("tracked in order");
        if found != t || slots.iter().any(Option::is_none) {
            return Err(StoreError::InconsistentT {
                instance: id.clone(),
                expected: t,
                found,
            });
        }
        samples.push(slots.into_iter().map(|s| s.expect("checked")).collect());
    }
    SampleMatrix::new(model_id, m, order, samples).map_err(|e| StoreError::malformed(used, e.to_string()))
}

pub fn save_samples(path: impl AsRef<Path>, matrix: &SampleMatrix) -> Result<(), StoreError> {
    write_atomic(path, write_samples(matrix).as_bytes())
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<SampleMatrix, StoreError> {
    read_samples(&read_to_string(path.as_ref())?)
}
