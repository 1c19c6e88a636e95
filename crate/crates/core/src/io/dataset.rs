use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, write_atomic, FORMAT_VERSION};
use crate::error::StoreError;
use crate::types::{Dataset, Instance, InstanceStatus, LabelSpace, SplitTag};

pub const DATASET_FORMAT: &str = "annoqual.dataset";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    classes: Vec<String>,
    positive_class: usize,
    #[serde(default)]
    split: SplitTag,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default)]
    status: InstanceStatus,
}

pub fn write_dataset(dataset: &Dataset) -> String {
    let ls = dataset.label_space();
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        classes: ls.classes().to_vec(),
        positive_class: ls.positive_class(),
        split: dataset.split(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for inst in dataset.instances() {
        let rec = Record {
            id: inst.id.clone(),
            text: inst.text.clone(),
            label: inst.gold_label,
            status: inst.status,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Dataset, StoreError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| StoreError::malformed(1, "empty file"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| StoreError::malformed(1, e.to_string()))?;
    if header.format != DATASET_FORMAT || header.version != FORMAT_VERSION {
        return Err(StoreError::malformed(
            1,
            format!("expected {DATASET_FORMAT} v{FORMAT_VERSION}, found {} v{}", header.format, header.version),
        ));
    }
    let label_space =
        LabelSpace::new(header.classes, header.positive_class).map_err(|e| StoreError::malformed(1, e.to_string()))?;

    let mut seen = HashSet::new();
    let mut instances = Vec::new();
    for (line, raw) in lines {
        let rec: Record = serde_json::from_str(raw).map_err(|e| StoreError::malformed(line, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(StoreError::DuplicateId { line, id: rec.id });
        }
        if let Some(label) = rec.label {
            if !label_space.contains(label) {
                return Err(StoreError::malformed(
                    line,
                    format!("label {label} out of range for {} classes", label_space.num_classes()),
                ));
            }
        }
        instances.push(Instance {
            id: rec.id,
            text: rec.text,
            gold_label: rec.label,
            status: rec.status,
        });
    }
    Ok(Dataset::new(label_space, instances, header.split)?)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), StoreError> {
    write_atomic(path, write_dataset(dataset).as_bytes())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, StoreError> {
    read_dataset(&read_to_string(path.as_ref())?)
}
