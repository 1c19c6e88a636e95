//! Line-oriented file formats and the append-only annotation store.
//!
//! | file          | layout                                                     |
//! |---------------|------------------------------------------------------------|
//! | dataset       | JSON lines: a header object, then `{id, text, label?, status}` |
//! | samples       | TSV: `#` header lines, then `instance_id sample p_1 .. p_m`  |
//! | frame         | TSV: `#` header lines, then `instance_id label model:p_k ..` |
//! | events        | JSON lines of [`AnnotationEvent`]                          |
//! | MM parameters | a single JSON document                                     |

mod dataset;
mod frame;
mod samples;
mod store;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_FORMAT};
pub use frame::{load_frame, read_frame, save_frame, write_frame, FRAME_FORMAT};
pub use samples::{load_samples, read_samples, save_samples, write_samples, SAMPLES_FORMAT};
pub use store::{read_events, AnnotationEvent, ProjectStore};

use crate::error::StoreError;
use crate::mm::MmParams;

pub const FORMAT_VERSION: u32 = 1;

/// Writes `contents` to a sibling temp file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<(), StoreError> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| StoreError::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        StoreError::io(path, e)
    })
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(|e| StoreError::io(path, e))
}

pub fn save_mm_params(path: impl AsRef<Path>, params: &MmParams) -> Result<(), StoreError> {
    write_atomic(path, params.to_json().as_bytes())
}

pub fn load_mm_params(path: impl AsRef<Path>) -> Result<MmParams, StoreError> {
    let text = read_to_string(path.as_ref())?;
    MmParams::from_json(&text).map_err(|e| StoreError::malformed(1, e.to_string()))
}

/// Parses `#key=value` header lines; returns the map and the number of
/// lines consumed.
pub(crate) fn parse_header<'a>(
    lines: &[&'a str],
    magic: &str,
) -> Result<(std::collections::HashMap<&'a str, &'a str>, usize), StoreError> {
    let first = lines.first().ok_or_else(|| StoreError::malformed(1, "empty file"))?;
    let expected = format!("#{magic} v{FORMAT_VERSION}");
    if first.trim_end() != expected {
        return Err(StoreError::malformed(1, format!("expected header {expected:?}")));
    }
    let mut map = std::collections::HashMap::new();
    let mut used = 1;
    for line in &lines[1..] {
        let Some(rest) = line.strip_prefix('#') else { break };
        let (k, v) = rest
            .split_once('=')
            .ok_or_else(|| StoreError::malformed(used + 1, "header line must be #key=value"))?;
        map.insert(k.trim(), v.trim());
        used += 1;
    }
    Ok((map, used))
}

pub(crate) fn header_usize(
    map: &std::collections::HashMap<&str, &str>,
    key: &str,
    line: usize,
) -> Result<usize, StoreError> {
    map.get(key)
        .ok_or_else(|| StoreError::malformed(line, format!("missing header #{key}=")))?
        .parse()
        .map_err(|_| StoreError::malformed(line, format!("header #{key} is not a count")))
}
