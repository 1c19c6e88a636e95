use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_to_string;
use crate::error::StoreError;
use crate::types::{validate_prob_vector, Dataset, InstanceStatus, ProbVector, PROB_TOLERANCE};

/// One annotator decision, as shown and recorded at decision time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub instance_id: String,
    pub annotator_id: String,
    pub assigned_label: usize,
    pub hint: ProbVector,
    pub variance_shown: f64,
    /// UTC milliseconds since the epoch.
    pub timestamp: u64,
    pub round: u32,
}

impl AnnotationEvent {
    fn order_key(&self) -> (u32, u64) {
        (self.round, self.timestamp)
    }
}

/// A dataset snapshot plus its append-only annotation log.
///
/// The effective label of an instance is the assigned label of its event
/// with the greatest `(round, timestamp)`, or its gold label when it has no
/// events.
#[derive(Debug, Clone)]
pub struct ProjectStore {
    dataset: Dataset,
    positions: HashMap<String, usize>,
    events: Vec<AnnotationEvent>,
    latest: HashMap<String, usize>,
    annotator_keys: HashSet<(String, u32, String)>,
    time_keys: HashSet<(String, u32, u64)>,
    log_path: Option<PathBuf>,
}

impl ProjectStore {
    /// An in-memory store with an empty log.
    pub fn new(dataset: Dataset) -> Self {
        let positions = dataset.instances().iter().enumerate().map(|(i, inst)| (inst.id.clone(), i)).collect();
        Self {
            dataset,
            positions,
            events: Vec::new(),
            latest: HashMap::new(),
            annotator_keys: HashSet::new(),
            time_keys: HashSet::new(),
            log_path: None,
        }
    }

    /// Rebuilds the store state from a snapshot and a full event log.
    pub fn replay(dataset: Dataset, events: impl IntoIterator<Item = AnnotationEvent>) -> Result<Self, StoreError> {
        let mut store = Self::new(dataset);
        for event in events {
            store.validate(&event)?;
            store.record(event);
        }
        Ok(store)
    }

    /// Opens a store backed by a JSON-lines log file, replaying whatever the
    /// file already holds. The file is created on first append.
    pub fn open(dataset: Dataset, log_path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let log_path = log_path.into();
        let events = if log_path.exists() {
            read_events(&read_to_string(&log_path)?)?
        } else {
            Vec::new()
        };
        let mut store = Self::replay(dataset, events)?;
        store.log_path = Some(log_path);
        Ok(store)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    pub fn validate(&self, event: &AnnotationEvent) -> Result<(), StoreError> {
        if !self.positions.contains_key(&event.instance_id) {
            return Err(StoreError::UnknownInstance(event.instance_id.clone()));
        }
        let m = self.dataset.label_space().num_classes();
        if event.assigned_label >= m {
            return Err(StoreError::InvalidLabel {
                label: event.assigned_label,
                num_classes: m,
            });
        }
        validate_prob_vector(event.hint.values(), m, PROB_TOLERANCE).map_err(|source| {
            StoreError::InvalidProbabilities {
                instance: event.instance_id.clone(),
                source,
            }
        })?;
        if !event.variance_shown.is_finite() || event.variance_shown < 0.0 {
            return Err(StoreError::InvalidEvent("variance_shown must be a finite non-negative number".into()));
        }
        let by_annotator = (event.instance_id.clone(), event.round, event.annotator_id.clone());
        let by_time = (event.instance_id.clone(), event.round, event.timestamp);
        if self.annotator_keys.contains(&by_annotator) || self.time_keys.contains(&by_time) {
            return Err(StoreError::DuplicateEvent {
                instance: event.instance_id.clone(),
                round: event.round,
            });
        }
        Ok(())
    }

    fn record(&mut self, event: AnnotationEvent) {
        self.annotator_keys
            .insert((event.instance_id.clone(), event.round, event.annotator_id.clone()));
        self.time_keys.insert((event.instance_id.clone(), event.round, event.timestamp));
        let idx = self.events.len();
        let newer = match self.latest.get(&event.instance_id) {
            Some(&prev) => event.order_key() > self.events[prev].order_key(),
            None => true,
        };
        if newer {
            self.latest.insert(event.instance_id.clone(), idx);
        }
        self.events.push(event);
    }

    /// Validates, persists (when file-backed) and applies an event. Returns
    /// the instance's new effective label.
    pub fn append(&mut self, event: AnnotationEvent) -> Result<usize, StoreError> {
        self.validate(&event)?;
        if let Some(path) = &self.log_path {
            let mut line = serde_json::to_string(&event).map_err(|e| StoreError::Unwritable(e.to_string()))?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| StoreError::io(path, e))?;
            f.write_all(line.as_bytes())
                .and_then(|()| f.sync_data())
                .map_err(|e| StoreError::io(path, e))?;
        }
        let id = event.instance_id.clone();
        self.record(event);
        Ok(self.effective_label(&id)?.expect("annotated instance has a label"))
    }

    pub fn latest_event(&self, id: &str) -> Option<&AnnotationEvent> {
        self.latest.get(id).map(|&i| &self.events[i])
    }

    pub fn effective_label(&self, id: &str) -> Result<Option<usize>, StoreError> {
        let pos = *self.positions.get(id).ok_or_else(|| StoreError::UnknownInstance(id.into()))?;
        Ok(match self.latest_event(id) {
            Some(e) => Some(e.assigned_label),
            None => self.dataset.instances()[pos].gold_label,
        })
    }

    pub fn status(&self, id: &str) -> Result<InstanceStatus, StoreError> {
        let pos = *self.positions.get(id).ok_or_else(|| StoreError::UnknownInstance(id.into()))?;
        Ok(if self.latest.contains_key(id) {
            InstanceStatus::Reannotated
        } else {
            self.dataset.instances()[pos].status
        })
    }

    /// Effective label per instance id.
    pub fn effective_labels(&self) -> HashMap<String, Option<usize>> {
        self.dataset
            .instances()
            .iter()
            .map(|inst| (inst.id.clone(), self.effective_label(&inst.id).expect("known id")))
            .collect()
    }

    /// The snapshot with effective labels and statuses applied.
    pub fn effective_dataset(&self) -> Dataset {
        let instances = self
            .dataset
            .instances()
            .iter()
            .map(|inst| match self.latest_event(&inst.id) {
                Some(e) => crate::types::Instance {
                    gold_label: Some(e.assigned_label),
                    status: InstanceStatus::Reannotated,
                    ..inst.clone()
                },
                None => inst.clone(),
            })
            .collect();
        self.dataset.with_instances(instances).expect("labels validated on append")
    }

    /// Number of instances with at least one event.
    pub fn resolved_count(&self) -> usize {
        self.latest.len()
    }
}

pub fn read_events(text: &str) -> Result<Vec<AnnotationEvent>, StoreError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| StoreError::malformed(i + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Instance, LabelSpace, SplitTag};
    use proptest::prelude::*;

    fn dataset() -> Dataset {
        Dataset::new(
            LabelSpace::binary(),
            vec![
                Instance::new("a", "one", Some(0)),
                Instance::new("b", "two", Some(1)),
                Instance::new("c", "three", None),
            ],
            SplitTag::Train,
        )
        .unwrap()
    }

    fn event(id: &str, annotator: &str, label: usize, round: u32, timestamp: u64) -> AnnotationEvent {
        AnnotationEvent {
            instance_id: id.into(),
            annotator_id: annotator.into(),
            assigned_label: label,
            hint: ProbVector::new(vec![0.4, 0.6], 2).unwrap(),
            variance_shown: 0.02,
            timestamp,
            round,
        }
    }

    #[test]
    fn first_event_sets_label_and_status() {
        let mut s = ProjectStore::new(dataset());
        assert_eq!(s.append(event("a", "ann", 1, 1, 10)).unwrap(), 1);
        assert_eq!(s.effective_label("a").unwrap(), Some(1));
        assert_eq!(s.status("a").unwrap(), InstanceStatus::Reannotated);
        assert_eq!(s.effective_label("b").unwrap(), Some(1));
        assert_eq!(s.effective_label("c").unwrap(), None);
    }

    #[test]
    fn later_round_wins_regardless_of_arrival_order() {
        let mut s = ProjectStore::new(dataset());
        s.append(event("a", "x", 1, 2, 5)).unwrap();
        assert_eq!(s.append(event("a", "y", 0, 1, 99)).unwrap(), 1);
        s.append(event("b", "x", 0, 1, 1)).unwrap();
        assert_eq!(s.append(event("b", "y", 1, 1, 2)).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_events() {
        let mut s = ProjectStore::new(dataset());
        assert!(matches!(s.append(event("zz", "x", 0, 1, 1)), Err(StoreError::UnknownInstance(_))));
        assert!(matches!(s.append(event("a", "x", 2, 1, 1)), Err(StoreError::InvalidLabel { label: 2, .. })));
        s.append(event("a", "x", 0, 1, 1)).unwrap();
        assert!(matches!(s.append(event("a", "x", 1, 1, 2)), Err(StoreError::DuplicateEvent { round: 1, .. })));
        assert!(matches!(s.append(event("a", "y", 1, 1, 1)), Err(StoreError::DuplicateEvent { .. })));
        let mut bad_hint = event("b", "x", 0, 1, 1);
        bad_hint.hint = serde_json::from_str("[0.9, 0.9]").unwrap();
        assert!(matches!(s.append(bad_hint), Err(StoreError::InvalidProbabilities { .. })));
        assert_eq!(s.events().len(), 1);
    }

    #[test]
    fn file_backed_store_reopens_to_same_state() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let mut s = ProjectStore::open(dataset(), &log).unwrap();
        s.append(event("a", "x", 1, 1, 1)).unwrap();
        s.append(event("c", "x", 0, 1, 2)).unwrap();
        assert!(s.append(event("c", "x", 1, 1, 3)).is_err());
        let reopened = ProjectStore::open(dataset(), &log).unwrap();
        assert_eq!(reopened.events(), s.events());
        assert_eq!(reopened.effective_labels(), s.effective_labels());
        assert_eq!(reopened.effective_dataset(), s.effective_dataset());
    }

    proptest! {
        #[test]
        fn replay_reproduces_effective_labels(
            raw in prop::collection::vec((0usize..3, 0usize..3, 0usize..2, 0u32..3, 0u64..4), 0..30)
        ) {
            let ids = ["a", "b", "c"];
            let mut live = ProjectStore::new(dataset());
            for (i, ann, label, round, ts) in raw {
                let _ = live.append(event(ids[i], &format!("ann{ann}"), label, round, ts));
            }
            let replayed = ProjectStore::replay(dataset(), live.events().to_vec()).unwrap();
            prop_assert_eq!(replayed.effective_labels(), live.effective_labels());
            prop_assert_eq!(replayed.effective_dataset(), live.effective_dataset());
        }
    }
}
