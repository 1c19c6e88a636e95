//! Project state behind the HTTP layer. Everything here is synchronous; the
//! router wraps a [`Project`] in a read/write lock.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use annoqual_core::io::{load_dataset, load_frame, load_samples, AnnotationEvent, ProjectStore};
use annoqual_core::mm::{fit_mm, EnsembleFrame, GibbsConfig, MmPredictor};
use annoqual_core::{
    aggregate_samples, rank_and_partition, Budget, InstanceStatus, ProbVector, SampleMatrix, UncertaintyRecord,
};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SAMPLES_DIR: &str = "samples";
pub const ENSEMBLE_FILE: &str = "ensemble.tsv";

/// Where queue hints come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HintSource {
    /// Ensemble posterior fitted on the project's ensemble frame.
    Mm,
    /// Mean of the stochastic samples.
    Mcd,
}

/// Hint source policy: `Auto` uses the ensemble when its frame exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HintMode {
    #[default]
    Auto,
    Force(HintSource),
}

impl std::str::FromStr for HintMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(HintMode::Auto),
            "mm" => Ok(HintMode::Force(HintSource::Mm)),
            "mcd" => Ok(HintMode::Force(HintSource::Mcd)),
            other => Err(format!("unknown hint source {other:?}; expected auto, mm or mcd")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectConfig {
    pub dir: PathBuf,
    /// Share of unresolved instances flagged on each recompute.
    pub fraction: f64,
    pub hint_mode: HintMode,
    pub gibbs: GibbsConfig,
}

impl ProjectConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            fraction: 0.1,
            hint_mode: HintMode::Auto,
            gibbs: GibbsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecomputeSummary {
    /// Instances placed in the queue by this run.
    pub flagged: usize,
    /// Instances with at least one annotation event.
    pub resolved: usize,
    /// Instances without any annotation event.
    pub remaining: usize,
    /// Smallest flagged variance; `null` when nothing was flagged.
    pub threshold: Option<f64>,
    pub hint_source: HintSource,
    pub samples_file: String,
    pub model_id: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub instance_id: String,
    pub text: String,
    pub variance: f64,
    pub hint: ProbVector,
    pub hint_source: HintSource,
    pub current_label: Option<usize>,
    pub status: InstanceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub model_id: String,
    pub num_samples: usize,
    pub mean: ProbVector,
    pub variance: f64,
    pub predicted_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub text: String,
    pub gold_label: Option<usize>,
    pub current_label: Option<usize>,
    pub status: InstanceStatus,
    pub samples: Option<SampleStats>,
    pub hint: Option<ProbVector>,
    pub hint_source: Option<HintSource>,
    /// 1-based position in the latest triage ranking, if flagged.
    pub rank: Option<usize>,
    pub events: Vec<AnnotationEvent>,
}

/// Annotation request body. Fields mirror [`AnnotationEvent`]; the optional
/// ones default to the current hint and variance, round 1 and the current time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub instance_id: String,
    pub annotator_id: String,
    pub assigned_label: usize,
    #[serde(default)]
    pub hint: Option<ProbVector>,
    #[serde(default)]
    pub variance_shown: Option<f64>,
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default)]
    pub round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAck {
    pub instance_id: String,
    pub effective_label: usize,
    pub status: InstanceStatus,
    pub round: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
struct Triage {
    summary: RecomputeSummary,
    num_samples: usize,
    records: HashMap<String, UncertaintyRecord>,
    /// Flagged ids, highest variance first.
    ranking: Vec<String>,
    hints: HashMap<String, (ProbVector, HintSource)>,
}

pub struct Project {
    config: ProjectConfig,
    store: ProjectStore,
    triage: Option<Triage>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// The lexicographically last `*.tsv` file in `dir`.
fn latest_samples_file(dir: &Path) -> Result<PathBuf, ServiceError> {
    let missing = || ServiceError::MissingSamples(dir.display().to_string());
    let entries = match std::fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(missing()),
        Err(e) => return Err(ServiceError::Internal(format!("{}: {e}", dir.display()))),
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    files.pop().ok_or_else(missing)
}

impl Project {
    /// Loads `dataset.jsonl` and replays `events.jsonl` if present.
    pub fn open(config: ProjectConfig) -> Result<Self, ServiceError> {
        if !(0.0..1.0).contains(&config.fraction) {
            return Err(ServiceError::BadRequest(format!("fraction {} must lie in [0, 1)", config.fraction)));
        }
        let dataset = load_dataset(config.dir.join(DATASET_FILE))?;
        let store = ProjectStore::open(dataset, config.dir.join(EVENTS_FILE))?;
        log::info!(
            "opened project {} with {} instances and {} events",
            config.dir.display(),
            store.dataset().len(),
            store.events().len()
        );
        Ok(Self {
            config,
            store,
            triage: None,
        })
    }

    pub fn store(&self) -> &ProjectStore {
        &self.store
    }

    pub fn summary(&self) -> Option<&RecomputeSummary> {
        self.triage.as_ref().map(|t| &t.summary)
    }

    fn is_resolved(&self, id: &str) -> bool {
        self.store.status(id).is_ok_and(InstanceStatus::is_resolved)
    }

    /// Re-runs aggregation, ranking and hint computation from the files on disk.
    pub fn recompute(&mut self) -> Result<RecomputeSummary, ServiceError> {
        let samples_path = latest_samples_file(&self.config.dir.join(SAMPLES_DIR))?;
        let matrix = load_samples(&samples_path)?;
        self.check_samples(&matrix)?;
        let records = aggregate_samples(&matrix).map_err(|e| ServiceError::InvalidSamples(e.to_string()))?;

        let open: Vec<UncertaintyRecord> = records.iter().filter(|r| !self.is_resolved(&r.instance_id)).cloned().collect();
        let partition = rank_and_partition(&open, Budget::Fraction(self.config.fraction))
            .map_err(|e| ServiceError::Internal(e.to_string()))?;

        let mut hints: HashMap<String, (ProbVector, HintSource)> = records
            .iter()
            .map(|r| (r.instance_id.clone(), (r.mean.clone(), HintSource::Mcd)))
            .collect();
        let ensemble_path = self.config.dir.join(ENSEMBLE_FILE);
        let use_mm = match self.config.hint_mode {
            HintMode::Force(HintSource::Mcd) => false,
            HintMode::Force(HintSource::Mm) if !ensemble_path.is_file() => {
                return Err(ServiceError::MissingEnsemble(ensemble_path.display().to_string()))
            }
            HintMode::Force(HintSource::Mm) => true,
            HintMode::Auto => ensemble_path.is_file(),
        };
        if use_mm {
            for (id, hint) in self.ensemble_hints(&ensemble_path)? {
                hints.insert(id, (hint, HintSource::Mm));
            }
        }

        let summary = RecomputeSummary {
            flagged: partition.uncertain.len(),
            resolved: self.store.resolved_count(),
            remaining: self.store.dataset().len() - self.store.resolved_count(),
            threshold: partition.threshold_variance,
            hint_source: if use_mm { HintSource::Mm } else { HintSource::Mcd },
            samples_file: samples_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            model_id: matrix.model_id().to_string(),
            warnings: partition.warnings.clone(),
        };
        log::info!(
            "recomputed triage: {} flagged, {} resolved, threshold {:?}",
            summary.flagged,
            summary.resolved,
            summary.threshold
        );
        self.triage = Some(Triage {
            summary: summary.clone(),
            num_samples: matrix.num_samples(),
            records: records.into_iter().map(|r| (r.instance_id.clone(), r)).collect(),
            ranking: partition.uncertain,
            hints,
        });
        Ok(summary)
    }

    fn check_samples(&self, matrix: &SampleMatrix) -> Result<(), ServiceError> {
        let m = self.store.dataset().label_space().num_classes();
        if matrix.num_classes() != m {
            return Err(ServiceError::InvalidSamples(format!(
                "{} classes in samples, {m} in dataset",
                matrix.num_classes()
            )));
        }
        if let Some(id) = matrix.instance_ids().iter().find(|id| self.store.dataset().get(id).is_none()) {
            return Err(ServiceError::InvalidSamples(format!("unknown instance {id:?}")));
        }
        Ok(())
    }

    /// Fits the ensemble on rows with an effective label and predicts every row.
    fn ensemble_hints(&self, path: &Path) -> Result<Vec<(String, ProbVector)>, ServiceError> {
        let frame = load_frame(path)?;
        let m = self.store.dataset().label_space().num_classes();
        if frame.num_classes() != m {
            return Err(ServiceError::InvalidSamples(format!(
                "{} classes in ensemble frame, {m} in dataset",
                frame.num_classes()
            )));
        }
        let labels = self.store.effective_labels();
        let (rows, train_labels): (Vec<usize>, Vec<usize>) = frame
            .instance_ids()
            .iter()
            .enumerate()
            .filter_map(|(i, id)| labels.get(id).copied().flatten().map(|l| (i, l)))
            .unzip();
        let train: EnsembleFrame = frame.select(&rows).with_labels(Some(train_labels))?;
        let params = fit_mm(&train, &self.config.gibbs)?.params;
        let predictor = MmPredictor::new(&params)?;
        let predictions = predictor.predict_frame(&frame)?;
        Ok(frame.instance_ids().iter().cloned().zip(predictions).collect())
    }

    pub fn queue(&self, limit: usize) -> Result<Vec<QueueEntry>, ServiceError> {
        let triage = self.triage.as_ref().ok_or(ServiceError::TriageNotComputed)?;
        let entries = triage
            .ranking
            .iter()
            .filter(|id| !self.is_resolved(id))
            .take(limit)
            .map(|id| {
                let inst = self.store.dataset().get(id).expect("checked on recompute");
                let (hint, source) = triage.hints[id].clone();
                QueueEntry {
                    instance_id: id.clone(),
                    text: inst.text.clone(),
                    variance: triage.records[id].variance,
                    hint,
                    hint_source: source,
                    current_label: self.store.effective_label(id).ok().flatten(),
                    status: InstanceStatus::Flagged,
                }
            })
            .collect();
        Ok(entries)
    }

    pub fn instance(&self, id: &str) -> Result<InstanceRecord, ServiceError> {
        let inst = self
            .store
            .dataset()
            .get(id)
            .ok_or_else(|| annoqual_core::StoreError::UnknownInstance(id.into()))?;
        let triage = self.triage.as_ref();
        let samples = triage.and_then(|t| {
            t.records.get(id).map(|r| SampleStats {
                model_id: t.summary.model_id.clone(),
                num_samples: t.num_samples,
                mean: r.mean.clone(),
                variance: r.variance,
                predicted_class: r.predicted_class,
            })
        });
        let hint = triage.and_then(|t| t.hints.get(id).cloned());
        let rank = triage.and_then(|t| t.ranking.iter().position(|r| r == id)).map(|p| p + 1);
        let mut status = self.store.status(id)?;
        if rank.is_some() && !status.is_resolved() {
            status = InstanceStatus::Flagged;
        }
        Ok(InstanceRecord {
            instance_id: inst.id.clone(),
            text: inst.text.clone(),
            gold_label: inst.gold_label,
            current_label: self.store.effective_label(id)?,
            status,
            samples,
            hint_source: hint.as_ref().map(|h| h.1),
            hint: hint.map(|h| h.0),
            rank,
            events: self.store.events().iter().filter(|e| e.instance_id == id).cloned().collect(),
        })
    }

    pub fn annotate(&mut self, req: AnnotationRequest) -> Result<AnnotationAck, ServiceError> {
        let m = self.store.dataset().label_space().num_classes();
        let shown = self.triage.as_ref().and_then(|t| {
            let hint = t.hints.get(&req.instance_id)?.0.clone();
            let variance = t.records.get(&req.instance_id)?.variance;
            Some((hint, variance))
        });
        let round = req.round.unwrap_or(1);
        let timestamp = req.timestamp.unwrap_or_else(|| {
            // Keep server-stamped events on one instance strictly ordered.
            let floor = self
                .store
                .events()
                .iter()
                .filter(|e| e.instance_id == req.instance_id && e.round == round)
                .map(|e| e.timestamp + 1)
                .max()
                .unwrap_or(0);
            now_ms().max(floor)
        });
        let event = AnnotationEvent {
            instance_id: req.instance_id,
            annotator_id: req.annotator_id,
            assigned_label: req.assigned_label,
            hint: req
                .hint
                .or_else(|| shown.as_ref().map(|s| s.0.clone()))
                .unwrap_or_else(|| ProbVector::uniform(m)),
            variance_shown: req.variance_shown.or(shown.map(|s| s.1)).unwrap_or(0.0),
            timestamp,
            round,
        };
        let id = event.instance_id.clone();
        let effective_label = self.store.append(event)?;
        log::info!("instance {id} annotated as {effective_label} in round {round}");
        Ok(AnnotationAck {
            instance_id: id,
            effective_label,
            status: InstanceStatus::Reannotated,
            round,
            timestamp,
        })
    }
}
