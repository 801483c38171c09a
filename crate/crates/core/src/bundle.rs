//! Export bundles: the directory (or zip) layout holding an experiment's
//! configuration, participant models, event log, simulation CSVs and
//! analytics.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use thiserror::Error;
use zip::write::SimpleFileOptions;

use crate::analytics::{analytics_report, AnalyticsReport, ReportScope};
use crate::events::{import_jsonl, ActionEvent, EventLog, ImportError};
use crate::experiment::Experiment;
use crate::model::Model;

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const MODELS_FILE: &str = "models.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const ANALYTICS_FILE: &str = "analytics.json";
pub const SIMULATIONS_DIR: &str = "simulations";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error(transparent)]
    Events(#[from] ImportError),
    #[error("zip archive: {0}")]
    Zip(#[from] zip::result::ZipError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(file: &str) -> impl FnOnce(serde_json::Error) -> BundleError + '_ {
    move |e| BundleError::Format {
        file: file.to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportBundle {
    pub experiment: Experiment,
    /// Sorted by id.
    pub models: Vec<Model>,
    pub events: Vec<ActionEvent>,
    /// Batch id to batch CSV.
    pub simulations: BTreeMap<String, String>,
    pub analytics: AnalyticsReport,
}

/// Renders models as a canonical JSON array.
pub fn models_json(models: &[Model]) -> String {
    if models.is_empty() {
        return "[]\n".into();
    }
    let body: Vec<String> = models.iter().map(Model::to_json).collect();
    format!("[\n{}\n]\n", body.join(",\n"))
}

pub fn parse_models(text: &str) -> Result<Vec<Model>, BundleError> {
    let mut models: Vec<Model> = serde_json::from_str(text).map_err(format_err(MODELS_FILE))?;
    models.iter_mut().for_each(Model::canonicalize);
    Ok(models)
}

pub fn parse_experiment(text: &str) -> Result<Experiment, BundleError> {
    serde_json::from_str(text).map_err(format_err(EXPERIMENT_FILE))
}

/// The report for an experiment's events and models.
pub fn report_for(
    experiment: &Experiment,
    events: &[ActionEvent],
    models: &[Model],
) -> AnalyticsReport {
    let scope = ReportScope::of_experiment(experiment, events);
    analytics_report(&scope, events, models)
}

impl ExportBundle {
    pub fn assemble(
        experiment: Experiment,
        mut models: Vec<Model>,
        events: Vec<ActionEvent>,
        simulations: BTreeMap<String, String>,
    ) -> Self {
        models.iter_mut().for_each(Model::canonicalize);
        models.sort_by(|a, b| a.id.cmp(&b.id));
        let analytics = report_for(&experiment, &events, &models);
        Self {
            experiment,
            models,
            events,
            simulations,
            analytics,
        }
    }

    pub fn events_jsonl(&self) -> String {
        EventLog::from_events(self.events.clone()).to_jsonl(None)
    }

    /// Relative path to file contents, in archive order.
    pub fn files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files = vec![
            (
                EXPERIMENT_FILE.to_string(),
                format!("{}\n", self.experiment.to_json()).into_bytes(),
            ),
            (
                MODELS_FILE.to_string(),
                models_json(&self.models).into_bytes(),
            ),
            (EVENTS_FILE.to_string(), self.events_jsonl().into_bytes()),
        ];
        for (batch, csv) in &self.simulations {
            files.push((
                format!("{SIMULATIONS_DIR}/{batch}.csv"),
                csv.clone().into_bytes(),
            ));
        }
        files.push((ANALYTICS_FILE.to_string(), self.analytics.to_json_bytes()));
        files
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), BundleError> {
        let dir = dir.as_ref();
        let sims = dir.join(SIMULATIONS_DIR);
        std::fs::create_dir_all(&sims).map_err(io_err(&sims))?;
        for (name, bytes) in self.files() {
            let path = dir.join(&name);
            std::fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// Reads a bundle directory. Analytics are recomputed from the contents
    /// rather than trusted from `analytics.json`.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(io_err(&path))
        };
        let experiment = parse_experiment(&read(EXPERIMENT_FILE)?)?;
        let models = parse_models(&read(MODELS_FILE)?)?;
        let events = import_jsonl(read(EVENTS_FILE)?.as_bytes())?
            .events()
            .to_vec();
        let mut simulations = BTreeMap::new();
        let sims = dir.join(SIMULATIONS_DIR);
        if sims.is_dir() {
            for entry in std::fs::read_dir(&sims).map_err(io_err(&sims))? {
                let path = entry.map_err(io_err(&sims))?.path();
                if let Some(batch) =
                    csv_batch_id(&path.file_name().unwrap_or_default().to_string_lossy())
                {
                    let csv = std::fs::read_to_string(&path).map_err(io_err(&path))?;
                    simulations.insert(batch, csv);
                }
            }
        }
        Ok(Self::assemble(experiment, models, events, simulations))
    }

    /// Zip archive of the directory layout with fixed entry timestamps, so
    /// equal bundles give equal bytes.
    pub fn to_zip(&self) -> Result<Vec<u8>, BundleError> {
        let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let options = SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Deflated)
            .last_modified_time(zip::DateTime::default());
        for (name, bytes) in self.files() {
            zip.start_file(name, options)?;
            zip.write_all(&bytes).map_err(io_err(Path::new("<zip>")))?;
        }
        Ok(zip.finish()?.into_inner())
    }

    pub fn from_zip(bytes: &[u8]) -> Result<Self, BundleError> {
        let mut archive = zip::ZipArchive::new(Cursor::new(bytes))?;
        let mut files: BTreeMap<String, String> = BTreeMap::new();
        for i in 0..archive.len() {
            let mut entry = archive.by_index(i)?;
            let mut text = String::new();
            let name = entry.name().to_string();
            entry
                .read_to_string(&mut text)
                .map_err(io_err(Path::new(&name)))?;
            files.insert(name, text);
        }
        let take = |name: &str| {
            files.get(name).cloned().ok_or_else(|| BundleError::Format {
                file: name.to_string(),
                message: "missing from archive".into(),
            })
        };
        let experiment = parse_experiment(&take(EXPERIMENT_FILE)?)?;
        let models = parse_models(&take(MODELS_FILE)?)?;
        let events = import_jsonl(take(EVENTS_FILE)?.as_bytes())?
            .events()
            .to_vec();
        let simulations = files
            .iter()
            .filter_map(|(name, text)| {
                let file = name.strip_prefix(&format!("{SIMULATIONS_DIR}/"))?;
                Some((csv_batch_id(file)?, text.clone()))
            })
            .collect();
        Ok(Self::assemble(experiment, models, events, simulations))
    }
}

fn csv_batch_id(file: &str) -> Option<String> {
    file.strip_suffix(".csv")
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

/// Analytics for an event log on disk. Sibling `experiment.json` and
/// `models.json` files supply groups, phases and models when present;
/// otherwise groups and phases are inferred from the log.
pub fn replay_path(events_path: impl AsRef<Path>) -> Result<AnalyticsReport, BundleError> {
    let path = events_path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let events = import_jsonl(file)?.events().to_vec();
    let dir = path.parent().unwrap_or(Path::new("."));
    let sibling = |name: &str| -> Result<Option<String>, BundleError> {
        let p = dir.join(name);
        if p.is_file() {
            std::fs::read_to_string(&p).map(Some).map_err(io_err(&p))
        } else {
            Ok(None)
        }
    };
    let models = match sibling(MODELS_FILE)? {
        Some(text) => parse_models(&text)?,
        None => Vec::new(),
    };
    Ok(match sibling(EXPERIMENT_FILE)? {
        Some(text) => report_for(&parse_experiment(&text)?, &events, &models),
        None => analytics_report(&ReportScope::infer(&events), &events, &models),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::epoch;
    use crate::events::{payload, EventDraft};
    use crate::exemplars;
    use crate::experiment::{AssignmentMode, ExperimentSpec, GroupConfig};

    fn experiment() -> Experiment {
        Experiment::create(
            "exp-1",
            ExperimentSpec {
                name: "demo".into(),
                groups: vec![GroupConfig::all_enabled("1"), GroupConfig::all_enabled("2")],
                mode: Some(AssignmentMode::Manual),
                ..ExperimentSpec::default()
            },
            epoch(),
        )
        .unwrap()
    }

    fn populated() -> ExportBundle {
        let mut exp = experiment();
        exp.join("p1", Some("1"), epoch()).unwrap();
        let mut log = EventLog::new();
        let mut model = exemplars::by_name("wolf-sheep-grass").unwrap();
        model.id = "m-1".into();
        let draft = |action, payload| EventDraft {
            ts: epoch(),
            experiment: "exp-1".into(),
            group: "1".into(),
            participant: "p1".into(),
            model: "m-1".into(),
            action,
            payload,
        };
        use crate::events::ActionKind::*;
        log.record(&exp, draft(N, payload::new_model(&model.provenance)))
            .unwrap();
        log.record(
            &exp,
            draft(
                P,
                payload::parameter("Ovis aries", "offspring_count", 1.0, 2.0),
            ),
        )
        .unwrap();
        log.record(&exp, draft(S, payload::simulation("b-1", 2)))
            .unwrap();
        let mut sims = BTreeMap::new();
        sims.insert(
            "b-1".to_string(),
            "run,step,component,value\n0,0,x,1\n".to_string(),
        );
        ExportBundle::assemble(exp, vec![model], log.events().to_vec(), sims)
    }

    #[test]
    fn empty_experiment_bundle() {
        let b = ExportBundle::assemble(experiment(), vec![], vec![], BTreeMap::new());
        assert!(b.models.is_empty() && b.events.is_empty());
        let back = ExportBundle::from_zip(&b.to_zip().unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn dir_and_zip_round_trip() {
        let b = populated();
        let dir = tempfile::tempdir().unwrap();
        b.write_dir(dir.path()).unwrap();
        let back = ExportBundle::read_dir(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.analytics.to_json_bytes(), b.analytics.to_json_bytes());
        let zipped = b.to_zip().unwrap();
        assert_eq!(
            zipped,
            populated().to_zip().unwrap(),
            "zip bytes are deterministic"
        );
        assert_eq!(ExportBundle::from_zip(&zipped).unwrap(), b);
        let on_disk = std::fs::read(dir.path().join(ANALYTICS_FILE)).unwrap();
        assert_eq!(on_disk, b.analytics.to_json_bytes());
    }

    #[test]
    fn replay_uses_sibling_files() {
        let b = populated();
        let dir = tempfile::tempdir().unwrap();
        b.write_dir(dir.path()).unwrap();
        let report = replay_path(dir.path().join(EVENTS_FILE)).unwrap();
        assert_eq!(report.to_json_bytes(), b.analytics.to_json_bytes());
    }

    #[test]
    fn missing_archive_member() {
        let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
        zip.start_file(EVENTS_FILE, SimpleFileOptions::default())
            .unwrap();
        let bytes = zip.finish().unwrap().into_inner();
        assert!(matches!(
            ExportBundle::from_zip(&bytes),
            Err(BundleError::Format { .. })
        ));
    }
}
