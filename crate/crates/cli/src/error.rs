use std::fmt;

use serde::Serialize;
use trajkit::classify::ClassifyError;
use trajkit::fusion::FusionError;
use trajkit::ingest::IngestError;
use trajkit::synth::SynthError;
use trajkit::tcr::TrackError;
use trajkit::train::TrainError;

/// A domain failure reported as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            error: kind.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.error, self.message)
    }
}

/// Variant name taken from the `Debug` form, e.g. `MissingWeights("ln1")`.
fn variant<E: fmt::Debug>(e: &E) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric() && c != '_')
        .next()
        .unwrap_or("Error")
        .to_string()
}

fn leaf<E: fmt::Debug + fmt::Display>(e: E) -> CliError {
    CliError::new(&variant(&e), e.to_string())
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        leaf(e)
    }
}

impl From<TrackError> for CliError {
    fn from(e: TrackError) -> Self {
        leaf(e)
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        leaf(e)
    }
}

impl From<ClassifyError> for CliError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::Fusion(f) => f.into(),
            ClassifyError::Track(t) => t.into(),
            other => leaf(other),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Fusion(f) => f.into(),
            other => leaf(other),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Ingest(i) => i.into(),
            other => leaf(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("Json", e.to_string())
    }
}
