use oilsvar::boot::BootError;
use oilsvar::hdecomp::HdError;
use oilsvar::ident::IdentError;
use oilsvar::ingest::IngestError;
use oilsvar::stage2::Stage2Error;
use oilsvar::ts::TsError;
use oilsvar::var::VarError;
use serde::Serialize;

/// One-line error report: `{"error": kind, "message": text}`.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self { error: kind.into(), message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("Usage", message)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }

    pub fn exit_code(&self) -> u8 {
        if self.error == "Usage" {
            2
        } else {
            1
        }
    }
}

fn kind_of<E: std::fmt::Debug>(e: &E) -> String {
    let dbg = format!("{e:?}");
    let end = dbg.find(|c: char| !c.is_alphanumeric()).unwrap_or(dbg.len());
    dbg[..end].to_string()
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(kind_of(&e), e.to_string())
            }
        }
    )*};
}

from_core!(TsError, VarError, IdentError, BootError, HdError, Stage2Error);

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let kind = match &e {
            IngestError::Http { .. } => "HttpError",
            IngestError::Network(_) => "NetworkError",
            IngestError::Parse { .. } => "ParseError",
            IngestError::Gap { .. } => "GapError",
            IngestError::MissingApiKey { .. } => "MissingApiKey",
            IngestError::OfflineCacheMiss { .. } => "OfflineCacheMiss",
            IngestError::Config { .. } => "ConfigError",
            IngestError::Io { .. } => "Io",
            IngestError::Unsupported(_) => "Unsupported",
            IngestError::Ts(_) => "DataError",
        };
        CliError::new(kind, e.to_string())
    }
}
