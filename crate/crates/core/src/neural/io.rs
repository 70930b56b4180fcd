use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, Layer, NetworkArch, NeuralError, QNetwork};

/// Version tag written into every weight file.
pub const WEIGHTS_FORMAT: &str = "bedwarden-weights-1";

#[derive(Serialize)]
struct WeightFileRef<'a> {
    format: &'static str,
    architecture: &'a NetworkArch,
    body: &'a [Layer],
    head: &'a Head,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    format: String,
    architecture: NetworkArch,
    body: Vec<Layer>,
    head: Head,
}

pub(crate) fn to_json(net: &QNetwork) -> String {
    serde_json::to_string_pretty(&WeightFileRef {
        format: WEIGHTS_FORMAT,
        architecture: net.arch(),
        body: net.body(),
        head: net.head(),
    })
    .expect("weights serialise")
}

pub(crate) fn from_json(text: &str, path: &str) -> Result<QNetwork, NeuralError> {
    let format_err = |message: String| NeuralError::Format {
        path: path.to_string(),
        message,
    };
    let file: WeightFile = serde_json::from_str(text).map_err(|e| format_err(e.to_string()))?;
    if file.format != WEIGHTS_FORMAT {
        return Err(format_err(format!(
            "unsupported format {:?}, expected {WEIGHTS_FORMAT:?}",
            file.format
        )));
    }
    QNetwork::from_parts(file.architecture, file.body, file.head).map_err(format_err)
}

/// Writes the architecture descriptor and all parameters as JSON. Floats are
/// written in shortest round-trip form, so reloading is lossless.
pub fn save_weights(net: &QNetwork, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    let path = path.as_ref();
    fs::write(path, to_json(net)).map_err(|source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<QNetwork, NeuralError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text, &path.display().to_string())
}
