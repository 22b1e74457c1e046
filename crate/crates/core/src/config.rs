//! Experiment configuration files.
//!
//! A config file is sectioned key-value text (TOML syntax) whose sections
//! mirror [`ExperimentSpec`]:
//!
//! ```toml
//! [experiment]
//! kind = "uniqueness_vs_distance"
//! trials = 200
//! seed = 7
//!
//! [topology]
//! users = 4
//! antennas = ["2x2", "4x2"]
//! d_qq = 15.0
//! d_rq_grid = [15, 20, 30, 45, 70, 100, 150, 250, 500]
//!
//! [power]
//! budget_db = 10
//! ```
//!
//! Omitted keys take their defaults and unknown keys are rejected. Every
//! error message starts with the offending line.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::ExperimentSpec;

const SECTIONS: [&str; 5] = ["experiment", "topology", "power", "game", "control"];

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(1);
        Error::Config(format!("line {line}: {}", e.message().trim()))
    })?;
    validate_in(text, &spec)?;
    Ok(spec)
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Validates `spec`, attributing failures to the line of the key involved.
pub fn validate_in(text: &str, spec: &ExperimentSpec) -> Result<()> {
    spec.validate().map_err(|e| {
        let message = match e {
            Error::Config(m) => m,
            other => other.to_string(),
        };
        let line = key_in_message(&message).map(|(s, k)| locate(text, s, k)).unwrap_or(1);
        Error::Config(format!("line {line}: {message}"))
    })
}

/// The resolved configuration as config-file text.
pub fn render_config(spec: &ExperimentSpec) -> String {
    toml::to_string(spec).expect("experiment specs always serialize")
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn key_in_message(message: &str) -> Option<(&str, &str)> {
    message
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'))
        .filter_map(|tok| tok.split_once('.'))
        .find(|(section, key)| SECTIONS.contains(section) && !key.is_empty())
}

/// Line of `key` inside `[section]`, else of the section header, else the
/// last line.
fn locate(text: &str, section: &str, key: &str) -> usize {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line == header;
            if in_section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    header_line.unwrap_or_else(|| text.lines().count().max(1))
}
