//! Flat `key = value` config files for `fit`. Lines starting with `#` are
//! comments. Recognized keys: `k`, `iters`, `burn_in`, `thin`, `step`,
//! `batch`, `update_center`, `standardize`, `chains`, `seed`, `order`
//! (exact | corrected | first_order). Command-line flags override the file.

use ellipsoid_gaussian::{EgError, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Default, Clone, Debug)]
pub struct FileConfig {
    pub values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(EgError::Parse {
                line: line_no,
                message: format!("expected 'key = value', got '{trimmed}'"),
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        const KNOWN: [&str; 11] = [
            "k", "iters", "burn_in", "thin", "step", "batch", "update_center", "standardize",
            "chains", "seed", "order",
        ];
        for key in values.keys() {
            if !KNOWN.contains(&key.as_str()) {
                return Err(EgError::domain(format!("unknown config key '{key}'")));
            }
        }
        Ok(FileConfig { values })
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| EgError::domain(format!("config key '{key}' has invalid value '{raw}'"))),
        }
    }
}
