use std::path::Path;

use anyhow::{bail, Context, Result};
use moebxii::Sample;

/// Observations read from a text file: one positive value per line.
/// Blank lines and anything after `#` are ignored.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub label: Option<String>,
    pub observations: Vec<f64>,
}

impl Dataset {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Self::parse(&text, label).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, label: Option<String>) -> Result<Self> {
        let mut observations = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let x: f64 = body
                .parse()
                .with_context(|| format!("line {}: `{body}` is not a number", i + 1))?;
            if !(x > 0.0 && x.is_finite()) {
                bail!("line {}: observations must be positive and finite, got {x}", i + 1);
            }
            observations.push(x);
        }
        if observations.is_empty() {
            bail!("dataset has no observations");
        }
        Ok(Self { label, observations })
    }

    pub fn sample(&self) -> Result<Sample> {
        Ok(Sample::new(self.observations.clone())?)
    }
}
