//! Dataset files: one sample per line, two whitespace-separated decimals.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Point, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub points: Vec<Point>,
}

impl Dataset {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("dataset", "no samples"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("dataset", format!("sample {i} is not finite")));
        }
        Ok(Dataset { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(format!(
                    "line {}: expected 2 values, found {}",
                    lineno + 1,
                    fields.len()
                ));
            }
            let mut p = [0.0; 2];
            for (slot, f) in p.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| format!("line {}: bad number {f:?}", lineno + 1))?;
            }
            points.push(p);
        }
        Dataset::new(points).map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|r| Error::format(path, r))
    }

    /// `# x y` header, then one point per line in the shortest round-tripping
    /// decimal representation.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 40 + 6);
        out.push_str("# x y\n");
        for p in &self.points {
            let _ = writeln!(out, "{} {}", p[0], p[1]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Per-coordinate mean and standard deviation.
    pub fn summary(&self) -> ([f64; 2], [f64; 2]) {
        let n = self.points.len() as f64;
        let mut mean = [0.0; 2];
        for p in &self.points {
            mean[0] += p[0] / n;
            mean[1] += p[1] / n;
        }
        let mut var = [0.0; 2];
        for p in &self.points {
            var[0] += (p[0] - mean[0]).powi(2) / n;
            var[1] += (p[1] - mean[1]).powi(2) / n;
        }
        (mean, [var[0].sqrt(), var[1].sqrt()])
    }
}
