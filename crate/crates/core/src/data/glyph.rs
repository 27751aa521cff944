//! Binary raster masks read from plain (text) PGM files.

use std::path::Path;

use super::Bounds;
use crate::{Error, Point, Result};

/// Pixels darker than half the maximum grey value are active (ink on paper).
/// Row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphMask {
    width: usize,
    height: usize,
    active: Vec<bool>,
}

impl GlyphMask {
    pub fn new(width: usize, height: usize, active: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || active.len() != width * height {
            return Err(Error::Shape(format!(
                "mask of {width}×{height} needs {} pixels, got {}",
                width * height,
                active.len()
            )));
        }
        Ok(GlyphMask {
            width,
            height,
            active,
        })
    }

    /// Parses a `P2` graymap.
    pub fn parse_pgm(text: &str) -> std::result::Result<Self, String> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        if tokens.next() != Some("P2") {
            return Err("expected plain PGM magic P2".into());
        }
        let mut header = [0usize; 3];
        for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let tok = tokens.next().ok_or(format!("missing {name}"))?;
            *slot = tok.parse().map_err(|_| format!("bad {name} {tok:?}"))?;
        }
        let [width, height, maxval] = header;
        if maxval == 0 {
            return Err("maxval must be positive".into());
        }
        let mut active = Vec::with_capacity(width * height);
        for tok in tokens {
            let v: usize = tok.parse().map_err(|_| format!("bad pixel {tok:?}"))?;
            if v > maxval {
                return Err(format!("pixel {v} exceeds maxval {maxval}"));
            }
            active.push(2 * v < maxval);
        }
        if active.len() != width * height {
            return Err(format!("expected {} pixels, found {}", width * height, active.len()));
        }
        GlyphMask::new(width, height, active).map_err(|e| e.to_string())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_pgm(&text).map_err(|r| Error::format(path, r))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_active(&self, col: usize, row: usize) -> bool {
        col < self.width && row < self.height && self.active[row * self.width + col]
    }

    /// Whether the point, mapped from `bounds` onto the raster, hits an active pixel.
    pub fn is_active_at(&self, p: Point, bounds: &Bounds) -> bool {
        if !bounds.contains(p) {
            return false;
        }
        let fx = (p[0] - bounds.x.0) / (bounds.x.1 - bounds.x.0);
        let fy = (bounds.y.1 - p[1]) / (bounds.y.1 - bounds.y.0);
        let col = ((fx * self.width as f64) as usize).min(self.width - 1);
        let row = ((fy * self.height as f64) as usize).min(self.height - 1);
        self.is_active(col, row)
    }
}
