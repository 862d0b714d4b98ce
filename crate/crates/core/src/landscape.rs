//! Compliance probability fields over grid cells and velocity levels, with
//! CSV, PGM and JSON metadata export.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::grid::GridSpec;
use crate::hash::ContentHasher;

#[derive(Debug, Error)]
pub enum LandscapeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed landscape file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid landscape: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandscapeKind {
    Raw,
    Calibrated,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub program_hash: String,
    pub star_map_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Probability per (cell, velocity level), optionally also per heading.
///
/// Values are stored layer by layer; layer `level * H + h` where `H` is the
/// number of headings (1 for undirected fields).
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub grid: GridSpec,
    pub velocity_levels: Vec<f64>,
    /// Travel headings in radians; empty for undirected fields.
    pub headings: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: LandscapeKind,
    pub provenance: Provenance,
}

impl Landscape {
    pub fn heading_count(&self) -> usize {
        self.headings.len().max(1)
    }

    pub fn layer_count(&self) -> usize {
        self.velocity_levels.len() * self.heading_count()
    }

    pub fn layer_index(&self, level: usize, heading: usize) -> usize {
        level * self.heading_count() + heading
    }

    pub fn layer(&self, level: usize, heading: usize) -> &[f64] {
        let n = self.grid.cell_count();
        let k = self.layer_index(level, heading);
        &self.values[k * n..(k + 1) * n]
    }

    /// Value of an undirected field (or the first heading of a directed one).
    pub fn value(&self, cell: usize, level: usize) -> f64 {
        self.values[self.layer_index(level, 0) * self.grid.cell_count() + cell]
    }

    pub fn value_directed(&self, cell: usize, level: usize, heading: usize) -> f64 {
        self.values[self.layer_index(level, heading) * self.grid.cell_count() + cell]
    }

    /// Value of the cell containing `x`, or `None` outside the grid.
    pub fn value_at(&self, x: Vec2, level: usize) -> Option<f64> {
        self.grid.locate(x).map(|c| self.value(c, level))
    }

    pub fn validate(&self) -> Result<(), LandscapeError> {
        if !self.grid.is_valid() {
            return Err(LandscapeError::Invalid("grid is empty or malformed".into()));
        }
        if self.velocity_levels.is_empty() || self.velocity_levels.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LandscapeError::Invalid(
                "velocity levels must be non-empty, finite and non-negative".into(),
            ));
        }
        if self.values.len() != self.layer_count() * self.grid.cell_count() {
            return Err(LandscapeError::Invalid(format!(
                "expected {} values, found {}",
                self.layer_count() * self.grid.cell_count(),
                self.values.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LandscapeError::Invalid(format!("value {v} outside [0, 1]")));
        }
        if self.kind == LandscapeKind::Calibrated && self.provenance.flow_hash.is_none() {
            return Err(LandscapeError::Invalid("calibrated landscape without doubt provenance".into()));
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        let g = &self.grid;
        h.f64s(&[g.origin[0], g.origin[1], g.cell_size])
            .u64(g.width as u64)
            .u64(g.height as u64)
            .f64s(&self.velocity_levels)
            .f64s(&self.headings)
            .f64s(&self.values);
        h.finish()
    }

    /// Writes `<stem>.csv`, `<stem>.json` and one 8-bit PGM per layer into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, LandscapeError> {
        self.validate()?;
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| LandscapeError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        {
            let file = fs::File::create(&csv_path).map_err(io(&csv_path))?;
            let mut w = BufWriter::new(file);
            self.write_csv(&mut w).map_err(io(&csv_path))?;
            w.flush().map_err(io(&csv_path))?;
        }
        let mut written = vec![csv_path.clone()];
        let mut pgm_files = Vec::new();
        for level in 0..self.velocity_levels.len() {
            for h in 0..self.heading_count() {
                let name = if self.headings.is_empty() {
                    format!("{stem}_v{level}.pgm")
                } else {
                    format!("{stem}_v{level}_h{h}.pgm")
                };
                let path = dir.join(&name);
                fs::write(&path, self.pgm(level, h)).map_err(io(&path))?;
                pgm_files.push(name);
                written.push(path);
            }
        }
        let meta = Metadata {
            grid: self.grid,
            velocity_levels: self.velocity_levels.clone(),
            headings: self.headings.clone(),
            kind: self.kind,
            provenance: self.provenance.clone(),
            csv: format!("{stem}.csv"),
            pgm: pgm_files,
            content_hash: self.content_hash(),
        };
        let meta_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        fs::write(&meta_path, text).map_err(io(&meta_path))?;
        written.insert(0, meta_path);
        Ok(written)
    }

    /// Reads a landscape from its metadata file and the CSV it names.
    pub fn load(meta_path: &Path) -> Result<Landscape, LandscapeError> {
        let format = |path: &Path, reason: String| LandscapeError::Format {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(meta_path).map_err(|source| LandscapeError::Io {
            path: meta_path.to_path_buf(),
            source,
        })?;
        let meta: Metadata = serde_json::from_str(&text).map_err(|e| format(meta_path, e.to_string()))?;
        let csv_path = meta_path.parent().unwrap_or(Path::new(".")).join(&meta.csv);
        let file = fs::File::open(&csv_path).map_err(|source| LandscapeError::Io {
            path: csv_path.clone(),
            source,
        })?;
        let mut landscape = Landscape {
            grid: meta.grid,
            velocity_levels: meta.velocity_levels,
            headings: meta.headings,
            values: Vec::new(),
            kind: meta.kind,
            provenance: meta.provenance,
        };
        let expected = landscape.layer_count() * landscape.grid.cell_count();
        let directed = !landscape.headings.is_empty();
        let mut values = Vec::with_capacity(expected);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| LandscapeError::Io {
                path: csv_path.clone(),
                source,
            })?;
            if i == 0 {
                continue;
            }
            let last = line
                .rsplit(',')
                .next()
                .ok_or_else(|| format(&csv_path, format!("line {}: empty row", i + 1)))?;
            let fields = line.split(',').count();
            if fields != if directed { 5 } else { 4 } {
                return Err(format(&csv_path, format!("line {}: wrong number of fields", i + 1)));
            }
            let v: f64 = last
                .trim()
                .parse()
                .map_err(|_| format(&csv_path, format!("line {}: bad probability `{last}`", i + 1)))?;
            values.push(v);
        }
        if values.len() != expected {
            return Err(format(
                &csv_path,
                format!("expected {expected} rows, found {}", values.len()),
            ));
        }
        landscape.values = values;
        landscape.validate()?;
        if landscape.content_hash() != meta.content_hash {
            return Err(format(meta_path, "content hash mismatch".into()));
        }
        Ok(landscape)
    }

    /// Rows `x,y,velocity_level[,heading],probability`, layer by layer,
    /// cells in row-major order.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let directed = !self.headings.is_empty();
        if directed {
            writeln!(w, "x,y,velocity_level,heading,probability")?;
        } else {
            writeln!(w, "x,y,velocity_level,probability")?;
        }
        for (level, v) in self.velocity_levels.iter().enumerate() {
            for h in 0..self.heading_count() {
                let layer = self.layer(level, h);
                for (cell, p) in layer.iter().enumerate() {
                    let c = self.grid.center(cell);
                    if directed {
                        writeln!(w, "{},{},{},{},{}", c.x, c.y, v, self.headings[h], p)?;
                    } else {
                        writeln!(w, "{},{},{},{}", c.x, c.y, v, p)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Binary 8-bit PGM of one layer, top row first (north up).
    pub fn pgm(&self, level: usize, heading: usize) -> Vec<u8> {
        let layer = self.layer(level, heading);
        let (w, h) = (self.grid.width, self.grid.height);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for row in (0..h).rev() {
            for col in 0..w {
                let p = layer[self.grid.index(col, row)];
                out.push((p.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    grid: GridSpec,
    velocity_levels: Vec<f64>,
    #[serde(default)]
    headings: Vec<f64>,
    kind: LandscapeKind,
    provenance: Provenance,
    csv: String,
    pgm: Vec<String>,
    content_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Landscape {
        let grid = GridSpec::new([0.0, 0.0], 0.5, 3, 2);
        Landscape {
            grid,
            velocity_levels: vec![0.5, 1.0],
            headings: Vec::new(),
            values: (0..12).map(|i| i as f64 / 11.0).collect(),
            kind: LandscapeKind::Raw,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let l = sample();
        let files = l.save(dir.path(), "raw").unwrap();
        assert_eq!(files.len(), 4);
        let back = Landscape::load(&dir.path().join("raw.json")).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn directed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = sample();
        l.velocity_levels = vec![1.0];
        l.headings = vec![0.0, 1.0];
        l.kind = LandscapeKind::Calibrated;
        l.provenance.flow_hash = Some("abc".into());
        l.save(dir.path(), "cal").unwrap();
        assert_eq!(Landscape::load(&dir.path().join("cal.json")).unwrap(), l);
    }

    #[test]
    fn pgm_layout() {
        let l = sample();
        let img = l.pgm(0, 0);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&img[..header.len()], header);
        // top-left pixel is (col 0, row 1) = cell 3
        assert_eq!(img[header.len()], (3.0f64 / 11.0 * 255.0).round() as u8);
        assert_eq!(img.len(), header.len() + 6);
    }

    #[test]
    fn calibrated_needs_flow_provenance() {
        let mut l = sample();
        l.kind = LandscapeKind::Calibrated;
        assert!(l.validate().is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        let mut l = sample();
        l.values[0] = 1.5;
        assert!(l.validate().is_err());
    }
}
