//! The build manifest: one JSON object per scene, one scene per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scene::{SceneMetadata, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Cell index in the protocol grid; also the caption stream index.
    pub index: u64,
    pub spec: SceneSpec,
    pub metadata: SceneMetadata,
    /// Relative to the dataset root.
    pub image_path: String,
    pub mask_paths: Vec<String>,
    /// One inclusive pixel box `[x_min, y_min, x_max, y_max]` per threat.
    pub boxes_px: Vec<[u32; 4]>,
    pub caption: String,
    /// Byte ranges of each threat's noun phrase ("a plier") in `caption`.
    pub caption_spans: Vec<[usize; 2]>,
}

impl ManifestRecord {
    pub fn image_size(&self) -> (u32, u32) {
        (self.spec.image_size[0], self.spec.image_size[1])
    }
}

pub fn scene_id(index: u64) -> String {
    format!("stcray_{index:06}")
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_manifest(path: &Path) -> io::Result<Vec<ManifestRecord>> {
    read_jsonl(path)
}
