//! Scenes as JSONL, one scene per line.

use std::path::Path;

use ssg_core::scene::Scene;
use ssg_core::synth::quantize;

use crate::{read_text, write_bytes, Error, Result};

/// Coordinates are written with 9 significant digits.
pub fn encode_scenes(scenes: &[Scene]) -> Result<String> {
    let mut out = String::new();
    for s in scenes {
        let mut s = s.clone();
        for inst in &mut s.instances {
            for p in &mut inst.points {
                *p = p.map(quantize);
            }
        }
        let line = serde_json::to_string(&s).map_err(|e| Error::invalid(format!("scene {}: {e}", s.id)))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSONL scenes; blank lines are skipped and errors name the line.
pub fn decode_scenes(text: &str, path: &Path) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn save_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    write_bytes(path, encode_scenes(scenes)?.as_bytes())
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    decode_scenes(&read_text(path)?, path)
}
