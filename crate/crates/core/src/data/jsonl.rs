//! Line-delimited JSON corpus files: a header line followed by one scene
//! per line. Features and soft labels are dropped on write by default and
//! re-synthesized on load from the header seed.

use super::{Corpus, CorpusHeader, SceneInstance, CORPUS_FORMAT};
use crate::error::{Error, Result};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub fn write_corpus(path: &Path, corpus: &Corpus, include_features: bool) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &corpus.header)?;
    w.write_all(b"\n")?;
    for scene in &corpus.scenes {
        if include_features {
            serde_json::to_writer(&mut w, scene)?;
        } else {
            let mut slim = scene.clone();
            for obj in &mut slim.objects {
                obj.feature = None;
                obj.soft_label = None;
            }
            serde_json::to_writer(&mut w, &slim)?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Input(format!("{}: empty corpus file", path.display())))??;
    let header: CorpusHeader = serde_json::from_str(&header_line).map_err(|e| {
        Error::Input(format!(
            "{}: first line is not a corpus header: {e}",
            path.display()
        ))
    })?;
    if header.format != CORPUS_FORMAT {
        return Err(Error::Input(format!(
            "{}: unsupported corpus format {:?} (expected {CORPUS_FORMAT:?})",
            path.display(),
            header.format
        )));
    }

    let mut scenes = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: SceneInstance = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: bad scene: {e}", path.display(), lineno + 2))
        })?;
        scene.validate()?;
        scenes.push(scene);
    }

    Ok(Corpus { header, scenes })
}
