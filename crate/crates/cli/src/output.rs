//! Run directories, manifests and file writers.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use codareg::PosteriorDraws;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

/// Digest of one file read or written by a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(role: &str, path: &Path, shown: &str) -> io::Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Self {
            role: role.to_string(),
            path: shown.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Reference component used by a run and how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    /// `auto` or `user`.
    pub mode: String,
    pub index: usize,
    pub component: String,
    /// Component the shape criterion picks; equals `component` in auto mode.
    pub recommended: Option<String>,
    pub tied: Vec<String>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub arguments: Vec<String>,
    pub seed: u64,
    /// Resolved configuration, every key present.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub reference: Option<ReferenceRecord>,
    /// `ok`, or the reason the run stopped.
    pub status: String,
    pub started: String,
    pub finished: String,
}

/// Output directory of one run; records every file written to it.
pub struct RunDir {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl RunDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, role: &str, name: &str, contents: &[u8]) -> io::Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.written.retain(|(_, n)| n != name);
        self.written.push((role.to_string(), name.to_string()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, role: &str, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        text.push(b'\n');
        self.write(role, name, &text)
    }

    pub fn output_digests(&self) -> io::Result<Vec<FileDigest>> {
        self.written
            .iter()
            .map(|(role, name)| FileDigest::of(role, &self.root.join(name), name))
            .collect()
    }

    /// Writes the manifest last so that it can list every other output.
    pub fn finish(mut self, mut manifest: RunManifest) -> io::Result<()> {
        manifest.outputs = self.output_digests()?;
        manifest.finished = timestamp();
        self.write_json("manifest", MANIFEST, &manifest)
    }
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Shortest decimal text that parses back to the same value.
pub fn float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

pub fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).map_err(io::Error::other)?;
    for row in rows {
        writer.write_record(&row).map_err(io::Error::other)?;
    }
    writer.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// `chain,iter,<parameters>` with 1-based chain and iteration numbers.
pub fn draws_csv(draws: &PosteriorDraws) -> io::Result<Vec<u8>> {
    let mut header = vec!["chain".to_string(), "iter".to_string()];
    header.extend(draws.names.iter().cloned());
    let rows = (0..draws.chains).flat_map(|c| {
        (0..draws.samples).map(move |i| {
            let mut row = vec![(c + 1).to_string(), (i + 1).to_string()];
            row.extend(draws.draw(c, i).iter().map(|&v| float(v)));
            row
        })
    });
    csv_bytes(&header, rows)
}

#[derive(Debug, thiserror::Error)]
pub enum DrawsFileError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Shape(#[from] codareg::sampler::DiagnosticError),
}

/// Reads a file written by [`draws_csv`].
pub fn read_draws_csv(path: &Path) -> Result<PosteriorDraws, DrawsFileError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "iter" {
        return Err(DrawsFileError::Malformed {
            line: 1,
            message: "header must start with chain,iter".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| DrawsFileError::Malformed { line, message };
        let chain: usize = record[0].parse().map_err(|_| malformed(format!("bad chain `{}`", &record[0])))?;
        if chain == 0 || chain > chains.len() + 1 {
            return Err(malformed(format!("chain {chain} out of order")));
        }
        if chain > chains.len() {
            chains.push(Vec::new());
        }
        let values = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| malformed(format!("bad value `{v}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        chains[chain - 1].push(values);
    }
    Ok(PosteriorDraws::from_chains(names, chains)?)
}

/// Right-aligned text table; the first column is left-aligned.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - cell.chars().count();
            if i == 0 {
                out.push_str(cell);
                out.push_str(&" ".repeat(pad));
            } else {
                out.push_str("  ");
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut text = line(header.to_vec());
    for row in rows {
        text.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    text
}
