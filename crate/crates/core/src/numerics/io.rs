//! Matrix files: the `IFMX` little-endian binary layout and id-keyed JSONL vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const IFMX_MAGIC: &[u8; 4] = b"IFMX";

pub fn encode_ifmx(m: &Matrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * m.as_slice().len());
    buf.extend_from_slice(IFMX_MAGIC);
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_ifmx(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 12 || &bytes[..4] != IFMX_MAGIC {
        return Err(Error::validation("missing IFMX header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 8 {
        return Err(Error::validation(format!(
            "IFMX body holds {} bytes, header promises {rows}x{cols}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, values)
}

pub fn write_ifmx(path: &Path, m: &Matrix) -> Result<()> {
    std::fs::write(path, encode_ifmx(m)).map_err(|e| Error::io(path, e))
}

pub fn read_ifmx(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_ifmx(&bytes)
}

#[derive(Serialize, Deserialize)]
struct VectorLine {
    utterance_id: String,
    vector: Vec<f64>,
}

/// Row-per-utterance embedding matrix with an id index.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    matrix: Matrix,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, matrix: Matrix) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::validation(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                matrix.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(Self { ids, matrix, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.matrix.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Gathers the rows for `ids` in order; any missing id is a validation error naming it.
    pub fn gather<S: AsRef<str>>(&self, ids: &[S]) -> Result<Matrix> {
        let mut missing = Vec::new();
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            match self.index.get(id.as_ref()) {
                Some(&i) => rows.push(i),
                None => missing.push(id.as_ref().to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::validation(format!(
                "{} utterances have no embedding: {}",
                missing.len(),
                preview(&missing)
            )));
        }
        Ok(self.matrix.select_rows(&rows))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut dim = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: VectorLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
            let d = *dim.get_or_insert(parsed.vector.len());
            if parsed.vector.len() != d {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("vector has {} entries, expected {d}", parsed.vector.len()),
                });
            }
            ids.push(parsed.utterance_id);
            values.extend(parsed.vector);
        }
        let matrix = Matrix::from_vec(ids.len(), dim.unwrap_or(0), values)?;
        Self::new(ids, matrix)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, row) in self.ids.iter().zip(self.matrix.row_iter()) {
            let line = serde_json::to_string(&VectorLine {
                utterance_id: id.clone(),
                vector: row.to_vec(),
            })
            .expect("vectors serialize");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn preview(items: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = items.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if items.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", items.len() - SHOWN));
    }
    s
}
