//! Embedding files and atomic file writes.
//!
//! Embeddings use the common word2vec text layout: a header line `|V| d`
//! followed by one `word v1 ... vd` line per word. Values are written with
//! the shortest representation that parses back to the same `f64`.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Words paired with their embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    pub words: Vec<String>,
    pub vectors: Matrix,
}

impl WordVectors {
    pub fn new(words: Vec<String>, vectors: Matrix) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::invalid(format!(
                "{} words for {} embedding rows",
                words.len(),
                vectors.rows()
            )));
        }
        Ok(WordVectors { words, vectors })
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.vectors.rows(), self.vectors.cols())?;
        for (word, row) in self.words.iter().zip(self.vectors.iter_rows()) {
            write!(out, "{word}")?;
            for v in row {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))??;
        let dims: Vec<&str> = header.split_whitespace().collect();
        let (n, d) = match dims.as_slice() {
            [n, d] => (
                n.parse::<usize>().map_err(|e| parse_err(1, format!("bad row count: {e}")))?,
                d.parse::<usize>().map_err(|e| parse_err(1, format!("bad dimension: {e}")))?,
            ),
            _ => return Err(parse_err(1, "header must be `<rows> <dim>`".into())),
        };

        let mut words = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap();
            let before = data.len();
            for f in fields {
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad value {f:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, format!("non-finite value {f:?}")));
                }
                data.push(v);
            }
            if data.len() - before != d {
                return Err(parse_err(
                    lineno,
                    format!("expected {d} values, found {}", data.len() - before),
                ));
            }
            words.push(word.to_string());
        }
        if words.len() != n {
            return Err(parse_err(
                words.len() + 1,
                format!("header promises {n} rows, found {}", words.len()),
            ));
        }
        WordVectors::new(words, Matrix::from_vec(n, d, data))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        WordVectors::read(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write(w))
    }
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
