//! On-disk formats.
//!
//! Matrix container: the 8 bytes `HAMATRX1`, then `rows` and `cols` as
//! little-endian `u64`, then `rows * cols` little-endian `f64` in row-major
//! order. A dataset directory holds one container per subject, an optional
//! labels file (one integer per line) and a JSON manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LabelVector, LabeledDataset, SubjectData};
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"HAMATRX1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: Vec<ManifestSubject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    pub t: usize,
    pub v: usize,
    #[serde(default)]
    pub standardized: bool,
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * m.len());
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::schema(format!("{} is not a matrix container", path.display())));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(24))
        .ok_or_else(|| Error::schema(format!("{}: header dimensions overflow", path.display())))?;
    if bytes.len() != expected {
        return Err(Error::schema(format!(
            "{}: expected {} bytes for {}x{}, found {}",
            path.display(),
            expected,
            rows,
            cols,
            bytes.len()
        )));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    Ok(DMatrix::from_row_iterator(rows, cols, data))
}

pub fn write_labels(path: &Path, labels: &LabelVector) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for y in labels.as_slice() {
        writeln!(w, "{y}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let y = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<usize>()
                .map_err(|_| Error::schema(format!("{} line {}: not a class id: {l:?}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    LabelVector::from_labels(y).map_err(|e| Error::schema(format!("{}: {e}", path.display())))
}

/// Plain numeric CSV, no header, one row per time point.
pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::schema(format!("{}: {other:?}", path.display())),
        })?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::schema(format!("{}: ragged row {}", path.display(), rows + 1)));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::schema(format!("{}: not a number: {field:?}", path.display())))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &values))
}

fn subject_file_name(index: usize) -> String {
    format!("subject_{index:03}.bin")
}

/// Writes `manifest.json`, one container per subject and `labels.txt` when
/// the dataset is labeled.
pub fn save_dataset(ds: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut subjects = Vec::with_capacity(ds.num_subjects());
    for (i, s) in ds.subjects().iter().enumerate() {
        let file = subject_file_name(i);
        write_matrix(&dir.join(&file), s.x())?;
        subjects.push(ManifestSubject {
            id: s.subject_id().to_string(),
            file,
        });
    }
    let labels_file = match ds.labels() {
        Some(l) => {
            write_labels(&dir.join("labels.txt"), l)?;
            Some("labels.txt".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        subjects,
        labels_file,
        t: ds.t(),
        v: ds.v(),
        standardized: ds.subjects().iter().all(SubjectData::is_standardized),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_dataset(manifest_path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::schema(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let x = read_matrix(&base.join(&entry.file))?;
        if x.nrows() != manifest.t || x.ncols() != manifest.v {
            return Err(Error::schema(format!(
                "subject {} is {}x{}, manifest says {}x{}",
                entry.id,
                x.nrows(),
                x.ncols(),
                manifest.t,
                manifest.v
            )));
        }
        let s = SubjectData::new(entry.id.clone(), x, manifest.standardized)
            .map_err(|e| Error::schema(format!("subject {}: {e}", entry.id)))?;
        subjects.push(s);
    }
    let labels = match &manifest.labels_file {
        Some(f) => {
            let path = base.join(f);
            if !path.is_file() {
                return Err(Error::schema(format!("manifest names labels file {} which does not exist", path.display())));
            }
            Some(read_labels(&path)?)
        }
        None => None,
    };
    LabeledDataset::new(subjects, labels)
}
