//! Dataset file formats.
//!
//! Two interchangeable layouts:
//!  (a) directory form — `manifest.json` plus one CSV per sample
//!      (p rows of q comma-separated values);
//!  (b) flat form — a single CSV, one row per sample: label followed by
//!      the pq values in column-major (vec) order, preceded by a
//!      `# p=<p> q=<q>` dimension line and a header row.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! save→load is bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{unvec, vec_mat, LabeledMatrixSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    Directory,
    Flat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub p: usize,
    pub q: usize,
    /// Optional class names, indexed by label − 1.
    #[serde(default)]
    pub class_labels: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub file: String,
    pub label: usize,
}

fn parse_f64(tok: &str, ctx: &str) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{ctx}: bad number {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue(ctx.to_string()));
    }
    Ok(v)
}

fn sample_csv(x: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", x[(i, j)]));
        }
        out.push('\n');
    }
    out
}

fn parse_sample_csv(text: &str, p: usize, q: usize, ctx: &str) -> Result<DMatrix<f64>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| parse_f64(t, ctx))
            .collect::<Result<_>>()?;
        if vals.len() != q {
            return Err(Error::Schema(format!(
                "{ctx}: row has {} values, expected {q}",
                vals.len()
            )));
        }
        rows.push(vals);
    }
    if rows.len() != p {
        return Err(Error::Schema(format!(
            "{ctx}: {} rows, expected {p}",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(p, q, |i, j| rows[i][j]))
}

/// Writes the directory form. `class_labels` may be empty.
pub fn save_dataset_dir(
    samples: &[LabeledMatrixSample],
    dir: &Path,
    class_labels: &[String],
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Schema("cannot save an empty dataset".into()));
    }
    fs::create_dir_all(dir)?;
    let (p, q) = (samples[0].x.nrows(), samples[0].x.ncols());
    let mut records = Vec::with_capacity(samples.len());
    for (idx, s) in samples.iter().enumerate() {
        let file = format!("sample_{idx:05}.csv");
        fs::write(dir.join(&file), sample_csv(&s.x))?;
        records.push(SampleRecord {
            file,
            label: s.label,
        });
    }
    let manifest = Manifest {
        p,
        q,
        class_labels: class_labels.to_vec(),
        samples: records,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Schema(format!("manifest: {e}")))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<Vec<LabeledMatrixSample>> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest.json: {e}")))?;
    if manifest.p * manifest.q == 0 {
        return Err(Error::Schema(
            "manifest declares an empty matrix shape".into(),
        ));
    }
    let max_label = manifest.class_labels.len();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        if rec.label == 0 || (max_label > 0 && rec.label > max_label) {
            return Err(Error::Schema(format!(
                "label {} outside the manifest's class set",
                rec.label
            )));
        }
        let text = fs::read_to_string(dir.join(&rec.file))?;
        let x = parse_sample_csv(&text, manifest.p, manifest.q, &rec.file)?;
        samples.push(LabeledMatrixSample::new(x, rec.label)?);
    }
    Ok(samples)
}

/// Writes the flat form: dimension comment, header, one row per sample with
/// values in column-major vec order.
pub fn save_dataset_flat(samples: &[LabeledMatrixSample], path: &Path) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Schema("cannot save an empty dataset".into()));
    }
    let (p, q) = (samples[0].x.nrows(), samples[0].x.ncols());
    let mut out = format!("# p={p} q={q}\n");
    out.push_str("label");
    for k in 1..=p * q {
        out.push_str(&format!(",v{k}"));
    }
    out.push('\n');
    for s in samples {
        out.push_str(&format!("{}", s.label));
        for v in vec_mat(&s.x).iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset_flat(path: &Path) -> Result<Vec<LabeledMatrixSample>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().peekable();
    let dims = lines
        .next()
        .ok_or_else(|| Error::Parse("empty flat dataset file".into()))?;
    let (p, q) = parse_dims_line(dims)?;
    // skip the header row
    match lines.peek() {
        Some(l) if l.starts_with("label") => {
            lines.next();
        }
        _ => {}
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split(',');
        let label: usize = toks
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {lineno}: bad label")))?;
        let vals: Vec<f64> = toks
            .map(|t| parse_f64(t, &format!("row {lineno}")))
            .collect::<Result<_>>()?;
        if vals.len() != p * q {
            return Err(Error::Schema(format!(
                "row {lineno}: {} values, expected {}",
                vals.len(),
                p * q
            )));
        }
        let x = unvec(&DVector::from_vec(vals), p, q)?;
        samples.push(LabeledMatrixSample::new(x, label)?);
    }
    Ok(samples)
}

fn parse_dims_line(line: &str) -> Result<(usize, usize)> {
    let err = || {
        Error::Parse(format!(
            "expected '# p=<p> q=<q>' dimension line, got {line:?}"
        ))
    };
    let rest = line.trim().strip_prefix('#').ok_or_else(err)?;
    let mut p = None;
    let mut q = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("p=") {
            p = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("q=") {
            q = v.parse().ok();
        }
    }
    match (p, q) {
        (Some(p), Some(q)) if p > 0 && q > 0 => Ok((p, q)),
        _ => Err(err()),
    }
}

/// Loads either form: a directory is read as the manifest form, a file as
/// the flat form.
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledMatrixSample>> {
    if path.is_dir() {
        load_dataset_dir(path)
    } else {
        load_dataset_flat(path)
    }
}

pub fn save_dataset(
    samples: &[LabeledMatrixSample],
    path: &Path,
    format: DatasetFormat,
    class_labels: &[String],
) -> Result<()> {
    match format {
        DatasetFormat::Directory => save_dataset_dir(samples, path, class_labels),
        DatasetFormat::Flat => save_dataset_flat(samples, path),
    }
}
