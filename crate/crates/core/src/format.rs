//! On-disk formats: the JSON model file and the CSV data file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activations::builtin;
use crate::error::{CertError, Result};
use crate::linalg::DenseMatrix;
use crate::model::{ResidualBlock, SequentialNetwork};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    /// Skip connection; `null` means zero.
    #[serde(rename = "H")]
    pub h: Option<Vec<Vec<f64>>>,
    /// Output map; `null` means identity.
    #[serde(rename = "G")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    /// `null` marks an affine block.
    pub activation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub input_dim: usize,
    pub blocks: Vec<BlockFile>,
    pub metadata: Metadata,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DenseMatrix> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CertError::Format(format!("{field}: matrix is empty")));
    }
    let width = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(CertError::Format(format!(
                "{field}: row {i} has {} entries, row 0 has {width}",
                r.len()
            )));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(CertError::Format(format!("{field}[{i}][{j}]: not a finite number")));
        }
    }
    DenseMatrix::from_rows(rows).map_err(|e| CertError::Format(format!("{field}: {e}")))
}

fn check_shape(field: &str, m: &DenseMatrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(CertError::Format(format!(
            "{field}: shape {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

impl BlockFile {
    fn to_block(&self, k: usize, in_dim: usize) -> Result<ResidualBlock> {
        let at = |f: &str| format!("blocks[{k}].{f}");
        let w = matrix(&at("W"), &self.w)?;
        if w.cols() != in_dim {
            return Err(CertError::Format(format!(
                "{}: has {} columns but the block input has dimension {in_dim}",
                at("W"),
                w.cols()
            )));
        }
        let g = self.g.as_deref().map(|g| matrix(&at("G"), g)).transpose()?;
        if let Some(g) = &g {
            if g.cols() != w.rows() {
                return Err(CertError::Format(format!(
                    "{}: has {} columns but W has {} rows",
                    at("G"),
                    g.cols(),
                    w.rows()
                )));
            }
        }
        let out = g.as_ref().map_or(w.rows(), DenseMatrix::rows);
        let h = self.h.as_deref().map(|h| matrix(&at("H"), h)).transpose()?;
        if let Some(h) = &h {
            check_shape(&at("H"), h, out, in_dim)?;
        }
        if let Some(b) = &self.bias {
            if b.len() != w.rows() {
                return Err(CertError::Format(format!(
                    "{}: has {} entries but W has {} rows",
                    at("bias"),
                    b.len(),
                    w.rows()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(CertError::Format(format!("{}: not a finite number", at("bias"))));
            }
        }
        let activation = match &self.activation {
            None => None,
            Some(name) => Some(builtin(name).map_err(|e| CertError::Format(format!("{}: {e}", at("activation"))))?),
        };
        ResidualBlock::new(h, g, w, self.bias.clone(), activation)
            .map_err(|e| CertError::Format(format!("blocks[{k}]: {e}")))
    }

    fn from_block(b: &ResidualBlock) -> Self {
        Self {
            h: b.h.as_ref().map(DenseMatrix::to_rows),
            g: b.g.as_ref().map(DenseMatrix::to_rows),
            w: b.w.to_rows(),
            bias: b.bias.clone(),
            activation: b.activation.as_ref().map(|a| a.name().to_string()),
        }
    }
}

impl ModelFile {
    pub fn from_network(net: &SequentialNetwork) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            input_dim: net.input_dim(),
            blocks: net.blocks().iter().map(BlockFile::from_block).collect(),
            metadata: Metadata {
                name: net.name.clone(),
                n_classes: net.n_classes,
            },
        }
    }

    /// Validates the shape chain and builds the network.
    pub fn to_network(&self) -> Result<SequentialNetwork> {
        if self.format_version != FORMAT_VERSION {
            return Err(CertError::Format(format!(
                "format_version: unsupported version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.input_dim == 0 {
            return Err(CertError::Format("input_dim: must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(CertError::Format("blocks: the model has no blocks".into()));
        }
        let mut dim = self.input_dim;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let block = b.to_block(k, dim)?;
            dim = block.out_dim();
            blocks.push(block);
        }
        if self.metadata.n_classes != dim {
            return Err(CertError::Format(format!(
                "metadata.n_classes: {} but the last block outputs {dim} values",
                self.metadata.n_classes
            )));
        }
        SequentialNetwork::new(blocks, self.metadata.name.clone(), self.metadata.n_classes)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| CertError::Format(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    /// Pretty JSON with shortest round-trip float formatting.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model files always serialize");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Reads, parses and validates a model file.
pub fn load_model(path: &Path) -> Result<(ModelFile, SequentialNetwork)> {
    let text = fs::read_to_string(path)?;
    let file = ModelFile::parse(&text)?;
    let net = file.to_network()?;
    Ok((file, net))
}

pub fn save_model(path: &Path, net: &SequentialNetwork) -> Result<()> {
    fs::write(path, ModelFile::from_network(net).to_json())?;
    Ok(())
}

/// Labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (x, y) in self.xs.iter().zip(&self.labels) {
            for v in x {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(&format!("{y}\n"));
        }
        out
    }
}

/// Parses CSV data: `input_dim` feature columns then an integer label per
/// row. A first row that does not parse as numbers is taken as a header.
pub fn parse_data(text: &str, input_dim: usize, n_classes: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CertError::Format(format!("data: {e}")))?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if k == 0 && rec.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != input_dim + 1 {
            return Err(CertError::Format(format!(
                "data line {line}: {} columns, expected {} features and a label",
                rec.len(),
                input_dim
            )));
        }
        let mut x = Vec::with_capacity(input_dim);
        for (j, f) in rec.iter().take(input_dim).enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| CertError::Format(format!("data line {line}, column {}: `{f}` is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(CertError::Format(format!(
                    "data line {line}, column {}: not finite",
                    j + 1
                )));
            }
            x.push(v);
        }
        let raw = &rec[input_dim];
        let label: usize = raw
            .parse()
            .map_err(|_| CertError::Format(format!("data line {line}: label `{raw}` is not a class index")))?;
        if label >= n_classes {
            return Err(CertError::Format(format!(
                "data line {line}: label {label} out of range for {n_classes} classes"
            )));
        }
        xs.push(x);
        labels.push(label);
    }
    Ok(Dataset { xs, labels })
}

pub fn load_data(path: &Path, input_dim: usize, n_classes: usize) -> Result<Dataset> {
    parse_data(&fs::read_to_string(path)?, input_dim, n_classes)
}
