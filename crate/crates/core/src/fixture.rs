//! Deterministic seeded test networks and datasets.
//!
//! Layer grammar: comma-separated tokens, the first being the input
//! dimension. Each following token is a width with an optional suffix:
//!
//! - none: feedforward block `Φ(Wx + b)`
//! - `r`: residual block `x + Φ(Wx + b)` (width must match the input)
//! - `g`: general residual block `Hx + GΦ(Wx + b)` with random `H`, `G`
//! - `a`: affine block
//!
//! The last token is always an affine output layer, e.g. `2,16,16r,3`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::activations::{builtin, ActivationSpec};
use crate::error::{CertError, Result};
use crate::format::Dataset;
use crate::linalg::{norm, DenseMatrix, NormKind};
use crate::model::{ResidualBlock, SequentialNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Feedforward,
    Residual,
    General,
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub kind: LayerKind,
}

/// Parses the layer grammar into the input dimension and the layers.
pub fn parse_layers(spec: &str) -> Result<(usize, Vec<LayerSpec>)> {
    let tokens: Vec<&str> = spec.split(',').map(str::trim).collect();
    if tokens.len() < 2 {
        return Err(CertError::InvalidInput(format!(
            "layer spec `{spec}` needs an input dimension and at least one layer"
        )));
    }
    let width = |t: &str| -> Result<usize> {
        match t.parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(CertError::InvalidInput(format!(
                "layer spec token `{t}` is not a positive width"
            ))),
        }
    };
    let input = width(tokens[0])?;
    let mut prev = input;
    let mut layers = Vec::with_capacity(tokens.len() - 1);
    for (k, t) in tokens[1..].iter().enumerate() {
        let last = k == tokens.len() - 2;
        let (digits, kind) = match t.chars().last() {
            Some('r') => (&t[..t.len() - 1], LayerKind::Residual),
            Some('g') => (&t[..t.len() - 1], LayerKind::General),
            Some('a') => (&t[..t.len() - 1], LayerKind::Affine),
            _ => (*t, LayerKind::Feedforward),
        };
        let w = width(digits)?;
        if last && kind != LayerKind::Feedforward && kind != LayerKind::Affine {
            return Err(CertError::InvalidInput(format!(
                "the output layer `{t}` cannot carry a suffix"
            )));
        }
        if kind == LayerKind::Residual && w != prev {
            return Err(CertError::InvalidInput(format!(
                "residual layer `{t}` must keep the width {prev}"
            )));
        }
        layers.push(LayerSpec {
            width: w,
            kind: if last { LayerKind::Affine } else { kind },
        });
        prev = w;
    }
    Ok((input, layers))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub layers: String,
    pub seed: u64,
    pub activation: String,
    /// Target `‖W‖₂` of every weight matrix.
    pub weight_norm: f64,
    pub bias_scale: f64,
    pub name: Option<String>,
}

impl FixtureOptions {
    pub fn new(layers: &str, seed: u64, activation: &str) -> Self {
        Self {
            layers: layers.to_string(),
            seed,
            activation: activation.to_string(),
            weight_norm: 1.0,
            bias_scale: 0.1,
            name: None,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseMatrix::new(rows, cols, data).expect("positive dimensions")
}

/// Gaussian matrix rescaled so its certified spectral norm equals `target`.
fn scaled(rng: &mut ChaCha8Rng, rows: usize, cols: usize, target: f64) -> Result<DenseMatrix> {
    let m = gaussian(rng, rows, cols);
    let n = norm(&m, NormKind::Two)?;
    if n == 0.0 {
        return Err(CertError::Degenerate("sampled an all-zero weight matrix".into()));
    }
    Ok(m.scale(target / n))
}

/// Builds the seeded fixture network.
pub fn generate(opts: &FixtureOptions) -> Result<SequentialNetwork> {
    if !(opts.weight_norm > 0.0) || !opts.weight_norm.is_finite() {
        return Err(CertError::InvalidInput("weight norm must be positive".into()));
    }
    if !(opts.bias_scale >= 0.0) || !opts.bias_scale.is_finite() {
        return Err(CertError::InvalidInput("bias scale must be nonnegative".into()));
    }
    let act: ActivationSpec = builtin(&opts.activation)?;
    let (input, layers) = parse_layers(&opts.layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut prev = input;
    let mut blocks = Vec::with_capacity(layers.len());
    for layer in &layers {
        let w = scaled(&mut rng, layer.width, prev, opts.weight_norm)?;
        let bias: Vec<f64> = (0..layer.width)
            .map(|_| opts.bias_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let block = match layer.kind {
            LayerKind::Affine => ResidualBlock::affine(w, Some(bias))?,
            LayerKind::Feedforward => ResidualBlock::new(None, None, w, Some(bias), Some(act.clone()))?,
            LayerKind::Residual => ResidualBlock::new(
                Some(DenseMatrix::identity(prev)),
                None,
                w,
                Some(bias),
                Some(act.clone()),
            )?,
            LayerKind::General => {
                let h = scaled(&mut rng, layer.width, prev, 0.5)?;
                let g = scaled(&mut rng, layer.width, layer.width, 1.0)?;
                ResidualBlock::new(Some(h), Some(g), w, Some(bias), Some(act.clone()))?
            }
        };
        blocks.push(block);
        prev = layer.width;
    }
    let name = opts
        .name
        .clone()
        .unwrap_or_else(|| format!("fixture-{}-{}-seed{}", opts.layers, opts.activation, opts.seed));
    SequentialNetwork::new(blocks, name, prev)
}

/// Uniform points in `[−half_width, half_width]^n`, labelled by the
/// network's own prediction.
pub fn self_labelled_data(net: &SequentialNetwork, n: usize, half_width: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.gen_range(-half_width..=half_width))
            .collect();
        labels.push(net.predict(&x)?);
        xs.push(x);
    }
    Ok(Dataset { xs, labels })
}
