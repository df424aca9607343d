use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use curvcert::curvature::LayerCurvatureMethod;
use curvcert::linalg::NormKind;
use curvcert::lipschitz::LipschitzMethod;

mod commands;

#[derive(Parser)]
#[command(
    name = "curvcert",
    version,
    about = "Lipschitz and curvature bounds with robustness certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "inf")]
    Inf,
}

impl From<NormArg> for NormKind {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::One => NormKind::One,
            NormArg::Two => NormKind::Two,
            NormArg::Inf => NormKind::Inf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Naive,
    Lt,
    Liplt,
}

impl From<MethodArg> for LipschitzMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Naive => LipschitzMethod::Naive,
            MethodArg::Lt => LipschitzMethod::Lt,
            MethodArg::Liplt => LipschitzMethod::Liplt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LayerMethodArg {
    Naive,
    Vectorized,
    Sdp,
    Tightest,
}

impl From<LayerMethodArg> for LayerCurvatureMethod {
    fn from(m: LayerMethodArg) -> Self {
        match m {
            LayerMethodArg::Naive => LayerCurvatureMethod::Naive,
            LayerMethodArg::Vectorized => LayerCurvatureMethod::Vectorized,
            LayerMethodArg::Sdp => LayerCurvatureMethod::Sdp,
            LayerMethodArg::Tightest => LayerCurvatureMethod::Tightest,
        }
    }
}

#[derive(Args)]
struct AnchorArgs {
    /// CSV file holding the anchor point
    #[arg(long, requires = "anchor_index")]
    anchor_data: Option<PathBuf>,
    /// Row of the anchor in --anchor-data
    #[arg(long, requires = "anchor_data")]
    anchor_index: Option<usize>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: PathBuf,
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall time in the report
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct CertArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "2")]
    norm: NormArg,
    /// One network-level bound scaled by ‖e_i − e_y‖ for every pair
    #[arg(long, conflicts_with = "global")]
    shared_bound: bool,
    /// Global per-pair constants instead of anchored ones
    #[arg(long)]
    global: bool,
    #[arg(long, value_enum, default_value = "tightest")]
    layer_method: LayerMethodArg,
    /// Perturbation budgets; defaults to 36/255, 72/255, 108/255
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Lipschitz bound of the network
    Lipschitz {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "2")]
        norm: NormArg,
        #[arg(long, value_enum, default_value = "liplt")]
        method: MethodArg,
        #[command(flatten)]
        anchor: AnchorArgs,
    },
    /// Curvature (Jacobian-Lipschitz) bound of the network
    Curvature {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "2")]
        norm: NormArg,
        /// Norm on the Jacobian's output side; the dual of --norm by default
        #[arg(long, value_enum)]
        output_norm: Option<NormArg>,
        #[arg(long, value_enum, default_value = "tightest")]
        layer_method: LayerMethodArg,
        #[command(flatten)]
        anchor: AnchorArgs,
    },
    /// Zeroth- or first-order certified radii
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cert: CertArgs,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
        order: u8,
    },
    /// Attack certificates with realizing perturbations
    AttackCertify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cert: CertArgs,
    },
    /// Check every bound against sampled lower bounds
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        /// Norms to check; all three when omitted
        #[arg(long, value_enum, value_delimiter = ',')]
        norm: Vec<NormArg>,
        #[arg(long, default_value_t = 2)]
        anchors: usize,
        #[arg(long, default_value_t = 2.0)]
        half_width: f64,
        /// JSON report with every check
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scale every bound by this factor before comparing
        #[arg(long, hide = true, default_value_t = 1.0)]
        corrupt_bounds: f64,
    },
    /// Seeded Gaussian fixture network
    GenFixture {
        /// Layer spec, e.g. 2,16,16r,3
        #[arg(long)]
        layers: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "tanh")]
        activation: String,
        #[arg(long, default_value_t = 1.0)]
        weight_norm: f64,
        #[arg(long, default_value_t = 0.1)]
        bias_scale: f64,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write self-labelled sample points here
        #[arg(long, requires = "samples")]
        data_out: Option<PathBuf>,
        #[arg(long, requires = "data_out")]
        samples: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        half_width: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
