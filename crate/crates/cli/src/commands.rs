use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use curvcert::certify::{Certifier, CertifyConfig, ConstantSource, DEFAULT_BUDGETS};
use curvcert::curvature::{anchored_compositional_curvature_with, network_curvature, CurvatureNorms};
use curvcert::fixture::{generate, self_labelled_data, FixtureOptions};
use curvcert::format::{load_data, load_model, ModelFile};
use curvcert::linalg::NormKind;
use curvcert::lipschitz::{anchored_schedule_with, schedule};
use curvcert::report::{
    to_json, AttackReport, AttackRow, AttackSummary, BoundReport, CertificationReport, CertificationSummary,
};
use curvcert::verify::{run_verify, VerifyOptions};
use curvcert::{CertError, Result};

use crate::{AnchorArgs, CertArgs, Command, Common};

pub const THREADS_ENV: &str = "CURVCERT_THREADS";

/// Sizes the global pool from `CURVCERT_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            CertError::InvalidInput(format!("{THREADS_ENV} must be a positive integer (got `{raw}`)"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CertError::InvalidInput(format!("thread pool: {e}")))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn anchor_point(anchor: &AnchorArgs, input_dim: usize, n_classes: usize) -> Result<Option<(usize, Vec<f64>)>> {
    match (&anchor.anchor_data, anchor.anchor_index) {
        (Some(path), Some(index)) => {
            let data = load_data(path, input_dim, n_classes)?;
            let x = data.xs.get(index).cloned().ok_or_else(|| {
                CertError::InvalidInput(format!("--anchor-index {index} out of range for {} rows", data.len()))
            })?;
            Ok(Some((index, x)))
        }
        _ => Ok(None),
    }
}

fn elapsed(common: &Common, start: Instant) -> Option<f64> {
    common.timing.then(|| start.elapsed().as_secs_f64())
}

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Lipschitz {
            common,
            norm,
            method,
            anchor,
        } => {
            let start = Instant::now();
            let (file, net) = load_model(&common.model)?;
            let p: NormKind = norm.into();
            let global = schedule(&net, p, method.into())?;
            let mut report = match anchor_point(&anchor, net.input_dim(), net.n_classes)? {
                None => BoundReport::lipschitz(&file.hash(), &net.name, &global, None, None),
                Some((index, x0)) => {
                    let sched = anchored_schedule_with(&net, &x0, &global)?;
                    BoundReport::lipschitz(&file.hash(), &net.name, &sched, Some(index), Some(global.total()))
                }
            };
            report.wall_time_seconds = elapsed(&common, start);
            emit(common.out.as_deref(), &to_json(&report))?;
        }
        Command::Curvature {
            common,
            norm,
            output_norm,
            layer_method,
            anchor,
        } => {
            let start = Instant::now();
            let (file, net) = load_model(&common.model)?;
            let p: NormKind = norm.into();
            let norms = CurvatureNorms {
                input: p,
                output: output_norm.map_or(p.dual(), Into::into),
            };
            let global = network_curvature(&net, norms, layer_method.into())?;
            let mut report = match anchor_point(&anchor, net.input_dim(), net.n_classes)? {
                None => BoundReport::curvature(&file.hash(), &net.name, &global, None, None),
                Some((index, x0)) => {
                    let local = anchored_compositional_curvature_with(&net, &global, &x0)?;
                    BoundReport::curvature(&file.hash(), &net.name, &local, Some(index), Some(global.total()))
                }
            };
            report.wall_time_seconds = elapsed(&common, start);
            emit(common.out.as_deref(), &to_json(&report))?;
        }
        Command::Certify { common, cert, order } => {
            let start = Instant::now();
            let (file, certs, config, budgets) = certify(&common, &cert)?;
            let report = CertificationReport {
                model_hash: file.hash(),
                model_name: file.metadata.name.clone(),
                norm: config.norm,
                order,
                source: config.source,
                layer_method: config.layer_method,
                n_samples: certs.len(),
                summary: CertificationSummary::new(&certs, order, &budgets),
                certificates: certs,
                wall_time_seconds: elapsed(&common, start),
            };
            emit(common.out.as_deref(), &to_json(&report))?;
        }
        Command::AttackCertify { common, cert } => {
            let start = Instant::now();
            let (file, certs, config, budgets) = certify(&common, &cert)?;
            let report = AttackReport {
                model_hash: file.hash(),
                model_name: file.metadata.name.clone(),
                norm: config.norm,
                source: config.source,
                n_samples: certs.len(),
                summary: AttackSummary::new(&certs, &budgets),
                records: certs.iter().map(AttackRow::from_certificate).collect(),
                wall_time_seconds: elapsed(&common, start),
            };
            emit(common.out.as_deref(), &to_json(&report))?;
        }
        Command::Verify {
            model,
            seed,
            pairs,
            norm,
            anchors,
            half_width,
            out,
            corrupt_bounds,
        } => {
            let (_, net) = load_model(&model)?;
            let norms: Vec<NormKind> = if norm.is_empty() {
                NormKind::all().to_vec()
            } else {
                norm.into_iter().map(Into::into).collect()
            };
            let mut opts = VerifyOptions::new(seed, pairs, norms);
            opts.anchors = anchors;
            opts.half_width = half_width;
            opts.corrupt = corrupt_bounds;
            let report = run_verify(&net, &opts)?;
            for c in &report.checks {
                println!(
                    "{} {:<44} bound {:<24e} sampled {:<24e} ratio {:.6}",
                    if c.pass { "ok  " } else { "FAIL" },
                    c.quantity,
                    c.bound,
                    c.sampled,
                    c.ratio
                );
            }
            if let Some(path) = out {
                fs::write(path, to_json(&report))?;
            }
            if !report.passed() {
                for c in report.checks.iter().filter(|c| !c.pass) {
                    eprintln!(
                        "violation: {} bound {:e} < sampled {:e} at x = {:?}, y = {:?}",
                        c.quantity, c.bound, c.sampled, c.x, c.y
                    );
                }
                return Ok(ExitCode::from(1));
            }
            println!("{} checks passed", report.checks.len());
        }
        Command::GenFixture {
            layers,
            seed,
            activation,
            weight_norm,
            bias_scale,
            name,
            out,
            data_out,
            samples,
            half_width,
        } => {
            let opts = FixtureOptions {
                layers,
                seed,
                activation,
                weight_norm,
                bias_scale,
                name,
            };
            let net = generate(&opts)?;
            emit(out.as_deref(), &ModelFile::from_network(&net).to_json())?;
            if let (Some(path), Some(n)) = (data_out, samples) {
                let data = self_labelled_data(&net, n, half_width, seed)?;
                fs::write(path, data.to_csv())?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

type CertOutput = (ModelFile, Vec<curvcert::certify::Certificate>, CertifyConfig, Vec<f64>);

fn certify(common: &Common, args: &CertArgs) -> Result<CertOutput> {
    let (file, net) = load_model(&common.model)?;
    let data = load_data(&args.data, net.input_dim(), net.n_classes)?;
    let mut config = CertifyConfig::new(args.norm.into());
    config.layer_method = args.layer_method.into();
    config.source = if args.shared_bound {
        ConstantSource::Shared
    } else if args.global {
        ConstantSource::Global
    } else {
        ConstantSource::Anchored
    };
    let budgets = args.budgets.clone().unwrap_or_else(|| DEFAULT_BUDGETS.to_vec());
    if budgets.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(CertError::InvalidInput("budgets must be finite and nonnegative".into()));
    }
    let certifier = Certifier::new(&net, config)?;
    let certs = certifier.certify_all(&data.xs, &data.labels)?;
    Ok((file, certs, config, budgets))
}
