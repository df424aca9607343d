//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use curvcert::activations::{anchored_lipschitz, builtin, AnchorTarget};
use curvcert::certify::{
    attack_pair_radius, first_order_dominance_condition, first_order_pair_radius, zeroth_order_pair_radius, Certifier,
    CertifyConfig,
};
use curvcert::curvature::{
    anchored_compositional_curvature, layer_curvature, network_curvature, CurvatureNorms, LayerCurvatureMethod,
};
use curvcert::fixture::self_labelled_data;
use curvcert::format::load_model;
use curvcert::linalg::NormKind;
use curvcert::lipschitz::{
    anchored_schedule, layer_lipschitz_lt, layer_lipschitz_naive, liplt_schedule, naive_schedule,
};
use curvcert::model::{vectorized_jacobian_factors, SequentialNetwork};
use curvcert::oracle::{exact_hessian_norm_tiny, finite_difference_jacobian, grid_adversarial_search, GridSpec};
use curvcert::verify::{run_verify, VerifyOptions};
use curvcert::CertError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tempfile::TempDir;

const ACTS: [&str; 4] = ["tanh", "sigmoid", "softplus", "elu"];

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn(&Ctx) -> Outcome);

struct Ctx {
    dir: TempDir,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes a fixture through the binary and loads it back.
    fn fixture(&self, layers: &str, seed: u64, act: &str, weight_norm: f64) -> SequentialNetwork {
        let out = self.path(&format!("{layers}-{act}-{seed}-{weight_norm}.json"));
        if !out.exists() {
            let status = Command::new(env!("CARGO_BIN_EXE_curvcert"))
                .args([
                    "gen-fixture",
                    "--layers",
                    layers,
                    "--seed",
                    &seed.to_string(),
                    "--activation",
                    act,
                ])
                .args([
                    "--weight-norm",
                    &weight_norm.to_string(),
                    "--out",
                    out.to_str().unwrap(),
                ])
                .status()
                .unwrap();
            assert!(status.success(), "gen-fixture {layers}");
        }
        load_model(&out).unwrap().1
    }

    /// The 40-network family: depths 1–5, widths 4–16, all activations,
    /// residual and non-residual blocks.
    fn family(&self) -> Vec<SequentialNetwork> {
        (0..40u64)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
                let depth = 1 + (k % 5) as usize;
                let mut prev = rng.gen_range(4..=8);
                let mut tokens = vec![prev.to_string()];
                for j in 0..depth {
                    let residual = (k / 5) % 2 == 1;
                    let token = if residual && j % 2 == 0 {
                        format!("{prev}r")
                    } else if residual && k % 3 == 0 {
                        prev = rng.gen_range(4..=16);
                        format!("{prev}g")
                    } else {
                        prev = rng.gen_range(4..=16);
                        prev.to_string()
                    };
                    tokens.push(token);
                }
                tokens.push(rng.gen_range(2..=4).to_string());
                let wn = [0.8, 1.0, 1.3, 1.6][(k / 4 % 4) as usize];
                self.fixture(&tokens.join(","), k, ACTS[(k % 4) as usize], wn)
            })
            .collect()
    }

    fn toys(&self) -> Vec<SequentialNetwork> {
        (0..20u64)
            .map(|k| {
                let layers = ["2,16,3", "2,16,16r,3", "2,12,12,4", "2,8g,8r,3"][(k % 4) as usize];
                self.fixture(layers, 500 + k, ACTS[(k % 4) as usize], 2.5)
            })
            .collect()
    }

    fn scalar_nets(&self) -> Vec<SequentialNetwork> {
        let layers = ["4,8,1", "6,6r,8,1", "8,8,8,1", "3,6g,6r,1", "2,16,1"];
        (0..10u64)
            .map(|k| {
                self.fixture(
                    layers[(k % 5) as usize],
                    700 + k,
                    ["tanh", "sigmoid"][(k % 2) as usize],
                    1.5,
                )
            })
            .collect()
    }
}

fn point(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-half..half)).collect()
}

fn p1(ctx: &Ctx) -> Outcome {
    let start = Instant::now();
    let mut checks = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (k, net) in ctx.family().iter().enumerate() {
        let opts = VerifyOptions::new(k as u64, 10_000, NormKind::all().to_vec());
        let report = run_verify(net, &opts).map_err(|e| e.to_string())?;
        checks += report.checks.len();
        for c in &report.checks {
            worst = worst.max(c.ratio);
            if !c.pass {
                failures.push(format!(
                    "{}: {} bound {} sampled {}",
                    net.name, c.quantity, c.bound, c.sampled
                ));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "40 nets, {checks} checks, {} violations, max ratio {worst:.4}, {secs:.1}s",
        failures.len()
    );
    if !failures.is_empty() {
        return Err(format!("{detail}; first: {}", failures[0]));
    }
    if secs > 300.0 {
        return Err(format!("{detail}; over the 5 min budget"));
    }
    Ok(detail)
}

fn p2(ctx: &Ctx) -> Outcome {
    let le = |a: f64, b: f64| a <= b * (1.0 + 1e-9);
    let mut n = 0usize;
    let mut bad = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for net in ctx.family() {
        let mut check = |ok: bool, what: String| {
            n += 1;
            if !ok {
                bad.push(what);
            }
        };
        for (k, b) in net.blocks().iter().enumerate() {
            for p in NormKind::all() {
                let (lt, naive) = (layer_lipschitz_lt(b, p).unwrap(), layer_lipschitz_naive(b, p).unwrap());
                check(
                    le(lt, naive),
                    format!("{} block {k} LT {lt} > naive {naive} p={p}", net.name),
                );
            }
            let norms = CurvatureNorms::dual(NormKind::Two);
            let naive = layer_curvature(b, norms, LayerCurvatureMethod::Naive).unwrap();
            let vec = layer_curvature(b, norms, LayerCurvatureMethod::Vectorized).unwrap();
            check(
                le(vec, naive),
                format!("{} block {k} vectorized {vec} > naive {naive}", net.name),
            );
            match layer_curvature(b, norms, LayerCurvatureMethod::Sdp) {
                Ok(sdp) => check(
                    le(sdp, vec),
                    format!("{} block {k} sdp {sdp} > vectorized {vec}", net.name),
                ),
                Err(CertError::NotApplicable(_)) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
        for p in NormKind::all() {
            let naive = naive_schedule(&net, p).unwrap();
            let liplt = liplt_schedule(&net, p).unwrap();
            for (a, b) in liplt.cumulative.iter().zip(&naive.cumulative) {
                check(le(*a, *b), format!("{} LipLT {a} > naive product {b} p={p}", net.name));
            }
            for _ in 0..3 {
                let x0 = point(&mut rng, net.input_dim(), 2.0);
                let local = anchored_schedule(&net, p, &x0).unwrap();
                for (a, b) in local.cumulative.iter().zip(&liplt.cumulative) {
                    check(le(*a, *b), format!("{} anchored Lipschitz {a} > global {b}", net.name));
                }
                for norms in [CurvatureNorms::dual(p), CurvatureNorms::gradient(p)] {
                    let global = network_curvature(&net, norms, LayerCurvatureMethod::Tightest).unwrap();
                    let local = anchored_compositional_curvature(&net, norms, &x0).unwrap();
                    for (a, b) in local.cumulative.iter().zip(&global.cumulative) {
                        check(le(*a, *b), format!("{} anchored curvature {a} > global {b}", net.name));
                    }
                }
            }
        }
    }
    let detail = format!("{n} comparisons, {} violations", bad.len());
    match bad.first() {
        None => Ok(detail),
        Some(first) => Err(format!("{detail}; first: {first}")),
    }
}

fn p3(_: &Ctx) -> Outcome {
    let tanh = builtin("tanh").unwrap();
    let v = anchored_lipschitz(&tanh, AnchorTarget::Phi, 2.0).map_err(|e| e.to_string())?;
    let n = 2_000_001;
    let oracle = (0..n)
        .map(|i| -100.0 + 200.0 * i as f64 / (n - 1) as f64)
        .filter(|y: &f64| (y - 2.0).abs() > 1e-6)
        .map(|y| ((y.tanh() - 2f64.tanh()) / (y - 2.0)).abs())
        .fold(0.0, f64::max);
    let detail = format!("value {v:.6}, grid supremum {oracle:.6}");
    if v > 0.55 && v <= 0.582 && v >= oracle {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn p4(ctx: &Ctx) -> Outcome {
    let start = Instant::now();
    let toys = ctx.toys();
    let mut jobs = Vec::new();
    for (k, net) in toys.iter().enumerate() {
        let data = self_labelled_data(net, 20, 1.0, 40 + k as u64).map_err(|e| e.to_string())?;
        for p in [NormKind::Two, NormKind::Inf] {
            let certs = Certifier::new(net, CertifyConfig::new(p))
                .and_then(|c| c.certify_all(&data.xs, &data.labels))
                .map_err(|e| e.to_string())?;
            for (c, x) in certs.into_iter().zip(&data.xs) {
                jobs.push((net, p, c, x.clone()));
            }
        }
    }
    let results: Vec<Result<(bool, bool), String>> = jobs
        .par_iter()
        .map(|(net, p, c, x)| {
            let mut grid = GridSpec::new(1e-3, 256);
            let mut attacked = false;
            if let Some(a) = &c.attack {
                let moved: Vec<f64> = x.iter().zip(&a.delta).map(|(u, d)| u + d).collect();
                if net.predict(&moved).map_err(|e| e.to_string())? == c.label {
                    return Err(format!(
                        "{} sample {} p={p}: attack δ* does not misclassify",
                        net.name, c.sample
                    ));
                }
                attacked = true;
                grid.extra.push(a.delta.clone());
            }
            let r = c.radius(1);
            if !r.is_finite() {
                return Ok((false, attacked));
            }
            match grid_adversarial_search(net, x, c.label, *p, 0.999 * r, &grid).map_err(|e| e.to_string())? {
                None => Ok((true, attacked)),
                Some(hit) => Err(format!(
                    "{} sample {} p={p}: class {} at ‖δ‖ = {} inside certified radius {r}",
                    net.name, c.sample, hit.predicted, hit.norm
                )),
            }
        })
        .collect();
    let mut searched = 0;
    let mut attacks = 0;
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((s, a)) => {
                searched += s as usize;
                attacks += a as usize;
            }
            Err(e) => failures.push(e),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} certificates, {searched} grid-searched, {attacks} attacks realized, {} violations, {secs:.1}s",
        jobs.len(),
        failures.len()
    );
    match failures.first() {
        None if secs <= 600.0 => Ok(detail),
        None => Err(format!("{detail}; over the 10 min budget")),
        Some(first) => Err(format!("{detail}; first: {first}")),
    }
}

fn p5(ctx: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for _ in 0..1000 {
        let gap = -rng.gen_range(1e-4..10.0);
        let g = rng.gen_range(0.0..10.0);
        let l = rng.gen_range(0.0..20.0);
        let lip = g + rng.gen_range(1e-3..10.0);
        let e0 = zeroth_order_pair_radius(gap, lip);
        worst = worst.max((gap + lip * e0).abs());
        if g > 0.0 || l > 0.0 {
            let e1 = first_order_pair_radius(gap, g, l);
            worst = worst.max((0.5 * l * e1 * e1 + g * e1 + gap).abs());
        }
        if let Some(e) = attack_pair_radius(-gap, g, l) {
            worst = worst.max((-gap - g * e + 0.5 * l * e * e).abs());
        }
    }
    // pair constants produced by certificates on the fixtures
    for (k, net) in ctx.toys().iter().enumerate().take(5) {
        let data = self_labelled_data(net, 20, 1.0, 90 + k as u64).unwrap();
        let certs = Certifier::new(net, CertifyConfig::new(NormKind::Two))
            .and_then(|c| c.certify_all(&data.xs, &data.labels))
            .map_err(|e| e.to_string())?;
        for pr in certs.iter().flat_map(|c| &c.pairs) {
            let (l, curv) = (pr.lipschitz.unwrap(), pr.curvature.unwrap());
            if let Some(e) = pr.radius0 {
                worst = worst.max((pr.gap + l * e).abs());
            }
            if let Some(e) = pr.radius1 {
                worst = worst.max((0.5 * curv * e * e + pr.grad_dual * e + pr.gap).abs());
            }
            if let Some(e) = pr.attack_radius {
                worst = worst.max((-pr.gap - pr.grad_dual * e + 0.5 * curv * e * e).abs());
            }
        }
    }
    if worst >= 1e-9 {
        bad.push(format!("root residual {worst:e}"));
    }
    let mut draws = 0;
    while draws < 1000 {
        let gap = -rng.gen_range(1e-4..10.0);
        let g = rng.gen_range(0.0..10.0);
        let e0 = zeroth_order_pair_radius(gap, g + rng.gen_range(1e-3..10.0));
        let limit = -2.0 * (g * e0 + gap) / (e0 * e0);
        let curv = rng.gen_range(0.0..=limit);
        if !first_order_dominance_condition(gap, g, curv, e0) {
            continue;
        }
        draws += 1;
        let e1 = first_order_pair_radius(gap, g, curv);
        if e1 < e0 * (1.0 - 1e-12) {
            bad.push(format!("condition held but ε₁ = {e1} < ε₀ = {e0}"));
        }
    }
    let detail = format!("max root residual {worst:.2e}, {draws} condition draws");
    match bad.first() {
        None => Ok(detail),
        Some(first) => Err(format!("{detail}; {first}")),
    }
}

fn p6(ctx: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_fd: f64 = 0.0;
    let mut worst_vec: f64 = 0.0;
    let nets: Vec<SequentialNetwork> = ctx
        .family()
        .into_iter()
        .chain(ctx.toys())
        .chain(ctx.scalar_nets())
        .collect();
    for net in &nets {
        for _ in 0..20 {
            let x = point(&mut rng, net.input_dim(), 2.0);
            let j = net.jacobian(&x).unwrap();
            let fd = finite_difference_jacobian(net, &x, 1e-5).unwrap();
            for (a, b) in j.data().iter().zip(fd.data()) {
                worst_fd = worst_fd.max((a - b).abs());
            }
            let trace = net.forward(&x).unwrap();
            for (block, xk) in net.blocks().iter().zip(&trace) {
                let Some(act) = &block.activation else { continue };
                let (b, a) = vectorized_jacobian_factors(block).unwrap();
                let d: Vec<f64> = block
                    .pre_activation(xk)
                    .unwrap()
                    .iter()
                    .map(|z| act.deriv(*z))
                    .collect();
                let rebuilt = a.matvec(&d).unwrap();
                let direct = block.jacobian(xk).unwrap().vec_column_major();
                for ((bi, ri), di) in b.iter().zip(&rebuilt).zip(&direct) {
                    worst_vec = worst_vec.max((bi + ri - di).abs());
                }
            }
        }
    }
    let detail = format!(
        "{} nets, max |J − J_fd| {worst_fd:.2e}, max reconstruction error {worst_vec:.2e}",
        nets.len()
    );
    if worst_fd <= 1e-5 && worst_vec <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn p7(ctx: &Ctx) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    let nets = ctx.scalar_nets();
    for (k, net) in nets.iter().enumerate() {
        let bound = network_curvature(
            net,
            CurvatureNorms::gradient(NormKind::Two),
            LayerCurvatureMethod::Tightest,
        )
        .map_err(|e| e.to_string())?
        .total();
        let mut rng = ChaCha8Rng::seed_from_u64(70 + k as u64);
        let points: Vec<Vec<f64>> = (0..1000).map(|_| point(&mut rng, net.input_dim(), 2.0)).collect();
        let norms: Vec<f64> = points
            .par_iter()
            .map(|x| exact_hessian_norm_tiny(net, x, 1e-4))
            .collect::<curvcert::Result<_>>()
            .map_err(|e| e.to_string())?;
        for (x, h) in points.iter().zip(norms) {
            worst = worst.max(h / bound);
            if h > bound {
                bad.push(format!("{} at {x:?}: ‖∇²f‖ = {h} > {bound}", net.name));
            }
        }
    }
    let detail = format!(
        "{} nets × 1000 points, max Hessian/bound {worst:.4}, {} violations",
        nets.len(),
        bad.len()
    );
    match bad.first() {
        None => Ok(detail),
        Some(first) => Err(format!("{detail}; first: {first}")),
    }
}

fn p8(ctx: &Ctx) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_curvcert");
    let run = |args: &[&str], threads: &str, out: &Path| -> Result<Vec<u8>, String> {
        let status = Command::new(bin)
            .args(args)
            .args(["--out", out.to_str().unwrap()])
            .env("CURVCERT_THREADS", threads)
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("{args:?} exited with {status}"));
        }
        fs::read(out).map_err(|e| e.to_string())
    };
    let model = ctx.path("p8.json");
    let data = ctx.path("p8.csv");
    let model_s = model.to_str().unwrap();
    let data_s = data.to_str().unwrap();
    let gen = [
        "gen-fixture",
        "--layers",
        "3,12,12r,8g,4",
        "--seed",
        "8",
        "--data-out",
        data_s,
        "--samples",
        "40",
    ];
    let mut first_data = None;
    let mut compared = 0;
    for threads in ["1", "4", "1"] {
        let m = run(&gen, threads, &model)?;
        let d = fs::read(&data).map_err(|e| e.to_string())?;
        match &first_data {
            None => first_data = Some((m, d)),
            Some((m0, d0)) if *m0 == m && *d0 == d => compared += 2,
            Some(_) => return Err("gen-fixture output differs between runs".into()),
        }
    }
    let commands: Vec<Vec<&str>> = vec![
        vec!["lipschitz", "--model", model_s, "--norm", "inf"],
        vec![
            "lipschitz",
            "--model",
            model_s,
            "--anchor-data",
            data_s,
            "--anchor-index",
            "3",
        ],
        vec!["curvature", "--model", model_s, "--layer-method", "naive"],
        vec![
            "curvature",
            "--model",
            model_s,
            "--norm",
            "2",
            "--anchor-data",
            data_s,
            "--anchor-index",
            "5",
        ],
        vec!["certify", "--model", model_s, "--data", data_s],
        vec![
            "certify",
            "--model",
            model_s,
            "--data",
            data_s,
            "--norm",
            "1",
            "--order",
            "0",
            "--shared-bound",
        ],
        vec!["attack-certify", "--model", model_s, "--data", data_s, "--norm", "inf"],
        vec!["verify", "--model", model_s, "--pairs", "2000", "--seed", "3"],
    ];
    for (i, args) in commands.iter().enumerate() {
        let out = ctx.path(&format!("p8-{i}.json"));
        let reference = run(args, "1", &out)?;
        for threads in ["4", "1", "3"] {
            if run(args, threads, &out)? != reference {
                return Err(format!("{} differs between runs (threads {threads})", args[0]));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} repeated outputs byte-identical across thread counts"
    ))
}

fn main() -> ExitCode {
    let ctx = Ctx {
        dir: TempDir::new().expect("temp dir"),
    };
    let criteria: [Criterion; 8] = [
        ("P1", "bound soundness", p1),
        ("P2", "bound orderings", p2),
        ("P3", "anchored tanh value at 2", p3),
        ("P4", "certificate soundness on 2-D toys", p4),
        ("P5", "closed-form consistency", p5),
        ("P6", "Jacobian correctness", p6),
        ("P7", "Hessian dominance", p7),
        ("P8", "determinism", p8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| p == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(|| f(&ctx)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
