use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use bmrsw::bootstrap::{run_bootstrap, summarize, BootstrapSummary};
use bmrsw::config::{DatasetSource, LambdaChoice, MmdSamples, RunConfig};
use bmrsw::lambda_select::{run_selection, LambdaSummary};
use bmrsw::measures::WeightedDiscreteMeasure;
use bmrsw::mmd::large_bandwidth_limit_check;
use bmrsw::rng::{derive_seed, SeedPurpose};
use bmrsw::rsw::{extract_reweighting, sga_estimate};
use bmrsw::simulators::{generate_dataset, simulate_batch, ContaminationSpec, NoiseBank};

use crate::GlobalArgs;

const SELECTION_MANIFEST: &str = "lambda_selection_manifest.json";

pub fn load_config(args: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(lambda) = args.lambda {
        config.lambda = lambda;
    }
    if let Some(s) = args.iterations {
        config.sga.iterations = s;
    }
    if let Some(b) = args.burn_in {
        config.sga.burn_in_fraction = b;
    }
    let rule = &mut config.lambda_selection.rule;
    if let Some(v) = args.elbow_min_gap {
        rule.min_gap = v;
    }
    if let Some(v) = args.elbow_min_decrease {
        rule.min_decrease = v;
    }
    if let Some(v) = args.subsample_cap {
        rule.subsample_cap = v;
    }
    config.validate()?;
    Ok(config)
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn output_path(config: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    Ok(config.output_dir.join(name))
}

fn create(config: &RunConfig, name: &str) -> Result<BufWriter<File>> {
    let path = output_path(config, name)?;
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(config: &RunConfig, name: &str, value: &T) -> Result<()> {
    let mut w = create(config, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_dataset(config: &RunConfig) -> Result<WeightedDiscreteMeasure> {
    match &config.dataset {
        DatasetSource::Generate { clean, contamination, n, .. } => {
            Ok(generate_dataset(clean, contamination, *n, config.dataset_seed())?)
        }
        DatasetSource::Csv { path } => {
            let file = File::open(path).with_context(|| format!("cannot open dataset {}", path.display()))?;
            WeightedDiscreteMeasure::read_csv(file).with_context(|| format!("reading {}", path.display()))
        }
    }
}

fn resolve_lambda(config: &RunConfig) -> Result<f64> {
    match config.lambda {
        LambdaChoice::Fixed(v) => Ok(v),
        LambdaChoice::Auto => {
            let path = config.output_dir.join(SELECTION_MANIFEST);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("--lambda auto needs a selection run first ({} not found)", path.display()))?;
            let manifest: SelectionManifest = serde_json::from_str(&text)?;
            match manifest.suggestion {
                Some(v) => Ok(v),
                None => bail!("the last selection run found no elbow; pass an explicit --lambda"),
            }
        }
    }
}

pub fn simulate(config: &RunConfig) -> Result<()> {
    let DatasetSource::Generate { clean, contamination, n, .. } = &config.dataset else {
        bail!("simulate needs a dataset of kind 'generate'");
    };
    let seed = config.dataset_seed();
    let data = generate_dataset(clean, contamination, *n, seed)?;
    data.write_csv(create(config, "dataset.csv")?)?;
    write_json(
        config,
        "dataset_manifest.json",
        &json!({
            "clean": clean,
            "contamination": contamination,
            "n": n,
            "seed": seed,
            "created_unix": unix_time(),
        }),
    )?;
    println!("wrote {} rows to {}", n, config.output_dir.join("dataset.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct WeightedAtom {
    index: usize,
    atom: Vec<f64>,
    weight: f64,
}

pub fn rsw_eval(config: &RunConfig, theta: &[f64], top: usize, trace: bool) -> Result<()> {
    let spec = config.simulator.spec()?;
    if !spec.contains(theta) {
        bail!("θ = {theta:?} lies outside the parameter bounds {:?} .. {:?}", spec.lower, spec.upper);
    }
    let data = load_dataset(config)?;
    let lambda = resolve_lambda(config)?;
    let mut sga = config.sga.clone();
    sga.lambda = lambda;
    sga.record_trace = trace;
    let bank = NoiseBank::for_spec(&spec, derive_seed(config.master_seed, 0, SeedPurpose::NoiseBank), sga.iterations);
    let samples = simulate_batch(&spec, theta, &bank)?;
    let result = sga_estimate(&data, &samples, &sga)?;
    let reweighted = extract_reweighting(&result.final_potential, lambda, &data)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| reweighted.weights()[a].total_cmp(&reweighted.weights()[b]).then(a.cmp(&b)));
    let lowest: Vec<WeightedAtom> = order
        .iter()
        .take(top)
        .map(|&i| WeightedAtom { index: i, atom: data.atom(i).to_vec(), weight: reweighted.weights()[i] })
        .collect();
    let g = result.final_potential.as_slice();
    let report = json!({
        "theta": theta,
        "lambda": lambda,
        "iterations": sga.iterations,
        "estimate": result.estimate,
        "potential": {
            "min": g.iter().copied().fold(f64::INFINITY, f64::min),
            "max": g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "mean": g.iter().sum::<f64>() / g.len() as f64,
        },
        "lowest_weights": lowest,
    });
    write_json(config, "rsw_eval.json", &report)?;
    if trace {
        result.write_trace_csv(create(config, "rsw_trace.csv")?)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SelectionManifest {
    suggestion: Option<f64>,
    grid: Vec<f64>,
    replicates: usize,
    master_seed: u64,
    iterations: usize,
    failures: usize,
    created_unix: u64,
}

#[derive(Serialize, Deserialize)]
struct SelectionReport {
    summaries: Vec<LambdaSummary>,
    suggestion: Option<f64>,
}

pub fn lambda_select(config: &RunConfig) -> Result<()> {
    let spec = config.simulator.spec()?;
    let data = load_dataset(config)?;
    let settings = &config.lambda_selection;
    let base = config.bootstrap_config(settings.grid.values()[0]);
    let diag = run_selection(&data, &spec, &settings.grid, settings.replicates, &base, &settings.rule)?;

    diag.write_csv(create(config, "lambda_diagnostic.csv")?)?;
    let report = SelectionReport { summaries: diag.summaries.clone(), suggestion: diag.suggestion };
    write_json(config, "lambda_diagnostic.json", &report)?;
    write_json(
        config,
        SELECTION_MANIFEST,
        &SelectionManifest {
            suggestion: diag.suggestion,
            grid: settings.grid.values().to_vec(),
            replicates: settings.replicates,
            master_seed: config.master_seed,
            iterations: config.sga.iterations,
            failures: diag.failures.len(),
            created_unix: unix_time(),
        },
    )?;
    for f in &diag.failures {
        eprintln!("replicate {} failed: {}", f.index, f.message);
    }
    match diag.suggestion {
        Some(v) => println!("suggested lambda: {v}"),
        None => println!("no elbow found; lambda = 0 policy (plain W2 fit)"),
    }
    Ok(())
}

pub fn bootstrap(config: &RunConfig) -> Result<()> {
    let spec = config.simulator.spec()?;
    let data = load_dataset(config)?;
    let lambda = resolve_lambda(config)?;
    let boot = config.bootstrap_config(lambda);
    let manifest = |status: &str, failures: serde_json::Value| {
        json!({
            "status": status,
            "lambda": lambda,
            "replicates": boot.replicates,
            "master_seed": boot.master_seed,
            "iterations": boot.sga.iterations,
            "optimizer": boot.optimizer,
            "failures": failures,
            "created_unix": unix_time(),
        })
    };
    let result = match run_bootstrap(&data, &spec, &boot) {
        Ok(r) => r,
        Err(e) => {
            write_json(config, "bootstrap_manifest.json", &manifest("failed", json!(e.to_string())))?;
            return Err(e.into());
        }
    };
    result.write_csv(create(config, "bootstrap.csv")?)?;

    let mut log = create(config, "bootstrap_replicates.log")?;
    let mut fits = result.seeds.iter().zip(&result.samples).zip(&result.losses).peekable();
    let mut failures = result.failures.iter().peekable();
    for index in 0..boot.replicates {
        if fits.peek().is_some_and(|((s, _), _)| s.index == index) {
            let ((seeds, theta), loss) = fits.next().expect("peeked");
            writeln!(
                log,
                "replicate {index} ok resample_seed={} bank_seed={} theta={theta:?} loss={loss}",
                seeds.resample, seeds.noise_bank
            )?;
        } else if failures.peek().is_some_and(|f| f.index == index) {
            let f = failures.next().expect("peeked");
            writeln!(log, "replicate {index} failed: {}", f.message)?;
        }
    }
    log.flush()?;

    let summary = if result.samples.len() >= 2 { Some(summarize(&result, config.bootstrap.alpha)?) } else { None };
    if let Some(summary) = &summary {
        write_json(config, "bootstrap_summary.json", summary)?;
        println!("{}", serde_json::to_string_pretty(summary)?);
    }
    write_json(config, "bootstrap_manifest.json", &manifest("ok", serde_json::to_value(&result.failures)?))?;
    println!("{} of {} replicates succeeded", result.samples.len(), boot.replicates);
    Ok(())
}

fn read_sample(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut values = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if line_no == 0 => {}
            Err(_) => bail!("{}:{}: not a number: '{field}'", path.display(), line_no + 1),
        }
    }
    Ok(values)
}

pub fn mmd_limit(config: &RunConfig) -> Result<()> {
    let (xs, ys) = match &config.mmd.samples {
        MmdSamples::Files { x, y } => (read_sample(x)?, read_sample(y)?),
        MmdSamples::Generate { x, y, n } => {
            let clean = ContaminationSpec::clean();
            let seed = |k| derive_seed(config.master_seed, k, SeedPurpose::Dataset);
            (
                generate_dataset(x, &clean, *n, seed(1))?.coords().to_vec(),
                generate_dataset(y, &clean, *n, seed(2))?.coords().to_vec(),
            )
        }
    };
    let rows = large_bandwidth_limit_check(&xs, &ys, &config.mmd.sigmas)?;
    let mut w = create(config, "mmd_limit.csv")?;
    writeln!(w, "sigma0,scaled_mmd_sq,target,deviation")?;
    for r in &rows {
        writeln!(w, "{},{},{},{}", r.sigma0, r.scaled_mmd_sq, r.target, r.deviation())?;
        println!("sigma0={} scaled_mmd_sq={} target={}", r.sigma0, r.scaled_mmd_sq, r.target);
    }
    w.flush()?;
    Ok(())
}

pub fn report(config: &RunConfig) -> Result<()> {
    let dir = &config.output_dir;
    let mut found = false;
    if let Ok(text) = fs::read_to_string(dir.join("lambda_diagnostic.json")) {
        found = true;
        let report: SelectionReport = serde_json::from_str(&text)?;
        println!("lambda selection");
        println!("  {:>12} {:>14} {:>14} {:>14}", "lambda", "q25", "median", "q75");
        for s in &report.summaries {
            println!("  {:>12.6} {:>14.6} {:>14.6} {:>14.6}", s.lambda, s.lower_quartile, s.median, s.upper_quartile);
        }
        match report.suggestion {
            Some(v) => println!("  suggested lambda: {v}"),
            None => println!("  no elbow found"),
        }
    }
    if let Ok(text) = fs::read_to_string(dir.join("bootstrap_summary.json")) {
        found = true;
        let summary: BootstrapSummary = serde_json::from_str(&text)?;
        println!("bootstrap (intervals at level {})", 1.0 - summary.alpha);
        for (k, ((m, (lo, hi)), w)) in summary.medians.iter().zip(&summary.intervals).zip(&summary.widths).enumerate() {
            println!("  theta_{k}: median {m:.6}  interval [{lo:.6}, {hi:.6}]  width {w:.6}");
        }
    }
    if let Ok(text) = fs::read_to_string(dir.join("mmd_limit.csv")) {
        found = true;
        println!("scaled MMD");
        for line in text.lines() {
            println!("  {line}");
        }
    }
    if !found {
        bail!("no results found in {}", dir.display());
    }
    Ok(())
}
