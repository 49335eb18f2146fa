use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use osora_core::accounting::{builtin_presets, find_preset, load_presets, scaling_sweep};
use osora_core::adapters::{build_adapter, AdapterMethod, MethodKind, OInit, TrainableSet};
use osora_core::densela::text::{read_matrix, write_matrix};
use osora_core::densela::{random_matrix, svd, svd_truncated, InitScheme};
use osora_core::persist;
use osora_core::trainer::{make_task, train, Optimizer, TrainConfig};
use osora_core::verify::{self, Fault, Scope};
use osora_core::Error;

use crate::config::FileConfig;
use crate::Failure;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_opt<T: std::str::FromStr<Err = Error>>(value: Option<String>, default: T) -> Result<T, Error> {
    value.map_or(Ok(default), |s| s.parse())
}

pub struct DecomposeArgs {
    pub matrix: PathBuf,
    pub rank: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn decompose(args: DecomposeArgs, file: &FileConfig) -> Result<(), Failure> {
    let sec = &file.decompose;
    let w = read_matrix(&args.matrix)?;
    let (d, k) = w.shape();
    let r = args.rank.or(sec.rank).unwrap_or(d.min(k));
    let seed = args.seed.or(sec.seed).or(file.seed).unwrap_or(0);
    let factors = svd_truncated(&w, r)?;
    let full = svd(&w)?;
    let tol = full.s.first().copied().unwrap_or(0.0) * (d.max(k) as f64) * f64::EPSILON;
    let numerical_rank = full.s.iter().filter(|s| **s > tol).count();

    let mut out = io::stdout().lock();
    writeln!(out, "shape {d}x{k}").ok();
    writeln!(out, "rank {numerical_rank}").ok();
    writeln!(out, "r {r}").ok();
    writeln!(out, "singular_values {}", join(&factors.s_r)).ok();
    writeln!(out, "truncation_error {:?}", factors.residual.frobenius_norm()).ok();
    writeln!(out, "sweeps {}", full.sweeps).ok();

    if let Some(path) = args.out.or_else(|| sec.out.clone()) {
        let state = build_adapter(&w, AdapterMethod::new(MethodKind::Osora, r), seed)?;
        persist::save_snapshot(&state, &path)?;
        writeln!(out, "snapshot {}", path.display()).ok();
    }
    Ok(())
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

pub struct TrainArgs {
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub r_gap: Option<usize>,
    pub rank: Option<usize>,
    pub method: Option<String>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub optimizer: Option<String>,
    pub o_init: Option<String>,
    pub trainable: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn train_cmd(args: TrainArgs, file: &FileConfig) -> Result<(), Failure> {
    let sec = &file.train;
    let d = args.d.or(sec.d).unwrap_or(32);
    let k = args.k.or(sec.k).unwrap_or(d);
    let r_gap = args.r_gap.or(sec.r_gap).unwrap_or(4);
    let rank = args.rank.or(sec.rank).unwrap_or(r_gap);
    let seed = args.seed.or(sec.seed).or(file.seed).unwrap_or(0);
    let kind: MethodKind = parse_opt(args.method.or_else(|| sec.method.clone()), MethodKind::Osora)?;
    let o_init: OInit = parse_opt(args.o_init.or_else(|| sec.o_init.clone()), OInit::Ones)?;
    let trainable: TrainableSet = parse_opt(args.trainable.or_else(|| sec.trainable.clone()), TrainableSet::Both)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        steps: args.steps.or(sec.steps).unwrap_or(defaults.steps),
        lr: args.lr.or(sec.lr).unwrap_or(defaults.lr),
        optimizer: parse_opt::<Optimizer>(args.optimizer.or_else(|| sec.optimizer.clone()), defaults.optimizer)?,
    };
    let out_dir = args
        .out
        .or_else(|| sec.out.clone())
        .ok_or_else(|| Error::InvalidConfig("train needs an output directory (--out)".into()))?;

    let method = AdapterMethod::new(kind, rank).with_o_init(o_init).with_trainable(trainable);
    let task = make_task(d, k, r_gap, seed)?;
    let state = build_adapter(&task.w0, method, seed)?;
    let run = train(state, &task, config)?;

    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let trace_path = out_dir.join("loss_trace.csv");
    let mut csv = csv::Writer::from_path(&trace_path)?;
    csv.write_record(["step", "loss"])?;
    for (step, loss) in run.loss_trace.iter().enumerate() {
        csv.write_record([step.to_string(), format!("{loss:?}")])?;
    }
    csv.flush().map_err(io_err(&trace_path))?;
    persist::save(&run.final_state, &out_dir.join("final.osra"))?;
    write_matrix(&task.w0, &out_dir.join("w0.txt"))?;

    println!(
        "method={} r={} steps={} initial_loss={:?} final_loss={:?} ratio={:?}",
        kind,
        rank,
        config.steps,
        run.initial_loss(),
        run.final_loss(),
        run.final_loss() / run.initial_loss()
    );
    Ok(())
}

pub fn merge(checkpoint: &Path, base: &Path, out: &Path) -> Result<(), Failure> {
    let w0 = read_matrix(base)?;
    let state = persist::load(checkpoint, &w0)?;
    write_matrix(&state.merge(), out)?;
    println!("merged {} into {}", state.method().kind, out.display());
    Ok(())
}

pub struct CountArgs {
    pub preset: Option<String>,
    pub presets_file: Option<PathBuf>,
    pub methods: Vec<String>,
    pub ranks: Vec<u64>,
    pub out: Option<PathBuf>,
}

pub fn count(args: CountArgs, file: &FileConfig) -> Result<(), Failure> {
    let sec = &file.count;
    let presets = match args.presets_file.as_ref().or(sec.presets_file.as_ref()) {
        Some(path) => load_presets(path)?,
        None => builtin_presets(),
    };
    let name = args
        .preset
        .or_else(|| sec.preset.clone())
        .unwrap_or_else(|| "mistral7b_v03".to_string());
    let preset = find_preset(&presets, &name)?;
    let methods = if args.methods.is_empty() {
        match &sec.methods {
            Some(m) => m.clone(),
            None => MethodKind::ALL.iter().map(|m| m.name().to_string()).collect(),
        }
    } else {
        args.methods
    };
    let methods = methods.iter().map(|m| m.parse()).collect::<Result<Vec<MethodKind>, _>>()?;
    let ranks = if args.ranks.is_empty() {
        sec.ranks.clone().unwrap_or_else(|| vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512])
    } else {
        args.ranks
    };
    let rows = scaling_sweep(preset, &methods, &ranks)?;

    let sink: Box<dyn Write> = match args.out.or_else(|| sec.out.clone()) {
        Some(path) => Box::new(fs::File::create(&path).map_err(io_err(&path))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record(["method", "rank", "trainable_params", "memory_footprint"])?;
    for row in rows {
        csv.write_record([
            row.method.name().to_string(),
            row.rank.to_string(),
            row.trainable.to_string(),
            row.memory_footprint.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::Parse(format!("writing csv: {e}")))?;
    Ok(())
}

pub fn verify_cmd(scope: Option<String>, fault: Option<String>, file: &FileConfig) -> Result<(), Failure> {
    let sec = &file.verify;
    let scope: Scope = parse_opt(scope.or_else(|| sec.scope.clone()), Scope::All)?;
    let fault = fault
        .or_else(|| sec.inject_fault.clone())
        .map(|f| f.parse::<Fault>())
        .transpose()?;
    let report = verify::run(scope, fault)?;
    for check in &report.checks {
        println!("{check}");
    }
    let failed: Vec<&str> = report.failed().map(|c| c.name).collect();
    if failed.is_empty() {
        println!("verify: {} checks passed", report.checks.len());
        Ok(())
    } else {
        println!("verify: {} of {} checks failed: {}", failed.len(), report.checks.len(), failed.join(", "));
        Err(Failure::ChecksFailed(failed.len()))
    }
}

pub fn gen_matrix(rows: usize, cols: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let m = random_matrix(rows, cols, seed, InitScheme::Gaussian)?;
    write_matrix(&m, out)?;
    Ok(())
}
