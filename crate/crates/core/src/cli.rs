//! The `motsp` command suite.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_pair, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    approximate_pf, compute_hv_protocol, hv_report_csv, pf_rows, pf_to_csv, read_pf_csv, HvConfig, HvRecord,
};
use crate::instances::{MotspInstance, ObjectiveVector};
use crate::rng::derive_seed;
use crate::run::{self, Manifest, RunOptions};

/// Environment variable naming the default checkpoint root.
pub const CKPT_ROOT_ENV: &str = "MOTSP_CKPT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "motsp", version, about = "Bi-objective TSP solver: decomposition + attention-model policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write random instances in the native format.
    Gen(GenArgs),
    /// Train all subproblems into a checkpoint directory.
    Train(TrainArgs),
    /// Approximate the Pareto front of one instance with trained models.
    Solve(SolveArgs),
    /// Hypervolume of one or more Pareto-front CSVs under shared bounds.
    Eval(EvalArgs),
    /// Emit gnuplot data blocks for Pareto-front CSVs.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Nodes per instance.
    #[arg(long)]
    n: usize,
    /// Number of instances.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Config file of `key = value` lines; unset keys keep full-scale defaults.
    #[arg(long, conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Reproduce the run recorded in an existing manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Override a single key, e.g. `--set subproblems=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Checkpoint directory; defaults to `$MOTSP_CKPT_ROOT/run_<hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the last completed subproblem in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Checkpoint directory (relative names are also looked up under `$MOTSP_CKPT_ROOT`).
    #[arg(long)]
    ckpt: PathBuf,
    /// Instance in the native format.
    #[arg(long, conflicts_with = "tsplib", required_unless_present = "tsplib")]
    instance: Option<PathBuf>,
    /// Two TSPLIB EUC_2D files, one per objective.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    tsplib: Option<Vec<PathBuf>>,
    /// Pareto-front CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Pareto-front CSVs of the same instance; the file stem names the method.
    #[arg(long, num_args = 1.., required = true)]
    pf: Vec<PathBuf>,
    /// Reference point, in normalized units unless `--no-normalize`.
    #[arg(long = "ref", default_value = "1.2,1.2")]
    reference: String,
    /// Score the objective values as given.
    #[arg(long)]
    no_normalize: bool,
    /// Label for the `instance` column.
    #[arg(long, default_value = "instance")]
    instance: String,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Pareto-front CSVs, one data block each.
    #[arg(long, num_args = 1.., required = true)]
    pf: Vec<PathBuf>,
    /// Data file; a `.legend` sidecar names the blocks.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Plot(a) => cmd_plot(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Contract(_) | Error::BatchTooSmall(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn ckpt_root() -> Option<PathBuf> {
    std::env::var_os(CKPT_ROOT_ENV).map(PathBuf::from)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn instance_file_name(n: usize, seed: u64, k: usize) -> String {
    format!("rand_n{n}_s{seed}_{k}.motsp")
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    if a.n < 2 {
        return Err(Error::contract(format!("--n must be at least 2, got {}", a.n)));
    }
    create_dir(&a.out)?;
    for k in 0..a.count {
        let inst = MotspInstance::generate_random(a.n, derive_seed(a.seed, k as u64))?;
        inst.write_native(&a.out.join(instance_file_name(a.n, a.seed, k)))?;
    }
    println!("wrote {} instances to {}", a.count, a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.from_manifest) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Manifest::parse(&text, path)?.config
        }
        (None, None) if a.resume => match &a.out {
            Some(dir) => Manifest::load(dir)?.config,
            None => return Err(Error::contract("--resume needs --out")),
        },
        (None, None) => RunConfig::default(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::contract(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    let out = match (&a.out, ckpt_root()) {
        (Some(p), _) => p.clone(),
        (None, Some(root)) => root.join(format!("run_{}", &cfg.hash()[..12])),
        (None, None) => {
            return Err(Error::contract(format!("pass --out or set {CKPT_ROOT_ENV}")));
        }
    };
    let started = Instant::now();
    let opts = RunOptions {
        resume: a.resume,
        stop_after: None,
    };
    let trained = run::train_run(&cfg, &out, opts)?;
    println!(
        "trained {} subproblems into {} in {:.1}s (config {})",
        trained.len(),
        out.display(),
        started.elapsed().as_secs_f64(),
        &cfg.hash()[..12]
    );
    Ok(())
}

fn resolve_ckpt(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match ckpt_root() {
        Some(root) if root.join(path).exists() => root.join(path),
        _ => path.to_path_buf(),
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let dir = resolve_ckpt(&a.ckpt);
    let trained = run::load_run(&dir)?;
    let inst = match (&a.instance, &a.tsplib) {
        (Some(p), _) => MotspInstance::read_native(p)?,
        (None, Some(files)) => MotspInstance::load_tsplib_pair(&files[0], &files[1])?,
        (None, None) => return Err(Error::contract("pass --instance or --tsplib")),
    };
    let model_dx = trained.manifest.config.model.dx;
    if inst.dx() != model_dx {
        return Err(Error::contract(format!(
            "instance has {} features per node but the checkpoint expects {model_dx}",
            inst.dx()
        )));
    }
    let started = Instant::now();
    let actors: Vec<_> = trained.models.into_iter().map(|m| m.actor).collect();
    let archive = approximate_pf(&inst, &actors)?;
    let rows = pf_rows(&archive, &trained.weights)?;
    write_file(&a.out, &pf_to_csv(&rows))?;
    if inst.scaling().is_some() {
        let mut raw = String::from("subproblem,f1_raw,f2_raw\n");
        for e in archive.entries() {
            let r = inst.raw_objectives(&e.tour)?.expect("TSPLIB instance keeps its scaling");
            raw.push_str(&format!("{},{},{}\n", e.source, r.0[0], r.0[1]));
        }
        write_file(&raw_sidecar(&a.out), &raw)?;
    }
    println!(
        "archive size {} from {} models in {:.3}s",
        archive.len(),
        actors.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// `front.csv` → `front.raw.csv`.
pub fn raw_sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.raw.csv"))
}

fn front_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_fronts(paths: &[PathBuf]) -> Result<Vec<Vec<ObjectiveVector>>> {
    paths
        .iter()
        .map(|p| {
            Ok(read_pf_csv(p)?
                .into_iter()
                .map(|r| ObjectiveVector(r.objectives.to_vec()))
                .collect())
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let reference = parse_pair(&a.reference)?;
    let fronts = load_fronts(&a.pf)?;
    let cfg = HvConfig {
        reference,
        normalize: !a.no_normalize,
    };
    let hv = compute_hv_protocol(&fronts, &cfg)?;
    let records: Vec<HvRecord> = a
        .pf
        .iter()
        .zip(&fronts)
        .zip(hv)
        .map(|((p, f), hv)| HvRecord {
            instance: a.instance.clone(),
            method: front_name(p),
            hv,
            n_points: f.len(),
        })
        .collect();
    let report = hv_report_csv(&records);
    match &a.out {
        Some(out) => write_file(out, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}

/// Gnuplot data: one `# name` block of `f1 f2` lines per front, blocks
/// separated by two blank lines so `index k` selects front `k`.
pub fn plot_data(fronts: &[(String, Vec<ObjectiveVector>)]) -> String {
    let blocks: Vec<String> = fronts
        .iter()
        .map(|(name, pts)| {
            let mut b = format!("# {name}\n");
            for p in pts {
                b.push_str(&format!("{} {}\n", p.0[0], p.0[1]));
            }
            b
        })
        .collect();
    blocks.join("\n\n")
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let fronts = load_fronts(&a.pf)?;
    let named: Vec<(String, Vec<ObjectiveVector>)> = a.pf.iter().map(|p| front_name(p)).zip(fronts).collect();
    write_file(&a.out, &plot_data(&named))?;
    let mut legend_path = a.out.clone().into_os_string();
    legend_path.push(".legend");
    let legend: String = named.iter().map(|(n, _)| format!("{n}\n")).collect();
    write_file(Path::new(&legend_path), &legend)?;
    Ok(())
}
