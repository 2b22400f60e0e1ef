use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use semimart_core::doob::doob_decompose;
use semimart_core::generators::{generate, GeneratorSpec, Mode, ProcessKind, DEFAULT_JUMP_SIZE};
use semimart_core::integrand::{continuity_probe, SimpleIntegrand, StrategySequence};
use semimart_core::io::{detect_file, verify, CellSeries, EnsembleFile, FileMode, ReportFile};
use semimart_core::pipeline::{DetectConfig, LevelRow, Verdict};
use semimart_core::Error;

const EXIT_INVARIANT: u8 = 1;
const EXIT_PARAMETER: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "semimart",
    version,
    about = "Semimartingale detection on finite dyadic filtrations"
)]
struct Cli {
    /// Directory for outputs written without --out.
    #[arg(long, global = true, env = "SEMIMART_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reference process and write it as an ensemble file.
    Generate(GenerateArgs),
    /// Dump the level-n Doob decomposition of an ensemble file.
    Decompose(DecomposeArgs),
    /// Run the detection pipeline and write a report.
    Detect(DetectArgs),
    /// Re-check a report against its ensemble file.
    Verify(VerifyArgs),
    /// Tail probabilities P[|(H^k.S)_1| > delta] for H^k = 1/k.
    Probe(ProbeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    RademacherBm,
    Drifted,
    RlFractional,
    Jump,
    DeterministicDrift,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Ensemble,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    level: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Sample count in ensemble mode.
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Omit for the largest scale keeping the process within [-1, 1].
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, default_value_t = 0.75)]
    hurst: f64,
    #[arg(long, default_value_t = DEFAULT_JUMP_SIZE)]
    jump_size: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    file: PathBuf,
    #[arg(long)]
    level: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-time mean and extreme values of M and A.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    file: PathBuf,
    /// Highest level of the window (default: the file's level).
    #[arg(long)]
    level: Option<usize>,
    /// Lowest level of the window.
    #[arg(long, default_value_t = 1)]
    min_level: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1 << 20)]
    ladder_max: u64,
    #[arg(long, default_value_t = 1.1)]
    growth_min: f64,
    #[arg(long, default_value_t = 16)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-level table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    report: PathBuf,
    ensemble: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    max_k: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Csv(csv::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Csv(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(Error::Invariant(_) | Error::Convergence(_)) => EXIT_INVARIANT,
            _ => EXIT_PARAMETER,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Csv(e) => write!(f, "csv: {e}"),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a, &cli.out_dir),
        Command::Decompose(a) => cmd_decompose(a, &cli.out_dir),
        Command::Detect(a) => cmd_detect(a, &cli.out_dir),
        Command::Verify(a) => cmd_verify(a),
        Command::Probe(a) => cmd_probe(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn output_path(
    explicit: &Option<PathBuf>,
    out_dir: &Path,
    default_name: String,
) -> std::io::Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => {
            fs::create_dir_all(out_dir)?;
            Ok(out_dir.join(default_name))
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ensemble".into())
}

fn read_ensemble(path: &Path) -> Result<(EnsembleFile, Vec<u8>), Failure> {
    let bytes = fs::read(path)?;
    let file = EnsembleFile::parse(&bytes)?;
    Ok((file, bytes))
}

fn cmd_generate(a: &GenerateArgs, out_dir: &Path) -> Outcome {
    let kind = match a.kind {
        KindArg::RademacherBm => ProcessKind::RademacherBm,
        KindArg::Drifted => ProcessKind::Drifted { mu: a.mu },
        KindArg::RlFractional => ProcessKind::RlFractional { hurst: a.hurst },
        KindArg::Jump => ProcessKind::Jump { size: a.jump_size },
        KindArg::DeterministicDrift => ProcessKind::DeterministicDrift,
    };
    let mode = match a.mode {
        ModeArg::Exact => Mode::Exact,
        ModeArg::Ensemble => Mode::Ensemble { paths: a.paths },
    };
    let spec = GeneratorSpec {
        kind,
        level: a.level,
        scale: a.scale,
        seed: a.seed,
        mode,
    };
    let generated = generate(&spec)?;
    let file = EnsembleFile::from_generated(&spec, &generated);
    let name = format!("{}_L{}_seed{}.jsonl", spec.kind.name(), a.level, a.seed);
    let path = output_path(&a.out, out_dir, name)?;
    file.write(BufWriter::new(File::create(&path)?))?;
    println!("wrote {} atoms to {}", file.atoms.len(), path.display());
    Ok(0)
}

fn cmd_decompose(a: &DecomposeArgs, out_dir: &Path) -> Outcome {
    let (file, _) = read_ensemble(&a.file)?;
    let (body, rows) = match file.header.mode {
        FileMode::Exact => {
            let (_, s) = file.to_exact()?;
            let d = doob_decompose(&s, a.level)?;
            let space = d.space();
            let rows: Vec<[f64; 4]> = (0..space.grid().len())
                .map(|t| {
                    let (m, x) = (d.m.at(t), d.a.at(t));
                    let a_max = x.iter().fold(0.0_f64, |w, v| w.max(v.abs()));
                    [
                        space.grid().time(t),
                        space.expectation(m),
                        space.expectation(x),
                        a_max,
                    ]
                })
                .collect();
            let body = json!({
                "level": d.level,
                "mode": "exact",
                "m": CellSeries::of(&d.m),
                "a": CellSeries::of(&d.a),
                "qv": d.qv,
                "tv": d.tv,
                "m_energy": d.m_energy,
            });
            (body, rows)
        }
        FileMode::Ensemble => {
            let e = file.to_ensemble()?;
            let inc = e.compensator(a.level)?;
            let stride = 1usize << (e.level() - a.level);
            let a_paths: Vec<Vec<f64>> = inc
                .iter()
                .map(|x| {
                    std::iter::once(0.0)
                        .chain(x.iter().scan(0.0, |acc, v| {
                            *acc += v;
                            Some(*acc)
                        }))
                        .collect()
                })
                .collect();
            let m_paths: Vec<Vec<f64>> = e
                .paths
                .iter()
                .zip(&a_paths)
                .map(|(p, ap)| {
                    ap.iter()
                        .enumerate()
                        .map(|(k, v)| p[k * stride] - v)
                        .collect()
                })
                .collect();
            let n = a_paths.len() as f64;
            let rows = (0..=(1usize << a.level))
                .map(|k| {
                    let t = k as f64 / (1u64 << a.level) as f64;
                    let m_mean = m_paths.iter().map(|p| p[k]).sum::<f64>() / n;
                    let a_mean = a_paths.iter().map(|p| p[k]).sum::<f64>() / n;
                    let a_max = a_paths.iter().fold(0.0_f64, |w, p| w.max(p[k].abs()));
                    [t, m_mean, a_mean, a_max]
                })
                .collect();
            let body = json!({
                "level": a.level,
                "mode": "ensemble",
                "m_paths": m_paths,
                "a_paths": a_paths,
            });
            (body, rows)
        }
    };
    let path = output_path(
        &a.out,
        out_dir,
        format!("{}.L{}.decomposition.json", stem(&a.file), a.level),
    )?;
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer(&mut w, &body).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    println!(
        "wrote level-{} decomposition to {}",
        a.level,
        path.display()
    );
    if let Some(csv_path) = &a.csv {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(["t", "mean_m", "mean_a", "max_abs_a"])?;
        for r in rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    Ok(0)
}

fn cmd_detect(a: &DetectArgs, out_dir: &Path) -> Outcome {
    let (file, bytes) = read_ensemble(&a.file)?;
    let top = a.level.unwrap_or(file.header.level);
    if top > file.header.level {
        return Err(Error::Parameter {
            name: "level",
            reason: format!("file has level {}", file.header.level),
        }
        .into());
    }
    let levels = if top == 0 {
        None
    } else {
        Some((a.min_level.max(1)..=top).collect())
    };
    let config = DetectConfig {
        levels,
        eps: a.eps,
        tol: a.tol,
        ladder_max: a.ladder_max,
        growth_min: a.growth_min,
        komlos_window: a.window,
        ..DetectConfig::default()
    };
    let outcome = detect_file(&file, &config)?;
    let report = ReportFile::new(&outcome, &config, &bytes);
    let path = output_path(&a.out, out_dir, format!("{}.report.json", stem(&a.file)))?;
    fs::write(&path, report.to_json())?;
    print_table(&outcome.table);
    match &outcome.verdict {
        Verdict::Inconclusive { reason } => println!("verdict: Inconclusive ({reason})"),
        v => println!("verdict: {}", v.kind()),
    }
    println!("report written to {}", path.display());
    if let Some(csv_path) = &a.csv {
        let mut w = csv::Writer::from_path(csv_path)?;
        for row in &outcome.table {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(match outcome.verdict {
        Verdict::Inconclusive { .. } => EXIT_INCONCLUSIVE,
        _ => 0,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4e}"))
}

fn print_table(table: &[LevelRow]) {
    println!(
        "{:>3} {:>11} {:>11} {:>10} {:>10} {:>10} {:>10}",
        "n", "E[QV]", "E[TV]", "c1", "c2", "C", "P[rho<inf]"
    );
    for r in table {
        println!(
            "{:>3} {:>11.4e} {:>11.4e} {:>10} {:>10} {:>10} {:>10}",
            r.level,
            r.qv_mean,
            r.tv_mean,
            opt(r.c1),
            opt(r.c2),
            opt(r.c),
            opt(r.stop_prob)
        );
    }
}

fn cmd_verify(a: &VerifyArgs) -> Outcome {
    let report = fs::read_to_string(&a.report)?;
    let bytes = fs::read(&a.ensemble)?;
    let v = verify(&report, &bytes)?;
    for item in &v.items {
        let mark = if item.passed { "ok  " } else { "FAIL" };
        if item.detail.is_empty() {
            println!("{mark} {}", item.invariant);
        } else {
            println!("{mark} {}: {}", item.invariant, item.detail);
        }
    }
    if v.passed() {
        println!("verified");
        Ok(0)
    } else {
        let names: Vec<&str> = v.failures().iter().map(|i| i.invariant.as_str()).collect();
        eprintln!("verification failed: {}", names.join(", "));
        Ok(EXIT_INVARIANT)
    }
}

fn cmd_probe(a: &ProbeArgs) -> Outcome {
    if a.max_k == 0 {
        return Err(Error::Parameter {
            name: "max_k",
            reason: "must be at least 1".into(),
        }
        .into());
    }
    let (file, _) = read_ensemble(&a.file)?;
    let (space, s) = file.to_exact()?;
    let seq = StrategySequence::new(
        (1..=a.max_k)
            .map(|k| SimpleIntegrand::constant(space.clone(), 1.0 / k as f64))
            .collect(),
    );
    let report = continuity_probe(&s, &seq, a.delta)?;
    println!("{:>4} {:>12} {:>12}", "k", "sup|H^k|", "tail");
    for (k, (li, tail)) in report.li.iter().zip(&report.tail).enumerate() {
        println!("{:>4} {:>12.6} {:>12.6}", k + 1, li, tail);
    }
    if !report.li_vanishing {
        eprintln!("warning: strategy sizes do not shrink along the sequence");
    }
    if let Some(csv_path) = &a.csv {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(["k", "li", "tail"])?;
        for (k, (li, tail)) in report.li.iter().zip(&report.tail).enumerate() {
            w.write_record([(k + 1).to_string(), li.to_string(), tail.to_string()])?;
        }
        w.flush()?;
    }
    Ok(0)
}
