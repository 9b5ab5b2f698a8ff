use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use seqmetro_cli::config::{NSpec, RunConfig};
use seqmetro_cli::experiment::{run_experiment, RunOptions, CSV_FILE, REPORT_FILE};
use seqmetro_cli::CliError;
use seqmetro_core::channels::Preset;
use seqmetro_core::optimize::{read_checkpoint, ControlMode};

/// Optimize sequential metrology strategies over a range of query counts.
///
/// Flags override the matching config-file entries.
#[derive(Debug, Parser)]
#[command(name = "seqmetro", version)]
struct Args {
    /// TOML experiment description.
    #[arg(long)]
    config: Option<PathBuf>,
    /// bit_flip, amplitude_damping or dephasing_direction.
    #[arg(long)]
    preset: Option<String>,
    /// Query counts: `5`, `2,4,8` or `2..10` (inclusive).
    #[arg(long = "N")]
    n: Option<String>,
    /// arbitrary_cptp, identical_cptp, variational_local or variational_global.
    #[arg(long)]
    mode: Option<String>,
    /// Ancilla dimension.
    #[arg(long)]
    ancilla: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Chain each N from the previous optimum (true/false).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    warm_start: Option<bool>,
    /// Cross-check contractions densely for N <= 4.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint every k outer iterations; 0 disables.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn parse_n(text: &str) -> Result<NSpec, CliError> {
    let bad = || CliError::Config(format!("--N: cannot parse {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        return Ok(NSpec::Range(seqmetro_cli::config::NRange { start, end, step: 1 }));
    }
    text.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>().map(NSpec::List)
}

fn build(args: &Args) -> Result<(RunConfig, RunOptions), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut opts = RunOptions::default();

    if let Some(path) = &args.resume {
        let ck = read_checkpoint(path).map_err(|e| CliError::Config(format!("--resume: {e}")))?;
        cfg.preset = Preset::from_name(&ck.channel)
            .ok_or_else(|| CliError::Config(format!("--resume: checkpoint channel {:?} is not a preset", ck.channel)))?;
        cfg.p = ck.p;
        cfg.theta0 = ck.theta0;
        cfg.mode = ck.strategy.mode();
        cfg.ancilla_dim = ck.strategy.ancilla_dim;
        cfg.n = NSpec::List(vec![ck.strategy.n]);
        cfg.settings = ck.settings.clone();
        cfg.settings.max_outer_iters = cfg.settings.max_outer_iters.saturating_sub(ck.iteration).max(1);
        cfg.seed = None;
        opts.resume_trace = ck.qfi_trace;
        opts.resume = Some(ck.strategy);
    }

    if let Some(p) = &args.preset {
        cfg.preset = Preset::from_name(p).ok_or_else(|| CliError::Config(format!("--preset: unknown preset {p:?}")))?;
    }
    if let Some(n) = &args.n {
        cfg.n = parse_n(n)?;
    }
    if let Some(m) = &args.mode {
        cfg.mode = ControlMode::from_name(m).ok_or_else(|| CliError::Config(format!("--mode: unknown mode {m:?}")))?;
    }
    if let Some(a) = args.ancilla {
        cfg.ancilla_dim = a;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if let Some(w) = args.warm_start {
        cfg.warm_start = w;
    }
    cfg.verify |= args.verify;
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(k) = args.checkpoint_every {
        cfg.settings.checkpoint_every = k;
    }
    cfg.validate()?;
    Ok((cfg, opts))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = build(&args).and_then(|(cfg, opts)| {
        let report = run_experiment(&cfg, &opts)?;
        for p in &report.points {
            println!("N={:<4} qfi={:<14.6} qfi/N={:<10.5} status={:?}", p.row.n, p.row.qfi, p.row.qfi_per_n, p.report.status);
        }
        println!("wrote {} and {}", cfg.out.join(CSV_FILE).display(), cfg.out.join(REPORT_FILE).display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seqmetro: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
