use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use plc_mimo::capacity::{capacity_ccdf, NoiseModel, PsdMask};
use plc_mimo::characterization::{characterize, empirical_matrices, Characterization, CharacterizeOptions};
use plc_mimo::covariance::CacheKey;
use plc_mimo::generator::{generate_copula, EmpiricalMatrices, GenerationMode, GeneratorConfig, SyntheticGenerator};
use plc_mimo::io::params::GridSpec;
use plc_mimo::io::report::EnvironmentStamp;
use plc_mimo::io::{self, tables, ParameterFile, ValidationReport, ValidationTarget};
use plc_mimo::metrics::{compute_metrics, summarize, MetricsSummary};
use plc_mimo::{ChannelSet, Error, Scheme};

const PARAMS_ENV: &str = "PLC_MIMO_PARAMS";
const CACHE_ENV: &str = "PLC_MIMO_CACHE_DIR";

#[derive(Parser)]
#[command(name = "plc-mimo", version, about = "Synthetic MIMO power-line channel generator and analyzer")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate channel realizations as CSV.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate model parameters from a channel CSV.
    Characterize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit diagnostics as text (stderr when omitted).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Also write the empirical matrices used by copula generation.
        #[arg(long)]
        copula_matrices_out: Option<PathBuf>,
        /// Bisquare-weighted phase slopes.
        #[arg(long)]
        robust_phase: bool,
    },
    /// Compare metrics against reference statistics.
    Validate {
        /// Channel CSV; when omitted the set is generated from the generation flags.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
        /// table3-synthetic, table3-experimental, table4-siso, table4-2x2, or `custom <file>`.
        #[arg(long, num_args = 1..=2, value_names = ["TARGET", "FILE"], default_value = "table3-synthetic")]
        targets: Vec<String>,
        #[command(flatten)]
        cap: CapacityArgs,
        /// Machine-readable key=value report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-realization ACG, RMS delay spread, coherence bandwidth and condition number.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Water-filling capacity per realization and its CCDF.
    Capacity {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        cap: CapacityArgs,
        /// CCDF CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-realization capacity CSV.
        #[arg(long)]
        per_realization: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Siso,
    #[value(name = "2x2")]
    Mimo2x2,
    #[value(name = "2x3")]
    Mimo2x3,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Siso => Scheme::Siso,
            SchemeArg::Mimo2x2 => Scheme::Mimo2x2,
            SchemeArg::Mimo2x3 => Scheme::Mimo2x3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Synthetic,
    Copula,
}

#[derive(Args)]
struct GenArgs {
    /// Parameter file (defaults to $PLC_MIMO_PARAMS, then built-in values).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "2x3")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 353)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    decimate: usize,
    #[arg(long, value_enum, default_value = "synthetic")]
    mode: ModeArg,
    #[arg(long)]
    copula_matrices: Option<PathBuf>,
    /// Apply the exponential CM correction at large lags.
    #[arg(long)]
    exp_refinement: bool,
    /// Directory for cached covariance square roots (defaults to $PLC_MIMO_CACHE_DIR).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CapacityArgs {
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::Parse { .. } | Error::Io(_) => 2,
        Error::Parameter(_) => 3,
        Error::Numerical(_) | Error::SingularFit(_) | Error::DegenerateChannel { .. } | Error::CacheMismatch(_) => 4,
        Error::InsufficientData(_) | Error::UndefinedCorrelation { .. } => 5,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

fn with_path(path: &Path, e: Error) -> Failure {
    Failure::new(exit_code(&e), format!("{}: {e}", path.display()))
}

fn load_params(explicit: Option<&Path>) -> Result<ParameterFile, Failure> {
    let env = std::env::var_os(PARAMS_ENV).map(PathBuf::from);
    match explicit.map(Path::to_path_buf).or(env) {
        Some(path) => ParameterFile::read(&path).map_err(|e| Failure::new(3, format!("{}: {e}", path.display()))),
        None => Ok(ParameterFile::default()),
    }
}

fn read_set(path: &Path) -> Result<ChannelSet, Failure> {
    io::read_channel_file(path).map_err(|e| with_path(path, e))
}

fn generate_set(gen: &GenArgs) -> Result<ChannelSet, Failure> {
    let file = load_params(gen.params.as_deref())?;
    let config = GeneratorConfig {
        n_realizations: gen.n,
        seed: gen.seed,
        scheme: gen.scheme.into(),
        mode: match gen.mode {
            ModeArg::Synthetic => GenerationMode::Synthetic,
            ModeArg::Copula => GenerationMode::NotFullySynthetic,
        },
        exponential_cm_refinement: gen.exp_refinement,
        decimation: gen.decimate,
    };
    let base = file.base_grid().map_err(|e| Failure::new(3, e.to_string()))?;
    let grid = config.effective_grid(&base)?;
    match config.mode {
        GenerationMode::Synthetic => {
            let cache_dir = gen.cache_dir.clone().or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from));
            let (generator, report) = match cache_dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| with_path(&dir, e.into()))?;
                    let key = CacheKey::new(&file.params, &grid, config.exponential_cm_refinement);
                    SyntheticGenerator::with_cache(
                        &file.params,
                        &grid,
                        config.exponential_cm_refinement,
                        &dir.join(key.file_name()),
                    )?
                }
                None => {
                    let (g, r) = SyntheticGenerator::new(&file.params, &grid, config.exponential_cm_refinement)?;
                    (g, Some(r))
                }
            };
            if let Some(r) = report {
                eprintln!("covariance repair: {r}");
            }
            Ok(generator.generate(config.n_realizations, config.seed)?)
        }
        GenerationMode::NotFullySynthetic => {
            let path = gen
                .copula_matrices
                .as_deref()
                .ok_or_else(|| Failure::new(2, "--mode copula needs --copula-matrices"))?;
            let matrices = EmpiricalMatrices::read(path).map_err(|e| with_path(path, e))?;
            let (set, reports) = generate_copula(&config, &matrices, &grid)?;
            eprintln!("amplitude repair: {}", reports.amplitude);
            eprintln!("phase repair: {}", reports.phase);
            Ok(set)
        }
    }
}

fn diagnostics_text(c: &Characterization) -> String {
    let d = &c.diagnostics;
    let mut out = String::new();
    let fits = [
        ("mu", Some(&d.mu)),
        ("sigma.nocm", Some(&d.sigma_nocm)),
        ("sigma.cm", Some(&d.sigma_cm)),
        ("antidiag.nocm", Some(&d.power_nocm)),
        ("antidiag.cm", Some(&d.power_cm)),
        ("antidiag.cm_exp", d.exp_cm.as_ref()),
        ("gev", Some(&d.gev)),
    ];
    for (name, fit) in fits {
        let Some(f) = fit else {
            writeln!(out, "{name}: not fitted").ok();
            continue;
        };
        writeln!(
            out,
            "{name}: estimates {:?} std_errors {:?} residual {:.6e} iterations {} converged {}",
            f.estimates, f.std_errors, f.residual_norm, f.iterations, f.converged
        )
        .ok();
        for n in &f.notes {
            writeln!(out, "{name}: {n}").ok();
        }
    }
    writeln!(
        out,
        "lags where the fitted law reaches 1: nocm {}, cm {}",
        d.saturated_lags.0, d.saturated_lags.1
    )
    .ok();
    for n in &d.notes {
        writeln!(out, "note: {n}").ok();
    }
    out
}

fn load_capacity_inputs(cap: &CapacityArgs, defaults: Option<&ParameterFile>) -> Result<Option<(NoiseModel, PsdMask)>, Failure> {
    let noise = match &cap.noise {
        Some(p) => Some(io::read_noise_file(p).map_err(|e| with_path(p, e))?),
        None => defaults.and_then(|f| f.noise.clone()),
    };
    let mask = match &cap.mask {
        Some(p) => Some(io::read_mask_file(p).map_err(|e| with_path(p, e))?),
        None => defaults.and_then(|f| f.mask.clone()),
    };
    if noise.is_none() && mask.is_none() {
        return Ok(None);
    }
    Ok(Some((noise.unwrap_or_default(), mask.unwrap_or_default())))
}

fn print_summary(s: &MetricsSummary) {
    println!("realizations {} modes {}", s.n_realizations, s.n_modes);
    println!("acg_db mean {:.4} std {:.4}", s.acg_db.mean, s.acg_db.std);
    println!("rms_ds_us mean {:.4} std {:.4}", s.rms_ds_us.mean, s.rms_ds_us.std);
    println!("cb_khz mean {:.4} std {:.4}", s.cb_khz.mean, s.cb_khz.std);
    if let Some(k) = s.kappa_db {
        println!("kappa_db mean {:.4} std {:.4}", k.mean, k.std);
    }
    if let Some(c) = s.capacity_gbps {
        println!("capacity_gbps mean {:.4} std {:.4}", c.mean, c.std);
    }
}

fn parse_targets(targets: &[String]) -> Result<ValidationTarget, Failure> {
    match targets {
        [name] if name == "custom" => Err(Failure::new(2, "--targets custom needs a file")),
        [name] => Ok(name.parse()?),
        [name, file] if name == "custom" => {
            let path = Path::new(file);
            ValidationTarget::read_custom(path).map_err(|e| with_path(path, e))
        }
        _ => Err(Failure::new(2, "only `--targets custom <file>` takes a second value")),
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::new(2, "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(2, e.to_string()))?;
    }
    match cli.command {
        Command::Generate { gen, out } => {
            let set = generate_set(&gen)?;
            io::write_channel_file(&out, &set).map_err(|e| with_path(&out, e))?;
        }
        Command::Characterize {
            input,
            out,
            diagnostics,
            copula_matrices_out,
            robust_phase,
        } => {
            let set = read_set(&input)?;
            let options = CharacterizeOptions {
                robust_phase_slopes: robust_phase,
                ..Default::default()
            };
            let c = characterize(&set, &options)?;
            let grid = set.grid();
            let file = ParameterFile {
                params: c.params,
                grid: Some(GridSpec {
                    f_start_hz: grid.f_start(),
                    f_step_hz: grid.f_step(),
                    n_freq: grid.n_freq(),
                }),
                ..Default::default()
            };
            file.write(&out).map_err(|e| with_path(&out, e))?;
            let text = diagnostics_text(&c);
            match diagnostics {
                Some(p) => io::write_atomic(&p, |w| Ok(w.write_all(text.as_bytes())?)).map_err(|e| with_path(&p, e))?,
                None => eprint!("{text}"),
            }
            if let Some(p) = copula_matrices_out {
                empirical_matrices(&set)?.write(&p).map_err(|e| with_path(&p, e))?;
            }
        }
        Command::Validate {
            input,
            gen,
            targets,
            cap,
            report,
        } => {
            let target = parse_targets(&targets)?;
            let (set, stamp) = match &input {
                Some(path) => {
                    let set = read_set(path)?;
                    let stamp = EnvironmentStamp {
                        seed: None,
                        scheme: set.grid().scheme().map_or("custom".into(), |s| s.to_string()),
                        n_freq: set.grid().n_freq(),
                        f_step_hz: set.grid().f_step(),
                        decimation: 1,
                        n_realizations: set.len(),
                        source: path.display().to_string(),
                    };
                    (set, stamp)
                }
                None => {
                    let set = generate_set(&gen)?;
                    let stamp = EnvironmentStamp {
                        seed: Some(gen.seed),
                        scheme: Scheme::from(gen.scheme).to_string(),
                        n_freq: set.grid().n_freq(),
                        f_step_hz: set.grid().f_step(),
                        decimation: gen.decimate,
                        n_realizations: set.len(),
                        source: "generated".into(),
                    };
                    (set, stamp)
                }
            };
            let params_file = if input.is_none() { Some(load_params(gen.params.as_deref())?) } else { None };
            let capacity = match load_capacity_inputs(&cap, params_file.as_ref())? {
                Some((noise, mask)) => Some(capacity_ccdf(&set, &noise, &mask)?.per_realization),
                None => None,
            };
            let metrics = compute_metrics(&set)?;
            let summary = summarize(&metrics, capacity.as_deref())?;
            let rep = ValidationReport::evaluate(&target, &summary, stamp);
            print!("{}", rep.to_text());
            if let Some(p) = report {
                let kv = rep.to_key_value();
                io::write_atomic(&p, |w| Ok(w.write_all(kv.as_bytes())?)).map_err(|e| with_path(&p, e))?;
            }
            if !rep.passed() {
                return Ok(6);
            }
        }
        Command::Metrics { input, out } => {
            let set = read_set(&input)?;
            let metrics = compute_metrics(&set)?;
            tables::write_metrics_file(&out, &metrics).map_err(|e| with_path(&out, e))?;
            print_summary(&summarize(&metrics, None)?);
        }
        Command::Capacity {
            input,
            cap,
            out,
            per_realization,
        } => {
            let set = read_set(&input)?;
            let (noise, mask) = load_capacity_inputs(&cap, None)?.unwrap_or_default();
            let result = capacity_ccdf(&set, &noise, &mask)?;
            tables::write_ccdf_file(&out, &result.ccdf).map_err(|e| with_path(&out, e))?;
            if let Some(p) = per_realization {
                tables::write_capacity_file(&p, &result.per_realization).map_err(|e| with_path(&p, e))?;
            }
            let n = result.per_realization.len() as f64;
            let mean = result.per_realization.iter().sum::<f64>() / n;
            println!("capacity mean {:.6} Gbps over {} realizations", mean / 1e9, n);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
