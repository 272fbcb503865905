//! Command-line front end: `mine`, `verify`, `backtest`, `eval`, `synth`.

pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

use factorlab::backtest::{run_backtest_with, BacktestOptions, TurnoverConvention};
use factorlab::metrics::{daily_ic, daily_rank_ic, information_ratio, mean_ic};
use factorlab::panel::{self, Subset};
use factorlab::policy::PolicyConfig;
use factorlab::pool::{PoolConfig, PoolSnapshot};
use factorlab::trainer::{OptimizerKind, ShapingSchedule, StepReport, TrainConfig, TrainData, Trainer};
use factorlab::{Error, PanelTensor, RpnProgram, SplitSpec, TargetPanel};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

const DATA_KEYS: &[&str] = &[
    "data",
    "synth",
    "signal",
    "signal_strength",
    "n_assets",
    "n_days",
    "horizon",
    "train_frac",
    "valid_frac",
    "lookback",
    "seed",
    "threads",
];

const MINE_KEYS: &[&str] = &[
    "steps",
    "batch_size",
    "lr",
    "optimizer",
    "baseline",
    "lambda",
    "alpha",
    "eta",
    "delta",
    "reward_floor",
    "patience",
    "checkpoint_every",
    "pool_capacity",
    "pool_lr",
    "pool_max_iters",
    "pool_tol",
    "embed",
    "hidden",
    "max_len",
    "out",
];

const BACKTEST_KEYS: &[&str] = &["pool", "split", "k", "cost_bps", "turnover", "out"];
const EVAL_KEYS: &[&str] = &["pool", "split"];
const VERIFY_KEYS: &[&str] = &["seed", "threads", "samples", "r1", "r2", "p", "noise", "report"];
const SYNTH_KEYS: &[&str] = &["signal", "signal_strength", "n_assets", "n_days", "seed", "output", "threads"];

fn key_arg(key: &'static str) -> Arg {
    let help = config::KEYS
        .iter()
        .find(|(k, _, _)| *k == key)
        .map(|(_, d, h)| if d.is_empty() { h.to_string() } else { format!("{h} [default: {d}]") })
        .unwrap_or_default();
    let arg = Arg::new(key).long(key).help(help).action(ArgAction::Set);
    if config::is_flag(key) {
        arg.num_args(0..=1).default_missing_value("true").value_name("BOOL")
    } else {
        arg.num_args(1).allow_hyphen_values(true)
    }
}

fn subcommand(name: &'static str, about: &'static str, groups: &[&[&'static str]]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat key = value settings applied before flags"),
    );
    let mut seen: Vec<&str> = Vec::new();
    for key in groups.iter().flat_map(|g| g.iter()) {
        if !seen.contains(key) {
            seen.push(key);
            cmd = cmd.arg(key_arg(key));
        }
    }
    cmd
}

pub fn command() -> Command {
    Command::new("factorlab")
        .about("Mine, verify and backtest formulaic alpha factors")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand("mine", "train the factor generator and write a run directory", &[DATA_KEYS, MINE_KEYS]))
        .subcommand(subcommand("verify", "check the estimator propositions on small bandits", &[VERIFY_KEYS]))
        .subcommand(subcommand("backtest", "run the top-k strategy on a pool's combined signal", &[DATA_KEYS, BACKTEST_KEYS]))
        .subcommand(subcommand("eval", "print IC, rank IC and IR of a pool", &[DATA_KEYS, EVAL_KEYS]))
        .subcommand(subcommand("synth", "write a synthetic market to CSV", &[SYNTH_KEYS]))
}

fn effective_config(m: &ArgMatches) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(Path::new(path))?;
    }
    for (key, _, _) in config::KEYS {
        if let Ok(Some(v)) = m.try_get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Parses `args` (program name first), dispatches, and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = effective_config(sub).and_then(|cfg| match name {
        "mine" => cmd_mine(&cfg, out).map(|_| ()),
        "verify" => cmd_verify(&cfg, out, err),
        "backtest" => cmd_backtest(&cfg, out).map(|_| ()),
        "eval" => cmd_eval(&cfg, out).map(|_| ()),
        "synth" => cmd_synth(&cfg, out),
        _ => unreachable!("unknown subcommand"),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// Creates the first free `<out>/<prefix>-NNNN` directory.
pub fn new_run_dir(out: &Path, prefix: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for i in 1..100_000 {
        let dir = out.join(format!("{prefix}-{i:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e).into()),
        }
    }
    Err(CliError::Usage(format!("no free run directory under {}", out.display())))
}

fn signal_program(cfg: &RunConfig) -> CliResult<RpnProgram> {
    Ok(RpnProgram::from_infix(cfg.str("signal"))?)
}

/// Loads `--data` or generates `--synth` data, returning the full panel.
pub fn load_data(cfg: &RunConfig) -> CliResult<(PanelTensor, TargetPanel)> {
    let horizon: usize = cfg.get("horizon")?;
    if cfg.flag("synth")? {
        let signal = signal_program(cfg)?;
        return Ok(panel::synth_market(
            cfg.get("n_assets")?,
            cfg.get("n_days")?,
            &signal,
            cfg.get("signal_strength")?,
            cfg.get("seed")?,
        )?);
    }
    let path = cfg.str("data");
    if path.is_empty() {
        return Err(CliError::Usage("either `data` or `synth` must be given".into()));
    }
    let schema = panel::csv_features(path)?;
    Ok(panel::load_csv(path, &schema, horizon)?)
}

/// Train, validation and test subsets with warm-up rows.
pub fn load_splits(cfg: &RunConfig) -> CliResult<[Subset; 3]> {
    let (panel, target) = load_data(cfg)?;
    let spec = SplitSpec::by_fractions(panel.dates(), cfg.get("train_frac")?, cfg.get("valid_frac")?)?;
    Ok(panel::split(&panel, &target, &spec, cfg.get("lookback")?)?)
}

pub fn train_config(cfg: &RunConfig) -> CliResult<TrainConfig> {
    let optimizer = match cfg.str("optimizer") {
        "adam" => OptimizerKind::Adam,
        "sgd" => OptimizerKind::Sgd,
        v => return Err(CliError::Usage(format!("invalid value {v:?} for `optimizer` (adam or sgd)"))),
    };
    let patience: u64 = cfg.get("patience")?;
    let config = TrainConfig {
        batch_size: cfg.get("batch_size")?,
        lr: cfg.get("lr")?,
        total_steps: cfg.get("steps")?,
        seed: cfg.get("seed")?,
        optimizer,
        reward_floor: cfg.get("reward_floor")?,
        use_baseline: cfg.flag("baseline")?,
        max_len: cfg.get("max_len")?,
        patience: (patience > 0).then_some(patience),
        pool: PoolConfig {
            capacity: cfg.get("pool_capacity")?,
            lr: cfg.get("pool_lr")?,
            max_iters: cfg.get("pool_max_iters")?,
            tol: cfg.get("pool_tol")?,
        },
        policy: PolicyConfig {
            embed: cfg.get("embed")?,
            hidden: cfg.get("hidden")?,
            ..PolicyConfig::default()
        },
        schedule: ShapingSchedule {
            lambda: cfg.get("lambda")?,
            alpha: cfg.get("alpha")?,
            eta: cfg.get("eta")?,
            delta: cfg.get("delta")?,
            t: 0,
        },
    };
    config.validate()?;
    Ok(config)
}

/// ĪC, rank ĪC and ĪR of a pool's combined signal on a subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolMetrics {
    pub ic: f64,
    pub rank_ic: f64,
    pub ir: f64,
}

pub fn pool_metrics(snapshot: &PoolSnapshot, subset: &Subset) -> CliResult<PoolMetrics> {
    let (panel, target) = subset;
    check_features(snapshot, panel)?;
    let signal = snapshot.signal(panel)?;
    let ic = daily_ic(&signal, &target.returns, panel.eval_days());
    let rank = daily_rank_ic(&signal, &target.returns, panel.eval_days());
    Ok(PoolMetrics {
        ic: mean_ic(&ic),
        rank_ic: mean_ic(&rank),
        ir: information_ratio(&ic),
    })
}

fn check_features(snapshot: &PoolSnapshot, panel: &PanelTensor) -> CliResult<()> {
    if snapshot.entries.is_empty() {
        return Err(Error::Pool("pool is empty".into()).into());
    }
    for (_, program) in &snapshot.entries {
        if let Some(f) = program.features().find(|f| !panel.features().contains(f)) {
            return Err(Error::Data(format!(
                "factor `{}` uses feature `{}`, which is absent from the data",
                program.to_infix(),
                f.name()
            ))
            .into());
        }
    }
    Ok(())
}

const HISTORY_HEADER: &str =
    "step,mean_reward,baseline,pool_ic,pool_ir,grad_norm,threshold,grad_variance,max_abs_reward,valid_ic,pool_size";

fn history_row(r: &StepReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.mean_reward,
        r.baseline,
        r.pool_ic,
        r.pool_ir,
        r.grad_norm,
        r.threshold,
        r.grad_variance,
        r.max_abs_reward,
        r.valid_ic,
        r.pool_size
    )
}

/// Outcome of a mining run.
#[derive(Debug, Clone)]
pub struct MineOutcome {
    pub dir: PathBuf,
    pub history: Vec<StepReport>,
    pub pool: PoolSnapshot,
    pub valid: PoolMetrics,
    pub test: PoolMetrics,
}

pub fn cmd_mine(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<MineOutcome> {
    let train_cfg = train_config(cfg)?;
    let checkpoint_every: u64 = cfg.get("checkpoint_every")?;
    let out_dir = PathBuf::from(cfg.str("out"));
    let [train, valid, test] = load_splits(cfg)?;
    let mut trainer = Trainer::new(
        train_cfg,
        TrainData {
            train,
            valid: Some(valid.clone()),
        },
    )?;

    let dir = new_run_dir(&out_dir, "run")?;
    write_file(&dir.join("config.txt"), &cfg.to_text())?;
    let hash = cfg.hash();
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let history_path = dir.join("history.csv");
    let file = fs::File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut history_out = BufWriter::new(file);
    let io = |e| Error::io(&history_path, e);
    writeln!(history_out, "{HISTORY_HEADER}").map_err(io)?;

    let history = trainer.train(|report, t| {
        writeln!(history_out, "{}", history_row(report)).map_err(|e| Error::io(&history_path, e))?;
        if checkpoint_every > 0 && report.step % checkpoint_every == 0 {
            t.policy().save(ckpt_dir.join(format!("step_{}", report.step)), &hash)?;
        }
        Ok(())
    })?;
    history_out.flush().map_err(|e| Error::io(&history_path, e))?;
    drop(history_out);

    trainer.policy().save(ckpt_dir.join("final"), &hash)?;
    let pool = trainer.pool().snapshot();
    pool.write(dir.join("pool.txt"))?;

    let nan = PoolMetrics {
        ic: f64::NAN,
        rank_ic: f64::NAN,
        ir: f64::NAN,
    };
    let (valid_m, test_m) = if pool.entries.is_empty() {
        (nan, nan)
    } else {
        (pool_metrics(&pool, &valid)?, pool_metrics(&pool, &test)?)
    };
    let train_score = trainer.pool().score();
    let steps = history.last().map_or(0, |r| r.step);
    let summary = format!(
        "steps = {steps}\nstopped_early = {}\npool_size = {}\ntrain_ic = {}\ntrain_ir = {}\nvalid_ic = {}\nvalid_rank_ic = {}\nvalid_ir = {}\ntest_ic = {}\ntest_rank_ic = {}\ntest_ir = {}\n",
        steps < trainer.config().total_steps,
        pool.entries.len(),
        train_score.ic,
        train_score.ir,
        valid_m.ic,
        valid_m.rank_ic,
        valid_m.ir,
        test_m.ic,
        test_m.rank_ic,
        test_m.ir,
    );
    write_file(&dir.join("summary.txt"), &summary)?;
    let _ = writeln!(out, "{}", dir.display());
    let _ = write!(out, "{summary}");
    Ok(MineOutcome {
        dir,
        history,
        pool,
        valid: valid_m,
        test: test_m,
    })
}

fn chosen_subset(cfg: &RunConfig) -> CliResult<Subset> {
    let name = cfg.str("split");
    if name == "all" {
        return load_data(cfg);
    }
    let [train, valid, test] = load_splits(cfg)?;
    match name {
        "train" => Ok(train),
        "valid" => Ok(valid),
        "test" => Ok(test),
        v => Err(CliError::Usage(format!("invalid value {v:?} for `split` (train, valid, test or all)"))),
    }
}

fn read_pool(cfg: &RunConfig) -> CliResult<PoolSnapshot> {
    let path = cfg.str("pool");
    if path.is_empty() {
        return Err(CliError::Usage("`pool` must name a pool file".into()));
    }
    Ok(PoolSnapshot::read(path)?)
}

/// Writes `daily.csv`, `quarterly.csv`, `summary.txt` and the config echo
/// into a fresh `<out>/backtest-NNNN` directory.
pub fn cmd_backtest(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<PathBuf> {
    let snapshot = read_pool(cfg)?;
    let convention = match cfg.str("turnover") {
        "one_way" => TurnoverConvention::OneWay,
        "two_way" => TurnoverConvention::TwoWay,
        v => return Err(CliError::Usage(format!("invalid value {v:?} for `turnover` (one_way or two_way)"))),
    };
    let options = BacktestOptions {
        k: cfg.get("k")?,
        cost_bps: cfg.get("cost_bps")?,
        convention,
    };
    let (panel, _) = chosen_subset(cfg)?;
    check_features(&snapshot, &panel)?;
    let signal = snapshot.signal(&panel)?;
    let report = run_backtest_with(&signal, &panel, &options)?;
    let dir = new_run_dir(Path::new(cfg.str("out")), "backtest")?;
    write_file(&dir.join("config.txt"), &cfg.to_text())?;
    report.write(&dir)?;
    let _ = writeln!(out, "{}", dir.display());
    let _ = write!(out, "{}", report.summary());
    Ok(dir)
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<PoolMetrics> {
    let snapshot = read_pool(cfg)?;
    let subset = chosen_subset(cfg)?;
    let m = pool_metrics(&snapshot, &subset)?;
    let _ = writeln!(out, "ic = {}\nrank_ic = {}\nir = {}", m.ic, m.rank_ic, m.ir);
    Ok(m)
}

pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let path = cfg.str("output");
    if path.is_empty() {
        return Err(CliError::Usage("`output` must name the CSV to write".into()));
    }
    let signal = signal_program(cfg)?;
    let (panel, target) = panel::synth_market(
        cfg.get("n_assets")?,
        cfg.get("n_days")?,
        &signal,
        cfg.get("signal_strength")?,
        cfg.get("seed")?,
    )?;
    panel::write_csv(path, &panel, Some(&target))?;
    let _ = writeln!(
        out,
        "wrote {} assets x {} days to {path}",
        panel.n_assets(),
        panel.n_days()
    );
    Ok(())
}

pub fn cmd_verify(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let p: Option<f64> = match cfg.str("p") {
        "" => None,
        _ => Some(cfg.get("p")?),
    };
    let options = verify::VerifyOptions {
        samples: cfg.get("samples")?,
        r1: cfg.get("r1")?,
        r2: cfg.get("r2")?,
        p,
        noise: cfg.list("noise")?,
        seed: cfg.get("seed")?,
    };
    let report = verify::run_verify(&options)?;
    for w in &report.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    for line in &report.lines {
        let _ = writeln!(out, "{line}");
    }
    let path = cfg.str("report");
    if !path.is_empty() {
        write_file(Path::new(path), &report.csv)?;
    }
    match report.lines.iter().find(|l| !l.pass) {
        None => Ok(()),
        Some(l) => Err(CliError::Verification(format!("{} at {}", l.name, l.detail))),
    }
}

