use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use paretosr::harness::{
    self, add_noise, emit_report, load_table, noise_tolerance, write_trace, NoiseSpec, RunInfo, TableFormat,
    ToleranceConfig, ToleranceOracle,
};
use paretosr::par::{init_global_pool, thread_cap_from_env};
use paretosr::solver::{fit, FitOutcome, OracleChoice, SolveConfig};
use paretosr::{BasisSet, DataTable, Expression};

/// Pareto-optimal symbolic regression.
#[derive(Parser)]
#[command(name = "paretosr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a table and write the frontier, ranking and run trace.
    Fit(FitArgs),
    /// Run a bundled suite of mysteries.
    Bench(BenchArgs),
    /// Add Gaussian noise of standard deviation 10^r to a table's target.
    Noise(NoiseArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OracleArg {
    Exact,
    Net,
}

#[derive(Args, Clone, Debug)]
struct SearchArgs {
    /// Racing confidence: a candidate is dropped once it is this many
    /// standard errors behind the record.
    #[arg(long, default_value_t = 10.0)]
    nu: f64,
    /// Largest variable subset tried by the symmetry screen.
    #[arg(long, default_value_t = 3)]
    ng: usize,
    #[arg(long, default_value_t = 4)]
    poly_degree: usize,
    /// Precision floor as a power of two: epsilon = 2^-bits.
    #[arg(long, default_value_t = 30.0)]
    epsilon_bits: f64,
    /// Wall-clock limit per brute-force search.
    #[arg(long, default_value_t = 60.0)]
    brute_budget_secs: f64,
    #[arg(long, default_value_t = 24.0)]
    max_complexity_bits: f64,
    /// Wall-clock limit for the whole run.
    #[arg(long, default_value_t = 3600.0)]
    time_budget_secs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden layer widths of the surrogate network.
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    net_hidden: Vec<usize>,
    #[arg(long, default_value_t = 5000)]
    net_epochs: usize,
    /// Network seed; defaults to --seed.
    #[arg(long)]
    net_seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    symmetry_neighbors: usize,
    #[arg(long, default_value_t = 0.1)]
    additivity_threshold: f64,
    /// Largest denominator tried when snapping constants to fractions.
    #[arg(long, default_value_t = 100)]
    rational_max_den: u64,
    /// Fraction of rows held out for ranking.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
}

impl SearchArgs {
    fn config(&self) -> Result<SolveConfig> {
        if !(self.epsilon_bits > 0.0) {
            bail!("--epsilon-bits must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            bail!("--test-fraction must lie in [0, 1)");
        }
        let secs = |s: f64, flag: &str| {
            if s > 0.0 && s.is_finite() {
                Ok(Duration::from_secs_f64(s))
            } else {
                bail!("{flag} must be a positive number of seconds")
            }
        };
        let mut c = SolveConfig::default();
        c.mdl.epsilon = (-self.epsilon_bits).exp2();
        c.seed = self.seed;
        c.test_fraction = self.test_fraction;
        c.time_budget = secs(self.time_budget_secs, "--time-budget-secs")?;
        c.brute.nu = self.nu;
        c.brute.time_budget = secs(self.brute_budget_secs, "--brute-budget-secs")?;
        c.brute.max_complexity_bits = self.max_complexity_bits;
        c.modularity.n_g = self.ng;
        c.modularity.neighbors = self.symmetry_neighbors;
        c.modularity.additivity_threshold = self.additivity_threshold;
        c.modularity.brute.time_budget = c.brute.time_budget;
        c.poly.max_degree = self.poly_degree;
        c.poly.max_den = self.rational_max_den;
        c.refine.max_den = self.rational_max_den;
        c.net.layer_widths = self.net_hidden.clone();
        c.net.epochs = self.net_epochs;
        c.net.seed = self.net_seed.unwrap_or(self.seed);
        Ok(c)
    }

    /// Settings echoed into the result JSON.
    fn echo(&self) -> serde_json::Value {
        json!({
            "nu": self.nu,
            "ng": self.ng,
            "poly_degree": self.poly_degree,
            "epsilon_bits": self.epsilon_bits,
            "brute_budget_secs": self.brute_budget_secs,
            "max_complexity_bits": self.max_complexity_bits,
            "time_budget_secs": self.time_budget_secs,
            "seed": self.seed,
            "net_hidden": self.net_hidden,
            "net_epochs": self.net_epochs,
            "net_seed": self.net_seed.unwrap_or(self.seed),
            "symmetry_neighbors": self.symmetry_neighbors,
            "additivity_threshold": self.additivity_threshold,
            "rational_max_den": self.rational_max_den,
            "test_fraction": self.test_fraction,
        })
    }
}

#[derive(Args)]
struct FitArgs {
    table: PathBuf,
    #[arg(long, default_value = "auto")]
    format: TableFormat,
    #[arg(long, value_enum, default_value_t = OracleArg::Net)]
    oracle: OracleArg,
    /// Generator in infix over the table's input names; required by
    /// `--oracle exact` and used as the truth unless --truth is given.
    #[arg(long)]
    formula: Option<String>,
    /// Known formula to check the top model against.
    #[arg(long)]
    truth: Option<String>,
    /// Output prefix: writes <out>.json, .csv, .svg and .trace.json.
    #[arg(long, default_value = "paretosr")]
    out: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "demos")]
    suite: String,
    /// Also scan noise levels 10^-1 down to 10^this (a negative integer).
    #[arg(long, allow_negative_numbers = true)]
    max_noise_exp: Option<i32>,
    #[arg(long, value_enum, default_value_t = OracleArg::Exact)]
    oracle: OracleArg,
    /// Rows per case; defaults to each case's own count.
    #[arg(long)]
    rows: Option<usize>,
    /// Directory for per-case reports and the summary.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct NoiseArgs {
    table: PathBuf,
    #[arg(long, default_value = "auto")]
    format: TableFormat,
    /// Noise exponent, negative.
    #[arg(short = 'r', allow_negative_numbers = true)]
    r: i32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_formula(text: &str, names: &[String]) -> Result<Expression> {
    let basis = BasisSet::with_variables(names.to_vec())?;
    Expression::parse_infix(text, &basis).with_context(|| format!("cannot parse formula '{text}'"))
}

fn run_info(out: &FitOutcome, table: &DataTable, target: &str, args: &SearchArgs) -> RunInfo {
    RunInfo {
        variables: table.names().to_vec(),
        target: target.to_string(),
        seed: args.seed,
        oracle: format!("{:?}", out.oracle).to_lowercase(),
        partial: out.partial,
        train_rows: out.train_rows,
        test_rows: out.test_rows,
        elapsed_secs: out.elapsed.as_secs_f64(),
        config: args.echo(),
    }
}

fn report(out: &FitOutcome, info: &RunInfo, prefix: &Path) -> Result<()> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    if out.frontier.is_empty() {
        log::warn!("empty frontier, no report written");
    } else {
        let files = emit_report(&out.frontier, &out.ranked, info, prefix)
            .with_context(|| format!("cannot write report at {}", prefix.display()))?;
        eprintln!("wrote {}, {}, {}", files.json.display(), files.csv.display(), files.svg.display());
    }
    let trace = write_trace(&out.trace, prefix)?;
    eprintln!("wrote {}", trace.display());
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<bool> {
    let loaded = load_table(&args.table, args.format)?;
    let table = loaded.table;
    let cfg = args.search.config()?;
    let formula = args.formula.as_deref().map(|f| parse_formula(f, table.names())).transpose()?;
    let truth = match args.truth.as_deref() {
        Some(t) => Some(parse_formula(t, table.names())?),
        None => formula.clone(),
    };
    let oracle = match (args.oracle, formula) {
        (OracleArg::Exact, Some(f)) => OracleChoice::Exact(f),
        (OracleArg::Exact, None) => bail!("--oracle exact needs --formula"),
        (OracleArg::Net, _) => OracleChoice::Net,
    };
    let out = fit(&table, &oracle, truth.as_ref(), &cfg)?;
    let info = run_info(&out, &table, &loaded.target, &args.search);
    report(&out, &info, &args.out)?;
    match out.ranked.top_model() {
        Some(top) => println!(
            "{}\t{:.3} bits\t{:.3} held-out bits",
            top.model.expr.to_infix(table.names()),
            top.model.score.complexity_bits,
            top.heldout_medl_bits
        ),
        None => println!("no model"),
    }
    if let Some(s) = out.ranked.success {
        println!("success: {s}");
    }
    Ok(out.partial)
}

fn cmd_bench(args: BenchArgs) -> Result<bool> {
    let Some(cases) = harness::suite(&args.suite) else {
        bail!("unknown suite '{}', expected one of {:?}", args.suite, harness::SUITES);
    };
    if args.max_noise_exp.is_some_and(|r| r >= 0) {
        bail!("--max-noise-exp must be negative");
    }
    let cfg = args.search.config()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let exec = paretosr::par::Exec::default();
    let results = exec.map(&cases, |case| -> Result<(serde_json::Value, bool)> {
        let rows = args.rows.unwrap_or(case.rows);
        let table = case.table(rows, args.search.seed);
        let truth = case.generator();
        let oracle = match args.oracle {
            OracleArg::Exact => OracleChoice::Exact(truth.clone()),
            OracleArg::Net => OracleChoice::Net,
        };
        let out = fit(&table, &oracle, Some(&truth), &cfg)?;
        let info = run_info(&out, &table, "y", &args.search);
        report(&out, &info, &args.out.join(case.id))?;
        let top = out.ranked.top_model().map(|m| m.model.expr.to_infix(table.names()));
        let noise = args.max_noise_exp.map(|min_exp| {
            noise_tolerance(
                case,
                &ToleranceConfig {
                    solve: cfg.clone(),
                    oracle: match args.oracle {
                        OracleArg::Exact => ToleranceOracle::Exact,
                        OracleArg::Net => ToleranceOracle::Net,
                    },
                    min_exp,
                    rows,
                    seed: args.search.seed,
                },
            )
        });
        println!(
            "{:<14} success={:<5} partial={:<5} {:>7.1}s  {}{}",
            case.id,
            out.ranked.success == Some(true),
            out.partial,
            out.elapsed.as_secs_f64(),
            top.as_deref().unwrap_or("-"),
            noise
                .as_ref()
                .map(|n| format!("  noise r={}", n.r.map_or("none".into(), |r| r.to_string())))
                .unwrap_or_default(),
        );
        let summary = json!({
            "case": case,
            "success": out.ranked.success,
            "partial": out.partial,
            "top": top,
            "max_relative_error": out.ranked.max_relative_error,
            "elapsed_secs": out.elapsed.as_secs_f64(),
            "noise": noise,
        });
        Ok((summary, out.partial))
    });
    let mut partial = false;
    let mut summaries = Vec::new();
    for r in results {
        let (s, p) = r?;
        partial |= p;
        summaries.push(s);
    }
    let path = args.out.join("summary.json");
    let body = json!({ "schema": "paretosr.bench", "version": harness::SCHEMA_VERSION, "suite": args.suite, "cases": summaries });
    std::fs::write(&path, serde_json::to_string_pretty(&body)? + "\n")?;
    eprintln!("wrote {}", path.display());
    Ok(partial)
}

fn cmd_noise(args: NoiseArgs) -> Result<bool> {
    let loaded = load_table(&args.table, args.format)?;
    let spec = NoiseSpec::new(args.r, args.seed)?;
    let noisy = add_noise(&loaded.table, spec);
    let mut text = noisy.names().join(" ");
    text.push(' ');
    text.push_str(&loaded.target);
    text.push('\n');
    for (x, y) in noisy.rows() {
        for v in x {
            text.push_str(&format!("{v:e} "));
        }
        text.push_str(&format!("{y:e}\n"));
    }
    match args.out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(false)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_global_pool(thread_cap_from_env());
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Noise(a) => cmd_noise(a),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("budget exhausted: results are partial");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
