//! `conemkt`: validate instances, decide (robust) no-arbitrage, maximise
//! vector expected utility, build consistent prices, and run the
//! equivalence experiment.
//!
//! Exit codes: 0 holds / ok, 1 validation failure or internal error,
//! 2 input error (parse, digest mismatch, bad weights), 3 property fails
//! (certificate written), 4 precondition unmet (report written),
//! 5 disagreement in the equivalence experiment. Every nonzero exit prints a
//! one-line JSON reason on stderr.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use conemkt::arbitrage::{check_na_with, check_nar_with, find_price_process_with, ArbitrageCertificate};
use conemkt::attainable::{realize, PlanRecord, TransferPlan};
use conemkt::experiment::{run_equivalence, seed_instance, ExperimentConfig};
use conemkt::generate::{generate, InstanceKind, Shape};
use conemkt::io::{ExperimentParams, Instance, InstanceBundle, LeafValue, SolutionFile};
use conemkt::pareto::{
    improvement_from_arbitrage_in, pareto_front_sweep_with, simplex_grid, solve_scalarized_in, Problem, SweepEntry,
};
use conemkt::pricing::{price_from_maximizer, strict_pipeline_with, verify_consistency, ConsistencyReport};
use conemkt::tolerance::ENV_VAR;
use conemkt::tree::ScenarioTree;
use conemkt::utility::{AssetUtility, UtilitySpec};
use conemkt::{Error, Tolerances};

#[derive(Parser)]
#[command(name = "conemkt", version, about = "Arbitrage, utility maximisation and consistent prices under proportional transaction costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Na,
    Nar,
}

#[derive(Subcommand)]
enum Command {
    /// Run every validator on an instance file.
    Validate {
        instance: PathBuf,
        /// Print the validation report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Decide NA or NA^r; writes a certificate next to the instance.
    Check {
        instance: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Solve the scalarised problem for one weight vector or a simplex sweep.
    Maximize {
        instance: PathBuf,
        /// Comma-separated positive weights, one per asset.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "sweep", conflicts_with = "sweep")]
        lambda: Option<Vec<f64>>,
        /// Number of interior simplex grid points.
        #[arg(long)]
        sweep: Option<usize>,
        /// Write frontier points (weights, expected utilities) as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build and verify a price process from a solution file.
    Price {
        instance: PathBuf,
        solution: PathBuf,
        /// Maximise under shrunk spreads and verify strict consistency.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Floor on terminal holdings, applied to every asset.
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
    },
    /// Compare NA^r with the constructive verdict over a seed range.
    Equivalence {
        /// Inclusive range `first..last`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        d: usize,
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long)]
        branching: usize,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Directory for the run record and forensic dumps.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Generate a seeded instance.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        kind: InstanceKind,
        #[arg(long)]
        d: usize,
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long)]
        branching: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// How a command ended.
struct Outcome {
    code: u8,
    reason: &'static str,
    detail: Value,
}

impl Outcome {
    fn ok() -> Self {
        Self { code: 0, reason: "ok", detail: Value::Null }
    }

    fn fail(code: u8, reason: &'static str, detail: impl Into<Value>) -> Self {
        Self { code, reason, detail: detail.into() }
    }
}

type Run = anyhow::Result<Outcome>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return finish(Outcome::fail(2, "usage", e.kind().to_string()));
        }
    };
    let outcome = run(cli.command).unwrap_or_else(|e| Outcome::fail(1, "error", format!("{e:#}")));
    finish(outcome)
}

fn finish(outcome: Outcome) -> ExitCode {
    if outcome.code != 0 {
        eprintln!("{}", json!({ "exit": outcome.code, "reason": outcome.reason, "detail": outcome.detail }));
    }
    ExitCode::from(outcome.code)
}

fn run(command: Command) -> Run {
    match command {
        Command::Validate { instance, json } => cmd_validate(&instance, json),
        Command::Check { instance, mode } => cmd_check(&instance, mode),
        Command::Maximize { instance, lambda, sweep, csv } => cmd_maximize(&instance, lambda, sweep, csv.as_deref()),
        Command::Price { instance, solution, strict, theta, delta } => {
            cmd_price(&instance, &solution, strict, theta, delta)
        }
        Command::Equivalence { seeds, d, horizon, branching, theta, out_dir } => {
            cmd_equivalence(&seeds, Shape { d, horizon, branching }, theta, &out_dir)
        }
        Command::Gen { seed, kind, d, horizon, branching, out } => {
            cmd_gen(seed, kind, Shape { d, horizon, branching }, out.as_deref())
        }
    }
}

/// Defaults, then the instance's tolerances, then the environment.
fn tolerances(base: Tolerances) -> Result<Tolerances, Outcome> {
    match std::env::var(ENV_VAR) {
        Ok(spec) => base.with_overrides(&spec).map_err(|e| Outcome::fail(2, "bad-tolerances", e.to_string())),
        Err(_) => Ok(base),
    }
}

fn read_bundle(path: &Path) -> Result<InstanceBundle, Outcome> {
    let text = fs::read_to_string(path)
        .map_err(|e| Outcome::fail(2, "unreadable", format!("{}: {e}", path.display())))?;
    InstanceBundle::from_json(&text).map_err(|e| Outcome::fail(2, "parse", format!("{}: {e}", path.display())))
}

/// Parsed, validated instance with effective tolerances.
fn load(path: &Path) -> Result<(InstanceBundle, Instance, Tolerances), Outcome> {
    let bundle = read_bundle(path)?;
    let report = bundle.validate();
    if !report.is_ok() {
        return Err(Outcome::fail(1, "invalid-instance", serde_json::to_value(&report).expect("report serialises")));
    }
    let instance = bundle.instance().map_err(|e| Outcome::fail(1, "invalid-instance", e.to_string()))?;
    let tol = tolerances(instance.params.tolerances)?;
    Ok((bundle, instance, tol))
}

macro_rules! try_outcome {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(outcome) => return Ok(outcome),
        }
    };
}

/// `dir/stem.suffix` for an instance at `dir/stem.json`.
fn sibling(instance: &Path, suffix: &str) -> PathBuf {
    let stem = instance.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned());
    instance.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes to `dir/name.json`, or `dir/name.1.json`, `dir/name.2.json`, …
/// when taken; never overwrites.
fn write_new(dir: &Path, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    for k in 0.. {
        let file = if k == 0 { format!("{name}.json") } else { format!("{name}.{k}.json") };
        let path = dir.join(file);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                f.write_all(text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
                return Ok(path);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
    unreachable!("unbounded suffix search")
}

fn leaf_values(tree: &ScenarioTree, terminal: &[Vec<f64>]) -> Vec<LeafValue> {
    tree.leaves().iter().zip(terminal).map(|(&l, x)| LeafValue { leaf: tree.node(l).id.clone(), x: x.clone() }).collect()
}

#[derive(Serialize)]
struct CertificateFile {
    kind: &'static str,
    value: f64,
    plan: Vec<PlanRecord>,
    terminal: Vec<LeafValue>,
    gains: Vec<(String, usize, f64)>,
}

fn certificate_file(tree: &ScenarioTree, value: f64, cert: &ArbitrageCertificate) -> CertificateFile {
    CertificateFile {
        kind: "arbitrage",
        value,
        plan: cert.plan.to_records(tree),
        terminal: leaf_values(tree, &cert.terminal),
        gains: cert.gains.clone(),
    }
}

fn cmd_validate(path: &Path, json_out: bool) -> Run {
    let bundle = try_outcome!(read_bundle(path));
    let report = bundle.validate();
    if json_out {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    if report.is_ok() {
        Ok(Outcome::ok())
    } else {
        Ok(Outcome::fail(1, "invalid-instance", serde_json::to_value(&report)?))
    }
}

fn cmd_check(path: &Path, mode: Mode) -> Run {
    let (_, inst, tol) = try_outcome!(load(path));
    let (tree, pi) = (&inst.tree, &inst.process);
    match mode {
        Mode::Na => {
            let v = check_na_with(tree, pi, &tol)?;
            match v.certificate {
                None => {
                    println!("NA holds (arbitrage LP value {:e})", v.value);
                    Ok(Outcome::ok())
                }
                Some(cert) => {
                    let out = sibling(path, "na-certificate.json");
                    write_json(&out, &certificate_file(tree, v.value, &cert))?;
                    println!("NA fails (arbitrage LP value {:e}); certificate: {}", v.value, out.display());
                    Ok(Outcome::fail(3, "na-fails", json!({ "certificate": out, "value": v.value })))
                }
            }
        }
        Mode::Nar => {
            let v = check_nar_with(tree, pi, &tol)?;
            if v.holds {
                let z = v.certificate.expect("NA^r verdict carries prices");
                let report = verify_consistency(&z, tree, pi, &vec![0.0; pi.dim()], None, true, &tol)?;
                let out = sibling(path, "prices.json");
                write_json(
                    &out,
                    &json!({ "kind": "strictly-consistent-prices", "margin": v.margin, "z": z.to_records(tree), "report": report }),
                )?;
                println!("NA^r holds (margin {:e}); strictly consistent prices: {}", v.margin, out.display());
                return Ok(Outcome::ok());
            }
            // NA^r fails: write the strongest available witness.
            let na = check_na_with(tree, pi, &tol)?;
            let witness = match &na.certificate {
                Some(cert) => serde_json::to_value(certificate_file(tree, na.value, cert))?,
                None => {
                    let search = find_price_process_with(tree, pi, false, &tol)?;
                    json!({
                        "kind": "non-strict-prices",
                        "z": search.z.as_ref().map(|z| z.to_records(tree)),
                    })
                }
            };
            let out = sibling(path, "nar-certificate.json");
            write_json(&out, &json!({ "margin": v.margin, "threshold": v.threshold, "na_holds": na.holds, "witness": witness }))?;
            println!(
                "NA^r fails (margin {:e} <= {:e}; NA {}); report: {}",
                v.margin,
                v.threshold,
                if na.holds { "holds" } else { "fails" },
                out.display()
            );
            Ok(Outcome::fail(3, "nar-fails", json!({ "certificate": out, "margin": v.margin, "na_holds": na.holds })))
        }
    }
}

fn cmd_maximize(path: &Path, lambda: Option<Vec<f64>>, sweep: Option<usize>, csv_path: Option<&Path>) -> Run {
    let (bundle, inst, tol) = try_outcome!(load(path));
    let d = inst.process.dim();
    let grid = match (lambda, sweep) {
        (Some(l), _) => {
            if l.len() != d || l.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Ok(Outcome::fail(2, "bad-weights", format!("need {d} strictly positive weights, got {l:?}")));
            }
            vec![l]
        }
        (None, Some(n)) if n > 0 => simplex_grid(d, n),
        _ => return Ok(Outcome::fail(2, "bad-weights", "sweep needs at least one point")),
    };
    let problem = Problem::new(&inst.tree, &inst.process, &inst.x, &inst.spec, &tol)?;
    let na = check_na_with(&inst.tree, &inst.process, &tol)?;
    if let Some(cert) = na.certificate {
        let no_trade = realize(&TransferPlan::zero(&inst.tree, d), &inst.tree, &inst.process, &inst.x)?.terminal;
        let imp = improvement_from_arbitrage_in(&problem, &no_trade, &cert)?;
        let out = sibling(path, "na-certificate.json");
        write_json(
            &out,
            &json!({
                "certificate": certificate_file(&inst.tree, na.value, &cert),
                "improvement": {
                    "candidate": "no-trade",
                    "scale": imp.scale,
                    "gains": imp.gains,
                    "terminal": leaf_values(&inst.tree, &imp.terminal),
                    "plan": imp.plan(&TransferPlan::zero(&inst.tree, d), &cert)?.to_records(&inst.tree),
                }
            }),
        )?;
        println!("NA fails: no Pareto maximiser exists; the no-trade position improves by {:?}", imp.gains);
        return Ok(Outcome::fail(3, "na-fails", json!({ "certificate": out, "gains": imp.gains })));
    }
    let digest = bundle.digest();
    let entries: Vec<SweepEntry> = if grid.len() == 1 {
        let result = solve_scalarized_in(&problem, &grid[0], tol.fw_gap).map_err(|e| e.to_string());
        vec![SweepEntry { lambda: grid[0].clone(), result }]
    } else {
        pareto_front_sweep_with(&inst.tree, &inst.process, &inst.x, &inst.spec, &grid, tol.fw_gap, &tol)?
    };
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for (k, entry) in entries.iter().enumerate() {
        match &entry.result {
            Ok(sol) => {
                let suffix = if entries.len() == 1 { "solution.json".to_string() } else { format!("solution.{k}.json") };
                let out = sibling(path, &suffix);
                write_json(&out, &SolutionFile::new(&inst.tree, &digest, sol))?;
                println!(
                    "lambda {:?}: E U = {:?}, gap {:.2e}, {} iterations -> {}",
                    entry.lambda,
                    sol.utilities,
                    sol.gap,
                    sol.iterations,
                    out.display()
                );
                rows.push((entry.lambda.clone(), sol.utilities.clone()));
            }
            Err(e) => {
                println!("lambda {:?}: failed: {e}", entry.lambda);
                failures.push(json!({ "lambda": entry.lambda, "error": e }));
            }
        }
    }
    if let Some(csv_path) = csv_path {
        let mut w = csv::Writer::from_path(csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
        let header: Vec<String> =
            (1..=d).map(|i| format!("lambda_{i}")).chain((1..=d).map(|i| format!("eu_{i}"))).collect();
        w.write_record(&header)?;
        for (l, u) in &rows {
            w.write_record(l.iter().chain(u).map(f64::to_string))?;
        }
        w.flush()?;
    }
    if failures.is_empty() {
        Ok(Outcome::ok())
    } else {
        Ok(Outcome::fail(1, "solve-failed", Value::Array(failures)))
    }
}

fn render(report: &ConsistencyReport) -> String {
    let floor = match &report.floor {
        None => "not checked".to_string(),
        Some(f) if f.met => "met".to_string(),
        Some(f) => format!(
            "UNMET at {}",
            f.violations.iter().map(|v| format!("{}[{}]={:.3e}", v.leaf, v.asset, v.value)).collect::<Vec<_>>().join(", ")
        ),
    };
    format!(
        "verdict            {:?}\nmax martingale     {:.3e}\nmax polar slack    {:.3e}\nmin strict margin  {}\ndelta floor        {floor}",
        report.verdict,
        report.max_martingale_residual(),
        report.max_polar_slack(),
        report.min_margin().map_or("n/a".into(), |m| format!("{m:.3e}"))
    )
}

fn cmd_price(path: &Path, solution_path: &Path, strict: bool, theta: f64, delta: f64) -> Run {
    let (bundle, inst, tol) = try_outcome!(load(path));
    let d = inst.process.dim();
    let text = match fs::read_to_string(solution_path) {
        Ok(t) => t,
        Err(e) => return Ok(Outcome::fail(2, "unreadable", format!("{}: {e}", solution_path.display()))),
    };
    let file: SolutionFile = match serde_json::from_str(&text) {
        Ok(f) => f,
        Err(e) => return Ok(Outcome::fail(2, "parse", format!("{}: {e}", solution_path.display()))),
    };
    if !file.intact() {
        return Ok(Outcome::fail(2, "digest-mismatch", "solution content does not match its digest"));
    }
    if file.body.instance_digest != bundle.digest() {
        return Ok(Outcome::fail(2, "digest-mismatch", "solution belongs to a different instance"));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Ok(Outcome::fail(2, "bad-delta", format!("delta = {delta}")));
    }
    let solution = match file.solution(&inst.tree, d) {
        Ok(s) => s,
        Err(e) => return Ok(Outcome::fail(2, "bad-solution", e.to_string())),
    };
    let floor = vec![delta; d];
    let (z, report) = if strict {
        match strict_pipeline_with(&inst.tree, &inst.process, theta, &inst.x, &inst.spec, &solution.lambda_raw, &floor, &tol)
        {
            Ok(p) => (p.z, p.report),
            Err(Error::NoRobustNoArbitrage) => {
                println!("NA^r fails: strictly consistent prices cannot be constructed");
                return Ok(Outcome::fail(3, "nar-fails", "robust no-arbitrage fails"));
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        let z = price_from_maximizer(&inst.tree, &inst.spec, &solution)?;
        let report = verify_consistency(&z, &inst.tree, &inst.process, &floor, Some(&solution.terminal), false, &tol)?;
        (z, report)
    };
    let out = sibling(path, "price-report.json");
    write_json(&out, &json!({ "strict": strict, "theta": theta, "report": report, "z": z.to_records(&inst.tree) }))?;
    println!("{}\nreport: {}", render(&report), out.display());
    let detail = json!({ "report": out, "verdict": report.verdict, "notes": report.notes });
    // Without the floor the construction carries no guarantee, so a missed
    // floor outranks the verdict.
    if !report.precondition_met() {
        Ok(Outcome::fail(4, "precondition-unmet", detail))
    } else if !report.meets_request() {
        Ok(Outcome::fail(3, "verdict-failed", detail))
    } else {
        Ok(Outcome::ok())
    }
}

fn parse_seeds(s: &str) -> Option<(u64, u64)> {
    let (a, b) = s.split_once("..")?;
    let b = b.strip_prefix('=').unwrap_or(b);
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn cmd_equivalence(seeds: &str, shape: Shape, theta: f64, out_dir: &Path) -> Run {
    let Some((first, last)) = parse_seeds(seeds).filter(|(a, b)| a <= b) else {
        return Ok(Outcome::fail(2, "bad-seeds", format!("expected first..last, got `{seeds}`")));
    };
    let tol = try_outcome!(tolerances(Tolerances::default()));
    let config = ExperimentConfig { shape, theta, tol };
    if let Err(e) = config.validate() {
        return Ok(Outcome::fail(2, "bad-parameters", e.to_string()));
    }
    let summary = run_equivalence(first, last, &config)?;
    let record = write_new(out_dir, &format!("equivalence-{first}-{last}"), &summary)?;
    println!("{}\nrecord: {}", summary.table(), record.display());
    if summary.disagreements.is_empty() {
        return Ok(Outcome::ok());
    }
    let mut dumps = Vec::new();
    for &seed in &summary.disagreements {
        let (_, inst) = seed_instance(seed, &config)?;
        let rec = summary.records.iter().find(|r| r.seed == seed).expect("record per seed");
        dumps.push(write_new(out_dir, &format!("disagreement-seed-{seed}"), &json!({ "instance": inst.bundle(), "record": rec }))?);
    }
    Ok(Outcome::fail(5, "disagreement", json!({ "seeds": summary.disagreements, "dumps": dumps, "record": record })))
}

fn cmd_gen(seed: u64, kind: InstanceKind, shape: Shape, out: Option<&Path>) -> Run {
    let g = match generate(seed, kind, shape) {
        Ok(g) => g,
        Err(e) => return Ok(Outcome::fail(2, "bad-parameters", e.to_string())),
    };
    let d = shape.d;
    let inst = Instance {
        tree: g.tree,
        process: g.process,
        x: vec![1.0; d],
        spec: UtilitySpec::uniform(d, AssetUtility::exp(1.0))?,
        params: ExperimentParams {
            lambdas: vec![vec![1.0 / d as f64; d]],
            seed: Some(seed),
            kind: Some(kind),
            ..Default::default()
        },
    };
    let text = inst.bundle().to_json() + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(Outcome::ok())
}
