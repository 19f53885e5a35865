use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use uuv_core::controller::stability::check_stability_conditions;
use uuv_core::controller::ControllerVariant;
use uuv_core::sim::{metrics, run, MetricsReport, Scenario, ScenarioFile, SimLog};

const EXIT_INVALID: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "uuvsim",
    version,
    about = "Formation-tracking simulator for underactuated underwater vehicles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one controller variant.
    Run(RunArgs),
    /// Simulate several variants on the same scenario and rank them.
    Compare(CompareArgs),
    /// Check topology, scenario invariants and the static stability conditions.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Summary,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// CSV log destination.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tfinal: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// `summary` prints the metric table; `csv` prints the log itself when no --out is given.
    #[arg(long, value_enum, default_value = "summary")]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the scenario's controller.
    #[arg(long)]
    controller: Option<ControllerVariant>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Variants to compare, comma separated or repeated; defaults to all five.
    #[arg(long = "controller", value_delimiter = ',')]
    controllers: Vec<ControllerVariant>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn invalid(msg: impl ToString) -> Self {
        Self {
            code: EXIT_INVALID,
            msg: msg.to_string(),
        }
    }

    fn runtime(msg: impl ToString) -> Self {
        Self {
            code: EXIT_RUNTIME,
            msg: msg.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("UUVSIM_LOG_LEVEL", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Validate { scenario } => cmd_validate(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn load(common: &Common, controller: Option<ControllerVariant>) -> Result<Scenario, Failure> {
    let mut file = ScenarioFile::load(&common.scenario).map_err(Failure::invalid)?;
    if let Some(t) = common.tfinal {
        file.simulation.t_final = t;
    }
    if let Some(dt) = common.dt {
        file.simulation.dt = dt;
    }
    if let Some(c) = controller {
        file.simulation.controller = c;
    }
    Scenario::from_file(&file).map_err(Failure::invalid)
}

fn open_out(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn io_fail(e: io::Error) -> Failure {
    Failure::runtime(format!("write failed: {e}"))
}

/// Runs a scenario, returning the log (partial on abort) and the abort message.
fn simulate(scn: &Scenario) -> (SimLog, Option<String>) {
    info!("running {} for {} s", scn.variant, scn.t_final);
    match run(scn) {
        Ok(log) => (log, None),
        Err(e) => {
            let msg = e.to_string();
            warn!("{}: {msg}", scn.variant);
            (*e.log, Some(msg))
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let scn = load(&a.common, a.controller)?;
    let (log, aborted) = simulate(&scn);
    match (&a.common.out, a.common.format) {
        (Some(path), _) => {
            let mut w = open_out(path)?;
            log.write_csv(&mut w, None, true)
                .and_then(|_| w.flush())
                .map_err(io_fail)?;
        }
        (None, Format::Csv) => log
            .write_csv(io::stdout().lock(), None, true)
            .map_err(io_fail)?,
        (None, Format::Summary) => {}
    }
    if a.common.format == Format::Summary {
        let m = metrics(&log).map_err(Failure::runtime)?;
        print!("{}", m.summary());
    }
    aborted.map_or(Ok(()), |msg| Err(Failure::runtime(msg)))
}

struct Outcome {
    variant: ControllerVariant,
    report: MetricsReport,
    aborted: Option<String>,
}

fn ranking_table(outcomes: &[Outcome]) -> String {
    let mut rows: Vec<&Outcome> = outcomes.iter().collect();
    // Completed runs first, then by worst settling time (unsettled last).
    rows.sort_by(|x, y| {
        let key = |o: &Outcome| {
            (
                o.aborted.is_some(),
                o.report.worst_settling().unwrap_or(f64::INFINITY),
            )
        };
        let (a, b) = (key(x), key(y));
        a.0.cmp(&b.0).then(a.1.total_cmp(&b.1))
    });
    let mut out = String::from("rank  controller  worst_settle[s]  mean_e_final  mean_ss_z   max_startup|tau1|  box_viol  run\n");
    for (i, o) in rows.iter().enumerate() {
        let r = &o.report;
        let n = r.vehicles.len() as f64;
        let settle = r
            .worst_settling()
            .map_or("never".to_string(), |t| format!("{t:.1}"));
        let e_final = r.vehicles.iter().map(|v| v.final_error).sum::<f64>() / n;
        let startup = r
            .vehicles
            .iter()
            .map(|v| v.startup_peak_tau[0])
            .fold(0.0, f64::max);
        let status = o
            .aborted
            .as_deref()
            .map_or("complete".to_string(), |m| format!("PARTIAL ({m})"));
        out.push_str(&format!(
            "{:<5} {:<11} {:<16} {:<13.3e} {:<11.3e} {:<18.3} {:<9} {}\n",
            i + 1,
            o.variant.name(),
            settle,
            e_final,
            r.mean_steady_z(),
            startup,
            r.total_violations(),
            status
        ));
    }
    out
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    let requested = if a.controllers.is_empty() {
        ControllerVariant::ALL.to_vec()
    } else {
        a.controllers.clone()
    };
    let mut variants = Vec::new();
    for v in requested {
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    if variants.len() < 2 {
        return Err(Failure::invalid(
            "compare needs at least two distinct controllers",
        ));
    }
    let base = load(&a.common, None)?;
    let mut outcomes = Vec::new();
    let mut logs = Vec::new();
    for v in variants {
        let scn = base.with_variant(v).map_err(Failure::invalid)?;
        let (log, aborted) = simulate(&scn);
        let report = metrics(&log).map_err(Failure::runtime)?;
        outcomes.push(Outcome {
            variant: v,
            report,
            aborted,
        });
        logs.push(log);
    }

    let write_all = |w: &mut dyn Write| -> io::Result<()> {
        for (i, log) in logs.iter().enumerate() {
            log.write_csv(&mut *w, Some(log.variant.name()), i == 0)?;
        }
        w.flush()
    };
    match (&a.common.out, a.common.format) {
        (Some(path), _) => write_all(&mut open_out(path)?).map_err(io_fail)?,
        (None, Format::Csv) => write_all(&mut io::stdout().lock()).map_err(io_fail)?,
        (None, Format::Summary) => {}
    }
    if a.common.format == Format::Summary {
        for o in &outcomes {
            print!("{}", o.report.summary());
            println!();
        }
        print!("{}", ranking_table(&outcomes));
    }
    let partial: Vec<&str> = outcomes
        .iter()
        .filter(|o| o.aborted.is_some())
        .map(|o| o.variant.name())
        .collect();
    if partial.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "partial results for {}",
            partial.join(", ")
        )))
    }
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let file = ScenarioFile::load(path).map_err(Failure::invalid)?;
    let scn = Scenario::from_file(&file).map_err(Failure::invalid)?;
    let topo = scn.topology.report();
    println!("scenario        {}", path.display());
    println!("vehicles        {}", scn.n());
    println!("connected       {}", topo.connected);
    println!(
        "pinned          {:?}",
        topo.pinned.iter().map(|i| i + 1).collect::<Vec<_>>()
    );
    println!("min eig sym(L+B) {:.6}", topo.min_sym_eigenvalue);

    let mut ok = true;
    for (variant, g) in &scn.gains {
        let r = check_stability_conditions(*variant, &g.inner, 0.0);
        let decay: Vec<String> = r
            .blocks
            .iter()
            .map(|b| format!("{:.3}", b.decay_rate))
            .collect();
        println!(
            "stability {:<5} hurwitz={} decay=[{}] pitch_ratio={:.3} yaw_ratio={:.3} -> {}",
            variant.name(),
            r.all_hurwitz(),
            decay.join(", "),
            r.pitch_ratio,
            r.yaw_ratio,
            if r.passed() { "pass" } else { "FAIL" }
        );
        ok &= r.passed();
    }
    if ok {
        println!("result          pass");
        Ok(())
    } else {
        Err(Failure::invalid(
            "stability conditions not met for at least one controller",
        ))
    }
}
