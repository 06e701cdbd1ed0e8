use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stabprune::cli::config::Resolver;
use stabprune::cli::{
    bench, cmd_bench, cmd_order_curve, cmd_run, cmd_simulate, BenchConfig, BenchSource, Mode,
    OrderCurveConfig, RunConfig, SimulateConfig,
};
use stabprune::dataset::Family;
use stabprune::error::{Error, Result};
use stabprune::randgen::ScenarioSpec;
use stabprune::stabsel::Regime;

/// Variable selection by pruned stability selection: simulate scenario data,
/// run selections, replicate benchmarks, and sweep ordered-aggregation
/// curves. Flags override `--config` file entries, which override defaults;
/// every output embeds the resolved configuration and seed.
#[derive(Parser)]
#[command(name = "stabprune", version, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Master seed; every stream and substream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = library default). Results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario key: s1v1..s1v4, s2, s3, s4, s5.
    #[arg(long)]
    scenario: Option<String>,
    /// Observations.
    #[arg(long)]
    n: Option<usize>,
    /// Variables.
    #[arg(long)]
    p: Option<usize>,
    /// Design correlation (scenarios s2, s4).
    #[arg(long)]
    rho: Option<f64>,
    /// Noise standard deviation (scenarios s2, s3, s4).
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct SelectionArgs {
    /// Ensemble size.
    #[arg(long)]
    b: Option<usize>,
    /// Penalty grid size.
    #[arg(long)]
    k: Option<usize>,
    /// Selection frequency threshold (default: regime value).
    #[arg(long = "pi-thr")]
    pi_thr: Option<f64>,
    /// Per-learner selection target (default: regime formula on p).
    #[arg(long = "q-target")]
    q_target: Option<usize>,
    /// Tuning regime: highdim or lowdim (default: by scenario / highdim).
    #[arg(long)]
    regime: Option<Regime>,
    /// Retained fraction of the ordered ensemble.
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one simulated dataset (data.csv) plus its truth sidecar.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Select variables on one dataset and write a report.
    Run {
        /// Input CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Response column name or 1-based index.
        #[arg(long)]
        response: Option<String>,
        /// gaussian or binomial.
        #[arg(long)]
        family: Option<Family>,
        /// stabsel, pruned, or lasso-baseline.
        #[arg(long)]
        mode: Option<Mode>,
        /// Scale design columns to unit variance before centering.
        #[arg(long)]
        scale: bool,
        /// Order members on raw condensed vectors (pruned-mode sensitivity).
        #[arg(long = "raw-importance")]
        raw_importance: bool,
        /// Write the member archive (selection matrices + seeds) here.
        #[arg(long = "archive-out")]
        archive_out: Option<PathBuf>,
        /// Re-aggregate members from this archive instead of solving.
        #[arg(long = "archive-in")]
        archive_in: Option<PathBuf>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Replicate generate -> select -> evaluate and tabulate metrics.
    Bench {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Real design matrix for the semi-synthetic protocol.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Column of --data to exclude from the design ('none' keeps all).
        #[arg(long)]
        response: Option<String>,
        /// gaussian or binomial (semi-synthetic responses).
        #[arg(long)]
        family: Option<Family>,
        /// Number of planted +-1 coefficients (semi-synthetic mode).
        #[arg(long)]
        s: Option<usize>,
        /// Signal-to-noise ratio (gaussian semi-synthetic mode).
        #[arg(long)]
        snr: Option<f64>,
        /// Draw this many design columns at random per replication.
        #[arg(long = "p-draw")]
        p_draw: Option<usize>,
        /// Training fraction of the train/test split.
        #[arg(long = "train-fraction")]
        train_fraction: Option<f64>,
        /// Scale design columns to unit variance (semi-synthetic mode).
        #[arg(long)]
        scale: bool,
        /// Replications.
        #[arg(long)]
        m: Option<usize>,
        /// Comma-separated subset of stabsel,pruned,lasso.
        #[arg(long)]
        methods: Option<String>,
        /// Test-set size for prediction error (scenario mode).
        #[arg(long = "n-test")]
        n_test: Option<usize>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Mean selection accuracy of ordered vs generation-order subensembles
    /// at every prefix size.
    OrderCurve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Replications.
        #[arg(long)]
        m: Option<usize>,
        /// Comma-separated increasing pool sizes, e.g. 300,500,1000
        /// (default: a single pool of size --b).
        #[arg(long)]
        pools: Option<String>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version print and exit cleanly; usage errors exit 1
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, common } => {
            let resolver = Resolver::from_path(common.config.as_deref())?;
            let (spec, key) = resolve_scenario(&resolver, &scenario)?;
            let cfg = SimulateConfig {
                scenario: spec,
                scenario_key: key,
                seed: resolver.get(common.seed, "seed", 1)?,
                out_dir: out_dir(&resolver, common.out)?,
            };
            echo_config(&cfg)?;
            let sidecar = cmd_simulate(&cfg)?;
            println!(
                "wrote {} ({} rows, {} columns) and truth.json",
                cfg.out_dir.join("data.csv").display(),
                cfg.scenario.n,
                cfg.scenario.p + 1
            );
            println!("true support (1-based): {:?}", sidecar.truth_indices);
            Ok(())
        }
        Command::Run {
            data,
            response,
            family,
            mode,
            scale,
            raw_importance,
            archive_out,
            archive_in,
            selection,
            common,
        } => {
            let resolver = Resolver::from_path(common.config.as_deref())?;
            let data = resolver
                .opt(data, "data")?
                .ok_or_else(|| Error::invalid("run needs --data"))?;
            let regime = resolver.get(selection.regime, "regime", Regime::HighDim)?;
            let cfg = RunConfig {
                data,
                response: resolver.get(response, "response", "y".to_string())?,
                family: resolver.get(family, "family", Family::Gaussian)?,
                mode: resolver.get(mode, "mode", Mode::Pruned)?,
                b: resolver.get(selection.b, "b", 100)?,
                k: resolver.get(selection.k, "k", 100)?,
                pi_thr: resolver.get(selection.pi_thr, "pi-thr", regime.pi_thr())?,
                q_target: resolver.opt(selection.q_target, "q-target")?,
                regime,
                fraction: resolver.get(selection.fraction, "fraction", 1.0 / 3.0)?,
                scale: scale || resolver.get(None, "scale", false)?,
                raw_importance: raw_importance
                    || resolver.get(None, "raw-importance", false)?,
                seed: resolver.get(common.seed, "seed", 1)?,
                threads: resolver.get(common.threads, "threads", 0)?,
                out_dir: out_dir(&resolver, common.out)?,
                archive_out: resolver.opt(archive_out, "archive-out")?,
                archive_in: resolver.opt(archive_in, "archive-in")?,
            };
            echo_config(&cfg)?;
            let report = cmd_run(&cfg)?;
            println!(
                "selected {} of {} variables: {:?}",
                report.selected.len(),
                report.p,
                report.selected_names
            );
            if let Some(bound) = report.pfer_bound {
                println!("expected false discoveries bounded by {bound:.3}");
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("report: {}", cfg.out_dir.join("report.json").display());
            Ok(())
        }
        Command::Bench {
            scenario,
            data,
            response,
            family,
            s,
            snr,
            p_draw,
            train_fraction,
            scale,
            m,
            methods,
            n_test,
            selection,
            common,
        } => {
            let resolver = Resolver::from_path(common.config.as_deref())?;
            let data = resolver.opt(data, "data")?;
            let scenario_key = resolver.raw(scenario.scenario.clone(), "scenario");
            let (source, default_regime) = match (&data, scenario_key) {
                (Some(path), None) => {
                    let source = BenchSource::Semisynthetic {
                        data: path.clone(),
                        response: resolver.get(response, "response", "y".to_string())?,
                        family: resolver.get(family, "family", Family::Gaussian)?,
                        s: resolver
                            .opt(s, "s")?
                            .ok_or_else(|| Error::invalid("semi-synthetic bench needs --s"))?,
                        snr: resolver.opt(snr, "snr")?,
                        p_draw: resolver.opt(p_draw, "p-draw")?,
                        train_fraction: resolver.get(train_fraction, "train-fraction", 0.9)?,
                        scale: scale || resolver.get(None, "scale", false)?,
                    };
                    (source, Regime::HighDim)
                }
                (None, Some(_)) => {
                    let (spec, key) = resolve_scenario(&resolver, &scenario)?;
                    let regime = if spec.low_dimensional_regime() {
                        Regime::LowDim
                    } else {
                        Regime::HighDim
                    };
                    (BenchSource::Scenario { key, spec }, regime)
                }
                _ => {
                    return Err(Error::invalid(
                        "bench needs exactly one of --scenario or --data",
                    ))
                }
            };
            let regime = resolver.get(selection.regime, "regime", default_regime)?;
            let methods = bench::parse_methods(
                &resolver
                    .raw(methods, "methods")
                    .unwrap_or_else(|| "stabsel,pruned".to_string()),
            )?;
            let cfg = BenchConfig {
                source,
                methods,
                m: resolver.get(m, "m", 50)?,
                b: resolver.get(selection.b, "b", 100)?,
                k: resolver.get(selection.k, "k", 100)?,
                pi_thr: resolver.get(selection.pi_thr, "pi-thr", regime.pi_thr())?,
                q_target: resolver.opt(selection.q_target, "q-target")?,
                regime,
                fraction: resolver.get(selection.fraction, "fraction", 1.0 / 3.0)?,
                n_test: resolver.get(n_test, "n-test", 10_000)?,
                seed: resolver.get(common.seed, "seed", 1)?,
                threads: resolver.get(common.threads, "threads", 0)?,
                out_dir: out_dir(&resolver, common.out)?,
            };
            echo_config(&cfg)?;
            let started = std::time::Instant::now();
            let outcome = cmd_bench(&cfg)?;
            println!("{}", stabprune::metrics::MetricsSummary::CSV_HEADER);
            for row in &outcome.rows {
                println!("{}", row.summary.csv_row(&row.method));
            }
            println!(
                "bench finished in {:.1}s; table: {}",
                started.elapsed().as_secs_f64(),
                cfg.out_dir.join("metrics.csv").display()
            );
            Ok(())
        }
        Command::OrderCurve {
            scenario,
            m,
            pools,
            selection,
            common,
        } => {
            let resolver = Resolver::from_path(common.config.as_deref())?;
            let (spec, key) = resolve_scenario(&resolver, &scenario)?;
            let default_regime = if spec.low_dimensional_regime() {
                Regime::LowDim
            } else {
                Regime::HighDim
            };
            let regime = resolver.get(selection.regime, "regime", default_regime)?;
            let pools = match resolver.raw(pools, "pools") {
                Some(raw) => parse_pools(&raw)?,
                None => vec![resolver.get(selection.b, "b", 100)?],
            };
            let cfg = OrderCurveConfig {
                scenario_key: key,
                scenario: spec,
                m: resolver.get(m, "m", 50)?,
                pools,
                k: resolver.get(selection.k, "k", 100)?,
                pi_thr: resolver.get(selection.pi_thr, "pi-thr", regime.pi_thr())?,
                q_target: resolver.get(
                    selection.q_target,
                    "q-target",
                    regime.q_target(spec.p),
                )?,
                regime,
                seed: resolver.get(common.seed, "seed", 1)?,
                threads: resolver.get(common.threads, "threads", 0)?,
                out_dir: out_dir(&resolver, common.out)?,
            };
            echo_config(&cfg)?;
            let started = std::time::Instant::now();
            let outcome = cmd_order_curve(&cfg)?;
            let best = outcome
                .points
                .iter()
                .max_by(|a, b| a.acc_ordered.partial_cmp(&b.acc_ordered).unwrap())
                .unwrap();
            println!(
                "best ordered accuracy {:.3} at U={} (pool {}); curves: {}",
                best.acc_ordered,
                best.u,
                best.pool,
                cfg.out_dir.join("curve.csv").display()
            );
            println!("order-curve finished in {:.1}s", started.elapsed().as_secs_f64());
            Ok(())
        }
    }
}

fn resolve_scenario(resolver: &Resolver, args: &ScenarioArgs) -> Result<(ScenarioSpec, String)> {
    let key = resolver
        .raw(args.scenario.clone(), "scenario")
        .ok_or_else(|| Error::invalid("missing --scenario key"))?;
    let spec = ScenarioSpec::from_key(
        &key,
        resolver.opt(args.n, "n")?,
        resolver.opt(args.p, "p")?,
        resolver.opt(args.rho, "rho")?,
        resolver.opt(args.sigma, "sigma")?,
    )?;
    Ok((spec, key))
}

fn out_dir(resolver: &Resolver, flag: Option<PathBuf>) -> Result<PathBuf> {
    Ok(resolver
        .opt(flag, "out")?
        .unwrap_or_else(|| PathBuf::from("out")))
}

fn parse_pools(raw: &str) -> Result<Vec<usize>> {
    let mut pools = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        pools.push(
            part.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad pool size '{part}'")))?,
        );
    }
    if pools.is_empty() {
        return Err(Error::invalid("no pool sizes given"));
    }
    Ok(pools)
}

fn echo_config<T: serde::Serialize>(cfg: &T) -> Result<()> {
    println!(
        "config: {}",
        serde_json::to_string(cfg).map_err(|e| Error::invalid(e.to_string()))?
    );
    Ok(())
}
