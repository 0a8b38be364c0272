use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chemoflow::harness::{
    check_bundle, exit_code_for, run_eps_refinement, run_mms_convergence, run_mu_sweep,
    run_single, RunConfig, RunOptions, Status, EXIT_CONFIG, EXIT_PASS,
};
use chemoflow::oracles::{gn_estimate, gn_estimate_cached, GnEstimate};
use chemoflow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chemoflow", version, about = "Chemotaxis-fluid simulator and verification harness")]
struct Cli {
    /// Overrides the initial-data seed and the GN probe seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and GN probes.
    #[arg(long, global = true, env = "CHEMOFLOW_THREADS")]
    threads: Option<usize>,
    /// Skip the SVG plot of a single run.
    #[arg(long, global = true)]
    no_svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its bundle.
    Run { config: PathBuf },
    /// Repeat a run for a strictly decreasing list of regularizations.
    SweepEps {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        eps: Vec<f64>,
    },
    /// Repeat a run for a list of degradation rates, labeled against the
    /// threshold from the Gagliardo-Nirenberg estimate.
    SweepMu {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        mu: Vec<f64>,
        /// JSON cache for the GN estimate.
        #[arg(long)]
        gn_cache: Option<PathBuf>,
    },
    /// Manufactured-solution convergence study.
    Mms {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Lower estimate of the Gagliardo-Nirenberg constant on the config grid.
    GnEstimate {
        config: PathBuf,
        #[arg(long)]
        gn_cache: Option<PathBuf>,
    },
    /// Re-run the stream verdicts of a stored bundle.
    Check { bundle: PathBuf },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.initial.seed = s;
        cfg.diagnostics.gn.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: &RunConfig, fallback: &str) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn estimate(cfg: &RunConfig, cache: Option<&Path>) -> Result<GnEstimate> {
    let g = &cfg.diagnostics.gn;
    let gamma = cfg.params.gamma;
    match cache {
        Some(c) => gn_estimate_cached(c, cfg.domain, g.probes, g.iters, g.seed, gamma),
        None => gn_estimate(cfg.domain, g.probes, g.iters, g.seed, gamma),
    }
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, cli.seed)?;
            let opts = RunOptions {
                out_dir: Some(out_dir(&cli.out, &cfg, "chemoflow-run")),
                svg: !cli.no_svg,
            };
            let outcome = run_single(&cfg, &opts)?;
            for v in &outcome.summary.verdicts {
                println!("{:<22} {:?} {:?}: {}", v.name, v.severity, v.status, v.detail);
            }
            if let Some(dir) = &outcome.bundle {
                println!("bundle written to {}", dir.display());
            }
            Ok(outcome.exit_code())
        }
        Command::SweepEps { config, eps } => {
            let cfg = load(config, cli.seed)?;
            let res = run_eps_refinement(&cfg, eps)?;
            let dir = out_dir(&cli.out, &cfg, "chemoflow-sweep-eps");
            res.write(&dir)?;
            for (k, (dn, dc)) in res.distances_n.iter().zip(&res.distances_c).enumerate() {
                println!("eps {:e} -> {:e}: d_n {dn:e}, d_c {dc:e}", eps[k], eps[k + 1]);
            }
            Ok(res.points.iter().map(|p| p.exit_code).max().unwrap_or(EXIT_PASS))
        }
        Command::SweepMu { config, mu, gn_cache } => {
            let cfg = load(config, cli.seed)?;
            let gn = estimate(&cfg, gn_cache.as_deref())?;
            let res = run_mu_sweep(&cfg, mu, &gn)?;
            let dir = out_dir(&cli.out, &cfg, "chemoflow-sweep-mu");
            res.write(&dir)?;
            println!("C* >= {:e}, mu0 = {:e}, gate 2 mu0 r+ = {:e}", gn.c_star_lower, gn.mu0, res.gate.unwrap_or(0.0));
            for p in &res.points {
                let energy = p
                    .energy
                    .as_ref()
                    .map(|e| format!("{:?}", e.status))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "mu {:e} {:?}: late sup n_linf {:e}, slope {:?}, energy {energy}",
                    p.value, p.label, p.late_n_linf_sup, p.late_log_slope
                );
            }
            Ok(res.points.iter().map(|p| p.exit_code).max().unwrap_or(EXIT_PASS))
        }
        Command::Mms { config, levels } => {
            let cfg = load(config, cli.seed)?;
            let report = run_mms_convergence(&cfg, *levels)?;
            write_json(&out_dir(&cli.out, &cfg, "chemoflow-mms"), "mms.json", &report)?;
            for c in &report.cases {
                println!("{:<20} errors {:?} order {:?}", c.name, c.errors, c.order);
            }
            Ok(EXIT_PASS)
        }
        Command::GnEstimate { config, gn_cache } => {
            let cfg = load(config, cli.seed)?;
            let gn = estimate(&cfg, gn_cache.as_deref())?;
            write_json(&out_dir(&cli.out, &cfg, "chemoflow-gn"), "gn_estimate.json", &gn)?;
            println!(
                "C* >= {:e} (mu0 = {:e}, mass gate {:e}, warning {})",
                gn.c_star_lower,
                gn.mu0,
                gn.mass_gate(),
                gn.warning
            );
            Ok(EXIT_PASS)
        }
        Command::Check { bundle } => {
            let report = check_bundle(bundle)?;
            for v in &report.verdicts {
                if v.status != Status::Skipped {
                    println!("{:<22} {:?} {:?}: {}", v.name, v.severity, v.status, v.detail);
                }
            }
            Ok(report.exit_code)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors share the config-error code; clap would use 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not set thread count: {e}");
        }
    }
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    ExitCode::from(code as u8)
}
