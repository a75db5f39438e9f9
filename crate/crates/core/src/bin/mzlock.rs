use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mzlock::analysis::{sign_runs, summarize_timeseries, FringeFit};
use mzlock::harness::output::{
    fringe_gnuplot, inset_gnuplot, timeseries_gnuplot, write_events_csv, write_fringe_csv, write_inset_csv, write_text,
    write_timeseries_csv,
};
use mzlock::harness::{
    inset_sweep, parse_config, print_defaults, run_replicas, scan_voltage, LogKind, ScenarioOutput, SimConfig,
};
use mzlock::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mzlock",
    version,
    about = "Phase-stabilized fiber interferometer link simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured timeline and write per-bin counts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Independent seeds run in parallel; replica 0 uses --seed.
        #[arg(long, default_value_t = 1)]
        replicas: usize,
    },
    /// Lock, then step the modulator voltage and fit the fringe.
    Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the detector gate delay across the modulator pulse.
    Inset {
        #[command(flatten)]
        common: Common,
    },
    /// Check a configuration file and report every violation.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
    },
    /// Print the full default configuration.
    PrintDefaults,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Shorten or extend the timeline to this many seconds.
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
    #[arg(long)]
    quiet: bool,
    /// Also write a gnuplot script next to each CSV.
    #[arg(long)]
    plot: bool,
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text)
        }
        None => Ok(SimConfig::default()),
    }
}

impl Common {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("--duration must be positive, got {d}")));
            }
            cfg.scenario = cfg.scenario.with_duration(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn run(common: &Common, replicas: usize) -> Result<()> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("--replicas must be at least 1".into()));
    }
    let cfg = common.config()?;
    common.prepare_out()?;
    let outputs = run_replicas(&cfg, replicas, None)?;
    let mut first_loss = None;
    for (k, out) in outputs.iter().enumerate() {
        let suffix = if replicas > 1 { format!("_{k}") } else { String::new() };
        let ts_name = format!("timeseries{suffix}.csv");
        write_timeseries_csv(&out.records, &common.out.join(&ts_name))?;
        write_events_csv(&out.events, &common.out.join(format!("events{suffix}.csv")))?;
        if common.plot {
            write_text(
                &common.out.join(format!("timeseries{suffix}.gp")),
                &timeseries_gnuplot(&ts_name),
            )?;
        }
        report_run(common, &cfg, out, k, replicas);
        if first_loss.is_none() {
            first_loss = out.events.iter().find(|e| e.kind == LogKind::LockLost).cloned();
        }
    }
    match first_loss {
        Some(e) => Err(Error::LockLost {
            time: e.time,
            reason: e.detail,
        }),
        None => Ok(()),
    }
}

fn report_run(common: &Common, cfg: &SimConfig, out: &ScenarioOutput, k: usize, replicas: usize) {
    if common.quiet {
        return;
    }
    let tag = if replicas > 1 {
        format!("[replica {k}] ")
    } else {
        String::new()
    };
    let locked_end = cfg.scenario.control_off_time().unwrap_or(f64::INFINITY);
    let window = (10.0f64.min(locked_end), locked_end);
    match summarize_timeseries(&out.records, window, cfg.d1.dark_rate(), cfg.d2.dark_rate()) {
        Ok(s) => println!(
            "{tag}{} bins; window [{}, {}) s: D1 {:.1}±{:.1} /s, D2 {:.1}±{:.1} /s, net visibility {:.4}±{:.4}",
            out.records.len(),
            window.0,
            window.1.min(out.records.len() as f64 * cfg.bin_duration),
            s.d1.mean,
            s.d1.sd,
            s.d2.mean,
            s.d2.sd,
            s.net_visibility.mean,
            s.net_visibility.sd
        ),
        Err(_) => println!("{tag}{} bins written", out.records.len()),
    }
}

fn describe_fit(label: &str, fit: &FringeFit, residuals: &[f64]) -> String {
    let (runs, expected) = sign_runs(residuals);
    format!(
        "{label}: visibility {:.4}±{:.4}, v_pi {:.4}±{:.4} V, r² {:.5}, chi² {:.2}, residual sign runs {runs} (expected {expected:.2})",
        fit.visibility, fit.visibility_sigma, fit.v_pi_fit, fit.v_pi_sigma, fit.r_squared, fit.chi_squared
    )
}

fn scan(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    common.prepare_out()?;
    let outcome = scan_voltage(&cfg)?;
    write_fringe_csv(&outcome.points, &common.out.join("fringe.csv"))?;
    write_events_csv(&outcome.events, &common.out.join("events.csv"))?;
    if common.plot {
        write_text(&common.out.join("fringe.gp"), &fringe_gnuplot("fringe.csv"))?;
    }
    let dark = (cfg.d1.dark_rate(), cfg.d2.dark_rate());
    if let (Some(f1), Some(f2)) = (&outcome.fit_d1, &outcome.fit_d2) {
        let p1: Vec<_> = outcome.points.iter().map(|p| p.net_fit_point_d1(dark.0)).collect();
        let p2: Vec<_> = outcome.points.iter().map(|p| p.net_fit_point_d2(dark.1)).collect();
        common.say(describe_fit("D1", f1, &f1.residuals(&p1)));
        common.say(describe_fit("D2", f2, &f2.residuals(&p2)));
    }
    let worst = outcome.points.iter().map(|p| p.max_monitor_dev).fold(0.0, f64::max);
    common.say(format!(
        "{} points; worst monitor deviation {worst:.4}",
        outcome.points.len()
    ));
    match outcome.aborted {
        Some(reason) => Err(Error::LockLost {
            time: outcome.events.last().map_or(0.0, |e| e.time),
            reason,
        }),
        None => Ok(()),
    }
}

fn inset(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    common.prepare_out()?;
    let points = inset_sweep(&cfg, None)?;
    write_inset_csv(&points, &common.out.join("inset.csv"))?;
    if common.plot {
        write_text(&common.out.join("inset.gp"), &inset_gnuplot("inset.csv"))?;
    }
    let peak = points.iter().map(|p| p.counts_d1).fold(0.0, f64::max);
    common.say(format!("{} delays; peak D1 rate {peak:.1} /s", points.len()));
    Ok(())
}

fn validate(path: Option<&Path>) -> Result<()> {
    load_config(path)?;
    println!("configuration valid");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, replicas } => run(common, *replicas),
        Command::Scan { common } => scan(common),
        Command::Inset { common } => inset(common),
        Command::Validate { config } => validate(config.as_deref()),
        Command::PrintDefaults => {
            print!("{}", print_defaults());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mzlock: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
