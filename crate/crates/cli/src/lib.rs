//! Command-line pipeline: generate a training sweep, identify the model,
//! plan a path and track a reference in closed loop.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "gpmpc",
    version,
    about = "GP-augmented MPC pipeline for magnetically rolled microrobots"
)]
pub struct Cli {
    /// Run configuration (TOML, or JSON by extension). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the open-loop training sweep; writes sweep.csv.
    Generate,
    /// Identify a0 and the disturbance GPs from a logged run; writes model.json.
    Sysid {
        /// CSV with header `t,x,y,ux,uy`.
        #[arg(long)]
        data: PathBuf,
    },
    /// RRT* through a world of circular obstacles; writes path.csv.
    Plan {
        /// World JSON: {"bounds": [...], "obstacles": [{"c": [x, y], "r": r}], "clearance": c}.
        #[arg(long)]
        world: PathBuf,
        /// Start point `x,y`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        start: [f64; 2],
        /// Goal point `x,y`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        goal: [f64; 2],
    },
    /// Closed-loop tracking of the configured reference; writes logs, metrics and plots.
    Track {
        /// Model bundle from `sysid`.
        #[arg(long)]
        model: PathBuf,
        /// Also run the MPC without a disturbance model.
        #[arg(long)]
        baseline: bool,
        /// Seed range `a..b` (exclusive) or `a..=b`, run in parallel into seed_<n>/.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<SeedList>,
        /// Write per-step controller diagnostics as JSON lines.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Aggregate track summaries into one CSV table.
    Report {
        /// summary.json files written by `track`.
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [x, y] = parts.as_slice() else {
        return Err(format!("expected `x,y`, got `{s}`"));
    };
    let parse = |v: &str| {
        v.parse::<f64>()
            .ok()
            .filter(|f| f.is_finite())
            .ok_or_else(|| format!("`{v}` is not a finite number"))
    };
    Ok([parse(x)?, parse(y)?])
}

/// Seeds given on the command line as a range.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        let v = s.parse::<u64>().map_err(|e| e.to_string())?;
        return Ok(SeedList(vec![v]));
    };
    let a: u64 = a.trim().parse().map_err(|_| format!("bad range start in `{s}`"))?;
    let b: u64 = b.trim().parse().map_err(|_| format!("bad range end in `{s}`"))?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(format!("seed range `{s}` is empty"));
    }
    Ok(SeedList(seeds))
}

/// Loads the configuration with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs one command; returns the lines to report on success.
pub fn run(cli: &Cli) -> CliResult<Vec<String>> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Sysid { data } => commands::sysid(&cfg, data),
        Command::Plan { world, start, goal } => commands::plan(&cfg, world, *start, *goal),
        Command::Track {
            model,
            baseline,
            seeds,
            diagnostics,
        } => commands::track(
            &cfg,
            model,
            &commands::TrackOptions {
                baseline: *baseline,
                seeds: seeds.as_ref().map(|s| s.0.clone()),
                diagnostics: *diagnostics,
            },
        ),
        Command::Report { summaries, out } => commands::report(summaries, out),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_parsing() {
        assert_eq!(parse_point("1.5,-2").unwrap(), [1.5, -2.0]);
        assert_eq!(parse_point(" 3 , 4 ").unwrap(), [3.0, 4.0]);
        assert!(parse_point("1").is_err());
        assert!(parse_point("1,2,3").is_err());
        assert!(parse_point("nan,1").is_err());
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap().0, vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap().0, vec![2, 3, 4]);
        assert_eq!(parse_seeds("7").unwrap().0, vec![7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a..3").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn overrides_apply() {
        let cli = Cli::try_parse_from(["gpmpc", "--seed", "9", "--output-dir", "x", "generate"]).unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.output_dir, PathBuf::from("x"));
        let cli = Cli::try_parse_from(["gpmpc", "track", "--model", "m.json", "--seeds", "1..=2"]).unwrap();
        match cli.command {
            Command::Track { seeds, .. } => assert_eq!(seeds, Some(SeedList(vec![1, 2]))),
            other => panic!("parsed {other:?}"),
        }
    }
}
