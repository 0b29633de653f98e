//! Command-line front end: config resolution and the `run`, `compare`,
//! `sweep` and `stats` subcommands.
//!
//! Configuration is resolved in increasing precedence: built-in defaults,
//! the `CACHED_DFL_SEED` environment variable, the `--config` file, then
//! command-line flags. Exit codes: 0 on success, 2 for an invalid
//! configuration, 3 for an I/O or file-format error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::error::{Error, Result};
use crate::metrics::{format_g6, to_csv, write_csv, write_json, CSV_HEADER};
use crate::protocol::config::{CONFIG_KEYS, MOBILITY_KEYS, SEED_ENV};
use crate::protocol::stats::{cache_table, DEFAULT_EPOCH_SECONDS, DEFAULT_TAUS};
use crate::protocol::{run, speedup_config, ExperimentConfig, Policy, RunResult, UNLIMITED};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
    }
}

/// Parses a config file: either `key = value` lines with `#` comments, or a
/// JSON object as printed by the tool (a bare config or `{"config": ...}`).
pub fn parse_config_file(text: &str) -> Result<ConfigSource> {
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config JSON: {e}")))?;
        let inner = value.get("config").cloned().unwrap_or(value);
        let cfg: ExperimentConfig =
            serde_json::from_value(inner).map_err(|e| Error::config(format!("config JSON: {e}")))?;
        return Ok(ConfigSource::Full(Box::new(cfg)));
    }
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected `key = value`", i + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(ConfigSource::Pairs(pairs))
}

/// Contents of a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigSource {
    Pairs(Vec<(String, String)>),
    Full(Box<ExperimentConfig>),
}

/// Applies the precedence chain to `base` and returns the resolved config
/// together with the keys set explicitly by the file or the flags.
pub fn resolve_config(
    base: ExperimentConfig,
    env_seed: Option<&str>,
    file: Option<ConfigSource>,
    flags: &[(String, String)],
) -> Result<(ExperimentConfig, Vec<String>)> {
    let mut cfg = base;
    if let Some(seed) = env_seed {
        cfg.set("seed", seed)
            .map_err(|e| Error::config(format!("{SEED_ENV}: {e}")))?;
    }
    let mut given = Vec::new();
    match file {
        Some(ConfigSource::Full(full)) => cfg = *full,
        Some(ConfigSource::Pairs(pairs)) => {
            for (k, v) in pairs {
                cfg.set(&k, &v)?;
                given.push(k.replace('_', "-"));
            }
        }
        None => {}
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
        given.push(k.clone());
    }
    Ok((cfg, given))
}

fn config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("config file: `key = value` lines or a printed JSON config"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .value_parser(clap::value_parser!(PathBuf))
                .default_value("results")
                .help("output directory"),
        );
    CONFIG_KEYS.iter().fold(cmd, |cmd, &key| {
        cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .allow_hyphen_values(true)
                .help(flag_help(key)),
        )
    })
}

fn flag_help(key: &str) -> &'static str {
    match key {
        "agents" => "number of agents (vehicles)",
        "epochs" => "maximum number of global epochs",
        "local-steps" => "SGD steps per epoch (K)",
        "lr" => "initial learning rate",
        "rho" => "proximal coefficient",
        "batch-size" => "samples per SGD step",
        "cache-size" => "cache capacity, or `unlimited`",
        "tau-max" => "staleness bound in epochs",
        "policy" => "lru, gb, none or cfl",
        "gb-quotas" => "per-area cache quotas for gb, e.g. 3,3,4",
        "partition" => "shards, iid, dirichlet or overlap-0..3",
        "dirichlet-pi" => "Dirichlet concentration",
        "model" => "softmax or mlp",
        "hidden" => "hidden units of the mlp",
        "dataset" => "synthetic or idx:<train img>,<train lbl>,<test img>,<test lbl>",
        "train-size" => "synthetic training rows",
        "test-size" => "synthetic test rows",
        "dim" => "synthetic feature dimension",
        "classes" => "number of classes",
        "separation" => "synthetic class-mean scale",
        "noise" => "synthetic per-coordinate noise",
        "eval-subsample" => "evaluate each agent on this many random test rows",
        "speed" => "vehicle speed in m/s",
        "epoch-seconds" => "simulated seconds per epoch",
        "dt" => "mobility tick in seconds",
        "range" => "communication range in meters",
        "grid-rows" => "intersections per column of the grid",
        "grid-cols" => "intersections per row of the grid",
        "block-length" => "street length between intersections in meters",
        "areas" => "number of horizontal map areas",
        "restricted-per-area" => "vehicles confined to each area",
        "allow-u-turn" => "offer the reverse road at intersections (true/false)",
        "contact-model" => "mobility or full-mesh",
        "seed" => "master random seed",
        "patience" => "early-stopping patience in epochs (0 disables)",
        "plateau-factor" => "learning-rate reduction factor",
        "plateau-patience" => "epochs without improvement before reducing the rate",
        "min-lr" => "lower bound of the learning rate",
        "target-acc" => "accuracy target reported by compare",
        _ => "",
    }
}

pub fn command() -> Command {
    Command::new("cached-dfl")
        .about("Deterministic simulator of cache-enabled decentralized federated learning")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(Command::new("run").about("run one experiment")))
        .subcommand(config_args(
            Command::new("compare").about("run the lru, none and cfl policies on identical data"),
        ))
        .subcommand(config_args(
            Command::new("sweep")
                .about("one run per value of a parameter")
                .arg(
                    Arg::new("param")
                        .long("param")
                        .required(true)
                        .value_parser(["tau-max", "cache-size", "speedup"]),
                )
                .arg(Arg::new("values").long("values").required(true).value_name("LIST")),
        ))
        .subcommand(config_args(
            Command::new("stats")
                .about("training-free cache count and age table")
                .arg(Arg::new("tau-values").long("tau-values").value_name("LIST"))
                .arg(Arg::new("epoch-seconds-values").long("epoch-seconds-values").value_name("LIST")),
        ))
}

fn flag_pairs(m: &ArgMatches) -> Vec<(String, String)> {
    CONFIG_KEYS
        .iter()
        .filter_map(|&k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn resolve_from_matches(m: &ArgMatches, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let file = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(parse_config_file(&text)?)
        }
        None => None,
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let (cfg, given) = resolve_config(base, env_seed.as_deref(), file, &flag_pairs(m))?;
    cfg.validate()?;
    if cfg.policy == Policy::Cfl {
        let ignored: Vec<&str> = MOBILITY_KEYS
            .iter()
            .copied()
            .filter(|k| given.iter().any(|g| g == k))
            .collect();
        if !ignored.is_empty() {
            eprintln!("warning: policy cfl has no mobility; ignoring {}", ignored.join(", "));
        }
    }
    println!("{}", config_json(&cfg));
    Ok(cfg)
}

pub fn config_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

fn out_dir(m: &ArgMatches) -> Result<PathBuf> {
    let dir = m.get_one::<PathBuf>("out").cloned().unwrap_or_else(|| "results".into());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_run(dir: &Path, stem: &str, cfg: &ExperimentConfig, result: &RunResult) -> Result<()> {
    write_csv(&result.series, &dir.join(format!("{stem}.csv")))?;
    write_json(cfg, &result.series, &dir.join(format!("{stem}.json")))
}

fn report(result: &RunResult) -> String {
    let final_acc = result.final_accuracy().map_or("n/a".to_string(), format_g6);
    let best = result
        .best
        .map_or("n/a".to_string(), |(e, a)| format!("{e} (accuracy {})", format_g6(a)));
    format!("final mean accuracy: {final_acc}\nepochs to best: {best}")
}

fn cmd_run(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_from_matches(m, ExperimentConfig::default())?;
    let dir = out_dir(m)?;
    let result = run(&cfg)?;
    save_run(&dir, "metrics", &cfg, &result)?;
    println!("{}", report(&result));
    Ok(())
}

/// Summary table of a comparison; the `epochs_to_target` column is present
/// only when a target accuracy is configured.
pub fn compare_summary(target: Option<f64>, results: &[(Policy, RunResult)]) -> String {
    let mut out = String::from("policy,final_acc,best_acc,best_epoch");
    if target.is_some() {
        out.push_str(",epochs_to_target");
    }
    out.push('\n');
    for (policy, r) in results {
        let (best_epoch, best_acc) = r.best.unwrap_or((0, 0.0));
        write!(
            out,
            "{policy},{},{},{best_epoch}",
            format_g6(r.final_accuracy().unwrap_or(0.0)),
            format_g6(best_acc)
        )
        .expect("write to string");
        if let Some(t) = target {
            let reached = r.epochs_to(t).map_or(String::new(), |e| e.to_string());
            write!(out, ",{reached}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

fn cmd_compare(m: &ArgMatches) -> Result<()> {
    let base = resolve_from_matches(m, ExperimentConfig::default())?;
    let dir = out_dir(m)?;
    let mut results = Vec::new();
    for policy in [Policy::Lru, Policy::None, Policy::Cfl] {
        let mut cfg = base.clone();
        cfg.policy = policy;
        cfg.gb_quotas = None;
        let r = run(&cfg)?;
        save_run(&dir, &policy.to_string(), &cfg, &r)?;
        results.push((policy, r));
    }
    let summary = compare_summary(base.target_acc, &results);
    write_text(&dir.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn split_list(list: &str) -> Vec<&str> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Configs of a sweep, one per value.
pub fn sweep_configs(base: &ExperimentConfig, param: &str, values: &[&str]) -> Result<Vec<ExperimentConfig>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|v| {
            let cfg = match param {
                "speedup" => {
                    let factor: usize = v
                        .parse()
                        .map_err(|_| Error::config(format!("bad speedup factor `{v}`")))?;
                    speedup_config(base, factor)?
                }
                "tau-max" | "cache-size" => {
                    let mut c = base.clone();
                    c.set(param, v)?;
                    c
                }
                other => return Err(Error::config(format!("cannot sweep `{other}`"))),
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

fn cmd_sweep(m: &ArgMatches) -> Result<()> {
    let base = resolve_from_matches(m, ExperimentConfig::default())?;
    let param = m.get_one::<String>("param").expect("required");
    let values_arg = m.get_one::<String>("values").expect("required");
    let values = split_list(values_arg);
    let configs = sweep_configs(&base, param, &values)?;
    let dir = out_dir(m)?;
    let mut combined = format!("value,{CSV_HEADER}\n");
    for (value, cfg) in values.iter().zip(&configs) {
        let r = run(cfg)?;
        save_run(&dir, &format!("{param}-{value}"), cfg, &r)?;
        for line in to_csv(&r.series).lines().skip(1) {
            writeln!(combined, "{value},{line}").expect("write to string");
        }
        println!("{param}={value}: {}", report(&r).replace('\n', "; "));
    }
    write_text(&dir.join("sweep.csv"), &combined)
}

fn parse_u64_list(list: &str) -> Result<Vec<u64>> {
    split_list(list)
        .iter()
        .map(|s| s.parse().map_err(|_| Error::config(format!("bad tau value `{s}`"))))
        .collect()
}

fn parse_f64_list(list: &str) -> Result<Vec<f64>> {
    split_list(list)
        .iter()
        .map(|s| s.parse().map_err(|_| Error::config(format!("bad epoch length `{s}`"))))
        .collect()
}

fn cmd_stats(m: &ArgMatches) -> Result<()> {
    let base = ExperimentConfig {
        cache_size: UNLIMITED,
        epochs: 100,
        ..ExperimentConfig::default()
    };
    let cfg = resolve_from_matches(m, base)?;
    let taus = match m.get_one::<String>("tau-values") {
        Some(s) => parse_u64_list(s)?,
        None => DEFAULT_TAUS.to_vec(),
    };
    let secs = match m.get_one::<String>("epoch-seconds-values") {
        Some(s) => parse_f64_list(s)?,
        None => DEFAULT_EPOCH_SECONDS.to_vec(),
    };
    let dir = out_dir(m)?;
    let cells = cache_table(&cfg, &taus, &secs)?;
    let mut table = String::from("tau_max,epoch_seconds,count_mean,count_var,age_mean,age_var\n");
    for c in &cells {
        writeln!(
            table,
            "{},{},{},{},{},{}",
            c.tau_max,
            format_g6(c.epoch_seconds),
            format_g6(c.stats.count_mean),
            format_g6(c.stats.count_var),
            format_g6(c.stats.age_mean),
            format_g6(c.stats.age_var)
        )
        .expect("write to string");
    }
    write_text(&dir.join("cache_table.csv"), &table)?;
    print!("{table}");
    Ok(())
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match matches.subcommand() {
        Some(("run", m)) => cmd_run(m),
        Some(("compare", m)) => cmd_compare(m),
        Some(("sweep", m)) => cmd_sweep(m),
        Some(("stats", m)) => cmd_stats(m),
        _ => unreachable!("subcommand required"),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
