use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};
use maxgauge::config::{Mode, RawConfig, KEYS};
use maxgauge::run::run;
use maxgauge::{Error, Result};

fn cli() -> Command {
    let mut cmd = Command::new("maxgauge")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Maximal-gauge vacuum evolution on a collar with a timelike boundary")
        .arg(
            Arg::new("mode")
                .value_parser(Mode::ALL.map(|m| m.name()))
                .help("Run mode; same as --evolve.mode"),
        )
        .arg(Arg::new("config").long("config").short('c').value_parser(clap::value_parser!(PathBuf)).help("key=value file"));
    for (key, default) in KEYS {
        let help = match default {
            Some(d) => format!("default {d}"),
            None => "no default".to_string(),
        };
        cmd = cmd.arg(Arg::new(key).long(key).action(ArgAction::Set).allow_negative_numbers(true).value_name("VALUE").help(help));
    }
    cmd
}

fn load(m: &clap::ArgMatches) -> Result<maxgauge::config::RunConfig> {
    let mut raw = match m.get_one::<PathBuf>("config") {
        Some(p) => RawConfig::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RawConfig::default(),
    };
    if let Some(mode) = m.get_one::<String>("mode") {
        raw.set("evolve.mode", mode)?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            raw.set(key, v)?;
        }
    }
    raw.resolve()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match load(&matches).and_then(|cfg| run(&cfg)) {
        Ok(summary) => {
            for line in summary.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
