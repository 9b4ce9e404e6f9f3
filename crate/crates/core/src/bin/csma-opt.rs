use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use csma_core::harness::{run_experiment, ExperimentConfig, Failure, Mode};
use csma_core::Error;

const ABOUT: &str = "Run CSMA scheduling experiments from a JSON config.

Any field of the config can be overridden with --path.to.field=VALUE, for
example --algo.V=5 or --dt.eps_list=[0.01,0.02]. Values are parsed as JSON
and fall back to plain strings.

Exit status: 0 on success, 2 on configuration errors, 3 on runtime errors.";

#[derive(Debug, Parser)]
#[command(name = "csma-opt", version, about = ABOUT)]
struct Cli {
    /// enumerate, stationary, simulate-ct, run-adaptive, ode, solve, run-dt or tradeoff
    mode: String,

    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,

    /// Output directory; defaults to the config's `output` field, then `out`
    #[arg(long)]
    out: Option<PathBuf>,
}

const OWN_FLAGS: [&str; 4] = ["config", "out", "help", "version"];

type Split = (Vec<String>, Vec<(String, String)>);

/// Splits `--a.b=v` / `--a.b v` overrides from the arguments clap handles.
fn split_overrides(args: Vec<String>) -> Result<Split, Error> {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    if let Some(program) = it.next() {
        plain.push(program);
    }
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            plain.push(arg);
            continue;
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if key.is_empty() || OWN_FLAGS.contains(&key.as_str()) {
            plain.push(arg);
            continue;
        }
        let value = match value {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::Config(format!("override --{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((plain, overrides))
}

fn main() -> ExitCode {
    let (plain, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("csma-opt: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(plain).unwrap_or_else(|e| e.exit());
    let outcome = cli
        .mode
        .parse::<Mode>()
        .and_then(|mode| Ok((mode, ExperimentConfig::load(&cli.config, &overrides)?)))
        .map_err(Failure::Config)
        .and_then(|(mode, cfg)| {
            let out = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
            run_experiment(&cfg, mode, &out).map(|run| (out, run))
        });
    match outcome {
        Ok((out, run)) => {
            println!("wrote {} files to {}", run.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("csma-opt: {failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_separated() {
        let (plain, ov) = split_overrides(args(&[
            "csma-opt",
            "solve",
            "--config",
            "c.json",
            "--algo.V=5",
            "--slots",
            "10",
            "--out=o",
        ]))
        .unwrap();
        assert_eq!(plain, args(&["csma-opt", "solve", "--config", "c.json", "--out=o"]));
        assert_eq!(ov, vec![("algo.V".into(), "5".into()), ("slots".into(), "10".into())]);
        assert!(split_overrides(args(&["csma-opt", "--algo.V"])).is_err());
    }
}
