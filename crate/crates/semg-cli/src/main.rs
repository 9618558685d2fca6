use std::path::{Path, PathBuf};
use std::process::ExitCode;

use semg_cli::commands::{self, evaluate::EvaluateArgs, stream::StreamArgs};
use semg_cli::config::PipelineConfig;
use semg_cli::CliError;

const USAGE: &str = "\
semg: surface-EMG motor-unit decomposition

USAGE:
  semg <subcommand> [options]

SUBCOMMANDS:
  simulate                       render the simulation grid with ground truth
  decompose-offline <recording>  offline progressive FastICA peel-off
  bank build <result-dir>...     curate prework vectors into a bank file
  stream <recording>             apply a bank to a replayed data stream
  evaluate                       score online trains against a reference
  report <metrics.csv>...        aggregate metric summaries

COMMON OPTIONS:
  --config <path>      load a key = value configuration file
  --set <key=value>    override one configuration key (repeatable)
  --seed <u64>         override the master seed
  --out <dir>          output directory (default: .)
  --jobs <n>           reserved for intra-stage parallelism (stages currently
                       run single-threaded for determinism)
  --dump-config        print the effective configuration and exit

SUBCOMMAND OPTIONS:
  decompose-offline:   --max-rounds <n>
  stream:              --bank <path> (required), --realtime | --offline-replay,
                       --enforce-realtime (exit code 3 on budget violation)
  evaluate:            --online <path>, --reference <path> (both required),
                       --recording <path>, --templates <path>, --emit-svg

EXIT CODES:
  0 success, 1 usage error, 2 data error, 3 real-time budget violation
";

struct ParsedArgs {
    subcommand: String,
    positional: Vec<String>,
    config: PipelineConfig,
    out: PathBuf,
    dump_config: bool,
    bank: Option<PathBuf>,
    realtime: bool,
    enforce_realtime: bool,
    online: Option<PathBuf>,
    reference: Option<PathBuf>,
    recording: Option<PathBuf>,
    templates: Option<PathBuf>,
    emit_svg: bool,
}

fn next_value(args: &mut std::vec::IntoIter<String>, flag: &str) -> Result<String, CliError> {
    args.next()
        .ok_or_else(|| CliError::usage(format!("{flag} needs a value")))
}

fn parse(argv: Vec<String>) -> Result<ParsedArgs, CliError> {
    let mut args = argv.into_iter();
    let subcommand = args
        .next()
        .ok_or_else(|| CliError::usage("missing subcommand"))?;
    let mut parsed = ParsedArgs {
        subcommand,
        positional: Vec::new(),
        config: PipelineConfig::default(),
        out: PathBuf::from("."),
        dump_config: false,
        bank: None,
        realtime: false,
        enforce_realtime: false,
        online: None,
        reference: None,
        recording: None,
        templates: None,
        emit_svg: false,
    };
    // `bank build` is a two-word subcommand.
    if parsed.subcommand == "bank" {
        let verb = args
            .next()
            .ok_or_else(|| CliError::usage("bank needs a verb (build)"))?;
        if verb != "build" {
            return Err(CliError::usage(format!("unknown bank verb `{verb}`")));
        }
        parsed.subcommand = "bank-build".to_string();
    }
    let mut pending_seed: Option<String> = None;
    let mut pending_sets: Vec<(String, String)> = Vec::new();
    let mut pending_max_rounds: Option<String> = None;
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--config" => {
                let path = next_value(&mut args, "--config")?;
                parsed.config.load_file(Path::new(&path))?;
            }
            "--set" => {
                let kv = next_value(&mut args, "--set")?;
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| CliError::usage("--set expects key=value"))?;
                pending_sets.push((k.trim().to_string(), v.trim().to_string()));
            }
            "--seed" => pending_seed = Some(next_value(&mut args, "--seed")?),
            "--out" => parsed.out = PathBuf::from(next_value(&mut args, "--out")?),
            "--jobs" => {
                let v = next_value(&mut args, "--jobs")?;
                let n: usize = v
                    .parse()
                    .map_err(|_| CliError::usage(format!("--jobs: bad value `{v}`")))?;
                if n == 0 {
                    return Err(CliError::usage("--jobs must be at least 1"));
                }
            }
            "--dump-config" => parsed.dump_config = true,
            "--max-rounds" => pending_max_rounds = Some(next_value(&mut args, "--max-rounds")?),
            "--bank" => parsed.bank = Some(PathBuf::from(next_value(&mut args, "--bank")?)),
            "--realtime" => parsed.realtime = true,
            "--offline-replay" => parsed.realtime = false,
            "--enforce-realtime" => parsed.enforce_realtime = true,
            "--online" => parsed.online = Some(PathBuf::from(next_value(&mut args, "--online")?)),
            "--reference" => {
                parsed.reference = Some(PathBuf::from(next_value(&mut args, "--reference")?))
            }
            "--recording" => {
                parsed.recording = Some(PathBuf::from(next_value(&mut args, "--recording")?))
            }
            "--templates" => {
                parsed.templates = Some(PathBuf::from(next_value(&mut args, "--templates")?))
            }
            "--emit-svg" => parsed.emit_svg = true,
            "--help" | "-h" => {
                print!("{USAGE}");
                std::process::exit(0);
            }
            other if other.starts_with("--") => {
                return Err(CliError::usage(format!("unknown flag `{other}`")));
            }
            positional => parsed.positional.push(positional.to_string()),
        }
    }
    // Flag overrides apply after any config file.
    for (k, v) in pending_sets {
        parsed.config.set(&k, &v)?;
    }
    if let Some(seed) = pending_seed {
        parsed.config.set("seed", &seed)?;
    }
    if let Some(rounds) = pending_max_rounds {
        parsed.config.set("apfp.max_rounds", &rounds)?;
    }
    Ok(parsed)
}

fn dispatch(parsed: ParsedArgs) -> Result<(), CliError> {
    if parsed.dump_config {
        print!("{}", parsed.config.dump());
        return Ok(());
    }
    match parsed.subcommand.as_str() {
        "simulate" => commands::simulate::run(&parsed.config, &parsed.out),
        "decompose-offline" => {
            let [recording] = parsed.positional.as_slice() else {
                return Err(CliError::usage(
                    "decompose-offline needs exactly one recording path",
                ));
            };
            commands::decompose::run(Path::new(recording), &parsed.config, &parsed.out)
        }
        "bank-build" => {
            let inputs: Vec<&Path> = parsed.positional.iter().map(Path::new).collect();
            let out_file = if parsed.out.extension().is_some() {
                parsed.out.clone()
            } else {
                commands::ensure_out_dir(&parsed.out)?;
                parsed.out.join("bank.mubk")
            };
            commands::bank::run(&inputs, &parsed.config, &out_file)
        }
        "stream" => {
            let [recording] = parsed.positional.as_slice() else {
                return Err(CliError::usage("stream needs exactly one recording path"));
            };
            let bank = parsed
                .bank
                .as_deref()
                .ok_or_else(|| CliError::usage("stream needs --bank <path>"))?;
            commands::stream::run(
                Path::new(recording),
                bank,
                &parsed.config,
                &StreamArgs {
                    realtime: parsed.realtime,
                    enforce_realtime: parsed.enforce_realtime,
                },
                &parsed.out,
            )
        }
        "evaluate" => {
            let online = parsed
                .online
                .as_deref()
                .ok_or_else(|| CliError::usage("evaluate needs --online <path>"))?;
            let reference = parsed
                .reference
                .as_deref()
                .ok_or_else(|| CliError::usage("evaluate needs --reference <path>"))?;
            commands::evaluate::run(
                &EvaluateArgs {
                    online,
                    reference,
                    recording: parsed.recording.as_deref(),
                    templates: parsed.templates.as_deref(),
                    emit_svg: parsed.emit_svg,
                },
                &parsed.config,
                &parsed.out,
            )
        }
        "report" => {
            let inputs: Vec<&Path> = parsed.positional.iter().map(Path::new).collect();
            commands::report::run(&inputs, &parsed.out)
        }
        other => Err(CliError::usage(format!("unknown subcommand `{other}`"))),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() {
        eprint!("{USAGE}");
        return ExitCode::from(1);
    }
    match parse(argv).and_then(dispatch) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
