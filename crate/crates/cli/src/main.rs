//! Command-line front end: validate configs, run campaigns, resume from
//! checkpoints, and regenerate report files.
//!
//! Exit codes: 0 success, 2 validation failure, 3 campaign failure,
//! 4 integrity error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use mfopt_core::config::{self, ConfigError, FileConfig};
use mfopt_core::driver::{
    latest_checkpoint, load_checkpoint, rebuild_report, resume_campaign, run_campaign,
    CampaignConfig, CampaignError, CampaignReport, CampaignStatus,
};

const USAGE: &str = "\
mfopt - budget-constrained multi-fidelity optimization campaigns

USAGE:
    mfopt run --config <file> [--out <dir>] [--seed <n>] [--clock virtual|real] [-v]
    mfopt resume --dir <campaign-dir> [--checkpoint <n>] [-v]
    mfopt report --dir <campaign-dir>
    mfopt validate --config <file>
    mfopt bench-list

The default output directory is $MFOPT_OUTPUT_DIR (or ./mfopt-out), with one
subdirectory per config file stem. A campaign directory keeps the effective
config (config.toml), queue journals, result stores, per-iteration
checkpoints, and the report/ tables.
";

const EXIT_VALIDATION: u8 = 2;
const EXIT_CAMPAIGN: u8 = 3;
const EXIT_INTEGRITY: u8 = 4;

struct Args {
    subcommand: String,
    config: Option<PathBuf>,
    dir: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    clock: Option<String>,
    checkpoint: Option<usize>,
    verbose: bool,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut args = Args {
        subcommand: argv.first().cloned().unwrap_or_default(),
        config: None,
        dir: None,
        out: None,
        seed: None,
        clock: None,
        checkpoint: None,
        verbose: false,
    };
    let mut it = argv.iter().skip(1);
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next()
                .cloned()
                .ok_or_else(|| format!("flag {name} needs a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value("--config")?)),
            "--dir" => args.dir = Some(PathBuf::from(value("--dir")?)),
            "--out" => args.out = Some(PathBuf::from(value("--out")?)),
            "--seed" => {
                args.seed = Some(
                    value("--seed")?
                        .parse()
                        .map_err(|e| format!("--seed: {e}"))?,
                )
            }
            "--clock" => args.clock = Some(value("--clock")?),
            "--checkpoint" => {
                args.checkpoint = Some(
                    value("--checkpoint")?
                        .parse()
                        .map_err(|e| format!("--checkpoint: {e}"))?,
                )
            }
            "-v" | "--verbose" => args.verbose = true,
            other => return Err(format!("unknown flag '{other}'")),
        }
    }
    Ok(args)
}

fn print_config_error(err: &ConfigError) {
    match err {
        ConfigError::Invalid(diags) => {
            for d in diags {
                eprintln!("invalid: {d}");
            }
        }
        other => eprintln!("{other}"),
    }
}

fn apply_overrides(file: &mut FileConfig, args: &Args) {
    if let Some(seed) = args.seed {
        file.campaign.seed = seed;
    }
    if let Some(clock) = &args.clock {
        file.orchestrator.clock = Some(clock.clone());
    }
}

fn default_out_root() -> PathBuf {
    std::env::var_os("MFOPT_OUTPUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("mfopt-out"))
}

fn print_report(report: &CampaignReport, verbose: bool) {
    match &report.status {
        CampaignStatus::Completed => println!("campaign completed: {}", report.problem_name),
        CampaignStatus::Failed(reason) => {
            println!("campaign FAILED: {} ({reason})", report.problem_name)
        }
    }
    println!(
        "  observations: {} | iterations: {}",
        report.history.len(),
        report.iterations.len()
    );
    if let Some(best) = &report.best {
        println!(
            "  best: {:?} -> {} (task {})",
            best.point.coords, best.value, best.task_id
        );
        if let Some(u) = report.uncertainty_at_best {
            println!("  predictive variance at best: {u}");
        }
    }
    if let Some(last) = report.ledger.last() {
        println!(
            "  budget left: T = {}, B = {}",
            last.t_remaining_after, last.b_remaining_after
        );
    }
    if verbose {
        for rec in &report.iterations {
            println!(
                "  iter {:>3}: T_i={:.4} B_i={:.4} proposed={} selected={} benefit={:.6}",
                rec.iteration,
                rec.t_i,
                rec.b_i,
                rec.proposed,
                rec.selected.len(),
                rec.achieved_benefit
            );
        }
    }
}

fn campaign_exit(report: &CampaignReport) -> ExitCode {
    match report.status {
        CampaignStatus::Completed => ExitCode::SUCCESS,
        CampaignStatus::Failed(_) => ExitCode::from(EXIT_CAMPAIGN),
    }
}

fn campaign_error_exit(err: &CampaignError) -> ExitCode {
    eprintln!("{err}");
    match err {
        CampaignError::Integrity(_) => ExitCode::from(EXIT_INTEGRITY),
        CampaignError::Config(_) => ExitCode::from(EXIT_VALIDATION),
        _ => ExitCode::from(EXIT_CAMPAIGN),
    }
}

fn cmd_run(args: &Args) -> ExitCode {
    let Some(config_path) = &args.config else {
        eprintln!("run needs --config <file>");
        return ExitCode::from(EXIT_VALIDATION);
    };
    let mut file = match config::load_file(config_path) {
        Ok(f) => f,
        Err(e) => {
            print_config_error(&e);
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    apply_overrides(&mut file, args);
    let campaign: CampaignConfig = match config::build_campaign(&file) {
        Ok(c) => c,
        Err(e) => {
            print_config_error(&e);
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let out_dir = match (&args.out, &file.output.directory) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => {
            let stem = config_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("campaign");
            default_out_root().join(stem)
        }
    };
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create {}: {e}", out_dir.display());
        return ExitCode::from(EXIT_CAMPAIGN);
    }
    // pin the effective configuration for resume/report
    if let Err(e) = config::save_file(&file, &out_dir.join("config.toml")) {
        print_config_error(&e);
        return ExitCode::from(EXIT_CAMPAIGN);
    }
    println!("running campaign into {}", out_dir.display());
    match run_campaign(&campaign, Some(&out_dir)) {
        Ok(report) => {
            print_report(&report, args.verbose);
            println!("report written to {}", out_dir.join("report").display());
            campaign_exit(&report)
        }
        Err(e) => campaign_error_exit(&e),
    }
}

fn load_dir_config(dir: &Path) -> Result<CampaignConfig, ExitCode> {
    let path = dir.join("config.toml");
    if !path.exists() {
        eprintln!("integrity error: missing {}", path.display());
        return Err(ExitCode::from(EXIT_INTEGRITY));
    }
    match config::load_campaign(&path) {
        Ok((_, campaign)) => Ok(campaign),
        Err(e) => {
            print_config_error(&e);
            Err(ExitCode::from(EXIT_INTEGRITY))
        }
    }
}

fn cmd_resume(args: &Args) -> ExitCode {
    let Some(dir) = &args.dir else {
        eprintln!("resume needs --dir <campaign-dir>");
        return ExitCode::from(EXIT_VALIDATION);
    };
    let campaign = match load_dir_config(dir) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match resume_campaign(&campaign, dir, args.checkpoint) {
        Ok(report) => {
            print_report(&report, args.verbose);
            campaign_exit(&report)
        }
        Err(e) => campaign_error_exit(&e),
    }
}

fn cmd_report(args: &Args) -> ExitCode {
    let Some(dir) = &args.dir else {
        eprintln!("report needs --dir <campaign-dir>");
        return ExitCode::from(EXIT_VALIDATION);
    };
    let campaign = match load_dir_config(dir) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let result = latest_checkpoint(dir)
        .and_then(|(_, path)| load_checkpoint(&path))
        .and_then(|state| rebuild_report(&campaign, &state))
        .and_then(|report| {
            mfopt_core::report::write_report(&report, dir)?;
            Ok(report)
        });
    match result {
        Ok(report) => {
            print_report(&report, args.verbose);
            println!("report written to {}", dir.join("report").display());
            ExitCode::SUCCESS
        }
        Err(e) => campaign_error_exit(&e),
    }
}

fn cmd_validate(args: &Args) -> ExitCode {
    let Some(config_path) = &args.config else {
        eprintln!("validate needs --config <file>");
        return ExitCode::from(EXIT_VALIDATION);
    };
    let file = match config::load_file(config_path) {
        Ok(f) => f,
        Err(e) => {
            print_config_error(&e);
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let diags = config::validate_file(&file);
    if diags.is_empty() {
        println!("{}: OK", config_path.display());
        ExitCode::SUCCESS
    } else {
        for d in &diags {
            eprintln!("invalid: {d}");
        }
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn cmd_bench_list() -> ExitCode {
    for (name, description) in mfopt_core::bench::list() {
        println!("{name:<18} {description}");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() || argv[0] == "--help" || argv[0] == "-h" || argv[0] == "help" {
        print!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}\n\n{USAGE}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    match args.subcommand.as_str() {
        "run" => cmd_run(&args),
        "resume" => cmd_resume(&args),
        "report" => cmd_report(&args),
        "validate" => cmd_validate(&args),
        "bench-list" => cmd_bench_list(),
        other => {
            eprintln!("unknown subcommand '{other}'\n\n{USAGE}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
