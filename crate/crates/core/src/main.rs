use bispde::cli::{run, Cli};
use clap::Parser;
use std::io::Write;
use std::process::ExitCode;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, rec| {
            writeln!(
                buf,
                "level={} target={} {}",
                rec.level().as_str().to_lowercase(),
                rec.target(),
                rec.args()
            )
        })
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("level=error event=thread_pool error=\"{e}\"");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('"', "'");
            eprintln!("level=error event=command_failed error=\"{msg}\"");
            ExitCode::FAILURE
        }
    }
}
