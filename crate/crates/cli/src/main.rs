use std::process::ExitCode;

use env_logger::Env;

fn main() -> ExitCode {
    let cli = match rfa_cli::parse_args(std::env::args_os()) {
        Ok(cli) => cli,
        // help and version exit 0, usage errors 2
        Err(e) => e.exit(),
    };
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(Env::default().filter_or("RF_LOG", default_level))
        .format_timestamp(None)
        .init();

    let mut stdout = std::io::stdout().lock();
    match rfa_cli::run(&cli, &mut stdout) {
        Ok(()) => ExitCode::from(rfa_cli::EXIT_OK as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
