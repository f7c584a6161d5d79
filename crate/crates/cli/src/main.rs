use std::process::ExitCode;

use sinn_cli::error::{EXIT_CONFIG, EXIT_FAILURE};

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SINN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("SINN_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    match sinn_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(clap_err) = err.downcast_ref::<clap::Error>() {
                let code = if clap_err.use_stderr() { EXIT_CONFIG } else { 0 };
                let _ = clap_err.print();
                return ExitCode::from(code as u8);
            }
            eprintln!("error: {err:#}");
            let code = sinn_cli::exit_code(&err);
            ExitCode::from(u8::try_from(code).unwrap_or(EXIT_FAILURE as u8))
        }
    }
}
