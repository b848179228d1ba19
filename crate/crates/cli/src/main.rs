use stagelab_cli::{run, CliError};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args_os()) {
        Ok(_) => {}
        Err(CliError::Clap(e)) => e.exit(),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `stagelab --help` for usage");
            }
            std::process::exit(e.exit_code());
        }
    }
}
