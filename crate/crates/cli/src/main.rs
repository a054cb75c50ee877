use clap::Parser;
use ssmup_cli::{run, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        report_failure(&e);
        std::process::exit(e.exit_code());
    }
}

fn report_failure(e: &CliError) {
    let payload = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{payload}");
}
