use std::process::ExitCode;

use clap::Parser;
use ennsurv::cli::{run, Cli};
use serde_json::json;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(mut status) => {
            status["status"] = json!("ok");
            eprintln!("{status}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            eprintln!("{}", json!({ "status": "error", "code": e.code, "message": e.message }));
            ExitCode::from(e.code)
        }
    }
}
