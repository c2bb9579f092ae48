//! Drives the command-line front end from code: the built-in academic demo,
//! writing every artifact and a manifest into a temporary directory.

use robust_oag::cli::{self, Cli};
use clap::Parser;

pub fn run_example() -> robust_oag::Result<()> {
    let dir = std::env::temp_dir().join("robust_oag_cli_demo");
    let argv = ["robust-oag", "demo", "academic", "--out", dir.to_str().unwrap_or("out"), "--seed", "3"];
    let cli = Cli::parse_from(argv);
    match cli::execute(&cli) {
        Ok(out) => {
            println!("exit {} with {} artifacts in {}", out.code, out.files.len(), out.out_dir.display());
            for f in &out.files {
                println!("  {f}");
            }
            Ok(())
        }
        Err(e) => Err(e.error),
    }
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
