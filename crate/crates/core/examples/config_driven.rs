//! Runs train, eval and verify from a config file, the same path the `gsot`
//! binary takes.
//!
//! ```text
//! cargo run --example config_driven -- configs/universal.conf
//! ```

use std::path::PathBuf;

use gsot::cli::{self, Command};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../configs/universal.conf"
            ))
        });
    let out = Some(std::env::temp_dir().join("gsot-config-driven"));
    for cmd in [Command::Train, Command::Eval, Command::Verify] {
        match cli::run(cmd, &path, None, out.clone()) {
            Ok(text) => print!("{text}"),
            Err(e) => {
                eprintln!("error: {e}");
                std::process::exit(cli::exit_code(&e));
            }
        }
    }
}
