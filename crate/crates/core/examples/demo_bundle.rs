//! Writes a replayable demo bundle (graph, items, fixture, config).
//!
//! `cargo run -p kgabs-core --example demo_bundle -- <dir> [toy|worked]`

use std::path::PathBuf;
use std::process::ExitCode;

use kgabs_core::pipeline::Ablation;
use kgabs_core::retrieval::RetrievalParams;
use kgabs_core::sim::{toy_world, worked_example_world, write_bundle};

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from) else {
        eprintln!("usage: demo_bundle <dir> [toy|worked]");
        return ExitCode::from(2);
    };
    let world = match args.next().as_deref() {
        None | Some("toy") => toy_world(7),
        Some("worked") => worked_example_world(),
        Some(other) => {
            eprintln!("unknown world {other:?}");
            return ExitCode::from(2);
        }
    };
    let settings = Ablation::default()
        .engine_settings(RetrievalParams::default(), 5, false)
        .expect("default ablation is valid");
    match write_bundle(&world, &dir, settings) {
        Ok(bundle) => {
            println!("config  {}", bundle.config.display());
            println!("items   {}", bundle.items.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
