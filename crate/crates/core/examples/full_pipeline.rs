//! Run every stage from a TOML config, as `regeq all` does, and verify the
//! manifest afterwards.
//!
//! ```text
//! cargo run --example full_pipeline -- [config.toml] [out_dir]
//! ```

use std::path::PathBuf;

use regional_equalization::report::{run_pipeline, Manifest, RunConfig, Stage};

fn main() {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/yrd_synthetic/config.toml")
    });
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("regeq-example"));

    let cfg = match RunConfig::read(&config, &["moran.permutations=499".to_string()]) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    };
    let outputs = match run_pipeline(&cfg, &out, &Stage::ANALYSIS) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    };

    if let Some(c) = &outputs.coupling {
        println!("cities below D = 0.8: {:?}", c.count_below(0.8));
    }
    for (year, g) in &outputs.moran {
        println!("Moran {year}: I={:.4} p={:.4}", g.i, g.p_value);
    }
    for fit in &outputs.convergence {
        println!("{}: beta={:.4} s={:.4}", fit.model.as_str(), fit.beta(), fit.speed);
    }
    let manifest = Manifest::read(&out).expect("manifest written");
    manifest.verify(&out).expect("checksums match");
    println!("{} artifacts in {}", manifest.artifact_count(), out.display());
}
