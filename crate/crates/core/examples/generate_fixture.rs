//! Regenerate the bundled synthetic fixture.
//!
//! ```text
//! cargo run --example generate_fixture -- [out_dir] [seed]
//! ```

use regional_equalization::synthetic::{write_fixture, FIXTURE_SEED};

fn main() -> regional_equalization::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "crates/core/fixtures/yrd_synthetic".into());
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(FIXTURE_SEED);
    write_fixture(&dir, seed)?;
    println!("wrote fixture to {dir} (seed {seed})");
    Ok(())
}
