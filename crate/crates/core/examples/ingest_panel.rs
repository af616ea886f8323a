//! Load the bundled panel and schema, then print a coverage summary.

use std::path::PathBuf;

use regional_equalization::panel::{build_weight_matrix, load_panel, WeightKind};

fn main() -> regional_equalization::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/yrd_synthetic"));
    let loaded = load_panel(dir.join("panel.csv"), dir.join("schema.json"))?;
    let panel = &loaded.panel;

    println!(
        "{} regions x {} years x {} indicators",
        panel.n_regions(),
        panel.n_years(),
        panel.n_indicators()
    );
    println!("missing cells: {}, unparseable: {}", panel.missing_count(), loaded.unparseable_cells);
    for dim in panel.dimensions() {
        let n = panel.schema().iter().filter(|s| &s.dimension == dim).count();
        println!("  {dim:<22} {n}");
    }

    let w = build_weight_matrix(panel.regions(), WeightKind::BinaryContiguity, false)?;
    let links = w.entries().iter().filter(|&&v| v > 0.0).count() / 2;
    println!("contiguity links: {links}, symmetric: {}", w.is_symmetric(0.0));
    Ok(())
}
