//! Efficacy scores, entropy weights and subsystem composites.

use regional_equalization::preprocess::{prepare_scores, subsystem_scores, ScoreOptions, WeightMethod};
use regional_equalization::synthetic::{yrd_fixture, FIXTURE_SEED, PUBLIC_SERVICE_DIMENSIONS};

fn main() -> regional_equalization::Result<()> {
    let fixture = yrd_fixture(FIXTURE_SEED);
    let prepared = prepare_scores(&fixture.panel, ScoreOptions::default())?;
    println!("imputed {} cells", prepared.imputed_cells);

    let dims: Vec<String> = PUBLIC_SERVICE_DIMENSIONS.iter().map(|s| s.to_string()).collect();
    for method in [WeightMethod::Entropy, WeightMethod::CoefficientOfVariation, WeightMethod::Blended] {
        let table = subsystem_scores(&prepared, &dims, method)?;
        let (top, w) = table
            .weights
            .indicators
            .iter()
            .zip(&table.weights.weights)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        println!("{method:?}: heaviest indicator {top} ({w:.4})");
    }

    let table = subsystem_scores(&prepared, &dims, WeightMethod::Entropy)?;
    let last = table.n_years() - 1;
    let mut ranked: Vec<(usize, f64)> =
        (0..table.n_regions()).map(|r| (r, table.composite_at(r, last))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("top five in {}:", table.years[last]);
    for (r, s) in ranked.iter().take(5) {
        println!("  {:<12} {s:.2}", table.region_ids[*r]);
    }
    Ok(())
}
