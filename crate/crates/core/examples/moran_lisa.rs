//! Global Moran's I with a permutation test, then LISA clusters.
//!
//! ```text
//! cargo run --example moran_lisa -- [permutations] [seed]
//! ```

use regional_equalization::panel::{build_weight_matrix, WeightKind};
use regional_equalization::preprocess::{prepare_scores, subsystem_scores, ScoreOptions, WeightMethod};
use regional_equalization::spatial::{lisa_classify, moran_permutation_test};
use regional_equalization::synthetic::{yrd_fixture, FIXTURE_SEED, PUBLIC_SERVICE_DIMENSIONS};

fn main() -> regional_equalization::Result<()> {
    let mut args = std::env::args().skip(1);
    let permutations: usize = args.next().map(|s| s.parse().expect("permutations")).unwrap_or(999);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(42);

    let fixture = yrd_fixture(FIXTURE_SEED);
    let prepared = prepare_scores(&fixture.panel, ScoreOptions::default())?;
    let dims: Vec<String> = PUBLIC_SERVICE_DIMENSIONS.iter().map(|s| s.to_string()).collect();
    let scores = subsystem_scores(&prepared, &dims, WeightMethod::Entropy)?;
    let w = build_weight_matrix(fixture.panel.regions(), WeightKind::BinaryContiguity, true)?;

    println!("year      I      z      p");
    for (t, year) in scores.years.iter().enumerate() {
        let y = scores.composite_year(t);
        let g = moran_permutation_test(&y, &w, permutations, seed)?;
        println!("{year} {:>7.4} {:>6.3} {:>6.4}", g.i, g.z_score, g.p_value);
    }

    let last = scores.n_years() - 1;
    let lisa = lisa_classify(&scores.composite_year(last), &w, permutations, seed, 0.05)?;
    println!("significant clusters in {}:", scores.years[last]);
    for (id, r) in lisa.region_ids.iter().zip(&lisa.regions) {
        if r.significant {
            println!("  {id:<12} {} I={:.3} p={:.3}", r.quadrant.as_str(), r.local_i, r.p_value);
        }
    }
    Ok(())
}
