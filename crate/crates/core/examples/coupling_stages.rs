//! Couple the public-service and modernization subsystems and tally stages.

use regional_equalization::coupling::{coordination_degree, couple, StageTaxonomy};
use regional_equalization::preprocess::{prepare_scores, subsystem_scores, ScoreOptions, WeightMethod};
use regional_equalization::synthetic::{
    yrd_fixture, FIXTURE_SEED, MODERNIZATION_DIMENSIONS, PUBLIC_SERVICE_DIMENSIONS,
};

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn main() -> regional_equalization::Result<()> {
    // a single pair first
    let (c, t, d) = coordination_degree(0.62, 0.48, 0.5)?;
    println!("S1=0.62 S2=0.48 -> C={c:.4} T={t:.4} D={d:.4}");

    let fixture = yrd_fixture(FIXTURE_SEED);
    let prepared = prepare_scores(&fixture.panel, ScoreOptions::default())?;
    let ps = subsystem_scores(&prepared, &owned(&PUBLIC_SERVICE_DIMENSIONS), WeightMethod::Entropy)?;
    let md = subsystem_scores(&prepared, &owned(&MODERNIZATION_DIMENSIONS), WeightMethod::Entropy)?;
    let taxonomy = StageTaxonomy::default();
    let table = couple(&ps, &md, 0.5, &taxonomy)?;

    for (year, n) in table.count_below(0.8) {
        println!("{year}: {n} cities below D = 0.8");
    }
    let year = table.years.len() - 1;
    for band in taxonomy.bands() {
        let n = (0..table.region_ids.len())
            .filter(|&r| taxonomy.classify(table.d(r, year)).map(|b| b == band).unwrap_or(false))
            .count();
        println!("  [{:.1}, {:.1}) {:<34} {n}", band.lower, band.upper, band.coupling_type);
    }
    Ok(())
}
