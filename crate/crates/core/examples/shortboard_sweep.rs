//! Dual-cutoff identification of weak counties and a sweep over the
//! aggregate cutoff.

use regional_equalization::preprocess::WeightMethod;
use regional_equalization::shortboard::{
    analyze, county_rows, decompose_by_group, decompose_by_indicator, threshold_sweep, ShortboardConfig,
};
use regional_equalization::synthetic::{yrd_fixture, FIXTURE_SEED};

fn main() -> regional_equalization::Result<()> {
    let counties = yrd_fixture(FIXTURE_SEED).counties;
    let thresholds = counties.column_medians();
    let weights = counties.weights(WeightMethod::Blended)?;
    let config = ShortboardConfig::new(thresholds.clone(), weights.clone(), 0.5)?;
    let result = analyze(&counties, &config)?;
    let ix = &result.indices;
    println!("Q = 0.5: U={:.3} weak={} T={:.3} M={:.4}", ix.incidence, ix.weak_count(), ix.intensity, ix.index);

    if let Some(shares) = decompose_by_indicator(&result) {
        for (name, s) in result.indicators.iter().zip(shares) {
            println!("  {name:<24} {:>5.1}%", 100.0 * s);
        }
    }
    if let Some(groups) = &counties.groups {
        for (g, s) in decompose_by_group(&result, groups).unwrap_or_default() {
            println!("  city {g:<12} {:>5.1}%", 100.0 * s);
        }
    }
    for row in county_rows(&result).iter().filter(|r| r.ind > 0.0) {
        println!("  weak: {:<10} share {:.3}", row.county, row.deg);
    }

    let cutoffs: Vec<f64> = (2..=16).rev().map(|k| k as f64 * 0.05).collect();
    println!("Q     U      n   T      M");
    for r in threshold_sweep(&counties.rows, &thresholds, &weights, &cutoffs)? {
        println!("{:.2}  {:.3}  {:>2}  {:.3}  {:.4}", r.cutoff, r.incidence, r.weak_count, r.intensity, r.index);
    }
    Ok(())
}
