//! Theil index of composite scores with a province-level decomposition.

use regional_equalization::preprocess::{prepare_scores, subsystem_scores, ScoreOptions, WeightMethod};
use regional_equalization::synthetic::{yrd_fixture, FIXTURE_SEED, PUBLIC_SERVICE_DIMENSIONS};
use regional_equalization::theil::{theil_by_dimension, theil_for_year, theil_index};

fn main() -> regional_equalization::Result<()> {
    // two equal groups, unequal between them
    let toy = theil_index(&[0.1, 0.1, 0.4, 0.4], &["a".into(), "a".into(), "b".into(), "b".into()])?;
    println!("toy: T={:.4} between={:.4} within={:.4}", toy.total, toy.between, toy.within);

    let fixture = yrd_fixture(FIXTURE_SEED);
    let groups: Vec<String> = fixture.panel.regions().iter().map(|r| r.group.clone()).collect();
    let prepared = prepare_scores(&fixture.panel, ScoreOptions::default())?;
    let dims: Vec<String> = PUBLIC_SERVICE_DIMENSIONS.iter().map(|s| s.to_string()).collect();
    let scores = subsystem_scores(&prepared, &dims, WeightMethod::Entropy)?;

    println!("year   T       within%  between%");
    for &year in &scores.years {
        let d = theil_for_year(&scores, year, &groups)?;
        println!(
            "{year} {:.4}  {:>6.2}   {:>6.2}",
            d.total,
            100.0 * d.within_contribution,
            100.0 * d.between_contribution
        );
    }

    let year = *scores.years.last().unwrap();
    println!("by dimension, {year}:");
    for (name, d) in theil_by_dimension(&scores, year, &groups)? {
        let parts: Vec<String> = d.groups.iter().map(|g| format!("{}={:.4}", g.group, g.theil)).collect();
        println!("  {name:<16} T={:.4} {}", d.total, parts.join(" "));
    }
    Ok(())
}
