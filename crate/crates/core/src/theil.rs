//! Theil index over score shares with a between/within group decomposition.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::ScoreTable;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTerm {
    pub group: String,
    /// Number of units in the group.
    pub size: usize,
    /// Group share of the total, `p_k`.
    pub share: f64,
    /// Within-group Theil index, `T_k`.
    pub theil: f64,
    /// `p_k · T_k / T`.
    pub contribution: f64,
    /// Set when `p_k = 0`: the group adds nothing to either component.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheilDecomposition {
    pub total: f64,
    pub between: f64,
    /// `Σ_k p_k T_k`.
    pub within: f64,
    pub groups: Vec<GroupTerm>,
    /// `T_b / T`, zero when `T = 0`.
    pub between_contribution: f64,
    /// `T_w / T`, zero when `T = 0`.
    pub within_contribution: f64,
    pub units: usize,
}

fn xlogx_ratio(x: f64, reference: f64) -> f64 {
    if x > 0.0 {
        x * (x / reference).ln()
    } else {
        0.0
    }
}

/// `x_i = score_i / Σ score`.
pub fn shares_from_scores(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::data("scores must be finite and non-negative"));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::data("all scores are zero"));
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// Decompose the Theil index of `shares` over the groups named in `groups`
/// (one label per unit). Group order in the result follows first appearance.
pub fn theil_index(shares: &[f64], groups: &[String]) -> Result<TheilDecomposition> {
    if shares.len() != groups.len() {
        return Err(Error::data("every unit needs a group label"));
    }
    if shares.is_empty() {
        return Err(Error::data("no units to decompose"));
    }
    if shares.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::data("negative share"));
    }
    let sum: f64 = shares.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::data(format!("shares sum to {sum}, not 1")));
    }
    let m = shares.len() as f64;

    let mut labels: Vec<&String> = Vec::new();
    for g in groups {
        if !labels.contains(&g) {
            labels.push(g);
        }
    }

    let mut terms = Vec::with_capacity(labels.len());
    let mut between = 0.0;
    let mut within = 0.0;
    for label in labels {
        let members: Vec<f64> = shares
            .iter()
            .zip(groups)
            .filter(|(_, g)| *g == label)
            .map(|(x, _)| *x)
            .collect();
        let size = members.len();
        let p: f64 = members.iter().sum();
        if p == 0.0 {
            log::warn!("group {label} has zero share and is excluded");
            terms.push(GroupTerm {
                group: label.clone(),
                size,
                share: 0.0,
                theil: 0.0,
                contribution: 0.0,
                excluded: true,
            });
            continue;
        }
        let tk: f64 = members
            .iter()
            .map(|&x| xlogx_ratio(x / p, 1.0 / size as f64))
            .sum();
        between += xlogx_ratio(p, size as f64 / m);
        within += p * tk;
        terms.push(GroupTerm {
            group: label.clone(),
            size,
            share: p,
            theil: tk,
            contribution: 0.0,
            excluded: false,
        });
    }
    let total = between + within;
    let (between_contribution, within_contribution) = if total > 0.0 {
        for t in &mut terms {
            t.contribution = t.share * t.theil / total;
        }
        (between / total, within / total)
    } else {
        (0.0, 0.0)
    };
    debug_assert!(total >= -1e-12 && total <= m.ln() + 1e-9);
    Ok(TheilDecomposition {
        total,
        between,
        within,
        groups: terms,
        between_contribution,
        within_contribution,
        units: shares.len(),
    })
}

/// Decomposition of one year's composite scores.
pub fn theil_for_year(
    table: &ScoreTable,
    year: i32,
    groups: &[String],
) -> Result<TheilDecomposition> {
    let t = table
        .year_index(year)
        .ok_or_else(|| Error::data(format!("year {year} not in score table")))?;
    theil_index(&shares_from_scores(&table.composite_year(t))?, groups)
}

/// One decomposition per dimension, then the overall composite last.
pub fn theil_by_dimension(
    table: &ScoreTable,
    year: i32,
    groups: &[String],
) -> Result<Vec<(String, TheilDecomposition)>> {
    let t = table
        .year_index(year)
        .ok_or_else(|| Error::data(format!("year {year} not in score table")))?;
    if table.dimensions.is_empty() {
        return Err(Error::data("score table has no dimension columns"));
    }
    let mut out = Vec::with_capacity(table.dimensions.len() + 1);
    for (d, name) in table.dimensions.iter().enumerate() {
        let shares = shares_from_scores(&table.dimension_year(t, d))
            .map_err(|e| Error::data(format!("dimension {name}: {e}")))?;
        out.push((name.clone(), theil_index(&shares, groups)?));
    }
    out.push((
        "overall".to_string(),
        theil_index(&shares_from_scores(&table.composite_year(t))?, groups)?,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_equality() {
        let d = theil_index(&[0.25; 4], &labels(&["a", "a", "b", "b"])).unwrap();
        assert_eq!((d.total, d.between, d.within), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_group_two_units() {
        let d = theil_index(&[0.75, 0.25], &labels(&["a", "a"])).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((d.total - expected).abs() < 1e-15);
        assert!((d.total - 0.130812).abs() < 1e-6);
        assert_eq!(d.between, 0.0);
        assert!((d.within_contribution - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_group_has_zero_within() {
        let d = theil_index(&[0.4, 0.3, 0.3], &labels(&["sh", "js", "js"])).unwrap();
        assert_eq!(d.groups[0].theil, 0.0);
        assert_eq!(d.groups[0].contribution, 0.0);
    }

    #[test]
    fn zero_share_group_excluded() {
        let d = theil_index(&[0.5, 0.5, 0.0], &labels(&["a", "b", "c"])).unwrap();
        assert!(d.groups[2].excluded);
        assert_eq!(d.groups.iter().map(|g| g.size).sum::<usize>(), 3);
        let direct: f64 = [0.5f64, 0.5].iter().map(|x| x * (3.0 * x).ln()).sum();
        assert!((d.total - direct).abs() < 1e-15);
    }

    #[test]
    fn share_errors() {
        assert!(theil_index(&[0.5, 0.4], &labels(&["a", "a"])).is_err());
        assert!(theil_index(&[1.5, -0.5], &labels(&["a", "a"])).is_err());
        assert!(shares_from_scores(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn shares_examples() {
        assert_eq!(shares_from_scores(&[10.0, 30.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(shares_from_scores(&[3.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        let s = shares_from_scores(&[2.0, 3.0, 5.0]).unwrap();
        for (a, b) in s.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn additive_and_bounded(raw in prop::collection::vec(0.01f64..10.0, 2..30), k in 1usize..5) {
            let shares = shares_from_scores(&raw).unwrap();
            let groups: Vec<String> = (0..raw.len()).map(|i| format!("g{}", i % k)).collect();
            let d = theil_index(&shares, &groups).unwrap();
            let pk: f64 = d.groups.iter().map(|g| g.share * g.theil).sum();
            prop_assert!((d.total - d.between - pk).abs() < 1e-12);
            prop_assert!((d.groups.iter().map(|g| g.share).sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.total >= -1e-15 && d.total <= (raw.len() as f64).ln() + 1e-12);
            if d.total > 0.0 {
                let c: f64 = d.between_contribution + d.groups.iter().map(|g| g.contribution).sum::<f64>();
                prop_assert!((c - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn between_replication_invariant(raw in prop::collection::vec(0.01f64..10.0, 2..15), k in 1usize..4) {
            let groups: Vec<String> = (0..raw.len()).map(|i| format!("g{}", i % k)).collect();
            let d = theil_index(&shares_from_scores(&raw).unwrap(), &groups).unwrap();
            let doubled_raw: Vec<f64> = raw.iter().flat_map(|&v| [v, v]).collect();
            let doubled_groups: Vec<String> = groups.iter().flat_map(|g| [g.clone(), g.clone()]).collect();
            let dd = theil_index(&shares_from_scores(&doubled_raw).unwrap(), &doubled_groups).unwrap();
            prop_assert!((d.between - dd.between).abs() < 1e-10);
        }

        #[test]
        fn zero_iff_equal(n in 2usize..20, v in 0.1f64..5.0, bump in 0.01f64..1.0) {
            let equal = vec![v; n];
            let groups: Vec<String> = (0..n).map(|i| format!("g{}", i % 2)).collect();
            let d = theil_index(&shares_from_scores(&equal).unwrap(), &groups).unwrap();
            prop_assert!(d.total.abs() < 1e-12);
            let mut unequal = equal.clone();
            unequal[0] += bump;
            let d = theil_index(&shares_from_scores(&unequal).unwrap(), &groups).unwrap();
            prop_assert!(d.total > 1e-12);
        }
    }
}
