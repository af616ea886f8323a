//! Coupling-coordination degree between two subsystem scores.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::ScoreTable;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::data(format!("{name} = {v} outside [0, 1]")))
    }
}

/// `C = 2·sqrt(S1·S2) / (S1 + S2)`, with `C = 0` when both scores are zero.
pub fn coupling_degree(s1: f64, s2: f64) -> Result<f64> {
    check_unit("S1", s1)?;
    check_unit("S2", s2)?;
    let sum = s1 + s2;
    if sum == 0.0 {
        return Ok(0.0);
    }
    // AM-GM keeps this at most 1; clamp rounding.
    Ok((2.0 * (s1 * s2).sqrt() / sum).min(1.0))
}

/// Returns `(C, Tc, D)` where `Tc = α·S1 + (1 − α)·S2` and `D = sqrt(C·Tc)`.
pub fn coordination_degree(s1: f64, s2: f64, alpha: f64) -> Result<(f64, f64, f64)> {
    check_unit("alpha", alpha)?;
    let c = coupling_degree(s1, s2)?;
    let tc = alpha * s1 + (1.0 - alpha) * s2;
    Ok((c, tc, (c * tc).sqrt()))
}

/// Experimental n-subsystem coupling: geometric mean over arithmetic mean.
///
/// Reduces to [`coupling_degree`] for two scores. Not used by the pipeline.
pub fn coupling_degree_n(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::data("no subsystem scores"));
    }
    for (i, &s) in scores.iter().enumerate() {
        check_unit(&format!("S{}", i + 1), s)?;
    }
    let n = scores.len() as f64;
    let am = scores.iter().sum::<f64>() / n;
    if am == 0.0 {
        return Ok(0.0);
    }
    let gm = scores.iter().product::<f64>().powf(1.0 / n);
    Ok((gm / am).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageBand {
    /// Inclusive lower edge.
    pub lower: f64,
    /// Exclusive upper edge, except for the last band which closes at 1.
    pub upper: f64,
    pub coupling_type: String,
    pub stage: String,
}

/// Ordered bands partitioning `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTaxonomy {
    bands: Vec<StageBand>,
}

impl StageTaxonomy {
    pub fn new(bands: Vec<StageBand>) -> Result<Self> {
        let first = bands.first().ok_or_else(|| Error::config("empty stage taxonomy"))?;
        if first.lower != 0.0 || bands.last().unwrap().upper != 1.0 {
            return Err(Error::config("stage bands must span [0, 1]"));
        }
        for b in &bands {
            if !(b.upper > b.lower) {
                return Err(Error::config(format!("empty stage band [{}, {})", b.lower, b.upper)));
            }
        }
        if bands.windows(2).any(|w| w[0].upper != w[1].lower) {
            return Err(Error::config("stage bands leave a gap or overlap"));
        }
        Ok(StageTaxonomy { bands })
    }

    pub fn bands(&self) -> &[StageBand] {
        &self.bands
    }

    pub fn classify(&self, d: f64) -> Result<&StageBand> {
        check_unit("D", d)?;
        let last = self.bands.len() - 1;
        Ok(self
            .bands
            .iter()
            .enumerate()
            .find(|(i, b)| d >= b.lower && (d < b.upper || *i == last))
            .map(|(_, b)| b)
            .expect("bands partition [0, 1]"))
    }
}

impl Default for StageTaxonomy {
    /// Seven coupling types grouped into four stages.
    fn default() -> Self {
        let rows = [
            (0.0, 0.3, "severe disharmony and decline", "low-level coupling"),
            (0.3, 0.4, "mild disharmony and decline", "antagonism"),
            (0.4, 0.5, "close to disharmony and decline", "antagonism"),
            (0.5, 0.6, "close to harmonious development", "preliminary synergy"),
            (0.6, 0.7, "moderate harmonious development", "preliminary synergy"),
            (0.7, 0.8, "good harmonious development", "preliminary synergy"),
            (0.8, 1.0, "excellent harmonious development", "high-level coupling"),
        ];
        StageTaxonomy::new(
            rows.iter()
                .map(|&(lower, upper, t, s)| StageBand {
                    lower,
                    upper,
                    coupling_type: t.into(),
                    stage: s.into(),
                })
                .collect(),
        )
        .expect("default taxonomy is valid")
    }
}

/// `(type, stage)` labels for `d`.
pub fn classify_stage(d: f64, taxonomy: &StageTaxonomy) -> Result<(String, String)> {
    let b = taxonomy.classify(d)?;
    Ok((b.coupling_type.clone(), b.stage.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingRecord {
    pub region_id: String,
    pub year: i32,
    pub s1: f64,
    pub s2: f64,
    pub c: f64,
    pub t: f64,
    pub d: f64,
    pub coupling_type: String,
    pub stage: String,
}

/// Coupling records for every region-year, region-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingTable {
    pub region_ids: Vec<String>,
    pub years: Vec<i32>,
    pub alpha: f64,
    pub records: Vec<CouplingRecord>,
}

impl CouplingTable {
    pub fn d(&self, region: usize, year: usize) -> f64 {
        self.records[region * self.years.len() + year].d
    }

    /// Regions whose `D` falls below `threshold` in each year.
    pub fn count_below(&self, threshold: f64) -> Vec<(i32, usize)> {
        (0..self.years.len())
            .map(|t| {
                let n = (0..self.region_ids.len())
                    .filter(|&r| self.d(r, t) < threshold)
                    .count();
                (self.years[t], n)
            })
            .collect()
    }
}

/// Couple two subsystem score tables laid out over the same regions and years.
pub fn couple(
    public_service: &ScoreTable,
    modernization: &ScoreTable,
    alpha: f64,
    taxonomy: &StageTaxonomy,
) -> Result<CouplingTable> {
    if public_service.region_ids != modernization.region_ids
        || public_service.years != modernization.years
    {
        return Err(Error::data("subsystem score tables cover different regions or years"));
    }
    let grid: Vec<(f64, f64)> = (0..public_service.n_regions())
        .flat_map(|r| {
            (0..public_service.n_years()).map(move |t| {
                (
                    public_service.subsystem_score(r, t),
                    modernization.subsystem_score(r, t),
                )
            })
        })
        .collect();
    couple_scores(
        &public_service.region_ids,
        &public_service.years,
        &grid,
        alpha,
        taxonomy,
    )
}

/// Couple raw `(S1, S2)` pairs given region-major.
pub fn couple_scores(
    region_ids: &[String],
    years: &[i32],
    scores: &[(f64, f64)],
    alpha: f64,
    taxonomy: &StageTaxonomy,
) -> Result<CouplingTable> {
    if scores.len() != region_ids.len() * years.len() {
        return Err(Error::data("score grid does not match regions x years"));
    }
    let mut records = Vec::with_capacity(scores.len());
    for (r, id) in region_ids.iter().enumerate() {
        for (t, &year) in years.iter().enumerate() {
            let (s1, s2) = scores[r * years.len() + t];
            let (c, tc, d) = coordination_degree(s1, s2, alpha)?;
            let (coupling_type, stage) = classify_stage(d, taxonomy)?;
            records.push(CouplingRecord {
                region_id: id.clone(),
                year,
                s1,
                s2,
                c,
                t: tc,
                d,
                coupling_type,
                stage,
            });
        }
    }
    Ok(CouplingTable {
        region_ids: region_ids.to_vec(),
        years: years.to_vec(),
        alpha,
        records,
    })
}
