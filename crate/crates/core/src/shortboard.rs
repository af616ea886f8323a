//! Dual-cutoff identification of weak counties and their shortfalls.
//!
//! A county is deprived in indicator `j` when its value is strictly below
//! the threshold `X_j`; it is weak when its weighted deprivation share is
//! strictly above the aggregate cutoff `Q`. Deprivations of non-weak counties
//! are censored before computing incidence `U`, intensity `T` and the index
//! `M = U·T`.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::preprocess::{blended_weights, cv_weights, entropy_weights, quantile_sorted, WeightMethod};

/// County-by-indicator value matrix with optional group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CountyMatrix {
    pub counties: Vec<String>,
    pub groups: Option<Vec<String>>,
    pub indicators: Vec<String>,
    /// Row-major `counties × indicators`.
    pub rows: Vec<Vec<f64>>,
}

impl CountyMatrix {
    pub fn new(
        counties: Vec<String>,
        groups: Option<Vec<String>>,
        indicators: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.len() != counties.len() {
            return Err(Error::data("one row per county required"));
        }
        if rows.is_empty() || indicators.is_empty() {
            return Err(Error::data("county matrix is empty"));
        }
        if rows.iter().any(|r| r.len() != indicators.len()) {
            return Err(Error::data("county matrix is ragged"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("county matrix has non-finite values"));
        }
        if groups.as_ref().is_some_and(|g| g.len() != counties.len()) {
            return Err(Error::data("one group label per county required"));
        }
        Ok(CountyMatrix {
            counties,
            groups,
            indicators,
            rows,
        })
    }

    /// Parse `county[,group],<indicator...>` CSV text.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::data(format!("county csv header: {e}")))?
            .clone();
        if headers.get(0) != Some("county") {
            return Err(Error::data("county csv must start with a `county` column"));
        }
        let has_group = headers.get(1) == Some("group");
        let first = if has_group { 2 } else { 1 };
        let indicators: Vec<String> = headers.iter().skip(first).map(String::from).collect();
        let mut counties = Vec::new();
        let mut groups = Vec::new();
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::data(format!("county csv row {}: {e}", line + 2)))?;
            counties.push(rec[0].to_string());
            if has_group {
                groups.push(rec[1].to_string());
            }
            let row = rec
                .iter()
                .skip(first)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        Error::data(format!("county csv row {}: bad value {v:?}", line + 2))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        CountyMatrix::new(counties, has_group.then_some(groups), indicators, rows)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CountyMatrix::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("county");
        if self.groups.is_some() {
            out.push_str(",group");
        }
        for i in &self.indicators {
            out.push(',');
            out.push_str(i);
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&self.counties[i]);
            if let Some(g) = &self.groups {
                out.push(',');
                out.push_str(&g[i]);
            }
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.indicators.len())
            .map(|j| self.rows.iter().map(|r| r[j]).collect())
            .collect()
    }

    /// Column medians, the default thresholds.
    pub fn column_medians(&self) -> Vec<f64> {
        self.columns()
            .into_iter()
            .map(|mut c| {
                c.sort_by(f64::total_cmp);
                quantile_sorted(&c, 0.5)
            })
            .collect()
    }

    /// Data-driven indicator weights.
    pub fn weights(&self, method: WeightMethod) -> Result<Vec<f64>> {
        let cols = self.columns();
        match method {
            WeightMethod::Entropy => entropy_weights(&cols),
            WeightMethod::CoefficientOfVariation => cv_weights(&cols),
            WeightMethod::Blended => blended_weights(&cols),
            WeightMethod::Equal => Ok(vec![1.0 / cols.len() as f64; cols.len()]),
            WeightMethod::Explicit => Err(Error::config(
                "shortboard.weighting = explicit needs shortboard.weights",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShortboardConfig {
    pub thresholds: Vec<f64>,
    pub weights: Vec<f64>,
    pub cutoff: f64,
}

impl ShortboardConfig {
    pub fn new(thresholds: Vec<f64>, weights: Vec<f64>, cutoff: f64) -> Result<Self> {
        if thresholds.len() != weights.len() {
            return Err(Error::config(format!(
                "shortboard.thresholds has {} entries but there are {} weights",
                thresholds.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config("shortboard.weights must be non-negative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("shortboard.weights sum to {s}, not 1")));
        }
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(Error::config(format!("shortboard.cutoff {cutoff} outside (0, 1]")));
        }
        Ok(ShortboardConfig {
            thresholds,
            weights,
            cutoff,
        })
    }
}

/// `B_ij = 1` exactly when `A_ij < X_j`.
pub fn deprivation_matrix(a: &[Vec<f64>], thresholds: &[f64]) -> Result<Vec<Vec<u8>>> {
    a.iter()
        .map(|row| {
            if row.len() != thresholds.len() {
                return Err(Error::data(format!(
                    "row has {} indicators, thresholds have {}",
                    row.len(),
                    thresholds.len()
                )));
            }
            Ok(row
                .iter()
                .zip(thresholds)
                .map(|(v, x)| u8::from(v < x))
                .collect())
        })
        .collect()
}

fn weighted_count(row: &[u8], weights: &[f64]) -> f64 {
    row.iter().zip(weights).map(|(&b, w)| f64::from(b) * w).sum()
}

/// Weak flags: `B_i · Y > Q`.
pub fn identify_weak(b: &[Vec<u8>], weights: &[f64], cutoff: f64) -> Vec<bool> {
    b.iter().map(|row| weighted_count(row, weights) > cutoff).collect()
}

/// Zero out the rows of non-weak counties.
pub fn censor(b: &[Vec<u8>], weak: &[bool]) -> Vec<Vec<u8>> {
    b.iter()
        .zip(weak)
        .map(|(row, &f)| if f { row.clone() } else { vec![0; row.len()] })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShortboardIndices {
    pub weak: Vec<bool>,
    pub censored: Vec<Vec<u8>>,
    /// `Z_i = C_i · Y`.
    pub weighted_counts: Vec<f64>,
    /// `U = Σ f_i / m`.
    pub incidence: f64,
    /// `T = Σ Z_i / Σ f_i`, zero if nobody is weak.
    pub intensity: f64,
    /// `M = U · T`.
    pub index: f64,
}

impl ShortboardIndices {
    pub fn weak_count(&self) -> usize {
        self.weak.iter().filter(|&&f| f).count()
    }
}

pub fn shortboard_indices(b: &[Vec<u8>], weights: &[f64], cutoff: f64) -> ShortboardIndices {
    let weak = identify_weak(b, weights, cutoff);
    let censored = censor(b, &weak);
    let weighted_counts: Vec<f64> = censored.iter().map(|r| weighted_count(r, weights)).collect();
    let m = b.len() as f64;
    let n_weak = weak.iter().filter(|&&f| f).count();
    let incidence = n_weak as f64 / m;
    let intensity = if n_weak > 0 {
        weighted_counts.iter().sum::<f64>() / n_weak as f64
    } else {
        log::warn!("no county is weak at cutoff {cutoff}");
        0.0
    };
    ShortboardIndices {
        weak,
        censored,
        weighted_counts,
        incidence,
        intensity,
        index: incidence * intensity,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShortboardResult {
    pub counties: Vec<String>,
    pub indicators: Vec<String>,
    pub config: ShortboardConfig,
    pub deprivation: Vec<Vec<u8>>,
    pub indices: ShortboardIndices,
}

pub fn analyze(matrix: &CountyMatrix, config: &ShortboardConfig) -> Result<ShortboardResult> {
    if config.thresholds.len() != matrix.indicators.len() {
        return Err(Error::config(format!(
            "shortboard.thresholds has {} entries for {} indicators",
            config.thresholds.len(),
            matrix.indicators.len()
        )));
    }
    let deprivation = deprivation_matrix(&matrix.rows, &config.thresholds)?;
    let indices = shortboard_indices(&deprivation, &config.weights, config.cutoff);
    Ok(ShortboardResult {
        counties: matrix.counties.clone(),
        indicators: matrix.indicators.clone(),
        config: config.clone(),
        deprivation,
        indices,
    })
}

/// Share of `M` due to each indicator; `None` when `M = 0`.
pub fn decompose_by_indicator(result: &ShortboardResult) -> Option<Vec<f64>> {
    let total: f64 = result.indices.weighted_counts.iter().sum();
    if result.indices.index == 0.0 || total == 0.0 {
        log::warn!("shortboard index is zero; indicator contributions undefined");
        return None;
    }
    Some(
        result
            .config
            .weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let c: f64 = result.indices.censored.iter().map(|r| f64::from(r[j])).sum();
                w * c / total
            })
            .collect(),
    )
}

/// Share of `M` due to each group, `(m_g/m)·M_g/M`; `None` when `M = 0`.
pub fn decompose_by_group(result: &ShortboardResult, groups: &[String]) -> Option<Vec<(String, f64)>> {
    if result.indices.index == 0.0 {
        log::warn!("shortboard index is zero; group contributions undefined");
        return None;
    }
    let m = groups.len() as f64;
    let mut labels: Vec<&String> = Vec::new();
    for g in groups {
        if !labels.contains(&g) {
            labels.push(g);
        }
    }
    Some(
        labels
            .into_iter()
            .map(|label| {
                let rows: Vec<usize> = (0..groups.len()).filter(|&i| &groups[i] == label).collect();
                let mg = rows.len() as f64;
                let m_group = rows
                    .iter()
                    .map(|&i| result.indices.weighted_counts[i])
                    .sum::<f64>()
                    / mg;
                (label.clone(), mg / m * m_group / result.indices.index)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cutoff: f64,
    pub incidence: f64,
    pub weak_count: usize,
    pub intensity: f64,
    pub index: f64,
}

/// Indices recomputed at each aggregate cutoff.
pub fn threshold_sweep(
    a: &[Vec<f64>],
    thresholds: &[f64],
    weights: &[f64],
    cutoffs: &[f64],
) -> Result<Vec<SweepRow>> {
    if cutoffs.is_empty() {
        return Err(Error::config("shortboard.sweep must not be empty"));
    }
    let b = deprivation_matrix(a, thresholds)?;
    Ok(cutoffs
        .iter()
        .map(|&q| {
            let ix = shortboard_indices(&b, weights, q);
            SweepRow {
                cutoff: q,
                incidence: ix.incidence,
                weak_count: ix.weak_count(),
                intensity: ix.intensity,
                index: ix.index,
            }
        })
        .collect())
}

/// Per-county row: weak flag, deprivation share, censored score and
/// per-indicator censored contributions `Y_j · C_ij`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountyRow {
    pub county: String,
    pub ocr: f64,
    pub deg: f64,
    pub ind: f64,
    pub contributions: Vec<f64>,
}

pub fn county_rows(result: &ShortboardResult) -> Vec<CountyRow> {
    let w = &result.config.weights;
    result
        .counties
        .iter()
        .enumerate()
        .map(|(i, county)| CountyRow {
            county: county.clone(),
            ocr: if result.indices.weak[i] { 1.0 } else { 0.0 },
            deg: weighted_count(&result.deprivation[i], w),
            ind: result.indices.weighted_counts[i],
            contributions: result.indices.censored[i]
                .iter()
                .zip(w)
                .map(|(&c, wj)| f64::from(c) * wj)
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strict_deprivation() {
        assert_eq!(deprivation_matrix(&[vec![0.5, 0.49]], &[0.5, 0.5]).unwrap(), vec![vec![0, 1]]);
        assert_eq!(deprivation_matrix(&[vec![0.3, 0.9]], &[0.5, 0.5]).unwrap(), vec![vec![1, 0]]);
        assert_eq!(
            deprivation_matrix(&[vec![1.0, 1.0], vec![2.0, 3.0]], &[0.5, 0.5]).unwrap(),
            vec![vec![0, 0], vec![0, 0]]
        );
    }

    #[test]
    fn strict_identification() {
        let y = [0.25; 4];
        assert_eq!(identify_weak(&[vec![1, 1, 0, 0]], &y, 0.5), vec![false]);
        assert_eq!(identify_weak(&[vec![1, 1, 1, 0]], &y, 0.5), vec![true]);
        assert_eq!(identify_weak(&[vec![1, 1, 1, 1]], &y, 0.99), vec![true]);
    }

    #[test]
    fn three_county_enumeration() {
        let b = vec![vec![1, 1], vec![1, 0], vec![0, 0]];
        let ix = shortboard_indices(&b, &[0.5, 0.5], 0.5);
        assert_eq!(ix.weak, vec![true, false, false]);
        assert!((ix.incidence - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ix.intensity, 1.0);
        assert!((ix.index - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ix.censored[1], vec![0, 0]);
    }

    #[test]
    fn nothing_deprived() {
        let ix = shortboard_indices(&[vec![0, 0], vec![0, 0]], &[0.5, 0.5], 0.5);
        assert_eq!((ix.incidence, ix.intensity, ix.index), (0.0, 0.0, 0.0));
    }

    fn result_for(a: Vec<Vec<f64>>, x: Vec<f64>, y: Vec<f64>, q: f64) -> ShortboardResult {
        let n = x.len();
        let m = CountyMatrix::new(
            (0..a.len()).map(|i| format!("c{i}")).collect(),
            None,
            (0..n).map(|j| format!("i{j}")).collect(),
            a,
        )
        .unwrap();
        analyze(&m, &ShortboardConfig::new(x, y, q).unwrap()).unwrap()
    }

    #[test]
    fn single_indicator_contribution() {
        let r = result_for(vec![vec![0.0, 1.0], vec![1.0, 1.0]], vec![0.5, 0.5], vec![0.6, 0.4], 0.5);
        assert_eq!(decompose_by_indicator(&r).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn group_concentration() {
        let r = result_for(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            0.5,
        );
        let g = decompose_by_group(&r, &["a".into(), "a".into(), "b".into()]).unwrap();
        assert_eq!(g, vec![("a".to_string(), 1.0), ("b".to_string(), 0.0)]);
    }

    #[test]
    fn zero_index_has_no_contributions() {
        let r = result_for(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![0.5, 0.5], vec![0.5, 0.5], 0.5);
        assert!(decompose_by_indicator(&r).is_none());
        assert!(decompose_by_group(&r, &["a".into(), "b".into()]).is_none());
    }

    #[test]
    fn cutoff_one_finds_nobody() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
        let sweep = threshold_sweep(&rows, &[0.5, 0.5], &[0.5, 0.5], &[1.0]).unwrap();
        assert_eq!(sweep[0].incidence, 0.0);
    }

    #[test]
    fn cutoff_just_below_flips() {
        let rows = vec![vec![0.0, 1.0, 0.0]];
        let y = [0.2, 0.3, 0.5];
        let share = 0.7;
        let below = threshold_sweep(&rows, &[0.5; 3], &y, &[share - 1e-9, share]).unwrap();
        assert_eq!(below[0].weak_count, 1);
        assert_eq!(below[1].weak_count, 0);
    }

    #[test]
    fn config_validation() {
        assert!(ShortboardConfig::new(vec![0.5], vec![0.5, 0.5], 0.5).is_err());
        assert!(ShortboardConfig::new(vec![0.5, 0.5], vec![0.6, 0.6], 0.5).is_err());
        assert!(ShortboardConfig::new(vec![0.5, 0.5], vec![0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn county_csv_round_trip() {
        let text = "county,group,a,b\nx,g1,0.1,0.2\ny,g2,0.3,0.4\n";
        let m = CountyMatrix::from_csv(text).unwrap();
        assert_eq!(m.groups.as_ref().unwrap(), &vec!["g1".to_string(), "g2".to_string()]);
        assert_eq!(m.to_csv(), text);
        assert_eq!(m.column_medians(), vec![0.2, 0.30000000000000004]);
    }

    #[test]
    fn county_rows_follow_censoring() {
        let r = result_for(vec![vec![0.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5], vec![0.5, 0.5], 0.5);
        let rows = county_rows(&r);
        assert_eq!(rows[0].ocr, 1.0);
        assert_eq!(rows[0].ind, 1.0);
        assert_eq!(rows[1].deg, 0.5);
        assert_eq!(rows[1].ind, 0.0);
        assert_eq!(rows[1].contributions, vec![0.0, 0.0]);
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)> {
        (2usize..12, 1usize..6).prop_flat_map(|(m, n)| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), m),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.01f64..1.0, n),
                0.05f64..1.0,
            )
        })
    }

    proptest! {
        #[test]
        fn invariants((a, x, raw_w, q) in instance()) {
            let s: f64 = raw_w.iter().sum();
            let y: Vec<f64> = raw_w.iter().map(|v| v / s).collect();
            let b = deprivation_matrix(&a, &x).unwrap();
            let ix = shortboard_indices(&b, &y, q);
            prop_assert!((ix.index - ix.incidence * ix.intensity).abs() < 1e-12);
            prop_assert_eq!(censor(&ix.censored, &ix.weak), ix.censored.clone());

            // U non-increasing in Q
            let qs: Vec<f64> = (0..10).map(|i| 1.0 - i as f64 * 0.1).collect();
            let sweep = threshold_sweep(&a, &x, &y, &qs).unwrap();
            for w in sweep.windows(2) {
                prop_assert!(w[0].incidence <= w[1].incidence);
            }

            // lowering a threshold never raises M
            let mut lower = x.clone();
            lower[0] *= 0.5;
            let ix2 = shortboard_indices(&deprivation_matrix(&a, &lower).unwrap(), &y, q);
            prop_assert!(ix2.index <= ix.index + 1e-12);

            // lifting a deprived value above its threshold never raises M
            if let Some((i, j)) = (0..a.len()).flat_map(|i| (0..x.len()).map(move |j| (i, j))).find(|&(i, j)| b[i][j] == 1) {
                let mut lifted = a.clone();
                lifted[i][j] = x[j] + 0.1;
                let ix3 = shortboard_indices(&deprivation_matrix(&lifted, &x).unwrap(), &y, q);
                prop_assert!(ix3.index <= ix.index + 1e-12);
            }
        }
    }
}
