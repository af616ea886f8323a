//! Cleaning, normalization and entropy-weighted aggregation.
//!
//! The scoring chain is: fill gaps, flip negative-direction indicators,
//! shift indicators that still contain negatives, clamp to the pooled 5%/95%
//! quantiles, map through the power-type efficacy function onto `[0, 100]`,
//! then aggregate with objective weights.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{Direction, PanelDataset};

/// Quantile estimator recorded in exported metadata.
pub const QUANTILE_METHOD: &str = "linear interpolation between order statistics (h = (n-1)q)";

/// Outcome of [`impute_missing`].
#[derive(Debug, Clone)]
pub struct Imputation {
    pub panel: PanelDataset,
    pub filled: usize,
    pub warnings: Vec<String>,
}

/// Fill missing cells.
///
/// Interior gaps are interpolated linearly in the year value; leading and
/// trailing gaps take the mean of the region's observed values for that
/// indicator. A series with no observations at all takes the cross-region
/// mean of the indicator in the same year (pooled mean if that year is empty
/// too) and is reported in `warnings`.
pub fn impute_missing(panel: &PanelDataset) -> Result<Imputation> {
    let mut out = panel.clone();
    let mut warnings = Vec::new();
    let mut filled = 0;
    let years: Vec<f64> = panel.years().iter().map(|&y| y as f64).collect();

    for k in 0..panel.n_indicators() {
        let id = &panel.schema()[k].id;
        let pooled: Vec<f64> = panel.pooled(k).into_iter().flatten().collect();
        if pooled.is_empty() {
            return Err(Error::data(format!(
                "indicator {id} is missing for every region and year"
            )));
        }
        let pooled_mean = mean(&pooled);

        for r in 0..panel.n_regions() {
            let series = panel.series(r, k);
            let observed: Vec<(usize, f64)> = series
                .iter()
                .enumerate()
                .filter_map(|(t, v)| v.map(|v| (t, v)))
                .collect();
            if observed.len() == series.len() {
                continue;
            }
            if observed.is_empty() {
                warnings.push(format!(
                    "series {}/{id} entirely missing; filled with cross-region year means",
                    panel.regions()[r].id
                ));
                for t in 0..series.len() {
                    let cross: Vec<f64> = (0..panel.n_regions())
                        .filter_map(|q| panel.get(q, t, k))
                        .collect();
                    let v = if cross.is_empty() { pooled_mean } else { mean(&cross) };
                    out.set(r, t, k, Some(v));
                    filled += 1;
                }
                continue;
            }
            let own_mean = mean(&observed.iter().map(|o| o.1).collect::<Vec<_>>());
            for t in 0..series.len() {
                if series[t].is_some() {
                    continue;
                }
                let before = observed.iter().rev().find(|o| o.0 < t);
                let after = observed.iter().find(|o| o.0 > t);
                let v = match (before, after) {
                    (Some(&(t0, v0)), Some(&(t1, v1))) => {
                        let frac = (years[t] - years[t0]) / (years[t1] - years[t0]);
                        v0 + frac * (v1 - v0)
                    }
                    _ => own_mean,
                };
                out.set(r, t, k, Some(v));
                filled += 1;
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Imputation {
        panel: out,
        filled,
        warnings,
    })
}

fn require_complete(panel: &PanelDataset, op: &str) -> Result<()> {
    if panel.is_complete() {
        Ok(())
    } else {
        Err(Error::data(format!(
            "{op} requires an imputed panel ({} missing cells)",
            panel.missing_count()
        )))
    }
}

fn pooled_values(panel: &PanelDataset, k: usize) -> Vec<f64> {
    panel.pooled(k).into_iter().map(|v| v.expect("complete panel")).collect()
}

/// Map negative-direction indicators through `x ↦ max + min − x` over the
/// pooled sample so that larger is better everywhere.
pub fn reverse_negative(panel: &PanelDataset) -> Result<PanelDataset> {
    require_complete(panel, "reverse_negative")?;
    let mut out = panel.clone();
    for k in 0..panel.n_indicators() {
        if panel.schema()[k].direction != Direction::Negative {
            continue;
        }
        let vals = pooled_values(panel, k);
        let (lo, hi) = min_max(&vals);
        for r in 0..panel.n_regions() {
            for t in 0..panel.n_years() {
                let x = panel.get(r, t, k).unwrap();
                out.set(r, t, k, Some(hi + lo - x));
            }
        }
        out.schema_mut()[k].direction = Direction::Positive;
    }
    Ok(out)
}

/// Shift every indicator whose pooled minimum is negative up by `-min`.
/// Returns the shifted panel and the applied `(indicator, shift)` pairs.
pub fn shift_nonnegative(panel: &PanelDataset) -> Result<(PanelDataset, Vec<(String, f64)>)> {
    require_complete(panel, "shift_nonnegative")?;
    let mut out = panel.clone();
    let mut shifts = Vec::new();
    for k in 0..panel.n_indicators() {
        let (lo, _) = min_max(&pooled_values(panel, k));
        if lo >= 0.0 {
            continue;
        }
        for r in 0..panel.n_regions() {
            for t in 0..panel.n_years() {
                out.set(r, t, k, panel.get(r, t, k).map(|x| x - lo));
            }
        }
        shifts.push((panel.schema()[k].id.clone(), -lo));
    }
    Ok((out, shifts))
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Lower and upper clamp bounds of one indicator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficacyBounds {
    pub indicator: String,
    pub lower: f64,
    pub upper: f64,
}

impl EfficacyBounds {
    pub fn new(indicator: impl Into<String>, lower: f64, upper: f64) -> Result<Self> {
        let indicator = indicator.into();
        if !(upper > lower) {
            return Err(Error::data(format!(
                "indicator {indicator} is degenerate: bounds [{lower}, {upper}]"
            )));
        }
        Ok(EfficacyBounds {
            indicator,
            lower,
            upper,
        })
    }
}

/// Clamp each indicator into its pooled `[lower_q, upper_q]` quantile range.
pub fn winsorize(
    panel: &PanelDataset,
    lower_q: f64,
    upper_q: f64,
) -> Result<(PanelDataset, Vec<EfficacyBounds>)> {
    require_complete(panel, "winsorize")?;
    if !(0.0..=1.0).contains(&lower_q) || !(0.0..=1.0).contains(&upper_q) || lower_q >= upper_q {
        return Err(Error::config(format!(
            "winsorize quantiles must satisfy 0 <= lower < upper <= 1, got ({lower_q}, {upper_q})"
        )));
    }
    let mut out = panel.clone();
    let mut bounds = Vec::with_capacity(panel.n_indicators());
    for k in 0..panel.n_indicators() {
        let mut vals = pooled_values(panel, k);
        vals.sort_by(f64::total_cmp);
        let b = EfficacyBounds::new(
            panel.schema()[k].id.clone(),
            quantile_sorted(&vals, lower_q),
            quantile_sorted(&vals, upper_q),
        )?;
        for r in 0..panel.n_regions() {
            for t in 0..panel.n_years() {
                let x = panel.get(r, t, k).unwrap();
                out.set(r, t, k, Some(x.clamp(b.lower, b.upper)));
            }
        }
        bounds.push(b);
    }
    Ok((out, bounds))
}

/// Power-type efficacy function: `(x² − x_l²) / (x_h² − x_l²) × 100`.
pub fn efficacy_score(x: f64, bounds: &EfficacyBounds) -> Result<f64> {
    if !(x >= bounds.lower && x <= bounds.upper) {
        return Err(Error::numerical(format!(
            "value {x} of {} outside efficacy bounds [{}, {}]",
            bounds.indicator, bounds.lower, bounds.upper
        )));
    }
    let (l2, h2) = (bounds.lower * bounds.lower, bounds.upper * bounds.upper);
    Ok((x * x - l2) / (h2 - l2) * 100.0)
}

/// Apply [`efficacy_score`] cell-wise; `bounds` follows the panel's schema order.
pub fn efficacy_panel(panel: &PanelDataset, bounds: &[EfficacyBounds]) -> Result<PanelDataset> {
    require_complete(panel, "efficacy_panel")?;
    if bounds.len() != panel.n_indicators() {
        return Err(Error::data("one efficacy bound per indicator required"));
    }
    let mut out = panel.clone();
    for (k, b) in bounds.iter().enumerate() {
        for r in 0..panel.n_regions() {
            for t in 0..panel.n_years() {
                let d = efficacy_score(panel.get(r, t, k).unwrap(), b)?;
                out.set(r, t, k, Some(d));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Entropy,
    CoefficientOfVariation,
    Blended,
    Equal,
    Explicit,
}

/// Non-negative per-indicator weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub indicators: Vec<String>,
    pub weights: Vec<f64>,
    pub method: WeightMethod,
}

impl WeightVector {
    pub fn new(indicators: Vec<String>, weights: Vec<f64>, method: WeightMethod) -> Result<Self> {
        if indicators.len() != weights.len() {
            return Err(Error::data("weight vector length does not match indicators"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::data("weights must be non-negative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::data(format!("weights sum to {s}, not 1")));
        }
        Ok(WeightVector {
            indicators,
            weights,
            method,
        })
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.indicators
            .iter()
            .position(|i| i == id)
            .map(|p| self.weights[p])
    }
}

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn check_columns(columns: &[Vec<f64>]) -> Result<usize> {
    let rows = columns.first().map_or(0, Vec::len);
    if columns.is_empty() || rows < 2 {
        return Err(Error::data("weighting needs at least two rows and one column"));
    }
    for (j, c) in columns.iter().enumerate() {
        if c.len() != rows {
            return Err(Error::data("ragged score matrix"));
        }
        if c.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::data(format!("column {j} has negative or non-finite entries")));
        }
        if c.iter().all(|v| *v == 0.0) {
            return Err(Error::data(format!("column {j} is all zero")));
        }
    }
    Ok(rows)
}

/// Entropy weights over a column-major non-negative matrix.
///
/// Columns carrying no information (entropy 1) get weight exactly zero; if
/// every column is uninformative the weights fall back to uniform.
pub fn entropy_weights(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let rows = check_columns(columns)?;
    let k = 1.0 / (rows as f64).ln();
    let divergence: Vec<f64> = columns
        .iter()
        .map(|c| {
            let total: f64 = c.iter().sum();
            let h: f64 = c
                .iter()
                .map(|&v| {
                    let p = v / total;
                    if p > 0.0 {
                        p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum();
            let d = 1.0 + k * h;
            // entropy never exceeds 1; rounding noise below this is treated as none
            if d < 1e-12 {
                0.0
            } else {
                d
            }
        })
        .collect();
    if divergence.iter().all(|&d| d == 0.0) {
        log::warn!("all indicator columns have zero divergence; using uniform weights");
        return Ok(vec![1.0 / columns.len() as f64; columns.len()]);
    }
    Ok(normalize(divergence))
}

/// Coefficient-of-variation weights (sample standard deviation over mean).
pub fn cv_weights(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_columns(columns)?;
    let cv: Vec<f64> = columns
        .iter()
        .map(|c| {
            let m = mean(c);
            let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64;
            var.sqrt() / m
        })
        .collect();
    if cv.iter().all(|&v| v == 0.0) {
        log::warn!("all indicator columns are constant; using uniform weights");
        return Ok(vec![1.0 / columns.len() as f64; columns.len()]);
    }
    Ok(normalize(cv))
}

/// Arithmetic mean of entropy and coefficient-of-variation weights, renormalized.
pub fn blended_weights(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let e = entropy_weights(columns)?;
    let c = cv_weights(columns)?;
    Ok(normalize(e.iter().zip(&c).map(|(a, b)| 0.5 * (a + b)).collect()))
}

/// Weights for a panel of efficacy scores, pooling every region-year as a row.
pub fn panel_weights(scores: &PanelDataset, method: WeightMethod) -> Result<WeightVector> {
    require_complete(scores, "panel_weights")?;
    let columns: Vec<Vec<f64>> = (0..scores.n_indicators())
        .map(|k| pooled_values(scores, k))
        .collect();
    let w = match method {
        WeightMethod::Entropy => entropy_weights(&columns)?,
        WeightMethod::CoefficientOfVariation => cv_weights(&columns)?,
        WeightMethod::Blended => blended_weights(&columns)?,
        WeightMethod::Equal => vec![1.0 / columns.len() as f64; columns.len()],
        WeightMethod::Explicit => {
            return Err(Error::config("explicit weights cannot be derived from data"))
        }
    };
    WeightVector::new(
        scores.schema().iter().map(|s| s.id.clone()).collect(),
        w,
        method,
    )
}

/// `Σ_j w_j d_j` with no renormalization; linear in `weights`.
pub fn weighted_sum(scores: &[f64], weights: &[f64]) -> f64 {
    scores.iter().zip(weights).map(|(d, w)| d * w).sum()
}

/// Per region-year indicator, dimension and composite scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    pub region_ids: Vec<String>,
    pub years: Vec<i32>,
    pub indicator_ids: Vec<String>,
    pub dimensions: Vec<String>,
    /// Dimension index of each indicator.
    pub indicator_dimension: Vec<usize>,
    /// `[region][year][indicator]`, flattened.
    pub indicator_scores: Vec<f64>,
    /// `[region][year][dimension]`, flattened.
    pub dimension_scores: Vec<f64>,
    /// `[region][year]`, flattened; on `[0, 100]`.
    pub composite: Vec<f64>,
    pub weights: WeightVector,
    pub bounds: Vec<EfficacyBounds>,
    pub quantile_method: &'static str,
}

impl ScoreTable {
    pub fn n_regions(&self) -> usize {
        self.region_ids.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn composite_at(&self, region: usize, year: usize) -> f64 {
        self.composite[region * self.years.len() + year]
    }

    /// Subsystem score on `[0, 1]`.
    pub fn subsystem_score(&self, region: usize, year: usize) -> f64 {
        self.composite_at(region, year) / 100.0
    }

    pub fn indicator_score(&self, region: usize, year: usize, indicator: usize) -> f64 {
        self.indicator_scores[(region * self.years.len() + year) * self.indicator_ids.len() + indicator]
    }

    pub fn dimension_score(&self, region: usize, year: usize, dimension: usize) -> f64 {
        self.dimension_scores[(region * self.years.len() + year) * self.dimensions.len() + dimension]
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    /// Composite scores of every region in one year.
    pub fn composite_year(&self, year: usize) -> Vec<f64> {
        (0..self.n_regions()).map(|r| self.composite_at(r, year)).collect()
    }

    pub fn dimension_year(&self, year: usize, dimension: usize) -> Vec<f64> {
        (0..self.n_regions())
            .map(|r| self.dimension_score(r, year, dimension))
            .collect()
    }
}

/// Aggregate efficacy scores with `weights`.
///
/// Dimension scores renormalize the weights within each dimension; a
/// dimension whose weights are all zero gets the plain mean of its indicators.
pub fn composite_scores(scores: &PanelDataset, weights: &WeightVector) -> Result<ScoreTable> {
    require_complete(scores, "composite_scores")?;
    let ids: Vec<String> = scores.schema().iter().map(|s| s.id.clone()).collect();
    let w: Vec<f64> = ids
        .iter()
        .map(|id| {
            weights
                .get(id)
                .ok_or_else(|| Error::data(format!("no weight for indicator {id}")))
        })
        .collect::<Result<_>>()?;
    let dimensions: Vec<String> = scores.dimensions().to_vec();
    let indicator_dimension: Vec<usize> = scores
        .schema()
        .iter()
        .map(|s| dimensions.iter().position(|d| *d == s.dimension).unwrap())
        .collect();

    let (nr, ny, nk, nd) = (scores.n_regions(), scores.n_years(), ids.len(), dimensions.len());
    let mut indicator_scores = Vec::with_capacity(nr * ny * nk);
    let mut dimension_scores = Vec::with_capacity(nr * ny * nd);
    let mut composite = Vec::with_capacity(nr * ny);
    for r in 0..nr {
        for t in 0..ny {
            let d: Vec<f64> = (0..nk).map(|k| scores.get(r, t, k).unwrap()).collect();
            composite.push(weighted_sum(&d, &w));
            for dim in 0..nd {
                let members: Vec<usize> = (0..nk).filter(|&k| indicator_dimension[k] == dim).collect();
                let wsum: f64 = members.iter().map(|&k| w[k]).sum();
                let v = if members.is_empty() {
                    0.0
                } else if wsum > 0.0 {
                    members.iter().map(|&k| w[k] * d[k]).sum::<f64>() / wsum
                } else {
                    members.iter().map(|&k| d[k]).sum::<f64>() / members.len() as f64
                };
                dimension_scores.push(v);
            }
            indicator_scores.extend(d);
        }
    }
    Ok(ScoreTable {
        region_ids: scores.regions().iter().map(|r| r.id.clone()).collect(),
        years: scores.years().to_vec(),
        indicator_ids: ids,
        dimensions,
        indicator_dimension,
        indicator_scores,
        dimension_scores,
        composite,
        weights: weights.clone(),
        bounds: Vec::new(),
        quantile_method: QUANTILE_METHOD,
    })
}

/// Options for [`prepare_scores`].
#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub lower_q: f64,
    pub upper_q: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            lower_q: 0.05,
            upper_q: 0.95,
        }
    }
}

/// Efficacy scores for every indicator of a raw panel, plus the audit trail.
#[derive(Debug, Clone)]
pub struct PreparedScores {
    /// Imputed and direction-corrected values before clamping.
    pub cleaned: PanelDataset,
    /// Efficacy scores on `[0, 100]`.
    pub scores: PanelDataset,
    pub bounds: Vec<EfficacyBounds>,
    pub shifts: Vec<(String, f64)>,
    pub imputed_cells: usize,
    pub warnings: Vec<String>,
}

/// Run impute → reverse → shift → winsorize → efficacy on the whole schema.
pub fn prepare_scores(raw: &PanelDataset, opts: ScoreOptions) -> Result<PreparedScores> {
    let imputed = impute_missing(raw)?;
    let reversed = reverse_negative(&imputed.panel)?;
    let (shifted, shifts) = shift_nonnegative(&reversed)?;
    let (clamped, bounds) = winsorize(&shifted, opts.lower_q, opts.upper_q)?;
    let scores = efficacy_panel(&clamped, &bounds)?;
    Ok(PreparedScores {
        cleaned: shifted,
        scores,
        bounds,
        shifts,
        imputed_cells: imputed.filled,
        warnings: imputed.warnings,
    })
}

/// Entropy-weighted composite scores of the indicators in `dimensions`.
pub fn subsystem_scores(
    prepared: &PreparedScores,
    dimensions: &[String],
    method: WeightMethod,
) -> Result<ScoreTable> {
    let ids: Vec<String> = prepared
        .scores
        .schema()
        .iter()
        .filter(|s| dimensions.contains(&s.dimension))
        .map(|s| s.id.clone())
        .collect();
    if ids.is_empty() {
        return Err(Error::config(format!(
            "no indicators belong to dimensions {dimensions:?}"
        )));
    }
    let sub = prepared.scores.select_indicators(&ids)?;
    let weights = panel_weights(&sub, method)?;
    let mut table = composite_scores(&sub, &weights)?;
    table.bounds = prepared
        .bounds
        .iter()
        .filter(|b| ids.contains(&b.indicator))
        .cloned()
        .collect();
    Ok(table)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{IndicatorSpec, Level, Region};
    use proptest::prelude::*;

    fn spec(id: &str, direction: Direction, dim: &str) -> IndicatorSpec {
        IndicatorSpec {
            id: id.into(),
            name: id.into(),
            direction,
            dimension: dim.into(),
            units: String::new(),
        }
    }

    fn regions(n: usize) -> Vec<Region> {
        (0..n)
            .map(|i| Region {
                id: format!("r{i}"),
                name: format!("r{i}"),
                level: Level::City,
                parent: None,
                group: "g".into(),
                centroid: None,
                neighbors: None,
            })
            .collect()
    }

    /// One region, one indicator, the given yearly series.
    fn series_panel(years: Vec<i32>, values: Vec<Option<f64>>) -> PanelDataset {
        PanelDataset::new(
            regions(1),
            years,
            vec!["d".into()],
            vec![spec("x", Direction::Positive, "d")],
            values,
        )
        .unwrap()
    }

    /// Regions × one year × one indicator.
    fn column_panel(direction: Direction, values: &[f64]) -> PanelDataset {
        PanelDataset::new(
            regions(values.len()),
            vec![2020],
            vec!["d".into()],
            vec![spec("x", direction, "d")],
            values.iter().map(|&v| Some(v)).collect(),
        )
        .unwrap()
    }

    fn column(p: &PanelDataset) -> Vec<f64> {
        p.pooled(0).into_iter().map(Option::unwrap).collect()
    }

    #[test]
    fn interior_gap_linear() {
        let p = series_panel(vec![2017, 2018, 2019], vec![Some(2.0), None, Some(4.0)]);
        let out = impute_missing(&p).unwrap();
        assert_eq!(column(&out.panel), vec![2.0, 3.0, 4.0]);
        assert_eq!(out.filled, 1);
    }

    #[test]
    fn leading_gap_uses_series_mean() {
        let p = series_panel(vec![2017, 2018, 2019], vec![None, Some(5.0), Some(5.0)]);
        assert_eq!(column(&impute_missing(&p).unwrap().panel), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn two_point_interpolation() {
        let p = series_panel(
            vec![2017, 2018, 2019, 2020],
            vec![Some(1.0), None, None, Some(7.0)],
        );
        assert_eq!(column(&impute_missing(&p).unwrap().panel), vec![1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn all_missing_series_takes_cross_region_mean() {
        let p = PanelDataset::new(
            regions(3),
            vec![2020, 2021],
            vec!["d".into()],
            vec![spec("x", Direction::Positive, "d")],
            vec![Some(1.0), Some(2.0), Some(3.0), Some(6.0), None, None],
        )
        .unwrap();
        let out = impute_missing(&p).unwrap();
        assert_eq!(out.panel.get(2, 0, 0), Some(2.0));
        assert_eq!(out.panel.get(2, 1, 0), Some(4.0));
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn fully_missing_indicator_is_error() {
        let p = series_panel(vec![2017, 2018], vec![None, None]);
        assert!(impute_missing(&p).is_err());
    }

    #[test]
    fn reversal_cases() {
        let pos = column_panel(Direction::Positive, &[1.0, 2.0, 3.0]);
        assert_eq!(column(&reverse_negative(&pos).unwrap()), vec![1.0, 2.0, 3.0]);
        let neg = column_panel(Direction::Negative, &[1.0, 2.0, 3.0]);
        let out = reverse_negative(&neg).unwrap();
        assert_eq!(column(&out), vec![3.0, 2.0, 1.0]);
        assert_eq!(out.schema()[0].direction, Direction::Positive);
        let neg = column_panel(Direction::Negative, &[10.0, 40.0, 25.0]);
        assert_eq!(column(&reverse_negative(&neg).unwrap()), vec![40.0, 10.0, 25.0]);
    }

    #[test]
    fn reversal_requires_imputation() {
        let p = series_panel(vec![2017, 2018], vec![Some(1.0), None]);
        assert!(reverse_negative(&p).is_err());
    }

    #[test]
    fn shift_moves_minimum_to_zero() {
        let p = column_panel(Direction::Positive, &[-2.0, 0.0, 3.0]);
        let (out, shifts) = shift_nonnegative(&p).unwrap();
        assert_eq!(column(&out), vec![0.0, 2.0, 5.0]);
        assert_eq!(shifts, vec![("x".to_string(), 2.0)]);
    }

    #[test]
    fn winsorize_twenty_one_values() {
        let vals: Vec<f64> = (0..=20).map(f64::from).collect();
        let p = column_panel(Direction::Positive, &vals);
        let (out, bounds) = winsorize(&p, 0.05, 0.95).unwrap();
        assert_eq!((bounds[0].lower, bounds[0].upper), (1.0, 19.0));
        let c = column(&out);
        assert_eq!(c[20], 19.0);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[10], 10.0);
    }

    #[test]
    fn winsorize_inside_bounds_is_noop() {
        let p = column_panel(Direction::Positive, &[1.0, 2.0]);
        let (out, _) = winsorize(&p, 0.0, 1.0).unwrap();
        assert_eq!(column(&out), vec![1.0, 2.0]);
    }

    #[test]
    fn winsorize_constant_indicator_errors() {
        let p = column_panel(Direction::Positive, &[4.0, 4.0, 4.0]);
        let err = winsorize(&p, 0.05, 0.95).unwrap_err();
        assert!(err.to_string().contains('x'));
    }

    #[test]
    fn efficacy_values() {
        let b = EfficacyBounds::new("x", 1.0, 3.0).unwrap();
        assert_eq!(efficacy_score(1.0, &b).unwrap(), 0.0);
        assert_eq!(efficacy_score(3.0, &b).unwrap(), 100.0);
        assert_eq!(efficacy_score(2.0, &b).unwrap(), 37.5);
        assert!(efficacy_score(3.5, &b).is_err());
    }

    #[test]
    fn entropy_identical_columns() {
        let w = entropy_weights(&[vec![1.0, 2.0, 5.0], vec![1.0, 2.0, 5.0]]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn entropy_constant_column_zero() {
        let w = entropy_weights(&[vec![7.0, 7.0, 7.0], vec![1.0, 2.0, 5.0]]).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
    }

    #[test]
    fn entropy_two_by_two_hand_calculation() {
        // rows (1,3), (2,2): column 1 p = (1/3, 2/3), column 2 p = (0.6, 0.4)
        let w = entropy_weights(&[vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        let ln2 = 2f64.ln();
        let e1 = -((1.0 / 3.0) * (1.0f64 / 3.0).ln() + (2.0 / 3.0) * (2.0f64 / 3.0).ln()) / ln2;
        let e2 = -(0.6 * 0.6f64.ln() + 0.4 * 0.4f64.ln()) / ln2;
        let w1 = (1.0 - e1) / ((1.0 - e1) + (1.0 - e2));
        assert!((w[0] - w1).abs() < 1e-14);
        assert!((w[0] - 0.737_711_342_8).abs() < 1e-9, "{}", w[0]);
    }

    #[test]
    fn entropy_uniform_fallback_and_errors() {
        let w = entropy_weights(&[vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(entropy_weights(&[vec![0.0, 0.0], vec![1.0, 2.0]]).is_err());
        assert!(entropy_weights(&[vec![1.0]]).is_err());
    }

    #[test]
    fn blended_is_mean_of_methods() {
        let cols = vec![vec![1.0, 2.0, 6.0], vec![3.0, 2.0, 2.5]];
        let e = entropy_weights(&cols).unwrap();
        let c = cv_weights(&cols).unwrap();
        let b = blended_weights(&cols).unwrap();
        for j in 0..2 {
            assert!((b[j] - 0.5 * (e[j] + c[j])).abs() < 1e-15);
        }
    }

    fn two_indicator_scores(a: f64, b: f64) -> PanelDataset {
        PanelDataset::new(
            regions(1),
            vec![2020],
            vec!["p".into(), "q".into()],
            vec![spec("a", Direction::Positive, "p"), spec("b", Direction::Positive, "q")],
            vec![Some(a), Some(b)],
        )
        .unwrap()
    }

    #[test]
    fn composite_examples() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let t = composite_scores(
            &two_indicator_scores(80.0, 20.0),
            &WeightVector::new(ids.clone(), vec![1.0, 0.0], WeightMethod::Explicit).unwrap(),
        )
        .unwrap();
        assert_eq!(t.composite_at(0, 0), 80.0);
        let t = composite_scores(
            &two_indicator_scores(55.0, 55.0),
            &WeightVector::new(ids.clone(), vec![0.5, 0.5], WeightMethod::Equal).unwrap(),
        )
        .unwrap();
        assert_eq!(t.composite_at(0, 0), 55.0);
        let t = composite_scores(
            &two_indicator_scores(40.0, 80.0),
            &WeightVector::new(ids, vec![0.25, 0.75], WeightMethod::Explicit).unwrap(),
        )
        .unwrap();
        assert_eq!(t.composite_at(0, 0), 70.0);
        assert_eq!(t.subsystem_score(0, 0), 0.7);
        assert_eq!(t.dimension_score(0, 0, 0), 40.0);
        assert_eq!(t.dimension_score(0, 0, 1), 80.0);
    }

    #[test]
    fn weight_vector_must_sum_to_one() {
        assert!(WeightVector::new(vec!["a".into()], vec![0.9], WeightMethod::Explicit).is_err());
    }

    proptest! {
        #[test]
        fn efficacy_monotone(lo in 0.0f64..100.0, span in 1e-3f64..100.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let bounds = EfficacyBounds::new("x", lo, lo + span).unwrap();
            let (x1, x2) = (lo + span * a.min(b), lo + span * a.max(b));
            let (d1, d2) = (efficacy_score(x1, &bounds).unwrap(), efficacy_score(x2, &bounds).unwrap());
            prop_assert!((0.0..=100.0).contains(&d1));
            if x2 > x1 { prop_assert!(d2 > d1); }
        }

        #[test]
        fn entropy_scale_invariant(
            cols in prop::collection::vec(prop::collection::vec(0.1f64..100.0, 6), 2..5),
            scale in 0.01f64..1000.0,
            which in 0usize..4,
        ) {
            let which = which % cols.len();
            let base = entropy_weights(&cols).unwrap();
            let mut scaled = cols.clone();
            scaled[which].iter_mut().for_each(|v| *v *= scale);
            let again = entropy_weights(&scaled).unwrap();
            for (a, b) in base.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn reversal_is_involution(vals in prop::collection::vec(-50.0f64..50.0, 2..12)) {
            let p = column_panel(Direction::Negative, &vals);
            let once = reverse_negative(&p).unwrap();
            let mut flipped = once.clone();
            flipped.schema_mut()[0].direction = Direction::Negative;
            let twice = reverse_negative(&flipped).unwrap();
            for (a, b) in column(&twice).iter().zip(&vals) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn weighted_sum_linear(
            d in prop::collection::vec(0.0f64..100.0, 4),
            w1 in prop::collection::vec(0.0f64..1.0, 4),
            w2 in prop::collection::vec(0.0f64..1.0, 4),
        ) {
            let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let lhs = weighted_sum(&d, &w1) + weighted_sum(&d, &w2);
            prop_assert!((lhs - weighted_sum(&d, &sum)).abs() < 1e-9);
        }
    }
}
