//! Panel data model, ingestion and spatial weight construction.
//!
//! A [`PanelDataset`] is a dense region × year × indicator tensor of optional
//! values. It is read from a long-format CSV (`region_id,year,indicator_id,value`)
//! together with a JSON schema declaring dimensions, indicators and regions.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for great-circle distances, in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    pub id: String,
    pub name: String,
    pub direction: Direction,
    pub dimension: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub units: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    City,
    County,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub name: String,
    pub level: Level,
    /// County → city link.
    pub parent: Option<String>,
    /// Grouping key (province or municipality).
    pub group: String,
    /// `(lon, lat)` in degrees.
    pub centroid: Option<(f64, f64)>,
    pub neighbors: Option<Vec<String>>,
}

/// On-disk region record, flattened the way the schema file spells it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionRecord {
    id: String,
    name: String,
    level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neighbors: Option<Vec<String>>,
}

impl From<&Region> for RegionRecord {
    fn from(r: &Region) -> Self {
        RegionRecord {
            id: r.id.clone(),
            name: r.name.clone(),
            level: r.level,
            parent: r.parent.clone(),
            group: r.group.clone(),
            lon: r.centroid.map(|c| c.0),
            lat: r.centroid.map(|c| c.1),
            neighbors: r.neighbors.clone(),
        }
    }
}

impl TryFrom<RegionRecord> for Region {
    type Error = Error;

    fn try_from(r: RegionRecord) -> Result<Self> {
        let centroid = match (r.lon, r.lat) {
            (Some(lon), Some(lat)) => Some((lon, lat)),
            (None, None) => None,
            _ => {
                return Err(Error::data(format!(
                    "region {} declares only one of lon/lat",
                    r.id
                )))
            }
        };
        Ok(Region {
            id: r.id,
            name: r.name,
            level: r.level,
            parent: r.parent,
            group: r.group,
            centroid,
            neighbors: r.neighbors,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    dimensions: Vec<String>,
    indicators: Vec<IndicatorSpec>,
    regions: Vec<RegionRecord>,
}

/// Validated schema: declared dimensions, indicator specs and regions.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub dimensions: Vec<String>,
    pub indicators: Vec<IndicatorSpec>,
    pub regions: Vec<Region>,
}

impl Schema {
    pub fn new(
        dimensions: Vec<String>,
        indicators: Vec<IndicatorSpec>,
        regions: Vec<Region>,
    ) -> Result<Self> {
        let schema = Schema {
            dimensions,
            indicators,
            regions,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)
            .map_err(|e| Error::data(format!("schema parse error: {e}")))?;
        let regions = file
            .regions
            .into_iter()
            .map(Region::try_from)
            .collect::<Result<Vec<_>>>()?;
        Schema::new(file.dimensions, file.indicators, regions)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = SchemaFile {
            dimensions: self.dimensions.clone(),
            indicators: self.indicators.clone(),
            regions: self.regions.iter().map(RegionRecord::from).collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    fn validate(&self) -> Result<()> {
        let dims: HashSet<&str> = self.dimensions.iter().map(String::as_str).collect();
        if dims.len() != self.dimensions.len() {
            return Err(Error::data("duplicate dimension in schema"));
        }
        let mut ids = HashSet::new();
        for ind in &self.indicators {
            if !ids.insert(ind.id.as_str()) {
                return Err(Error::data(format!("duplicate indicator id {}", ind.id)));
            }
            if !dims.contains(ind.dimension.as_str()) {
                return Err(Error::data(format!(
                    "indicator {} names undeclared dimension {}",
                    ind.id, ind.dimension
                )));
            }
        }

        let mut by_id: HashMap<&str, &Region> = HashMap::new();
        for r in &self.regions {
            if by_id.insert(r.id.as_str(), r).is_some() {
                return Err(Error::data(format!("duplicate region id {}", r.id)));
            }
        }
        for r in &self.regions {
            if r.level == Level::County {
                let parent = r.parent.as_deref().ok_or_else(|| {
                    Error::data(format!("county {} has no parent city", r.id))
                })?;
                match by_id.get(parent) {
                    Some(p) if p.level == Level::City => {}
                    _ => {
                        return Err(Error::data(format!(
                            "county {} names unknown city parent {parent}",
                            r.id
                        )))
                    }
                }
            }
            if let Some(neigh) = &r.neighbors {
                for n in neigh {
                    let other = by_id.get(n.as_str()).ok_or_else(|| {
                        Error::data(format!("region {} lists unknown neighbor {n}", r.id))
                    })?;
                    if n == &r.id {
                        return Err(Error::data(format!("region {} lists itself as neighbor", r.id)));
                    }
                    let symmetric = other
                        .neighbors
                        .as_ref()
                        .is_some_and(|ns| ns.iter().any(|x| x == &r.id));
                    if !symmetric {
                        return Err(Error::data(format!(
                            "neighbor relation not symmetric: {} lists {n} but not vice versa",
                            r.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn indicator(&self, id: &str) -> Option<&IndicatorSpec> {
        self.indicators.iter().find(|i| i.id == id)
    }
}

/// Region × year × indicator tensor of optional values.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    regions: Vec<Region>,
    years: Vec<i32>,
    dimensions: Vec<String>,
    schema: Vec<IndicatorSpec>,
    values: Vec<Option<f64>>,
}

impl PanelDataset {
    pub fn new(
        regions: Vec<Region>,
        years: Vec<i32>,
        dimensions: Vec<String>,
        schema: Vec<IndicatorSpec>,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("years must be strictly increasing"));
        }
        let expected = regions.len() * years.len() * schema.len();
        if values.len() != expected {
            return Err(Error::data(format!(
                "panel tensor has {} cells, expected {} ({} regions x {} years x {} indicators)",
                values.len(),
                expected,
                regions.len(),
                years.len(),
                schema.len()
            )));
        }
        Ok(PanelDataset {
            regions,
            years,
            dimensions,
            schema,
            values,
        })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn dimensions(&self) -> &[String] {
        &self.dimensions
    }

    pub fn schema(&self) -> &[IndicatorSpec] {
        &self.schema
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.schema.len()
    }

    fn idx(&self, region: usize, year: usize, indicator: usize) -> usize {
        (region * self.years.len() + year) * self.schema.len() + indicator
    }

    pub fn get(&self, region: usize, year: usize, indicator: usize) -> Option<f64> {
        self.values[self.idx(region, year, indicator)]
    }

    pub fn set(&mut self, region: usize, year: usize, indicator: usize, value: Option<f64>) {
        let i = self.idx(region, year, indicator);
        self.values[i] = value;
    }

    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    pub fn indicator_index(&self, id: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.id == id)
    }

    /// One region's time series for one indicator.
    pub fn series(&self, region: usize, indicator: usize) -> Vec<Option<f64>> {
        (0..self.years.len())
            .map(|y| self.get(region, y, indicator))
            .collect()
    }

    /// All region-year values of one indicator, region-major.
    pub fn pooled(&self, indicator: usize) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(self.regions.len() * self.years.len());
        for r in 0..self.regions.len() {
            for y in 0..self.years.len() {
                out.push(self.get(r, y, indicator));
            }
        }
        out
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub(crate) fn schema_mut(&mut self) -> &mut [IndicatorSpec] {
        &mut self.schema
    }

    /// Restrict to a subset of indicators, keeping the given order.
    pub fn select_indicators(&self, ids: &[String]) -> Result<PanelDataset> {
        let cols = ids
            .iter()
            .map(|id| {
                self.indicator_index(id)
                    .ok_or_else(|| Error::data(format!("unknown indicator {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let schema: Vec<IndicatorSpec> = cols.iter().map(|&c| self.schema[c].clone()).collect();
        let mut values = Vec::with_capacity(self.regions.len() * self.years.len() * cols.len());
        for r in 0..self.regions.len() {
            for y in 0..self.years.len() {
                for &c in &cols {
                    values.push(self.get(r, y, c));
                }
            }
        }
        let dims: BTreeSet<&str> = schema.iter().map(|s| s.dimension.as_str()).collect();
        let dimensions = self
            .dimensions
            .iter()
            .filter(|d| dims.contains(d.as_str()))
            .cloned()
            .collect();
        PanelDataset::new(self.regions.clone(), self.years.clone(), dimensions, schema, values)
    }

    /// Serialize as long-format CSV; missing cells are written empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region_id,year,indicator_id,value\n");
        for (r, region) in self.regions.iter().enumerate() {
            for (y, year) in self.years.iter().enumerate() {
                for (k, spec) in self.schema.iter().enumerate() {
                    let v = self.get(r, y, k).map(|v| format!("{v}")).unwrap_or_default();
                    out.push_str(&format!("{},{},{},{}\n", region.id, year, spec.id, v));
                }
            }
        }
        out
    }

    pub fn schema_document(&self) -> Schema {
        Schema {
            dimensions: self.dimensions.clone(),
            indicators: self.schema.clone(),
            regions: self.regions.clone(),
        }
    }
}

/// Result of [`load_panel`].
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: PanelDataset,
    /// Cells whose value could not be parsed as a number and became missing.
    pub unparseable_cells: usize,
}

/// Read a long-format panel CSV against a schema file.
pub fn load_panel(path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<LoadedPanel> {
    let schema = Schema::read(schema_path)?;
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_panel_csv(&text, &schema)
}

/// Parse panel CSV text against an already loaded schema.
pub fn parse_panel_csv(text: &str, schema: &Schema) -> Result<LoadedPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("panel csv header: {e}")))?
        .clone();
    let expected = ["region_id", "year", "indicator_id", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::data(format!(
            "panel csv header must be `{}`",
            expected.join(",")
        )));
    }

    let region_ix: HashMap<&str, usize> = schema
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let ind_ix: HashMap<&str, usize> = schema
        .indicators
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();

    let mut rows: Vec<(usize, i32, usize, Option<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    let mut unparseable = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("panel csv row {}: {e}", line + 2)))?;
        if record.len() != 4 {
            return Err(Error::data(format!("panel csv row {} has {} fields", line + 2, record.len())));
        }
        let region = *region_ix
            .get(&record[0])
            .ok_or_else(|| Error::data(format!("unknown region id {}", &record[0])))?;
        let year: i32 = record[1]
            .parse()
            .map_err(|_| Error::data(format!("bad year {:?} on row {}", &record[1], line + 2)))?;
        let ind = *ind_ix
            .get(&record[2])
            .ok_or_else(|| Error::data(format!("unknown indicator id {}", &record[2])))?;
        if !seen.insert((region, year, ind)) {
            return Err(Error::data(format!(
                "duplicate row for ({}, {}, {})",
                &record[0], year, &record[2]
            )));
        }
        let raw = &record[3];
        let value = if raw.is_empty() {
            None
        } else {
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    unparseable += 1;
                    None
                }
            }
        };
        rows.push((region, year, ind, value));
    }
    if unparseable > 0 {
        log::warn!("{unparseable} unparseable panel cells treated as missing");
    }

    let years: Vec<i32> = rows
        .iter()
        .map(|r| r.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let year_ix: HashMap<i32, usize> = years.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let n_ind = schema.indicators.len();
    let mut values = vec![None; schema.regions.len() * years.len() * n_ind];
    for (r, y, k, v) in rows {
        values[(r * years.len() + year_ix[&y]) * n_ind + k] = v;
    }
    let panel = PanelDataset::new(
        schema.regions.clone(),
        years,
        schema.dimensions.clone(),
        schema.indicators.clone(),
        values,
    )?;
    Ok(LoadedPanel {
        panel,
        unparseable_cells: unparseable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    BinaryContiguity,
    InverseDistance,
}

/// Dense n × n spatial weight matrix tied to an explicit region order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    kind: WeightKind,
    n: usize,
    entries: Vec<f64>,
    row_standardized: bool,
    region_order: Vec<String>,
}

impl WeightMatrix {
    /// Wrap raw row-major entries, checking the structural invariants.
    pub fn from_dense(
        kind: WeightKind,
        entries: Vec<f64>,
        region_order: Vec<String>,
        row_standardized: bool,
    ) -> Result<Self> {
        let n = region_order.len();
        if entries.len() != n * n {
            return Err(Error::data(format!(
                "weight matrix has {} entries for {n} regions",
                entries.len()
            )));
        }
        let w = WeightMatrix {
            kind,
            n,
            entries,
            row_standardized,
            region_order,
        };
        w.check()?;
        Ok(w)
    }

    fn check(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::data(format!("weight matrix diagonal nonzero at {i}")));
            }
            for j in 0..self.n {
                let v = self.get(i, j);
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::data(format!("invalid weight {v} at ({i}, {j})")));
                }
            }
        }
        if self.row_standardized {
            for i in 0..self.n {
                let s: f64 = self.row(i).iter().sum();
                if s != 0.0 && (s - 1.0).abs() > 1e-12 {
                    return Err(Error::data(format!("row {i} sums to {s}, not 1")));
                }
            }
        } else if self.kind == WeightKind::BinaryContiguity {
            if self.entries.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::data("contiguity weights must be 0/1"));
            }
            if !self.is_symmetric(0.0) {
                return Err(Error::data("contiguity weights must be symmetric"));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row_standardized(&self) -> bool {
        self.row_standardized
    }

    pub fn region_order(&self) -> &[String] {
        &self.region_order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// ΣΣ W_ij.
    pub fn total(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// `W · v`.
    pub fn lag(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "lag vector length mismatch");
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Copy with every nonzero row scaled to sum to one.
    pub fn row_standardize(&self) -> WeightMatrix {
        let mut entries = self.entries.clone();
        for i in 0..self.n {
            let row = &mut entries[i * self.n..(i + 1) * self.n];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        WeightMatrix {
            kind: self.kind,
            n: self.n,
            entries,
            row_standardized: true,
            region_order: self.region_order.clone(),
        }
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// Eigenvalues of `W`.
    ///
    /// A row-standardized symmetric matrix `D⁻¹A` is similar to the symmetric
    /// `D^{-1/2} A D^{-1/2}`, so those (the usual case) go through the
    /// symmetric solver. Anything else uses a capped real Schur decomposition.
    pub fn eigenvalues(&self) -> Result<Vec<nalgebra::Complex<f64>>> {
        let n = self.n;
        if let Some(d) = self.symmetrizing_scale() {
            let s = nalgebra::DMatrix::from_fn(n, n, |i, j| self.get(i, j) * (d[i] / d[j]).sqrt());
            let s = (&s + s.transpose()) * 0.5;
            return Ok(s
                .symmetric_eigenvalues()
                .iter()
                .map(|&v| nalgebra::Complex::new(v, 0.0))
                .collect());
        }
        let schur = nalgebra::linalg::Schur::try_new(self.to_dmatrix(), 1e-12, 10_000 * n.max(1))
            .ok_or_else(|| Error::numerical("eigenvalues of W did not converge"))?;
        Ok(schur.complex_eigenvalues().iter().copied().collect())
    }

    /// Positive `d` with `d_i W_ij = d_j W_ji` for all pairs, if one exists.
    fn symmetrizing_scale(&self) -> Option<Vec<f64>> {
        let n = self.n;
        let mut d = vec![0.0; n];
        for start in 0..n {
            if d[start] > 0.0 {
                continue;
            }
            d[start] = 1.0;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    let (wij, wji) = (self.get(i, j), self.get(j, i));
                    if (wij > 0.0) != (wji > 0.0) {
                        return None;
                    }
                    if wij > 0.0 && d[j] == 0.0 {
                        d[j] = d[i] * wij / wji;
                        stack.push(j);
                    }
                }
            }
        }
        let ok = (0..n).all(|i| {
            (0..n).all(|j| {
                let (a, b) = (d[i] * self.get(i, j), d[j] * self.get(j, i));
                (a - b).abs() <= 1e-10 * a.abs().max(b.abs())
            })
        });
        ok.then_some(d)
    }

    /// Restrict to `ids` (in that order); rows are re-standardized if this
    /// matrix was.
    pub fn select(&self, ids: &[String]) -> Result<WeightMatrix> {
        let idx = ids
            .iter()
            .map(|id| {
                self.region_order
                    .iter()
                    .position(|r| r == id)
                    .ok_or_else(|| Error::data(format!("region {id} not in weight matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        let entries: Vec<f64> = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        let w = WeightMatrix {
            kind: self.kind,
            n: ids.len(),
            entries,
            row_standardized: false,
            region_order: ids.to_vec(),
        };
        Ok(if self.row_standardized { w.row_standardize() } else { w })
    }

    /// Fail unless this matrix is laid out over exactly these region ids.
    pub fn ensure_order(&self, ids: &[String]) -> Result<()> {
        if self.region_order != ids {
            return Err(Error::data("weight matrix region order does not match the data"));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres between two `(lon, lat)` points.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn build_weight_matrix(
    regions: &[Region],
    kind: WeightKind,
    row_standardize: bool,
) -> Result<WeightMatrix> {
    let n = regions.len();
    let order: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    let mut entries = vec![0.0; n * n];
    match kind {
        WeightKind::BinaryContiguity => {
            let index: HashMap<&str, usize> = order
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            let islands: Vec<&str> = regions
                .iter()
                .filter(|r| r.neighbors.as_ref().is_none_or(|n| n.is_empty()))
                .map(|r| r.id.as_str())
                .collect();
            if !islands.is_empty() {
                return Err(Error::data(format!(
                    "regions without neighbors under contiguity: {}",
                    islands.join(", ")
                )));
            }
            for (i, r) in regions.iter().enumerate() {
                for nb in r.neighbors.as_deref().unwrap_or_default() {
                    let j = *index.get(nb.as_str()).ok_or_else(|| {
                        Error::data(format!("region {} lists unknown neighbor {nb}", r.id))
                    })?;
                    if j == i {
                        return Err(Error::data(format!("region {} lists itself as neighbor", r.id)));
                    }
                    entries[i * n + j] = 1.0;
                }
            }
        }
        WeightKind::InverseDistance => {
            let centroids = regions
                .iter()
                .map(|r| {
                    r.centroid
                        .ok_or_else(|| Error::data(format!("region {} has no centroid", r.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let d = haversine_km(centroids[i], centroids[j]);
                    if d <= 0.0 {
                        return Err(Error::data(format!(
                            "coincident centroids for {} and {}",
                            order[i], order[j]
                        )));
                    }
                    entries[i * n + j] = 1.0 / d;
                }
            }
        }
    }
    let w = WeightMatrix::from_dense(kind, entries, order, false)?;
    Ok(if row_standardize { w.row_standardize() } else { w })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn region(id: &str, neighbors: &[&str]) -> Region {
        Region {
            id: id.into(),
            name: id.into(),
            level: Level::City,
            parent: None,
            group: "g".into(),
            centroid: None,
            neighbors: Some(neighbors.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub(crate) fn line_regions() -> Vec<Region> {
        vec![
            region("1", &["2"]),
            region("2", &["1", "3"]),
            region("3", &["2", "4"]),
            region("4", &["3"]),
        ]
    }

    const SCHEMA: &str = r#"{
      "dimensions": ["edu", "env"],
      "indicators": [
        {"id": "x1", "name": "spend", "direction": "positive", "dimension": "edu"},
        {"id": "x2", "name": "pm25", "direction": "negative", "dimension": "env", "units": "ug/m3"}
      ],
      "regions": [
        {"id": "a", "name": "A", "level": "city", "group": "p1", "lon": 120.0, "lat": 30.0, "neighbors": ["b"]},
        {"id": "b", "name": "B", "level": "city", "group": "p1", "lon": 121.0, "lat": 30.0, "neighbors": ["a", "c"]},
        {"id": "c", "name": "C", "level": "city", "group": "p2", "lon": 122.0, "lat": 30.0, "neighbors": ["b"]}
      ]
    }"#;

    fn schema() -> Schema {
        Schema::from_json(SCHEMA).unwrap()
    }

    fn csv_3x2(empty: bool) -> String {
        let mut s = String::from("region_id,year,indicator_id,value\n");
        for r in ["a", "b", "c"] {
            for y in [2020, 2021] {
                for k in ["x1", "x2"] {
                    let v = if empty && r == "b" && y == 2021 && k == "x2" {
                        String::new()
                    } else {
                        format!("{}.5", y - 2000)
                    };
                    s.push_str(&format!("{r},{y},{k},{v}\n"));
                }
            }
        }
        s
    }

    #[test]
    fn loads_well_formed_panel() {
        let loaded = parse_panel_csv(&csv_3x2(false), &schema()).unwrap();
        assert_eq!(loaded.panel.n_regions(), 3);
        assert_eq!(loaded.panel.years(), &[2020, 2021]);
        assert_eq!(loaded.panel.missing_count(), 0);
        assert_eq!(loaded.panel.get(0, 1, 0), Some(21.5));
    }

    #[test]
    fn empty_cell_is_missing() {
        let loaded = parse_panel_csv(&csv_3x2(true), &schema()).unwrap();
        assert_eq!(loaded.panel.missing_count(), 1);
        assert_eq!(loaded.panel.get(1, 1, 1), None);
        assert_eq!(loaded.unparseable_cells, 0);
    }

    #[test]
    fn unparseable_cell_counts_warning() {
        let text = csv_3x2(false).replace("a,2020,x1,20.5", "a,2020,x1,n/a");
        let loaded = parse_panel_csv(&text, &schema()).unwrap();
        assert_eq!(loaded.unparseable_cells, 1);
        assert_eq!(loaded.panel.get(0, 0, 0), None);
    }

    #[test]
    fn undeclared_indicator_is_named() {
        let text = format!("{}a,2020,x9,1\n", csv_3x2(false));
        let err = parse_panel_csv(&text, &schema()).unwrap_err();
        assert!(err.to_string().contains("x9"), "{err}");
    }

    #[test]
    fn duplicate_row_rejected() {
        let text = format!("{}a,2020,x1,1\n", csv_3x2(false));
        let err = parse_panel_csv(&text, &schema()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn round_trip_is_identical() {
        let loaded = parse_panel_csv(&csv_3x2(true), &schema()).unwrap();
        let again_schema = Schema::from_json(&loaded.panel.schema_document().to_json()).unwrap();
        let again = parse_panel_csv(&loaded.panel.to_csv(), &again_schema).unwrap();
        assert_eq!(again.panel, loaded.panel);
    }

    #[test]
    fn asymmetric_neighbors_rejected() {
        let bad = SCHEMA.replace(r#""neighbors": ["a", "c"]"#, r#""neighbors": ["a"]"#);
        assert!(Schema::from_json(&bad).is_err());
    }

    #[test]
    fn county_needs_city_parent() {
        let bad = SCHEMA.replace(
            r#"{"id": "c", "name": "C", "level": "city", "group": "p2","#,
            r#"{"id": "c", "name": "C", "level": "county", "parent": "zz", "group": "p2","#,
        );
        let err = Schema::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("parent"), "{err}");
        let ok = SCHEMA.replace(
            r#"{"id": "c", "name": "C", "level": "city", "group": "p2","#,
            r#"{"id": "c", "name": "C", "level": "county", "parent": "a", "group": "p2","#,
        );
        assert!(Schema::from_json(&ok).is_ok());
    }

    #[test]
    fn line_contiguity() {
        let w = build_weight_matrix(&line_regions(), WeightKind::BinaryContiguity, false).unwrap();
        assert_eq!(w.total(), 6.0);
        assert!(w.is_symmetric(0.0));
        let ws = build_weight_matrix(&line_regions(), WeightKind::BinaryContiguity, true).unwrap();
        assert_eq!(ws.row(1), &[0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn island_is_listed() {
        let mut regions = line_regions();
        regions.push(region("5", &[]));
        let err = build_weight_matrix(&regions, WeightKind::BinaryContiguity, false).unwrap_err();
        assert!(err.to_string().contains('5'));
    }

    #[test]
    fn inverse_distance_one_degree() {
        let mut a = region("a", &[]);
        let mut b = region("b", &[]);
        a.centroid = Some((0.0, 0.0));
        b.centroid = Some((0.0, 1.0));
        let w = build_weight_matrix(&[a, b], WeightKind::InverseDistance, false).unwrap();
        // one degree of arc on a 6371 km sphere
        let d = 6371.0 * std::f64::consts::PI / 180.0;
        assert!((w.get(0, 1) - 1.0 / d).abs() < 1e-12);
        assert_eq!(w.get(0, 1), w.get(1, 0));
        assert!((1.0 / w.get(0, 1) - 111.19).abs() < 0.01);
    }

    #[test]
    fn coincident_centroids_rejected() {
        let mut a = region("a", &[]);
        let mut b = region("b", &[]);
        a.centroid = Some((10.0, 10.0));
        b.centroid = Some((10.0, 10.0));
        assert!(build_weight_matrix(&[a, b], WeightKind::InverseDistance, false).is_err());
    }

    #[test]
    fn from_dense_rejects_diagonal() {
        let err = WeightMatrix::from_dense(
            WeightKind::InverseDistance,
            vec![1.0, 0.0, 0.0, 0.0],
            vec!["a".into(), "b".into()],
            false,
        );
        assert!(err.is_err());
    }

    #[test]
    fn eigenvalues_of_line_graph() {
        let w = build_weight_matrix(&line_regions(), WeightKind::BinaryContiguity, false).unwrap();
        let mut ev: Vec<f64> = w.eigenvalues().unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(f64::total_cmp);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        for (a, b) in ev.iter().zip([-golden, 1.0 - golden, golden - 1.0, golden]) {
            assert!((a - b).abs() < 1e-12);
        }
        let rs = w.row_standardize();
        let mut ev: Vec<f64> = rs.eigenvalues().unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[3] - 1.0).abs() < 1e-12 && (ev[0] + 1.0).abs() < 1e-12);
        let schur: f64 = rs.to_dmatrix().complex_eigenvalues().iter().map(|z| z.re).sum();
        assert!((ev.iter().sum::<f64>() - schur).abs() < 1e-12);
    }
}
