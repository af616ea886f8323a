//! Seeded synthetic data: the bundled YRD-shaped fixture and simulated
//! convergence panels for Monte Carlo checks.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::convergence::ConvergencePanel;
use crate::error::{Error, Result};
use crate::panel::{
    haversine_km, Direction, IndicatorSpec, Level, PanelDataset, Region, Schema, WeightKind,
    WeightMatrix,
};
use crate::shortboard::CountyMatrix;

/// Symmetrized k-nearest-neighbour weights over random points in the unit
/// square, row-standardized. Region ids are `r0, r1, ...`.
pub fn knn_weights(n: usize, k: usize, seed: u64) -> WeightMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    let links = knn_links(&pts, k, dist);
    let mut entries = vec![0.0; n * n];
    for (i, js) in links.iter().enumerate() {
        for &j in js {
            entries[i * n + j] = 1.0;
        }
    }
    let ids = (0..n).map(|i| format!("r{i}")).collect();
    WeightMatrix::from_dense(WeightKind::BinaryContiguity, entries, ids, false)
        .expect("knn weights are valid")
        .row_standardize()
}

/// Symmetric neighbour lists: `j` is linked to `i` when either is among the
/// other's `k` nearest points.
fn knn_links(pts: &[(f64, f64)], k: usize, dist: impl Fn((f64, f64), (f64, f64)) -> f64) -> Vec<Vec<usize>> {
    let n = pts.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist(pts[i], pts[a]).total_cmp(&dist(pts[i], pts[b])).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    adj.iter()
        .map(|row| (0..n).filter(|&j| row[j]).collect())
        .collect()
}

/// Data-generating process for [`simulate_convergence`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub n_regions: usize,
    pub n_periods: usize,
    pub beta: f64,
    /// Coefficients of independent standard-normal controls.
    pub gamma: Vec<f64>,
    pub rho: f64,
    pub lambda: f64,
    pub sigma: f64,
}

impl SimulationSpec {
    /// β = −0.3, no controls, no spatial dependence, σ = 0.1.
    pub fn new(n_regions: usize, n_periods: usize) -> Self {
        SimulationSpec {
            n_regions,
            n_periods,
            beta: -0.3,
            gamma: Vec::new(),
            rho: 0.0,
            lambda: 0.0,
            sigma: 0.1,
        }
    }
}

fn solve_blocks(w: &WeightMatrix, theta: f64, v: &[f64]) -> Vec<f64> {
    if theta == 0.0 {
        return v.to_vec();
    }
    let n = w.len();
    let a = DMatrix::identity(n, n) - w.to_dmatrix() * theta;
    let lu = a.lu();
    v.chunks(n)
        .flat_map(|block| {
            let b = nalgebra::DVector::from_column_slice(block);
            lu.solve(&b).expect("I - θW is invertible inside the bounds").iter().copied().collect::<Vec<_>>()
        })
        .collect()
}

/// Draw `g = (I − ρW)⁻¹(β ln D + Xγ + μ + τ + u)` with `u = (I − λW)⁻¹ e`,
/// blockwise per period.
pub fn simulate_convergence(spec: &SimulationSpec, w: &WeightMatrix, seed: u64) -> ConvergencePanel {
    let (n, t) = (spec.n_regions, spec.n_periods);
    assert_eq!(w.len(), n, "weight matrix size");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mu: Vec<f64> = (0..n).map(|_| std.sample(&mut rng) * 0.5).collect();
    let tau: Vec<f64> = (0..t).map(|_| std.sample(&mut rng) * 0.2).collect();
    let log_level: Vec<f64> = (0..n * t)
        .map(|o| -1.0 + 0.5 * mu[o % n] + 0.3 * std.sample(&mut rng))
        .collect();
    let controls: Vec<Vec<f64>> = spec
        .gamma
        .iter()
        .map(|_| (0..n * t).map(|_| std.sample(&mut rng)).collect())
        .collect();
    let e: Vec<f64> = (0..n * t).map(|_| spec.sigma * std.sample(&mut rng)).collect();
    let u = solve_blocks(w, spec.lambda, &e);
    let rhs: Vec<f64> = (0..n * t)
        .map(|o| {
            let xg: f64 = spec.gamma.iter().zip(&controls).map(|(g, c)| g * c[o]).sum();
            spec.beta * log_level[o] + xg + mu[o % n] + tau[o / n] + u[o]
        })
        .collect();
    let growth = solve_blocks(w, spec.rho, &rhs);
    ConvergencePanel::from_parts(
        w.region_order().to_vec(),
        (0..t as i32).collect(),
        growth,
        log_level,
        (0..spec.gamma.len()).map(|k| format!("x{}", k + 1)).collect(),
        controls,
    )
    .expect("simulated panel is well formed")
}

const CITIES: [(&str, &str, &str, f64, f64); 41] = [
    ("shanghai", "Shanghai", "shanghai", 121.47, 31.23),
    ("nanjing", "Nanjing", "jiangsu", 118.80, 32.06),
    ("wuxi", "Wuxi", "jiangsu", 120.31, 31.49),
    ("xuzhou", "Xuzhou", "jiangsu", 117.28, 34.20),
    ("changzhou", "Changzhou", "jiangsu", 119.97, 31.81),
    ("suzhou_js", "Suzhou", "jiangsu", 120.59, 31.30),
    ("nantong", "Nantong", "jiangsu", 120.89, 31.98),
    ("lianyungang", "Lianyungang", "jiangsu", 119.22, 34.60),
    ("huaian", "Huai'an", "jiangsu", 119.02, 33.61),
    ("yancheng", "Yancheng", "jiangsu", 120.16, 33.35),
    ("yangzhou", "Yangzhou", "jiangsu", 119.41, 32.39),
    ("zhenjiang", "Zhenjiang", "jiangsu", 119.45, 32.20),
    ("taizhou_js", "Taizhou", "jiangsu", 119.92, 32.46),
    ("suqian", "Suqian", "jiangsu", 118.28, 33.96),
    ("hangzhou", "Hangzhou", "zhejiang", 120.16, 30.27),
    ("ningbo", "Ningbo", "zhejiang", 121.55, 29.87),
    ("wenzhou", "Wenzhou", "zhejiang", 120.70, 28.00),
    ("jiaxing", "Jiaxing", "zhejiang", 120.76, 30.75),
    ("huzhou", "Huzhou", "zhejiang", 120.09, 30.89),
    ("shaoxing", "Shaoxing", "zhejiang", 120.58, 30.00),
    ("jinhua", "Jinhua", "zhejiang", 119.65, 29.08),
    ("quzhou", "Quzhou", "zhejiang", 118.87, 28.94),
    ("zhoushan", "Zhoushan", "zhejiang", 122.21, 29.99),
    ("taizhou_zj", "Taizhou", "zhejiang", 121.42, 28.66),
    ("lishui", "Lishui", "zhejiang", 119.92, 28.45),
    ("hefei", "Hefei", "anhui", 117.23, 31.82),
    ("huaibei", "Huaibei", "anhui", 116.80, 33.96),
    ("bozhou", "Bozhou", "anhui", 115.78, 33.84),
    ("suzhou_ah", "Suzhou", "anhui", 116.96, 33.65),
    ("bengbu", "Bengbu", "anhui", 117.39, 32.92),
    ("fuyang", "Fuyang", "anhui", 115.81, 32.89),
    ("huainan", "Huainan", "anhui", 116.99, 32.63),
    ("chuzhou", "Chuzhou", "anhui", 118.32, 32.30),
    ("luan", "Lu'an", "anhui", 116.52, 31.73),
    ("maanshan", "Ma'anshan", "anhui", 118.51, 31.67),
    ("wuhu", "Wuhu", "anhui", 118.43, 31.35),
    ("xuancheng", "Xuancheng", "anhui", 118.76, 30.94),
    ("tongling", "Tongling", "anhui", 117.81, 30.94),
    ("chizhou", "Chizhou", "anhui", 117.49, 30.66),
    ("anqing", "Anqing", "anhui", 117.05, 30.53),
    ("huangshan", "Huangshan", "anhui", 118.34, 29.71),
];

// (id, name, dimension, negative, units)
const INDICATORS: [(&str, &str, &str, bool, &str); 36] = [
    ("edu_spend", "Per capita financial expenditure on education", "education", false, "yuan"),
    ("enrollment", "School enrollment ratio", "education", false, "%"),
    ("pupil_teacher", "Pupil-teacher ratio of compulsory education", "education", true, "ratio"),
    ("student_teacher_he", "Student-teacher ratio of higher and vocational education", "education", true, "ratio"),
    ("patents", "Patents granted per 10,000 people", "education", false, "count"),
    ("inventions", "Inventions per 10,000 people", "education", false, "count"),
    ("schools_compulsory", "Compulsory education schools per 10,000 people", "education", false, "count"),
    ("schools_he", "Higher and vocational schools per 10,000 people", "public_culture", false, "count"),
    ("library", "Per capita library collections", "public_culture", false, "volumes"),
    ("museums", "Museums per 10,000 people", "public_culture", false, "count"),
    ("hospitals", "Hospitals per 10,000 people", "medical", false, "count"),
    ("beds", "Beds per 10,000 people", "medical", false, "count"),
    ("doctors", "Doctors per 10,000 people", "medical", false, "count"),
    ("pension", "Urban pension insurance coverage", "social_security", false, "%"),
    ("medical_insurance", "Urban medical insurance coverage", "social_security", false, "%"),
    ("unemployment_insurance", "Urban unemployment insurance coverage", "social_security", false, "%"),
    ("employment_rate", "Labor market employment rate", "employment", false, "%"),
    ("wage", "Average wage of employees", "employment", false, "yuan"),
    ("greening", "Urban greening coverage", "environment", false, "%"),
    ("waste_treatment", "Non-hazardous treatment rate of domestic waste", "environment", false, "%"),
    ("sewage_treatment", "Centralized sewage treatment rate", "environment", false, "%"),
    ("pm25", "Annual average PM2.5 concentration", "environment", true, "ug/m3"),
    ("road_space", "Urban road space per 10,000 people", "infrastructure", false, "m2"),
    ("buses", "Buses in operation per 10,000 people", "infrastructure", false, "count"),
    ("transit_coverage", "Public transportation coverage rate", "infrastructure", false, "%"),
    ("gas", "Gas consumption per 10,000 people", "infrastructure", false, "m3"),
    ("water", "Water consumption per 10,000 people", "infrastructure", false, "t"),
    ("construction_land", "Land for construction per 10,000 people", "infrastructure", false, "km2"),
    ("gdp", "Gross domestic product", "economic_development", false, "1e8 yuan"),
    ("trade", "Level of import and export trade", "economic_development", false, "1e8 usd"),
    ("primary", "Level of development of the primary sector", "industrial_progress", false, "1e8 yuan"),
    ("secondary", "Level of development of the secondary industry", "industrial_progress", false, "1e8 yuan"),
    ("tertiary", "Level of development of the tertiary industry", "industrial_progress", false, "1e8 yuan"),
    ("resources", "Level of resource availability", "resource_environment", false, "index"),
    ("pollution", "Level of environmental pollution", "resource_environment", true, "index"),
    ("digital_economy", "Digital economy index", "controls", false, "index"),
];

/// Public-service dimensions of the bundled fixture.
pub const PUBLIC_SERVICE_DIMENSIONS: [&str; 7] = [
    "education",
    "public_culture",
    "medical",
    "social_security",
    "employment",
    "environment",
    "infrastructure",
];

/// Modernization dimensions of the bundled fixture.
pub const MODERNIZATION_DIMENSIONS: [&str; 3] =
    ["economic_development", "industrial_progress", "resource_environment"];

const COUNTY_CITIES: [(&str, [&str; 4]); 10] = [
    ("anqing", ["Susong", "Taihu", "Wangjiang", "Yuexi"]),
    ("huangshan", ["Shexian", "Xiuning", "Yixian", "Qimen"]),
    ("suzhou_ah", ["Dangshan", "Xiaoxian", "Lingbi", "Sixian"]),
    ("chuzhou", ["Dingyuan", "Fengyang", "Laian", "Quanjiao"]),
    ("xuancheng", ["Jixi", "Jingde", "Jingxian", "Langxi"]),
    ("suqian", ["Shuyang", "Siyang", "Sihong", "Suyu"]),
    ("luan", ["Jinzhai", "Huoshan", "Shucheng", "Huoqiu"]),
    ("fuyang", ["Yingshang", "Funan", "Linquan", "Taihe"]),
    ("lianyungang", ["Guannan", "Donghai", "Guanyun", "Ganyu"]),
    ("yancheng", ["Xiangshui", "Binhai", "Funing", "Sheyang"]),
];

const COUNTY_INDICATORS: [&str; 13] = [
    "digital_economy",
    "cooperative_participation",
    "agri_mechanization",
    "museums",
    "cultural_centers",
    "books",
    "greening",
    "garbage_disposal",
    "sewage_treatment",
    "hospitals",
    "beds",
    "doctors",
    "internet_access",
];

pub const FIXTURE_YEARS: [i32; 5] = [2017, 2018, 2019, 2020, 2021];

/// The bundled YRD-shaped fixture in memory.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub schema: Schema,
    pub panel: PanelDataset,
    pub counties: CountyMatrix,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Generate the 41-city, 5-year fixture with 36 indicators and a
/// 40-county shortboard matrix.
pub fn yrd_fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let pts: Vec<(f64, f64)> = CITIES.iter().map(|c| (c.3, c.4)).collect();
    let links = knn_links(&pts, 4, haversine_km);

    let regions: Vec<Region> = CITIES
        .iter()
        .enumerate()
        .map(|(i, c)| Region {
            id: c.0.to_string(),
            name: c.1.to_string(),
            level: Level::City,
            parent: None,
            group: c.2.to_string(),
            centroid: Some((c.3, c.4)),
            neighbors: Some(links[i].iter().map(|&j| CITIES[j].0.to_string()).collect()),
        })
        .collect();
    let indicators: Vec<IndicatorSpec> = INDICATORS
        .iter()
        .map(|&(id, name, dim, neg, units)| IndicatorSpec {
            id: id.into(),
            name: name.into(),
            direction: if neg { Direction::Negative } else { Direction::Positive },
            dimension: dim.into(),
            units: units.into(),
        })
        .collect();
    let mut dimensions: Vec<String> = Vec::new();
    for ind in &indicators {
        if !dimensions.contains(&ind.dimension) {
            dimensions.push(ind.dimension.clone());
        }
    }

    // Spatially smooth development level: decays with distance from Shanghai.
    let base: Vec<f64> = pts
        .iter()
        .map(|&p| 1.6 * (-haversine_km(p, pts[0]) / 350.0).exp() + 0.15 * std.sample(&mut rng))
        .collect();
    let year_shift = [0.0, 0.06, 0.11, -0.05, 0.16];
    let ny = FIXTURE_YEARS.len();
    let n = CITIES.len();
    // Mean-reverting idiosyncratic paths for the two subsystems.
    let mut service = vec![0.0; n * ny];
    let mut modern = vec![0.0; n * ny];
    for i in 0..n {
        let (mut a, mut b) = (0.25 * std.sample(&mut rng), 0.25 * std.sample(&mut rng));
        for t in 0..ny {
            service[i * ny + t] = base[i] + year_shift[t] + a;
            modern[i * ny + t] = 0.9 * base[i] + 1.2 * year_shift[t] + b;
            a = 0.8 * a + 0.12 * std.sample(&mut rng);
            b = 0.8 * b + 0.12 * std.sample(&mut rng);
        }
    }

    let loadings: Vec<(f64, f64)> = INDICATORS
        .iter()
        .map(|_| (rng.random_range(0.6..1.4), rng.random_range(0.5..3.0f64).exp()))
        .collect();
    // Region-by-indicator offsets persist across years.
    let offsets: Vec<f64> = (0..n * INDICATORS.len()).map(|_| 0.3 * std.sample(&mut rng)).collect();
    let mut values = Vec::with_capacity(n * ny * INDICATORS.len());
    for i in 0..n {
        for t in 0..ny {
            for (k, ind) in INDICATORS.iter().enumerate() {
                let latent = if PUBLIC_SERVICE_DIMENSIONS.contains(&ind.2) {
                    service[i * ny + t]
                } else {
                    modern[i * ny + t]
                };
                let (load, scale) = loadings[k];
                let sign = if ind.3 { -1.0 } else { 1.0 };
                let v = scale * (sign * load * latent + offsets[i * INDICATORS.len() + k] + 0.05 * std.sample(&mut rng)).exp();
                values.push(Some(round4(v)));
            }
        }
    }
    // A handful of missing cells, never in a region's first year.
    for _ in 0..6 {
        let i = rng.random_range(0..n);
        let t = rng.random_range(1..ny);
        let k = rng.random_range(0..INDICATORS.len());
        values[(i * ny + t) * INDICATORS.len() + k] = None;
    }

    let schema = Schema::new(dimensions.clone(), indicators.clone(), regions.clone())
        .expect("fixture schema is valid");
    let panel = PanelDataset::new(regions, FIXTURE_YEARS.to_vec(), dimensions, indicators, values)
        .expect("fixture panel is well formed");

    let mut counties = Vec::new();
    let mut groups = Vec::new();
    let mut rows = Vec::new();
    for (city, names) in COUNTY_CITIES {
        let city_effect = 0.1 * std.sample(&mut rng);
        for name in names {
            counties.push(name.to_string());
            groups.push(city.to_string());
            let county_effect = 0.08 * std.sample(&mut rng);
            rows.push(
                COUNTY_INDICATORS
                    .iter()
                    .map(|_| {
                        let v = 0.5 + city_effect + county_effect + 0.15 * std.sample(&mut rng);
                        round4(v.clamp(0.0, 1.0))
                    })
                    .collect(),
            );
        }
    }
    let counties = CountyMatrix::new(
        counties,
        Some(groups),
        COUNTY_INDICATORS.iter().map(|s| s.to_string()).collect(),
        rows,
    )
    .expect("fixture county matrix is well formed");

    Fixture {
        schema,
        panel,
        counties,
    }
}

/// Generation seed of the bundled fixture.
pub const FIXTURE_SEED: u64 = 3;

/// Run configuration shipped next to the fixture files.
pub const FIXTURE_CONFIG: &str = r#"panel = "panel.csv"
schema = "schema.json"
counties = "counties.csv"
seed = 42

[score]
public_service = ["education", "public_culture", "medical", "social_security", "employment", "environment", "infrastructure"]
modernization = ["economic_development", "industrial_progress", "resource_environment"]
weighting = "entropy"

[coupling]
alpha = 0.5

[moran]
weights = "binary_contiguity"
permutations = 999

[lisa]
alpha = 0.05

[shortboard]
cutoff = 0.5
weighting = "blended"
sweep = [0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1]

[converge]
weights = "inverse_distance"
controls = ["gdp", "trade", "secondary", "tertiary", "digital_economy"]
"#;

/// Write `schema.json`, `panel.csv`, `counties.csv` and `config.toml` into `dir`.
pub fn write_fixture(dir: impl AsRef<Path>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let f = yrd_fixture(seed);
    let files = [
        ("schema.json", f.schema.to_json() + "\n"),
        ("panel.csv", f.panel.to_csv()),
        ("counties.csv", f.counties.to_csv()),
        ("config.toml", FIXTURE_CONFIG.to_string()),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
