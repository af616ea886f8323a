//! Global and local Moran's I with seeded permutation inference.
//!
//! Every permutation draws from its own ChaCha stream keyed by the run seed
//! and the permutation (or region) index, so results do not depend on how
//! rayon schedules the work.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::WeightMatrix;

/// Stream offset separating conditional (local) draws from global ones.
const LOCAL_STREAM_OFFSET: u64 = 1 << 40;

/// Deviations from the mean and their sum of squares, after validating inputs.
fn deviations(y: &[f64], w: &WeightMatrix) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    if n < 3 {
        return Err(Error::data(format!("Moran's I needs at least 3 regions, got {n}")));
    }
    if w.len() != n {
        return Err(Error::data(format!(
            "weight matrix covers {} regions, attribute has {n}",
            w.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite attribute value"));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    if !(ss > 0.0) || ss <= 1e-24 * y.iter().map(|v| v * v).sum::<f64>() {
        return Err(Error::data("degenerate attribute: zero variance"));
    }
    if w.total() == 0.0 {
        return Err(Error::data("weight matrix sums to zero"));
    }
    Ok((z, ss))
}

fn cross_product(z: &[f64], w: &WeightMatrix) -> f64 {
    z.iter()
        .enumerate()
        .map(|(i, zi)| zi * w.row(i).iter().zip(z).map(|(wij, zj)| wij * zj).sum::<f64>())
        .sum()
}

/// Global Moran's I.
pub fn global_morans_i(y: &[f64], w: &WeightMatrix) -> Result<f64> {
    let (z, ss) = deviations(y, w)?;
    Ok(y.len() as f64 * cross_product(&z, w) / (w.total() * ss))
}

/// Local Moran's I for every region: `(y_i − ȳ)/S² · Σ_j W_ij (y_j − ȳ)`, `S² = Σ(y − ȳ)²/n`.
pub fn local_morans_i(y: &[f64], w: &WeightMatrix) -> Result<Vec<f64>> {
    let (z, ss) = deviations(y, w)?;
    let s2 = ss / y.len() as f64;
    let lag = w.lag(&z);
    Ok(z.iter().zip(&lag).map(|(zi, li)| zi / s2 * li).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalMoranResult {
    pub i: f64,
    /// `−1/(n − 1)`.
    pub expected: f64,
    /// Standardized against the permutation distribution.
    pub z_score: f64,
    /// Pseudo p-value from permutations.
    pub p_value: f64,
    /// Normal-approximation z under the normality assumption.
    pub z_normal: f64,
    /// Two-sided p-value for `z_normal`.
    pub p_normal: f64,
    pub permutation_mean: f64,
    pub permutation_sd: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_variance(w: &WeightMatrix) -> f64 {
    let n = w.len();
    let nf = n as f64;
    let s0 = w.total();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        let mut col = 0.0;
        for j in 0..n {
            let a = w.get(i, j) + w.get(j, i);
            s1 += a * a;
            row += w.get(i, j);
            col += w.get(j, i);
        }
        s2 += (row + col).powi(2);
    }
    s1 *= 0.5;
    let e = -1.0 / (nf - 1.0);
    (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - e * e
}

/// Global Moran's I with a permutation (randomization) null.
pub fn moran_permutation_test(
    y: &[f64],
    w: &WeightMatrix,
    n_permutations: usize,
    seed: u64,
) -> Result<GlobalMoranResult> {
    if n_permutations == 0 {
        return Err(Error::config("moran.permutations must be positive"));
    }
    let (z, ss) = deviations(y, w)?;
    let n = y.len() as f64;
    let scale = n / (w.total() * ss);
    let observed = scale * cross_product(&z, w);

    let permuted: Vec<f64> = (0..n_permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            let mut zp = z.clone();
            zp.shuffle(&mut rng);
            scale * cross_product(&zp, w)
        })
        .collect();

    let mean = permuted.iter().sum::<f64>() / n_permutations as f64;
    let sd = if n_permutations > 1 {
        (permuted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_permutations - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let extreme = if observed >= 0.0 {
        permuted.iter().filter(|&&v| v >= observed).count()
    } else {
        permuted.iter().filter(|&&v| v <= observed).count()
    };
    let (z_score, p_value) = if sd > 0.0 {
        (
            (observed - mean) / sd,
            (1 + extreme) as f64 / (1 + n_permutations) as f64,
        )
    } else {
        log::warn!("permutation distribution of Moran's I is degenerate");
        (0.0, 1.0)
    };

    let expected = -1.0 / (n - 1.0);
    let var_n = normal_variance(w);
    let z_normal = if var_n > 0.0 { (observed - expected) / var_n.sqrt() } else { 0.0 };
    let p_normal = statrs::function::erf::erfc(z_normal.abs() / std::f64::consts::SQRT_2);

    Ok(GlobalMoranResult {
        i: observed,
        expected,
        z_score,
        p_value,
        z_normal,
        p_normal,
        permutation_mean: mean,
        permutation_sd: sd,
        n_permutations,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quadrant {
    HH,
    HL,
    LH,
    LL,
}

impl Quadrant {
    /// Deviations of exactly zero count as low.
    pub fn from_signs(deviation: f64, lag: f64) -> Self {
        match (deviation > 0.0, lag > 0.0) {
            (true, true) => Quadrant::HH,
            (true, false) => Quadrant::HL,
            (false, true) => Quadrant::LH,
            (false, false) => Quadrant::LL,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Quadrant::HH => "HH",
            Quadrant::HL => "HL",
            Quadrant::LH => "LH",
            Quadrant::LL => "LL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalMoran {
    pub local_i: f64,
    pub quadrant: Quadrant,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LisaResult {
    pub region_ids: Vec<String>,
    pub regions: Vec<LocalMoran>,
    pub alpha: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

/// Local Moran's I, quadrants and conditional-permutation p-values.
///
/// For region `i` the value `y_i` stays in place while its neighbours are
/// drawn without replacement from the other `n − 1` values. p-values are
/// folded: `(1 + min(#≥, #<)) / (1 + permutations)`.
pub fn lisa_classify(
    y: &[f64],
    w: &WeightMatrix,
    n_permutations: usize,
    seed: u64,
    alpha: f64,
) -> Result<LisaResult> {
    if n_permutations == 0 {
        return Err(Error::config("lisa.permutations must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("lisa.alpha must lie in (0, 1), got {alpha}")));
    }
    let (z, ss) = deviations(y, w)?;
    let n = y.len();
    let s2 = ss / n as f64;
    let lag = w.lag(&z);

    let regions: Vec<LocalMoran> = (0..n)
        .into_par_iter()
        .map(|i| {
            let observed = z[i] / s2 * lag[i];
            let quadrant = Quadrant::from_signs(z[i], lag[i]);
            let neighbours: Vec<(usize, f64)> = w
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, &wij)| wij != 0.0)
                .map(|(j, &wij)| (j, wij))
                .collect();
            if neighbours.is_empty() {
                return LocalMoran {
                    local_i: 0.0,
                    quadrant,
                    p_value: 1.0,
                    significant: false,
                };
            }
            let weights: Vec<f64> = neighbours.iter().map(|nb| nb.1).collect();
            let mut pool: Vec<f64> = z
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect();
            let k = weights.len();
            let mut rng = stream_rng(seed, LOCAL_STREAM_OFFSET + i as u64);
            let mut larger = 0usize;
            for _ in 0..n_permutations {
                // partial Fisher-Yates: first k slots become the sample
                for m in 0..k {
                    let pick = rng.random_range(m..pool.len());
                    pool.swap(m, pick);
                }
                let lag_p: f64 = weights.iter().zip(&pool[..k]).map(|(a, b)| a * b).sum();
                if z[i] / s2 * lag_p >= observed {
                    larger += 1;
                }
            }
            let folded = larger.min(n_permutations - larger);
            let p_value = (folded + 1) as f64 / (n_permutations + 1) as f64;
            LocalMoran {
                local_i: observed,
                quadrant,
                p_value,
                significant: p_value <= alpha,
            }
        })
        .collect();

    Ok(LisaResult {
        region_ids: w.region_order().to_vec(),
        regions,
        alpha,
        n_permutations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::line_regions;
    use crate::panel::{build_weight_matrix, WeightKind};
    use proptest::prelude::*;
    use rand::Rng;

    fn line_w() -> WeightMatrix {
        build_weight_matrix(&line_regions(), WeightKind::BinaryContiguity, false).unwrap()
    }

    /// Brute-force double loop straight from the definition.
    fn moran_oracle(y: &[f64], w: &WeightMatrix) -> f64 {
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut s0 = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += w.get(i, j) * (y[i] - mean) * (y[j] - mean);
                s0 += w.get(i, j);
            }
        }
        let den: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        n as f64 * num / (s0 * den)
    }

    pub(crate) fn rook_grid(side: usize, standardize: bool) -> WeightMatrix {
        let n = side * side;
        let mut e = vec![0.0; n * n];
        for r in 0..side {
            for c in 0..side {
                let i = r * side + c;
                if r + 1 < side {
                    e[i * n + i + side] = 1.0;
                    e[(i + side) * n + i] = 1.0;
                }
                if c + 1 < side {
                    e[i * n + i + 1] = 1.0;
                    e[(i + 1) * n + i] = 1.0;
                }
            }
        }
        let ids = (0..n).map(|i| i.to_string()).collect();
        let w = WeightMatrix::from_dense(WeightKind::BinaryContiguity, e, ids, false).unwrap();
        if standardize {
            w.row_standardize()
        } else {
            w
        }
    }

    fn gradient(side: usize) -> Vec<f64> {
        (0..side * side).map(|i| ((i / side) + (i % side)) as f64).collect()
    }

    #[test]
    fn line_graph_value() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let i = global_morans_i(&y, &line_w()).unwrap();
        assert!((i - 1.0 / 3.0).abs() < 1e-15);
        assert!((moran_oracle(&y, &line_w()) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn checkerboard_negative() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let i = global_morans_i(&y, &line_w()).unwrap();
        assert!(i < 0.0);
        assert!((i - moran_oracle(&y, &line_w())).abs() < 1e-15);
    }

    #[test]
    fn constant_attribute_rejected() {
        let err = global_morans_i(&[2.0; 4], &line_w()).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn local_first_region() {
        let li = local_morans_i(&[1.0, 2.0, 3.0, 4.0], &line_w()).unwrap();
        assert!((li[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn empty_neighbourhood_is_zero() {
        let mut e = line_w().entries().to_vec();
        // detach region 4
        e[2 * 4 + 3] = 0.0;
        e[3 * 4 + 2] = 0.0;
        let w = WeightMatrix::from_dense(
            WeightKind::BinaryContiguity,
            e,
            line_w().region_order().to_vec(),
            false,
        )
        .unwrap();
        let li = local_morans_i(&[1.0, 2.0, 3.0, 5.0], &w).unwrap();
        assert_eq!(li[3], 0.0);
    }

    #[test]
    fn clustered_grid_is_significant() {
        let w = rook_grid(5, true);
        let res = moran_permutation_test(&gradient(5), &w, 999, 7).unwrap();
        assert!(res.i > 0.5);
        assert!(res.p_value <= 0.01, "{}", res.p_value);
        assert!(res.z_score > 3.0);
    }

    #[test]
    fn permutation_is_deterministic() {
        let w = rook_grid(5, true);
        let y: Vec<f64> = (0..25).map(|i| ((i * 37) % 11) as f64).collect();
        let a = moran_permutation_test(&y, &w, 499, 42).unwrap();
        let b = moran_permutation_test(&y, &w, 499, 42).unwrap();
        assert_eq!(a, b);
        let c = moran_permutation_test(&y, &w, 499, 43).unwrap();
        assert_ne!(a.permutation_mean, c.permutation_mean);
    }

    #[test]
    fn permutation_mean_near_expectation() {
        let w = rook_grid(5, true);
        let y: Vec<f64> = (0..25).map(|i| ((i * 37) % 11) as f64).collect();
        let res = moran_permutation_test(&y, &w, 2000, 5).unwrap();
        let se = res.permutation_sd / (2000f64).sqrt();
        assert!((res.permutation_mean - res.expected).abs() < 3.0 * se);
        assert!(res.p_value >= 1.0 / 2001.0 && res.p_value <= 1.0);
    }

    #[test]
    fn quadrant_signs() {
        assert_eq!(Quadrant::from_signs(1.0, 0.5), Quadrant::HH);
        assert_eq!(Quadrant::from_signs(-1.0, 0.5), Quadrant::LH);
        assert_eq!(Quadrant::from_signs(1.0, -0.5), Quadrant::HL);
        assert_eq!(Quadrant::from_signs(-1.0, -0.5), Quadrant::LL);
        assert_eq!(Quadrant::from_signs(0.0, 0.0), Quadrant::LL);
    }

    #[test]
    fn gradient_corners() {
        let w = rook_grid(5, true);
        let res = lisa_classify(&gradient(5), &w, 999, 11, 0.05).unwrap();
        let low = &res.regions[0];
        let high = &res.regions[24];
        assert_eq!(low.quadrant, Quadrant::LL);
        assert_eq!(high.quadrant, Quadrant::HH);
        assert!(low.p_value <= 0.05 && low.significant, "{}", low.p_value);
        assert!(high.p_value <= 0.05 && high.significant, "{}", high.p_value);
    }

    fn random_instance(n: usize, seed: u64) -> (Vec<f64>, WeightMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.3) {
                    e[i * n + j] = rng.random_range(0.0..2.0);
                }
            }
            if e[i * n..(i + 1) * n].iter().all(|&v| v == 0.0) {
                e[i * n + (i + 1) % n] = 1.0;
            }
        }
        let ids = (0..n).map(|i| i.to_string()).collect();
        (y, WeightMatrix::from_dense(WeightKind::InverseDistance, e, ids, false).unwrap())
    }

    proptest! {
        #[test]
        fn local_sum_identity(n in 3usize..20, seed in any::<u64>()) {
            let (y, w) = random_instance(n, seed);
            let i = global_morans_i(&y, &w).unwrap();
            prop_assert!((i - moran_oracle(&y, &w)).abs() < 1e-10);
            let li: f64 = local_morans_i(&y, &w).unwrap().iter().sum();
            prop_assert!((li - i * w.total()).abs() < 1e-10);
        }

        #[test]
        fn affine_invariance(n in 4usize..15, seed in any::<u64>(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let (y, w) = random_instance(n, seed);
            let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let yn: Vec<f64> = y.iter().map(|v| -a * v + b).collect();
            let i0 = global_morans_i(&y, &w).unwrap();
            prop_assert!((global_morans_i(&ya, &w).unwrap() - i0).abs() < 1e-10);
            prop_assert!((global_morans_i(&yn, &w).unwrap() - i0).abs() < 1e-10);
            let l0 = local_morans_i(&y, &w).unwrap();
            for (p, q) in l0.iter().zip(local_morans_i(&ya, &w).unwrap()) {
                prop_assert!((p - q).abs() < 1e-10);
            }
            let q0 = lisa_classify(&y, &w, 9, 1, 0.05).unwrap();
            let q1 = lisa_classify(&yn, &w, 9, 1, 0.05).unwrap();
            for (p, q) in q0.regions.iter().zip(&q1.regions) {
                let swapped = match p.quadrant {
                    Quadrant::HH => Quadrant::LL,
                    Quadrant::LL => Quadrant::HH,
                    Quadrant::HL => Quadrant::LH,
                    Quadrant::LH => Quadrant::HL,
                };
                prop_assert_eq!(q.quadrant, swapped);
            }
        }
    }
}
