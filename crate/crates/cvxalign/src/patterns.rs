//! ReLU activation patterns of a fixed data matrix.
//!
//! A pattern is the 0/1 mask `1(Xv >= 0)` induced by some direction `v`.
//! Patterns index the pieces of the convex reformulation: the directions
//! consistent with a mask form the polyhedral cone `(2D - I)Xv >= 0` where
//! `D = diag(mask)`. This module samples patterns with Gaussian witnesses,
//! enumerates all of them exactly at small scale, and tests cone membership.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack for cone membership checks.
pub const EPSILON_CONE: f64 = 1e-9;

/// Dense row-major data matrix, one feature vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "data matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("data matrix"));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged rows in data matrix".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(values)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.row(j)
    }

    /// X v for a direction v of length d.
    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.values.dot(&v)
    }
}

/// One activation mask together with a direction that realizes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    mask: Vec<bool>,
    witness: Array1<f64>,
}

impl ActivationPattern {
    /// Build the pattern realized by `witness` on `x` (inclusive tie rule).
    pub fn from_witness(x: &DataMatrix, witness: Array1<f64>) -> Result<Self> {
        if witness.len() != x.d() {
            return Err(Error::shape(x.d(), witness.len(), "pattern witness"));
        }
        let mask = x.apply(witness.view()).iter().map(|&t| t >= 0.0).collect();
        Ok(Self { mask, witness })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn witness(&self) -> &Array1<f64> {
        &self.witness
    }

    pub fn mask_bitstring(&self) -> String {
        self.mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Signed diagonal action `(2D - I) t` for a precomputed `t = Xv`.
    pub(crate) fn signed(&self, t: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(
            self.mask
                .iter()
                .zip(t.iter())
                .map(|(&m, &tj)| if m { tj } else { -tj }),
        )
    }
}

/// Provenance of a pattern set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternSource {
    Sampled { seed: u64, draws: usize },
    Enumerated,
}

/// Ordered collection of distinct activation patterns over one data matrix.
#[derive(Debug, Clone)]
pub struct PatternSet {
    n: usize,
    d: usize,
    patterns: Vec<ActivationPattern>,
    source: PatternSource,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn patterns(&self) -> &[ActivationPattern] {
        &self.patterns
    }

    pub fn get(&self, i: usize) -> &ActivationPattern {
        &self.patterns[i]
    }

    pub fn source(&self) -> &PatternSource {
        &self.source
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ActivationPattern> {
        self.patterns.iter()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PatternSetDoc {
            n: self.n,
            d: self.d,
            source: self.source.clone(),
            masks: self.patterns.iter().map(|p| p.mask_bitstring()).collect(),
            witnesses: self
                .patterns
                .iter()
                .map(|p| p.witness().to_vec())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PatternSetDoc = serde_json::from_str(text)?;
        let mut patterns = Vec::with_capacity(doc.masks.len());
        if doc.masks.len() != doc.witnesses.len() {
            return Err(Error::InvalidInput(
                "pattern document has mismatched masks and witnesses".into(),
            ));
        }
        for (bits, w) in doc.masks.iter().zip(doc.witnesses) {
            if bits.len() != doc.n || w.len() != doc.d {
                return Err(Error::InvalidInput("pattern entry has wrong length".into()));
            }
            let mask = bits
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(Error::InvalidInput(format!("bad mask bit {other:?}"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            patterns.push(ActivationPattern {
                mask,
                witness: Array1::from(w),
            });
        }
        Ok(Self {
            n: doc.n,
            d: doc.d,
            patterns,
            source: doc.source,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PatternSetDoc {
    n: usize,
    d: usize,
    source: PatternSource,
    masks: Vec<String>,
    witnesses: Vec<Vec<f64>>,
}

/// Draw `draws` standard-normal directions and keep the distinct masks they
/// realize, in first-draw order. Fewer than `draws` distinct masks is normal.
pub fn sample_patterns(x: &DataMatrix, draws: usize, seed: u64) -> Result<PatternSet> {
    if draws == 0 {
        return Err(Error::InvalidInput("pattern draw count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut patterns = Vec::new();
    for _ in 0..draws {
        let witness = Array1::from_iter((0..x.d()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let pattern = ActivationPattern::from_witness(x, witness)?;
        if seen.insert(pattern.mask.clone()) {
            patterns.push(pattern);
        }
    }
    Ok(PatternSet {
        n: x.n(),
        d: x.d(),
        patterns,
        source: PatternSource::Sampled { seed, draws },
    })
}

/// Enumerate every activation pattern realizable by a nonzero direction.
///
/// Guarded to n <= 14, d <= 3. Candidate witnesses come from the rays of the
/// hyperplane arrangement (normals of (d-1)-subsets of rows and their
/// negations) nudged into each adjacent region; masks are then deduplicated,
/// keeping only witnesses strictly off every hyperplane. For rows in general
/// position this visits every region exactly once.
pub fn enumerate_patterns(x: &DataMatrix) -> Result<PatternSet> {
    let (n, d) = (x.n(), x.d());
    if n > 14 || d > 3 {
        return Err(Error::DimensionGuard(format!(
            "exhaustive enumeration supports n <= 14, d <= 3, got n={n}, d={d}"
        )));
    }
    let row_norms: Vec<f64> = (0..n).map(|j| norm(x.row(j))).collect();
    if row_norms.iter().any(|&r| r == 0.0) {
        return Err(Error::InvalidInput(
            "data matrix has an all-zero row; patterns are degenerate".into(),
        ));
    }

    let candidates = match d {
        1 => vec![Array1::from(vec![1.0]), Array1::from(vec![-1.0])],
        2 => sector_candidates(x),
        3 => ray_candidates_3d(x, &row_norms),
        _ => unreachable!("guard covers d <= 3"),
    };

    let max_row_norm = row_norms.iter().cloned().fold(0.0_f64, f64::max);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut patterns = Vec::new();
    for cand in candidates {
        let len = norm(cand.view());
        if len < 1e-12 {
            continue;
        }
        let witness = cand / len;
        let action = x.apply(witness.view());
        // Keep only witnesses strictly inside a region; boundary masks
        // duplicate an adjacent region's mask for rows in general position.
        if action.iter().any(|&t| t.abs() <= 1e-12 * max_row_norm) {
            continue;
        }
        let pattern = ActivationPattern::from_witness(x, witness)?;
        if seen.insert(pattern.mask.clone()) {
            patterns.push(pattern);
        }
    }
    patterns.sort_by(|a, b| a.mask.cmp(&b.mask));
    Ok(PatternSet {
        n,
        d,
        patterns,
        source: PatternSource::Enumerated,
    })
}

/// True iff `v` lies in the pattern's cone up to the `EPSILON_CONE` slack.
pub fn cone_contains(pattern: &ActivationPattern, x: &DataMatrix, v: ArrayView1<'_, f64>) -> Result<bool> {
    if v.len() != x.d() {
        return Err(Error::shape(x.d(), v.len(), "cone membership query"));
    }
    if pattern.mask.len() != x.n() {
        return Err(Error::shape(x.n(), pattern.mask.len(), "cone membership mask"));
    }
    let t = x.apply(v);
    Ok(pattern.signed(&t).iter().all(|&e| e >= -EPSILON_CONE))
}

/// Region count of n homogeneous hyperplanes in general position in R^d:
/// `2 * sum_{k=0}^{d-1} C(n-1, k)`.
pub fn general_position_region_bound(n: usize, d: usize) -> u64 {
    (0..d).map(|k| binomial(n as u64 - 1, k as u64)).sum::<u64>() * 2
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// d = 2: the rays of the arrangement are the two directions along each
/// row's null line. Sorting them by angle splits the circle into the open
/// sectors that are exactly the arrangement regions; each sector's bisector
/// is a witness strictly inside it.
fn sector_candidates(x: &DataMatrix) -> Vec<Array1<f64>> {
    let mut angles: Vec<f64> = Vec::with_capacity(2 * x.n());
    for j in 0..x.n() {
        let r = x.row(j);
        let theta = f64::atan2(r[0], -r[1]); // direction of (-r1, r0)
        angles.push(wrap_angle(theta));
        angles.push(wrap_angle(theta + std::f64::consts::PI));
    }
    angles.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if let (Some(&first), Some(&last)) = (angles.first(), angles.last()) {
        if (last - first - 2.0 * std::f64::consts::PI).abs() < 1e-12 {
            angles.pop();
        }
    }
    let m = angles.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let a = angles[i];
        let b = if i + 1 < m {
            angles[i + 1]
        } else {
            angles[0] + 2.0 * std::f64::consts::PI
        };
        let mid = 0.5 * (a + b);
        out.push(Array1::from(vec![mid.cos(), mid.sin()]));
    }
    out
}

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = theta % two_pi;
    if t < 0.0 {
        t += two_pi;
    }
    t
}

/// d = 3: rays are cross products of row pairs. Around each ray the
/// arrangement locally looks like the two defining planes, so pushing the
/// ray by the dual basis of those planes with all four sign choices lands a
/// witness in each adjacent region. Every region of a pointed arrangement
/// touches such a ray.
fn ray_candidates_3d(x: &DataMatrix, row_norms: &[f64]) -> Vec<Array1<f64>> {
    let n = x.n();
    let max_row_norm = row_norms.iter().cloned().fold(0.0_f64, f64::max);
    let mut out: Vec<Array1<f64>> = Vec::new();
    // Row directions cover the n = 1 case and add robustness for small n.
    for j in 0..n {
        let r = x.row(j).to_owned();
        out.push(r.clone());
        out.push(-r);
    }
    for j in 0..n {
        for k in (j + 1)..n {
            let a = x.row(j);
            let b = x.row(k);
            let z = cross3(a, b);
            let zn = norm(z.view());
            if zn < 1e-12 * row_norms[j] * row_norms[k] {
                continue; // parallel rows, no ray
            }
            let z_hat = z / zn;
            let Some((bj, bk)) = dual_basis(a, b) else {
                continue;
            };
            let basis_scale = norm(bj.view()) + norm(bk.view());
            let mut clearance = f64::INFINITY;
            for l in 0..n {
                if l == j || l == k {
                    continue;
                }
                clearance = clearance.min(x.row(l).dot(&z_hat).abs());
            }
            let delta = if clearance.is_finite() {
                0.5 * clearance / (basis_scale * max_row_norm).max(1e-300)
            } else {
                1.0 / basis_scale.max(1e-300)
            };
            if delta <= 0.0 {
                continue; // a third plane passes through this ray
            }
            for &sign_z in &[1.0, -1.0] {
                for &sj in &[1.0, -1.0] {
                    for &sk in &[1.0, -1.0] {
                        let v = &z_hat * sign_z + &bj * (sj * delta) + &bk * (sk * delta);
                        out.push(v);
                    }
                }
            }
        }
    }
    out
}

fn cross3(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    Array1::from(vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

/// Vectors (bj, bk) in span(a, b) with a.bj = 1, b.bj = 0, a.bk = 0, b.bk = 1.
fn dual_basis(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<(Array1<f64>, Array1<f64>)> {
    let gaa = a.dot(&a);
    let gab = a.dot(&b);
    let gbb = b.dot(&b);
    let det = gaa * gbb - gab * gab;
    if det.abs() < 1e-300 {
        return None;
    }
    let bj = (&a * gbb - &b * gab) / det;
    let bk = (&b * gaa - &a * gab) / det;
    Some((bj, bk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values =
            Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        DataMatrix::new(values).unwrap()
    }

    #[test]
    fn identity_positive_witness_is_all_ones() {
        let x = DataMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = ActivationPattern::from_witness(&x, array![0.3, 2.0]).unwrap();
        assert_eq!(p.mask(), &[true, true]);
    }

    #[test]
    fn single_row_has_at_most_two_masks() {
        let x = random_matrix(1, 3, 5);
        let set = sample_patterns(&x, 10_000, 42).unwrap();
        assert!(set.len() <= 2);
    }

    /// Independent oracle: test one representative direction per angular
    /// sector by sweeping the circle finely and collecting strict masks.
    fn sweep_mask_count_2d(x: &DataMatrix) -> usize {
        let mut seen = HashSet::new();
        let steps = 14_400;
        for i in 0..steps {
            let theta = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / steps as f64;
            let v = array![theta.cos(), theta.sin()];
            let action = x.apply(v.view());
            if action.iter().any(|t| t.abs() < 1e-7) {
                continue; // too close to a boundary to trust the sign
            }
            let mask: Vec<bool> = action.iter().map(|&t| t >= 0.0).collect();
            seen.insert(mask);
        }
        seen.len()
    }

    #[test]
    fn three_rows_in_general_position_give_six_masks() {
        let x = random_matrix(3, 2, 11);
        assert_eq!(sweep_mask_count_2d(&x), 6);
        let set = sample_patterns(&x, 10_000, 3).unwrap();
        assert_eq!(set.len(), 6);
    }

    #[test]
    fn enumerate_one_by_one() {
        let x = DataMatrix::new(array![[1.0]]).unwrap();
        let set = enumerate_patterns(&x).unwrap();
        let masks: Vec<String> = set.iter().map(|p| p.mask_bitstring()).collect();
        assert_eq!(set.len(), 2);
        assert!(masks.contains(&"0".to_string()));
        assert!(masks.contains(&"1".to_string()));
    }

    #[test]
    fn enumerate_orthogonal_rows_gives_quadrants() {
        let x = DataMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let set = enumerate_patterns(&x).unwrap();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn enumerate_four_general_rows_attains_bound() {
        let x = random_matrix(4, 2, 17);
        let set = enumerate_patterns(&x).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(general_position_region_bound(4, 2), 8);
        assert_eq!(sweep_mask_count_2d(&x), 8);
    }

    #[test]
    fn witness_fidelity() {
        for seed in 0..6 {
            let x = random_matrix(7, 3, 100 + seed);
            let set = sample_patterns(&x, 500, seed).unwrap();
            for p in set.iter() {
                let recomputed: Vec<bool> =
                    x.apply(p.witness().view()).iter().map(|&t| t >= 0.0).collect();
                assert_eq!(recomputed, p.mask());
            }
        }
    }

    #[test]
    fn sampling_is_subset_of_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let n = rng.gen_range(1..=10);
            let d = rng.gen_range(1..=3);
            let x = random_matrix(n, d, rng.gen());
            let all: HashSet<Vec<bool>> = enumerate_patterns(&x)
                .unwrap()
                .iter()
                .map(|p| p.mask().to_vec())
                .collect();
            let sampled = sample_patterns(&x, 2_000, rng.gen()).unwrap();
            for p in sampled.iter() {
                assert!(
                    all.contains(p.mask()),
                    "sampled mask {} missing from enumeration (n={n}, d={d})",
                    p.mask_bitstring()
                );
            }
        }
    }

    #[test]
    fn enumeration_respects_region_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(1..=10);
            let d = rng.gen_range(1..=3);
            let x = random_matrix(n, d, rng.gen());
            let set = enumerate_patterns(&x).unwrap();
            let bound = general_position_region_bound(n, d);
            assert!(
                (set.len() as u64) <= bound,
                "count {} exceeds bound {bound} for n={n}, d={d}",
                set.len()
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let x = random_matrix(6, 3, 21);
        let a = sample_patterns(&x, 300, 9).unwrap();
        let b = sample_patterns(&x, 300, 9).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa.mask(), pb.mask());
            assert_eq!(pa.witness(), pb.witness());
        }
    }

    #[test]
    fn zero_vector_is_in_every_cone() {
        let x = random_matrix(5, 2, 33);
        let set = enumerate_patterns(&x).unwrap();
        let zero = Array1::zeros(2);
        for p in set.iter() {
            assert!(cone_contains(p, &x, zero.view()).unwrap());
        }
    }

    #[test]
    fn witness_is_in_its_own_cone() {
        let x = random_matrix(6, 3, 55);
        let set = sample_patterns(&x, 200, 4).unwrap();
        for p in set.iter() {
            assert!(cone_contains(p, &x, p.witness().view()).unwrap());
        }
    }

    #[test]
    fn mirrored_rows_reject_opposite_direction() {
        let x = DataMatrix::new(array![[1.0], [-1.0]]).unwrap();
        let p = ActivationPattern::from_witness(&x, array![1.0]).unwrap();
        assert_eq!(p.mask(), &[true, false]);
        assert!(!cone_contains(&p, &x, array![-1.0].view()).unwrap());
    }

    #[test]
    fn enumerate_guard_rejects_large_inputs() {
        let x = random_matrix(15, 2, 1);
        assert!(matches!(
            enumerate_patterns(&x),
            Err(Error::DimensionGuard(_))
        ));
        let x = random_matrix(4, 4, 1);
        assert!(matches!(
            enumerate_patterns(&x),
            Err(Error::DimensionGuard(_))
        ));
    }

    #[test]
    fn enumerate_rejects_zero_rows() {
        let x = DataMatrix::new(array![[0.0, 0.0], [1.0, 2.0]]).unwrap();
        assert!(enumerate_patterns(&x).is_err());
    }

    #[test]
    fn json_round_trip() {
        let x = random_matrix(5, 2, 8);
        let set = sample_patterns(&x, 64, 13).unwrap();
        let text = set.to_json().unwrap();
        let back = PatternSet::from_json(&text).unwrap();
        assert_eq!(back.len(), set.len());
        assert_eq!(back.source(), set.source());
        for (a, b) in set.iter().zip(back.iter()) {
            assert_eq!(a.mask(), b.mask());
            assert_eq!(a.witness(), b.witness());
        }
    }

    #[test]
    fn nonfinite_matrix_rejected() {
        assert!(DataMatrix::new(array![[f64::NAN, 1.0]]).is_err());
    }
}
