//! Geometry metrics over an embedding set: anisotropy, feature correlation,
//! center vector norm, effective ranks, structure ratio, sensitivity index,
//! mean pairwise angle, and positive/negative similarity histograms.
//!
//! Pair statistics use a counter-based generator (one ChaCha stream per pair
//! index), so results depend only on `(seed, pair_samples)` and never on the
//! thread count.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::tensor::{dot, Array, NORMALIZE_EPS};

/// Relative size below which a centered spectrum counts as all-zero.
const DEGENERATE_TOL: f64 = 1e-12;

/// `exp(-Σ pᵢ ln pᵢ)` with `pᵢ = σᵢ / Σσ` and `0·ln 0 = 0`.
pub fn effective_rank_from_spectrum(sigma: &[f64]) -> Result<f64> {
    if sigma.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(Error::arg("singular values must be finite and non-negative"));
    }
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("effective rank of a zero spectrum".into()));
    }
    let entropy: f64 = sigma
        .iter()
        .filter(|s| **s > 0.0)
        .map(|s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

fn centered(m: &Array) -> Result<(DMatrix<f64>, f64)> {
    let (n, d) = m.dims2()?;
    if n == 0 || d == 0 {
        return Err(Error::Empty(format!("matrix is {n}x{d}")));
    }
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (acc, v) in means.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    means.iter_mut().for_each(|v| *v /= n as f64);
    let scale = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mat = DMatrix::from_fn(n, d, |r, c| m.row(r)[c] - means[c]);
    Ok((mat, scale))
}

/// Singular values of the column-centered matrix.
pub fn centered_singular_values(m: &Array) -> Result<Vec<f64>> {
    let (mat, scale) = centered(m)?;
    let sv = if mat.nrows() >= mat.ncols() {
        mat.singular_values()
    } else {
        mat.transpose().singular_values()
    };
    let sv: Vec<f64> = sv.iter().copied().collect();
    let top = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    if scale == 0.0 || top <= DEGENERATE_TOL * scale {
        return Err(Error::Degenerate(
            "effective rank is undefined for a matrix whose centered form is zero".into(),
        ));
    }
    Ok(sv)
}

/// Effective rank of the mean-centered matrix.
pub fn effective_rank(m: &Array) -> Result<f64> {
    effective_rank_from_spectrum(&centered_singular_values(m)?)
}

/// `λ_max / Σλ` of the covariance of row-normalized embeddings, `None` when
/// the covariance vanishes.
pub fn anisotropy(vectors: &Array) -> Result<Option<f64>> {
    let normalized = vectors.normalize_rows(NORMALIZE_EPS);
    let (mat, _) = centered(&normalized)?;
    let n = mat.nrows() as f64;
    let cov = mat.transpose() * &mat / n;
    let trace = cov.trace();
    if trace <= DEGENERATE_TOL {
        return Ok(None);
    }
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
    Ok(Some(top / trace))
}

/// Mean absolute off-diagonal Pearson coefficient between features. Features
/// with zero variance are left out; `None` if fewer than two remain.
pub fn feature_correlation(vectors: &Array) -> Result<Option<f64>> {
    let (mat, _) = centered(vectors)?;
    let cov = mat.transpose() * &mat;
    let live: Vec<usize> = (0..cov.nrows())
        .filter(|&i| cov[(i, i)] > DEGENERATE_TOL * DEGENERATE_TOL)
        .collect();
    if live.len() < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a + 1..] {
            total += (cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()).abs();
        }
    }
    let pairs = live.len() * (live.len() - 1) / 2;
    Ok(Some(total / pairs as f64))
}

/// Norm of the mean row-normalized embedding.
pub fn center_vector_norm(vectors: &Array) -> Result<f64> {
    let normalized = vectors.normalize_rows(NORMALIZE_EPS);
    let (n, d) = normalized.dims2()?;
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(normalized.row(r)) {
            *m += v;
        }
    }
    Ok(mean.iter().map(|m| (m / n as f64).powi(2)).sum::<f64>().sqrt())
}

/// Class-mean matrix `K×D` over the classes that occur.
pub fn class_centroids(set: &EmbeddingSet) -> Result<Array> {
    let labels = set.require_labels("class centroids")?;
    let k = set.class_count().unwrap_or(0);
    let d = set.dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(set.row(i)) {
            *s += v;
        }
    }
    let rows: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    Array::from_rows(&rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityIndex {
    pub value: f64,
    /// Pooled variance was zero; `value` is `+∞`.
    pub infinite: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// `d′ = (μ_pos - μ_neg) / sqrt((σ²_pos + σ²_neg) / 2)`.
pub fn sensitivity_index(pos: &[f64], neg: &[f64]) -> Result<SensitivityIndex> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::arg("d' needs both positive and negative similarities"));
    }
    let (mp, vp) = mean_var(pos);
    let (mn, vn) = mean_var(neg);
    let pooled = (vp + vn) / 2.0;
    if pooled == 0.0 {
        return Ok(SensitivityIndex {
            value: f64::INFINITY,
            infinite: true,
        });
    }
    Ok(SensitivityIndex {
        value: (mp - mn) / pooled.sqrt(),
        infinite: false,
    })
}

#[derive(Clone, Copy)]
enum PairKind {
    Any,
    Positive,
    Negative,
}

impl PairKind {
    fn domain(self) -> u64 {
        match self {
            PairKind::Any => 0x6d70_6100,
            PairKind::Positive => 0x706f_7300,
            PairKind::Negative => 0x6e65_6700,
        }
    }
}

/// Row indices grouped by class.
struct ClassIndex {
    members: Vec<Vec<usize>>,
    labels: Vec<usize>,
    /// Rows whose class has at least two members.
    pairable: Vec<usize>,
}

impl ClassIndex {
    fn new(labels: &[usize]) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        let pairable = (0..labels.len())
            .filter(|&i| members[labels[i]].len() >= 2)
            .collect();
        Self {
            members,
            labels: labels.to_vec(),
            pairable,
        }
    }

    fn classes_present(&self) -> usize {
        self.members.iter().filter(|m| !m.is_empty()).count()
    }
}

fn draw_pair(n: usize, classes: Option<&ClassIndex>, kind: PairKind, rng: &mut ChaCha8Rng) -> (usize, usize) {
    match (kind, classes) {
        (PairKind::Positive, Some(c)) => {
            let i = c.pairable[rng.random_range(0..c.pairable.len())];
            let group = &c.members[c.labels[i]];
            loop {
                let j = group[rng.random_range(0..group.len())];
                if j != i {
                    return (i, j);
                }
            }
        }
        (PairKind::Negative, Some(c)) => {
            let i = rng.random_range(0..n);
            loop {
                let j = rng.random_range(0..n);
                if c.labels[j] != c.labels[i] {
                    return (i, j);
                }
            }
        }
        _ => {
            let i = rng.random_range(0..n);
            let j = (i + 1 + rng.random_range(0..n - 1)) % n;
            (i, j)
        }
    }
}

/// Cosine similarities of `count` sampled pairs; pair `s` uses stream `s`.
fn sampled_cosines(
    normalized: &Array,
    classes: Option<&ClassIndex>,
    kind: PairKind,
    count: usize,
    seed: u64,
) -> Vec<f64> {
    let n = normalized.shape()[0];
    (0..count)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.domain());
            rng.set_stream(s as u64);
            let (i, j) = draw_pair(n, classes, kind, &mut rng);
            dot(normalized.row(i), normalized.row(j))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryReport {
    pub anisotropy: Option<f64>,
    pub correlation: Option<f64>,
    pub cvn: f64,
    pub centroid_rank: Option<f64>,
    pub embedding_rank: Option<f64>,
    pub structure_ratio: Option<f64>,
    pub d_prime: Option<SensitivityIndex>,
    pub mpa_degrees: f64,
    /// The centered embedding spectrum (or the normalized covariance) is zero.
    pub degenerate: bool,
    pub pair_samples: usize,
}

fn degenerate_ok(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Computes every metric. Label-dependent metrics are `None` without labels;
/// labels with fewer than two classes are an argument error.
pub fn geometry_report(set: &EmbeddingSet, pair_samples: usize, seed: u64) -> Result<GeometryReport> {
    if pair_samples == 0 {
        return Err(Error::arg("pair_samples must be at least 1"));
    }
    if set.len() < 2 {
        return Err(Error::arg("geometry needs at least two embeddings"));
    }
    let vectors = set.vectors();
    let normalized = vectors.normalize_rows(NORMALIZE_EPS);
    let anisotropy = anisotropy(vectors)?;
    let embedding_rank = degenerate_ok(effective_rank(vectors))?;
    let degenerate = anisotropy.is_none() || embedding_rank.is_none();

    let (centroid_rank, d_prime) = match set.labels() {
        None => (None, None),
        Some(labels) => {
            let classes = ClassIndex::new(labels);
            if classes.classes_present() < 2 {
                return Err(Error::arg(
                    "centroid rank and d' need at least two classes",
                ));
            }
            let centroid_rank = degenerate_ok(effective_rank(&class_centroids(set)?))?;
            let d_prime = if classes.pairable.is_empty() {
                log::warn!("no class has two members; d' is undefined");
                None
            } else {
                let pos = sampled_cosines(&normalized, Some(&classes), PairKind::Positive, pair_samples, seed);
                let neg = sampled_cosines(&normalized, Some(&classes), PairKind::Negative, pair_samples, seed);
                Some(sensitivity_index(&pos, &neg)?)
            };
            (centroid_rank, d_prime)
        }
    };
    let structure_ratio = match (embedding_rank, centroid_rank) {
        (Some(e), Some(c)) => Some(e / c),
        _ => None,
    };

    let cosines = sampled_cosines(&normalized, None, PairKind::Any, pair_samples, seed);
    let mpa_degrees = cosines
        .iter()
        .map(|c| c.clamp(-1.0, 1.0).acos().to_degrees())
        .sum::<f64>()
        / pair_samples as f64;

    Ok(GeometryReport {
        anisotropy,
        correlation: feature_correlation(vectors)?,
        cvn: center_vector_norm(vectors)?,
        centroid_rank,
        embedding_rank,
        structure_ratio,
        d_prime,
        mpa_degrees,
        degenerate,
        pair_samples,
    })
}

pub const GEOMETRY_HEADER: &str =
    "name,anisotropy,correlation,cvn,centroid_rank,embedding_rank,structure_ratio,d_prime,mpa";

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// One CSV line per named report, in `GEOMETRY_HEADER` order.
pub fn geometry_csv(rows: &[(&str, &GeometryReport)]) -> String {
    let mut out = String::from(GEOMETRY_HEADER);
    out.push('\n');
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{},{},{}",
            cell(r.anisotropy),
            cell(r.correlation),
            cell(Some(r.cvn)),
            cell(r.centroid_rank),
            cell(r.embedding_rank),
            cell(r.structure_ratio),
            cell(r.d_prime.map(|d| d.value)),
            cell(Some(r.mpa_degrees)),
        );
    }
    out
}

pub fn write_geometry_csv(path: &Path, rows: &[(&str, &GeometryReport)]) -> Result<()> {
    std::fs::write(path, geometry_csv(rows))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityHistogram {
    /// `bins + 1` edges spanning `[-1, 1]`.
    pub edges: Vec<f64>,
    pub pos_density: Vec<f64>,
    pub neg_density: Vec<f64>,
    pub pos_counts: Vec<usize>,
    pub neg_counts: Vec<usize>,
}

impl SimilarityHistogram {
    pub fn bins(&self) -> usize {
        self.pos_counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        2.0 / self.bins() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

fn bin_of(cos: f64, bins: usize) -> usize {
    let pos = ((cos.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64).floor() as usize;
    pos.min(bins - 1)
}

fn densities(counts: &[usize], width: f64) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts
        .iter()
        .map(|&c| c as f64 / (total as f64 * width))
        .collect()
}

/// Density histograms of sampled same-class and different-class cosines,
/// `pair_samples` pairs per curve. A curve with no eligible pairs is all zero.
pub fn similarity_histogram(
    set: &EmbeddingSet,
    bins: usize,
    pair_samples: usize,
    seed: u64,
) -> Result<SimilarityHistogram> {
    let labels = set.require_labels("similarity histogram")?;
    if bins == 0 || pair_samples == 0 {
        return Err(Error::arg("bins and pair_samples must be positive"));
    }
    let classes = ClassIndex::new(labels);
    let normalized = set.vectors().normalize_rows(NORMALIZE_EPS);
    let singletons = classes.members.iter().filter(|m| m.len() == 1).count();
    if singletons > 0 {
        log::warn!("{singletons} classes have a single member and give no positive pairs");
    }
    let count = |cos: &[f64]| {
        let mut c = vec![0usize; bins];
        cos.iter().for_each(|v| c[bin_of(*v, bins)] += 1);
        c
    };
    let pos_counts = if classes.pairable.is_empty() {
        log::warn!("no positive pairs available");
        vec![0; bins]
    } else {
        count(&sampled_cosines(&normalized, Some(&classes), PairKind::Positive, pair_samples, seed))
    };
    let neg_counts = if classes.classes_present() < 2 {
        log::warn!("single class: no negative pairs available");
        vec![0; bins]
    } else {
        count(&sampled_cosines(&normalized, Some(&classes), PairKind::Negative, pair_samples, seed))
    };
    let width = 2.0 / bins as f64;
    Ok(SimilarityHistogram {
        edges: (0..=bins).map(|i| -1.0 + i as f64 * width).collect(),
        pos_density: densities(&pos_counts, width),
        neg_density: densities(&neg_counts, width),
        pos_counts,
        neg_counts,
    })
}

pub fn histogram_csv(h: &SimilarityHistogram) -> String {
    let mut out = String::from("bin_center,pos_density,neg_density\n");
    for ((c, p), n) in h.centers().iter().zip(&h.pos_density).zip(&h.neg_density) {
        let _ = writeln!(out, "{c},{p},{n}");
    }
    out
}

pub fn write_histogram_csv(path: &Path, h: &SimilarityHistogram) -> Result<()> {
    std::fs::write(path, histogram_csv(h))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn spectrum_closed_forms() {
        assert_relative_eq!(effective_rank_from_spectrum(&[1.0; 4]).unwrap(), 4.0, epsilon = 1e-12);
        assert_relative_eq!(
            effective_rank_from_spectrum(&[1.0, 1.0, 0.0, 0.0]).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            effective_rank_from_spectrum(&[2.0, 1.0, 1.0]).unwrap(),
            (1.5 * 2f64.ln()).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn matrix_with_known_centered_spectrum() {
        // rows ±2e₁, ±e₂, ±e₃ have zero mean and singular values (2√2, √2, √2)
        let rows = [
            [2.0, 0.0, 0.0],
            [-2.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let m = Array::from_rows(&rows).unwrap();
        assert_relative_eq!(effective_rank(&m).unwrap(), 2.0f64.powf(1.5), epsilon = 1e-9);
    }

    #[test]
    fn zero_matrix_has_undefined_rank() {
        assert!(matches!(
            effective_rank(&Array::zeros(&[3, 2])),
            Err(Error::Degenerate(_))
        ));
        let same = Array::from_rows(&[[0.1, 0.7], [0.1, 0.7], [0.1, 0.7]]).unwrap();
        assert!(matches!(effective_rank(&same), Err(Error::Degenerate(_))));
    }

    #[test]
    fn collapsed_set_signature() {
        let rows = vec![[0.3, -0.2, 0.9]; 20];
        let labels = (0..20).map(|i| i % 2).collect();
        let set = EmbeddingSet::new(Array::from_rows(&rows).unwrap(), Some(labels)).unwrap();
        let r = geometry_report(&set, 500, 1).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.anisotropy, None);
        assert_relative_eq!(r.cvn, 1.0, epsilon = 1e-12);
        assert!(r.mpa_degrees < 1e-3);
        assert!(r.d_prime.unwrap().infinite);
    }

    #[test]
    fn basis_vectors() {
        let d = 8;
        let set = EmbeddingSet::new(Array::eye(d), Some((0..d).collect())).unwrap();
        let r = geometry_report(&set, 2000, 3).unwrap();
        assert_relative_eq!(r.cvn, 1.0 / (d as f64).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r.mpa_degrees, 90.0, epsilon = 1e-9);
        // centering leaves a (D-1)-dimensional isotropic simplex
        assert_relative_eq!(r.embedding_rank.unwrap(), (d - 1) as f64, epsilon = 1e-9);
        assert_relative_eq!(
            r.structure_ratio.unwrap() * r.centroid_rank.unwrap(),
            r.embedding_rank.unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn d_prime_of_sampled_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pos: Vec<f64> = Normal::new(0.8, 0.1).unwrap().sample_iter(&mut rng).take(20000).collect();
        let neg: Vec<f64> = Normal::new(0.2, 0.1).unwrap().sample_iter(&mut rng).take(20000).collect();
        let d = sensitivity_index(&pos, &neg).unwrap();
        assert!((d.value - 6.0).abs() < 0.2, "{}", d.value);
        assert!(!d.infinite);
    }

    #[test]
    fn single_class_rejected_for_report() {
        let set = EmbeddingSet::new(Array::eye(3), Some(vec![0, 0, 0])).unwrap();
        assert!(matches!(geometry_report(&set, 100, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn histogram_orthogonal_classes() {
        let rows = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 2.0]];
        let set = EmbeddingSet::new(Array::from_rows(&rows).unwrap(), Some(vec![0, 0, 1, 1])).unwrap();
        let h = similarity_histogram(&set, 256, 1000, 5).unwrap();
        assert_eq!(h.neg_counts[bin_of(0.0, 256)], 1000);
        assert_eq!(h.pos_counts[255], 1000);
        assert_eq!(h.pos_counts.iter().sum::<usize>(), 1000);
        let integral: f64 = h.neg_density.iter().sum::<f64>() * h.bin_width();
        assert_relative_eq!(integral, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn single_class_histogram_has_only_positive_mass() {
        let set = EmbeddingSet::new(Array::from_rows(&[[1.0, 1.0]; 4]).unwrap(), Some(vec![0; 4])).unwrap();
        let h = similarity_histogram(&set, 16, 200, 0).unwrap();
        assert_eq!(h.pos_counts[15], 200);
        assert!(h.neg_density.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_leaves_missing_cells_empty() {
        let set = EmbeddingSet::new(Array::eye(4), None).unwrap();
        let r = geometry_report(&set, 100, 0).unwrap();
        let csv = geometry_csv(&[("basis", &r)]);
        let line = csv.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[4], "");
        assert_eq!(cells[7], "");
        assert_eq!(cells[8], "90");
    }
}
