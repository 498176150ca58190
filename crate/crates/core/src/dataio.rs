//! Ratings data and the two-class item multigraph built from it.
//!
//! Items are nodes. One edge class connects items whose ratings correlate
//! across users; the other connects items with similar feature vectors.
//! Both are sparsified to the `k` strongest edges per node, symmetrized and
//! scaled to unit spectral radius.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asm::ShiftSet;
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::rng;

/// Users × items ratings with an observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingsTable {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    /// Entries under an unset mask are ignored by every consumer.
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
    item_features: Option<DMatrix<f64>>,
}

impl RatingsTable {
    pub fn new(values: DMatrix<f64>, observed: DMatrix<bool>) -> Result<Self> {
        if values.shape() != observed.shape() {
            return Err(Error::InvalidArgument(format!(
                "mask shape {:?} does not match values {:?}",
                observed.shape(),
                values.shape()
            )));
        }
        Ok(RatingsTable {
            user_ids: (0..values.nrows()).map(|u| u.to_string()).collect(),
            item_ids: (0..values.ncols()).map(|i| i.to_string()).collect(),
            values,
            observed,
            item_features: None,
        })
    }

    /// Attaches an `items × d` feature matrix.
    pub fn with_features(mut self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.num_items() {
            return Err(Error::DimensionMismatch {
                expected: self.num_items(),
                found: features.nrows(),
            });
        }
        self.item_features = Some(features);
        Ok(self)
    }

    pub fn num_users(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.values.ncols()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn rating(&self, user: usize, item: usize) -> Option<f64> {
        self.observed[(user, item)].then(|| self.values[(user, item)])
    }

    pub fn is_observed(&self, user: usize, item: usize) -> bool {
        self.observed[(user, item)]
    }

    pub fn item_features(&self) -> Option<&DMatrix<f64>> {
        self.item_features.as_ref()
    }

    pub fn missing_fraction(&self) -> f64 {
        let missing = self.observed.iter().filter(|o| !**o).count();
        missing as f64 / self.observed.len().max(1) as f64
    }

    /// Ratings of one user with unobserved entries set to 0.
    pub fn user_signal(&self, user: usize) -> Vec<f64> {
        (0..self.num_items())
            .map(|i| self.rating(user, i).unwrap_or(0.0))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the largest absolute eigenvalue.
    #[default]
    Spectral,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultigraphSpec {
    /// Strongest edges kept per node before symmetrization.
    pub k: usize,
    pub normalization: Normalization,
    pub seed: u64,
}

impl Default for MultigraphSpec {
    fn default() -> Self {
        MultigraphSpec {
            k: 20,
            normalization: Normalization::Spectral,
            seed: 0,
        }
    }
}

/// Pearson correlation of item columns over co-rated users in `users`.
/// Pairs with fewer than two co-ratings, or with a constant column on the
/// co-rated set, get 0.
pub fn rating_correlation(table: &RatingsTable, users: &[usize]) -> Result<DMatrix<f64>> {
    if users.is_empty() {
        return Err(Error::InvalidArgument("empty user subset".into()));
    }
    if let Some(&u) = users.iter().find(|&&u| u >= table.num_users()) {
        return Err(Error::InvalidArgument(format!("user index {u} out of range")));
    }
    let mut users = users.to_vec();
    users.sort_unstable();
    users.dedup();
    let n = table.num_items();
    let mut corr = DMatrix::zeros(n, n);
    let mut degenerate = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            let pairs: Vec<(f64, f64)> = users
                .iter()
                .filter_map(|&u| Some((table.rating(u, a)?, table.rating(u, b)?)))
                .collect();
            if pairs.len() < 2 {
                continue;
            }
            let k = pairs.len() as f64;
            let ma = pairs.iter().map(|p| p.0).sum::<f64>() / k;
            let mb = pairs.iter().map(|p| p.1).sum::<f64>() / k;
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for &(x, y) in &pairs {
                sab += (x - ma) * (y - mb);
                saa += (x - ma) * (x - ma);
                sbb += (y - mb) * (y - mb);
            }
            if saa <= 0.0 || sbb <= 0.0 {
                degenerate += 1;
                continue;
            }
            let r = (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0);
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }
    if degenerate > 0 {
        warn!("{degenerate} item pairs have a constant co-rated column; correlation set to 0");
    }
    Ok(corr)
}

/// Cosine similarity of item feature rows.
pub fn feature_cosine(table: &RatingsTable) -> Result<DMatrix<f64>> {
    let f = table
        .item_features()
        .ok_or_else(|| Error::InvalidArgument("table has no item features".into()))?;
    let n = f.nrows();
    let norms: Vec<f64> = (0..n).map(|i| f.row(i).norm()).collect();
    let zero = norms.iter().filter(|&&v| v == 0.0).count();
    if zero > 0 {
        warn!("{zero} items have zero-norm features; their similarities are 0");
    }
    let mut sim = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            if norms[a] == 0.0 || norms[b] == 0.0 {
                continue;
            }
            let c = (f.row(a).dot(&f.row(b)) / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            sim[(a, b)] = c;
            sim[(b, a)] = c;
        }
    }
    Ok(sim)
}

/// Clamps negatives, keeps the `k` strongest off-diagonal entries of each
/// row (ties to the lower index), symmetrizes by elementwise max, zeroes
/// the diagonal and normalizes.
pub fn sparsify(similarity: &DMatrix<f64>, spec: &MultigraphSpec) -> Result<DMatrix<f64>> {
    if spec.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = similarity.nrows();
    let mut kept = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, similarity[(i, j)]))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(j, w) in row.iter().take(spec.k) {
            kept[(i, j)] = w;
        }
    }
    let mut sym = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            f64::max(kept[(i, j)], kept[(j, i)])
        }
    });
    if spec.normalization == Normalization::Spectral {
        let radius = spectral_norm(&sym);
        if radius > 0.0 {
            sym /= radius;
        }
    }
    Ok(sym)
}

/// Rating-similarity shift from the users in `users` (order irrelevant).
pub fn rating_similarity_shift(table: &RatingsTable, users: &[usize], spec: &MultigraphSpec) -> Result<DMatrix<f64>> {
    sparsify(&rating_correlation(table, users)?, spec)
}

/// Feature-similarity shift from the table's item features.
pub fn feature_similarity_shift(table: &RatingsTable, spec: &MultigraphSpec) -> Result<DMatrix<f64>> {
    sparsify(&feature_cosine(table)?, spec)
}

/// Shift set `[rating, feature]` (feature omitted when the table has none).
pub fn build_multigraph(table: &RatingsTable, users: &[usize], spec: &MultigraphSpec) -> Result<ShiftSet> {
    let mut shifts = vec![rating_similarity_shift(table, users, spec)?];
    if table.item_features().is_some() {
        shifts.push(feature_similarity_shift(table, spec)?);
    }
    ShiftSet::new(shifts)
}

/// A re-estimated shift set and its distance from the reference one.
#[derive(Clone, Debug)]
pub struct EstimatedShift {
    pub fraction: f64,
    pub seed: u64,
    pub subset_size: usize,
    pub shifts: ShiftSet,
    /// `‖S − S̃‖₂` of the rating-similarity shift.
    pub deviation: f64,
}

/// Sorted random subset holding `round(fraction·|base|)` users of `base`.
pub fn subsample_users(base: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let size = ((fraction * base.len() as f64).round() as usize).min(base.len());
    let mut r = rng::stream(seed, fraction.to_bits());
    let mut out: Vec<usize> = sample(&mut r, base.len(), size).into_iter().map(|i| base[i]).collect();
    out.sort_unstable();
    out
}

/// Replaces the rating shift of `reference` (built from `base_users`) by
/// estimates from random subsets of `base_users`, one per fraction and
/// seed. Other shifts are kept. Subsets with fewer than two users are
/// skipped with a warning.
pub fn estimation_protocol(
    table: &RatingsTable,
    base_users: &[usize],
    reference: &ShiftSet,
    fractions: &[f64],
    seeds: &[u64],
    spec: &MultigraphSpec,
) -> Result<Vec<EstimatedShift>> {
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidArgument(format!("fraction {f} outside (0, 1]")));
    }
    let mut out = Vec::with_capacity(fractions.len() * seeds.len());
    for &fraction in fractions {
        for &seed in seeds {
            let subset = subsample_users(base_users, fraction, seed);
            if subset.len() < 2 {
                warn!(
                    "fraction {fraction} seed {seed}: subset of {} users skipped",
                    subset.len()
                );
                continue;
            }
            let estimate = rating_similarity_shift(table, &subset, spec)?;
            let deviation = spectral_norm(&(reference.shift(0) - &estimate));
            let mut shifts = reference.shifts().to_vec();
            shifts[0] = estimate;
            out.push(EstimatedShift {
                fraction,
                seed,
                subset_size: subset.len(),
                shifts: ShiftSet::new(shifts)?,
                deviation,
            });
        }
    }
    Ok(out)
}

/// Rank of the planted ratings.
pub const SYNTHETIC_RANK: usize = 3;
/// Probability that a synthetic rating is hidden.
pub const SYNTHETIC_MISSING: f64 = 0.3;

/// Rank-3 ratings `U Vᵀ/√3` plus Gaussian noise, 30% of entries hidden,
/// item features equal to the latent item factors plus noise.
pub fn synthesize_dataset(n_items: usize, n_users: usize, noise: f64, seed: u64) -> Result<RatingsTable> {
    if n_items == 0 || n_users == 0 || !(noise >= 0.0) {
        return Err(Error::InvalidArgument(
            "sizes must be positive and noise non-negative".into(),
        ));
    }
    let users = rng::gaussian_matrix(&mut rng::stream(seed, 0), n_users, SYNTHETIC_RANK);
    let items = rng::gaussian_matrix(&mut rng::stream(seed, 1), n_items, SYNTHETIC_RANK);
    let planted = &users * items.transpose() / (SYNTHETIC_RANK as f64).sqrt();
    let values = planted + rng::gaussian_matrix(&mut rng::stream(seed, 2), n_users, n_items) * noise;
    let mut mr = rng::stream(seed, 3);
    let observed = DMatrix::from_fn(n_users, n_items, |_, _| !mr.random_bool(SYNTHETIC_MISSING));
    let features = &items + rng::gaussian_matrix(&mut rng::stream(seed, 4), n_items, SYNTHETIC_RANK) * noise;
    RatingsTable::new(values, observed)?.with_features(features)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_records(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(reader: &mut csv::Reader<&[u8]>, expected: &[&str], source: &str) -> Result<Vec<String>> {
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::parse(
            source,
            1,
            format!("expected header starting `{}`", expected.join(",")),
        ));
    }
    Ok(header)
}

/// Parses long-format `user_id,item_id,rating` text. Users and items are
/// indexed in order of first appearance; a repeated pair keeps the last
/// rating.
pub fn parse_ratings_csv(text: &str, source: &str) -> Result<RatingsTable> {
    let mut reader = csv_records(text);
    check_header(&mut reader, &["user_id", "item_id", "rating"], source)?;
    let mut users: Vec<String> = Vec::new();
    let mut items: Vec<String> = Vec::new();
    let mut user_idx: HashMap<String, usize> = HashMap::new();
    let mut item_idx: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::parse(
                source,
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let rating: f64 = record[2]
            .parse()
            .map_err(|e| Error::parse(source, line, format!("bad rating `{}`: {e}", &record[2])))?;
        if !rating.is_finite() {
            return Err(Error::parse(source, line, "rating is not finite"));
        }
        let u = *user_idx.entry(record[0].to_string()).or_insert_with(|| {
            users.push(record[0].to_string());
            users.len() - 1
        });
        let i = *item_idx.entry(record[1].to_string()).or_insert_with(|| {
            items.push(record[1].to_string());
            items.len() - 1
        });
        entries.push((u, i, rating));
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut values = DMatrix::zeros(users.len(), items.len());
    let mut observed = DMatrix::from_element(users.len(), items.len(), false);
    let mut duplicates = 0usize;
    for (u, i, r) in entries {
        duplicates += usize::from(observed[(u, i)]);
        values[(u, i)] = r;
        observed[(u, i)] = true;
    }
    if duplicates > 0 {
        warn!("{source}: {duplicates} repeated (user, item) pairs; last rating kept");
    }
    let mut table = RatingsTable::new(values, observed)?;
    table.user_ids = users;
    table.item_ids = items;
    Ok(table)
}

pub fn read_ratings_csv(path: &Path) -> Result<RatingsTable> {
    parse_ratings_csv(&read_text(path)?, &path.display().to_string())
}

/// Attaches `item_id,f0,f1,…` features. Every item of the table needs a
/// row; rows for unknown items are ignored with a warning.
pub fn parse_item_features_csv(table: RatingsTable, text: &str, source: &str) -> Result<RatingsTable> {
    let mut reader = csv_records(text);
    let header = check_header(&mut reader, &["item_id"], source)?;
    let d = header.len() - 1;
    if d == 0 {
        return Err(Error::parse(source, 1, "no feature columns"));
    }
    let index: HashMap<&str, usize> = table
        .item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut features = DMatrix::zeros(table.num_items(), d);
    let mut seen = vec![false; table.num_items()];
    let mut unknown = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 1 {
            return Err(Error::parse(
                source,
                line,
                format!("expected {} fields, found {}", d + 1, record.len()),
            ));
        }
        let Some(&item) = index.get(&record[0]) else {
            unknown += 1;
            continue;
        };
        for j in 0..d {
            features[(item, j)] = record[j + 1]
                .parse()
                .map_err(|e| Error::parse(source, line, format!("bad feature `{}`: {e}", &record[j + 1])))?;
        }
        seen[item] = true;
    }
    if unknown > 0 {
        warn!("{source}: {unknown} feature rows name unknown items");
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!(
            "{source}: no features for item `{}`",
            table.item_ids[i]
        )));
    }
    table.with_features(features)
}

pub fn read_item_features_csv(table: RatingsTable, path: &Path) -> Result<RatingsTable> {
    parse_item_features_csv(table, &read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn raw() -> MultigraphSpec {
        MultigraphSpec {
            normalization: Normalization::None,
            ..MultigraphSpec::default()
        }
    }

    #[test]
    fn identical_columns_correlate_fully() {
        let values = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 0.3, 2.0, 2.0, -1.0, 5.0, 5.0, 0.0, 3.0, 3.0, 2.0]);
        let t = RatingsTable::new(values, DMatrix::from_element(4, 3, true)).unwrap();
        let s = rating_similarity_shift(&t, &[0, 1, 2, 3], &raw()).unwrap();
        assert!((s[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn single_item_and_empty_subset() {
        let t = RatingsTable::new(DMatrix::from_element(3, 1, 1.0), DMatrix::from_element(3, 1, true)).unwrap();
        assert_eq!(
            rating_similarity_shift(&t, &[0, 1, 2], &MultigraphSpec::default()).unwrap(),
            DMatrix::zeros(1, 1)
        );
        assert!(rating_similarity_shift(&t, &[], &MultigraphSpec::default()).is_err());
    }

    #[test]
    fn too_few_corated_users_give_zero() {
        let values = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 0.0, 0.0, 4.0]);
        let observed = DMatrix::from_row_slice(3, 2, &[true, true, true, false, false, true]);
        let t = RatingsTable::new(values, observed).unwrap();
        assert_eq!(rating_correlation(&t, &[0, 1, 2]).unwrap()[(0, 1)], 0.0);
    }

    #[test]
    fn feature_cosine_examples() {
        let t = RatingsTable::new(DMatrix::zeros(1, 3), DMatrix::from_element(1, 3, false))
            .unwrap()
            .with_features(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 3.0]))
            .unwrap();
        let s = feature_similarity_shift(&t, &raw()).unwrap();
        assert!((s[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(s[(0, 2)], 0.0);
        let none = RatingsTable::new(DMatrix::zeros(1, 2), DMatrix::from_element(1, 2, true)).unwrap();
        assert!(feature_similarity_shift(&none, &raw()).is_err());
    }

    #[test]
    fn sparsified_degrees_and_normalization() {
        let t = synthesize_dataset(30, 200, 0.1, 1).unwrap();
        let spec = MultigraphSpec {
            k: 4,
            ..MultigraphSpec::default()
        };
        let users: Vec<usize> = (0..200).collect();
        for s in [
            rating_similarity_shift(&t, &users, &spec).unwrap(),
            feature_similarity_shift(&t, &spec).unwrap(),
        ] {
            assert_eq!(s, s.transpose());
            assert!((0..30).all(|i| s[(i, i)] == 0.0));
            let eig = SymmetricEigen::new(s.clone()).eigenvalues;
            let radius = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            assert!((radius - 1.0).abs() < 1e-8);
            for i in 0..30 {
                assert!(s.row(i).iter().filter(|&&v| v > 0.0).count() <= 8);
            }
        }
        let kept = sparsify(
            &feature_cosine(&t).unwrap(),
            &MultigraphSpec {
                k: 4,
                normalization: Normalization::None,
                seed: 0,
            },
        )
        .unwrap();
        assert!(kept.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn synthetic_rank_and_determinism() {
        let t = synthesize_dataset(20, 50, 0.0, 3).unwrap();
        let sv = t.values.clone().singular_values();
        assert!(sv[3] <= 1e-8 * sv[0]);
        assert_eq!(synthesize_dataset(20, 50, 0.0, 3).unwrap(), t);
        let big = synthesize_dataset(100, 200, 0.1, 4).unwrap();
        assert!((big.missing_fraction() - 0.3).abs() <= 0.02);
    }

    #[test]
    fn full_fraction_reproduces_reference() {
        let t = synthesize_dataset(15, 80, 0.1, 5).unwrap();
        let base: Vec<usize> = (0..60).rev().collect();
        let spec = MultigraphSpec::default();
        let reference = build_multigraph(&t, &base, &spec).unwrap();
        let est = estimation_protocol(&t, &base, &reference, &[0.5, 1.0], &[0, 1], &spec).unwrap();
        assert_eq!(est.len(), 4);
        for e in est.iter().filter(|e| e.fraction == 1.0) {
            assert_eq!(e.deviation, 0.0);
            assert_eq!(e.shifts.shift(0), reference.shift(0));
        }
        for e in &est {
            assert_eq!(e.shifts.shift(1), reference.shift(1));
        }
        assert!(estimation_protocol(&t, &base, &reference, &[1.5], &[0], &spec).is_err());
    }

    #[test]
    fn ratings_csv_parsing() {
        let text = "user_id,item_id,rating\nu1,a,1.5\nu2,a,2\nu1,b,-0.5\n";
        let t = parse_ratings_csv(text, "r.csv").unwrap();
        assert_eq!((t.num_users(), t.num_items()), (2, 2));
        assert_eq!(t.rating(0, 1), Some(-0.5));
        assert_eq!(t.rating(1, 1), None);
        let feats = parse_item_features_csv(t, "item_id,f0,f1\nb,0,1\na,1,0\n", "f.csv").unwrap();
        assert_eq!(feats.item_features().unwrap()[(0, 0)], 1.0);

        let err = parse_ratings_csv("user_id,item_id,rating\nu1,a,1\nu1,b,x\n", "bad.csv").unwrap_err();
        assert_eq!(err.to_string(), "bad.csv:3: bad rating `x`: invalid float literal");
        assert!(parse_ratings_csv("user,item,rating\n", "h.csv").is_err());
    }
}
