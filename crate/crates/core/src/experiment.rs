//! Rating-prediction experiment comparing how three architectures react to
//! a re-estimated rating-similarity shift.
//!
//! Per seed, users are split into train and test; a base subset of the
//! training users builds the multigraph and supplies the training samples.
//! Each architecture is trained once on that multigraph, then evaluated on
//! the test users with the rating shift re-estimated from random fractions
//! of the base users. The reported delta is the absolute change in test
//! RMSE caused by swapping in the estimate.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use log::info;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::algnn::{
    evaluate_rmse, train, AlgNN, LayerSpec, Nonlinearity, Optimizer, Pooling, Sample, TapsMode, TrainConfig,
    TrainHistory,
};
use crate::asm::ShiftSet;
use crate::dataio::{
    build_multigraph, estimation_protocol, read_item_features_csv, read_ratings_csv, synthesize_dataset,
    MultigraphSpec, Normalization, RatingsTable,
};
use crate::error::{Error, Result};
use crate::io;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Linear multigraph filter.
    Mfilter,
    /// Multigraph network with ReLU.
    Mgnn,
    /// Multigraph network with ReLU and the integral-Lipschitz penalty.
    MgnnIl,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Mfilter, Architecture::Mgnn, Architecture::MgnnIl];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mfilter => "mfilter",
            Architecture::Mgnn => "mgnn",
            Architecture::MgnnIl => "mgnn_il",
        }
    }

    fn nonlinearity(self) -> Nonlinearity {
        match self {
            Architecture::Mfilter => Nonlinearity::Identity,
            Architecture::Mgnn | Architecture::MgnnIl => Nonlinearity::Relu,
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture `{s}`")))
    }
}

/// Every knob of the experiment. Paths are taken as given; callers resolve
/// them relative to their config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Long-format ratings; when absent a synthetic table is generated.
    pub ratings_csv: Option<PathBuf>,
    pub features_csv: Option<PathBuf>,
    pub n_items: usize,
    pub n_users: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub target_item: usize,
    pub k: usize,
    pub normalization: Normalization,
    pub taps: usize,
    pub taps_mode: TapsMode,
    /// Features per hidden layer.
    pub features: usize,
    pub layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Penalty weight used by `mgnn_il`.
    pub il_weight: f64,
    pub test_fraction: f64,
    /// Share of the training users forming the base set.
    pub base_fraction: f64,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub architectures: Vec<Architecture>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ratings_csv: None,
            features_csv: None,
            n_items: 60,
            n_users: 400,
            noise: 0.1,
            data_seed: 0,
            target_item: 0,
            k: 20,
            normalization: Normalization::Spectral,
            taps: 3,
            taps_mode: TapsMode::Degree,
            features: 4,
            layers: 2,
            epochs: 40,
            learning_rate: 5e-3,
            batch_size: 16,
            optimizer: Optimizer::Adam,
            il_weight: 0.005,
            test_fraction: 0.2,
            base_fraction: 0.9,
            fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            seeds: vec![0, 1, 2, 3, 4],
            architectures: Architecture::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.taps == 0 || self.features == 0 || self.layers == 0 || self.k == 0 {
            return bad("taps, features, layers and k must be positive");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if !(self.base_fraction > 0.0 && self.base_fraction <= 1.0) {
            return bad("base_fraction must lie in (0, 1]");
        }
        if self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("fractions must lie in (0, 1]");
        }
        if self.seeds.is_empty() || self.architectures.is_empty() {
            return bad("at least one seed and one architecture are required");
        }
        if self.features_csv.is_some() && self.ratings_csv.is_none() {
            return bad("features_csv requires ratings_csv");
        }
        Ok(())
    }

    fn multigraph_spec(&self) -> MultigraphSpec {
        MultigraphSpec {
            k: self.k,
            normalization: self.normalization,
            seed: self.data_seed,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        io::content_hash(json.as_bytes())
    }

    pub fn train_config(&self, arch: Architecture, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            il_weight: if arch == Architecture::MgnnIl {
                self.il_weight
            } else {
                0.0
            },
            seed,
            optimizer: self.optimizer,
        }
    }
}

/// Loads the configured ratings table or synthesizes one.
pub fn load_table(cfg: &ExperimentConfig) -> Result<RatingsTable> {
    match &cfg.ratings_csv {
        Some(path) => {
            let table = read_ratings_csv(path)?;
            match &cfg.features_csv {
                Some(f) => read_item_features_csv(table, f),
                None => Ok(table),
            }
        }
        None => synthesize_dataset(cfg.n_items, cfg.n_users, cfg.noise, cfg.data_seed),
    }
}

/// Users, samples and multigraph of one seed.
#[derive(Clone, Debug)]
pub struct Split {
    pub seed: u64,
    pub test_users: Vec<usize>,
    pub base_users: Vec<usize>,
    pub shifts: Arc<ShiftSet>,
    pub train_samples: Vec<Sample>,
    pub test_samples: Vec<Sample>,
}

fn samples_for(table: &RatingsTable, users: &[usize], target: usize) -> Vec<Sample> {
    users
        .iter()
        .filter_map(|&u| {
            let y = table.rating(u, target)?;
            let mut x = table.user_signal(u);
            x[target] = 0.0;
            Some(Sample::from_signal(DVector::from_vec(x), DVector::from_element(1, y)))
        })
        .collect()
}

/// Shuffles users with the seed, holds out the test share and builds the
/// multigraph from the base share of the rest.
pub fn prepare_split(table: &RatingsTable, cfg: &ExperimentConfig, seed: u64) -> Result<Split> {
    cfg.validate()?;
    if cfg.target_item >= table.num_items() {
        return Err(Error::InvalidArgument(format!(
            "target item {} out of range for {} items",
            cfg.target_item,
            table.num_items()
        )));
    }
    let mut users: Vec<usize> = (0..table.num_users()).collect();
    users.shuffle(&mut rng::stream(seed, 0x5EED));
    let n_test = ((cfg.test_fraction * users.len() as f64).round() as usize).max(1);
    let (test, train) = users.split_at(n_test.min(users.len()));
    let n_base = (cfg.base_fraction * train.len() as f64).round() as usize;
    let mut base = train[..n_base].to_vec();
    base.sort_unstable();
    let mut test = test.to_vec();
    test.sort_unstable();
    let shifts = Arc::new(build_multigraph(table, &base, &cfg.multigraph_spec())?);
    let train_samples = samples_for(table, &base, cfg.target_item);
    let test_samples = samples_for(table, &test, cfg.target_item);
    if train_samples.is_empty() || test_samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Split {
        seed,
        test_users: test,
        base_users: base,
        shifts,
        train_samples,
        test_samples,
    })
}

/// Untrained network of the given architecture; the initialization depends
/// only on the seed so that the two ReLU variants start identically.
pub fn build_network(arch: Architecture, shifts: Arc<ShiftSet>, cfg: &ExperimentConfig, seed: u64) -> Result<AlgNN> {
    let words = cfg.taps_mode.words(shifts.num_generators(), cfg.taps);
    let specs = (0..cfg.layers)
        .map(|l| LayerSpec {
            shifts: shifts.clone(),
            words: words.clone(),
            f_in: if l == 0 { 1 } else { cfg.features },
            f_out: cfg.features,
            nonlinearity: arch.nonlinearity(),
            pooling: Pooling::Identity,
        })
        .collect();
    AlgNN::init(specs, 1, seed)
}

pub fn train_architecture(arch: Architecture, split: &Split, cfg: &ExperimentConfig) -> Result<(AlgNN, TrainHistory)> {
    let mut net = build_network(arch, split.shifts.clone(), cfg, split.seed)?;
    let history = train(&mut net, &split.train_samples, &cfg.train_config(arch, split.seed))?;
    Ok((net, history))
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub arch: Architecture,
    pub fraction: f64,
    pub seed: u64,
    /// Test RMSE on the multigraph the network was trained with.
    pub rmse_train: f64,
    /// Test RMSE with the re-estimated rating shift.
    pub rmse_eval: f64,
    pub delta: f64,
    /// `‖S − S̃‖₂` of the rating shift (not part of the CSV).
    #[serde(skip)]
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub fraction: f64,
    pub median_delta: f64,
    pub q25_delta: f64,
    pub q75_delta: f64,
    pub min_delta: f64,
    pub max_delta: f64,
    pub median_rmse_eval: f64,
    pub median_shift_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSummary {
    pub arch: Architecture,
    pub median_final_train_mse: f64,
    pub median_max_l1: f64,
    pub fractions: Vec<FractionSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub architectures: Vec<ArchitectureSummary>,
    /// Fractions below 1 where the penalized network's median delta does not
    /// exceed the unpenalized one.
    pub il_not_worse_fractions: usize,
    pub compared_fractions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub users: usize,
    pub items: usize,
    pub missing_fraction: f64,
    pub edge_classes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<RunRow>,
    pub summary: ExperimentSummary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let table = load_table(cfg)?;
    run_experiment_on(&table, cfg)
}

pub fn run_experiment_on(table: &RatingsTable, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let spec = cfg.multigraph_spec();
    let mut rows = Vec::new();
    let mut train_mse: Vec<(Architecture, f64, f64)> = Vec::new();
    for &seed in &cfg.seeds {
        let split = prepare_split(table, cfg, seed)?;
        let estimates = estimation_protocol(table, &split.base_users, &split.shifts, &cfg.fractions, &[seed], &spec)?;
        for &arch in &cfg.architectures {
            let (net, history) = train_architecture(arch, &split, cfg)?;
            let final_mse = history.loss.last().copied().unwrap_or(f64::NAN);
            train_mse.push((arch, final_mse, net.max_l1()?));
            let rmse_train = evaluate_rmse(&net, &split.test_samples)?;
            info!(
                "seed {seed} {}: train mse {final_mse:.4}, test rmse {rmse_train:.4}",
                arch.name()
            );
            for est in &estimates {
                let perturbed = Arc::new(est.shifts.clone());
                let moved = net.with_shifts(vec![perturbed; net.layers().len()])?;
                let rmse_eval = evaluate_rmse(&moved, &split.test_samples)?;
                rows.push(RunRow {
                    arch,
                    fraction: est.fraction,
                    seed,
                    rmse_train,
                    rmse_eval,
                    delta: (rmse_eval - rmse_train).abs(),
                    deviation: est.deviation,
                });
            }
        }
    }
    let summary = summarize(table, cfg, &rows, &train_mse);
    Ok(ExperimentOutput { rows, summary })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile(&sorted(values.to_vec()), 0.5)
}

fn summarize(
    table: &RatingsTable,
    cfg: &ExperimentConfig,
    rows: &[RunRow],
    train_mse: &[(Architecture, f64, f64)],
) -> ExperimentSummary {
    let mut fractions: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let architectures: Vec<ArchitectureSummary> = cfg
        .architectures
        .iter()
        .map(|&arch| {
            let per_fraction = fractions
                .iter()
                .map(|&f| {
                    let sel: Vec<&RunRow> = rows.iter().filter(|r| r.arch == arch && r.fraction == f).collect();
                    let d = sorted(sel.iter().map(|r| r.delta).collect());
                    FractionSummary {
                        fraction: f,
                        median_delta: quantile(&d, 0.5),
                        q25_delta: quantile(&d, 0.25),
                        q75_delta: quantile(&d, 0.75),
                        min_delta: d.first().copied().unwrap_or(f64::NAN),
                        max_delta: d.last().copied().unwrap_or(f64::NAN),
                        median_rmse_eval: median(&sel.iter().map(|r| r.rmse_eval).collect::<Vec<_>>()),
                        median_shift_deviation: median(&sel.iter().map(|r| r.deviation).collect::<Vec<_>>()),
                    }
                })
                .collect();
            let mine: Vec<&(Architecture, f64, f64)> = train_mse.iter().filter(|t| t.0 == arch).collect();
            ArchitectureSummary {
                arch,
                median_final_train_mse: median(&mine.iter().map(|t| t.1).collect::<Vec<_>>()),
                median_max_l1: median(&mine.iter().map(|t| t.2).collect::<Vec<_>>()),
                fractions: per_fraction,
            }
        })
        .collect();

    let find = |a: Architecture| architectures.iter().find(|s| s.arch == a);
    let (mut not_worse, mut compared) = (0, 0);
    if let (Some(il), Some(plain)) = (find(Architecture::MgnnIl), find(Architecture::Mgnn)) {
        for (a, b) in il.fractions.iter().zip(&plain.fractions) {
            if a.fraction < 1.0 {
                compared += 1;
                not_worse += usize::from(a.median_delta <= b.median_delta);
            }
        }
    }

    let mut edge_classes = vec!["rating_pearson".to_string()];
    if table.item_features().is_some() {
        edge_classes.push("feature_cosine".to_string());
    }
    ExperimentSummary {
        version: crate::VERSION.to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        config: cfg.clone(),
        dataset: DatasetInfo {
            source: if cfg.ratings_csv.is_some() { "csv" } else { "synthetic" }.to_string(),
            users: table.num_users(),
            items: table.num_items(),
            missing_fraction: table.missing_fraction(),
            edge_classes,
        },
        architectures,
        il_not_worse_fractions: not_worse,
        compared_fractions: compared,
    }
}

pub const CSV_HEADER: &str = "arch,fraction,seed,rmse_train,rmse_eval,delta";

/// Results table with the fixed column order, LF line endings.
pub fn render_csv(rows: &[RunRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.arch.name(),
            r.fraction,
            r.seed,
            r.rmse_train,
            r.rmse_eval,
            r.delta
        );
    }
    out
}

pub fn render_summary(summary: &ExperimentSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_items: 12,
            n_users: 80,
            k: 4,
            features: 2,
            layers: 1,
            epochs: 3,
            fractions: vec![0.5, 1.0],
            seeds: vec![0, 1],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn csv_layout_and_zero_delta_at_full_fraction() {
        let out = run_experiment(&tiny()).unwrap();
        let csv = render_csv(&out.rows);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
        for r in out.rows.iter().filter(|r| r.fraction == 1.0) {
            assert_eq!(r.delta, 0.0);
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let a = run_experiment(&tiny()).unwrap();
        let b = run_experiment(&tiny()).unwrap();
        assert_eq!(render_csv(&a.rows), render_csv(&b.rows));
        assert_eq!(render_summary(&a.summary), render_summary(&b.summary));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.il_weight += 1.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"epochz": 3}"#);
        assert!(err.is_err());
        let ok: ExperimentConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(ok.epochs, 3);
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("gnn".parse::<Architecture>().is_err());
    }
}
