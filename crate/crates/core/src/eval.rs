//! Holdout splits and the four-condition experiment grid.
//!
//! A grid cell is `(condition, alpha, seed)`. Per seed the corpus is split
//! (stratified by label), the IDF table is fitted on the training news, and
//! every condition trains with the same model seed. Cells are independent
//! and may run concurrently; results are merged by key, never by completion
//! order, so the table is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, InteractionMatrix, Label};
use crate::encode::{self, EmbeddingVector, EncoderConfig, NewsEncoding, TokenizedNews};
use crate::error::{Error, Result};
use crate::model::{self, FeatureRow, TrainConfig, TrainMode, TrainSet};
use crate::par::Execution;
use crate::participation::{self, Profiles, Thresholds};
use crate::weighting::{self, NormScope, WeightVector, WeightingConfig};

/// Split `labels` into two index sets, the first of size `first_size`, with
/// each class represented in proportion (largest-remainder rounding).
pub fn stratified_partition(
    labels: &[Label],
    first_size: usize,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let first_size = first_size.min(n);
    let mut classes: Vec<Vec<usize>> = [Label::Real, Label::Fake]
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    for c in &mut classes {
        c.shuffle(rng);
    }

    let mut quota: Vec<usize> = Vec::with_capacity(2);
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(2);
    for (ci, c) in classes.iter().enumerate() {
        // exact share = first_size·|c| / n, kept as an integer quotient and remainder
        let num = first_size as u128 * c.len() as u128;
        let q = if n == 0 { 0 } else { (num / n as u128) as usize };
        quota.push(q);
        remainders.push((if n == 0 { 0 } else { num % n as u128 }, ci));
    }
    let mut left = first_size - quota.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, ci) in &remainders {
        if left == 0 {
            break;
        }
        if quota[ci] < classes[ci].len() {
            quota[ci] += 1;
            left -= 1;
        }
    }

    let mut first = Vec::with_capacity(first_size);
    let mut second = Vec::with_capacity(n - first_size);
    for (c, &q) in classes.iter().zip(&quota) {
        first.extend_from_slice(&c[..q]);
        second.extend_from_slice(&c[q..]);
    }
    (first, second)
}

/// Row indices (into `corpus.news`) of a seeded stratified holdout split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_rows(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let labels = corpus.labels();
    for c in [Label::Real, Label::Fake] {
        if !labels.contains(&c) {
            return Err(Error::Validation(format!(
                "cannot stratify: no news labelled {}",
                u8::from(c)
            )));
        }
    }
    let train_size = (ratio * labels.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = stratified_partition(&labels, train_size, &mut rng);
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Seeded stratified split returning news ids.
pub fn split(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let s = split_rows(corpus, ratio, seed)?;
    let ids = |rows: &[usize]| rows.iter().map(|&i| corpus.news[i].id.clone()).collect();
    Ok((ids(&s.train), ids(&s.test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Text and comments only; the UN row is all zero.
    TextOnly,
    BinaryUn,
    EdgeReweight,
    SampleReweight,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::TextOnly,
        Condition::BinaryUn,
        Condition::EdgeReweight,
        Condition::SampleReweight,
    ];

    pub fn uses_alpha(self) -> bool {
        matches!(self, Condition::EdgeReweight | Condition::SampleReweight)
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::TextOnly => "text_only",
            Condition::BinaryUn => "binary_un",
            Condition::EdgeReweight => "edge_reweight",
            Condition::SampleReweight => "sample_reweight",
        }
    }

    pub fn train_mode(self) -> TrainMode {
        match self {
            Condition::TextOnly | Condition::BinaryUn => TrainMode::BinaryUn,
            Condition::EdgeReweight => TrainMode::EdgeReweight,
            Condition::SampleReweight => TrainMode::SampleReweight,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown condition `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub conditions: Vec<Condition>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub split_ratio: f64,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            conditions: Condition::ALL.to_vec(),
            alphas: vec![0.5, 1.0],
            seeds: vec![0, 1, 2, 3, 4],
            split_ratio: 0.75,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Config("grid needs at least one condition".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one seed".into()));
        }
        if self.conditions.iter().any(|c| c.uses_alpha()) && self.alphas.is_empty() {
            return Err(Error::Config("re-weighting conditions need at least one alpha".into()));
        }
        for &a in &self.alphas {
            weighting::validate_alpha(a)?;
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        Ok(())
    }

    /// `(condition, alpha)` pairs in table order; alpha-free conditions appear once.
    pub fn cells(&self) -> Vec<(Condition, Option<f64>)> {
        let mut out = Vec::new();
        for &c in &self.conditions {
            if c.uses_alpha() {
                out.extend(self.alphas.iter().map(|&a| (c, Some(a))));
            } else {
                out.push((c, None));
            }
        }
        out
    }
}

/// Everything besides the grid that a run needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineSettings {
    pub thresholds: Thresholds,
    pub weighting: WeightingConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

/// Corpus-level artifacts shared by every seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub matrix: InteractionMatrix,
    pub profiles: Profiles,
    pub omega: Vec<f64>,
    pub tokenized: Vec<TokenizedNews>,
    pub labels: Vec<Label>,
}

impl Prepared {
    pub fn new(corpus: &Corpus, settings: &PipelineSettings, exec: Execution) -> Result<Self> {
        let matrix = InteractionMatrix::binary(corpus);
        let profiles = Profiles::compute(corpus, &settings.thresholds, exec);
        let omega = weighting::omega_per_row(&matrix, &profiles, &settings.weighting.coefficients)?;
        Ok(Prepared {
            tokenized: encode::tokenize_corpus(corpus, exec),
            labels: corpus.labels(),
            matrix,
            profiles,
            omega,
        })
    }
}

/// Per-seed artifacts: split, text encodings and edge-reweighted matrices.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub split: Split,
    pub encodings: Vec<NewsEncoding>,
}

impl SeedArtifacts {
    pub fn new(
        corpus: &Corpus,
        prepared: &Prepared,
        settings: &PipelineSettings,
        ratio: f64,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        let split = split_rows(corpus, ratio, seed)?;
        let idf = encode::fit_idf(&prepared.tokenized, &split.train, settings.encoder.dim);
        let encodings = encode::encode_all(&prepared.tokenized, &idf, exec);
        Ok(SeedArtifacts { seed, split, encodings })
    }
}

/// Silence scores with the norm taken over the configured scope.
pub fn scoped_weights(prepared: &Prepared, w: &WeightingConfig, alpha: f64, train_rows: &[usize]) -> WeightVector {
    match w.norm_scope {
        NormScope::Train => {
            WeightVector::with_norm_over(prepared.omega.clone(), alpha, w.norm_kind, train_rows)
        }
        NormScope::All => WeightVector::new(prepared.omega.clone(), alpha, w.norm_kind),
    }
}

fn matrix_row(matrix: &InteractionMatrix, i: usize) -> EmbeddingVector {
    let (cols, vals) = matrix.row(i);
    EmbeddingVector::from_pairs(matrix.n_users(), cols.iter().map(|&j| j as u32).zip(vals.iter().copied()))
        .expect("matrix columns are in range")
}

/// Feature rows for `rows` using `un_matrix` (or zero UN rows when `None`).
pub fn feature_rows(
    encodings: &[NewsEncoding],
    un_matrix: Option<&InteractionMatrix>,
    n_users: usize,
    rows: &[usize],
) -> Vec<FeatureRow> {
    rows.iter()
        .map(|&i| FeatureRow {
            z_news: encodings[i].news.clone(),
            z_comments: encodings[i].comments.clone(),
            un_row: match un_matrix {
                Some(m) => matrix_row(m, i),
                None => EmbeddingVector::zeros(n_users),
            },
        })
        .collect()
}

/// Outcome of one `(condition, alpha, seed)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub condition: Condition,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub test_accuracy: f64,
    pub log: model::TrainLog,
}

/// Train and evaluate a single cell.
pub fn run_cell(
    prepared: &Prepared,
    seed_art: &SeedArtifacts,
    settings: &PipelineSettings,
    condition: Condition,
    alpha: Option<f64>,
) -> Result<CellResult> {
    train_cell(prepared, seed_art, settings, condition, alpha).map(|t| t.result)
}

/// A trained cell together with its parameters and effective training config.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub result: CellResult,
    pub params: model::ModelParams,
    pub config: TrainConfig,
}

/// Like [`run_cell`], keeping the trained parameters.
///
/// The training seed is `settings.train.seed + seed_art.seed`.
pub fn train_cell(
    prepared: &Prepared,
    seed_art: &SeedArtifacts,
    settings: &PipelineSettings,
    condition: Condition,
    alpha: Option<f64>,
) -> Result<TrainedCell> {
    let n_users = prepared.matrix.n_users();
    let split = &seed_art.split;
    let edge_matrix;
    let un_matrix = match condition {
        Condition::TextOnly => None,
        Condition::BinaryUn | Condition::SampleReweight => Some(&prepared.matrix),
        Condition::EdgeReweight => {
            let wv = scoped_weights(prepared, &settings.weighting, alpha.unwrap_or(0.0), &split.train);
            edge_matrix = weighting::edge_reweight(&prepared.matrix, &wv)?;
            Some(&edge_matrix)
        }
    };
    let train_rows = feature_rows(&seed_art.encodings, un_matrix, n_users, &split.train);
    let test_rows = feature_rows(&seed_art.encodings, un_matrix, n_users, &split.test);
    let train_labels: Vec<Label> = split.train.iter().map(|&i| prepared.labels[i]).collect();
    let test_labels: Vec<Label> = split.test.iter().map(|&i| prepared.labels[i]).collect();
    let train_omega: Vec<f64> = split.train.iter().map(|&i| prepared.omega[i]).collect();

    let cfg = TrainConfig {
        mode: condition.train_mode(),
        alpha: alpha.unwrap_or(0.0),
        seed: settings.train.seed.wrapping_add(seed_art.seed),
        norm_kind: settings.weighting.norm_kind,
        ..settings.train
    };
    let data = TrainSet {
        rows: &train_rows,
        labels: &train_labels,
        omega: &train_omega,
    };
    let (params, log) = model::train(&data, &cfg)?;
    let test_accuracy = model::evaluate(&params, &test_rows, &test_labels)?;
    Ok(TrainedCell {
        result: CellResult {
            condition,
            alpha,
            seed: seed_art.seed,
            test_accuracy,
            log,
        },
        params,
        config: cfg,
    })
}

/// Every cell of the grid, keyed by `(cell index, seed index)`.
pub fn run_cells(
    corpus: &Corpus,
    grid: &ExperimentGrid,
    settings: &PipelineSettings,
    exec: Execution,
) -> Result<Vec<CellResult>> {
    grid.validate()?;
    settings.train.validate()?;
    settings.weighting.validate()?;
    settings.encoder.validate()?;
    settings.thresholds.validate()?;

    let prepared = Prepared::new(corpus, settings, exec)?;
    let seeds = exec.try_map(&grid.seeds, |&s| {
        SeedArtifacts::new(corpus, &prepared, settings, grid.split_ratio, s, Execution::Sequential)
    })?;

    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    let results = exec.try_map(&jobs, |&(c, s)| {
        let (condition, alpha) = cells[c];
        run_cell(&prepared, &seeds[s], settings, condition, alpha)
    })?;
    Ok(results)
}

/// Aggregated accuracy of one `(condition, alpha)` pair over the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: Condition,
    pub alpha: Option<f64>,
    pub seed_count: usize,
    pub mean_acc: f64,
    /// Population standard deviation (0 for a single seed).
    pub std_acc: f64,
    /// `mean_acc − mean_acc(binary_un)`; absent when the grid has no binary_un condition.
    pub gain_vs_binary_un: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const RESULT_CSV_HEADER: &str = "condition,alpha,seed_count,mean_acc,std_acc,gain_vs_binary_un";

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ResultTable {
    /// Aggregate cell results in grid order.
    pub fn from_cells(grid: &ExperimentGrid, cells: &[CellResult]) -> Self {
        let mut by_key: BTreeMap<(usize, u64), f64> = BTreeMap::new();
        let order = grid.cells();
        for c in cells {
            if let Some(k) = order.iter().position(|&(cond, a)| cond == c.condition && a == c.alpha) {
                by_key.insert((k, c.seed), c.test_accuracy);
            }
        }
        let mut rows: Vec<ResultRow> = order
            .iter()
            .enumerate()
            .map(|(k, &(condition, alpha))| {
                let accs: Vec<f64> = grid
                    .seeds
                    .iter()
                    .filter_map(|s| by_key.get(&(k, *s)).copied())
                    .collect();
                let (mean_acc, std_acc) = mean_std(&accs);
                ResultRow {
                    condition,
                    alpha,
                    seed_count: accs.len(),
                    mean_acc,
                    std_acc,
                    gain_vs_binary_un: None,
                }
            })
            .collect();
        let baseline = rows
            .iter()
            .find(|r| r.condition == Condition::BinaryUn)
            .map(|r| r.mean_acc);
        if let Some(b) = baseline {
            for r in &mut rows {
                r.gain_vs_binary_un = Some(r.mean_acc - b);
            }
        }
        ResultTable { rows }
    }

    pub fn get(&self, condition: Condition, alpha: Option<f64>) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.alpha == alpha)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{RESULT_CSV_HEADER}")?;
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.condition,
                opt(r.alpha),
                r.seed_count,
                r.mean_acc,
                r.std_acc,
                opt(r.gain_vs_binary_un)
            )?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut rows = Vec::new();
        let bad = |line: usize, m: &str| Error::Parse {
            path: "results.csv".into(),
            line,
            message: m.to_string(),
        };
        for (idx, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading result table", e))?;
            if idx == 0 {
                if line.trim() != RESULT_CSV_HEADER {
                    return Err(bad(1, "unexpected header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(idx + 1, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(idx + 1, &e.to_string()));
            let opt = |s: &str| if s == "-" { Ok(None) } else { num(s).map(Some) };
            rows.push(ResultRow {
                condition: f[0].parse().map_err(|_| bad(idx + 1, "unknown condition"))?,
                alpha: opt(f[1])?,
                seed_count: f[2].parse().map_err(|_| bad(idx + 1, "bad seed_count"))?,
                mean_acc: num(f[3])?,
                std_acc: num(f[4])?,
                gain_vs_binary_un: opt(f[5])?,
            });
        }
        Ok(ResultTable { rows })
    }

    /// Plain-text table, one line per `(condition, alpha)`, accuracies in percent.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>6} {:>6} {:>18} {:>10}\n",
            "condition", "alpha", "seeds", "accuracy (%)", "gain (pp)"
        ));
        out.push_str(&format!("{}\n", "-".repeat(60)));
        for r in &self.rows {
            let alpha = r.alpha.map_or("-".to_string(), |a| format!("{a}"));
            let gain = r
                .gain_vs_binary_un
                .map_or("-".to_string(), |g| format!("{:+.2}", 100.0 * g));
            out.push_str(&format!(
                "{:<16} {:>6} {:>6} {:>18} {:>10}\n",
                r.condition.name(),
                alpha,
                r.seed_count,
                format!("{:.2} ± {:.2}", 100.0 * r.mean_acc, 100.0 * r.std_acc),
                gain
            ));
        }
        out
    }
}

/// Per-cell accuracies as `condition,alpha,seed,accuracy,best_epoch`.
pub fn write_cells_csv(cells: &[CellResult], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "condition,alpha,seed,accuracy,best_epoch")?;
    for c in cells {
        let alpha = c.alpha.map_or("-".to_string(), |a| a.to_string());
        writeln!(
            w,
            "{},{},{},{},{}",
            c.condition, alpha, c.seed, c.test_accuracy, c.log.best_epoch
        )?;
    }
    Ok(())
}

/// Run the whole grid and aggregate.
pub fn run_grid(
    corpus: &Corpus,
    grid: &ExperimentGrid,
    settings: &PipelineSettings,
    exec: Execution,
) -> Result<ResultTable> {
    let cells = run_cells(corpus, grid, settings, exec)?;
    Ok(ResultTable::from_cells(grid, &cells))
}

/// Write the ternary composition CSV of a corpus to `out_path`; returns the data row count.
pub fn export_ternary(corpus: &Corpus, profiles: &Profiles, out_path: &Path) -> Result<usize> {
    let matrix = InteractionMatrix::binary(corpus);
    let f = std::fs::File::create(out_path)
        .map_err(|e| Error::io(format!("creating {}", out_path.display()), e))?;
    let mut w = std::io::BufWriter::new(f);
    let n = participation::write_ternary_csv(corpus, &matrix, profiles, &mut w)?;
    w.flush().map_err(|e| Error::io("writing ternary csv", e))?;
    Ok(n)
}
