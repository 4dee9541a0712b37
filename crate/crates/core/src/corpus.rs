//! Dataset wire format, loading/validation and the user-news interaction matrix.
//!
//! A corpus is four line-delimited JSON files:
//!
//! | file                 | record                                                       |
//! |----------------------|--------------------------------------------------------------|
//! | `news.jsonl`         | `{"id", "text", "label": 0 \| 1}`                             |
//! | `comments.jsonl`     | `{"news_id", "text"}`, one comment per line                  |
//! | `users.jsonl`        | `{"user_id", "total_activity_count", "account_age_days", "observable"}` |
//! | `interactions.jsonl` | `{"user_id", "news_id"}`, one repost per line                |
//!
//! Loading normalizes ordering (news and users sorted by id, events sorted by
//! `(news_id, user_id)`), so everything downstream is independent of file order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::participation::{Profiles, UserGroup};

pub const NEWS_FILE: &str = "news.jsonl";
pub const COMMENTS_FILE: &str = "comments.jsonl";
pub const USERS_FILE: &str = "users.jsonl";
pub const INTERACTIONS_FILE: &str = "interactions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewsArticle {
    pub id: String,
    pub text: String,
    pub label: Label,
}

/// One line of `comments.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommentRecord {
    pub news_id: String,
    pub text: String,
}

/// All comments attached to one news item, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommentSet {
    pub news_id: String,
    pub comments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub user_id: String,
    pub total_activity_count: u64,
    pub account_age_days: u64,
    /// False for deleted or suspended accounts; such users never get a matrix column.
    pub observable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub user_id: String,
    pub news_id: String,
}

/// A validated corpus. Every field is in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    /// Sorted by id.
    pub news: Vec<NewsArticle>,
    /// One entry per news item (possibly empty), aligned with `news`.
    pub comments: Vec<CommentSet>,
    /// Sorted by user id; includes unobservable users.
    pub users: Vec<UserRecord>,
    /// Deduplicated, sorted by `(news_id, user_id)`, observable users only.
    pub interactions: Vec<InteractionEvent>,
}

/// What loading discarded on the way to a valid corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub events_read: usize,
    pub duplicate_events: usize,
    pub dropped_unknown_user: usize,
    pub dropped_unobservable_user: usize,
}

impl LoadReport {
    pub fn dropped(&self) -> usize {
        self.dropped_unknown_user + self.dropped_unobservable_user
    }
}

/// Paths of the four corpus files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub news: PathBuf,
    pub comments: PathBuf,
    pub users: PathBuf,
    pub interactions: PathBuf,
}

impl CorpusPaths {
    /// The standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        CorpusPaths {
            news: dir.join(NEWS_FILE),
            comments: dir.join(COMMENTS_FILE),
            users: dir.join(USERS_FILE),
            interactions: dir.join(INTERACTIONS_FILE),
        }
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file =
        File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn offenders_message(what: &str, mut ids: Vec<String>) -> String {
    ids.sort();
    ids.dedup();
    const SHOWN: usize = 20;
    let more = ids.len().saturating_sub(SHOWN);
    ids.truncate(SHOWN);
    let mut msg = format!("{what}: {}", ids.join(", "));
    if more > 0 {
        msg.push_str(&format!(" (+{more} more)"));
    }
    msg
}

/// Load and validate a corpus from its four files.
pub fn load_corpus(paths: &CorpusPaths) -> Result<(Corpus, LoadReport)> {
    let news: Vec<NewsArticle> = read_jsonl(&paths.news)?;
    let comments: Vec<CommentRecord> = read_jsonl(&paths.comments)?;
    let users: Vec<UserRecord> = read_jsonl(&paths.users)?;
    let events: Vec<InteractionEvent> = read_jsonl(&paths.interactions)?;
    Corpus::from_records(news, comments, users, events)
}

impl Corpus {
    /// Validate raw records and bring them into canonical form.
    pub fn from_records(
        mut news: Vec<NewsArticle>,
        comments: Vec<CommentRecord>,
        mut users: Vec<UserRecord>,
        events: Vec<InteractionEvent>,
    ) -> Result<(Corpus, LoadReport)> {
        news.sort_by(|a, b| a.id.cmp(&b.id));
        let dup_news: Vec<String> = news
            .windows(2)
            .filter(|w| w[0].id == w[1].id)
            .map(|w| w[0].id.clone())
            .collect();
        if !dup_news.is_empty() {
            return Err(Error::Validation(offenders_message(
                "duplicate news ids",
                dup_news,
            )));
        }

        users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        let dup_users: Vec<String> = users
            .windows(2)
            .filter(|w| w[0].user_id == w[1].user_id)
            .map(|w| w[0].user_id.clone())
            .collect();
        if !dup_users.is_empty() {
            return Err(Error::Validation(offenders_message(
                "duplicate user ids",
                dup_users,
            )));
        }
        let zero_age: Vec<String> = users
            .iter()
            .filter(|u| u.account_age_days == 0)
            .map(|u| u.user_id.clone())
            .collect();
        if !zero_age.is_empty() {
            return Err(Error::Validation(offenders_message(
                "account_age_days must be >= 1 for users",
                zero_age,
            )));
        }

        let news_pos: HashMap<&str, usize> = news
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();

        let mut comment_sets: Vec<CommentSet> = news
            .iter()
            .map(|n| CommentSet {
                news_id: n.id.clone(),
                comments: Vec::new(),
            })
            .collect();
        let mut dangling_comments = Vec::new();
        for c in comments {
            match news_pos.get(c.news_id.as_str()) {
                Some(&i) => comment_sets[i].comments.push(c.text),
                None => dangling_comments.push(c.news_id),
            }
        }
        if !dangling_comments.is_empty() {
            return Err(Error::Validation(offenders_message(
                "comments reference unknown news ids",
                dangling_comments,
            )));
        }

        let dangling_events: Vec<String> = events
            .iter()
            .filter(|e| !news_pos.contains_key(e.news_id.as_str()))
            .map(|e| e.news_id.clone())
            .collect();
        if !dangling_events.is_empty() {
            return Err(Error::Validation(offenders_message(
                "interactions reference unknown news ids",
                dangling_events,
            )));
        }

        let observable: HashMap<&str, bool> = users
            .iter()
            .map(|u| (u.user_id.as_str(), u.observable))
            .collect();
        let mut report = LoadReport {
            events_read: events.len(),
            ..LoadReport::default()
        };
        let mut kept = BTreeSet::new();
        for e in events {
            match observable.get(e.user_id.as_str()) {
                None => report.dropped_unknown_user += 1,
                Some(false) => report.dropped_unobservable_user += 1,
                Some(true) => {
                    if !kept.insert((e.news_id, e.user_id)) {
                        report.duplicate_events += 1;
                    }
                }
            }
        }
        let interactions = kept
            .into_iter()
            .map(|(news_id, user_id)| InteractionEvent { user_id, news_id })
            .collect();

        Ok((
            Corpus {
                news,
                comments: comment_sets,
                users,
                interactions,
            },
            report,
        ))
    }

    /// Write the corpus back out in the four-file wire format.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CorpusPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let paths = CorpusPaths::in_dir(dir);
        write_jsonl(&paths.news, &self.news)?;
        let comment_records: Vec<CommentRecord> = self
            .comments
            .iter()
            .flat_map(|set| {
                set.comments.iter().map(|text| CommentRecord {
                    news_id: set.news_id.clone(),
                    text: text.clone(),
                })
            })
            .collect();
        write_jsonl(&paths.comments, &comment_records)?;
        write_jsonl(&paths.users, &self.users)?;
        write_jsonl(&paths.interactions, &self.interactions)?;
        Ok(paths)
    }

    pub fn news_index(&self, id: &str) -> Option<usize> {
        self.news.binary_search_by(|n| n.id.as_str().cmp(id)).ok()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.news.iter().map(|n| n.label).collect()
    }

    pub fn observable_users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.iter().filter(|u| u.observable)
    }

    pub fn comment_count(&self) -> usize {
        self.comments.iter().map(|c| c.comments.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Binary,
    Weighted,
}

/// Sparse news × user matrix in compressed-row form.
///
/// Rows are news in sorted id order, columns observable users in sorted id
/// order. Column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    kind: MatrixKind,
    news_ids: Vec<String>,
    user_ids: Vec<String>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl InteractionMatrix {
    /// Binary matrix from the retained events of a corpus.
    pub fn binary(corpus: &Corpus) -> Self {
        let news_ids: Vec<String> = corpus.news.iter().map(|n| n.id.clone()).collect();
        let user_ids: Vec<String> = corpus.observable_users().map(|u| u.user_id.clone()).collect();
        let user_col: HashMap<&str, usize> = user_ids
            .iter()
            .enumerate()
            .map(|(j, u)| (u.as_str(), j))
            .collect();

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); news_ids.len()];
        for e in &corpus.interactions {
            // Both lookups succeed on a validated corpus.
            if let (Some(i), Some(&j)) = (corpus.news_index(&e.news_id), user_col.get(e.user_id.as_str())) {
                rows[i].push(j);
            }
        }

        let mut row_ptr = Vec::with_capacity(news_ids.len() + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        let values = vec![1.0; cols.len()];
        InteractionMatrix {
            kind: MatrixKind::Binary,
            news_ids,
            user_ids,
            row_ptr,
            cols,
            values,
        }
    }

    /// Copy of this matrix with every stored entry of row `i` replaced by `row_value(i)`.
    pub(crate) fn with_row_values(&self, row_value: impl Fn(usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n_news() {
            let v = row_value(i);
            values.extend(std::iter::repeat_n(v, self.row_ptr[i + 1] - self.row_ptr[i]));
        }
        InteractionMatrix {
            kind: MatrixKind::Weighted,
            values,
            ..self.clone()
        }
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n_news(&self) -> usize {
        self.news_ids.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_news(), self.n_users())
    }

    pub fn news_ids(&self) -> &[String] {
        &self.news_ids
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Column indices and values of the stored entries in row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[span.clone()], &self.values[span])
    }

    pub fn row_of(&self, news_id: &str) -> Option<usize> {
        self.news_ids.binary_search_by(|n| n.as_str().cmp(news_id)).ok()
    }

    pub fn col_of(&self, user_id: &str) -> Option<usize> {
        self.user_ids.binary_search_by(|u| u.as_str().cmp(user_id)).ok()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_users()];
        let (cols, vals) = self.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            out[j] = v;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n_news()).map(|i| self.dense_row(i)).collect()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Write the stored entries as `news_id,user_id,weight` CSV.
    pub fn write_triplets(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "news_id,user_id,weight")?;
        for i in 0..self.n_news() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{},{},{}", self.news_ids[i], self.user_ids[j], v)?;
            }
        }
        Ok(())
    }
}

/// Convenience alias for [`InteractionMatrix::binary`].
pub fn build_interaction_matrix(corpus: &Corpus) -> InteractionMatrix {
    InteractionMatrix::binary(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NewsCounts {
    pub real: usize,
    pub fake: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InteractionCounts {
    pub lurkers: usize,
    pub engagers: usize,
    pub contributors: usize,
    pub total: usize,
}

/// Dataset statistics in the row structure of the usual dataset summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub news: NewsCounts,
    pub interactions: InteractionCounts,
    pub comments: usize,
}

pub fn corpus_stats(corpus: &Corpus, profiles: &Profiles) -> StatsReport {
    let mut news = NewsCounts::default();
    for n in &corpus.news {
        match n.label {
            Label::Real => news.real += 1,
            Label::Fake => news.fake += 1,
        }
    }
    news.total = corpus.news.len();

    let mut interactions = InteractionCounts::default();
    for e in &corpus.interactions {
        match profiles.group_of(&e.user_id) {
            Some(UserGroup::Lurker) => interactions.lurkers += 1,
            Some(UserGroup::Engager) => interactions.engagers += 1,
            Some(UserGroup::Contributor) => interactions.contributors += 1,
            None => continue,
        }
        interactions.total += 1;
    }

    StatsReport {
        news,
        interactions,
        comments: corpus.comment_count(),
    }
}

/// Per-news comment lists keyed by news id, for callers that want map access.
pub fn comments_by_news(corpus: &Corpus) -> BTreeMap<&str, &[String]> {
    corpus
        .comments
        .iter()
        .map(|c| (c.news_id.as_str(), c.comments.as_slice()))
        .collect()
}
