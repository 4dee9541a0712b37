//! Activity rates and lurker / engager / contributor assignment.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, InteractionMatrix, Label, UserRecord};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::weighting::GroupCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UserGroup {
    #[serde(rename = "L")]
    Lurker,
    #[serde(rename = "E")]
    Engager,
    #[serde(rename = "C")]
    Contributor,
}

impl UserGroup {
    pub const ALL: [UserGroup; 3] = [UserGroup::Lurker, UserGroup::Engager, UserGroup::Contributor];

    pub fn code(self) -> &'static str {
        match self {
            UserGroup::Lurker => "L",
            UserGroup::Engager => "E",
            UserGroup::Contributor => "C",
        }
    }
}

impl fmt::Display for UserGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UserGroup::Lurker => "lurker",
            UserGroup::Engager => "engager",
            UserGroup::Contributor => "contributor",
        })
    }
}

/// Upper activity-rate bounds (activities per day) of the two quiet groups.
///
/// A rate exactly on a bound belongs to the quieter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub lurker_max: f64,
    pub engager_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lurker_max: 0.025,
            engager_max: 0.15,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lurker_max > 0.0 && self.lurker_max < self.engager_max && self.engager_max.is_finite()) {
            return Err(Error::Config(format!(
                "thresholds need 0 < lurker_max < engager_max, got {} and {}",
                self.lurker_max, self.engager_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationProfile {
    pub user_id: String,
    pub rate: f64,
    pub group: UserGroup,
}

/// Average activities per day over the account's lifetime.
pub fn activity_rate(user: &UserRecord) -> f64 {
    user.total_activity_count as f64 / user.account_age_days as f64
}

pub fn categorize_user(rate: f64, t: &Thresholds) -> UserGroup {
    if rate <= t.lurker_max {
        UserGroup::Lurker
    } else if rate <= t.engager_max {
        UserGroup::Engager
    } else {
        UserGroup::Contributor
    }
}

/// Profiles of all observable users, sorted by user id (the matrix column order).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Profiles {
    profiles: Vec<ParticipationProfile>,
    index: HashMap<String, usize>,
}

impl Profiles {
    pub fn compute(corpus: &Corpus, thresholds: &Thresholds, exec: Execution) -> Self {
        let users: Vec<&UserRecord> = corpus.observable_users().collect();
        let profiles = exec.map(&users, |u| {
            let rate = activity_rate(u);
            ParticipationProfile {
                user_id: u.user_id.clone(),
                rate,
                group: categorize_user(rate, thresholds),
            }
        });
        Profiles::from_vec(profiles)
    }

    pub fn from_vec(mut profiles: Vec<ParticipationProfile>) -> Self {
        profiles.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        let index = profiles
            .iter()
            .enumerate()
            .map(|(i, p)| (p.user_id.clone(), i))
            .collect();
        Profiles { profiles, index }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParticipationProfile> {
        self.profiles.iter()
    }

    pub fn get(&self, user_id: &str) -> Option<&ParticipationProfile> {
        self.index.get(user_id).map(|&i| &self.profiles[i])
    }

    pub fn group_of(&self, user_id: &str) -> Option<UserGroup> {
        self.get(user_id).map(|p| p.group)
    }

    pub fn group_sizes(&self) -> GroupCounts {
        let mut c = GroupCounts::default();
        for p in &self.profiles {
            c.add(p.group);
        }
        c
    }

    /// Group of every matrix column, in column order.
    pub fn column_groups(&self, matrix: &InteractionMatrix) -> Result<Vec<UserGroup>> {
        let mut missing = Vec::new();
        let groups: Vec<UserGroup> = matrix
            .user_ids()
            .iter()
            .map(|u| {
                self.group_of(u).unwrap_or_else(|| {
                    missing.push(u.clone());
                    UserGroup::Contributor
                })
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::Contract(format!(
                "{} matrix column(s) have no participation profile (first: {})",
                missing.len(),
                missing[0]
            )));
        }
        Ok(groups)
    }

    /// Emit `profiles.jsonl`: `{"user_id", "rate", "group": "L"|"E"|"C"}` per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for p in &self.profiles {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")
                .map_err(|e| Error::io("writing profiles", e))?;
        }
        Ok(())
    }
}

/// Group counts of the users interacting with one news row.
pub fn row_group_counts(matrix: &InteractionMatrix, groups: &[UserGroup], row: usize) -> GroupCounts {
    let mut c = GroupCounts::default();
    for &j in matrix.row(row).0 {
        c.add(groups[j]);
    }
    c
}

/// Share of a news item's interacting users in each group, kept as exact counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Composition {
    pub counts: GroupCounts,
}

impl Composition {
    pub fn total(&self) -> u64 {
        self.counts.total()
    }

    /// `(lurker, engager, contributor)` fractions; each is `count / total`.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let t = self.total() as f64;
        (
            self.counts.lurkers as f64 / t,
            self.counts.engagers as f64 / t,
            self.counts.contributors as f64 / t,
        )
    }
}

pub fn group_composition(
    news_id: &str,
    matrix: &InteractionMatrix,
    profiles: &Profiles,
) -> Result<Composition> {
    let row = matrix
        .row_of(news_id)
        .ok_or_else(|| Error::Contract(format!("unknown news id `{news_id}`")))?;
    let groups = profiles.column_groups(matrix)?;
    composition_of_row(matrix, &groups, row)
}

pub(crate) fn composition_of_row(
    matrix: &InteractionMatrix,
    groups: &[UserGroup],
    row: usize,
) -> Result<Composition> {
    let counts = row_group_counts(matrix, groups, row);
    if counts.total() == 0 {
        return Err(Error::UndefinedComposition(matrix.news_ids()[row].clone()));
    }
    Ok(Composition { counts })
}

/// Write the per-news ternary composition CSV.
///
/// News without interactions are skipped and counted in a trailing
/// `# excluded_undefined=<n>` comment line. Returns the number of data rows.
pub fn write_ternary_csv(
    corpus: &Corpus,
    matrix: &InteractionMatrix,
    profiles: &Profiles,
    mut w: impl Write,
) -> Result<usize> {
    let groups = profiles.column_groups(matrix)?;
    let io = |e| Error::io("writing ternary csv", e);
    writeln!(w, "news_id,frac_lurker,frac_engager,frac_contributor,label").map_err(io)?;
    let mut written = 0;
    let mut excluded = 0;
    for (row, news) in corpus.news.iter().enumerate() {
        match composition_of_row(matrix, &groups, row) {
            Ok(c) => {
                let (l, e, cc) = c.fractions();
                writeln!(w, "{},{},{},{},{}", news.id, l, e, cc, u8::from(news.label)).map_err(io)?;
                written += 1;
            }
            Err(Error::UndefinedComposition(_)) => excluded += 1,
            Err(other) => return Err(other),
        }
    }
    writeln!(w, "# excluded_undefined={excluded}").map_err(io)?;
    Ok(written)
}

/// Mean lurker fraction among news of the given label (news without interactions skipped).
pub fn mean_lurker_fraction(
    corpus: &Corpus,
    matrix: &InteractionMatrix,
    profiles: &Profiles,
    label: Label,
) -> Result<Option<f64>> {
    let groups = profiles.column_groups(matrix)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (row, news) in corpus.news.iter().enumerate() {
        if news.label != label {
            continue;
        }
        if let Ok(c) = composition_of_row(matrix, &groups, row) {
            sum += c.fractions().0;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}
