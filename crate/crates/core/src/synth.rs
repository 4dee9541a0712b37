//! Seeded synthetic corpora with a 90-9-1 population and a plantable lurker
//! signal, plus brute-force reference implementations of the weighting.
//!
//! The lurker signal lives in the interaction structure only:
//!
//! ```text
//! p[L, fake] = base[L, fake] + s · scale
//! p[L, real] = base[L, real] + s · scale / 10
//! ```
//!
//! With the defaults (`base[L, ·] = 0`, `scale = 1`) this is `p[L, fake] = s`,
//! `p[L, real] = s / 10`. Engager and contributor probabilities are taken from
//! `interact_prob` as is.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommentRecord, Corpus, InteractionEvent, Label, NewsArticle, UserRecord};
use crate::error::{Error, Result};
use crate::participation::{Profiles, UserGroup};
use crate::weighting::{GroupCoefficients, GroupCounts, NormKind, WeightVector};

/// Closed-open semantics follow the categorizer: the lurker interval is
/// `[lo, hi]`, the others are `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateRanges {
    pub lurker: RateRange,
    pub engager: RateRange,
    pub contributor: RateRange,
}

impl Default for RateRanges {
    fn default() -> Self {
        RateRanges {
            lurker: RateRange { lo: 0.0, hi: 0.025 },
            engager: RateRange { lo: 0.025, hi: 0.15 },
            contributor: RateRange { lo: 0.15, hi: 20.0 },
        }
    }
}

impl RateRanges {
    pub fn get(&self, g: UserGroup) -> RateRange {
        match g {
            UserGroup::Lurker => self.lurker,
            UserGroup::Engager => self.engager,
            UserGroup::Contributor => self.contributor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelProbs {
    pub fake: f64,
    pub real: f64,
}

impl LabelProbs {
    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Fake => self.fake,
            Label::Real => self.real,
        }
    }
}

/// Per-(group, label) interaction probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractProb {
    pub lurker: LabelProbs,
    pub engager: LabelProbs,
    pub contributor: LabelProbs,
}

impl Default for InteractProb {
    fn default() -> Self {
        InteractProb {
            lurker: LabelProbs { fake: 0.0, real: 0.0 },
            engager: LabelProbs { fake: 0.01, real: 0.01 },
            contributor: LabelProbs { fake: 0.05, real: 0.05 },
        }
    }
}

impl InteractProb {
    pub fn get(&self, g: UserGroup, label: Label) -> f64 {
        match g {
            UserGroup::Lurker => self.lurker.get(label),
            UserGroup::Engager => self.engager.get(label),
            UserGroup::Contributor => self.contributor.get(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_news: usize,
    pub n_users: usize,
    /// Lurker, engager, contributor shares.
    pub group_fractions: [f64; 3],
    pub fake_fraction: f64,
    pub rate_ranges: RateRanges,
    /// Base probabilities; the lurker entries are shifted by the signal.
    pub interact_prob: InteractProb,
    /// `s` in `[0, 1]`.
    pub lurker_signal: f64,
    pub lurker_signal_scale: f64,
    pub vocab_size: usize,
    pub words_per_news: usize,
    pub comments_per_news: usize,
    pub words_per_comment: usize,
    /// Probability that a news word comes from its label's half of the vocabulary.
    pub text_signal: f64,
    /// Same for comment words.
    pub comment_signal: f64,
    /// Inclusive account age range in days.
    pub age_days: [u64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_news: 500,
            n_users: 1000,
            group_fractions: [0.90, 0.09, 0.01],
            fake_fraction: 0.5,
            rate_ranges: RateRanges::default(),
            interact_prob: InteractProb::default(),
            lurker_signal: 0.9,
            lurker_signal_scale: 1.0,
            vocab_size: 2000,
            words_per_news: 40,
            comments_per_news: 3,
            words_per_comment: 12,
            text_signal: 0.1,
            comment_signal: 0.05,
            age_days: [30, 3650],
            seed: 0,
        }
    }
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

/// Smallest and largest activity count whose rate at `age` lies in the group's interval.
fn count_bounds(g: UserGroup, r: RateRange, age: u64) -> Option<(u64, u64)> {
    let a = age as f64;
    let inside = |c: u64| {
        let rate = c as f64 / a;
        let above = if g == UserGroup::Lurker { rate >= r.lo } else { rate > r.lo };
        above && rate <= r.hi
    };
    let mut lo = (r.lo * a).floor().max(0.0) as u64;
    while lo > 0 && inside(lo - 1) {
        lo -= 1;
    }
    while !inside(lo) && (lo as f64) <= r.hi * a + 1.0 {
        lo += 1;
    }
    if !inside(lo) {
        return None;
    }
    let mut hi = (r.hi * a).floor() as u64;
    while inside(hi + 1) {
        hi += 1;
    }
    while hi > lo && !inside(hi) {
        hi -= 1;
    }
    Some((lo, hi))
}

impl SynthConfig {
    /// Probabilities after planting the lurker signal.
    pub fn effective_probs(&self) -> InteractProb {
        let mut p = self.interact_prob;
        let s = self.lurker_signal * self.lurker_signal_scale;
        p.lurker.fake += s;
        p.lurker.real += s / 10.0;
        p
    }

    /// Largest-remainder rounding of `group_fractions` to `n_users`.
    pub fn group_sizes(&self) -> [usize; 3] {
        let v = largest_remainder(self.n_users, &self.group_fractions);
        [v[0], v[1], v[2]]
    }

    pub fn n_fake(&self) -> usize {
        largest_remainder(self.n_news, &[1.0 - self.fake_fraction, self.fake_fraction])[1]
    }

    /// Expected number of emitted interactions.
    pub fn expected_interactions(&self) -> f64 {
        let sizes = self.group_sizes();
        let p = self.effective_probs();
        let n_fake = self.n_fake() as f64;
        let n_real = self.n_news as f64 - n_fake;
        UserGroup::ALL
            .iter()
            .zip(sizes)
            .map(|(&g, n)| n as f64 * (n_fake * p.get(g, Label::Fake) + n_real * p.get(g, Label::Real)))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_news == 0 || self.n_users == 0 {
            return bad("n_news and n_users must be positive".into());
        }
        if self.group_fractions.iter().any(|&f| !is_prob(f))
            || (self.group_fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("group_fractions must be in [0, 1] and sum to 1, got {:?}", self.group_fractions));
        }
        if !is_prob(self.fake_fraction) {
            return bad(format!("fake_fraction must be in [0, 1], got {}", self.fake_fraction));
        }
        if !is_prob(self.lurker_signal) {
            return bad(format!("lurker_signal must be in [0, 1], got {}", self.lurker_signal));
        }
        if !(self.lurker_signal_scale >= 0.0 && self.lurker_signal_scale.is_finite()) {
            return bad("lurker_signal_scale must be finite and >= 0".into());
        }
        let p = self.effective_probs();
        for g in UserGroup::ALL {
            for l in [Label::Fake, Label::Real] {
                if !is_prob(p.get(g, l)) {
                    return bad(format!("interaction probability for {g} is {} (outside [0, 1])", p.get(g, l)));
                }
            }
        }
        if !is_prob(self.text_signal) || !is_prob(self.comment_signal) {
            return bad("text_signal and comment_signal must be in [0, 1]".into());
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2".into());
        }
        let [amin, amax] = self.age_days;
        if amin == 0 || amin > amax {
            return bad(format!("age_days must satisfy 1 <= min <= max, got {:?}", self.age_days));
        }
        let sizes = self.group_sizes();
        for (g, n) in UserGroup::ALL.into_iter().zip(sizes) {
            let r = self.rate_ranges.get(g);
            if !(r.lo >= 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                return bad(format!("invalid rate range for {g}: {:?}", r));
            }
            if n > 0 && (amin..=amax).any(|a| count_bounds(g, r, a).is_none()) {
                return bad(format!("rate range for {g} has no integer activity count for some ages in {amin}..={amax}"));
            }
        }
        if self.expected_interactions() <= 0.0 {
            return bad("expected number of interactions is zero".into());
        }
        Ok(())
    }
}

/// Split `n` by `fractions`: floors first, then the largest remainders (ties by position).
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    // snap products within 1e-9 of an integer so 0.09 · 1000 counts as 90
    let exact: Vec<f64> = fractions
        .iter()
        .map(|f| {
            let e = f * n as f64;
            if (e - e.round()).abs() < 1e-9 { e.round() } else { e }
        })
        .collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        out[k] += 1;
    }
    out
}

fn pad(prefix: char, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// One generated user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUser {
    pub user_id: String,
    pub group: UserGroup,
    pub total_activity_count: u64,
    pub account_age_days: u64,
}

/// Latent draws behind a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: SynthConfig,
    pub effective_interact_prob: InteractProb,
    pub group_sizes: [usize; 3],
    pub users: Vec<SynthUser>,
    pub news_labels: BTreeMap<String, Label>,
    /// Emitted edges per `(group, label)`.
    pub edge_counts: BTreeMap<UserGroup, LabelCounts>,
    pub n_interactions: usize,
    pub n_comments: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub fake: u64,
    pub real: u64,
}

impl GroundTruth {
    pub fn intended_group(&self, user_id: &str) -> Option<UserGroup> {
        self.users
            .binary_search_by(|u| u.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| self.users[i].group)
    }
}

fn draw_words(rng: &mut ChaCha8Rng, n: usize, vocab: usize, label: Label, signal: f64) -> String {
    let half = vocab / 2;
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        let k = if rng.gen::<f64>() < signal {
            match label {
                Label::Fake => rng.gen_range(0..half),
                Label::Real => rng.gen_range(half..vocab),
            }
        } else {
            rng.gen_range(0..vocab)
        };
        words.push(format!("w{k}"));
    }
    words.join(" ")
}

/// Generate a corpus. Single-threaded; the same config gives a bitwise-identical result.
pub fn generate(cfg: &SynthConfig) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = cfg.group_sizes();

    let mut groups: Vec<UserGroup> = UserGroup::ALL
        .iter()
        .zip(sizes)
        .flat_map(|(&g, n)| std::iter::repeat_n(g, n))
        .collect();
    groups.shuffle(&mut rng);

    let [amin, amax] = cfg.age_days;
    let mut synth_users = Vec::with_capacity(cfg.n_users);
    for (i, &g) in groups.iter().enumerate() {
        let age = rng.gen_range(amin..=amax);
        let r = cfg.rate_ranges.get(g);
        let (cmin, cmax) = count_bounds(g, r, age).expect("validated");
        let rate = rng.gen_range(r.lo..=r.hi);
        let count = ((rate * age as f64).round() as u64).clamp(cmin, cmax);
        synth_users.push(SynthUser {
            user_id: pad('u', i, cfg.n_users),
            group: g,
            total_activity_count: count,
            account_age_days: age,
        });
    }

    let n_fake = cfg.n_fake();
    let mut labels: Vec<Label> = (0..cfg.n_news)
        .map(|i| if i < n_fake { Label::Fake } else { Label::Real })
        .collect();
    labels.shuffle(&mut rng);

    let mut news = Vec::with_capacity(cfg.n_news);
    let mut comments = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let id = pad('n', i, cfg.n_news);
        let text = draw_words(&mut rng, cfg.words_per_news, cfg.vocab_size, label, cfg.text_signal);
        for _ in 0..cfg.comments_per_news {
            comments.push(CommentRecord {
                news_id: id.clone(),
                text: draw_words(&mut rng, cfg.words_per_comment, cfg.vocab_size, label, cfg.comment_signal),
            });
        }
        news.push(NewsArticle { id, text, label });
    }

    let probs = cfg.effective_probs();
    let mut edge_counts: BTreeMap<UserGroup, LabelCounts> =
        UserGroup::ALL.iter().map(|&g| (g, LabelCounts::default())).collect();
    let mut events = Vec::new();
    for (article, &label) in news.iter().zip(&labels) {
        for u in &synth_users {
            if rng.gen::<f64>() < probs.get(u.group, label) {
                events.push(InteractionEvent {
                    user_id: u.user_id.clone(),
                    news_id: article.id.clone(),
                });
                let c = edge_counts.get_mut(&u.group).expect("all groups present");
                match label {
                    Label::Fake => c.fake += 1,
                    Label::Real => c.real += 1,
                }
            }
        }
    }

    let users = synth_users
        .iter()
        .map(|u| UserRecord {
            user_id: u.user_id.clone(),
            total_activity_count: u.total_activity_count,
            account_age_days: u.account_age_days,
            observable: true,
        })
        .collect();
    let n_interactions = events.len();
    let n_comments = comments.len();
    let (corpus, _) = Corpus::from_records(news, comments, users, events)?;

    let truth = GroundTruth {
        seed: cfg.seed,
        config: cfg.clone(),
        effective_interact_prob: probs,
        group_sizes: sizes,
        users: synth_users,
        news_labels: corpus.news.iter().map(|n| (n.id.clone(), n.label)).collect(),
        edge_counts,
        n_interactions,
        n_comments,
    };
    Ok((corpus, truth))
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Write the corpus files plus `ground_truth.json` into `dir`.
pub fn write_synthetic(dir: &Path, corpus: &Corpus, truth: &GroundTruth) -> Result<()> {
    corpus.write(dir)?;
    let path = dir.join(GROUND_TRUTH_FILE);
    let f = std::fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, truth)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io("writing ground truth", e))?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Share of lurker edges that point at fake news; `None` without lurker edges.
pub fn lurker_edge_fake_fraction(corpus: &Corpus, profiles: &Profiles) -> Option<f64> {
    let labels: BTreeMap<&str, Label> = corpus.news.iter().map(|n| (n.id.as_str(), n.label)).collect();
    let (mut fake, mut total) = (0u64, 0u64);
    for e in &corpus.interactions {
        if profiles.group_of(&e.user_id) == Some(UserGroup::Lurker) {
            total += 1;
            if labels[e.news_id.as_str()].is_fake() {
                fake += 1;
            }
        }
    }
    (total > 0).then(|| fake as f64 / total as f64)
}

/// Mutual information (nats) between "lurker edge present" and the news
/// label over all `(news, lurker)` pairs.
pub fn lurker_label_mutual_information(corpus: &Corpus, profiles: &Profiles) -> f64 {
    let lurkers = corpus
        .observable_users()
        .filter(|u| profiles.group_of(&u.user_id) == Some(UserGroup::Lurker))
        .count() as f64;
    let labels: BTreeMap<&str, Label> = corpus.news.iter().map(|n| (n.id.as_str(), n.label)).collect();
    let n_fake = corpus.news.iter().filter(|n| n.label.is_fake()).count() as f64;
    let n_real = corpus.news.len() as f64 - n_fake;
    let (mut e_fake, mut e_real) = (0.0, 0.0);
    for e in &corpus.interactions {
        if profiles.group_of(&e.user_id) == Some(UserGroup::Lurker) {
            if labels[e.news_id.as_str()].is_fake() {
                e_fake += 1.0;
            } else {
                e_real += 1.0;
            }
        }
    }
    let total = lurkers * (n_fake + n_real);
    if total == 0.0 {
        return 0.0;
    }
    // joint table over (edge, label)
    let cells = [
        (e_fake, lurkers * n_fake),
        (lurkers * n_fake - e_fake, lurkers * n_fake),
        (e_real, lurkers * n_real),
        (lurkers * n_real - e_real, lurkers * n_real),
    ];
    let edge_marg = [(e_fake + e_real) / total, (total - e_fake - e_real) / total];
    let mut mi = 0.0;
    for (k, &(joint, label_total)) in cells.iter().enumerate() {
        if joint <= 0.0 {
            continue;
        }
        let pxy = joint / total;
        let py = label_total / total;
        let px = edge_marg[k % 2];
        mi += pxy * (pxy / (px * py)).ln();
    }
    mi.max(0.0)
}

/// Reference `ω` and factors by a naive loop over every `(news, user)` pair.
///
/// Shares nothing with the matrix code path beyond the corpus records.
pub fn oracle_weights(
    corpus: &Corpus,
    profiles: &Profiles,
    coeffs: &GroupCoefficients,
    alpha: f64,
    norm: NormKind,
) -> WeightVector {
    let edges: HashSet<(&str, &str)> = corpus
        .interactions
        .iter()
        .map(|e| (e.news_id.as_str(), e.user_id.as_str()))
        .collect();
    let mut omega = Vec::with_capacity(corpus.news.len());
    for n in &corpus.news {
        let mut c = GroupCounts::default();
        for u in corpus.users.iter().filter(|u| u.observable) {
            if edges.contains(&(n.id.as_str(), u.user_id.as_str())) {
                match profiles.group_of(&u.user_id) {
                    Some(UserGroup::Lurker) => c.lurkers += 1,
                    Some(UserGroup::Engager) => c.engagers += 1,
                    Some(UserGroup::Contributor) => c.contributors += 1,
                    None => {}
                }
            }
        }
        let w = coeffs.lurker * c.lurkers as f64
            + coeffs.engager * c.engagers as f64
            + coeffs.contributor * c.contributors as f64;
        omega.push(w);
    }
    let mut size = 0.0f64;
    for &w in &omega {
        match norm {
            NormKind::L2 => size += w * w,
            NormKind::L1 => size += w.abs(),
            NormKind::Max => size = size.max(w.abs()),
        }
    }
    if norm == NormKind::L2 {
        size = size.sqrt();
    }
    if size == 0.0 {
        size = 1.0;
    }
    WeightVector { omega, norm: size, alpha }
}

/// Dense edge-reweighted matrix (rows: news in corpus order, columns:
/// observable users in corpus order) built cell by cell.
pub fn oracle_edge_reweight(corpus: &Corpus, weights: &WeightVector) -> Vec<Vec<f64>> {
    let edges: HashSet<(&str, &str)> = corpus
        .interactions
        .iter()
        .map(|e| (e.news_id.as_str(), e.user_id.as_str()))
        .collect();
    corpus
        .news
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let f = (1.0 + weights.omega[i] / weights.norm).powf(weights.alpha);
            corpus
                .users
                .iter()
                .filter(|u| u.observable)
                .map(|u| if edges.contains(&(n.id.as_str(), u.user_id.as_str())) { f } else { 0.0 })
                .collect()
        })
        .collect()
}
