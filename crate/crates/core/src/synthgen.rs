//! Seeded synthetic catalogs, embeddings and interaction logs.
//!
//! Embeddings mix three components:
//!
//! * a category centre; centres sit at mutual distance proportional to
//!   `1 + 2e`, where `e` is the enrichment level;
//! * a look-alike group offset shared by items whose text is nearly the
//!   same, with standard deviation proportional to `noise · (1.5 − e)`;
//! * an item-specific attribute vector on the informative coordinate block
//!   (the first half of the dimensions), scaled by `e`. This is the signal
//!   captions and interest tags add: it separates look-alikes.
//!
//! A small per-item jitter keeps text-only look-alikes from being exact
//! duplicates. Interactions follow a per-user category-level Markov chain.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingSet, Interaction, InteractionLog, ItemCatalog, ItemRecord};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Generator parameters; also the JSON schema accepted by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_items: usize,
    pub num_users: usize,
    pub dim: usize,
    pub num_categories: usize,
    /// In `[0, 1]`: 0 emulates text-only embeddings, 1 fully enriched ones.
    pub enrichment_level: f64,
    #[serde(default = "default_noise")]
    pub intra_category_noise: f64,
    /// Inclusive `[min, max]` events per user.
    #[serde(default = "default_events")]
    pub events_per_user: [usize; 2],
    pub seed: u64,
    /// Probability of following the user's dominant category transition.
    #[serde(default = "default_dominant")]
    pub dominant_transition_prob: f64,
    /// Optional global category transition matrix overriding the per-user
    /// dominant transitions. Rows must sum to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_matrix: Option<Vec<Vec<f64>>>,
    /// Items per look-alike group.
    #[serde(default = "default_group")]
    pub lookalike_group_size: usize,
}

fn default_noise() -> f64 {
    1.0
}

fn default_events() -> [usize; 2] {
    [5, 20]
}

fn default_dominant() -> f64 {
    0.8
}

fn default_group() -> usize {
    4
}

impl SynthConfig {
    pub fn new(num_items: usize, num_users: usize, dim: usize, num_categories: usize, seed: u64) -> Self {
        SynthConfig {
            num_items,
            num_users,
            dim,
            num_categories,
            enrichment_level: 1.0,
            intra_category_noise: default_noise(),
            events_per_user: default_events(),
            seed,
            dominant_transition_prob: default_dominant(),
            transition_matrix: None,
            lookalike_group_size: default_group(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.num_items == 0 || self.num_users == 0 || self.num_categories == 0 {
            return bad("num_items, num_users and num_categories must be positive");
        }
        if self.num_categories > self.num_items {
            return bad("num_categories must not exceed num_items");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.enrichment_level) {
            return bad("enrichment_level must lie in [0, 1]");
        }
        if !(self.intra_category_noise > 0.0) {
            return bad("intra_category_noise must be positive");
        }
        let [lo, hi] = self.events_per_user;
        if lo == 0 || lo > hi {
            return bad("events_per_user must be a nonempty positive range");
        }
        if !(0.0..=1.0).contains(&self.dominant_transition_prob) {
            return bad("dominant_transition_prob must lie in [0, 1]");
        }
        if self.lookalike_group_size == 0 {
            return bad("lookalike_group_size must be positive");
        }
        if let Some(m) = &self.transition_matrix {
            if m.len() != self.num_categories || m.iter().any(|r| r.len() != self.num_categories) {
                return bad("transition_matrix must be num_categories × num_categories");
            }
            for row in m {
                if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("transition_matrix rows must be probability vectors");
                }
            }
        }
        Ok(())
    }
}

/// Generated catalog with embeddings and category labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCatalog {
    pub catalog: ItemCatalog,
    pub embeddings: EmbeddingSet,
    pub labels: HashMap<String, String>,
}

const CATEGORY_WORDS: [&str; 12] = [
    "Outdoor", "Kitchen", "Audio", "Beauty", "Gaming", "Garden", "Office", "Fitness", "Travel",
    "Toys", "Lighting", "Music",
];
const PRODUCT_WORDS: [&str; 8] = [
    "Kit", "Set", "Pro", "Classic", "Essentials", "Bundle", "Station", "Pack",
];
const COLORS: [&str; 8] = ["black", "white", "red", "navy", "green", "silver", "yellow", "teal"];
const TEXTURES: [&str; 6] = ["matte", "glossy", "woven", "brushed-metal", "soft-touch", "rubberized"];
const INTERESTS: [&str; 6] = [
    "hands-on hobbyist",
    "gift shopper",
    "quality enthusiast",
    "budget-conscious planner",
    "weekend adventurer",
    "home organizer",
];

pub fn category_name(c: usize) -> String {
    let word = CATEGORY_WORDS[c % CATEGORY_WORDS.len()];
    match c / CATEGORY_WORDS.len() {
        0 => word.to_owned(),
        k => format!("{word} {}", k + 1),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Category of item `i`: round-robin, so every category gets items.
fn category_of(i: usize, cfg: &SynthConfig) -> usize {
    i % cfg.num_categories
}

/// Look-alike group of item `i`, counted within its category.
fn group_of(i: usize, cfg: &SynthConfig) -> (usize, usize) {
    let within = i / cfg.num_categories;
    (within / cfg.lookalike_group_size, within % cfg.lookalike_group_size)
}

pub fn generate_catalog(cfg: &SynthConfig) -> Result<SynthCatalog> {
    cfg.validate()?;
    let dim = cfg.dim;
    let informative = dim / 2;
    let e = cfg.enrichment_level;
    let sigma = cfg.intra_category_noise;
    let unit = 1.0 / (dim as f64).sqrt();

    let mut center_rng = rng::stream(cfg.seed, Purpose::Catalog, 0);
    let centers: Vec<Vec<f64>> = (0..cfg.num_categories)
        .map(|_| gaussian(&mut center_rng, dim, (1.0 + 2.0 * e) * unit))
        .collect();
    let groups_per_category = cfg.num_items.div_ceil(cfg.num_categories * cfg.lookalike_group_size);
    let group_offsets: Vec<Vec<f64>> = (0..cfg.num_categories * groups_per_category)
        .map(|g| {
            let mut r = rng::stream(cfg.seed, Purpose::Catalog, 1 + g as u64);
            gaussian(&mut r, dim, sigma * (1.5 - e) * unit)
        })
        .collect();

    let rows: Vec<(ItemRecord, Vec<f32>)> = (0..cfg.num_items)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, Purpose::CatalogItem, i as u64);
            let c = category_of(i, cfg);
            let (group, variant) = group_of(i, cfg);
            let offset = &group_offsets[c * groups_per_category + group];
            // Draw every component regardless of e so streams stay aligned.
            let attributes = gaussian(&mut r, informative, sigma * unit * (dim as f64 / informative as f64).sqrt());
            let jitter = gaussian(&mut r, dim, 0.05 * sigma * unit);
            let embedding: Vec<f32> = (0..dim)
                .map(|j| {
                    let attr = if j < informative { e * attributes[j] } else { 0.0 };
                    (centers[c][j] + offset[j] + attr + jitter[j]) as f32
                })
                .collect();

            let cat = category_name(c);
            let product = PRODUCT_WORDS[group % PRODUCT_WORDS.len()];
            let color = COLORS[r.random_range(0..COLORS.len())];
            let texture = TEXTURES[r.random_range(0..TEXTURES.len())];
            let interest = INTERESTS[r.random_range(0..INTERESTS.len())];
            let item = ItemRecord {
                item_id: format!("i{i:06}"),
                title: format!("{cat} {product} {} (Variant {})", group + 1, variant + 1),
                description: format!(
                    "A {} {} item from the {cat} range, model {}.",
                    texture,
                    product.to_lowercase(),
                    group + 1
                ),
                category: cat.clone(),
                visual_description: (e > 0.0).then(|| {
                    format!("A {color} {product} with a {texture} finish, photographed for {cat} shoppers.")
                }),
                interests: (e >= 0.5).then(|| vec![format!("{cat} {interest}"), format!("{texture} design fan")]),
            };
            (item, embedding)
        })
        .collect();

    let mut items = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * dim);
    for (item, emb) in rows {
        items.push(item);
        values.extend(emb);
    }
    let ids: Vec<String> = items.iter().map(|it| it.item_id.clone()).collect();
    let labels = items
        .iter()
        .map(|it| (it.item_id.clone(), it.category.clone()))
        .collect();
    Ok(SynthCatalog {
        catalog: ItemCatalog::new(items)?,
        embeddings: EmbeddingSet::new(dim, values, ids)?,
        labels,
    })
}

/// Dominant successor of category `c` for a user in `mode` (0 = stay, 1 = advance).
fn dominant_successor(c: usize, mode: u8, n: usize) -> usize {
    if mode == 0 {
        c
    } else {
        (c + 1) % n
    }
}

/// The category transition matrix a user in `mode` follows.
pub fn user_transition_matrix(cfg: &SynthConfig, mode: u8) -> Vec<Vec<f64>> {
    if let Some(m) = &cfg.transition_matrix {
        return m.clone();
    }
    let n = cfg.num_categories;
    let p = cfg.dominant_transition_prob;
    (0..n)
        .map(|c| {
            let mut row = vec![(1.0 - p) / n as f64; n];
            row[dominant_successor(c, mode, n)] += p;
            row
        })
        .collect()
}

fn sample_row(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Per-user mode: which dominant transition the user follows.
pub fn user_mode(cfg: &SynthConfig, user: usize) -> u8 {
    let mut r = rng::stream(cfg.seed, Purpose::UserInteractions, user as u64);
    r.random_range(0..2u8)
}

/// Per-user category walk: `(category sequence, item sequence, timestamps)`.
fn user_events(cfg: &SynthConfig, user: usize, by_category: &[Vec<&str>]) -> Vec<(usize, String, i64)> {
    let mut r = rng::stream(cfg.seed, Purpose::UserInteractions, user as u64);
    let mode = r.random_range(0..2u8);
    let matrix = user_transition_matrix(cfg, mode);
    let [lo, hi] = cfg.events_per_user;
    let n_events = r.random_range(lo..=hi);
    let mut category = r.random_range(0..cfg.num_categories);
    let mut t: i64 = 1_600_000_000 + r.random_range(0..1_000_000);
    let mut out = Vec::with_capacity(n_events);
    for step in 0..n_events {
        if step > 0 {
            category = sample_row(&matrix[category], &mut r);
            t += r.random_range(1..86_400);
        }
        let pool = &by_category[category];
        let item = pool[r.random_range(0..pool.len())];
        out.push((category, item.to_owned(), t));
    }
    out
}

pub fn generate_interactions(synth: &SynthCatalog, cfg: &SynthConfig) -> Result<InteractionLog> {
    cfg.validate()?;
    let names: Vec<String> = (0..cfg.num_categories).map(category_name).collect();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(c, n)| (n.as_str(), c)).collect();
    let mut by_category: Vec<Vec<&str>> = vec![Vec::new(); cfg.num_categories];
    for item in synth.catalog.iter() {
        let c = *index
            .get(item.category.as_str())
            .ok_or_else(|| Error::Config(format!("unknown category {:?}", item.category)))?;
        by_category[c].push(item.item_id.as_str());
    }
    let events: Vec<Interaction> = (0..cfg.num_users)
        .into_par_iter()
        .flat_map_iter(|u| {
            user_events(cfg, u, &by_category)
                .into_iter()
                .map(move |(_, item_id, timestamp)| Interaction {
                    user_id: format!("u{u:06}"),
                    item_id,
                    timestamp,
                })
        })
        .collect();
    Ok(InteractionLog::new(events))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(e: f64, seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::new(300, 50, 16, 6, seed);
        cfg.enrichment_level = e;
        cfg
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn intra_cluster_cosine(s: &SynthCatalog) -> f64 {
        let (mut total, mut pairs) = (0.0, 0usize);
        let items: Vec<_> = s.catalog.iter().collect();
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                if items[i].category == items[j].category {
                    total += cosine(s.embeddings.row(i), s.embeddings.row(j));
                    pairs += 1;
                }
            }
        }
        total / pairs as f64
    }

    #[test]
    fn enrichment_tightens_clusters() {
        for seed in 0..3 {
            let low = intra_cluster_cosine(&generate_catalog(&small(0.0, seed)).unwrap());
            let high = intra_cluster_cosine(&generate_catalog(&small(1.0, seed)).unwrap());
            assert!(high > low, "seed {seed}: {high} <= {low}");
        }
    }

    #[test]
    fn single_item_catalog() {
        let mut cfg = SynthConfig::new(1, 1, 4, 1, 3);
        cfg.events_per_user = [2, 2];
        let s = generate_catalog(&cfg).unwrap();
        assert_eq!(s.catalog.len(), 1);
        assert_eq!(s.labels.values().collect::<std::collections::HashSet<_>>().len(), 1);
        let log = generate_interactions(&s, &cfg).unwrap();
        assert_eq!(log.events.len(), 2);
    }

    #[test]
    fn deterministic_across_runs_and_threads() {
        let cfg = small(0.5, 11);
        let a = generate_catalog(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| generate_catalog(&cfg).unwrap());
        assert_eq!(a, b);
        let la = generate_interactions(&a, &cfg).unwrap();
        let lb = pool.install(|| generate_interactions(&b, &cfg).unwrap());
        assert_eq!(la, lb);
    }

    #[test]
    fn adding_items_keeps_user_modes() {
        let cfg = small(0.5, 5);
        let mut bigger = cfg.clone();
        bigger.num_items = 600;
        for u in 0..cfg.num_users {
            assert_eq!(user_mode(&cfg, u), user_mode(&bigger, u));
        }
    }

    fn category_walks(s: &SynthCatalog, log: &InteractionLog) -> Vec<Vec<String>> {
        log.user_sequences()
            .values()
            .map(|seq| seq.iter().map(|item| s.labels[*item].clone()).collect())
            .collect()
    }

    #[test]
    fn identity_matrix_keeps_users_in_one_category() {
        let mut cfg = small(0.5, 2);
        cfg.transition_matrix = Some(
            (0..6).map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        );
        let s = generate_catalog(&cfg).unwrap();
        let log = generate_interactions(&s, &cfg).unwrap();
        for walk in category_walks(&s, &log) {
            assert!(walk.iter().all(|c| c == &walk[0]));
        }
    }

    #[test]
    fn empirical_transitions_match_matrix() {
        let mut cfg = SynthConfig::new(200, 2000, 8, 4, 17);
        cfg.events_per_user = [51, 51];
        let s = generate_catalog(&cfg).unwrap();
        let log = generate_interactions(&s, &cfg).unwrap();
        let names: Vec<String> = (0..4).map(category_name).collect();
        let idx = |c: &str| names.iter().position(|n| n == c).unwrap();
        // counts[mode][from][to]
        let mut counts = vec![vec![vec![0usize; 4]; 4]; 2];
        for (u, walk) in category_walks(&s, &log).iter().enumerate() {
            let mode = user_mode(&cfg, u) as usize;
            for w in walk.windows(2) {
                counts[mode][idx(&w[0])][idx(&w[1])] += 1;
            }
        }
        let total: usize = counts.iter().flatten().flatten().sum();
        assert_eq!(total, 2000 * 50);
        for mode in 0..2 {
            let matrix = user_transition_matrix(&cfg, mode as u8);
            for from in 0..4 {
                let row: usize = counts[mode][from].iter().sum();
                for to in 0..4 {
                    let freq = counts[mode][from][to] as f64 / row as f64;
                    assert!((freq - matrix[from][to]).abs() <= 0.02, "{mode} {from}->{to}: {freq}");
                }
            }
        }
    }

    #[test]
    fn fixed_event_count_and_increasing_timestamps() {
        let mut cfg = small(0.0, 4);
        cfg.events_per_user = [5, 5];
        let s = generate_catalog(&cfg).unwrap();
        let log = generate_interactions(&s, &cfg).unwrap();
        let seqs = log.user_sequences();
        assert_eq!(seqs.len(), cfg.num_users);
        assert!(seqs.values().all(|seq| seq.len() == 5));
        let mut times: HashMap<&str, Vec<i64>> = HashMap::new();
        for ev in &log.events {
            times.entry(ev.user_id.as_str()).or_default().push(ev.timestamp);
        }
        for ts in times.values() {
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn text_fields_follow_enrichment() {
        let s0 = generate_catalog(&small(0.0, 1)).unwrap();
        assert!(s0.catalog.iter().all(|i| i.visual_description.is_none() && i.interests.is_none()));
        let s1 = generate_catalog(&small(1.0, 1)).unwrap();
        assert!(s1.catalog.iter().all(|i| i.visual_description.is_some() && i.interests.is_some()));
        assert!(s1.catalog.iter().all(|i| i.title.starts_with(&i.category)));
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = small(0.5, 1);
        cfg.num_categories = 301;
        assert!(generate_catalog(&cfg).is_err());
        let mut cfg = small(0.5, 1);
        cfg.dim = 1;
        assert!(generate_catalog(&cfg).is_err());
        let mut cfg = small(1.5, 1);
        assert!(generate_catalog(&cfg).is_err());
        cfg.enrichment_level = 0.5;
        cfg.transition_matrix = Some(vec![vec![0.5; 6]; 6]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SynthConfig = serde_json::from_str(
            r#"{"num_items":10,"num_users":3,"dim":4,"num_categories":2,"enrichment_level":0.5,"seed":9}"#,
        )
        .unwrap();
        assert_eq!(cfg.events_per_user, [5, 20]);
        assert_eq!(cfg.dominant_transition_prob, 0.8);
    }
}
