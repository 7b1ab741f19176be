//! Capacity-bounded knowledge pool with similarity lookup, refresh, warm-start
//! transfer and similarity/utilization eviction.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, RekpError, Result};
use crate::features::{feature_names, DatasetRow, FeatureVector, Group, FEATURE_GROUPS, N_FEATURES};
use crate::forest::{fit_with_oob, permutation_importance, ForestParams, Node, OobStats, RandomForestModel};
use crate::geometry::{check_version, segment_blocked, Scene, Vec3};
use crate::rng::derive_seed;
use crate::spectrum::{group_weights, spectrum, GroupWeights, KnowledgeSpectrum};

pub const POOL_FORMAT_VERSION: u64 = 1;

/// What a piece of knowledge was learned for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    /// FNV-1a of the canonical scene JSON.
    pub fingerprint: u64,
    pub position_id: u32,
    pub rx: Vec3,
    pub los: bool,
    pub frequency_hz: f64,
}

impl Context {
    pub fn new(scene: &Scene, position_id: u32, rx: Vec3) -> Result<Self> {
        let los = !segment_blocked(scene.tx, rx, scene)?.blocked;
        Ok(Self { fingerprint: scene.fingerprint(), position_id, rx, los, frequency_hz: scene.frequency_hz })
    }
}

/// Weighted agreement of two contexts in [0, 1]. The position id is a label
/// and does not take part.
pub fn similarity(a: &Context, b: &Context) -> f64 {
    let scene = if a.fingerprint == b.fingerprint { 1.0 } else { 0.0 };
    let los = if a.los == b.los { 1.0 } else { 0.0 };
    let near = (-a.rx.distance(b.rx) / 10.0).exp();
    let freq = (-(a.frequency_hz / b.frequency_hz).ln().abs()).exp();
    1.0 - (0.4 * (1.0 - scene) + 0.3 * (1.0 - near) + 0.2 * (1.0 - los) + 0.1 * (1.0 - freq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: u64,
    pub context: Context,
    pub weights: GroupWeights,
    /// Absent when the weights are degenerate.
    pub spectrum: Option<KnowledgeSpectrum>,
    pub model: RandomForestModel,
    pub created_at: f64,
    pub updated_at: f64,
    pub utilization_count: u64,
    /// Position whose data grew each tree, parallel to `model.trees`.
    pub tree_positions: Vec<u32>,
    /// Rows the newest trees were fit on.
    pub training: Vec<DatasetRow>,
    /// Per-member mean of `training`; the neutral value for masked members.
    pub feature_means: Vec<f64>,
}

impl KnowledgeEntry {
    pub fn is_degenerate(&self) -> bool {
        self.weights.degenerate
    }

    /// True if any tree or training row came from `position_id`.
    pub fn depends_on(&self, position_id: u32) -> bool {
        self.tree_positions.contains(&position_id) || self.training.iter().any(|r| r.position_id == position_id)
    }

    /// Features with every member outside `keep` centered to zero, i.e. set
    /// to the training mean.
    pub fn mask(&self, features: &FeatureVector, keep: &[Group]) -> FeatureVector {
        let mut out = *features;
        for ((v, g), m) in out.0.iter_mut().zip(FEATURE_GROUPS).zip(&self.feature_means) {
            if !keep.contains(&g) {
                *v = *m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub high: f64,
    pub low: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolParams {
    pub capacity: usize,
    pub thresholds: Thresholds,
    pub coefficients: EvictionCoefficients,
    pub forest: ForestParams,
    pub importance_repeats: usize,
}

impl Default for PoolParams {
    fn default() -> Self {
        Self {
            capacity: 32,
            thresholds: Thresholds { high: 0.95, low: 0.40 },
            coefficients: EvictionCoefficients { alpha: 1.0, beta: 0.5, gamma: 0.25 },
            forest: ForestParams::default(),
            importance_repeats: crate::forest::DEFAULT_PERMUTATION_REPEATS,
        }
    }
}

impl PoolParams {
    pub fn validate(&self) -> Result<()> {
        let t = self.thresholds;
        if self.capacity == 0 {
            return invalid("pool capacity must be >= 1");
        }
        if !(0.0..=1.0).contains(&t.low) || !(0.0..=1.0).contains(&t.high) || t.low >= t.high {
            return invalid("thresholds must satisfy 0 <= low < high <= 1");
        }
        let c = self.coefficients;
        if [c.alpha, c.beta, c.gamma].iter().any(|v| !v.is_finite()) {
            return invalid("eviction coefficients must be finite");
        }
        if self.importance_repeats == 0 {
            return invalid("importance_repeats must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    AnsweredExisting,
    Refined,
    Transferred,
    GeneratedNew,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub outcome: Outcome,
    pub entry_id: u64,
    /// Similarity of the best existing entry, if any was found above the low threshold.
    pub similarity: Option<f64>,
    pub evicted: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    params: PoolParams,
    entries: BTreeMap<u64, KnowledgeEntry>,
    next_id: u64,
}

#[derive(Serialize, Deserialize)]
struct PoolFile {
    version: u64,
    capacity: usize,
    thresholds: Thresholds,
    coefficients: EvictionCoefficients,
    forest: ForestParams,
    importance_repeats: usize,
    next_id: u64,
    entries: Vec<KnowledgeEntry>,
}

struct Learned {
    model: RandomForestModel,
    weights: GroupWeights,
    spectrum: Option<KnowledgeSpectrum>,
    tree_positions: Vec<u32>,
}

fn xy(rows: &[DatasetRow]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (rows.iter().map(|r| r.features.0.to_vec()).collect(), rows.iter().map(|r| r.path_loss_db).collect())
}

fn column_means(rows: &[DatasetRow]) -> Vec<f64> {
    let mut sums = [0.0; N_FEATURES];
    for r in rows {
        for (s, v) in sums.iter_mut().zip(r.features.0) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / rows.len() as f64).collect()
}

fn oob_mse(oob: &OobStats, y: &[f64]) -> f64 {
    let (mut sse, mut n) = (0.0, 0usize);
    for ((s, c), yi) in oob.sum.iter().zip(&oob.count).zip(y) {
        if *c > 0 {
            sse += (s / *c as f64 - yi).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sse / n as f64
    }
}

impl Pool {
    pub fn new(params: PoolParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, entries: BTreeMap::new(), next_id: 1 })
    }

    pub fn params(&self) -> &PoolParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.params.capacity
    }

    /// Entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries.values()
    }

    pub fn get(&self, id: u64) -> Option<&KnowledgeEntry> {
        self.entries.get(&id)
    }

    /// Best entry passing `filter` without touching utilization.
    pub fn best_match(&self, ctx: &Context, filter: impl Fn(&KnowledgeEntry) -> bool) -> Option<(u64, f64)> {
        let mut best: Option<(u64, f64)> = None;
        for e in self.entries.values().filter(|e| filter(e)) {
            let s = similarity(ctx, &e.context);
            // Id order makes strict `>` keep the lowest id on ties.
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((e.id, s));
            }
        }
        best.filter(|(_, s)| *s >= self.params.thresholds.low)
    }

    /// Looks up the most similar entry and counts the hit.
    pub fn query(&mut self, ctx: &Context) -> Option<(u64, f64)> {
        self.query_where(ctx, |_| true)
    }

    pub fn query_where(&mut self, ctx: &Context, filter: impl Fn(&KnowledgeEntry) -> bool) -> Option<(u64, f64)> {
        let hit = self.best_match(ctx, filter);
        if let Some((id, _)) = hit {
            if let Some(e) = self.entries.get_mut(&id) {
                e.utilization_count += 1;
            }
        }
        hit
    }

    fn learn(&self, entry_id: u64, rows: &[DatasetRow], position_id: u32, donor: Option<&KnowledgeEntry>) -> Result<Learned> {
        let (x, y) = xy(rows);
        let mut fp = self.params.forest.clone();
        fp.seed = derive_seed(self.params.forest.seed, &[entry_id]);
        let (cold, mut oob) = fit_with_oob(&x, &y, feature_names(), &fp)?;
        let mut tree_positions = vec![position_id; cold.trees.len()];
        let mut model = cold;

        if let Some(donor) = donor {
            let bar = oob_mse(&oob, &y);
            let mut scored: Vec<(f64, usize)> = donor
                .model
                .trees
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mse = x.iter().zip(&y).map(|(r, yi)| (t.predict(r) - yi).powi(2)).sum::<f64>() / y.len() as f64;
                    (mse, i)
                })
                .filter(|(mse, _)| *mse <= bar)
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scored.truncate(self.params.forest.n_trees);
            let kept: Vec<Node> = scored.iter().map(|(_, i)| donor.model.trees[*i].clone()).collect();
            // Donor trees are out-of-bag for every new row.
            for t in &kept {
                for (i, r) in x.iter().enumerate() {
                    oob.sum[i] += t.predict(r);
                    oob.count[i] += 1;
                }
            }
            let mut positions: Vec<u32> = scored.iter().map(|(_, i)| donor.tree_positions[*i]).collect();
            positions.extend(tree_positions);
            tree_positions = positions;
            let mut trees = kept;
            trees.append(&mut model.trees);
            model.trees = trees;
            model.oob_r2 = oob.r2(&y);
        }

        let importance_seed = derive_seed(self.params.forest.seed, &[entry_id, 1]);
        let imp = permutation_importance(&model, &x, &y, importance_seed, self.params.importance_repeats)?;
        let weights = group_weights(&imp, &FEATURE_GROUPS)?;
        let spec = if weights.degenerate { None } else { Some(spectrum(&weights, position_id, false)?) };
        Ok(Learned { model, weights, spectrum: spec, tree_positions })
    }

    fn insert(&mut self, ctx: &Context, rows: &[DatasetRow], now: f64, learned: Learned, id: u64) {
        let spectrum = learned.spectrum.map(|mut s| {
            s.los = ctx.los;
            s
        });
        self.entries.insert(
            id,
            KnowledgeEntry {
                id,
                context: ctx.clone(),
                weights: learned.weights,
                spectrum,
                model: learned.model,
                created_at: now,
                updated_at: now,
                utilization_count: 0,
                tree_positions: learned.tree_positions,
                training: rows.to_vec(),
                feature_means: column_means(rows),
            },
        );
    }

    /// Runs the dual interaction flow for new realizations of `ctx`.
    pub fn ingest(&mut self, ctx: &Context, rows: &[DatasetRow], now: f64, force_refresh: bool) -> Result<IngestReport> {
        if rows.is_empty() {
            return invalid("ingest needs at least one realization");
        }
        if rows.iter().any(|r| r.position_id != ctx.position_id) {
            return invalid("realization rows do not belong to the context's position");
        }
        if !now.is_finite() {
            return invalid("timestamp must be finite");
        }
        let hit = self.query(ctx);
        let t = self.params.thresholds;
        let (outcome, entry_id) = match hit {
            Some((id, s)) if s >= t.high => {
                if !force_refresh {
                    (Outcome::AnsweredExisting, id)
                } else {
                    let existing = &self.entries[&id];
                    let mut merged: BTreeMap<(u32, u32), DatasetRow> =
                        existing.training.iter().map(|r| ((r.position_id, r.realization_id), r.clone())).collect();
                    for r in rows {
                        merged.insert((r.position_id, r.realization_id), r.clone());
                    }
                    let merged: Vec<DatasetRow> = merged.into_values().collect();
                    let learned = self.learn(id, &merged, existing.context.position_id, None)?;
                    let e = self.entries.get_mut(&id).expect("hit refers to a live entry");
                    e.model = learned.model;
                    e.weights = learned.weights;
                    e.spectrum = learned.spectrum.map(|mut s| {
                        s.los = e.context.los;
                        s
                    });
                    e.tree_positions = learned.tree_positions;
                    e.feature_means = column_means(&merged);
                    e.training = merged;
                    e.updated_at = now;
                    (Outcome::Refined, id)
                }
            }
            Some((donor_id, _)) => {
                let id = self.next_id;
                let learned = self.learn(id, rows, ctx.position_id, Some(&self.entries[&donor_id]))?;
                self.next_id += 1;
                self.insert(ctx, rows, now, learned, id);
                (Outcome::Transferred, id)
            }
            None => {
                let id = self.next_id;
                let learned = self.learn(id, rows, ctx.position_id, None)?;
                self.next_id += 1;
                self.insert(ctx, rows, now, learned, id);
                (Outcome::GeneratedNew, id)
            }
        };
        let evicted = self.sort_and_evict();
        Ok(IngestReport { outcome, entry_id, similarity: hit.map(|h| h.1), evicted })
    }

    /// Eviction scores in id order; higher means evicted sooner.
    pub fn eviction_scores(&self) -> Vec<(u64, f64)> {
        let c = self.params.coefficients;
        let mut ages: Vec<f64> = self.entries.values().map(|e| e.created_at).collect();
        ages.sort_by(f64::total_cmp);
        ages.dedup();
        let n_ages = ages.len().max(1) as f64;
        self.entries
            .values()
            .map(|e| {
                let max_sim = self
                    .entries
                    .values()
                    .filter(|o| o.id != e.id)
                    .map(|o| similarity(&e.context, &o.context))
                    .fold(0.0, f64::max);
                // Newest entry gets recency 1, older ones proportionally less.
                let rank = ages.partition_point(|a| *a < e.created_at) as f64 + 1.0;
                let recency = rank / n_ages;
                let score =
                    c.alpha * max_sim - c.beta * (1.0 + e.utilization_count as f64).ln() - c.gamma * recency;
                (e.id, score)
            })
            .collect()
    }

    /// Changes the capacity and evicts down to it; returns removed ids.
    pub fn set_capacity(&mut self, capacity: usize) -> Result<Vec<u64>> {
        if capacity == 0 {
            return invalid("pool capacity must be >= 1");
        }
        self.params.capacity = capacity;
        Ok(self.sort_and_evict())
    }

    /// Removes entries until the pool fits its capacity; returns removed ids.
    pub fn sort_and_evict(&mut self) -> Vec<u64> {
        let mut removed = Vec::new();
        while self.entries.len() > self.params.capacity {
            let scores = self.eviction_scores();
            let (victim, _) = scores
                .iter()
                .copied()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("pool over capacity is nonempty");
            self.entries.remove(&victim);
            removed.push(victim);
        }
        removed
    }

    /// Pairwise context similarities in id order.
    pub fn similarity_matrix(&self) -> Vec<Vec<f64>> {
        let es: Vec<&KnowledgeEntry> = self.entries.values().collect();
        es.iter().map(|a| es.iter().map(|b| similarity(&a.context, &b.context)).collect()).collect()
    }

    /// Feeds every entry of `other` through [`Pool::ingest`], in id order.
    pub fn merge(&mut self, other: &Pool, now: f64) -> Result<Vec<IngestReport>> {
        other.entries.values().map(|e| self.ingest(&e.context, &e.training, now, false)).collect()
    }

    pub fn to_json(&self) -> String {
        let file = PoolFile {
            version: POOL_FORMAT_VERSION,
            capacity: self.params.capacity,
            thresholds: self.params.thresholds,
            coefficients: self.params.coefficients,
            forest: self.params.forest.clone(),
            importance_repeats: self.params.importance_repeats,
            next_id: self.next_id,
            entries: self.entries.values().cloned().collect(),
        };
        let mut s = serde_json::to_string(&file).expect("pool serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let malformed = |e: serde_json::Error| RekpError::Malformed(format!("pool file: {e}"));
        let value: serde_json::Value = serde_json::from_str(text).map_err(malformed)?;
        check_version(&value, POOL_FORMAT_VERSION)?;
        let file: PoolFile = serde_json::from_value(value).map_err(malformed)?;
        let params = PoolParams {
            capacity: file.capacity,
            thresholds: file.thresholds,
            coefficients: file.coefficients,
            forest: file.forest,
            importance_repeats: file.importance_repeats,
        };
        params.validate().map_err(|e| RekpError::Malformed(format!("pool file: {e}")))?;
        if file.entries.len() > params.capacity {
            return Err(RekpError::Malformed("pool file holds more entries than its capacity".into()));
        }
        let mut entries = BTreeMap::new();
        for e in file.entries {
            if e.id >= file.next_id
                || e.tree_positions.len() != e.model.trees.len()
                || e.feature_means.len() != N_FEATURES
            {
                return Err(RekpError::Malformed(format!("pool file: inconsistent entry {}", e.id)));
            }
            if entries.insert(e.id, e).is_some() {
                return Err(RekpError::Malformed("pool file: duplicate entry id".into()));
            }
        }
        Ok(Self { params, entries, next_id: file.next_id })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
