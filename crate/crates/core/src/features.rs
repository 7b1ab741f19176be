//! Environment features per receiver position, Monte Carlo environment
//! realizations, the dataset CSV, and timestamp/position stream alignment.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, RekpError, Result};
use crate::geometry::{occlusion, Aabb, Scatterer, Scene, Vec3};
use crate::propagation::{effective_from, sample_from_paths, trace_paths, ChannelSample};
use crate::rng;

/// Environment feature group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    L,
    V,
    B,
    D,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::L, Group::V, Group::B, Group::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Group::L => 'L',
            Group::V => 'V',
            Group::B => 'B',
            Group::D => 'D',
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

pub const N_FEATURES: usize = 16;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "L_cx", "L_cy", "L_cz", "L_rx", "L_ry", "L_rz", "V_total", "V_maxh", "V_area", "B_blocked", "B_count", "B_frac",
    "D_txrx", "D_txs", "D_srx", "D_pathlen",
];

/// Member-to-group partition: 6 location, 3 volume, 3 blockage, 4 distance members.
pub const FEATURE_GROUPS: [Group; N_FEATURES] = [
    Group::L,
    Group::L,
    Group::L,
    Group::L,
    Group::L,
    Group::L,
    Group::V,
    Group::V,
    Group::V,
    Group::B,
    Group::B,
    Group::B,
    Group::D,
    Group::D,
    Group::D,
    Group::D,
];

pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn group_members(group: Group) -> impl Iterator<Item = usize> {
        FEATURE_GROUPS.iter().enumerate().filter(move |(_, g)| **g == group).map(|(i, _)| i)
    }
}

/// Area of `s` projected onto the vertical plane normal to the horizontal
/// TX->RX direction.
fn frontal_area(s: &Scatterer, tx: Vec3, rx: Vec3) -> f64 {
    let (dx, dy) = (rx.x - tx.x, rx.y - tx.y);
    let h = (dx * dx + dy * dy).sqrt();
    let [len, wid, ht] = s.dims;
    if h == 0.0 {
        return len.max(wid) * ht;
    }
    (dx / h).abs() * wid * ht + (dy / h).abs() * len * ht
}

/// Features and the channel sample at `rx`, sharing one path trace.
pub fn observe(scene: &Scene, rx: Vec3) -> Result<(FeatureVector, ChannelSample)> {
    let paths = trace_paths(scene, rx)?;
    let blockage = occlusion(scene.tx, rx, scene, None);
    let effective: Vec<&Scatterer> =
        effective_from(&paths, &blockage.blocker_ids).into_iter().filter_map(|id| scene.scatterer(id)).collect();
    let mut bounds: Aabb = scene.bounds;
    bounds.include(rx);
    let sentinel = bounds.diagonal();
    let tx = scene.tx;

    let mut v = [0.0; N_FEATURES];
    if !effective.is_empty() {
        let n = effective.len() as f64;
        let c = effective.iter().fold(Vec3::ZERO, |acc, s| acc + s.center) * (1.0 / n);
        v[0..3].copy_from_slice(&c.to_array());
        v[6] = effective.iter().map(|s| s.volume()).sum();
        v[7] = effective.iter().map(|s| s.height()).fold(0.0, f64::max);
        // Largest by volume; first (lowest id) wins ties.
        let largest = effective.iter().fold(effective[0], |best, s| if s.volume() > best.volume() { s } else { best });
        v[8] = frontal_area(largest, tx, rx);
        v[13] = effective.iter().map(|s| s.aabb().distance_to(tx)).fold(f64::INFINITY, f64::min);
        v[14] = effective.iter().map(|s| s.aabb().distance_to(rx)).fold(f64::INFINITY, f64::min);
    } else {
        v[13] = sentinel;
        v[14] = sentinel;
    }
    v[3..6].copy_from_slice(&rx.to_array());
    v[9] = if blockage.blocked { 1.0 } else { 0.0 };
    v[10] = blockage.blocker_ids.len() as f64;
    v[11] = blockage.blocked_fraction;
    v[12] = tx.distance(rx);
    v[15] = paths.first().map_or(sentinel, |p| p.length_m);

    let sample = sample_from_paths(&paths, rx, !blockage.blocked);
    Ok((FeatureVector(v), sample))
}

pub fn extract_features(scene: &Scene, rx: Vec3) -> Result<FeatureVector> {
    observe(scene, rx).map(|(f, _)| f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealizationConfig {
    pub n_realizations: usize,
    pub scatterer_jitter_sigma: f64,
    pub rx_jitter_sigma: f64,
    pub seed: u64,
}

impl Default for RealizationConfig {
    fn default() -> Self {
        Self { n_realizations: 200, scatterer_jitter_sigma: 0.5, rx_jitter_sigma: 0.2, seed: 0 }
    }
}

impl RealizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations < 2 {
            return invalid("n_realizations must be at least 2");
        }
        for s in [self.scatterer_jitter_sigma, self.rx_jitter_sigma] {
            if !(s.is_finite() && s >= 0.0) {
                return invalid("jitter sigmas must be finite and >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub position_id: u32,
    pub realization_id: u32,
    pub features: FeatureVector,
    pub path_loss_db: f64,
    pub los: bool,
    pub timestamp: f64,
}

const MAX_RESAMPLES: u32 = 100;

/// Monte Carlo realizations of the environment around one receiver position.
///
/// Realization 0 is the unperturbed scene. Realization `i` draws from the
/// stream `(seed, position_id, i)`, so any subset is reproducible on its own.
pub fn realize(
    scene: &Scene,
    rx: Vec3,
    position_id: u32,
    timestamp: f64,
    cfg: &RealizationConfig,
) -> Result<Vec<DatasetRow>> {
    cfg.validate()?;
    (0..cfg.n_realizations as u32)
        .into_par_iter()
        .map(|i| {
            let (jittered, jrx) = if i == 0 { (scene.clone(), rx) } else { jitter(scene, rx, position_id, i, cfg)? };
            let (features, sample) = observe(&jittered, jrx)?;
            Ok(DatasetRow {
                position_id,
                realization_id: i,
                features,
                path_loss_db: sample.path_loss_db,
                los: sample.los,
                timestamp,
            })
        })
        .collect()
}

fn jitter(scene: &Scene, rx: Vec3, position_id: u32, i: u32, cfg: &RealizationConfig) -> Result<(Scene, Vec3)> {
    let mut rng = rng::stream(cfg.seed, &[position_id as u64, i as u64]);
    let s_noise = Normal::new(0.0, cfg.scatterer_jitter_sigma).expect("validated sigma");
    let r_noise = Normal::new(0.0, cfg.rx_jitter_sigma).expect("validated sigma");
    for _ in 0..MAX_RESAMPLES {
        let mut s = scene.clone();
        for sc in &mut s.scatterers {
            sc.center = sc.center
                + Vec3::new(s_noise.sample(&mut rng), s_noise.sample(&mut rng), s_noise.sample(&mut rng));
        }
        let jrx = rx + Vec3::new(r_noise.sample(&mut rng), r_noise.sample(&mut rng), r_noise.sample(&mut rng));
        let bad = s.enclosing(jrx).is_some() || s.enclosing(s.tx).is_some() || jrx.distance(s.tx) == 0.0;
        if !bad {
            for sc in &s.scatterers {
                s.bounds = s.bounds.union(&sc.aabb());
            }
            s.bounds.include(jrx);
            return Ok((s, jrx));
        }
    }
    invalid(format!(
        "realization {i} at position {position_id}: no valid jitter after {MAX_RESAMPLES} attempts"
    ))
}

/// Rows sorted by `(position_id, realization_id)` with unique keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    rows: Vec<DatasetRow>,
}

pub const DATASET_HEADER: [&str; 21] = [
    "position_id",
    "realization_id",
    "L_cx",
    "L_cy",
    "L_cz",
    "L_rx",
    "L_ry",
    "L_rz",
    "V_total",
    "V_maxh",
    "V_area",
    "B_blocked",
    "B_count",
    "B_frac",
    "D_txrx",
    "D_txs",
    "D_srx",
    "D_pathlen",
    "path_loss_db",
    "los",
    "timestamp",
];

impl Dataset {
    pub fn new(mut rows: Vec<DatasetRow>) -> Result<Self> {
        rows.sort_by_key(|r| (r.position_id, r.realization_id));
        if let Some(w) = rows.windows(2).find(|w| (w[0].position_id, w[0].realization_id) == (w[1].position_id, w[1].realization_id)) {
            return invalid(format!(
                "duplicate dataset key (position {}, realization {})",
                w[0].position_id, w[0].realization_id
            ));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[DatasetRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn position_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.position_id).collect();
        ids.dedup();
        ids
    }

    pub fn position(&self, position_id: u32) -> &[DatasetRow] {
        let lo = self.rows.partition_point(|r| r.position_id < position_id);
        let hi = self.rows.partition_point(|r| r.position_id <= position_id);
        &self.rows[lo..hi]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(DATASET_HEADER)?;
        for r in &self.rows {
            let mut rec = Vec::with_capacity(DATASET_HEADER.len());
            rec.push(r.position_id.to_string());
            rec.push(r.realization_id.to_string());
            rec.extend(r.features.0.iter().map(|v| v.to_string()));
            rec.push(r.path_loss_db.to_string());
            rec.push(if r.los { "1" } else { "0" }.to_string());
            rec.push(r.timestamp.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().ne(DATASET_HEADER.iter().copied()) {
            return Err(RekpError::Malformed("dataset CSV header does not match the fixed layout".into()));
        }
        let bad = |line: usize, what: &str| RekpError::Malformed(format!("dataset CSV row {line}: bad {what}"));
        let mut rows = Vec::new();
        for (k, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let num = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(line, DATASET_HEADER[i]))
            };
            let int = |i: usize| -> Result<u32> {
                rec.get(i).and_then(|s| s.parse::<u32>().ok()).ok_or_else(|| bad(line, DATASET_HEADER[i]))
            };
            let mut f = [0.0; N_FEATURES];
            for (j, slot) in f.iter_mut().enumerate() {
                *slot = num(j + 2)?;
            }
            let los = match rec.get(19) {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad(line, "los")),
            };
            rows.push(DatasetRow {
                position_id: int(0)?,
                realization_id: int(1)?,
                features: FeatureVector(f),
                path_loss_db: num(18)?,
                los,
                timestamp: num(20)?,
            });
        }
        Dataset::new(rows)
    }
}

/// Timestamped, positioned environment observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PeiRecord {
    pub timestamp: f64,
    pub position: Vec3,
    pub features: FeatureVector,
}

/// Timestamped, positioned channel measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRecord {
    pub timestamp: f64,
    pub position: Vec3,
    pub position_id: u32,
    pub realization_id: u32,
    pub path_loss_db: f64,
    pub los: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DropReport {
    pub unmatched_pei: usize,
    pub unmatched_channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `(pei index, channel index)`, ascending by channel index.
    pub pairs: Vec<(usize, usize)>,
    pub dataset: Dataset,
    pub dropped: DropReport,
}

/// Pairs channel records with PEI records.
///
/// The matching has maximum cardinality among pairs within `time_tol` seconds
/// and `pos_tol` meters, then minimum total |dt|, then minimum total timestamp
/// (earlier records preferred).
pub fn align_streams(pei: &[PeiRecord], channel: &[ChannelRecord], time_tol: f64, pos_tol: f64) -> Result<Alignment> {
    let a: Vec<(f64, Vec3)> = pei.iter().map(|r| (r.timestamp, r.position)).collect();
    let b: Vec<(f64, Vec3)> = channel.iter().map(|r| (r.timestamp, r.position)).collect();
    let mut pairs = match_streams(&a, &b, time_tol, pos_tol)?;
    pairs.sort_by_key(|&(_, j)| j);
    let rows = pairs
        .iter()
        .map(|&(i, j)| {
            let c = &channel[j];
            DatasetRow {
                position_id: c.position_id,
                realization_id: c.realization_id,
                features: pei[i].features,
                path_loss_db: c.path_loss_db,
                los: c.los,
                timestamp: c.timestamp,
            }
        })
        .collect();
    let dropped = DropReport { unmatched_pei: pei.len() - pairs.len(), unmatched_channel: channel.len() - pairs.len() };
    Ok(Alignment { dataset: Dataset::new(rows)?, pairs, dropped })
}

/// Lexicographic matching cost: (|dt|, t_a + t_b).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Cost(f64, f64);

impl Cost {
    const ZERO: Cost = Cost(0.0, 0.0);

    fn add(self, o: Cost) -> Cost {
        Cost(self.0 + o.0, self.1 + o.1)
    }

    fn neg(self) -> Cost {
        Cost(-self.0, -self.1)
    }
}

fn check_sorted(stream: &[(f64, Vec3)], name: &str) -> Result<()> {
    if stream.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
        return invalid(format!("{name} stream has non-finite timestamps or positions"));
    }
    if stream.windows(2).any(|w| w[1].0 < w[0].0) {
        return invalid(format!("{name} stream is not sorted by timestamp"));
    }
    Ok(())
}

/// Optimal one-to-one matching between two timestamp-sorted streams; returns
/// `(index in a, index in b)` pairs ascending by `a` index. Symmetric in the
/// roles of `a` and `b`.
pub fn match_streams(a: &[(f64, Vec3)], b: &[(f64, Vec3)], time_tol: f64, pos_tol: f64) -> Result<Vec<(usize, usize)>> {
    if !(time_tol >= 0.0 && pos_tol >= 0.0) {
        return invalid("tolerances must be >= 0");
    }
    check_sorted(a, "first")?;
    check_sorted(b, "second")?;

    // Eligible edges via a sliding time window.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); a.len()];
    let mut lo = 0;
    for (i, &(ta, pa)) in a.iter().enumerate() {
        while lo < b.len() && b[lo].0 < ta - time_tol {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j].0 <= ta + time_tol {
            if (b[j].0 - ta).abs() <= time_tol && b[j].1.distance(pa) <= pos_tol {
                adj[i].push(j);
            }
            j += 1;
        }
    }

    // Connected components of the bipartite eligibility graph.
    let mut b_adj: Vec<Vec<usize>> = vec![Vec::new(); b.len()];
    for (i, js) in adj.iter().enumerate() {
        for &j in js {
            b_adj[j].push(i);
        }
    }
    let mut seen_a = vec![false; a.len()];
    let mut seen_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for start in 0..a.len() {
        if seen_a[start] || adj[start].is_empty() {
            continue;
        }
        let (mut comp_a, mut comp_b) = (Vec::new(), Vec::new());
        let mut queue = VecDeque::from([(true, start)]);
        seen_a[start] = true;
        while let Some((is_a, k)) = queue.pop_front() {
            if is_a {
                comp_a.push(k);
                for &j in &adj[k] {
                    if !seen_b[j] {
                        seen_b[j] = true;
                        queue.push_back((false, j));
                    }
                }
            } else {
                comp_b.push(k);
                for &i in &b_adj[k] {
                    if !seen_a[i] {
                        seen_a[i] = true;
                        queue.push_back((true, i));
                    }
                }
            }
        }
        comp_a.sort_unstable();
        comp_b.sort_unstable();
        pairs.extend(min_cost_matching(a, b, &adj, &comp_a, &comp_b));
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Successive shortest augmenting paths (Bellman-Ford on the residual graph)
/// for one component. Each augmentation is a cheapest path, so the final
/// maximum matching is also of minimum cost.
fn min_cost_matching(
    a: &[(f64, Vec3)],
    b: &[(f64, Vec3)],
    adj: &[Vec<usize>],
    comp_a: &[usize],
    comp_b: &[usize],
) -> Vec<(usize, usize)> {
    let na = comp_a.len();
    let nb = comp_b.len();
    let local_b = |j: usize| comp_b.binary_search(&j).expect("component member");
    let edges: Vec<Vec<(usize, Cost)>> = comp_a
        .iter()
        .map(|&i| {
            adj[i]
                .iter()
                .map(|&j| (local_b(j), Cost((a[i].0 - b[j].0).abs(), a[i].0 + b[j].0)))
                .collect()
        })
        .collect();
    let mut match_a: Vec<Option<usize>> = vec![None; na];
    let mut match_b: Vec<Option<usize>> = vec![None; nb];

    loop {
        // Node ids: 0..na for a-side, na..na+nb for b-side. Source edges go to
        // free a-nodes; a path ends at any free b-node.
        let n = na + nb;
        let mut dist: Vec<Option<Cost>> = vec![None; n];
        let mut prev: Vec<Option<usize>> = vec![None; n];
        for (ia, m) in match_a.iter().enumerate() {
            if m.is_none() {
                dist[ia] = Some(Cost::ZERO);
            }
        }
        for _ in 0..n {
            let mut changed = false;
            for ia in 0..na {
                let Some(da) = dist[ia] else { continue };
                for &(jb, c) in &edges[ia] {
                    if match_a[ia] == Some(jb) {
                        continue;
                    }
                    let nd = da.add(c);
                    let node = na + jb;
                    if dist[node].is_none_or(|cur| nd < cur) {
                        dist[node] = Some(nd);
                        prev[node] = Some(ia);
                        changed = true;
                    }
                }
            }
            for jb in 0..nb {
                let (Some(db), Some(ia)) = (dist[na + jb], match_b[jb]) else { continue };
                let c = edges[ia].iter().find(|(j, _)| *j == jb).expect("matched edge").1;
                let nd = db.add(c.neg());
                if dist[ia].is_none_or(|cur| nd < cur) {
                    dist[ia] = Some(nd);
                    prev[ia] = Some(na + jb);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let best = (0..nb)
            .filter(|&jb| match_b[jb].is_none())
            .filter_map(|jb| dist[na + jb].map(|d| (d, jb)))
            .min_by(|x, y| x.0.partial_cmp(&y.0).expect("finite costs").then(x.1.cmp(&y.1)));
        let Some((_, mut jb)) = best else { break };
        // Walk back, flipping edges along the augmenting path.
        loop {
            let ia = prev[na + jb].expect("reached b-node has a predecessor");
            let prior = match_a[ia];
            match_a[ia] = Some(jb);
            match_b[jb] = Some(ia);
            match prior {
                Some(old) if prev[ia].is_some() => {
                    jb = old;
                }
                _ => break,
            }
        }
    }
    match_a
        .iter()
        .enumerate()
        .filter_map(|(ia, m)| m.map(|jb| (comp_a[ia], comp_b[jb])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{canonical_street_scene, Scatterer, StreetParams};

    #[test]
    fn partition_is_6_3_3_4() {
        let count = |g| FEATURE_GROUPS.iter().filter(|x| **x == g).count();
        assert_eq!([count(Group::L), count(Group::V), count(Group::B), count(Group::D)], [6, 3, 3, 4]);
        for (name, g) in FEATURE_NAMES.iter().zip(FEATURE_GROUPS) {
            assert!(name.starts_with(g.letter()));
        }
    }

    #[test]
    fn empty_scene_features() {
        let scene = Scene::new(Vec3::new(0.0, 0.0, 10.0), 28e9, vec![]).unwrap();
        let rx = Vec3::new(30.0, 40.0, 10.0);
        let f = extract_features(&scene, rx).unwrap().0;
        assert_eq!(&f[9..12], &[0.0, 0.0, 0.0]);
        assert_eq!(f[12], 50.0);
        assert_eq!(f[15], f[12]);
        // Sentinel: diagonal of bounds grown to include the receiver.
        assert_eq!(f[13], 50.0);
        assert_eq!(f[14], 50.0);
        assert_eq!(&f[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&f[6..9], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_blocker_sets_b_group() {
        let wall = Scatterer::new(9, Vec3::new(5.0, 0.0, 5.0), [1.0, 40.0, 40.0]);
        let scene = Scene::new(Vec3::new(0.0, 0.0, 2.0), 28e9, vec![wall]).unwrap();
        let f = extract_features(&scene, Vec3::new(10.0, 0.0, 2.0)).unwrap().0;
        assert_eq!(f[9], 1.0);
        assert_eq!(f[10], 1.0);
        assert!((f[11] - 0.1).abs() < 1e-12);
        assert_eq!(f[6], 1600.0);
        assert_eq!(f[7], 40.0);
        assert_eq!(f[13], 4.5);
    }

    #[test]
    fn zero_sigma_realizations_repeat_the_baseline() {
        let (scene, traj) = canonical_street_scene(&StreetParams::default()).unwrap();
        let cfg = RealizationConfig { n_realizations: 5, scatterer_jitter_sigma: 0.0, rx_jitter_sigma: 0.0, seed: 3 };
        let rows = realize(&scene, traj.positions[0], 1, 0.0, &cfg).unwrap();
        for r in &rows[1..] {
            assert_eq!(r.features, rows[0].features);
            assert_eq!(r.path_loss_db, rows[0].path_loss_db);
        }
    }

    #[test]
    fn realizations_are_reproducible_and_independent() {
        let (scene, traj) = canonical_street_scene(&StreetParams::default()).unwrap();
        let cfg = RealizationConfig { n_realizations: 8, seed: 11, ..Default::default() };
        let a = realize(&scene, traj.positions[2], 3, 0.0, &cfg).unwrap();
        let b = realize(&scene, traj.positions[2], 3, 0.0, &cfg).unwrap();
        assert_eq!(a, b);
        let longer = realize(&scene, traj.positions[2], 3, 0.0, &RealizationConfig { n_realizations: 12, ..cfg }).unwrap();
        assert_eq!(&longer[..8], &a[..]);
    }

    #[test]
    fn config_validation() {
        assert!(RealizationConfig { n_realizations: 1, ..Default::default() }.validate().is_err());
        assert!(RealizationConfig { rx_jitter_sigma: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let row = DatasetRow {
            position_id: 1,
            realization_id: 0,
            features: FeatureVector([0.0; N_FEATURES]),
            path_loss_db: 100.0,
            los: true,
            timestamp: 0.0,
        };
        assert!(Dataset::new(vec![row.clone(), row]).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let (scene, traj) = canonical_street_scene(&StreetParams::default()).unwrap();
        let cfg = RealizationConfig { n_realizations: 4, seed: 5, ..Default::default() };
        let rows = realize(&scene, traj.positions[0], 1, 1.0, &cfg).unwrap();
        let ds = Dataset::new(rows).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&DATASET_HEADER.join(",")));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    fn rec(t: f64, x: f64) -> (f64, Vec3) {
        (t, Vec3::new(x, 0.0, 0.0))
    }

    #[test]
    fn identical_streams_pair_fully() {
        let s: Vec<_> = (0..6).map(|k| rec(k as f64, k as f64)).collect();
        let pairs = match_streams(&s, &s, 0.1, 0.1).unwrap();
        assert_eq!(pairs, (0..6).map(|k| (k, k)).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_time_ranges_pair_nothing() {
        let a: Vec<_> = (0..4).map(|k| rec(k as f64, 0.0)).collect();
        let b: Vec<_> = (0..4).map(|k| rec(100.0 + k as f64, 0.0)).collect();
        assert!(match_streams(&a, &b, 1.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn unsorted_stream_rejected() {
        let a = vec![rec(1.0, 0.0), rec(0.0, 0.0)];
        assert!(matches!(match_streams(&a, &a, 1.0, 1.0), Err(RekpError::InvalidArgument(_))));
    }

    #[test]
    fn tie_prefers_earlier_record() {
        // One channel record equidistant in time from two PEI records.
        let pei = vec![rec(0.0, 0.0), rec(2.0, 0.0)];
        let ch = vec![rec(1.0, 0.0)];
        assert_eq!(match_streams(&pei, &ch, 1.5, 1.0).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn maximizes_pairs_over_greedy() {
        // Greedy nearest would pair b0 with a1 and strand a0.
        let a = vec![rec(0.0, 0.0), rec(0.9, 0.0)];
        let b = vec![rec(1.0, 0.0), rec(1.8, 0.0)];
        let pairs = match_streams(&a, &b, 1.0, 1.0).unwrap();
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn align_builds_dataset_and_report() {
        let f = FeatureVector([1.0; N_FEATURES]);
        let pei = vec![
            PeiRecord { timestamp: 0.0, position: Vec3::ZERO, features: f },
            PeiRecord { timestamp: 5.0, position: Vec3::ZERO, features: f },
        ];
        let ch = vec![ChannelRecord {
            timestamp: 0.05,
            position: Vec3::ZERO,
            position_id: 1,
            realization_id: 0,
            path_loss_db: 90.0,
            los: true,
        }];
        let al = align_streams(&pei, &ch, 0.1, 0.5).unwrap();
        assert_eq!(al.pairs, vec![(0, 0)]);
        assert_eq!(al.dropped, DropReport { unmatched_pei: 1, unmatched_channel: 0 });
        assert_eq!(al.dataset.rows()[0].features, f);
        assert_eq!(al.dataset.rows()[0].timestamp, 0.05);
    }
}
