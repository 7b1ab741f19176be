//! Group weights, the 15-combination knowledge spectrum and the
//! single/double-group relationship graph.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, RekpError, Result};
use crate::features::Group;
use crate::forest::ImportanceVector;

pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    /// Indexed by [`Group::index`] (L, V, B, D).
    pub w: [f64; 4],
    pub degenerate: bool,
}

impl GroupWeights {
    /// Normalizes raw nonnegative group weights.
    pub fn from_raw(raw: [f64; 4]) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("group weights must be finite and nonnegative");
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Ok(Self { w: [0.0; 4], degenerate: true });
        }
        Ok(Self { w: raw.map(|v| v / total), degenerate: false })
    }

    pub fn get(&self, g: Group) -> f64 {
        self.w[g.index()]
    }

    /// Smallest set of groups, taken by descending weight (canonical order on
    /// ties), whose cumulative weight reaches `tau`. `tau >= 1` keeps every group.
    pub fn top_groups(&self, tau: f64) -> Vec<Group> {
        if tau >= 1.0 {
            return Group::ALL.to_vec();
        }
        let mut order = Group::ALL;
        order.sort_by(|a, b| self.get(*b).total_cmp(&self.get(*a)).then(a.cmp(b)));
        let mut out = Vec::new();
        let mut acc = 0.0;
        for g in order {
            out.push(g);
            acc += self.get(g);
            if acc >= tau {
                break;
            }
        }
        out
    }
}

/// Sums member importances per group according to `partition`, then normalizes.
pub fn group_weights(importances: &ImportanceVector, partition: &[Group]) -> Result<GroupWeights> {
    if importances.0.len() != partition.len() {
        return invalid(format!(
            "partition covers {} members but {} importances were given",
            partition.len(),
            importances.0.len()
        ));
    }
    let mut raw = [0.0; 4];
    for (v, g) in importances.0.iter().zip(partition) {
        raw[g.index()] += v.max(0.0);
    }
    GroupWeights::from_raw(raw)
}

/// A nonempty subset of {L, V, B, D} as a bitmask over group indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Subset(pub u8);

impl Subset {
    pub fn contains(self, g: Group) -> bool {
        self.0 & (1 << g.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn groups(self) -> impl Iterator<Item = Group> {
        Group::ALL.into_iter().filter(move |g| self.contains(*g))
    }

    pub fn name(self) -> String {
        self.groups().map(Group::letter).collect()
    }
}

/// The 15 nonempty subsets: by size, then lexicographic in L, V, B, D order.
pub fn canonical_subsets() -> [Subset; 15] {
    let mut all: Vec<Subset> = (1u8..16).map(Subset).collect();
    let key = |s: &Subset| {
        let idx: Vec<usize> = s.groups().map(Group::index).collect();
        (s.len(), idx)
    };
    all.sort_by_key(key);
    all.try_into().expect("15 subsets")
}

pub fn canonical_names() -> Vec<String> {
    canonical_subsets().iter().map(|s| s.name()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSpectrum {
    pub position_id: u32,
    pub los: bool,
    /// In [`canonical_subsets`] order.
    pub values: [f64; 15],
}

impl KnowledgeSpectrum {
    pub fn value(&self, s: Subset) -> f64 {
        let i = canonical_subsets().iter().position(|c| *c == s).expect("nonempty subset");
        self.values[i]
    }

    pub fn by_name(&self, name: &str) -> Option<f64> {
        canonical_subsets().iter().position(|c| c.name() == name).map(|i| self.values[i])
    }
}

fn require_nondegenerate(w: &GroupWeights) -> Result<()> {
    if w.degenerate {
        return Err(RekpError::NoKnowledge("all group weights are zero".into()));
    }
    Ok(())
}

/// Additive combination values: K(S) is the summed weight of the groups in S.
pub fn spectrum(w: &GroupWeights, position_id: u32, los: bool) -> Result<KnowledgeSpectrum> {
    require_nondegenerate(w)?;
    let values = canonical_subsets().map(|s| s.groups().map(|g| w.get(g)).sum::<f64>().clamp(0.0, 1.0));
    Ok(KnowledgeSpectrum { position_id, los, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: Group,
    pub b: Group,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipGraph {
    /// Node value per group, indexed by [`Group::index`].
    pub nodes: [f64; 4],
    /// The six pairs in canonical order.
    pub edges: Vec<Edge>,
}

pub fn build_graph(w: &GroupWeights) -> Result<RelationshipGraph> {
    let spec = spectrum(w, 0, false)?;
    let subsets = canonical_subsets();
    let mut nodes = [0.0; 4];
    let mut edges = Vec::with_capacity(6);
    for (s, v) in subsets.iter().zip(spec.values) {
        let gs: Vec<Group> = s.groups().collect();
        match gs.as_slice() {
            [g] => nodes[g.index()] = v,
            [a, b] => edges.push(Edge { a: *a, b: *b, value: v }),
            _ => {}
        }
    }
    Ok(RelationshipGraph { nodes, edges })
}

/// Mean absolute difference over the 15 canonical entries.
pub fn knowledge_delta(a: &KnowledgeSpectrum, b: &KnowledgeSpectrum) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() / 15.0
}

/// One row of the spectrum table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub position_id: u32,
    pub los: bool,
    pub weights: GroupWeights,
    /// `None` for degenerate positions.
    pub spectrum: Option<KnowledgeSpectrum>,
}

pub fn spectrum_header() -> Vec<String> {
    let mut h: Vec<String> = ["position_id", "los", "w_L", "w_V", "w_B", "w_D"].iter().map(|s| s.to_string()).collect();
    h.extend(canonical_names());
    h
}

/// Writes `spectrum.csv`. Degenerate rows carry zero weights and empty K cells.
pub fn write_spectrum_csv<W: Write>(rows: &[SpectrumRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(spectrum_header())?;
    for r in rows {
        let mut rec = vec![r.position_id.to_string(), if r.los { "1" } else { "0" }.to_string()];
        rec.extend(r.weights.w.iter().map(|v| v.to_string()));
        match &r.spectrum {
            Some(s) => rec.extend(s.values.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), 15)),
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_GROUPS;

    fn w(a: f64, b: f64, c: f64, d: f64) -> GroupWeights {
        GroupWeights::from_raw([a, b, c, d]).unwrap()
    }

    #[test]
    fn canonical_order() {
        assert_eq!(
            canonical_names(),
            ["L", "V", "B", "D", "LV", "LB", "LD", "VB", "VD", "BD", "LVB", "LVD", "LBD", "VBD", "LVBD"]
        );
    }

    #[test]
    fn single_member_importance() {
        let mut imp = vec![0.0; 16];
        imp[4] = 3.0;
        let gw = group_weights(&ImportanceVector(imp), &FEATURE_GROUPS).unwrap();
        assert_eq!(gw.w, [1.0, 0.0, 0.0, 0.0]);
        assert!(!gw.degenerate);
    }

    #[test]
    fn normalization_arithmetic() {
        let gw = w(2.0, 1.0, 0.5, 0.5);
        assert_eq!(gw.w, [0.5, 0.25, 0.125, 0.125]);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let gw = group_weights(&ImportanceVector(vec![0.0; 16]), &FEATURE_GROUPS).unwrap();
        assert!(gw.degenerate);
        assert_eq!(gw.w, [0.0; 4]);
        assert!(matches!(spectrum(&gw, 1, true), Err(RekpError::NoKnowledge(_))));
        assert!(build_graph(&gw).is_err());
    }

    #[test]
    fn partition_mismatch_rejected() {
        assert!(group_weights(&ImportanceVector(vec![1.0; 3]), &FEATURE_GROUPS).is_err());
    }

    #[test]
    fn additive_values() {
        let s = spectrum(&w(0.4, 0.3, 0.2, 0.1), 1, false).unwrap();
        assert!((s.by_name("LVBD").unwrap() - 1.0).abs() < 1e-12);
        assert!((s.by_name("LV").unwrap() - 0.7).abs() < 1e-12);
        assert!((s.by_name("BD").unwrap() - 0.3).abs() < 1e-12);
        let no_b = spectrum(&w(0.5, 0.2, 0.0, 0.3), 2, true).unwrap();
        assert_eq!(no_b.by_name("LVD"), no_b.by_name("LVBD"));
        let tiny_d = spectrum(&w(0.3, 0.3, 0.4, 1e-12), 3, false).unwrap();
        assert!((tiny_d.by_name("LVB").unwrap() - tiny_d.by_name("LVBD").unwrap()).abs() < 1e-9);
    }

    #[test]
    fn graph_matches_spectrum() {
        let gw = w(0.4, 0.3, 0.2, 0.1);
        let g = build_graph(&gw).unwrap();
        assert!((g.nodes[0] - 0.4).abs() < 1e-12);
        assert_eq!(g.edges.len(), 6);
        assert!((g.edges[0].value - 0.7).abs() < 1e-12);
        assert!((g.nodes.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let s = spectrum(&gw, 0, false).unwrap();
        for e in &g.edges {
            assert!(e.value >= g.nodes[e.a.index()].max(g.nodes[e.b.index()]));
            let name = format!("{}{}", e.a.letter(), e.b.letter());
            assert_eq!(Some(e.value), s.by_name(&name));
        }
    }

    #[test]
    fn delta_examples() {
        let a = spectrum(&w(1.0, 0.0, 0.0, 0.0), 1, false).unwrap();
        let b = spectrum(&w(0.0, 1.0, 0.0, 0.0), 2, false).unwrap();
        assert_eq!(knowledge_delta(&a, &a), 0.0);
        assert_eq!(knowledge_delta(&a, &b), knowledge_delta(&b, &a));
        assert!((knowledge_delta(&a, &b) - 8.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn top_groups_selection() {
        let gw = w(0.05, 0.15, 0.0, 0.8);
        assert_eq!(gw.top_groups(0.9), vec![Group::D, Group::V]);
        assert_eq!(gw.top_groups(0.5), vec![Group::D]);
        assert_eq!(gw.top_groups(1.0).len(), 4);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let gw = w(0.4, 0.3, 0.2, 0.1);
        let rows = vec![SpectrumRow { position_id: 1, los: false, weights: gw, spectrum: Some(spectrum(&gw, 1, false).unwrap()) }];
        let mut buf = Vec::new();
        write_spectrum_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 21);
        assert!(header.ends_with("VBD,LVBD"));
    }
}
