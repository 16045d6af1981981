//! Open-set, cross-encounter k-NN identification.
//!
//! Every query removes gallery records that share its [`EncounterKey`]
//! before ranking, so a probe can only be identified from a different
//! camera-day. Ranking is an exhaustive scan: similarities are exact dot
//! products on unit vectors and ties are broken by ascending `record_id`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{encounter_of, EmbeddingRecord, EncounterKey, Manifest, Split};
use crate::vecmath::dot;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 5;

/// Probes per gallery pass in batched search; keeps one gallery row hot for many dot products.
const QUERY_TILE: usize = 8;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub record_id: u64,
    pub identity: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub probe_record_id: u64,
    /// Best first.
    pub neighbors: Vec<Neighbor>,
    pub identity: String,
    pub confidence: f64,
}

/// Immutable, row-major gallery of unit vectors.
#[derive(Debug, Clone)]
pub struct Gallery {
    dim: usize,
    data: Vec<f64>,
    record_ids: Vec<u64>,
    identity_of: Vec<u32>,
    identities: Vec<String>,
    encounter_of: Vec<u32>,
    encounters: Vec<EncounterKey>,
    splits: Vec<Split>,
}

#[derive(Debug)]
pub struct GalleryBuilder {
    dim: usize,
    data: Vec<f64>,
    record_ids: Vec<u64>,
    identity_names: Vec<String>,
    encounter_keys: Vec<EncounterKey>,
    splits: Vec<Split>,
}

impl GalleryBuilder {
    pub fn new(dim: usize) -> Self {
        GalleryBuilder {
            dim,
            data: Vec::new(),
            record_ids: Vec::new(),
            identity_names: Vec::new(),
            encounter_keys: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        let mut b = Self::new(dim);
        b.data.reserve(n * dim);
        b
    }

    pub fn push(
        &mut self,
        record_id: u64,
        vector: &[f64],
        identity: &str,
        encounter: &EncounterKey,
        split: Split,
    ) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: format!("gallery record {record_id}"),
            });
        }
        self.data.extend_from_slice(vector);
        self.record_ids.push(record_id);
        self.identity_names.push(identity.to_string());
        self.encounter_keys.push(encounter.clone());
        self.splits.push(split);
        Ok(())
    }

    pub fn build(self) -> Result<Gallery> {
        if self.record_ids.is_empty() {
            return Err(Error::EmptyGallery);
        }
        let mut seen = BTreeSet::new();
        for id in &self.record_ids {
            if !seen.insert(*id) {
                return Err(Error::DuplicateKey(format!("gallery record_id {id}")));
            }
        }
        let identities: Vec<String> = self
            .identity_names
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let encounters: Vec<EncounterKey> = self
            .encounter_keys
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let identity_of = self
            .identity_names
            .iter()
            .map(|n| identities.binary_search(n).unwrap() as u32)
            .collect();
        let encounter_of = self
            .encounter_keys
            .iter()
            .map(|k| encounters.binary_search(k).unwrap() as u32)
            .collect();
        Ok(Gallery {
            dim: self.dim,
            data: self.data,
            record_ids: self.record_ids,
            identity_of,
            identities,
            encounter_of,
            encounters,
            splits: self.splits,
        })
    }
}

/// One query for batched search.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub record_id: u64,
    pub vector: &'a [f64],
    pub encounter: &'a EncounterKey,
}

/// Sorted best-first buffer of at most `k` `(similarity, record_id, row)` triples.
struct TopK {
    k: usize,
    items: Vec<(f64, u64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn better(a: (f64, u64), b: (f64, u64)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    #[inline]
    fn offer(&mut self, sim: f64, rid: u64, row: usize) {
        if self.items.len() == self.k {
            let worst = self.items[self.k - 1];
            if !Self::better((sim, rid), (worst.0, worst.1)) {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .iter()
            .position(|&(s, r, _)| Self::better((sim, rid), (s, r)))
            .unwrap_or(self.items.len());
        self.items.insert(pos, (sim, rid, row));
    }
}

impl Gallery {
    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn record_id(&self, i: usize) -> u64 {
        self.record_ids[i]
    }

    pub fn identity(&self, i: usize) -> &str {
        &self.identities[self.identity_of[i] as usize]
    }

    pub fn encounter(&self, i: usize) -> &EncounterKey {
        &self.encounters[self.encounter_of[i] as usize]
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    fn encounter_slot(&self, key: &EncounterKey) -> Option<u32> {
        self.encounters.binary_search(key).ok().map(|i| i as u32)
    }

    fn finish(&self, top: TopK) -> Result<Vec<Neighbor>> {
        if top.items.is_empty() {
            return Err(Error::NoEligibleNeighbors);
        }
        Ok(top
            .items
            .into_iter()
            .map(|(similarity, record_id, row)| Neighbor {
                record_id,
                identity: self.identity(row).to_string(),
                similarity,
            })
            .collect())
    }

    /// The `k` most similar records outside `exclude`, best first.
    pub fn search(&self, query: &[f64], exclude: &EncounterKey, k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(query, k)?;
        let skip = self.encounter_slot(exclude);
        let mut top = TopK::new(k);
        for row in 0..self.len() {
            if Some(self.encounter_of[row]) == skip {
                continue;
            }
            top.offer(dot(query, self.row(row)), self.record_ids[row], row);
        }
        self.finish(top)
    }

    /// Batched [`Gallery::search`]; output slot `i` belongs to `queries[i]`.
    ///
    /// Queries are processed in tiles in parallel; each result depends only
    /// on its own query, so the output is identical for any thread count.
    pub fn search_batch(&self, queries: &[Query<'_>], k: usize) -> Vec<Result<Vec<Neighbor>>> {
        queries
            .par_chunks(QUERY_TILE)
            .flat_map_iter(|tile| self.search_tile(tile, k))
            .collect()
    }

    fn search_tile(&self, tile: &[Query<'_>], k: usize) -> Vec<Result<Vec<Neighbor>>> {
        let checks: Vec<Result<()>> = tile.iter().map(|q| self.check_query(q.vector, k)).collect();
        let skips: Vec<Option<u32>> = tile.iter().map(|q| self.encounter_slot(q.encounter)).collect();
        let mut tops: Vec<TopK> = tile.iter().map(|_| TopK::new(k.max(1))).collect();
        for row in 0..self.len() {
            let g = self.row(row);
            let enc = self.encounter_of[row];
            let rid = self.record_ids[row];
            for (j, q) in tile.iter().enumerate() {
                if checks[j].is_err() || skips[j] == Some(enc) {
                    continue;
                }
                tops[j].offer(dot(q.vector, g), rid, row);
            }
        }
        checks
            .into_iter()
            .zip(tops)
            .map(|(c, top)| c.and_then(|_| self.finish(top)))
            .collect()
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        Ok(())
    }
}

/// Gallery for one evaluation split: that split, all of train, and the distractors.
///
/// Records of tracklets without an identity label cannot vote and are left out.
pub fn build_gallery(m: &Manifest, eval_split: Split) -> Result<Gallery> {
    if !matches!(eval_split, Split::Val | Split::Test) {
        return Err(Error::InvalidInput(format!(
            "evaluation split must be val or test, got {eval_split}"
        )));
    }
    let tracklets = m.tracklet_index();
    let mut b = GalleryBuilder::with_capacity(m.embedding_dim, m.records.len());
    for r in &m.records {
        let t = tracklets
            .get(r.tracklet_id.as_str())
            .ok_or_else(|| Error::MissingTracklet {
                record_id: r.record_id,
                tracklet_id: r.tracklet_id.clone(),
            })?;
        let admitted = matches!(t.split, Split::Train | Split::Distractor) || t.split == eval_split;
        if let (true, Some(identity)) = (admitted, &t.identity) {
            b.push(r.record_id, &r.vector, identity, &encounter_of(t), t.split)?;
        }
    }
    b.build()
}

/// Identity vote over a neighbour list.
///
/// Most frequent identity wins; count ties go to the larger similarity sum,
/// then to the lexicographically smaller identity. Confidence is the
/// winner's similarity mass over the total positive mass, clamped to `[0, 1]`.
pub fn vote_identity(neighbors: &[Neighbor]) -> (String, f64) {
    assert!(!neighbors.is_empty(), "vote over an empty neighbour list");
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for n in neighbors {
        let e = tally.entry(n.identity.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += n.similarity;
    }
    // BTreeMap iterates in lexicographic order, so strict comparisons keep the smaller name on ties.
    let (winner, (_, mass)) = tally
        .iter()
        .fold(None::<(&str, (usize, f64))>, |best, (&id, &(c, s))| match best {
            Some((_, (bc, bs))) if c < bc || (c == bc && s <= bs) => best,
            _ => Some((id, (c, s))),
        })
        .expect("non-empty");
    let positive: f64 = neighbors.iter().map(|n| n.similarity.max(0.0)).sum();
    let confidence = if positive > 0.0 {
        (mass / positive).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (winner.to_string(), confidence)
}

fn to_result(probe_record_id: u64, neighbors: Vec<Neighbor>) -> RetrievalResult {
    let (identity, confidence) = vote_identity(&neighbors);
    RetrievalResult {
        probe_record_id,
        neighbors,
        identity,
        confidence,
    }
}

pub fn knn_query(
    g: &Gallery,
    probe: &EmbeddingRecord,
    probe_encounter: &EncounterKey,
    k: usize,
) -> Result<RetrievalResult> {
    knn_vector(g, probe.record_id, &probe.vector, probe_encounter, k)
}

/// [`knn_query`] for a bare vector.
pub fn knn_vector(
    g: &Gallery,
    probe_record_id: u64,
    vector: &[f64],
    probe_encounter: &EncounterKey,
    k: usize,
) -> Result<RetrievalResult> {
    let neighbors = g.search(vector, probe_encounter, k)?;
    Ok(to_result(probe_record_id, neighbors))
}

pub fn knn_batch(g: &Gallery, queries: &[Query<'_>], k: usize) -> Vec<Result<RetrievalResult>> {
    g.search_batch(queries, k)
        .into_iter()
        .zip(queries)
        .map(|(r, q)| r.map(|n| to_result(q.record_id, n)))
        .collect()
}

/// A labelled frame-level query.
#[derive(Debug, Clone)]
pub struct Probe<'a> {
    pub record_id: u64,
    pub vector: &'a [f64],
    pub encounter: EncounterKey,
    pub identity: String,
}

/// Frame-level probes of `split`: records whose identity was seen in at
/// least two encounters within that split.
pub fn eval_probes(m: &Manifest, split: Split) -> Vec<Probe<'_>> {
    let tracklets = m.tracklet_index();
    let mut encounters: BTreeMap<&str, BTreeSet<EncounterKey>> = BTreeMap::new();
    for t in m.tracklets.iter().filter(|t| t.split == split) {
        if let Some(id) = &t.identity {
            encounters.entry(id).or_default().insert(encounter_of(t));
        }
    }
    m.records
        .iter()
        .filter_map(|r| {
            let t = tracklets.get(r.tracklet_id.as_str())?;
            let id = t.identity.as_deref()?;
            let multi = t.split == split && encounters.get(id).is_some_and(|e| e.len() >= 2);
            multi.then(|| Probe {
                record_id: r.record_id,
                vector: &r.vector,
                encounter: encounter_of(t),
                identity: id.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityAccuracy {
    pub identity: String,
    pub probes: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Report {
    /// Unweighted mean of per-identity accuracies.
    pub balanced_top1: f64,
    pub per_identity: Vec<IdentityAccuracy>,
}

/// Macro-averages `(identity, correct)` outcomes; identities are summed in sorted order.
pub fn macro_average<'a, I>(outcomes: I) -> Result<Top1Report>
where
    I: IntoIterator<Item = (&'a str, bool)>,
{
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (id, ok) in outcomes {
        let e = tally.entry(id).or_default();
        e.0 += 1;
        e.1 += ok as usize;
    }
    if tally.is_empty() {
        return Err(Error::NoProbes);
    }
    let per_identity: Vec<IdentityAccuracy> = tally
        .into_iter()
        .map(|(identity, (probes, correct))| IdentityAccuracy {
            identity: identity.to_string(),
            probes,
            correct,
            accuracy: correct as f64 / probes as f64,
        })
        .collect();
    let balanced_top1 = per_identity.iter().map(|a| a.accuracy).sum::<f64>() / per_identity.len() as f64;
    Ok(Top1Report {
        balanced_top1,
        per_identity,
    })
}

pub fn top1_report(g: &Gallery, probes: &[Probe<'_>], k: usize) -> Result<Top1Report> {
    if probes.is_empty() {
        return Err(Error::NoProbes);
    }
    let queries: Vec<Query<'_>> = probes
        .iter()
        .map(|p| Query {
            record_id: p.record_id,
            vector: p.vector,
            encounter: &p.encounter,
        })
        .collect();
    let results = knn_batch(g, &queries, k).into_iter().collect::<Result<Vec<_>>>()?;
    macro_average(
        probes
            .iter()
            .zip(&results)
            .map(|(p, r)| (p.identity.as_str(), r.identity == p.identity)),
    )
}

/// Top-1 accuracy balanced over identities.
pub fn balanced_top1(g: &Gallery, probes: &[Probe<'_>], k: usize) -> Result<f64> {
    top1_report(g, probes, k).map(|r| r.balanced_top1)
}
