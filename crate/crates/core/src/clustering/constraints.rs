//! Cannot-link constraints derived from tracklet metadata.
//!
//! Three families, each independently sufficient:
//!
//! * frame: same video and overlapping frame ranges (both animals visible at once);
//! * location: different camera sites with overlapping wall-clock intervals,
//!   after shrinking each interval by the clock-skew tolerance;
//! * social group: both tracklets carry a group label and the labels differ.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::datamodel::TrackletMeta;
use crate::{Error, Result};

pub const DEFAULT_SKEW_TOLERANCE_SECS: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintOrigin {
    Frame,
    Location,
    SocialGroup,
}

/// Unordered tracklet pairs, each tagged with every rule that produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CannotLinkSet {
    pairs: BTreeMap<(String, String), BTreeSet<ConstraintOrigin>>,
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl CannotLinkSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `{a, b}`; a self-pair is ignored.
    pub fn insert(&mut self, a: &str, b: &str, origin: ConstraintOrigin) {
        if a != b {
            self.pairs.entry(ordered(a, b)).or_default().insert(origin);
        }
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.pairs.contains_key(&ordered(a, b))
    }

    pub fn origins(&self, a: &str, b: &str) -> Option<&BTreeSet<ConstraintOrigin>> {
        self.pairs.get(&ordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &BTreeSet<ConstraintOrigin>)> {
        self.pairs.iter().map(|((a, b), o)| (a.as_str(), b.as_str(), o))
    }

    pub fn count_by_origin(&self) -> BTreeMap<ConstraintOrigin, usize> {
        let mut out = BTreeMap::new();
        for o in self.pairs.values().flatten() {
            *out.entry(*o).or_insert(0) += 1;
        }
        out
    }

    /// Index-level view over `ids`; pairs naming unknown ids are dropped.
    pub fn index(&self, ids: &[String]) -> CannotLinks {
        let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let pairs = self
            .pairs
            .keys()
            .filter_map(|(a, b)| Some((*pos.get(a.as_str())?, *pos.get(b.as_str())?)));
        CannotLinks::from_pairs(ids.len(), pairs)
    }
}

/// Adjacency form used by the clustering algorithms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CannotLinks {
    partners: Vec<Vec<usize>>,
}

impl CannotLinks {
    pub fn none(n: usize) -> Self {
        CannotLinks {
            partners: vec![Vec::new(); n],
        }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut partners = vec![Vec::new(); n];
        for (a, b) in pairs {
            if a != b {
                partners[a].push(b);
                partners[b].push(a);
            }
        }
        for p in &mut partners {
            p.sort_unstable();
            p.dedup();
        }
        CannotLinks { partners }
    }

    pub fn n_items(&self) -> usize {
        self.partners.len()
    }

    pub fn partners(&self, i: usize) -> &[usize] {
        &self.partners[i]
    }

    pub fn linked(&self, a: usize, b: usize) -> bool {
        self.partners[a].binary_search(&b).is_ok()
    }

    pub fn n_pairs(&self) -> usize {
        self.partners.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.partners.iter().all(Vec::is_empty)
    }

    /// Pairs `(a, b)`, `a < b`, that share a non-noise label.
    pub fn violations(&self, labels: &[i64]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, ps) in self.partners.iter().enumerate() {
            for &b in ps {
                if a < b && labels[a] >= 0 && labels[a] == labels[b] {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

fn frames_overlap(a: &TrackletMeta, b: &TrackletMeta) -> bool {
    a.video_id == b.video_id && a.start_frame.max(b.start_frame) <= a.end_frame.min(b.end_frame)
}

fn shrunk(t: &TrackletMeta, skew: Duration) -> Option<(NaiveDateTime, NaiveDateTime)> {
    let (s, e) = (t.start_time? + skew, t.end_time? - skew);
    (s <= e).then_some((s, e))
}

fn simultaneous_elsewhere(a: &TrackletMeta, b: &TrackletMeta, skew: Duration) -> bool {
    if a.location_id == b.location_id {
        return false;
    }
    match (shrunk(a, skew), shrunk(b, skew)) {
        (Some((s1, e1)), Some((s2, e2))) => s1.max(s2) <= e1.min(e2),
        _ => false,
    }
}

fn different_groups(a: &TrackletMeta, b: &TrackletMeta) -> bool {
    matches!((&a.social_group, &b.social_group), (Some(x), Some(y)) if x != y)
}

/// All cannot-link pairs among `tracklets`.
///
/// Tracklets without wall-clock timestamps never trigger the location rule;
/// use [`require_timestamps`] when that rule must be complete.
pub fn derive_cannot_links(tracklets: &[TrackletMeta], skew_tolerance: Duration) -> CannotLinkSet {
    let mut set = CannotLinkSet::new();
    for (i, a) in tracklets.iter().enumerate() {
        for b in &tracklets[i + 1..] {
            if a.tracklet_id == b.tracklet_id {
                continue;
            }
            if frames_overlap(a, b) {
                set.insert(&a.tracklet_id, &b.tracklet_id, ConstraintOrigin::Frame);
            }
            if simultaneous_elsewhere(a, b, skew_tolerance) {
                set.insert(&a.tracklet_id, &b.tracklet_id, ConstraintOrigin::Location);
            }
            if different_groups(a, b) {
                set.insert(&a.tracklet_id, &b.tracklet_id, ConstraintOrigin::SocialGroup);
            }
        }
    }
    set
}

/// The location rule needs `start_time` and `end_time` on every tracklet.
pub fn require_timestamps(tracklets: &[TrackletMeta]) -> Result<()> {
    let missing: Vec<&str> = tracklets
        .iter()
        .filter(|t| t.start_time.is_none() || t.end_time.is_none())
        .map(|t| t.tracklet_id.as_str())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let shown: Vec<&str> = missing.iter().take(5).copied().collect();
    Err(Error::InvalidInput(format!(
        "location cannot-link rule (simultaneous recording at different sites) requires start_time and end_time on every tracklet; {} tracklet(s) lack them, e.g. {}",
        missing.len(),
        shown.join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Split;

    fn t(id: &str, video: &str, loc: &str, frames: (u32, u32)) -> TrackletMeta {
        TrackletMeta {
            tracklet_id: id.into(),
            video_id: video.into(),
            location_id: loc.into(),
            date: "2020-01-02".parse().unwrap(),
            start_time: None,
            end_time: None,
            start_frame: frames.0,
            end_frame: frames.1,
            identity: None,
            social_group: None,
            split: Split::Test,
        }
    }

    fn timed(mut m: TrackletMeta, start: &str, end: &str) -> TrackletMeta {
        m.start_time = Some(format!("2020-01-02T{start}:00").parse().unwrap());
        m.end_time = Some(format!("2020-01-02T{end}:00").parse().unwrap());
        m
    }

    #[test]
    fn frame_overlap_rule() {
        let set = derive_cannot_links(
            &[t("a", "v", "A", (0, 50)), t("b", "v", "A", (40, 90))],
            Duration::zero(),
        );
        assert_eq!(
            set.origins("a", "b").unwrap().iter().collect::<Vec<_>>(),
            vec![&ConstraintOrigin::Frame]
        );
        let set = derive_cannot_links(
            &[t("a", "v", "A", (0, 39)), t("b", "v", "A", (40, 90))],
            Duration::zero(),
        );
        assert!(set.is_empty());
        let set = derive_cannot_links(
            &[t("a", "v", "A", (0, 50)), t("b", "w", "A", (0, 50))],
            Duration::zero(),
        );
        assert!(set.is_empty());
    }

    #[test]
    fn location_rule() {
        let a = timed(t("a", "v1", "A", (0, 1)), "10:00", "10:05");
        let b = timed(t("b", "v2", "B", (0, 1)), "10:04", "10:10");
        let set = derive_cannot_links(&[a.clone(), b.clone()], Duration::zero());
        assert!(set.origins("a", "b").unwrap().contains(&ConstraintOrigin::Location));
        // One-minute overlap vanishes once both sides shrink by a minute.
        assert!(derive_cannot_links(&[a.clone(), b.clone()], Duration::minutes(1)).is_empty());
        let mut same_site = b;
        same_site.location_id = "A".into();
        assert!(derive_cannot_links(&[a, same_site], Duration::zero()).is_empty());
    }

    #[test]
    fn social_group_rule() {
        let mut a = t("a", "v1", "A", (0, 1));
        let mut b = t("b", "v2", "B", (5, 9));
        a.social_group = Some("G1".into());
        b.social_group = Some("G2".into());
        let set = derive_cannot_links(&[a.clone(), b.clone()], Duration::zero());
        assert!(set.origins("a", "b").unwrap().contains(&ConstraintOrigin::SocialGroup));
        b.social_group = None;
        assert!(derive_cannot_links(&[a, b], Duration::zero()).is_empty());
    }

    #[test]
    fn pairs_are_unordered_and_never_reflexive() {
        let mut set = CannotLinkSet::new();
        set.insert("b", "a", ConstraintOrigin::Frame);
        set.insert("a", "a", ConstraintOrigin::Frame);
        assert!(set.contains("a", "b") && set.contains("b", "a"));
        assert_eq!(set.len(), 1);
        let idx = set.index(&["a".to_string(), "b".to_string(), "c".to_string()]);
        assert!(idx.linked(0, 1) && idx.linked(1, 0) && !idx.linked(0, 2));
        assert_eq!(idx.violations(&[0, 0, 0]), vec![(0, 1)]);
        assert!(idx.violations(&[-1, -1, 0]).is_empty());
    }

    #[test]
    fn missing_timestamps_named() {
        let err = require_timestamps(&[t("a", "v", "A", (0, 1))]).unwrap_err();
        assert!(err.to_string().contains("location cannot-link rule"));
    }
}
