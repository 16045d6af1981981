//! CLEAR-MOT, Identity (IDF1) and HOTA, following the TrackEval reference implementation.
//!
//! Sequences are scored independently and then combined the way TrackEval combines
//! sequences: integer counts are summed, association terms are TP-weighted.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hungarian::assignment_pairs;
use super::iou;
use crate::datamodel::mot::{BBox, GroundTruthTrack};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

pub fn hota_alphas() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// One video: per frame, the GT and predicted ids (dense indices) with their boxes.
#[derive(Debug, Clone, Default)]
pub struct Sequence {
    pub n_gt_ids: usize,
    pub n_pred_ids: usize,
    pub frames: Vec<FrameData>,
}

#[derive(Debug, Clone, Default)]
pub struct FrameData {
    pub gt_ids: Vec<usize>,
    pub pred_ids: Vec<usize>,
    /// `similarity[i][j]` = IoU of GT `i` and prediction `j` in this frame.
    pub similarity: Vec<Vec<f64>>,
}

/// Track index and box, for one frame.
type Boxes = Vec<(usize, BBox)>;

impl Sequence {
    /// Builds a sequence from the tracks of one video, over the union of their frames.
    pub fn from_tracks(gt: &[&GroundTruthTrack], pred: &[&GroundTruthTrack]) -> Self {
        let mut frames: BTreeMap<u32, (Boxes, Boxes)> = BTreeMap::new();
        for (i, t) in gt.iter().enumerate() {
            for (&f, &b) in &t.boxes {
                frames.entry(f).or_default().0.push((i, b));
            }
        }
        for (j, t) in pred.iter().enumerate() {
            for (&f, &b) in &t.boxes {
                frames.entry(f).or_default().1.push((j, b));
            }
        }
        Sequence {
            n_gt_ids: gt.len(),
            n_pred_ids: pred.len(),
            frames: frames
                .into_values()
                .map(|(g, p)| FrameData {
                    gt_ids: g.iter().map(|x| x.0).collect(),
                    pred_ids: p.iter().map(|x| x.0).collect(),
                    similarity: g
                        .iter()
                        .map(|(_, gb)| p.iter().map(|(_, pb)| iou(gb, pb)).collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub idsw: u64,
    pub motp_sum: f64,
}

impl ClearCounts {
    pub fn mota(&self) -> f64 {
        let denom = (self.tp + self.fn_).max(1) as f64;
        (self.tp as f64 - self.fp as f64 - self.idsw as f64) / denom
    }

    pub fn motp(&self) -> f64 {
        self.motp_sum / self.tp.max(1) as f64
    }

    fn add(&mut self, o: &ClearCounts) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.fp += o.fp;
        self.idsw += o.idsw;
        self.motp_sum += o.motp_sum;
    }
}

/// Per-frame matching that prefers keeping the previous frame's match when it still
/// clears the IoU threshold; an identity switch is counted when a GT track's matched
/// prediction differs from the one it was last matched to.
pub fn eval_clear(seq: &Sequence, threshold: f64) -> ClearCounts {
    let mut out = ClearCounts::default();
    let mut prev_id: Vec<Option<usize>> = vec![None; seq.n_gt_ids];
    let mut prev_step: Vec<Option<usize>> = vec![None; seq.n_gt_ids];
    for f in &seq.frames {
        let (ng, np) = (f.gt_ids.len(), f.pred_ids.len());
        if ng == 0 {
            out.fp += np as u64;
            continue;
        }
        if np == 0 {
            out.fn_ += ng as u64;
            continue;
        }
        let score: Vec<Vec<f64>> = (0..ng)
            .map(|i| {
                (0..np)
                    .map(|j| {
                        let sim = f.similarity[i][j];
                        if sim < threshold - EPS {
                            0.0
                        } else {
                            let carry = (prev_step[f.gt_ids[i]] == Some(f.pred_ids[j])) as u8 as f64;
                            1000.0 * carry + sim
                        }
                    })
                    .collect()
            })
            .collect();
        let neg: Vec<Vec<f64>> = score.iter().map(|r| r.iter().map(|s| -s).collect()).collect();
        let matches: Vec<(usize, usize)> = assignment_pairs(&neg)
            .into_iter()
            .filter(|&(i, j)| score[i][j] > EPS)
            .collect();
        prev_step.iter_mut().for_each(|x| *x = None);
        for &(i, j) in &matches {
            let (g, p) = (f.gt_ids[i], f.pred_ids[j]);
            if prev_id[g].is_some_and(|q| q != p) {
                out.idsw += 1;
            }
            prev_id[g] = Some(p);
            prev_step[g] = Some(p);
            out.motp_sum += f.similarity[i][j];
        }
        let m = matches.len() as u64;
        out.tp += m;
        out.fn_ += ng as u64 - m;
        out.fp += np as u64 - m;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityCounts {
    pub idtp: f64,
    pub idfn: f64,
    pub idfp: f64,
}

impl IdentityCounts {
    pub fn idf1(&self) -> f64 {
        self.idtp / (self.idtp + 0.5 * self.idfp + 0.5 * self.idfn).max(1.0)
    }

    pub fn idr(&self) -> f64 {
        self.idtp / (self.idtp + self.idfn).max(1.0)
    }

    pub fn idp(&self) -> f64 {
        self.idtp / (self.idtp + self.idfp).max(1.0)
    }
}

/// Global one-to-one matching of whole trajectories that minimizes IDFN + IDFP;
/// a frame counts toward a pair when their IoU is at least `threshold`.
pub fn eval_idf1(seq: &Sequence, threshold: f64) -> IdentityCounts {
    let (g, t) = (seq.n_gt_ids, seq.n_pred_ids);
    let mut potential = vec![vec![0.0f64; t]; g];
    let mut gt_count = vec![0.0f64; g];
    let mut pred_count = vec![0.0f64; t];
    for f in &seq.frames {
        for (i, &gi) in f.gt_ids.iter().enumerate() {
            gt_count[gi] += 1.0;
            for (j, &pj) in f.pred_ids.iter().enumerate() {
                if f.similarity[i][j] >= threshold {
                    potential[gi][pj] += 1.0;
                }
            }
        }
        for &pj in &f.pred_ids {
            pred_count[pj] += 1.0;
        }
    }
    let total_gt: f64 = gt_count.iter().sum();
    let total_pred: f64 = pred_count.iter().sum();
    if g == 0 || t == 0 {
        return IdentityCounts {
            idtp: 0.0,
            idfn: total_gt,
            idfp: total_pred,
        };
    }
    let size = g + t;
    let mut fn_mat = vec![vec![0.0f64; size]; size];
    let mut fp_mat = vec![vec![0.0f64; size]; size];
    for r in fp_mat.iter_mut().skip(g) {
        r[..t].iter_mut().for_each(|x| *x = 1e10);
    }
    for r in fn_mat.iter_mut().take(g) {
        r[t..].iter_mut().for_each(|x| *x = 1e10);
    }
    for i in 0..g {
        fn_mat[i][..t].iter_mut().for_each(|x| *x = gt_count[i]);
        fn_mat[i][t + i] = gt_count[i];
    }
    for j in 0..t {
        for row in fp_mat.iter_mut().take(g) {
            row[j] = pred_count[j];
        }
        fp_mat[g + j][j] = pred_count[j];
    }
    for i in 0..g {
        for j in 0..t {
            fn_mat[i][j] -= potential[i][j];
            fp_mat[i][j] -= potential[i][j];
        }
    }
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|r| (0..size).map(|c| fn_mat[r][c] + fp_mat[r][c]).collect())
        .collect();
    let (mut idfn, mut idfp) = (0.0, 0.0);
    for (r, c) in assignment_pairs(&cost) {
        idfn += fn_mat[r][c];
        idfp += fp_mat[r][c];
    }
    IdentityCounts {
        idtp: total_gt - idfn,
        idfn,
        idfp,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HotaCounts {
    pub alphas: Vec<f64>,
    pub tp: Vec<f64>,
    pub fn_: Vec<f64>,
    pub fp: Vec<f64>,
    pub assa: Vec<f64>,
    pub loca_sum: Vec<f64>,
}

impl HotaCounts {
    pub fn deta(&self) -> Vec<f64> {
        (0..self.alphas.len())
            .map(|a| self.tp[a] / (self.tp[a] + self.fn_[a] + self.fp[a]).max(1.0))
            .collect()
    }

    pub fn hota_per_alpha(&self) -> Vec<f64> {
        self.deta()
            .iter()
            .zip(&self.assa)
            .map(|(d, a)| (d * a).sqrt())
            .collect()
    }

    pub fn loca(&self) -> Vec<f64> {
        (0..self.alphas.len())
            .map(|a| self.loca_sum[a].max(1e-10) / self.tp[a].max(1e-10))
            .collect()
    }

    fn mean(v: &[f64]) -> f64 {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn hota(&self) -> f64 {
        Self::mean(&self.hota_per_alpha())
    }

    pub fn deta_mean(&self) -> f64 {
        Self::mean(&self.deta())
    }

    pub fn assa_mean(&self) -> f64 {
        Self::mean(&self.assa)
    }

    pub fn loca_mean(&self) -> f64 {
        Self::mean(&self.loca())
    }

    fn combine(parts: &[HotaCounts]) -> HotaCounts {
        let alphas = hota_alphas();
        let na = alphas.len();
        let mut out = HotaCounts {
            alphas,
            tp: vec![0.0; na],
            fn_: vec![0.0; na],
            fp: vec![0.0; na],
            assa: vec![0.0; na],
            loca_sum: vec![0.0; na],
        };
        for p in parts {
            for a in 0..na {
                out.tp[a] += p.tp[a];
                out.fn_[a] += p.fn_[a];
                out.fp[a] += p.fp[a];
                out.loca_sum[a] += p.loca_sum[a];
                out.assa[a] += p.assa[a] * p.tp[a];
            }
        }
        for a in 0..na {
            out.assa[a] /= out.tp[a].max(1e-10);
        }
        out
    }
}

/// HOTA over 19 localization thresholds with association-aware matching.
pub fn eval_hota(seq: &Sequence) -> HotaCounts {
    let alphas = hota_alphas();
    let na = alphas.len();
    let (g, t) = (seq.n_gt_ids, seq.n_pred_ids);
    let mut potential = vec![vec![0.0f64; t]; g];
    let mut gt_count = vec![0.0f64; g];
    let mut pred_count = vec![0.0f64; t];
    for f in &seq.frames {
        let ng = f.gt_ids.len();
        let np = f.pred_ids.len();
        let row_sum: Vec<f64> = (0..ng).map(|i| f.similarity[i].iter().sum()).collect();
        let col_sum: Vec<f64> = (0..np).map(|j| (0..ng).map(|i| f.similarity[i][j]).sum()).collect();
        for i in 0..ng {
            for j in 0..np {
                let s = f.similarity[i][j];
                let denom = row_sum[i] + col_sum[j] - s;
                if denom > EPS {
                    potential[f.gt_ids[i]][f.pred_ids[j]] += s / denom;
                }
            }
        }
        for &gi in &f.gt_ids {
            gt_count[gi] += 1.0;
        }
        for &pj in &f.pred_ids {
            pred_count[pj] += 1.0;
        }
    }
    let alignment: Vec<Vec<f64>> = (0..g)
        .map(|i| {
            (0..t)
                .map(|j| potential[i][j] / (gt_count[i] + pred_count[j] - potential[i][j]))
                .collect()
        })
        .collect();

    let mut out = HotaCounts {
        alphas: alphas.clone(),
        tp: vec![0.0; na],
        fn_: vec![0.0; na],
        fp: vec![0.0; na],
        assa: vec![0.0; na],
        loca_sum: vec![0.0; na],
    };
    let mut matches_count = vec![vec![vec![0.0f64; t]; g]; na];
    for f in &seq.frames {
        let (ng, np) = (f.gt_ids.len(), f.pred_ids.len());
        if ng == 0 || np == 0 {
            for a in 0..na {
                out.fp[a] += np as f64;
                out.fn_[a] += ng as f64;
            }
            continue;
        }
        let neg: Vec<Vec<f64>> = (0..ng)
            .map(|i| {
                (0..np)
                    .map(|j| -(alignment[f.gt_ids[i]][f.pred_ids[j]] * f.similarity[i][j]))
                    .collect()
            })
            .collect();
        let pairs = assignment_pairs(&neg);
        for (a, &alpha) in alphas.iter().enumerate() {
            let mut m = 0usize;
            for &(i, j) in &pairs {
                let s = f.similarity[i][j];
                if s >= alpha - EPS {
                    m += 1;
                    out.loca_sum[a] += s;
                    matches_count[a][f.gt_ids[i]][f.pred_ids[j]] += 1.0;
                }
            }
            out.tp[a] += m as f64;
            out.fn_[a] += (ng - m) as f64;
            out.fp[a] += (np - m) as f64;
        }
    }
    for (a, mc) in matches_count.iter().enumerate() {
        let mut sum = 0.0;
        for i in 0..g {
            for j in 0..t {
                let c = mc[i][j];
                if c > 0.0 {
                    sum += c * c / (gt_count[i] + pred_count[j] - c).max(1.0);
                }
            }
        }
        out.assa[a] = sum / out.tp[a].max(1.0);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub hota: f64,
    pub idf1: f64,
    pub idsw: u64,
    pub mota: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotMetrics {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub loca: f64,
    pub hota_per_alpha: Vec<f64>,
    pub idf1: f64,
    pub idr: f64,
    pub idp: f64,
    pub idtp: f64,
    pub idfp: f64,
    pub idfn: f64,
    /// Identity switches summed over videos.
    pub idsw: u64,
    /// Mean identity switches per video.
    pub idsw_per_video: f64,
    pub mota: f64,
    pub motp: f64,
    pub clear_tp: u64,
    pub clear_fn: u64,
    pub clear_fp: u64,
    pub per_video: Vec<VideoMetrics>,
}

struct VideoCounts {
    clear: ClearCounts,
    identity: IdentityCounts,
    hota: HotaCounts,
}

/// Scores predictions against ground truth, video by video (in parallel), then combines.
pub fn evaluate(gt: &[GroundTruthTrack], pred: &[GroundTruthTrack], match_iou: f64) -> MotMetrics {
    let videos: BTreeSet<&str> = gt.iter().chain(pred).map(|t| t.video_id.as_str()).collect();
    let videos: Vec<&str> = videos.into_iter().collect();
    let counts: Vec<VideoCounts> = videos
        .par_iter()
        .map(|v| {
            let g: Vec<&GroundTruthTrack> = gt.iter().filter(|t| t.video_id == *v).collect();
            let p: Vec<&GroundTruthTrack> = pred.iter().filter(|t| t.video_id == *v).collect();
            let seq = Sequence::from_tracks(&g, &p);
            VideoCounts {
                clear: eval_clear(&seq, match_iou),
                identity: eval_idf1(&seq, match_iou),
                hota: eval_hota(&seq),
            }
        })
        .collect();

    let mut clear = ClearCounts::default();
    let mut identity = IdentityCounts::default();
    for c in &counts {
        clear.add(&c.clear);
        identity.idtp += c.identity.idtp;
        identity.idfn += c.identity.idfn;
        identity.idfp += c.identity.idfp;
    }
    let hota_parts: Vec<HotaCounts> = counts.iter().map(|c| c.hota.clone()).collect();
    let hota = HotaCounts::combine(&hota_parts);
    let per_video: Vec<VideoMetrics> = videos
        .iter()
        .zip(&counts)
        .map(|(v, c)| VideoMetrics {
            video_id: v.to_string(),
            hota: c.hota.hota(),
            idf1: c.identity.idf1(),
            idsw: c.clear.idsw,
            mota: c.clear.mota(),
        })
        .collect();
    MotMetrics {
        hota: hota.hota(),
        deta: hota.deta_mean(),
        assa: hota.assa_mean(),
        loca: hota.loca_mean(),
        hota_per_alpha: hota.hota_per_alpha(),
        idf1: identity.idf1(),
        idr: identity.idr(),
        idp: identity.idp(),
        idtp: identity.idtp,
        idfp: identity.idfp,
        idfn: identity.idfn,
        idsw: clear.idsw,
        idsw_per_video: if videos.is_empty() {
            0.0
        } else {
            clear.idsw as f64 / videos.len() as f64
        },
        mota: clear.mota(),
        motp: clear.motp(),
        clear_tp: clear.tp,
        clear_fn: clear.fn_,
        clear_fp: clear.fp,
        per_video,
    }
}
