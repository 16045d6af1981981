//! MOT Challenge text format: `frame,id,x,y,w,h,score,-1,-1,-1`.
//!
//! Raw detections use `id = -1`. Ground-truth files may carry extra
//! columns (class, visibility); only the first seven are read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }
}

/// One parsed line of a MOT text file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotRow {
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub bbox: BBox,
    pub score: f64,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub video_id: String,
    pub gt_track_id: i64,
    pub boxes: BTreeMap<u32, BBox>,
}

pub fn parse_mot(text: &str, path: &Path) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            message,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 6 {
            return Err(err(format!("expected at least 6 columns, got {}", cols.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cols[i]
                .parse::<f64>()
                .map_err(|e| err(format!("column {}: {e}", i + 1)))
        };
        let frame = num(0)?;
        let id = num(1)?;
        if frame < 0.0 || frame.fract() != 0.0 || id.fract() != 0.0 {
            return Err(err("frame and id must be integers".into()));
        }
        let bbox = BBox::new(num(2)?, num(3)?, num(4)?, num(5)?);
        if !bbox.is_valid() {
            return Err(err("bbox must be finite with positive size".into()));
        }
        let score = if cols.len() > 6 { num(6)? } else { 1.0 };
        if !score.is_finite() {
            return Err(err("score must be finite".into()));
        }
        rows.push(MotRow {
            frame: frame as u32,
            id: id as i64,
            bbox,
            score,
        });
    }
    Ok(rows)
}

pub fn read_mot(path: impl AsRef<Path>) -> Result<Vec<MotRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mot(&text, path)
}

pub fn format_mot(rows: &[MotRow]) -> String {
    let mut out = String::new();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            r.frame, r.id, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.score
        )
        .unwrap();
    }
    out
}

pub fn write_mot(path: impl AsRef<Path>, rows: &[MotRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_mot(rows)).map_err(|e| Error::io(path, e))
}

/// Turns raw rows into detections; `embeddings`, when given, pairs row `i` with vector `i`.
pub fn detections_from_rows(
    video_id: &str,
    rows: &[MotRow],
    embeddings: Option<Vec<Vec<f64>>>,
) -> Result<Vec<DetectionRecord>> {
    if let Some(e) = &embeddings {
        if e.len() != rows.len() {
            return Err(Error::InvalidInput(format!(
                "{} embeddings for {} detections",
                e.len(),
                rows.len()
            )));
        }
    }
    let mut emb = embeddings.map(|e| e.into_iter());
    rows.iter()
        .map(|r| {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::InvalidInput(format!(
                    "detection score {} outside [0, 1] at frame {}",
                    r.score, r.frame
                )));
            }
            Ok(DetectionRecord {
                video_id: video_id.to_string(),
                frame_index: r.frame,
                bbox: r.bbox,
                score: r.score,
                embedding: emb.as_mut().and_then(|it| it.next()),
            })
        })
        .collect()
}

/// Groups ground-truth rows by track id; a second box for the same `(id, frame)` is an error.
pub fn tracks_from_rows(video_id: &str, rows: &[MotRow]) -> Result<Vec<GroundTruthTrack>> {
    let mut tracks: BTreeMap<i64, BTreeMap<u32, BBox>> = BTreeMap::new();
    for r in rows {
        if tracks.entry(r.id).or_default().insert(r.frame, r.bbox).is_some() {
            return Err(Error::DuplicateKey(format!(
                "track {} has two boxes in frame {}",
                r.id, r.frame
            )));
        }
    }
    Ok(tracks
        .into_iter()
        .map(|(id, boxes)| GroundTruthTrack {
            video_id: video_id.to_string(),
            gt_track_id: id,
            boxes,
        })
        .collect())
}

/// Flattens tracks back into rows sorted by `(frame, id)`.
pub fn rows_from_tracks(tracks: &[GroundTruthTrack]) -> Vec<MotRow> {
    let mut rows: Vec<MotRow> = tracks
        .iter()
        .flat_map(|t| {
            t.boxes.iter().map(move |(&frame, &bbox)| MotRow {
                frame,
                id: t.gt_track_id,
                bbox,
                score: 1.0,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.id));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_detection_and_gt_lines() {
        let text = "1,-1,10,20,30,40,0.9,-1,-1,-1\n\n2,3,1.5,2.5,10,10,1,1,0.8\n";
        let rows = parse_mot(text, Path::new("x")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].id, -1);
        assert_eq!(rows[0].bbox, BBox::new(10.0, 20.0, 30.0, 40.0));
        assert_eq!(rows[1].frame, 2);
        assert_eq!(rows[1].score, 1.0);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(parse_mot("1,-1,0,0,0,5,0.9", Path::new("x")).is_err());
        assert!(parse_mot("1,-1,0,0,nan,5,0.9", Path::new("x")).is_err());
        assert!(parse_mot("1,-1,0,0", Path::new("x")).is_err());
    }

    #[test]
    fn format_parse_round_trip() {
        let rows = vec![MotRow {
            frame: 7,
            id: 2,
            bbox: BBox::new(1.25, -3.0, 40.0, 80.5),
            score: 0.75,
        }];
        let back = parse_mot(&format_mot(&rows), Path::new("x")).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn duplicate_gt_box_rejected() {
        let rows = parse_mot("1,1,0,0,5,5,1\n1,1,2,2,5,5,1", Path::new("x")).unwrap();
        assert!(tracks_from_rows("v", &rows).is_err());
    }

    #[test]
    fn detection_scores_checked() {
        let rows = parse_mot("1,-1,0,0,5,5,1.5", Path::new("x")).unwrap();
        assert!(detections_from_rows("v", &rows, None).is_err());
    }
}
