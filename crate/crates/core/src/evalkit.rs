//! Anomaly scores per frame, ROC curves, AUROC and latent exports.
//!
//! A window's score belongs to its end frame, so the first `T - 1` frames of
//! every run carry no score. Higher scores mean more anomalous.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{frame_is_abnormal, AbnormalRange, Dataset, Label, SequentialSkeletonMap};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::models::ModelCheckpoint;

/// Windows scored per forward pass.
pub const SCORE_CHUNK: usize = 32;

fn label_name(label: Option<Label>) -> &'static str {
    label.map_or("unlabeled", Label::as_str)
}

fn parse_label(text: &str) -> Result<Option<Label>> {
    match text {
        "normal" => Ok(Some(Label::Normal)),
        "abnormal" => Ok(Some(Label::Abnormal)),
        "unlabeled" => Ok(None),
        other => Err(Error::Parse {
            context: "label column".into(),
            detail: format!("unknown label `{other}`"),
        }),
    }
}

fn csv_error(context: &str, e: csv::Error) -> Error {
    Error::Parse {
        context: context.into(),
        detail: e.to_string(),
    }
}

fn check_input(checkpoint: &ModelCheckpoint, window: &SequentialSkeletonMap) -> Result<()> {
    let frames = checkpoint.architecture().input_frames(checkpoint.model.config());
    if window.len() != frames {
        return Err(Error::Incompatible(format!(
            "{} checkpoint scores {frames}-frame inputs, got a {}-frame window",
            checkpoint.architecture(),
            window.len()
        )));
    }
    Ok(())
}

/// Score of one window: eval mode, `z = mu`, `-bce_sum / D` (minus `kl / D`
/// with `with_kl`).
pub fn score_window(checkpoint: &ModelCheckpoint, window: &SequentialSkeletonMap, with_kl: bool) -> Result<f64> {
    Ok(score_many(checkpoint, &[window], with_kl)?[0])
}

fn score_many(checkpoint: &ModelCheckpoint, windows: &[&SequentialSkeletonMap], with_kl: bool) -> Result<Vec<f64>> {
    for w in windows {
        check_input(checkpoint, w)?;
    }
    let scores = checkpoint.model.score_windows(windows, with_kl, SCORE_CHUNK)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!(
            "non-finite score for {}:{}",
            windows[i].segment_id(),
            windows[i].end_frame()
        )));
    }
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub segment: String,
    pub frame: u64,
    pub score: f64,
    pub label: Option<Label>,
}

/// Per-frame anomaly scores, at most one per `(segment, frame)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSeries {
    entries: Vec<ScoreEntry>,
}

impl ScoreSeries {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Validation(format!("score at {}:{} is not finite", e.segment, e.frame)));
            }
            if !seen.insert((e.segment.as_str(), e.frame)) {
                return Err(Error::Validation(format!("two scores for frame {}:{}", e.segment, e.frame)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(score, is_abnormal)` for every labeled entry.
    pub fn labeled_scores(&self) -> Vec<(f64, bool)> {
        self.entries
            .iter()
            .filter_map(|e| e.label.map(|l| (e.score, l.is_abnormal())))
            .collect()
    }

    /// `segment,frame,score,label`; scores keep full precision.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| csv_error("score csv", e);
        w.write_record(["segment", "frame", "score", "label"]).map_err(io)?;
        for e in &self.entries {
            w.write_record([
                e.segment.clone(),
                e.frame.to_string(),
                format!("{:?}", e.score),
                label_name(e.label).to_string(),
            ])
            .map_err(io)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| csv_error("score csv header", e))?;
        if header != vec!["segment", "frame", "score", "label"] {
            return Err(Error::Format("score csv header must be `segment,frame,score,label`".into()));
        }
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let context = format!("score csv row {}", i + 2);
            let rec = rec.map_err(|e| csv_error(&context, e))?;
            let bad = |detail: String| Error::Parse {
                context: context.clone(),
                detail,
            };
            entries.push(ScoreEntry {
                segment: rec[0].to_string(),
                frame: rec[1].parse().map_err(|_| bad(format!("bad frame `{}`", &rec[1])))?,
                score: rec[2].parse().map_err(|_| bad(format!("bad score `{}`", &rec[2])))?,
                label: parse_label(&rec[3])?,
            });
        }
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}

/// Scores every window and assigns the score to its end frame. Frames are
/// labeled from `ranges` when given.
pub fn score_frames(
    checkpoint: &ModelCheckpoint,
    windows: &[SequentialSkeletonMap],
    ranges: Option<&[AbnormalRange]>,
    with_kl: bool,
) -> Result<ScoreSeries> {
    let refs: Vec<_> = windows.iter().collect();
    let labels = windows.iter().map(|w| {
        ranges.map(|r| {
            if frame_is_abnormal(r, w.segment_id(), w.end_frame()) {
                Label::Abnormal
            } else {
                Label::Normal
            }
        })
    });
    series(checkpoint, &refs, labels, with_kl)
}

/// Scores the records of a dataset, keeping its labels.
pub fn score_dataset(checkpoint: &ModelCheckpoint, dataset: &Dataset, with_kl: bool) -> Result<ScoreSeries> {
    let refs: Vec<_> = dataset.windows().collect();
    series(checkpoint, &refs, dataset.records().iter().map(|r| r.label), with_kl)
}

fn series(
    checkpoint: &ModelCheckpoint,
    windows: &[&SequentialSkeletonMap],
    labels: impl Iterator<Item = Option<Label>>,
    with_kl: bool,
) -> Result<ScoreSeries> {
    let scores = score_many(checkpoint, windows, with_kl)?;
    let entries = windows
        .iter()
        .zip(scores)
        .zip(labels)
        .map(|((w, score), label)| ScoreEntry {
            segment: w.segment_id().to_string(),
            frame: w.end_frame(),
            score,
            label,
        })
        .collect();
    ScoreSeries::new(entries)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

fn class_counts(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::Evaluation(format!("score {s} is not finite")));
    }
    let pos = scores.iter().filter(|(_, p)| *p).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(format!(
            "ROC undefined: {pos} abnormal and {neg} normal samples"
        )));
    }
    Ok((pos, neg))
}

/// Sweeps the threshold from `+inf` through every distinct score down to
/// `-inf`, predicting abnormal when `score >= threshold`; AUROC by the
/// trapezoidal rule.
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    let auroc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auroc })
}

/// Pairwise AUROC: the mean over (abnormal, normal) pairs of 1 when the
/// abnormal sample scores higher, 1/2 on a tie.
pub fn auroc_oracle(scores: &[(f64, bool)]) -> Result<f64> {
    let (pos, neg) = class_counts(scores)?;
    let mut wins = 0.0;
    for (p, _) in scores.iter().filter(|(_, a)| *a) {
        for (n, _) in scores.iter().filter(|(_, a)| !*a) {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

impl RocCurve {
    /// `threshold,fpr,tpr` rows then a `# auroc=` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(out, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr);
        }
        let _ = writeln!(out, "# auroc={:.6}", self.auroc);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub segment: String,
    pub end_frame: u64,
    pub label: Option<Label>,
    pub mu: Vec<f64>,
}

/// Posterior means of a set of windows, ready for an external projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    pub latent_dim: usize,
    pub rows: Vec<LatentRow>,
}

/// Eval-mode posterior mean of every window. `labels` is either empty or one
/// per window.
pub fn export_latents(
    checkpoint: &ModelCheckpoint,
    windows: &[&SequentialSkeletonMap],
    labels: &[Option<Label>],
) -> Result<LatentTable> {
    if !labels.is_empty() && labels.len() != windows.len() {
        return Err(Error::Contract(format!(
            "{} labels for {} windows",
            labels.len(),
            windows.len()
        )));
    }
    if !checkpoint.architecture().is_variational() {
        return Err(Error::Incompatible(format!(
            "{} checkpoint has no latent posterior",
            checkpoint.architecture()
        )));
    }
    let model = &checkpoint.model;
    let frames = checkpoint.architecture().input_frames(model.config());
    let mut rows = Vec::with_capacity(windows.len());
    for (c, part) in windows.chunks(SCORE_CHUNK).enumerate() {
        for w in part {
            check_input(checkpoint, w)?;
        }
        let input = crate::models::pack_windows(part, frames)?;
        let mus = model.posterior_means(&input, part.len())?;
        for (i, (w, mu)) in part.iter().zip(mus).enumerate() {
            rows.push(LatentRow {
                segment: w.segment_id().to_string(),
                end_frame: w.end_frame(),
                label: labels.get(c * SCORE_CHUNK + i).copied().flatten(),
                mu,
            });
        }
    }
    Ok(LatentTable {
        latent_dim: model.config().latent_dim,
        rows,
    })
}

impl LatentTable {
    /// `segment,end_frame,label,mu_1..mu_J`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| csv_error("latent csv", e);
        let mut header = vec!["segment".to_string(), "end_frame".into(), "label".into()];
        header.extend((1..=self.latent_dim).map(|j| format!("mu_{j}")));
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![r.segment.clone(), r.end_frame.to_string(), label_name(r.label).to_string()];
            rec.extend(r.mu.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(io)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .expect("csv output is UTF-8"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}
