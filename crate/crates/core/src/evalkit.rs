//! Detector evaluation: ROC, DET and precision–recall curves, operating
//! points, truth matching and diel (hour × day) aggregation.

use std::fmt::Write as _;

use chrono::{Duration, NaiveDate, Timelike};

use crate::eventstore::EventRecord;
use crate::segmentation::BBox;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Roc,
    Det,
    Pr,
}

impl std::str::FromStr for CurveKind {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "roc" => Ok(CurveKind::Roc),
            "det" => Ok(CurveKind::Det),
            "pr" => Ok(CurveKind::Pr),
            other => Err(EvalError::InvalidArgument(format!("unknown curve kind {other:?} (roc, det, pr)"))),
        }
    }
}

/// One operating point: everything scoring `>= threshold` is called
/// positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    /// `TP / (TP + FP)`; 1 where nothing is called positive.
    pub precision: f64,
    pub tp: u64,
    pub fp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub kind: CurveKind,
    /// Strictest threshold first.
    pub points: Vec<CurvePoint>,
    pub auc: Option<f64>,
    pub positives: u64,
    pub negatives: u64,
}

/// Operating points at every distinct score, strictest first.
///
/// ROC and DET curves start at an infinite threshold `(0, 0)` and end at
/// `(1, 1)`; tied scores share one point. The ROC AUC is the trapezoid area
/// under exactly these points, evaluated in integer arithmetic so perfect
/// and uninformative scorers give exactly 1 and 0.5.
pub fn curve(scores: &[f64], labels: &[bool], kind: CurveKind) -> Result<Curve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.len() < 2 {
        return Err(EvalError::InvalidArgument("need at least 2 scored items".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::InvalidArgument("scores contain NaN".into()));
    }
    let p = labels.iter().filter(|&&l| l).count() as u64;
    let n = labels.len() as u64 - p;
    match kind {
        CurveKind::Roc | CurveKind::Det if p == 0 || n == 0 => {
            return Err(EvalError::InvalidArgument("ROC/DET need both positive and negative labels".into()))
        }
        CurveKind::Pr if p == 0 => {
            return Err(EvalError::InvalidArgument("precision-recall needs at least one positive".into()))
        }
        _ => {}
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let point = |threshold: f64, tp: u64, fp: u64| CurvePoint {
        threshold,
        fpr: if n == 0 { 0.0 } else { fp as f64 / n as f64 },
        tpr: tp as f64 / p as f64,
        precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
        tp,
        fp,
    };
    let mut points = Vec::new();
    if kind != CurveKind::Pr {
        points.push(point(f64::INFINITY, 0, 0));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(point(s, tp, fp));
    }
    let auc = (kind == CurveKind::Roc).then(|| {
        let twice_area: u128 = points
            .windows(2)
            .map(|w| (w[1].fp - w[0].fp) as u128 * (w[1].tp + w[0].tp) as u128)
            .sum();
        twice_area as f64 / (2 * p as u128 * n as u128) as f64
    });
    Ok(Curve {
        kind,
        points,
        auc,
        positives: p,
        negatives: n,
    })
}

/// TPR at a target false-positive rate.
///
/// Takes the last point whose FPR does not exceed the target (on a vertical
/// run of the ROC this is its top) and interpolates linearly towards the
/// next point when that point lies beyond the target.
pub fn tpr_at_fpr(curve: &Curve, target_fpr: f64) -> f64 {
    let pts = &curve.points;
    let i = match pts.iter().rposition(|p| p.fpr <= target_fpr) {
        Some(i) => i,
        None => return pts.first().map_or(0.0, |p| p.tpr),
    };
    let a = pts[i];
    match pts.get(i + 1) {
        Some(b) if a.fpr < target_fpr && b.fpr > a.fpr => {
            a.tpr + (b.tpr - a.tpr) * (target_fpr - a.fpr) / (b.fpr - a.fpr)
        }
        _ => a.tpr,
    }
}

impl Curve {
    /// Tab-separated table, `#` metadata first.
    pub fn to_table(&self, meta: &[String]) -> String {
        let mut s = String::new();
        for m in meta {
            let _ = writeln!(s, "# {m}");
        }
        let _ = writeln!(s, "# positives={} negatives={}", self.positives, self.negatives);
        if let Some(auc) = self.auc {
            let _ = writeln!(s, "# auc={auc:.6}");
        }
        let header = match self.kind {
            CurveKind::Roc => "threshold\tfpr\ttpr",
            CurveKind::Det => "threshold\tfpr\tfnr",
            CurveKind::Pr => "threshold\trecall\tprecision",
        };
        let _ = writeln!(s, "{header}");
        for p in &self.points {
            let (x, y) = self.xy(p);
            let _ = writeln!(s, "{}\t{x:.6}\t{y:.6}", fmt_threshold(p.threshold));
        }
        s
    }

    fn xy(&self, p: &CurvePoint) -> (f64, f64) {
        match self.kind {
            CurveKind::Roc => (p.fpr, p.tpr),
            CurveKind::Det => (p.fpr, 1.0 - p.tpr),
            CurveKind::Pr => (p.tpr, p.precision),
        }
    }

    /// A bare line chart on the unit square.
    pub fn to_svg(&self, title: &str) -> String {
        const SIZE: f64 = 400.0;
        const MARGIN: f64 = 40.0;
        let (xl, yl) = match self.kind {
            CurveKind::Roc => ("false positive rate", "true positive rate"),
            CurveKind::Det => ("false positive rate", "miss rate"),
            CurveKind::Pr => ("recall", "precision"),
        };
        let pts: Vec<String> = self
            .points
            .iter()
            .map(|p| {
                let (x, y) = self.xy(p);
                format!("{:.2},{:.2}", MARGIN + x * SIZE, MARGIN + (1.0 - y) * SIZE)
            })
            .collect();
        let total = SIZE + 2.0 * MARGIN;
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{t}\" height=\"{t}\">\n",
                "<text x=\"{m}\" y=\"20\" font-size=\"14\">{title}</text>\n",
                "<rect x=\"{m}\" y=\"{m}\" width=\"{s}\" height=\"{s}\" fill=\"none\" stroke=\"black\"/>\n",
                "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{pts}\"/>\n",
                "<text x=\"{m}\" y=\"{xb}\" font-size=\"12\">{xl}</text>\n",
                "<text x=\"4\" y=\"{m}\" font-size=\"12\">{yl}</text>\n",
                "</svg>\n"
            ),
            t = total,
            m = MARGIN,
            s = SIZE,
            title = escape_xml(title),
            pts = pts.join(" "),
            xb = total - 10.0,
            xl = xl,
            yl = yl,
        )
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_threshold(t: f64) -> String {
    if t.is_infinite() {
        "inf".into()
    } else {
        format!("{t:.6}")
    }
}

pub fn event_bbox(e: &EventRecord) -> BBox {
    BBox {
        t_start: e.begin.epoch_secs(),
        t_end: e.end.epoch_secs(),
        f_lo: e.f_lo,
        f_hi: e.f_hi,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthMatch {
    /// Per event: overlaps some truth box on its channel with IoU ≥ the cut.
    pub event_hits: Vec<bool>,
    /// Per truth event: overlapped by at least one detection.
    pub truth_hits: Vec<bool>,
}

impl TruthMatch {
    pub fn recovered(&self) -> usize {
        self.truth_hits.iter().filter(|&&h| h).count()
    }

    pub fn false_positives(&self) -> usize {
        self.event_hits.iter().filter(|&&h| !h).count()
    }
}

/// Labels detections against ground truth by time–frequency IoU on the same
/// channel.
pub fn match_truth(events: &[EventRecord], truth: &[EventRecord], min_iou: f64) -> TruthMatch {
    let mut truth_hits = vec![false; truth.len()];
    let event_hits = events
        .iter()
        .map(|e| {
            let b = event_bbox(e);
            let mut hit = false;
            for (j, t) in truth.iter().enumerate() {
                if t.channel_id == e.channel_id && b.iou(&event_bbox(t)) >= min_iou {
                    truth_hits[j] = true;
                    hit = true;
                }
            }
            hit
        })
        .collect();
    TruthMatch { event_hits, truth_hits }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DielMatrix {
    /// `counts[day][hour]`.
    pub counts: Vec<[u64; 24]>,
    pub first_day: Option<NaiveDate>,
    pub utc_offset_hours: f64,
}

impl DielMatrix {
    pub fn n_days(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, hour: usize, day: usize) -> u64 {
        self.counts[day][hour]
    }

    /// One row per local hour, one column per local day.
    pub fn to_table(&self, meta: &[String]) -> String {
        let mut s = String::new();
        for m in meta {
            let _ = writeln!(s, "# {m}");
        }
        let _ = writeln!(s, "# utc_offset_hours={}", self.utc_offset_hours);
        s.push_str("hour");
        if let Some(first) = self.first_day {
            for d in 0..self.n_days() {
                let _ = write!(s, "\t{}", first + Duration::days(d as i64));
            }
        }
        s.push('\n');
        for h in 0..24 {
            let _ = write!(s, "{h}");
            for day in &self.counts {
                let _ = write!(s, "\t{}", day[h]);
            }
            s.push('\n');
        }
        s
    }
}

/// Counts events by local hour and local day of their begin time, using a
/// fixed offset from UTC. Days run from the first to the last event's local
/// day inclusive.
pub fn diel_aggregate(events: &[EventRecord], utc_offset_hours: f64) -> Result<DielMatrix, EvalError> {
    if !(-12.0..=14.0).contains(&utc_offset_hours) {
        return Err(EvalError::InvalidArgument(format!(
            "UTC offset {utc_offset_hours} h outside [-12, 14]"
        )));
    }
    let offset_ms = (utc_offset_hours * 3_600_000.0).round() as i64;
    let local: Vec<_> = events
        .iter()
        .map(|e| e.begin.add_millis(offset_ms).to_datetime().naive_utc())
        .collect();
    let Some(first) = local.iter().map(|t| t.date()).min() else {
        return Ok(DielMatrix {
            counts: Vec::new(),
            first_day: None,
            utc_offset_hours,
        });
    };
    let last = local.iter().map(|t| t.date()).max().expect("non-empty");
    let mut counts = vec![[0u64; 24]; (last - first).num_days() as usize + 1];
    for t in &local {
        counts[(t.date() - first).num_days() as usize][t.hour() as usize] += 1;
    }
    Ok(DielMatrix {
        counts,
        first_day: Some(first),
        utc_offset_hours,
    })
}
