//! Small logistic multilayer perceptrons and the human-knowledge feature
//! augmentation used by the post-classifier.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eventstore::EventRecord;

pub const MODEL_HEADER: &str = "#adamine-mlp v1";
pub const SCORE_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Names of the columns produced by [`machine_features`].
pub const MACHINE_FEATURES: [&str; 6] = ["duration_s", "bandwidth_hz", "f_lo_hz", "f_hi_hz", "score", "log_duration"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClassifyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("scores reference unknown event ids: {}", .0.join(", "))]
    UnknownEvents(Vec<String>),
    #[error("score file line {line}: {reason}")]
    ScoreFormat { line: usize, reason: String },
    #[error("model file: {0}")]
    ModelFormat(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    /// One `out × in` matrix per layer.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub seed: u64,
    pub feature_names: Vec<String>,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Cross-entropy of a logistic output written in terms of its logit.
fn logit_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

impl MlpModel {
    /// Xavier-uniform weights from a ChaCha8 stream, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self, ClassifyError> {
        Self::init_with(layer_sizes, &mut ChaCha8Rng::seed_from_u64(seed), seed)
    }

    fn init_with(layer_sizes: &[usize], rng: &mut ChaCha8Rng, seed: u64) -> Result<Self, ClassifyError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) || layer_sizes[layer_sizes.len() - 1] != 1 {
            return Err(ClassifyError::InvalidArgument(format!(
                "layer sizes {layer_sizes:?} must be positive and end in a single output"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[1], w[0]), |_| rng.gen_range(-a..a)));
            biases.push(Array1::zeros(w[1]));
        }
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            seed,
            feature_names: (0..layer_sizes[0]).map(|i| format!("x{i}")).collect(),
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Output logits for a batch (`n × d`).
    fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(logistic);
            }
            a = z;
        }
        a.column(0).to_owned()
    }

    /// Scores for every row, clamped into the open interval (0, 1).
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>, ClassifyError> {
        if x.ncols() != self.n_inputs() {
            return Err(ClassifyError::InvalidArgument(format!(
                "model expects {} features, got {}",
                self.n_inputs(),
                x.ncols()
            )));
        }
        Ok(self.logits(x).mapv(|z| logistic(z).clamp(1e-15, 1.0 - 1e-15)))
    }

    /// All weights then biases, layer by layer, row-major.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend(w.iter());
            p.extend(b.iter());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().expect("parameter vector too short"));
            b.iter_mut().for_each(|v| *v = it.next().expect("parameter vector too short"));
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    /// Writes the versioned text form; values carry 17 significant digits
    /// so a reload is exact.
    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let mut s = format!(
            "{MODEL_HEADER}\nlayers\t{}\nseed\t{}\nfeatures\t{}\n",
            sizes.join("\t"),
            self.seed,
            self.feature_names.join("\t")
        );
        let num = |v: &f64| format!("{v:.16e}");
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            s.push_str(&format!("layer\t{l}\n"));
            for row in w.rows() {
                s.push_str(&row.iter().map(num).collect::<Vec<_>>().join("\t"));
                s.push('\n');
            }
            s.push_str("bias\t");
            s.push_str(&b.iter().map(num).collect::<Vec<_>>().join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ClassifyError> {
        let err = |m: String| ClassifyError::ModelFormat(m);
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_HEADER) {
            return Err(err(format!("missing {MODEL_HEADER:?} header")));
        }
        let mut field = |key: &str| -> Result<Vec<String>, ClassifyError> {
            let line = lines.next().ok_or_else(|| err(format!("missing {key} line")))?;
            let mut parts = line.split('\t');
            if parts.next() != Some(key) {
                return Err(err(format!("expected {key} line, got {line:?}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let layer_sizes = field("layers")?
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| err(format!("bad layer size {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let seed_field = field("seed")?;
        let seed = seed_field
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("bad seed".into()))?;
        let feature_names = field("features")?;
        let mut model = MlpModel::init(&layer_sizes, seed).map_err(|e| err(e.to_string()))?;
        if feature_names.len() != model.n_inputs() {
            return Err(err(format!("{} feature names for {} inputs", feature_names.len(), model.n_inputs())));
        }
        model.feature_names = feature_names;
        let nums = |line: &str| -> Result<Vec<f64>, ClassifyError> {
            line.split('\t')
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(format!("bad value {v:?}")))
                })
                .collect()
        };
        for l in 0..model.weights.len() {
            if lines.next() != Some(format!("layer\t{l}").as_str()) {
                return Err(err(format!("expected layer {l} marker")));
            }
            let (rows, cols) = model.weights[l].dim();
            for r in 0..rows {
                let row = nums(lines.next().ok_or_else(|| err(format!("layer {l} truncated")))?)?;
                if row.len() != cols {
                    return Err(err(format!("layer {l} row {r} has {} values, expected {cols}", row.len())));
                }
                model.weights[l].row_mut(r).assign(&Array1::from(row));
            }
            let line = lines.next().ok_or_else(|| err(format!("layer {l} bias missing")))?;
            let b = line
                .strip_prefix("bias\t")
                .ok_or_else(|| err(format!("expected bias line for layer {l}")))?;
            let b = nums(b)?;
            if b.len() != rows {
                return Err(err(format!("layer {l} bias has {} values, expected {rows}", b.len())));
            }
            model.biases[l] = Array1::from(b);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(err("trailing content".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifyError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClassifyError::ModelFormat(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn mlp_predict(model: &MlpModel, x: ArrayView1<f64>) -> Result<f64, ClassifyError> {
    let row = x.insert_axis(Axis(0));
    Ok(model.predict_batch(row)?[0])
}

/// Mean cross-entropy over the rows and its gradient, laid out like
/// [`MlpModel::params`].
pub fn loss_and_gradient(model: &MlpModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> (f64, Vec<f64>) {
    let n = x.nrows() as f64;
    let last = model.weights.len() - 1;
    let mut acts = vec![x.to_owned()];
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut z = acts[l].dot(&w.t());
        z += b;
        if l < last {
            z.mapv_inplace(logistic);
        }
        acts.push(z);
    }
    let logits = acts[last + 1].column(0).to_owned();
    let loss = logits.iter().zip(y).map(|(&z, &t)| logit_loss(z, t)).sum::<f64>() / n;
    // delta at the output logit is sigma(z) - y
    let mut delta: Array2<f64> = (logits.mapv(logistic) - y).insert_axis(Axis(1)) / n;
    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.weights.len());
    for l in (0..=last).rev() {
        let gw = delta.t().dot(&acts[l]);
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            let back = delta.dot(&model.weights[l]);
            delta = back * acts[l].mapv(|a| a * (1.0 - a));
        }
        grads.push((gw, gb));
    }
    grads.reverse();
    let mut flat = Vec::new();
    for (gw, gb) in grads {
        flat.extend(gw.iter());
        flat.extend(gb.iter());
    }
    (loss, flat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Standardize columns before training and fold the transform into the
    /// first layer, so the returned model takes raw features.
    pub standardize: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Full-data loss after each epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

fn column_stats(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("at least one row");
    let std = x.var_axis(Axis(0), 0.0).mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    (mean, std)
}

/// Mini-batch gradient descent on cross-entropy. The same seed draws the
/// initial weights and the per-epoch shuffles, so a rerun is bit-identical.
pub fn mlp_train(x: ArrayView2<f64>, y: ArrayView1<f64>, params: &TrainParams) -> Result<TrainOutcome, ClassifyError> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(ClassifyError::InvalidArgument(format!("{n} feature rows vs {} labels", y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifyError::InvalidArgument("features contain NaN or infinity".into()));
    }
    if y.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(ClassifyError::InvalidArgument("labels must be 0 or 1".into()));
    }
    if params.layer_sizes.first() != Some(&x.ncols()) {
        return Err(ClassifyError::InvalidArgument(format!(
            "input layer {:?} does not match {} feature columns",
            params.layer_sizes.first(),
            x.ncols()
        )));
    }
    if params.batch == 0 || !(params.learning_rate > 0.0) {
        return Err(ClassifyError::InvalidArgument("batch and learning_rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = MlpModel::init_with(&params.layer_sizes, &mut rng, params.seed)?;
    let (mean, std) = column_stats(x);
    let xs = if params.standardize {
        (&x - &mean) / &std
    } else {
        x.to_owned()
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(params.epochs);
    let mut p = model.params();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch) {
            let xb = xs.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let (_, g) = loss_and_gradient(&model, xb.view(), yb.view());
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi -= params.learning_rate * gi;
            }
            model.set_params(&p);
        }
        let (loss, _) = loss_and_gradient(&model, xs.view(), y);
        if !loss.is_finite() {
            return Err(ClassifyError::Diverged { epoch, loss });
        }
        loss_history.push(loss);
    }
    if params.standardize {
        let w0 = &model.weights[0];
        let scaled = w0 / &std.view().insert_axis(Axis(0));
        model.biases[0] = &model.biases[0] - &scaled.dot(&mean);
        model.weights[0] = scaled;
    }
    let final_loss = match loss_history.last() {
        Some(&l) => l,
        None => loss_and_gradient(&model, x, y).0,
    };
    Ok(TrainOutcome {
        model,
        loss_history,
        final_loss,
    })
}

/// Per-event features for the post-classifier; column names in
/// [`MACHINE_FEATURES`].
pub fn machine_features(events: &[EventRecord]) -> Array2<f64> {
    let mut x = Array2::zeros((events.len(), MACHINE_FEATURES.len()));
    for (mut row, e) in x.rows_mut().into_iter().zip(events) {
        let d = e.duration_secs();
        row.assign(&Array1::from(vec![d, e.f_hi - e.f_lo, e.f_lo, e.f_hi, e.score, d.max(1e-3).ln()]));
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanScore {
    pub event_id: String,
    pub analyst_id: String,
    pub score: f64,
}

pub const SCORE_HEADER: &str = "event_id\tanalyst_id\tscore";

/// Parses a tab-separated score file with header
/// `event_id  analyst_id  score`. Scores must be one of the five levels and
/// each (event, analyst) pair may appear once.
pub fn parse_scores(text: &str) -> Result<Vec<HumanScore>, ClassifyError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SCORE_HEADER => {}
        _ => {
            return Err(ClassifyError::ScoreFormat {
                line: 1,
                reason: format!("expected header {SCORE_HEADER:?}"),
            })
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| ClassifyError::ScoreFormat { line: i + 1, reason };
        let f: Vec<&str> = line.split('\t').collect();
        let [event_id, analyst_id, score] = f[..] else {
            return Err(bad(format!("expected 3 fields, got {}", f.len())));
        };
        let score: f64 = score.parse().map_err(|_| bad(format!("bad score {score:?}")))?;
        if !SCORE_LEVELS.contains(&score) {
            return Err(bad(format!("score {score} is not one of {SCORE_LEVELS:?}")));
        }
        if event_id.is_empty() || analyst_id.is_empty() {
            return Err(bad("empty event or analyst id".into()));
        }
        if !seen.insert((event_id.to_string(), analyst_id.to_string())) {
            return Err(bad(format!("duplicate score for {event_id} by {analyst_id}")));
        }
        out.push(HumanScore {
            event_id: event_id.into(),
            analyst_id: analyst_id.into(),
            score,
        });
    }
    Ok(out)
}

pub fn format_scores(scores: &[HumanScore]) -> String {
    let mut s = format!("{SCORE_HEADER}\n");
    for h in scores {
        s.push_str(&format!("{}\t{}\t{}\n", h.event_id, h.analyst_id, h.score));
    }
    s
}

/// Score ids that match no event, sorted and deduplicated.
pub fn unknown_score_ids(event_ids: &[String], scores: &[HumanScore]) -> Vec<String> {
    let known: HashSet<&str> = event_ids.iter().map(String::as_str).collect();
    let mut bad: Vec<String> = scores
        .iter()
        .filter(|s| !known.contains(s.event_id.as_str()))
        .map(|s| s.event_id.clone())
        .collect();
    bad.sort();
    bad.dedup();
    bad
}

/// Appends a human-score column and a missing-score indicator.
///
/// Events without a score get `(0.5, 1)`. When several analysts scored the
/// same event, the analyst id that sorts first is used.
pub fn hk_augment(x: ArrayView2<f64>, event_ids: &[String], scores: &[HumanScore]) -> Result<Array2<f64>, ClassifyError> {
    if event_ids.len() != x.nrows() {
        return Err(ClassifyError::InvalidArgument(format!(
            "{} event ids for {} feature rows",
            event_ids.len(),
            x.nrows()
        )));
    }
    let unknown = unknown_score_ids(event_ids, scores);
    if !unknown.is_empty() {
        return Err(ClassifyError::UnknownEvents(unknown));
    }
    let mut chosen: BTreeMap<&str, (&str, f64)> = BTreeMap::new();
    for s in scores {
        let e = chosen.entry(&s.event_id).or_insert((&s.analyst_id, s.score));
        if s.analyst_id.as_str() < e.0 {
            *e = (&s.analyst_id, s.score);
        }
    }
    let d = x.ncols();
    let mut out = Array2::zeros((x.nrows(), d + 2));
    out.slice_mut(ndarray::s![.., ..d]).assign(&x);
    for (i, id) in event_ids.iter().enumerate() {
        let (v, missing) = match chosen.get(id.as_str()) {
            Some(&(_, s)) => (s, 0.0),
            None => (0.5, 1.0),
        };
        out[[i, d]] = v;
        out[[i, d + 1]] = missing;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn xor() -> (Array2<f64>, Array1<f64>) {
        (array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], array![0.0, 1.0, 1.0, 0.0])
    }

    fn hyper(layers: &[usize], lr: f64, epochs: usize, batch: usize) -> TrainParams {
        TrainParams {
            layer_sizes: layers.to_vec(),
            learning_rate: lr,
            epochs,
            batch,
            seed: 7,
            standardize: false,
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let mut m = MlpModel::init(&[3, 4, 1], 1).unwrap();
        let zeros = vec![0.0; m.params().len()];
        m.set_params(&zeros);
        assert_eq!(mlp_predict(&m, array![1.0, -2.0, 3.0].view()).unwrap(), 0.5);
    }

    #[test]
    fn hand_computed_forward_pass() {
        let mut m = MlpModel::init(&[2, 2, 1], 0).unwrap();
        m.set_params(&[1.0; 9]);
        // hidden: s(1 + 1 + 1) twice; output: s(2 s(3) + 1)
        let h = 1.0 / (1.0 + (-3.0f64).exp());
        let want = 1.0 / (1.0 + (-(2.0 * h + 1.0)).exp());
        let got = mlp_predict(&m, array![1.0, 1.0].view()).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!(mlp_predict(&m, array![1.0].view()).is_err());
    }

    #[test]
    fn batch_and_single_predictions_agree() {
        let m = MlpModel::init(&[3, 5, 2, 1], 4).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5], [3.0, 0.0, -2.0]];
        let batch = m.predict_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_eq!(mlp_predict(&m, row).unwrap(), batch[i]);
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (x, y) = xor();
        let out = mlp_train(x.view(), y.view(), &hyper(&[2, 4, 1], 0.5, 0, 4)).unwrap();
        assert_eq!(out.model, MlpModel::init(&[2, 4, 1], 7).unwrap());
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn xor_is_learned() {
        let (x, y) = xor();
        let out = mlp_train(x.view(), y.view(), &hyper(&[2, 4, 1], 2.0, 5000, 4)).unwrap();
        let p = out.model.predict_batch(x.view()).unwrap();
        let correct = p.iter().zip(&y).filter(|(p, y)| (**p > 0.5) == (**y == 1.0)).count();
        assert_eq!(correct, 4, "{p:?}");
    }

    #[test]
    fn retraining_is_bit_identical() {
        let (x, y) = xor();
        let h = hyper(&[2, 3, 1], 0.5, 50, 2);
        let a = mlp_train(x.view(), y.view(), &h).unwrap();
        let b = mlp_train(x.view(), y.view(), &h).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn separable_blobs_loss_settles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let mut x = Array2::zeros((n, 2));
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let c = (i % 2) as f64;
            y[i] = c;
            x[[i, 0]] = 3.0 * c + rng.gen_range(-0.5..0.5);
            x[[i, 1]] = -3.0 * c + rng.gen_range(-0.5..0.5);
        }
        let out = mlp_train(x.view(), y.view(), &hyper(&[2, 3, 1], 0.1, 100, n)).unwrap();
        let tail = &out.loss_history[20..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn bad_inputs_rejected() {
        let (mut x, y) = xor();
        x[[0, 0]] = f64::NAN;
        assert!(matches!(
            mlp_train(x.view(), y.view(), &hyper(&[2, 2, 1], 0.1, 1, 1)),
            Err(ClassifyError::InvalidArgument(_))
        ));
        let (x, _) = xor();
        let y = array![0.0, 2.0, 1.0, 0.0];
        assert!(mlp_train(x.view(), y.view(), &hyper(&[2, 2, 1], 0.1, 1, 1)).is_err());
    }

    #[test]
    fn divergence_names_epoch() {
        let x = array![[1e300, -1e300], [-1e300, 1e300]];
        let y = array![1.0, 0.0];
        match mlp_train(x.view(), y.view(), &hyper(&[2, 1], 1e300, 3, 2)) {
            Err(ClassifyError::Diverged { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("{other:?}"),
        }
    }

    fn numeric_gradient(model: &MlpModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Vec<f64> {
        let h = 1e-5;
        let p = model.params();
        let mut m = model.clone();
        (0..p.len())
            .map(|i| {
                let mut q = p.clone();
                q[i] = p[i] + h;
                m.set_params(&q);
                let up = loss_and_gradient(&m, x, y).0;
                q[i] = p[i] - h;
                m.set_params(&q);
                let down = loss_and_gradient(&m, x, y).0;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let d = rng.gen_range(1..5);
            let hidden = rng.gen_range(1..5);
            let layers = if trial % 2 == 0 { vec![d, hidden, 1] } else { vec![d, hidden, 2, 1] };
            let model = MlpModel::init(&layers, trial).unwrap();
            let n = rng.gen_range(1..8);
            let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
            let y = Array1::from_shape_fn(n, |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            let (_, g) = loss_and_gradient(&model, x.view(), y.view());
            let num = numeric_gradient(&model, x.view(), y.view());
            for (a, b) in g.iter().zip(&num) {
                let rel = (a - b).abs() / (a.abs() + b.abs()).max(1e-8);
                assert!(rel <= 1e-4, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn standardized_training_takes_raw_features() {
        let x = array![[100.0, 0.001], [200.0, 0.002], [300.0, 0.001], [400.0, 0.002]];
        let y = array![0.0, 0.0, 1.0, 1.0];
        let mut h = hyper(&[2, 3, 1], 1.0, 500, 4);
        h.standardize = true;
        let out = mlp_train(x.view(), y.view(), &h).unwrap();
        let p = out.model.predict_batch(x.view()).unwrap();
        assert!(p[0] < 0.5 && p[1] < 0.5 && p[2] > 0.5 && p[3] > 0.5, "{p:?}");
        assert!((loss_and_gradient(&out.model, x.view(), y.view()).0 - out.final_loss).abs() < 1e-9);
    }

    #[test]
    fn model_text_round_trip() {
        let mut m = MlpModel::init(&[3, 4, 1], 99).unwrap();
        m.feature_names = vec!["a".into(), "b".into(), "c".into()];
        let text = m.to_text();
        assert!(text.starts_with("#adamine-mlp v1\nlayers\t3\t4\t1\n"));
        assert_eq!(MlpModel::parse(&text).unwrap(), m);
        assert!(MlpModel::parse(&text.replace("layers\t3", "layers\t2")).is_err());
        assert!(MlpModel::parse("junk").is_err());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r:{i}")).collect()
    }

    fn hs(e: &str, a: &str, s: f64) -> HumanScore {
        HumanScore {
            event_id: e.into(),
            analyst_id: a.into(),
            score: s,
        }
    }

    #[test]
    fn augment_full_and_missing() {
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i * 6 + j) as f64);
        let scores = vec![hs("r:0", "ann", 1.0), hs("r:1", "bob", 0.25), hs("r:1", "amy", 0.75)];
        let a = hk_augment(x.view(), &ids(3), &scores).unwrap();
        assert_eq!(a.ncols(), 8);
        assert_eq!(a.row(0).to_vec()[6..], [1.0, 0.0]);
        assert_eq!(a.row(1).to_vec()[6..], [0.75, 0.0]);
        assert_eq!(a.row(2).to_vec()[6..], [0.5, 1.0]);
        assert_eq!(a.slice(ndarray::s![.., ..6]), x);
    }

    #[test]
    fn augment_rejects_unknown_ids() {
        let x = Array2::zeros((2, 6));
        let scores = vec![hs("r:9", "a", 1.0), hs("zz", "a", 0.0), hs("r:9", "b", 0.0)];
        assert_eq!(
            hk_augment(x.view(), &ids(2), &scores),
            Err(ClassifyError::UnknownEvents(vec!["r:9".into(), "zz".into()]))
        );
    }

    #[test]
    fn score_file_parsing() {
        let text = "event_id\tanalyst_id\tscore\nr:0\tA\t0.75\nr:1\tA\t1\n";
        let s = parse_scores(text).unwrap();
        assert_eq!(s, vec![hs("r:0", "A", 0.75), hs("r:1", "A", 1.0)]);
        assert_eq!(parse_scores(&format_scores(&s)).unwrap(), s);
        assert!(parse_scores("event_id\tanalyst_id\tscore\nr:0\tA\t0.6\n").is_err());
        assert!(parse_scores("event_id\tanalyst_id\tscore\nr:0\tA\t1\nr:0\tA\t0\n").is_err());
        assert!(parse_scores("id\tscore\n").is_err());
    }

    proptest! {
        #[test]
        fn predictions_strictly_inside_unit_interval(
            seed in 0u64..1000,
            x in proptest::collection::vec(-1e3f64..1e3, 4),
            scale in 0.0f64..50.0,
        ) {
            let mut m = MlpModel::init(&[4, 3, 1], seed).unwrap();
            let p: Vec<f64> = m.params().iter().map(|v| v * scale).collect();
            m.set_params(&p);
            let out = mlp_predict(&m, Array1::from(x).view()).unwrap();
            prop_assert!(out > 0.0 && out < 1.0);
        }

        #[test]
        fn augment_then_drop_is_identity(
            rows in 1usize..20,
            vals in proptest::collection::vec(-1e6f64..1e6, 120),
            mask in proptest::collection::vec(0usize..6, 20),
        ) {
            let x = Array2::from_shape_fn((rows, 6), |(i, j)| vals[(i * 6 + j) % vals.len()]);
            let event_ids = ids(rows);
            let scores: Vec<HumanScore> = (0..rows)
                .filter(|&i| mask[i] < 5)
                .map(|i| hs(&event_ids[i], "a", SCORE_LEVELS[mask[i]]))
                .collect();
            let a = hk_augment(x.view(), &event_ids, &scores).unwrap();
            prop_assert_eq!(a.slice(ndarray::s![.., ..6]).to_owned(), x);
        }
    }
}
