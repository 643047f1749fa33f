//! Correlation figures of merit and dataset scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioExcerpt, RatedPair};
use crate::conditioning::{load_pair, TensorBuilder};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::model::{ModelCheckpoint, QualityNet};
use crate::scalar::Scalar;
use crate::training::csv_error;

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DegenerateInput(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(format!("{} points, need at least 2", x.len())));
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    pearson(&ranks(x), &ranks(y))
}

/// A predicted score for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// MUSHRA scale, clamped to `[0, 100]`.
    pub score: f64,
    /// Unclamped network output times the target scale.
    pub raw_score: f64,
    pub frames: usize,
}

/// Scores one pair with variable-length input.
pub fn score_pair<T: Scalar>(
    model: &QualityNet<T>,
    builder: &TensorBuilder<T>,
    reference: &AudioExcerpt<T>,
    coded: &AudioExcerpt<T>,
    target_scale: f64,
) -> Result<Score> {
    let input = builder.build(reference, coded, None)?;
    let raw = model.forward(&input)?.as_f64() * target_scale;
    Ok(Score {
        score: raw.clamp(0.0, 100.0),
        raw_score: raw,
        frames: input.frames,
    })
}

/// Tensor builder matching a model's layout and minimum input length.
pub fn builder_for<T: Scalar>(model: &QualityNet<T>, frontend: FrontendConfig) -> Result<TensorBuilder<T>> {
    Ok(TensorBuilder::new(frontend, model.config().layout)?.with_min_frames(model.min_frames()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score mono rows as `L = R` stereo.
    pub dual_mono: bool,
    pub target_scale: f64,
    /// Shorter inputs are centre-padded to this many frames (at least the model minimum).
    pub min_frames: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            dual_mono: false,
            target_scale: 100.0,
            min_frames: 0,
        }
    }
}

impl EvalOptions {
    /// Scale and padding as recorded at training time.
    pub fn for_checkpoint<T: Scalar>(checkpoint: &ModelCheckpoint<T>, dual_mono: bool) -> Self {
        Self {
            dual_mono,
            target_scale: checkpoint.metadata.target_scale,
            min_frames: checkpoint.inference_frames(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub ref_path: PathBuf,
    pub cod_path: PathBuf,
    pub codec: String,
    pub mos: f64,
    pub predicted: f64,
}

/// Figures of merit over a set of rows; correlations are absent when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub rp: Option<f64>,
    pub rs: Option<f64>,
    /// MUSHRA units².
    pub mse: f64,
}

impl GroupStats {
    pub fn compute(mos: &[f64], predicted: &[f64]) -> Self {
        let n = mos.len();
        let mse = if n == 0 {
            0.0
        } else {
            mos.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64
        };
        Self {
            n,
            rp: pearson(predicted, mos).ok(),
            rs: spearman(predicted, mos).ok(),
            mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub rp: Option<f64>,
    pub rs: Option<f64>,
    pub mse: f64,
    pub per_group: BTreeMap<String, GroupStats>,
    pub rows: Vec<RowResult>,
}

impl EvalReport {
    /// Aggregates overall and per-codec statistics. Statistics are computed
    /// over a canonically sorted copy, so they do not depend on row order.
    pub fn from_rows(rows: Vec<RowResult>) -> Self {
        let mut sorted: Vec<&RowResult> = rows.iter().collect();
        sorted.sort_by(|a, b| {
            (&a.codec, &a.ref_path, &a.cod_path)
                .cmp(&(&b.codec, &b.ref_path, &b.cod_path))
                .then(a.mos.total_cmp(&b.mos))
                .then(a.predicted.total_cmp(&b.predicted))
        });
        let stats = |subset: &[&RowResult]| {
            let mos: Vec<f64> = subset.iter().map(|r| r.mos).collect();
            let pred: Vec<f64> = subset.iter().map(|r| r.predicted).collect();
            GroupStats::compute(&mos, &pred)
        };
        let overall = stats(&sorted);
        let mut per_group = BTreeMap::new();
        for chunk in sorted.chunk_by(|a, b| a.codec == b.codec) {
            per_group.insert(chunk[0].codec.clone(), stats(chunk));
        }
        Self {
            n: overall.n,
            rp: overall.rp,
            rs: overall.rs,
            mse: overall.mse,
            per_group,
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Aligned plain-text table: overall line, then one line per codec group.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let width = self.per_group.keys().map(String::len).max().unwrap_or(0).max(7);
        let line = |out: &mut String, name: &str, s: &GroupStats| {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>5}  {:>6}  {:>6}  {:>9.2}",
                s.n,
                fmt(s.rp),
                fmt(s.rs),
                s.mse
            );
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>5}  {:>6}  {:>6}  {:>9}", "group", "n", "Rp", "Rs", "MSE");
        let overall = GroupStats {
            n: self.n,
            rp: self.rp,
            rs: self.rs,
            mse: self.mse,
        };
        line(&mut out, "overall", &overall);
        for (name, s) in &self.per_group {
            line(&mut out, name, s);
        }
        out
    }

    pub fn write_rows_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Scores every manifest row (in parallel) and aggregates the results.
pub fn evaluate<T: Scalar>(
    model: &QualityNet<T>,
    frontend: FrontendConfig,
    manifest: &[RatedPair],
    base: &Path,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::DegenerateInput("empty manifest".into()));
    }
    let builder = builder_for(model, frontend)?.with_min_frames(model.min_frames().max(options.min_frames));
    let rows = manifest
        .par_iter()
        .map(|row| {
            let pair = load_pair::<T>(row, base, options.dual_mono)?;
            let s = score_pair(model, &builder, &pair.reference, &pair.coded, options.target_scale)?;
            Ok(RowResult {
                ref_path: row.ref_path.clone(),
                cod_path: row.cod_path.clone(),
                codec: row.codec_tag().to_string(),
                mos: row.mos,
                predicted: s.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}
