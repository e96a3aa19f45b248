//! Dataset-level pose metrics: per-class median and mean geodesic error and
//! Acc@Y, averaged over classes without weighting.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{FisherParams, MatrixFisher, Mode};
use crate::rotation::{geodesic_distance, RotationMatrix};

/// Thresholds used when none are given: π/6, π/12, π/24.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [PI / 6.0, PI / 12.0, PI / 24.0];

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Rotation(RotationMatrix),
    Params(FisherParams),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionJson {
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    r: Option<[f64; 9]>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    f: Option<[f64; 9]>,
}

impl Serialize for Prediction {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let j = match self {
            Prediction::Rotation(r) => PredictionJson { r: Some(r.to_row_major()), f: None },
            Prediction::Params(f) => PredictionJson { r: None, f: Some(f.to_row_major()) },
        };
        j.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = PredictionJson::deserialize(de)?;
        match (j.r, j.f) {
            (Some(r), None) => RotationMatrix::from_row_major(&r).map(Prediction::Rotation).map_err(D::Error::custom),
            (None, Some(f)) => FisherParams::from_row_major(&f).map(Prediction::Params).map_err(D::Error::custom),
            _ => Err(D::Error::custom("prediction needs exactly one of \"R\" or \"F\"")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionFlag {
    Truncated,
    Difficult,
    Occluded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub class: String,
    #[serde(rename = "R_gt")]
    pub ground_truth: RotationMatrix,
    #[serde(rename = "pred")]
    pub prediction: Prediction,
    #[serde(default)]
    pub flags: Vec<ExclusionFlag>,
}

impl PredictionRecord {
    pub fn is_excluded(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Geodesic error of the predicted mode, in degrees.
    pub fn error_deg(&self) -> f64 {
        geodesic_distance(&self.ground_truth, &mode_of_prediction(self).rotation).to_degrees().clamp(0.0, 180.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub records: Vec<PredictionRecord>,
}

impl EvalSet {
    pub fn new(records: Vec<PredictionRecord>) -> Self {
        EvalSet { records }
    }

    /// One JSON record per non-blank line.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line)
                .map_err(|e| Error::validation(format!("prediction line {}: {e}", k + 1)))?;
            records.push(rec);
        }
        Ok(EvalSet { records })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Class labels in sorted order, including classes whose records are all excluded.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.records.iter().map(|r| r.class.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Errors in degrees of the kept records of one class.
    pub fn class_errors(&self, class: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.class == class && !r.is_excluded()).map(PredictionRecord::error_deg).collect()
    }
}

/// The rotation scored for a record: the prediction itself, or the mode of
/// the predicted distribution.
pub fn mode_of_prediction(p: &PredictionRecord) -> Mode {
    match &p.prediction {
        Prediction::Rotation(r) => Mode { rotation: *r, degenerate: false },
        Prediction::Params(f) => MatrixFisher::new(*f).mode(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    /// Records kept after exclusions.
    pub count: usize,
    pub excluded: usize,
    /// Predictions whose mode was not unique.
    pub degenerate: usize,
    pub median_deg: Option<f64>,
    pub mean_deg: Option<f64>,
    /// Acc@Y in the order of the requested thresholds.
    pub acc: Vec<f64>,
    /// Set when no records are left to score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallSummary {
    pub classes: usize,
    pub median_deg: Option<f64>,
    pub mean_deg: Option<f64>,
    pub acc: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub thresholds_deg: Vec<f64>,
    pub classes: Vec<ClassSummary>,
    pub overall: OverallSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalSummary {
    pub fn class(&self, name: &str) -> Option<&ClassSummary> {
        self.classes.iter().find(|c| c.class == name)
    }
}

/// Lower-middle order statistic.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Fraction of errors strictly below `threshold_deg`.
pub fn accuracy(errors_deg: &[f64], threshold_deg: f64) -> f64 {
    errors_deg.iter().filter(|&&e| e < threshold_deg).count() as f64 / errors_deg.len() as f64
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if let Some(t) = thresholds.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::validation(format!("threshold {t} is not a nonnegative angle")));
    }
    Ok(())
}

/// Scores a set. Thresholds are in radians.
pub fn evaluate(set: &EvalSet, thresholds: &[f64]) -> Result<EvalSummary> {
    if set.records.is_empty() {
        return Err(Error::validation("evaluation set is empty"));
    }
    validate_thresholds(thresholds)?;
    let thresholds_deg: Vec<f64> = thresholds.iter().map(|t| t.to_degrees()).collect();

    let mut by_class: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in &set.records {
        by_class.entry(r.class.as_str()).or_default().push(r);
    }

    let mut classes = Vec::new();
    let mut warnings = Vec::new();
    for (name, recs) in by_class {
        let kept: Vec<_> = recs.iter().filter(|r| !r.is_excluded()).collect();
        let modes: Vec<_> = kept.iter().map(|r| (mode_of_prediction(r), r)).collect();
        let errors: Vec<f64> = modes
            .iter()
            .map(|(m, r)| geodesic_distance(&r.ground_truth, &m.rotation).to_degrees().clamp(0.0, 180.0))
            .collect();
        let error = errors.is_empty().then(|| {
            warnings.push(format!("class {name:?} has no records after exclusions and is left out of the overall scores"));
            "no records after exclusions".to_string()
        });
        classes.push(ClassSummary {
            class: name.to_string(),
            count: kept.len(),
            excluded: recs.len() - kept.len(),
            degenerate: modes.iter().filter(|(m, _)| m.degenerate).count(),
            median_deg: median(&errors),
            mean_deg: mean(&errors),
            acc: if errors.is_empty() { Vec::new() } else { thresholds_deg.iter().map(|&t| accuracy(&errors, t)).collect() },
            error,
        });
    }

    let scored: Vec<&ClassSummary> = classes.iter().filter(|c| c.error.is_none()).collect();
    let avg = |pick: &dyn Fn(&ClassSummary) -> f64| mean(&scored.iter().map(|c| pick(c)).collect::<Vec<_>>());
    let overall = OverallSummary {
        classes: scored.len(),
        median_deg: avg(&|c| c.median_deg.unwrap_or(f64::NAN)),
        mean_deg: avg(&|c| c.mean_deg.unwrap_or(f64::NAN)),
        acc: if scored.is_empty() {
            Vec::new()
        } else {
            (0..thresholds.len()).map(|k| avg(&|c| c.acc[k]).unwrap_or(f64::NAN)).collect()
        },
    };
    Ok(EvalSummary { thresholds_deg, classes, overall, warnings })
}

/// Counts per uniform bin over `[0°, 180°]`; 180° falls in the last bin.
pub fn histogram_deg(errors_deg: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    if bins == 0 {
        return h;
    }
    for &e in errors_deg {
        let k = ((e.clamp(0.0, 180.0) / 180.0 * bins as f64) as usize).min(bins - 1);
        h[k] += 1;
    }
    h
}

/// Histogram of the kept records of one class.
pub fn error_histogram(set: &EvalSet, class: &str, bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::validation("histogram needs at least one bin"));
    }
    if !set.records.iter().any(|r| r.class == class) {
        return Err(Error::validation(format!("unknown class {class:?}")));
    }
    Ok(histogram_deg(&set.class_errors(class), bins))
}

/// Both end bins hold more than every middle bin.
pub fn is_u_shaped(hist: &[usize]) -> bool {
    if hist.len() < 3 {
        return false;
    }
    let (first, last) = (hist[0], hist[hist.len() - 1]);
    let middle = hist[1..hist.len() - 1].iter().copied().max().unwrap_or(0);
    first > middle && last > middle
}
