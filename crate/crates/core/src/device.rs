//! Regression performance models for the two device tiers.
//!
//! A model predicts the total time of a batch of IO operations as a linear
//! combination of predictor products (main effects and interactions). Two
//! predictor families exist:
//!
//! | index | NVMe                          | HDD                    |
//! |-------|-------------------------------|------------------------|
//! | x1    | client threads                | processes              |
//! | x2    | distinct block addresses      | stripe count (disks)   |
//! | x3    | request size, bytes           | stripes per disk       |
//! | x4    | request count                 | stripe size, bytes     |
//! | x5    | address range in use, bytes   | file size, bytes       |
//!
//! The published coefficient tables for both families ship with the crate
//! ([`load_paper_model`]); [`fit`] estimates new coefficients from training
//! samples.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ols::{self, OlsError};

pub const N_PREDICTORS: usize = 5;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("expected {expected} predictors, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid term `{0}`")]
    BadTerm(String),
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("{coefficients} coefficients for {terms} terms plus intercept")]
    CoefficientCount { coefficients: usize, terms: usize },
    #[error("under-determined fit: {samples} samples for {coefficients} coefficients")]
    Underdetermined { samples: usize, coefficients: usize },
    #[error("rank-deficient design: term `{term}` is collinear with {with:?}")]
    RankDeficient { term: String, with: Vec<String> },
    #[error("training data error at line {line}: {message}")]
    Training { line: u64, message: String },
    #[error("fit failed: {0}")]
    Fit(OlsError),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A product of predictors, e.g. `x1:x3:x4`. Factors keep their written
/// order for display; identity ignores order.
#[derive(Debug, Clone, Eq)]
pub struct Term {
    factors: Vec<usize>,
}

impl Term {
    /// `factors` are 1-based predictor indices.
    pub fn new(factors: &[usize]) -> Result<Self, DeviceError> {
        let term = Term {
            factors: factors.to_vec(),
        };
        let distinct: BTreeSet<_> = factors.iter().collect();
        if factors.is_empty()
            || distinct.len() != factors.len()
            || factors.iter().any(|&f| f == 0 || f > N_PREDICTORS)
        {
            return Err(DeviceError::BadTerm(term.label()));
        }
        Ok(term)
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    fn key(&self) -> Vec<usize> {
        let mut k = self.factors.clone();
        k.sort_unstable();
        k
    }

    pub fn label(&self) -> String {
        self.factors
            .iter()
            .map(|f| format!("x{f}"))
            .collect::<Vec<_>>()
            .join(":")
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.factors.iter().map(|&f| x[f - 1]).product()
    }
}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Term {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let factors = s
            .split(':')
            .map(|f| parse_predictor(f).ok_or_else(|| DeviceError::BadTerm(s.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Term::new(&factors)
    }
}

fn parse_predictor(s: &str) -> Option<usize> {
    let s = s.trim();
    let digits = s.strip_prefix('x').or_else(|| s.strip_prefix('X'))?;
    digits.parse().ok()
}

/// Ordered regression terms. The intercept is implicit and always first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelTermSet {
    terms: Vec<Term>,
}

impl ModelTermSet {
    pub fn new(terms: Vec<Term>) -> Result<Self, DeviceError> {
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(DeviceError::DuplicateTerm(t.label()));
            }
        }
        Ok(ModelTermSet { terms })
    }

    /// Expands a model formula. `a*b*c` contributes every main effect and
    /// interaction of its factors; `a:b` contributes just that interaction.
    /// Groups are joined with `+`. Terms are ordered by degree, then by first
    /// appearance.
    pub fn from_formula(formula: &str) -> Result<Self, DeviceError> {
        let mut terms: Vec<Term> = Vec::new();
        for group in formula.split('+') {
            let group = group.trim();
            if group.is_empty() {
                return Err(DeviceError::BadTerm(formula.to_string()));
            }
            if group.contains('*') {
                let factors = group
                    .split('*')
                    .map(|f| parse_predictor(f).ok_or_else(|| DeviceError::BadTerm(f.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                for subset in ordered_subsets(&factors) {
                    let term = Term::new(&subset)?;
                    if !terms.contains(&term) {
                        terms.push(term);
                    }
                }
            } else {
                let term: Term = group.parse()?;
                if !terms.contains(&term) {
                    terms.push(term);
                }
            }
        }
        // stable: keeps first-appearance order within a degree
        terms.sort_by_key(Term::degree);
        ModelTermSet::new(terms)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Design-matrix row: a leading 1 for the intercept, then each term.
    pub fn design_row(&self, x: &[f64]) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.terms.iter().map(|t| t.eval(x)))
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(Term::label).collect()
    }
}

/// Non-empty subsets in order of size, each size in lexicographic position order.
fn ordered_subsets(factors: &[usize]) -> Vec<Vec<usize>> {
    let n = factors.len();
    let mut out = Vec::new();
    for size in 1..=n {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| factors[i]).collect());
            // advance to the next combination
            let mut i = size;
            while i > 0 && idx[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for k in i..size {
                idx[k] = idx[k - 1] + 1;
            }
        }
    }
    out
}

impl Serialize for ModelTermSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.labels().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelTermSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        let terms = labels
            .iter()
            .map(|l| l.parse())
            .collect::<Result<Vec<Term>, _>>()
            .map_err(serde::de::Error::custom)?;
        ModelTermSet::new(terms).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Device {
    NvmeRead,
    NvmeWrite,
    HddRead,
    HddWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Nvme,
    Hdd,
}

impl Device {
    pub const ALL: [Device; 4] = [
        Device::NvmeRead,
        Device::NvmeWrite,
        Device::HddRead,
        Device::HddWrite,
    ];

    pub fn family(self) -> Family {
        match self {
            Device::NvmeRead | Device::NvmeWrite => Family::Nvme,
            Device::HddRead | Device::HddWrite => Family::Hdd,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Device::NvmeRead => "nvme-read",
            Device::NvmeWrite => "nvme-write",
            Device::HddRead => "hdd-read",
            Device::HddWrite => "hdd-write",
        }
    }
}

impl FromStr for Device {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Device::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| DeviceError::UnknownDevice(s.to_string()))
    }
}

impl Family {
    /// Star formula of the published model for this family.
    pub fn formula(self) -> &'static str {
        match self {
            Family::Nvme => "x1*x3*x4 + x5*x4*x3",
            Family::Hdd => "x3*x4 + x5*x1*x2",
        }
    }

    /// Training ranges of the published models, per predictor. `None` where
    /// no range was stated.
    pub fn training_envelope(self) -> [Option<(f64, f64)>; N_PREDICTORS] {
        match self {
            Family::Nvme => [
                Some((8.0, 64.0)),
                None,
                Some((512.0, 262_144.0)),
                Some((1_000.0, 4_000_000.0)),
                Some((500e6, 500e9)),
            ],
            Family::Hdd => [
                Some((4.0, 200.0)),
                Some((1.0, 8.0)),
                None,
                Some((65_536.0, 67_108_864.0)),
                Some((100e6, 350e9)),
            ],
        }
    }

    /// Number of operations a predicted total time is spread over: requests
    /// (x4) for NVMe, stripes (x2 * x3) for HDD.
    pub fn operation_count(self, x: &[f64]) -> f64 {
        match self {
            Family::Nvme => x[3],
            Family::Hdd => x[1] * x[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PaperTable,
    Fitted,
}

/// Goodness-of-fit statistics of a fitted model. Non-finite statistics (an
/// exact fit has zero standard errors) serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub r_squared: f64,
    pub residual_std_error: f64,
    pub df: usize,
    pub std_errors: Vec<Option<f64>>,
    pub t_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub device: Device,
    pub terms: ModelTermSet,
    /// Intercept first, then one coefficient per term.
    pub coefficients: Vec<f64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub seconds: f64,
    /// Set when the value is not positive or an input lies outside the
    /// training envelope.
    pub out_of_range: bool,
}

impl DeviceModel {
    pub fn new(
        device: Device,
        terms: ModelTermSet,
        coefficients: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, DeviceError> {
        if coefficients.len() != terms.len() + 1 {
            return Err(DeviceError::CoefficientCount {
                coefficients: coefficients.len(),
                terms: terms.len(),
            });
        }
        Ok(DeviceModel {
            device,
            terms,
            coefficients,
            provenance,
            fit: None,
        })
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Coefficient of a term given by label, in any factor order.
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        if label == "(Intercept)" {
            return Some(self.intercept());
        }
        let term: Term = label.parse().ok()?;
        self.terms
            .terms()
            .iter()
            .position(|t| *t == term)
            .map(|i| self.coefficients[i + 1])
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, DeviceError> {
        if x.len() != N_PREDICTORS {
            return Err(DeviceError::Dimension {
                expected: N_PREDICTORS,
                got: x.len(),
            });
        }
        let seconds = self.coefficients[0]
            + self
                .terms
                .terms()
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(t, c)| c * t.eval(x))
                .sum::<f64>();
        let outside = self
            .device
            .family()
            .training_envelope()
            .iter()
            .zip(x)
            .any(|(range, &v)| matches!(range, Some((lo, hi)) if v < *lo || v > *hi));
        Ok(Prediction {
            seconds,
            out_of_range: outside || seconds <= 0.0,
        })
    }

    /// Mean time per operation, floored at `floor` seconds. The reciprocal is
    /// the service rate fed to the queueing model and the simulator.
    pub fn per_operation_time(&self, x: &[f64], floor: f64) -> Result<f64, DeviceError> {
        let total = self.predict(x)?.seconds;
        let ops = self.device.family().operation_count(x);
        let per_op = if ops > 0.0 { total / ops } else { total };
        Ok(if per_op.is_finite() && per_op > floor {
            per_op
        } else {
            floor
        })
    }
}

/// Published coefficient estimates, in table order.
fn paper_table(device: Device) -> &'static [(&'static str, f64)] {
    match device {
        Device::NvmeWrite => &[
            ("x1", 6.252e-01),
            ("x3", -6.326e-05),
            ("x4", 3.726e-05),
            ("x5", 6.213e-11),
            ("x1:x3", 1.667e-06),
            ("x1:x4", -8.464e-07),
            ("x3:x4", -1.650e-09),
            ("x4:x5", 2.029e-16),
            ("x3:x5", -6.564e-16),
            ("x1:x3:x4", 1.973e-10),
            ("x3:x4:x5", 1.103e-20),
        ],
        Device::NvmeRead => &[
            ("x1", 2.182e-02),
            ("x3", 1.009e-04),
            ("x4", -3.566e-06),
            ("x5", 6.963e-11),
            ("x1:x3", -2.066e-07),
            ("x1:x4", -1.165e-08),
            ("x3:x4", -4.060e-10),
            ("x4:x5", 1.259e-16),
            ("x3:x5", -2.984e-15),
            ("x1:x3:x4", -6.675e-12),
            ("x3:x4:x5", 1.896e-20),
        ],
        Device::HddWrite => &[
            ("x3", 4.318e-04),
            ("x4", -4.354e-06),
            ("x5", 1.002e-08),
            ("x1", 3.869e-01),
            ("x2", 6.664e+00),
            ("x3:x4", 2.007e-11),
            ("x5:x1", -7.486e-11),
            ("x5:x2", -9.269e-10),
            ("x1:x2", -9.916e-02),
            ("x5:x1:x2", 8.344e-12),
        ],
        Device::HddRead => &[
            ("x3", 5.913e-04),
            ("x4", -1.584e-06),
            ("x2", 8.933e+00),
            ("x1", -2.563e+00),
            ("x5", 6.274e-10),
            ("x3:x4", 1.715e-08),
            ("x2:x1", 3.694e-01),
            ("x2:x5", -2.272e-10),
            ("x1:x5", -4.751e-11),
            ("x2:x1:x5", 5.167e-12),
        ],
    }
}

fn paper_intercept(device: Device) -> f64 {
    match device {
        Device::NvmeWrite => -5.941e+00,
        Device::NvmeRead => -6.059e+00,
        Device::HddWrite => 7.297e+00,
        Device::HddRead => -3.771e-01,
    }
}

/// The published model for `device`.
pub fn load_paper_model(device: Device) -> DeviceModel {
    let table = paper_table(device);
    let terms = table
        .iter()
        .map(|(label, _)| label.parse().expect("static term label"))
        .collect();
    let terms = ModelTermSet::new(terms).expect("static terms are distinct");
    let coefficients = std::iter::once(paper_intercept(device))
        .chain(table.iter().map(|&(_, c)| c))
        .collect();
    DeviceModel::new(device, terms, coefficients, Provenance::PaperTable)
        .expect("static coefficient count")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub predictors: [f64; N_PREDICTORS],
    pub observed_time: f64,
}

/// Fits coefficients for `terms` by least squares.
pub fn fit(
    device: Device,
    terms: &ModelTermSet,
    samples: &[TrainingSample],
) -> Result<DeviceModel, DeviceError> {
    let p = terms.len() + 1;
    if samples.len() <= p {
        return Err(DeviceError::Underdetermined {
            samples: samples.len(),
            coefficients: p,
        });
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| terms.design_row(&s.predictors)).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.observed_time).collect();
    let label = |col: usize| {
        if col == 0 {
            "(Intercept)".to_string()
        } else {
            terms.terms()[col - 1].label()
        }
    };
    let result = ols::least_squares(&rows, &y).map_err(|e| match e {
        OlsError::RankDeficient { column, with } => DeviceError::RankDeficient {
            term: label(column),
            with: with.into_iter().map(label).collect(),
        },
        OlsError::Underdetermined {
            observations,
            coefficients,
        } => DeviceError::Underdetermined {
            samples: observations,
            coefficients,
        },
        other => DeviceError::Fit(other),
    })?;
    let finite = |v: &f64| v.is_finite().then_some(*v);
    let mut model = DeviceModel::new(device, terms.clone(), result.coefficients, Provenance::Fitted)?;
    model.fit = Some(FitSummary {
        r_squared: result.r_squared,
        residual_std_error: result.residual_std_error,
        df: result.df,
        std_errors: result.std_errors.iter().map(finite).collect(),
        t_values: result.t_values.iter().map(finite).collect(),
    });
    Ok(model)
}

pub const TRAINING_HEADER: &str = "x1,x2,x3,x4,x5,y_seconds";

#[derive(Debug, Deserialize)]
struct TrainingRow {
    x1: f64,
    x2: f64,
    x3: f64,
    x4: f64,
    x5: f64,
    y_seconds: f64,
}

/// Parses training samples from CSV with header [`TRAINING_HEADER`].
pub fn read_training<R: Read>(reader: R) -> Result<Vec<TrainingSample>, DeviceError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| DeviceError::Training {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>().join(",") != TRAINING_HEADER {
        return Err(DeviceError::Training {
            line: 1,
            message: format!("expected header `{TRAINING_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DeviceError::Training {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TrainingRow = record.deserialize(None).map_err(|e| DeviceError::Training {
            line,
            message: e.to_string(),
        })?;
        let predictors = [row.x1, row.x2, row.x3, row.x4, row.x5];
        if predictors.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DeviceError::Training {
                line,
                message: "predictors must be non-negative".into(),
            });
        }
        if !(row.y_seconds.is_finite() && row.y_seconds > 0.0) {
            return Err(DeviceError::Training {
                line,
                message: "y_seconds must be positive".into(),
            });
        }
        out.push(TrainingSample {
            predictors,
            observed_time: row.y_seconds,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nvme_formula_matches_table_terms() {
        let set = ModelTermSet::from_formula(Family::Nvme.formula()).unwrap();
        assert_eq!(
            set.labels(),
            [
                "x1", "x3", "x4", "x5", "x1:x3", "x1:x4", "x3:x4", "x5:x4", "x5:x3", "x1:x3:x4",
                "x5:x4:x3"
            ]
        );
        let paper = load_paper_model(Device::NvmeWrite);
        assert_eq!(paper.terms, set);
    }

    #[test]
    fn hdd_formula_matches_table_terms() {
        let set = ModelTermSet::from_formula(Family::Hdd.formula()).unwrap();
        assert_eq!(set.len(), 10);
        for device in [Device::HddRead, Device::HddWrite] {
            let paper = load_paper_model(device);
            for t in set.terms() {
                assert!(paper.terms.terms().contains(t), "{t} missing from {device:?}");
            }
        }
    }

    #[test]
    fn formula_errors() {
        assert!(ModelTermSet::from_formula("x1*y2").is_err());
        assert!(ModelTermSet::from_formula("x1 + x1").is_ok());
        assert!(ModelTermSet::from_formula("x1 + ").is_err());
        assert!(ModelTermSet::from_formula("x6").is_err());
        assert!("x1:x1".parse::<Term>().is_err());
        let t1 = Term::new(&[1]).unwrap();
        assert!(matches!(
            ModelTermSet::new(vec![t1.clone(), t1]),
            Err(DeviceError::DuplicateTerm(_))
        ));
    }

    #[test]
    fn published_coefficients() {
        let w = load_paper_model(Device::NvmeWrite);
        assert_eq!(w.coefficient("x1:x3:x4"), Some(1.973e-10));
        assert_eq!(w.intercept(), -5.941);
        assert_eq!(w.coefficients.len(), 12);
        let r = load_paper_model(Device::NvmeRead);
        assert_eq!(r.coefficient("x3:x4:x5"), Some(1.896e-20));
        let hr = load_paper_model(Device::HddRead);
        assert_eq!(hr.coefficient("x3:x4"), Some(1.715e-08));
        assert_eq!(hr.coefficient("x1:x2:x5"), Some(5.167e-12));
        assert_eq!(hr.coefficient("x1:x2"), Some(3.694e-01));
        assert_eq!(load_paper_model(Device::HddWrite).coefficients.len(), 11);
    }

    #[test]
    fn zero_input_gives_intercept() {
        let m = load_paper_model(Device::NvmeWrite);
        let p = m.predict(&[0.0; 5]).unwrap();
        assert_eq!(p.seconds, -5.941);
        assert!(p.out_of_range);
    }

    #[test]
    fn hdd_zeroed_terms() {
        // x3 = x5 = 0 leaves the intercept, x4, x1, x2 and x1:x2
        let m = load_paper_model(Device::HddWrite);
        let (x1, x2, x4) = (16.0, 4.0, 1_048_576.0);
        let expected = 7.297 + -4.354e-06 * x4 + 3.869e-01 * x1 + 6.664 * x2 + -9.916e-02 * x1 * x2;
        let got = m.predict(&[x1, x2, 0.0, x4, 0.0]).unwrap().seconds;
        assert!((got - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn dimension_checked() {
        let m = load_paper_model(Device::HddRead);
        assert!(matches!(
            m.predict(&[1.0; 4]),
            Err(DeviceError::Dimension { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn per_operation_time_floor() {
        let m = load_paper_model(Device::NvmeWrite);
        assert_eq!(m.per_operation_time(&[0.0; 5], 1e-6).unwrap(), 1e-6);
        let x = [16.0, 0.0, 4096.0, 100_000.0, 1e10];
        let total = m.predict(&x).unwrap().seconds;
        assert!(total > 0.0);
        assert_eq!(m.per_operation_time(&x, 1e-6).unwrap(), (total / 1e5).max(1e-6));
    }

    #[test]
    fn underdetermined_and_collinear() {
        let terms = ModelTermSet::from_formula(Family::Nvme.formula()).unwrap();
        let s = TrainingSample {
            predictors: [8.0, 0.0, 512.0, 1000.0, 5e8],
            observed_time: 1.0,
        };
        assert!(matches!(
            fit(Device::NvmeWrite, &terms, &[s; 3]),
            Err(DeviceError::Underdetermined { samples: 3, coefficients: 12 })
        ));
        // x2 duplicates x1 in every sample
        let dup = ModelTermSet::from_formula("x1 + x2").unwrap();
        let samples: Vec<_> = (1..10)
            .map(|i| TrainingSample {
                predictors: [i as f64, i as f64, 0.0, 0.0, 0.0],
                observed_time: i as f64,
            })
            .collect();
        match fit(Device::NvmeRead, &dup, &samples) {
            Err(DeviceError::RankDeficient { term, with }) => {
                assert_eq!(term, "x2");
                assert_eq!(with, ["x1"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn training_csv() {
        let text = format!("{TRAINING_HEADER}\n8,0,512,1000,500000000,1.5\n16,1,4096,2000,1e9,2\n");
        let s = read_training(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].predictors[4], 1e9);
        let bad = format!("{TRAINING_HEADER}\n8,0,512,1000,500000000,0\n");
        assert!(matches!(read_training(bad.as_bytes()), Err(DeviceError::Training { line: 2, .. })));
        assert!(read_training("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let m = load_paper_model(Device::HddRead);
        let json = serde_json::to_string(&m).unwrap();
        let back: DeviceModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(json.contains("\"x2:x1:x5\""));
    }
}
