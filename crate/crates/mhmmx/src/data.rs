//! Domain types and dataset ingestion.
//!
//! A patient record couples a baseline risk-factor vector with a weekly
//! bivariate symptom trajectory (pain on the NRS 0-10 scale and days with
//! activity limitation, 0-7). Baseline and trajectory files are plain CSV;
//! parsing rejects malformed rows with row-level diagnostics.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

/// One weekly observation; either coordinate may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub pain: Option<u8>,
    pub disability: Option<u8>,
}

impl Observation {
    pub const MISSING: Observation = Observation {
        pain: None,
        disability: None,
    };

    pub fn new(pain: u8, disability: u8) -> Self {
        Observation {
            pain: Some(pain),
            disability: Some(disability),
        }
    }

    pub fn is_fully_missing(&self) -> bool {
        self.pain.is_none() && self.disability.is_none()
    }
}

/// Baseline risk factors plus the symptom trajectory for one patient.
///
/// `x` holds the encoded (dummy-expanded, uncentered) risk factors; centering
/// is applied when the training design matrix is built so that test and
/// incoming patients reuse the training means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub x: Vec<f64>,
    pub trajectory: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ColumnKind {
    Numeric,
    /// Two-level factor; `levels[0]` is the reference and encodes to 0.
    Binary { levels: [String; 2] },
    /// Multi-level factor; `levels[0]` is the reference level (dropped), the
    /// remaining L-1 levels expand to indicator columns.
    Categorical { levels: Vec<String> },
}

impl ColumnKind {
    pub fn encoded_width(&self) -> usize {
        match self {
            ColumnKind::Numeric | ColumnKind::Binary { .. } => 1,
            ColumnKind::Categorical { levels } => levels.len().saturating_sub(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Ordered column catalog plus the per-encoded-column centering offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFactorEncoding {
    pub columns: Vec<ColumnSpec>,
    /// One entry per encoded column; zero until fitted on a training split.
    pub centering: Vec<f64>,
}

impl RiskFactorEncoding {
    pub fn new(columns: Vec<ColumnSpec>) -> Self {
        let width = columns.iter().map(|c| c.kind.encoded_width()).sum();
        RiskFactorEncoding {
            columns,
            centering: vec![0.0; width],
        }
    }

    pub fn encoded_width(&self) -> usize {
        self.columns.iter().map(|c| c.kind.encoded_width()).sum()
    }

    /// Names of the encoded columns, categorical levels expanded.
    pub fn encoded_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for col in &self.columns {
            match &col.kind {
                ColumnKind::Numeric | ColumnKind::Binary { .. } => names.push(col.name.clone()),
                ColumnKind::Categorical { levels } => {
                    for level in levels.iter().skip(1) {
                        names.push(format!("{}={}", col.name, level));
                    }
                }
            }
        }
        names
    }

    /// Computes per-column means over the given encoded rows and stores them
    /// as centering offsets.
    pub fn fit_centering(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        let width = self.encoded_width();
        if rows.is_empty() {
            return Err(Error::EmptyInput("cannot fit centering on no rows".into()));
        }
        let mut means = vec![0.0; width];
        for row in rows {
            if row.len() != width {
                return Err(Error::DimensionMismatch(format!(
                    "encoded row has {} entries, expected {width}",
                    row.len()
                )));
            }
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= rows.len() as f64;
            if !m.is_finite() {
                return Err(Error::NonFinite("centering".into()));
            }
        }
        self.centering = means;
        Ok(())
    }

    /// Applies the stored centering to an encoded row.
    pub fn center(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.centering.len() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} entries, centering has {}",
                x.len(),
                self.centering.len()
            )));
        }
        Ok(x.iter().zip(&self.centering).map(|(v, c)| v - c).collect())
    }

    /// Encodes one raw baseline value into its encoded columns.
    fn encode_value(&self, col: &ColumnSpec, raw: &str, location: &str) -> Result<Vec<f64>> {
        let raw = raw.trim();
        if raw.is_empty() || raw == "NA" {
            return Err(Error::data(
                location,
                format!("missing value for risk factor `{}`", col.name),
            ));
        }
        match &col.kind {
            ColumnKind::Numeric => {
                let v: f64 = raw.parse().map_err(|_| {
                    Error::data(location, format!("`{raw}` is not numeric for `{}`", col.name))
                })?;
                if !v.is_finite() {
                    return Err(Error::data(
                        location,
                        format!("non-finite value for `{}`", col.name),
                    ));
                }
                Ok(vec![v])
            }
            ColumnKind::Binary { levels } => {
                if raw == levels[0] {
                    Ok(vec![0.0])
                } else if raw == levels[1] {
                    Ok(vec![1.0])
                } else {
                    Err(Error::data(
                        location,
                        format!("unknown level `{raw}` for `{}`", col.name),
                    ))
                }
            }
            ColumnKind::Categorical { levels } => {
                let pos = levels.iter().position(|l| l == raw).ok_or_else(|| {
                    Error::data(location, format!("unknown level `{raw}` for `{}`", col.name))
                })?;
                let mut enc = vec![0.0; levels.len() - 1];
                if pos > 0 {
                    enc[pos - 1] = 1.0;
                }
                Ok(enc)
            }
        }
    }
}

/// Schema rule set handed to the loader: column catalog plus the trajectory
/// shape (horizon and symptom support maxima).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<ColumnSpec>,
    pub t: usize,
    pub mp: u8,
    pub md: u8,
}

impl DatasetSchema {
    /// Horizon 52 weeks, NRS pain 0-10, activity-limitation days 0-7.
    pub fn with_defaults(columns: Vec<ColumnSpec>) -> Self {
        DatasetSchema {
            columns,
            t: 52,
            mp: 10,
            md: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub patients: Vec<PatientRecord>,
    pub encoding: RiskFactorEncoding,
    pub t: usize,
    pub mp: u8,
    pub md: u8,
}

impl Dataset {
    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.encoding.encoded_width();
        let mut seen = HashSet::new();
        for p in &self.patients {
            if !seen.insert(&p.id) {
                return Err(Error::data(
                    format!("patient {}", p.id),
                    "duplicate patient id",
                ));
            }
            if p.x.len() != width {
                return Err(Error::DimensionMismatch(format!(
                    "patient {} has {} risk factors, expected {width}",
                    p.id,
                    p.x.len()
                )));
            }
            if p.trajectory.len() != self.t {
                return Err(Error::DimensionMismatch(format!(
                    "patient {} has trajectory length {}, expected {}",
                    p.id,
                    p.trajectory.len(),
                    self.t
                )));
            }
            for (week, obs) in p.trajectory.iter().enumerate() {
                if let Some(v) = obs.pain {
                    if v > self.mp {
                        return Err(Error::data(
                            format!("patient {}, week {}", p.id, week + 1),
                            format!("pain value {v} out of range 0..={}", self.mp),
                        ));
                    }
                }
                if let Some(v) = obs.disability {
                    if v > self.md {
                        return Err(Error::data(
                            format!("patient {}, week {}", p.id, week + 1),
                            format!("disability value {v} out of range 0..={}", self.md),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses the baseline CSV: one row per patient, header of factor names, a
/// leading `id` column, missing marker "NA" rejected with row diagnostics.
pub fn parse_baseline_csv<R: Read>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<Vec<(String, Vec<f64>)>> {
    let encoding = RiskFactorEncoding::new(schema.columns.clone());
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col_idx = Vec::with_capacity(schema.columns.len());
    let mut id_idx = None;
    for (i, h) in headers.iter().enumerate() {
        if h == "id" {
            id_idx = Some(i);
        }
    }
    let id_idx =
        id_idx.ok_or_else(|| Error::data("baseline header", "missing `id` column"))?;
    for col in &schema.columns {
        let idx = headers
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| Error::data("baseline header", format!("unknown column `{}` (not in file)", col.name)))?;
        col_idx.push(idx);
    }

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        let location = format!("baseline row {}", row_no + 2);
        let id = record
            .get(id_idx)
            .ok_or_else(|| Error::data(&location, "short row"))?
            .trim()
            .to_string();
        if id.is_empty() {
            return Err(Error::data(&location, "empty patient id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::data(&location, format!("duplicate patient id `{id}`")));
        }
        let mut x = Vec::with_capacity(encoding.encoded_width());
        for (col, &idx) in schema.columns.iter().zip(&col_idx) {
            let raw = record
                .get(idx)
                .ok_or_else(|| Error::data(&location, "short row"))?;
            x.extend(encoding.encode_value(col, raw, &location)?);
        }
        out.push((id, x));
    }
    Ok(out)
}

fn parse_symptom(raw: &str, max: u8, name: &str, location: &str) -> Result<Option<u8>> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "NA" {
        return Ok(None);
    }
    let v: i64 = raw
        .parse()
        .map_err(|_| Error::data(location, format!("{name} value `{raw}` is not an integer")))?;
    if v < 0 || v > max as i64 {
        return Err(Error::data(
            location,
            format!("{name} value {v} out of range 0..={max}"),
        ));
    }
    Ok(Some(v as u8))
}

/// Parses the long-format trajectory CSV (`id, week, pain, disability`).
/// Missing weeks stay missing; duplicate `(id, week)` pairs are rejected.
pub fn parse_trajectory_csv<R: Read>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<HashMap<String, Vec<Observation>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [usize::MAX; 4];
    for (i, h) in headers.iter().enumerate() {
        match h {
            "id" => idx[0] = i,
            "week" => idx[1] = i,
            "pain" => idx[2] = i,
            "disability" => idx[3] = i,
            other => {
                return Err(Error::data(
                    "trajectory header",
                    format!("unknown column `{other}`"),
                ))
            }
        }
    }
    if idx.contains(&usize::MAX) {
        return Err(Error::data(
            "trajectory header",
            "expected columns id, week, pain, disability",
        ));
    }

    let mut out: HashMap<String, Vec<Observation>> = HashMap::new();
    let mut seen: HashSet<(String, usize)> = HashSet::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        let location = format!("trajectory row {}", row_no + 2);
        let get = |i: usize| -> Result<&str> {
            record
                .get(idx[i])
                .ok_or_else(|| Error::data(&location, "short row"))
        };
        let id = get(0)?.trim().to_string();
        let week: usize = get(1)?
            .trim()
            .parse()
            .map_err(|_| Error::data(&location, "week is not a positive integer"))?;
        if week < 1 || week > schema.t {
            return Err(Error::data(
                &location,
                format!("week {week} out of range 1..={}", schema.t),
            ));
        }
        if !seen.insert((id.clone(), week)) {
            return Err(Error::data(
                &location,
                format!("duplicate (id, week) pair ({id}, {week})"),
            ));
        }
        let pain = parse_symptom(get(2)?, schema.mp, "pain", &location)?;
        let disability = parse_symptom(get(3)?, schema.md, "disability", &location)?;
        let traj = out
            .entry(id)
            .or_insert_with(|| vec![Observation::MISSING; schema.t]);
        traj[week - 1] = Observation { pain, disability };
    }
    Ok(out)
}

/// Loads and joins the baseline and trajectory files into a validated
/// dataset. Patients present in the baseline but absent from the trajectory
/// file get all-missing trajectories.
pub fn load_dataset(
    baseline_path: &Path,
    trajectory_path: &Path,
    schema: &DatasetSchema,
) -> Result<Dataset> {
    let baseline = parse_baseline_csv(std::fs::File::open(baseline_path)?, schema)?;
    let mut trajectories = parse_trajectory_csv(std::fs::File::open(trajectory_path)?, schema)?;

    let known: HashSet<&String> = baseline.iter().map(|(id, _)| id).collect();
    if let Some(unknown) = trajectories.keys().find(|id| !known.contains(id)) {
        return Err(Error::data(
            "trajectory file",
            format!("trajectory rows for unknown patient id `{unknown}`"),
        ));
    }

    let patients = baseline
        .into_iter()
        .map(|(id, x)| {
            let trajectory = trajectories
                .remove(&id)
                .unwrap_or_else(|| vec![Observation::MISSING; schema.t]);
            PatientRecord { id, x, trajectory }
        })
        .collect();

    let ds = Dataset {
        patients,
        encoding: RiskFactorEncoding::new(schema.columns.clone()),
        t: schema.t,
        mp: schema.mp,
        md: schema.md,
    };
    ds.validate()?;
    Ok(ds)
}

/// Deterministic random split into a `fraction` part and its complement.
/// The first returned dataset holds `round(fraction * n)` patients.
pub fn split_dataset(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.patients.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in (0,1), got {fraction}"
        )));
    }
    let n = ds.patients.len();
    let n_first = ((n as f64) * fraction + 0.5).floor() as usize;
    let n_first = n_first.clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let pick = |ids: &[usize]| Dataset {
        patients: ids.iter().map(|&i| ds.patients[i].clone()).collect(),
        encoding: ds.encoding.clone(),
        t: ds.t,
        mp: ds.mp,
        md: ds.md,
    };
    Ok((pick(&order[..n_first]), pick(&order[n_first..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn toy_schema() -> DatasetSchema {
        DatasetSchema {
            columns: vec![
                ColumnSpec {
                    name: "age".into(),
                    kind: ColumnKind::Numeric,
                },
                ColumnSpec {
                    name: "gender".into(),
                    kind: ColumnKind::Binary {
                        levels: ["Female".into(), "Male".into()],
                    },
                },
                ColumnSpec {
                    name: "smoking".into(),
                    kind: ColumnKind::Categorical {
                        levels: vec!["Never".into(), "Ex".into(), "Smoker".into()],
                    },
                },
            ],
            t: 4,
            mp: 10,
            md: 7,
        }
    }

    #[test]
    fn encodes_baseline_with_dummy_expansion() {
        let schema = toy_schema();
        let csv = "id,age,gender,smoking\np1,43,Male,Ex\np2,30,Female,Never\n";
        let rows = parse_baseline_csv(Cursor::new(csv), &schema).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].1, vec![43.0, 1.0, 1.0, 0.0]);
        assert_eq!(rows[1].1, vec![30.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_baseline_rows() {
        let schema = toy_schema();
        for (csv, needle) in [
            ("id,age,gender,smoking\np1,43,Blue,Ex\n", "unknown level"),
            ("id,age,gender,smoking\np1,NA,Male,Ex\n", "missing value"),
            (
                "id,age,gender,smoking\np1,43,Male,Ex\np1,44,Male,Ex\n",
                "duplicate patient id",
            ),
            ("id,age,gender\np1,43,Male\n", "unknown column"),
        ] {
            let err = parse_baseline_csv(Cursor::new(csv), &schema).unwrap_err();
            assert!(err.to_string().contains(needle), "{err} !~ {needle}");
        }
    }

    #[test]
    fn trajectory_out_of_range_and_duplicates_rejected() {
        let schema = toy_schema();
        let err = parse_trajectory_csv(
            Cursor::new("id,week,pain,disability\np1,1,11,0\n"),
            &schema,
        )
        .unwrap_err();
        assert!(err.to_string().contains("out of range"));

        let err = parse_trajectory_csv(
            Cursor::new("id,week,pain,disability\np1,1,2,0\np1,1,3,0\n"),
            &schema,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate (id, week)"));

        let err = parse_trajectory_csv(
            Cursor::new("id,week,pain,disability\np1,1,2.5,0\n"),
            &schema,
        )
        .unwrap_err();
        assert!(err.to_string().contains("not an integer"));
    }

    #[test]
    fn omitted_weeks_become_missing() {
        let schema = toy_schema();
        let baseline = "id,age,gender,smoking\np1,43,Male,Ex\n";
        let traj = "id,week,pain,disability\np1,1,3,2\np1,2,4,1\np1,4,0,0\n";
        let dir = tempfile::tempdir().unwrap();
        let bpath = dir.path().join("baseline.csv");
        let tpath = dir.path().join("traj.csv");
        std::fs::write(&bpath, baseline).unwrap();
        std::fs::write(&tpath, traj).unwrap();
        let ds = load_dataset(&bpath, &tpath, &schema).unwrap();
        assert_eq!(ds.patients.len(), 1);
        let t = &ds.patients[0].trajectory;
        assert_eq!(t[0], Observation::new(3, 2));
        assert!(t[2].is_fully_missing());
        assert_eq!(t[3], Observation::new(0, 0));
    }

    #[test]
    fn baseline_only_patient_gets_all_missing_trajectory() {
        let schema = toy_schema();
        let dir = tempfile::tempdir().unwrap();
        let bpath = dir.path().join("baseline.csv");
        let tpath = dir.path().join("traj.csv");
        std::fs::write(&bpath, "id,age,gender,smoking\np1,43,Male,Ex\np2,30,Female,Never\n")
            .unwrap();
        std::fs::write(&tpath, "id,week,pain,disability\np1,1,3,2\n").unwrap();
        let ds = load_dataset(&bpath, &tpath, &schema).unwrap();
        let p2 = ds.patients.iter().find(|p| p.id == "p2").unwrap();
        assert!(p2.trajectory.iter().all(|o| o.is_fully_missing()));
    }

    fn synthetic_dataset(n: usize) -> Dataset {
        let encoding = RiskFactorEncoding::new(vec![ColumnSpec {
            name: "age".into(),
            kind: ColumnKind::Numeric,
        }]);
        Dataset {
            patients: (0..n)
                .map(|i| PatientRecord {
                    id: format!("p{i}"),
                    x: vec![i as f64],
                    trajectory: vec![Observation::MISSING; 2],
                })
                .collect(),
            encoding,
            t: 2,
            mp: 10,
            md: 7,
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = synthetic_dataset(847);
        let (a, b) = split_dataset(&ds, 0.5, 99).unwrap();
        assert!((a.n_patients() as i64 - b.n_patients() as i64).abs() <= 1);
        assert_eq!(a.n_patients() + b.n_patients(), 847);

        let (a2, b2) = split_dataset(&ds, 0.5, 99).unwrap();
        let ids = |d: &Dataset| d.patients.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&a2));
        assert_eq!(ids(&b), ids(&b2));

        let ds = synthetic_dataset(100);
        let (a, b) = split_dataset(&ds, 0.25, 7).unwrap();
        assert_eq!(a.n_patients(), 25);
        assert_eq!(b.n_patients(), 75);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = synthetic_dataset(101);
        let (a, b) = split_dataset(&ds, 0.37, 3).unwrap();
        let mut all: Vec<String> = a
            .patients
            .iter()
            .chain(b.patients.iter())
            .map(|p| p.id.clone())
            .collect();
        all.sort();
        let mut expected: Vec<String> = ds.patients.iter().map(|p| p.id.clone()).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn centering_gives_zero_mean_columns() {
        let mut enc = RiskFactorEncoding::new(vec![ColumnSpec {
            name: "age".into(),
            kind: ColumnKind::Numeric,
        }]);
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 3.0 + 1.0]).collect();
        enc.fit_centering(&rows).unwrap();
        let centered: Vec<f64> = rows.iter().map(|r| enc.center(r).unwrap()[0]).collect();
        let mean: f64 = centered.iter().sum::<f64>() / centered.len() as f64;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn encoding_roundtrips_through_json() {
        let enc = RiskFactorEncoding::new(toy_schema().columns);
        let json = serde_json::to_string(&enc).unwrap();
        let back: RiskFactorEncoding = serde_json::from_str(&json).unwrap();
        assert_eq!(enc, back);
        assert_eq!(enc.encoded_names(), back.encoded_names());
    }
}
