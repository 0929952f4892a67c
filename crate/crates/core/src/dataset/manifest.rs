//! Manifest CSV ingest and serialization.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the manifest CSV header.
pub const MANIFEST_COLUMNS: [&str; 8] = [
    "subject_id",
    "session",
    "capture_date",
    "age_years",
    "sex",
    "side",
    "image_path",
    "annotation_path",
];

pub const DEFAULT_SESSION_SPACING_MONTHS: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            "U" => Ok(Sex::U),
            other => Err(format!("invalid sex {other:?}, expected F, M or U")),
        }
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "L" => Ok(Side::L),
            "R" => Ok(Side::R),
            other => Err(format!("invalid side {other:?}, expected L or R")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
            Sex::U => "U",
        })
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::L => "L",
            Side::R => "R",
        })
    }
}

/// One captured image of one subject in one collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub subject_id: String,
    pub session: u32,
    pub capture_date: NaiveDate,
    /// Age at capture; `None` when the manifest leaves the cell blank.
    pub age_years: Option<f64>,
    pub sex: Sex,
    pub side: Side,
    /// Relative to the manifest directory.
    pub image_path: PathBuf,
    /// Relative to the manifest directory.
    pub annotation_path: PathBuf,
}

impl ImageRecord {
    /// `subject/session/basename`, used to key embeddings, scores and outputs.
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.subject_id, self.session, self.basename())
    }

    pub fn basename(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    pub session_spacing_months: u32,
    /// Directory that relative record paths resolve against.
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationWarning {
    Empty,
    /// Session indices present in the manifest skip these values.
    MissingSessions(Vec<u32>),
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationWarning::Empty => f.write_str("manifest has no records"),
            ValidationWarning::MissingSessions(s) => write!(f, "no records for sessions {s:?}"),
        }
    }
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>, root: impl Into<PathBuf>) -> Self {
        Manifest {
            records,
            session_spacing_months: DEFAULT_SESSION_SPACING_MONTHS,
            root: root.into(),
        }
    }

    pub fn max_session(&self) -> u32 {
        self.records.iter().map(|r| r.session).max().unwrap_or(0)
    }

    /// Distinct session indices in ascending order.
    pub fn sessions(&self) -> Vec<u32> {
        self.records
            .iter()
            .map(|r| r.session)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.image_path)
    }

    pub fn annotation_path(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.annotation_path)
    }

    /// Checks record invariants and that every referenced file exists.
    pub fn validate(&self) -> Result<Vec<ValidationWarning>> {
        let mut warnings = Vec::new();
        if self.records.is_empty() {
            warnings.push(ValidationWarning::Empty);
            return Ok(warnings);
        }
        let mut keys = HashSet::new();
        for record in &self.records {
            if record.session < 1 {
                return Err(Error::input(format!(
                    "record {}: session out of range",
                    record.key()
                )));
            }
            if matches!(record.age_years, Some(a) if !(a >= 0.0 && a.is_finite())) {
                return Err(Error::input(format!(
                    "record {}: age_years must be nonnegative",
                    record.key()
                )));
            }
            if !keys.insert(record.key()) {
                return Err(Error::input(format!(
                    "duplicate record key {}",
                    record.key()
                )));
            }
            for path in [self.image_path(record), self.annotation_path(record)] {
                if !path.is_file() {
                    return Err(Error::input(format!(
                        "record {}: missing file {}",
                        record.key(),
                        path.display()
                    )));
                }
            }
        }
        let present: BTreeSet<u32> = self.sessions().into_iter().collect();
        let missing: Vec<u32> = (1..=self.max_session())
            .filter(|s| !present.contains(s))
            .collect();
        if !missing.is_empty() {
            warnings.push(ValidationWarning::MissingSessions(missing));
        }
        Ok(warnings)
    }

    /// Writes the manifest in the CSV schema read by [`parse_manifest`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        self.write_rows(&mut writer)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        self.write_rows(&mut writer).expect("in-memory csv write");
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    fn write_rows<W: std::io::Write>(&self, writer: &mut csv::Writer<W>) -> csv::Result<()> {
        writer.write_record(MANIFEST_COLUMNS)?;
        for r in &self.records {
            writer.write_record([
                r.subject_id.clone(),
                r.session.to_string(),
                r.capture_date.format("%Y-%m-%d").to_string(),
                r.age_years.map(|a| a.to_string()).unwrap_or_default(),
                r.sex.to_string(),
                r.side.to_string(),
                path_to_csv(&r.image_path),
                path_to_csv(&r.annotation_path),
            ])?;
        }
        Ok(())
    }
}

fn path_to_csv(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

/// Reads a manifest CSV. Relative paths resolve against the file's directory.
pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = parse_manifest_str(&text, path, root)?;
    if manifest.records.is_empty() {
        log::warn!("{}: {}", path.display(), ValidationWarning::Empty);
    }
    Ok(manifest)
}

pub(crate) fn parse_manifest_str(text: &str, origin: &Path, root: PathBuf) -> Result<Manifest> {
    let err = |line: u64, message: String| Error::Manifest {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let mut column = [0usize; 8];
    for (slot, name) in column.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(1, format!("missing required column {name:?}")))?;
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| row.get(column[i]).unwrap_or("");

        let subject_id = cell(0).to_string();
        if subject_id.is_empty() {
            return Err(err(line, "empty subject_id".into()));
        }
        let session: i64 = cell(1)
            .parse()
            .map_err(|_| err(line, format!("malformed session {:?}", cell(1))))?;
        if session < 1 || session > u32::MAX as i64 {
            return Err(err(line, "session out of range".into()));
        }
        let capture_date = NaiveDate::parse_from_str(cell(2), "%Y-%m-%d")
            .map_err(|_| err(line, format!("malformed date {:?}", cell(2))))?;
        let age_years = match cell(3) {
            "" => None,
            s => {
                let age: f64 = s
                    .parse()
                    .map_err(|_| err(line, format!("malformed age {s:?}")))?;
                if !(age >= 0.0 && age.is_finite()) {
                    return Err(err(line, format!("age out of range: {age}")));
                }
                Some(age)
            }
        };
        let sex = cell(4).parse().map_err(|m| err(line, m))?;
        let side = cell(5).parse().map_err(|m| err(line, m))?;
        let image_path = PathBuf::from(cell(6));
        let annotation_path = PathBuf::from(cell(7));
        if cell(6).is_empty() || cell(7).is_empty() {
            return Err(err(line, "empty image_path or annotation_path".into()));
        }
        if !seen.insert((subject_id.clone(), session, image_path.clone())) {
            return Err(err(
                line,
                format!(
                    "duplicate (subject_id, session, image_path): ({subject_id}, {session}, {})",
                    image_path.display()
                ),
            ));
        }
        records.push(ImageRecord {
            subject_id,
            session: session as u32,
            capture_date,
            age_years,
            sex,
            side,
            image_path,
            annotation_path,
        });
    }
    Ok(Manifest::new(records, root))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "subject_id,session,capture_date,age_years,sex,side,image_path,annotation_path\n";

    fn parse(text: &str) -> Result<Manifest> {
        parse_manifest_str(text, Path::new("m.csv"), PathBuf::from("."))
    }

    #[test]
    fn parses_rows_in_order() {
        let text = format!(
            "{HEADER}A,1,2021-09-01,6.5,F,L,img/a1.png,ann/a1.json\n\
             B,1,2021-09-02,,M,R,img/b1.png,ann/b1.json\n\
             A,3,2022-09-01,7.5,F,L,img/a3.png,ann/a3.json\n"
        );
        let m = parse(&text).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.max_session(), 3);
        assert_eq!(m.sessions(), vec![1, 3]);
        assert_eq!(m.records[1].age_years, None);
        assert_eq!(m.records[1].side, Side::R);
        assert_eq!(m.records[2].key(), "A/3/a3");
        assert_eq!(m.session_spacing_months, 6);
    }

    #[test]
    fn header_only_is_empty() {
        let m = parse(HEADER).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(m.validate().unwrap(), vec![ValidationWarning::Empty]);
    }

    #[test]
    fn session_zero_rejected() {
        let text = format!("{HEADER}A,0,2021-09-01,6.5,F,L,a.png,a.json\n");
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("session out of range"), "{e}");
    }

    #[test]
    fn missing_column_rejected() {
        let e = parse("subject_id,session\nA,1\n").unwrap_err().to_string();
        assert!(e.contains("missing required column"), "{e}");
    }

    #[test]
    fn malformed_date_rejected() {
        let text = format!("{HEADER}A,1,2021/09/01,6.5,F,L,a.png,a.json\n");
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("malformed date"), "{e}");
    }

    #[test]
    fn duplicate_rejected() {
        let text = format!(
            "{HEADER}A,1,2021-09-01,6.5,F,L,a.png,a.json\nA,1,2021-09-01,6.5,F,L,a.png,b.json\n"
        );
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("duplicate"), "{e}");
    }

    #[test]
    fn columns_may_be_reordered() {
        let text = "side,sex,age_years,capture_date,session,subject_id,annotation_path,image_path\n\
                    L,U,4,2020-01-01,2,X,x.json,x.png\n";
        let m = parse(text).unwrap();
        assert_eq!(m.records[0].subject_id, "X");
        assert_eq!(m.records[0].session, 2);
        assert_eq!(m.records[0].image_path, PathBuf::from("x.png"));
    }

    #[test]
    fn validate_reports_missing_files() {
        let text = format!("{HEADER}A,1,2021-09-01,6.5,F,L,nope.png,nope.json\n");
        let m = parse(&text).unwrap();
        assert!(m.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn record() -> impl Strategy<Value = ImageRecord> {
            (
                "[A-Za-z0-9_]{1,6}",
                1u32..12,
                0i64..4000,
                proptest::option::of(0u32..200),
                0usize..3,
                any::<bool>(),
                "[a-z0-9]{1,8}",
            )
                .prop_map(|(subject, session, day, age, sex, left, base)| ImageRecord {
                    subject_id: subject,
                    session,
                    capture_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()
                        + chrono::Duration::days(day),
                    age_years: age.map(|a| a as f64 / 10.0),
                    sex: [Sex::F, Sex::M, Sex::U][sex],
                    side: if left { Side::L } else { Side::R },
                    image_path: PathBuf::from(format!("images/{base}.png")),
                    annotation_path: PathBuf::from(format!("ann/{base}.json")),
                })
        }

        proptest! {
            #[test]
            fn csv_round_trip(records in proptest::collection::vec(record(), 0..20)) {
                let mut seen = HashSet::new();
                let records: Vec<_> = records
                    .into_iter()
                    .filter(|r| seen.insert((r.subject_id.clone(), r.session, r.image_path.clone())))
                    .collect();
                let m = Manifest::new(records, ".");
                let again = parse(&m.to_csv_string()).unwrap();
                prop_assert_eq!(again, m);
            }
        }
    }
}
