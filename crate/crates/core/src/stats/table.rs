//! The per-participant analysis table exchanged between session export and
//! the study analysis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::anova::TwoByTwo;
use super::StatsError;

pub const HEADER: [&str; 17] = [
    "pid",
    "pers",
    "bio",
    "sdnn_s2",
    "sdnn_s3",
    "res_s2",
    "res_s3",
    "rrs_s2",
    "rrs_s3",
    "stai_s2",
    "stai_s3",
    "fss",
    "relevance",
    "ipq_gp",
    "ipq_sp",
    "ipq_inv",
    "ipq_real",
];

fn ser_flag<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn de_flag<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let raw = String::deserialize(d)?;
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(serde::de::Error::custom(format!(
            "expected 0/1 flag, got {other:?}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub pid: String,
    #[serde(serialize_with = "ser_flag", deserialize_with = "de_flag")]
    pub pers: bool,
    #[serde(serialize_with = "ser_flag", deserialize_with = "de_flag")]
    pub bio: bool,
    pub sdnn_s2: f64,
    pub sdnn_s3: f64,
    pub res_s2: f64,
    pub res_s3: f64,
    pub rrs_s2: f64,
    pub rrs_s3: f64,
    pub stai_s2: f64,
    pub stai_s3: f64,
    pub fss: Option<f64>,
    pub relevance: Option<f64>,
    pub ipq_gp: Option<f64>,
    pub ipq_sp: Option<f64>,
    pub ipq_inv: Option<f64>,
    pub ipq_real: Option<f64>,
}

impl StudyRow {
    pub fn group(&self) -> Group {
        Group::from_flags(self.pers, self.bio)
    }

    /// (S2, S3) pair for a measure.
    pub fn pair(&self, m: Measure) -> (f64, f64) {
        match m {
            Measure::Sdnn => (self.sdnn_s2, self.sdnn_s3),
            Measure::Res => (self.res_s2, self.res_s3),
            Measure::Rrs => (self.rrs_s2, self.rrs_s3),
            Measure::Stai => (self.stai_s2, self.stai_s3),
        }
    }
}

/// One of the four cells of the 2x2 design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    PB,
    PN,
    NB,
    NN,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::PB, Group::PN, Group::NB, Group::NN];

    pub fn from_flags(pers: bool, bio: bool) -> Self {
        match (pers, bio) {
            (true, true) => Group::PB,
            (true, false) => Group::PN,
            (false, true) => Group::NB,
            (false, false) => Group::NN,
        }
    }

    pub fn personalization(self) -> bool {
        matches!(self, Group::PB | Group::PN)
    }

    pub fn biofeedback(self) -> bool {
        matches!(self, Group::PB | Group::NB)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Group::PB => "PB",
            Group::PN => "PN",
            Group::NB => "NB",
            Group::NN => "NN",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Measure {
    Sdnn,
    Res,
    Rrs,
    Stai,
}

/// How S3 is compared against S2 for the between-group tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    /// 100 * (S3 - S2) / S2
    Percent,
    /// S3 - S2, for questionnaire scores that can sit at zero.
    Absolute,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Sdnn, Measure::Res, Measure::Rrs, Measure::Stai];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Sdnn => "SDNN",
            Measure::Res => "RES",
            Measure::Rrs => "RRS",
            Measure::Stai => "STAI",
        }
    }

    pub fn change_kind(self) -> ChangeKind {
        match self {
            Measure::Sdnn | Measure::Res => ChangeKind::Percent,
            Measure::Rrs | Measure::Stai => ChangeKind::Absolute,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StatsError::Schema(format!("unknown measure {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn parse(text: &str) -> Result<Self, StatsError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| StatsError::Schema(e.to_string()))?
            .clone();
        let missing: Vec<&str> = HEADER
            .iter()
            .copied()
            .filter(|h| !headers.iter().any(|c| c == *h))
            .collect();
        if !missing.is_empty() {
            return Err(StatsError::Schema(format!(
                "missing column(s): {}",
                missing.join(", ")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<StudyRow>().enumerate() {
            let row = rec.map_err(|e| StatsError::Row {
                row: i + 1,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn rows_in(&self, g: Group) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(move |r| r.group() == g)
    }

    pub fn cell_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for r in &self.rows {
            c[r.group().index()] += 1;
        }
        c
    }

    /// Applies `f(s2, s3)` to every row and arranges the values by cell.
    pub fn cells_by<F>(&self, m: Measure, f: F) -> TwoByTwo
    where
        F: Fn(f64, f64) -> f64,
    {
        let col = |g| {
            self.rows_in(g)
                .map(|r| {
                    let (a, b) = r.pair(m);
                    f(a, b)
                })
                .collect()
        };
        TwoByTwo {
            pb: col(Group::PB),
            pn: col(Group::PN),
            nb: col(Group::NB),
            nn: col(Group::NN),
        }
    }
}
