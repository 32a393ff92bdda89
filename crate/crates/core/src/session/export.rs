use std::collections::BTreeMap;

use super::record::{PhaseName, ScoreKey, SessionRecord};
use super::SessionError;
use crate::stats::table::{StudyRow, StudyTable};

#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub table: StudyTable,
    pub csv: String,
    /// Record ids left out, each with the reason.
    pub skipped: Vec<(String, String)>,
}

impl Export {
    pub fn warning(&self) -> Option<String> {
        if self.skipped.is_empty() {
            return None;
        }
        let ids: Vec<&str> = self.skipped.iter().map(|(id, _)| id.as_str()).collect();
        Some(format!("skipped invalid records: {}", ids.join(", ")))
    }
}

fn row_of(r: &SessionRecord) -> Result<StudyRow, String> {
    let violations = r.validate();
    if !violations.is_empty() {
        return Err(violations.join("; "));
    }
    let missing: Vec<&str> = ScoreKey::REQUIRED
        .iter()
        .filter(|k| !r.scores.contains_key(k))
        .map(|k| k.name())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing scores {}", missing.join(", ")));
    }
    let m = |p: PhaseName| &r.metrics[&p];
    let s = |k: ScoreKey| r.scores.get(&k).copied();
    Ok(StudyRow {
        pid: r.participant.clone(),
        pers: r.condition.personalization,
        bio: r.condition.biofeedback,
        sdnn_s2: m(PhaseName::S2).sdnn_ms,
        sdnn_s3: m(PhaseName::S3).sdnn_ms,
        res_s2: m(PhaseName::S2).resp_rate_cpm,
        res_s3: m(PhaseName::S3).resp_rate_cpm,
        rrs_s2: s(ScoreKey::RrsS2).unwrap_or_default(),
        rrs_s3: s(ScoreKey::RrsS3).unwrap_or_default(),
        stai_s2: s(ScoreKey::StaiS2).unwrap_or_default(),
        stai_s3: s(ScoreKey::StaiS3).unwrap_or_default(),
        fss: s(ScoreKey::Fss),
        relevance: s(ScoreKey::Relevance),
        ipq_gp: s(ScoreKey::IpqGp),
        ipq_sp: s(ScoreKey::IpqSp),
        ipq_inv: s(ScoreKey::IpqInv),
        ipq_real: s(ScoreKey::IpqReal),
    })
}

/// One analysis row per participant, sorted by participant tag. Invalid
/// records and repeat participants are skipped and reported.
pub fn export_dataset<'a>(
    records: impl IntoIterator<Item = &'a SessionRecord>,
) -> Result<Export, SessionError> {
    let mut sorted: Vec<&SessionRecord> = records.into_iter().collect();
    sorted.sort_by(|a, b| (&a.participant, &a.id).cmp(&(&b.participant, &b.id)));

    let mut rows: BTreeMap<String, StudyRow> = BTreeMap::new();
    let mut skipped = Vec::new();
    for r in sorted {
        match row_of(r) {
            Ok(_) if rows.contains_key(&r.participant) => skipped.push((
                r.id.clone(),
                format!("participant {} already exported", r.participant),
            )),
            Ok(row) => {
                rows.insert(r.participant.clone(), row);
            }
            Err(why) => skipped.push((r.id.clone(), why)),
        }
    }
    if rows.is_empty() {
        return Err(SessionError::Empty);
    }
    let table = StudyTable {
        rows: rows.into_values().collect(),
    };
    let csv = table.to_csv();
    Ok(Export {
        table,
        csv,
        skipped,
    })
}
