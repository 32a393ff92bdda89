//! Property checks shared by the fuzz targets. Inputs the parser rejects
//! are ignored; an accepted input that breaks an invariant panics.

use asafeplace_core::biofeedback::BreathFrame;
use asafeplace_core::personalize::{
    extract_profile, parse_template, Lexicon, MarkerClient, Modality, SafePlaceProfile, Snippet,
};
use asafeplace_core::session::{LiveSession, RunConfig, SessionContext, SessionRecord};
use asafeplace_core::signal::{parse_replay, write_replay};
use asafeplace_core::stats::StudyTable;

pub type Check = fn(&[u8]);

/// Target name and check, in the order of `fuzz_targets/`.
pub const CHECKS: [(&str, Check); 9] = [
    ("replay", replay),
    ("template", template),
    ("frame_wire", frame_wire),
    ("study_csv", study_csv),
    ("record_json", record_json),
    ("context_json", context_json),
    ("profile_json", profile_json),
    ("transcript", transcript),
    ("lexicon_json", lexicon_json),
];

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn replay(data: &[u8]) {
    let Some(Ok(r)) = text(data).map(parse_replay) else {
        return;
    };
    let written = write_replay(r.header.as_ref(), &r.samples);
    let again = parse_replay(&written).expect("written replay parses");
    assert_eq!(write_replay(again.header.as_ref(), &again.samples), written);
}

pub fn template(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(t) = parse_template(s) {
        assert_eq!(t.serialize(), s);
    }
}

pub fn frame_wire(data: &[u8]) {
    let Some(Ok(f)) = text(data).map(BreathFrame::from_wire) else {
        return;
    };
    let wire = f.to_wire();
    let again = BreathFrame::from_wire(&wire).expect("own wire form parses");
    assert_eq!(again.to_wire(), wire);
}

pub fn study_csv(data: &[u8]) {
    let Some(Ok(t)) = text(data).map(StudyTable::parse) else {
        return;
    };
    let csv = t.to_csv();
    let again = StudyTable::parse(&csv).expect("own csv parses");
    assert_eq!(again.to_csv(), csv);
}

pub fn record_json(data: &[u8]) {
    let Some(Ok(r)) = text(data).map(SessionRecord::from_json) else {
        return;
    };
    let _ = r.validate();
    let json = r.to_json();
    let again = SessionRecord::from_json(&json).expect("own json parses");
    assert_eq!(again.to_json(), json);
}

pub fn context_json(data: &[u8]) {
    if let Ok(ctx) = serde_json::from_slice::<SessionContext>(data) {
        let _ = LiveSession::new(ctx, RunConfig::default(), 0);
    }
}

/// The input doubles as the transcript the profile is checked against.
pub fn profile_json(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(p) = serde_json::from_str::<SafePlaceProfile>(s) {
        let _ = p.id();
        let _ = p.check(s);
    }
}

pub fn transcript(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(p) = extract_profile(s, &MarkerClient) {
        p.check(s).expect("extracted profile is grounded");
    }
}

pub fn lexicon_json(data: &[u8]) {
    let Some(Ok(lex)) = text(data).map(Lexicon::from_json) else {
        return;
    };
    let s = Snippet::new(
        "s",
        "You see the sea. You hear the waves.",
        Modality::Visual,
        &lex,
    );
    let _ = lex.validate(&s);
}
