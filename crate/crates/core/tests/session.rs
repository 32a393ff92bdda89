use asafeplace_core::session::cohort::{
    bundled_pb_session, synthetic_cohort, synthetic_context, synthetic_physio, FIXTURE_PLAN,
};
use asafeplace_core::session::{
    export_dataset, run_session, Condition, NullSink, RecordStatus, RecordStore, RunConfig,
    SessionError, SessionRecord,
};
use asafeplace_core::signal::VecSource;
use asafeplace_core::stats::table::StudyTable;

fn run_bundled(store: Option<&RecordStore>) -> SessionRecord {
    let (ctx, samples) = bundled_pb_session().unwrap();
    run_session(
        ctx,
        &mut VecSource::new(samples),
        &RunConfig::default(),
        &mut NullSink,
        store,
    )
    .unwrap()
}

fn nn_record(pid: &str, seed: u64) -> SessionRecord {
    let ctx = synthetic_context(pid, Condition::NN, FIXTURE_PLAN, seed, None).unwrap();
    let samples = synthetic_physio(&FIXTURE_PLAN, seed).unwrap().samples;
    let mut ctx = ctx;
    ctx.scores = [
        ("RRS_S2", 3.0),
        ("RRS_S3", 5.0),
        ("STAI_S2", 50.0),
        ("STAI_S3", 40.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.parse().unwrap(), v))
    .collect();
    run_session(
        ctx,
        &mut VecSource::new(samples),
        &RunConfig::default(),
        &mut NullSink,
        None,
    )
    .unwrap()
}

#[test]
fn bundled_pb_session_is_valid() {
    let rec = run_bundled(None);
    assert_eq!(rec.status, RecordStatus::Complete);
    assert!(rec.validate().is_empty(), "{:?}", rec.validate());
    assert_eq!(rec.frame_count(), 45 * 30);
}

#[test]
fn bundled_replay_twice_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = RecordStore::open(dir_a.path()).unwrap();
    let b = RecordStore::open(dir_b.path()).unwrap();
    let ra = run_bundled(Some(&a));
    let rb = run_bundled(Some(&b));
    let fa = std::fs::read(a.path_of(&ra.id)).unwrap();
    let fb = std::fs::read(b.path_of(&rb.id)).unwrap();
    assert_eq!(fa, fb);
    let ea = export_dataset([&ra]).unwrap().csv;
    let eb = export_dataset([&rb]).unwrap().csv;
    assert_eq!(ea, eb);
}

#[test]
fn store_round_trip_and_validation_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    let rec = run_bundled(Some(&store));
    assert_eq!(store.load_valid(&rec.id).unwrap(), rec);

    // a record edited to carry frames under a non-biofeedback condition
    let mut bad = rec.clone();
    bad.id = "tampered".into();
    bad.condition = Condition::PN;
    store.save(&bad).unwrap();
    assert!(matches!(
        store.load_valid("tampered"),
        Err(SessionError::Invalid { .. })
    ));
    assert!(matches!(store.load("nope"), Err(SessionError::NotFound(_))));
}

#[test]
fn interrupted_save_never_loads_as_valid() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    let rec = run_bundled(None);
    let json = rec.to_json();
    // a temp file left behind by a crash is not listed
    std::fs::write(dir.path().join(format!(".{}.json.tmp", rec.id)), &json).unwrap();
    // a torn final file fails to parse
    std::fs::write(store.path_of("torn"), &json[..json.len() / 2]).unwrap();
    let (records, warnings) = store.list().unwrap();
    assert!(records.is_empty());
    assert_eq!(warnings.len(), 1);
    assert!(store.load_valid("torn").is_err());
}

#[test]
fn in_progress_snapshot_is_invalid() {
    let mut rec = run_bundled(None);
    rec.status = RecordStatus::InProgress;
    assert!(!rec.is_valid());
}

#[test]
fn export_skips_invalid_and_rejects_empty() {
    assert!(matches!(
        export_dataset(std::iter::empty::<&SessionRecord>()),
        Err(SessionError::Empty)
    ));
    let good = nn_record("p02", 11);
    let mut aborted = nn_record("p03", 12);
    aborted.status = RecordStatus::Aborted;
    let ex = export_dataset([&good, &aborted]).unwrap();
    assert_eq!(ex.table.rows.len(), 1);
    assert_eq!(ex.skipped.len(), 1);
    assert!(ex.warning().unwrap().contains(&aborted.id));
    assert!(matches!(
        export_dataset([&aborted]),
        Err(SessionError::Empty)
    ));
}

#[test]
fn export_needs_questionnaire_scores() {
    let mut r = nn_record("p04", 13);
    r.scores.clear();
    assert!(matches!(export_dataset([&r]), Err(SessionError::Empty)));
}

#[test]
fn fifty_two_records_export_to_four_cells_of_thirteen() {
    let records = synthetic_cohort(3, 13, FIXTURE_PLAN, &RunConfig::default()).unwrap();
    assert_eq!(records.len(), 52);
    let ex = export_dataset(&records).unwrap();
    assert!(ex.skipped.is_empty(), "{:?}", ex.skipped);
    assert_eq!(ex.csv.lines().count(), 53);
    let table = StudyTable::parse(&ex.csv).unwrap();
    assert_eq!(table.cell_counts(), [13; 4]);
    let again = export_dataset(records.iter().rev()).unwrap();
    assert_eq!(again.csv, ex.csv);
}
