//! Seeded synthetic participants: stressed S2 and relaxed S3 physiology,
//! questionnaire scores from the study fixture, and personalization assets
//! for the personalized cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::live::{run_session, NullSink, RunConfig, SessionContext, DAY_MS};
use super::record::{AssetSource, Assets, PhaseName, ScoreKey, SessionRecord};
use super::{assign_condition, Condition, PhasePlan, SessionError};
use crate::personalize::{
    extract_profile, fill_template, parse_template, FillOptions, MarkerClient,
    MockGenerationClient, DEFAULT_TEMPLATE,
};
use crate::signal::{
    generate_segments, parse_replay, SensorSample, SyntheticPhysioSpec, SyntheticRecording,
    VecSource,
};
use crate::stats::fixture::generate_study;
use crate::stats::table::{Group, StudyRow};

/// Unix time of the personalization visits in generated contexts.
pub const VISIT_AT_MS: u64 = 1_700_000_000_000;

/// One synthetic segment per phase of `plan`, with stress in S2 and relaxation in S3.
pub fn synthetic_physio(plan: &PhasePlan, seed: u64) -> Result<SyntheticRecording, SessionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |x: f64| x * rng.random_range(0.9..1.1);
    let mut spec = |p: PhaseName, breath: f64, hr: f64, nn_sd: f64, k: u64| SyntheticPhysioSpec {
        duration_s: plan.duration_ms(p) as f64 / 1000.0,
        breath_freq_hz: jitter(breath),
        breath_amp: 1.0,
        heart_rate_bpm: jitter(hr),
        nn_sd_ms: jitter(nn_sd),
        noise_sd: 0.02,
        seed: seed.wrapping_mul(3).wrapping_add(k),
    };
    let specs = [
        spec(PhaseName::S1, 0.22, 72.0, 40.0, 0),
        spec(PhaseName::S2, 0.30, 86.0, 25.0, 1),
        spec(PhaseName::S3, 0.12, 66.0, 55.0, 2),
    ];
    Ok(generate_segments(&specs)?)
}

const TRANSCRIPTS: [&str; 3] = [
    "Visitor: My place is [place: Quiet Grove]. A [element: bamboo grove; tall, green] and \
     [visual: golden evening light]. I feel [tactile: cool moss underfoot], I hear \
     [auditory: wind in the leaves] and smell [olfactory: osmanthus blossoms]. \
     I remember [memory: reading there with my grandmother]. I want to [activity: sit and listen].",
    "Visitor: I call it [place: Blue Cove]. There is a [element: wooden pier; old, warm] and \
     [visual: clear turquoise water]. I feel [tactile: warm sand], I hear \
     [auditory: gulls far away] and smell [olfactory: salt air]. \
     I remember [memory: swimming with my brother]. I want to [activity: float on my back].",
    "Visitor: It is [place: Snow Cabin]. A [element: stone fireplace; wide] and \
     [visual: snow on the pines]. I feel [tactile: a heavy wool blanket], I hear \
     [auditory: the fire crackling] and smell [olfactory: pine smoke]. \
     I remember [memory: baking bread with my father]. I want to [activity: drink tea by the window].",
];

fn scores_from(row: &StudyRow) -> [(ScoreKey, Option<f64>); 10] {
    [
        (ScoreKey::RrsS2, Some(row.rrs_s2)),
        (ScoreKey::RrsS3, Some(row.rrs_s3)),
        (ScoreKey::StaiS2, Some(row.stai_s2)),
        (ScoreKey::StaiS3, Some(row.stai_s3)),
        (ScoreKey::Fss, row.fss),
        (ScoreKey::Relevance, row.relevance),
        (ScoreKey::IpqGp, row.ipq_gp),
        (ScoreKey::IpqSp, row.ipq_sp),
        (ScoreKey::IpqInv, row.ipq_inv),
        (ScoreKey::IpqReal, row.ipq_real),
    ]
}

/// A ready-to-run context. Personalized conditions get an approved script
/// filled from a transcript profile, with the visit a day and an hour earlier.
pub fn synthetic_context(
    participant: &str,
    condition: Condition,
    plan: PhasePlan,
    seed: u64,
    scores: Option<&StudyRow>,
) -> Result<SessionContext, SessionError> {
    let mut ctx = SessionContext::new(participant, condition);
    ctx.plan = plan;
    ctx.seed = seed;
    if let Some(row) = scores {
        ctx.scores = scores_from(row)
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect();
    }
    if condition.personalization {
        let transcript = TRANSCRIPTS[(seed % TRANSCRIPTS.len() as u64) as usize];
        let personalize =
            |e: crate::personalize::PersonalizeError| SessionError::Config(e.to_string());
        let profile = extract_profile(transcript, &MarkerClient).map_err(personalize)?;
        let template = parse_template(DEFAULT_TEMPLATE).map_err(personalize)?;
        let snippets = MockGenerationClient::snippets_for(&profile);
        let mut script = fill_template(
            &template,
            &profile.place_name,
            &snippets,
            &FillOptions::default(),
        )
        .map_err(personalize)?;
        let profile_id = profile.id();
        script.profile_id = Some(profile_id.clone());
        script.approve();
        let dir = format!("profiles/{profile_id}");
        ctx.assets = Assets {
            source: AssetSource::Profile { profile_id },
            script: Some(format!("{dir}/script.txt")),
            panorama: Some(format!("{dir}/panorama.png")),
            audio: Some(format!("{dir}/audio.wav")),
        };
        ctx.script = Some(script);
        ctx.personalized_at_ms = Some(VISIT_AT_MS);
        ctx.session_at_ms = Some(VISIT_AT_MS + DAY_MS + 3_600_000);
    }
    Ok(ctx)
}

/// Assigns `4 * n_per_cell` participants with [`assign_condition`], gives each
/// the scores of the next study-fixture row of their cell, and runs their
/// sessions on synthetic physiology.
pub fn synthetic_cohort(
    seed: u64,
    n_per_cell: usize,
    plan: PhasePlan,
    cfg: &RunConfig,
) -> Result<Vec<SessionRecord>, SessionError> {
    if n_per_cell < 3 {
        return Err(SessionError::Config(format!(
            "cohort needs at least 3 participants per cell, got {n_per_cell}"
        )));
    }
    let table = generate_study(seed, n_per_cell);
    let mut next_row = [0usize; 4];
    let mut counts = [0usize; 4];
    let mut out = Vec::with_capacity(4 * n_per_cell);
    for i in 0..4 * n_per_cell {
        let participant_seed = seed.wrapping_mul(1000).wrapping_add(i as u64);
        let condition = assign_condition(participant_seed, counts);
        let g: Group = condition.group();
        counts[g.index()] += 1;
        let row = table
            .rows_in(g)
            .nth(next_row[g.index()])
            .expect("fixture has n_per_cell rows per cell");
        next_row[g.index()] += 1;
        let pid = format!("p{:02}", i + 1);
        let ctx = synthetic_context(&pid, condition, plan, participant_seed, Some(row))?;
        let physio = synthetic_physio(&plan, participant_seed)?;
        let mut src = VecSource::new(physio.samples);
        out.push(run_session(ctx, &mut src, cfg, &mut NullSink, None)?);
    }
    Ok(out)
}

/// Shortened plan used by the bundled fixtures.
pub const FIXTURE_PLAN: PhasePlan = PhasePlan {
    baseline_s: 30.0,
    stress_s: 45.0,
    relax_s: 45.0,
};

pub const FIXTURE_SEED: u64 = 2024;

/// Inputs of the bundled PB session, regenerated from seeds. Sample values
/// are rounded to four decimals as in the bundled replay.
pub fn pb_fixture_inputs() -> Result<(SessionContext, Vec<SensorSample>), SessionError> {
    let table = generate_study(0, 13);
    let row = table
        .rows_in(Group::PB)
        .next()
        .expect("fixture has PB rows");
    let ctx = synthetic_context("pb01", Condition::PB, FIXTURE_PLAN, FIXTURE_SEED, Some(row))?;
    let samples = synthetic_physio(&FIXTURE_PLAN, FIXTURE_SEED)?
        .samples
        .into_iter()
        .map(|s| SensorSample::new(s.t, s.channel, (s.value * 1e4).round() / 1e4))
        .collect();
    Ok((ctx, samples))
}

pub const BUNDLED_PB_CONTEXT: &str = include_str!("../../fixtures/session/pb_context.json");
pub const BUNDLED_PB_REPLAY: &str = include_str!("../../fixtures/session/pb_replay.jsonl");
/// Analysis table generated with study seed 0, 13 participants per cell.
pub const BUNDLED_STUDY_CSV: &str = include_str!("../../fixtures/session/study_seed0.csv");

/// The bundled PB session as shipped.
pub fn bundled_pb_session() -> Result<(SessionContext, Vec<SensorSample>), SessionError> {
    let ctx: SessionContext = serde_json::from_str(BUNDLED_PB_CONTEXT)?;
    let replay = parse_replay(BUNDLED_PB_REPLAY)?;
    Ok((ctx, replay.samples))
}


#[cfg(test)]
mod bundled {
    use super::*;
    use crate::stats::table::StudyTable;

    #[test]
    fn bundled_pb_matches_generator() {
        let (ctx, samples) = bundled_pb_session().unwrap();
        let (gen_ctx, gen_samples) = pb_fixture_inputs().unwrap();
        assert_eq!(ctx, gen_ctx);
        assert_eq!(samples.len(), gen_samples.len());
        for (a, b) in samples.iter().zip(&gen_samples) {
            assert_eq!((a.t, a.channel), (b.t, b.channel));
            assert!((a.value - b.value).abs() <= 1e-4);
        }
    }

    #[test]
    fn bundled_study_matches_generator() {
        let bundled = StudyTable::parse(BUNDLED_STUDY_CSV).unwrap();
        let fresh = generate_study(0, 13);
        assert_eq!(bundled.rows.len(), 52);
        for (a, b) in bundled.rows.iter().zip(&fresh.rows) {
            assert_eq!(a.pid, b.pid);
            assert!((a.sdnn_s3 - b.sdnn_s3).abs() <= 1e-9 * b.sdnn_s3.abs().max(1.0));
            assert!((a.res_s3 - b.res_s3).abs() <= 1e-9 * b.res_s3.abs().max(1.0));
        }
    }
}
