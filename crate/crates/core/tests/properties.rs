use proptest::prelude::*;

use asafeplace_core::biofeedback::{count_transitions, frame_stream, BreathPhase, MapConfig};
use asafeplace_core::metrics::{
    build_nn_series, detect_pulse_peaks, respiration_rate, sdnn, MetricsConfig,
};
use asafeplace_core::signal::{
    generate_synthetic, parse_replay, write_replay, Channel, SensorSample, SyntheticPhysioSpec,
};

fn spec(duration_s: f64) -> SyntheticPhysioSpec {
    SyntheticPhysioSpec {
        duration_s,
        ..Default::default()
    }
}

mod signal {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn replay_round_trip(
            steps in prop::collection::vec((0u64..50, any::<bool>(), -1e6f64..1e6), 1..200)
        ) {
            let mut last = [None::<u64>; 2];
            let mut t = 0;
            let mut samples = Vec::new();
            for (dt, ppg, v) in steps {
                t += dt;
                let (ch, i) = if ppg { (Channel::Ppg, 1) } else { (Channel::Breath, 0) };
                if last[i] == Some(t) {
                    continue;
                }
                last[i] = Some(t);
                samples.push(SensorSample::new(t, ch, v));
            }
            let text = write_replay(None, &samples);
            let back = parse_replay(&text).unwrap();
            prop_assert!(back.warnings.is_empty());
            prop_assert_eq!(&back.samples, &samples);
            prop_assert_eq!(write_replay(None, &back.samples), text);
        }

        #[test]
        fn generator_is_deterministic(seed in any::<u64>(), sd in 0.0f64..60.0) {
            let s = SyntheticPhysioSpec { nn_sd_ms: sd, noise_sd: 0.05, seed, ..spec(20.0) };
            prop_assert_eq!(generate_synthetic(&s).unwrap(), generate_synthetic(&s).unwrap());
        }

        #[test]
        fn constant_rate_mean_nn(hr in 40.0f64..150.0, seed in any::<u64>()) {
            let s = SyntheticPhysioSpec { heart_rate_bpm: hr, seed, ..spec(60.0) };
            let rec = generate_synthetic(&s).unwrap();
            let nn = &rec.truth.nn_intervals_ms;
            prop_assert_eq!(nn.len() + 1, rec.truth.beat_times_ms.len());
            let mean = nn.iter().sum::<f64>() / nn.len() as f64;
            prop_assert!((mean - 60_000.0 / hr).abs() < 1.0);
        }

        #[test]
        fn detected_peaks_match_truth(
            hr in 45.0f64..110.0,
            sd in 0.0f64..40.0,
            seed in any::<u64>(),
        ) {
            let s = SyntheticPhysioSpec { heart_rate_bpm: hr, nn_sd_ms: sd, seed, ..spec(60.0) };
            let rec = generate_synthetic(&s).unwrap();
            let peaks = detect_pulse_peaks(&rec.samples, &MetricsConfig::default()).unwrap();
            prop_assert_eq!(peaks.peaks_ms.len(), rec.truth.beat_times_ms.len());
        }
    }
}

mod metrics {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sdnn_nonnegative_and_shift_invariant(
            gaps in prop::collection::vec(300.0f64..2000.0, 1..60),
            shift in 0.0f64..1e7,
        ) {
            let mut peaks = vec![0.0];
            for g in &gaps {
                peaks.push(peaks.last().unwrap() + g);
            }
            let cfg = MetricsConfig::default();
            let a = sdnn(&build_nn_series(&peaks, &cfg).unwrap());
            let moved: Vec<f64> = peaks.iter().map(|p| p + shift).collect();
            let b = sdnn(&build_nn_series(&moved, &cfg).unwrap());
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        }

        #[test]
        fn one_artifact_one_rejection(
            gaps in prop::collection::vec((300u32..=2000).prop_map(f64::from), 1..40),
            bad in prop_oneof![1u32..300, 2001u32..5000].prop_map(f64::from),
            at in any::<prop::sample::Index>(),
        ) {
            let cfg = MetricsConfig::default();
            let to_peaks = |g: &[f64]| {
                let mut p = vec![0.0];
                for x in g {
                    p.push(p.last().unwrap() + x);
                }
                p
            };
            let base = build_nn_series(&to_peaks(&gaps), &cfg).unwrap();
            let mut with_bad = gaps.clone();
            with_bad.insert(at.index(gaps.len() + 1), bad);
            let after = build_nn_series(&to_peaks(&with_bad), &cfg).unwrap();
            prop_assert_eq!(after.rejected_count, base.rejected_count + 1);
            prop_assert_eq!(after.intervals_ms, base.intervals_ms);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn respiration_rate_tracks_frequency(f in 0.05f64..0.6, seed in any::<u64>()) {
            let s = SyntheticPhysioSpec { breath_freq_hz: f, seed, ..spec(120.0) };
            let rec = generate_synthetic(&s).unwrap();
            let r = respiration_rate(&rec.samples, &MetricsConfig::default()).unwrap();
            prop_assert!((r.cpm - 60.0 * f).abs() <= 0.5, "{} vs {}", r.cpm, 60.0 * f);
        }

        #[test]
        fn nn_recovery_within_five_percent(sd in 10.0f64..100.0, seed in any::<u64>()) {
            let s = SyntheticPhysioSpec { nn_sd_ms: sd, seed, ..spec(120.0) };
            let rec = generate_synthetic(&s).unwrap();
            let cfg = MetricsConfig::default();
            let peaks = detect_pulse_peaks(&rec.samples, &cfg).unwrap();
            let got = sdnn(&build_nn_series(&peaks.peaks_ms, &cfg).unwrap());
            let truth = asafeplace_core::metrics::NnSeries {
                intervals_ms: rec.truth.nn_intervals_ms.clone(),
                rejected_count: 0,
            };
            let want = sdnn(&truth);
            prop_assert!((got - want).abs() <= 0.05 * want, "{got} vs {want}");
        }
    }
}

mod biofeedback {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sign_law_and_bounds(
            f in 0.05f64..0.8,
            amp in 0.01f64..100.0,
            noise in 0.0f64..0.3,
            seed in any::<u64>(),
        ) {
            let s = SyntheticPhysioSpec {
                breath_freq_hz: f,
                breath_amp: amp,
                noise_sd: noise * amp,
                seed,
                ..spec(60.0)
            };
            let rec = generate_synthetic(&s).unwrap();
            let cfg = MapConfig::default();
            let frames = frame_stream(&rec.samples, &cfg).unwrap();
            prop_assert!(!frames.is_empty());
            for fr in &frames {
                prop_assert!(fr.b.is_finite() && fr.radial_gain.is_finite());
                prop_assert!((0.0..=1.0).contains(&fr.b));
                prop_assert!(fr.radial_gain.abs() <= 1.0);
                if fr.db_dt.abs() > cfg.hold_band {
                    prop_assert_eq!(fr.radial_gain.signum(), -fr.db_dt.signum());
                }
                prop_assert!(fr.check().is_ok());
            }
        }

        #[test]
        fn transitions_match_respiration_rate(f in 0.1f64..0.5, seed in any::<u64>()) {
            let s = SyntheticPhysioSpec { breath_freq_hz: f, seed, ..spec(120.0) };
            let rec = generate_synthetic(&s).unwrap();
            let cfg = MapConfig::default();
            let frames = frame_stream(&rec.samples, &cfg).unwrap();
            let live: Vec<_> = frames.into_iter().filter(|f| !f.warming).collect();
            let minutes = (live.last().unwrap().t - live[0].t) as f64 / 60_000.0;
            let per_min =
                count_transitions(&live, BreathPhase::Inhale, BreathPhase::Exhale) as f64 / minutes;
            let r = respiration_rate(&rec.samples, &MetricsConfig::default()).unwrap();
            prop_assert!((per_min - r.cpm).abs() <= 1.0, "{per_min} vs {}", r.cpm);
        }
    }
}

mod personalize {
    use super::*;
    use asafeplace_core::personalize::{
        fill_template, parse_template, FillOptions, Lexicon, MarkerClient, Modality,
        PersonalizeError, PlaceholderKind, Snippet, DEFAULT_TEMPLATE,
    };

    const SLOTS: [&str; 8] = [
        "{the name of the safe island}",
        "{The name of the safe island}",
        "{Meditation snippet related to visual details.}",
        "{Meditation snippet related to tactile details.}",
        "{Meditation snippet related to auditory details.}",
        "{Meditation snippet related to olfactory details.}",
        "{Choose another snippet.}",
        "{choose another snippet}",
    ];

    fn template_text() -> impl Strategy<Value = String> {
        let literal = "[a-zA-Z .,;\n\t]{0,40}";
        prop::collection::vec((literal, 0..SLOTS.len()), 1..12).prop_map(|parts| {
            parts
                .into_iter()
                .map(|(lit, i)| format!("{lit}{}", SLOTS[i]))
                .collect::<String>()
        })
    }

    fn modality() -> impl Strategy<Value = Modality> {
        prop::sample::select(vec![
            Modality::Visual,
            Modality::Tactile,
            Modality::Auditory,
            Modality::Olfactory,
            Modality::Memory,
            Modality::Activity,
        ])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn template_round_trip(text in template_text()) {
            let t = parse_template(&text).unwrap();
            prop_assert_eq!(t.serialize(), text.clone());
            prop_assert_eq!(parse_template(&t.serialize()).unwrap(), t);
        }

        #[test]
        fn fill_is_total_and_deterministic(
            text in template_text(),
            mods in prop::collection::vec(modality(), 0..12),
        ) {
            let t = parse_template(&text).unwrap();
            let lex = Lexicon::default();
            let snippets: Vec<Snippet> = mods
                .iter()
                .enumerate()
                .map(|(i, m)| Snippet::new(format!("s{i}"), format!("Snippet number {i}."), *m, &lex))
                .collect();
            let opts = FillOptions::default();
            match fill_template(&t, "Quiet Grove", &snippets, &opts) {
                Ok(script) => {
                    prop_assert!(!script.has_placeholders());
                    let again = fill_template(&t, "Quiet Grove", &snippets, &opts).unwrap();
                    prop_assert_eq!(script.text, again.text);
                }
                Err(PersonalizeError::UnfilledModality(m)) => {
                    prop_assert!(m.is_sensory());
                    let have = mods.iter().filter(|x| **x == m).count();
                    prop_assert!(have < t.count(PlaceholderKind::Snippet(m)));
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn accepted_profiles_are_grounded(
            words in prop::collection::vec("[a-z]{3,8}( [a-z]{3,8}){0,2}", 1..6),
            pad in "[A-Za-z ,.]{0,30}",
        ) {
            let tags = ["visual", "tactile", "auditory", "olfactory", "memory"];
            let mut transcript = format!("Visitor: {pad} [place: Home].");
            for (i, w) in words.iter().enumerate() {
                transcript.push_str(&format!(" I notice [{}: {w}] {pad}.", tags[i % tags.len()]));
            }
            let p = asafeplace_core::personalize::extract_profile(&transcript, &MarkerClient).unwrap();
            let hay = transcript.to_lowercase();
            for s in p.senses.values().flatten().chain(&p.memories) {
                prop_assert!(hay.contains(&s.to_lowercase()));
            }
        }
    }

    #[test]
    fn bundled_template_round_trips() {
        assert_eq!(
            parse_template(DEFAULT_TEMPLATE).unwrap().serialize(),
            DEFAULT_TEMPLATE
        );
    }
}

mod session {
    use super::*;
    use asafeplace_core::session::cohort::synthetic_context;
    use asafeplace_core::session::{
        Action, Condition, LiveSession, Phase, PhaseName, PhasePlan, RunConfig, SessionMachine,
    };

    fn action() -> impl Strategy<Value = Action> {
        prop::sample::select(Action::ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn machine_follows_transition_table(actions in prop::collection::vec(action(), 0..12)) {
            let mut m = SessionMachine::default();
            for a in actions {
                let before = m.phase();
                match (SessionMachine::next(before, a), m.apply(a)) {
                    (Some(to), Ok(got)) => prop_assert_eq!(to, got),
                    (None, Err(_)) => prop_assert_eq!(m.phase(), before),
                    other => prop_assert!(false, "{other:?}"),
                }
            }
        }

        #[test]
        fn timeline_partitions_for_any_operator_script(
            steps in prop::collection::vec((action(), 0u64..5_000), 0..10),
            cond in 0usize..4,
        ) {
            let condition = Condition::ALL[cond];
            let plan = PhasePlan { baseline_s: 3.0, stress_s: 3.0, relax_s: 3.0 };
            let ctx = synthetic_context("p01", condition, plan, 1, None).unwrap();
            let mut live = LiveSession::new(ctx, RunConfig::default(), 1_000).unwrap();
            let mut t = 1_000;
            for (a, dt) in steps {
                t += dt;
                let _ = match a {
                    Action::Start => live.start(t).map(|_| Vec::new()),
                    Action::Advance => live.advance(t),
                    Action::Abort => live.abort(t, "operator"),
                };
            }
            let rec = live.record();
            let mut prev = rec.created_ms;
            for p in PhaseName::ALL {
                if let Some(b) = rec.phases.get(&p) {
                    prop_assert!(b.start_ms >= prev && b.start_ms < b.end_ms);
                    prev = b.end_ms;
                }
            }
            let last = rec.phases.values().map(|b| b.end_ms).max().unwrap_or(rec.created_ms);
            for w in rec.events.windows(2) {
                prop_assert!(w[0].t <= w[1].t);
            }
            for e in &rec.events {
                prop_assert!(e.t >= rec.created_ms && e.t <= last.max(live.now()));
            }
            if !condition.biofeedback {
                prop_assert_eq!(rec.frame_count(), 0);
            }
            let violations = rec.validate();
            if live.phase() == Phase::Done {
                prop_assert!(violations.iter().all(|v| v.contains("metrics")), "{violations:?}");
            } else {
                prop_assert!(!violations.is_empty());
            }
        }
    }
}

mod stats {
    use super::*;
    use asafeplace_core::stats::anova::two_sample_t;
    use asafeplace_core::stats::dist::{f_cdf, t_cdf};
    use asafeplace_core::stats::{
        anova_oneway, anova_twoway_2x2, kruskal_wallis, paired_t, wilcoxon_signed_rank,
        wilcoxon_with, PairedSample, TwoByTwo, WilcoxonMethod,
    };

    /// Two-sided exact p by enumerating all sign assignments.
    fn brute_wilcoxon(d: &[f64]) -> f64 {
        let mut nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
        nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let n = nz.len();
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
                j += 1;
            }
            for r in ranks.iter_mut().take(j + 1).skip(i) {
                *r = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        let w_plus: f64 = nz
            .iter()
            .zip(&ranks)
            .filter(|(x, _)| **x > 0.0)
            .map(|(_, r)| r)
            .sum();
        let total: f64 = ranks.iter().sum();
        let observed = w_plus.min(total - w_plus);
        let mut le = 0u64;
        let mut ge = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n)
                .filter(|k| mask >> k & 1 == 1)
                .map(|k| ranks[k])
                .sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= total - observed - 1e-9 {
                ge += 1;
            }
        }
        let m = (1u64 << n) as f64;
        (2.0 * (le.min(ge) as f64) / m).min(1.0)
    }

    fn cells() -> impl Strategy<Value = TwoByTwo> {
        (2usize..12).prop_flat_map(|n| {
            let c = || prop::collection::vec(-100.0f64..100.0, n);
            (c(), c(), c(), c()).prop_map(|(pb, pn, nb, nn)| TwoByTwo { pb, pn, nb, nn })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn wilcoxon_exact_matches_enumeration(
            d in prop::collection::vec(prop_oneof![(-8i32..=8).prop_map(f64::from), -50.0f64..50.0], 1..=12)
        ) {
            prop_assume!(d.iter().any(|x| *x != 0.0));
            let s = PairedSample::from_differences(&d);
            prop_assume!(s.is_ok());
            let r = wilcoxon_with(&s.unwrap(), WilcoxonMethod::Exact).unwrap();
            prop_assert!((r.p - brute_wilcoxon(&d)).abs() < 1e-12);
        }

        #[test]
        fn two_way_decomposition_closes(c in cells()) {
            let r = anova_twoway_2x2(&c);
            prop_assume!(r.is_ok());
            let r = r.unwrap();
            let sum = r.ss.a + r.ss.b + r.ss.ab + r.ss.within;
            prop_assert!((sum - r.ss.total).abs() <= 1e-9 * r.ss.total.abs().max(1e-300));
        }

        #[test]
        fn f_equals_t_squared(
            x in prop::collection::vec(-50.0f64..50.0, 2..20),
            y in prop::collection::vec(-50.0f64..50.0, 2..20),
        ) {
            let (Ok(a), Ok(t)) = (anova_oneway(&[x.clone(), y.clone()]), two_sample_t(&x, &y)) else {
                return Ok(());
            };
            let t2 = t.statistic * t.statistic;
            prop_assert!((a.test.statistic - t2).abs() <= 1e-9 * t2.max(1e-12));
            prop_assert!((a.test.p - t.p).abs() <= 1e-9);
        }

        #[test]
        fn p_values_in_unit_interval(
            a in prop::collection::vec(-50.0f64..50.0, 3..30),
            b in prop::collection::vec(-50.0f64..50.0, 3..30),
            c in prop::collection::vec(-50.0f64..50.0, 3..30),
        ) {
            let mut ps = Vec::new();
            let n = a.len().min(b.len());
            if let Ok(s) = PairedSample::new(a[..n].to_vec(), b[..n].to_vec()) {
                ps.extend(paired_t(&s).ok().map(|r| (r.p, r.statistic)));
                ps.extend(wilcoxon_signed_rank(&s).ok().map(|r| (r.p, r.statistic)));
            }
            let groups = [a.clone(), b.clone(), c.clone()];
            ps.extend(anova_oneway(&groups).ok().map(|r| (r.test.p, r.test.statistic)));
            ps.extend(kruskal_wallis(&groups).ok().map(|r| (r.p, r.statistic)));
            for (p, stat) in ps {
                prop_assert!(p > 0.0 && p <= 1.0);
                prop_assert!(stat.is_finite());
            }
        }

        #[test]
        fn cdf_shapes(df in 0.5f64..200.0, d1 in 0.5f64..50.0, x in 0.0f64..20.0, dx in 0.0f64..5.0) {
            prop_assert!((t_cdf(0.0, df) - 0.5).abs() < 1e-15);
            prop_assert!(f_cdf(x + dx, d1, df) >= f_cdf(x, d1, df));
        }
    }
}
