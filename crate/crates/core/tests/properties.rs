//! Property checks over randomly generated datasets and oracle tables.

use pstrat_core::basic::{cace_iv, itt_effect, naive_completers};
use pstrat_core::covariate::{fit_principal_scores_em, no_mono_weighted, NoMonoVariant};
use pstrat_core::data::{
    read_csv, summarize_arms, write_csv_to, Arm, ColumnMapping, EventCoding, Monotonicity, OutcomeDirection,
    StrataLabel, StratumSet, SubjectRecord, TrialDataset,
};
use pstrat_core::imputation::{analyze_mi, extended_mi, impute_strata_mi, MiAnalysis};
use pstrat_core::numerics::stats;
use pstrat_core::oracle::{generate, preset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random trial with both arms and both event values present in each arm.
fn random_ds(seed: u64, n: usize, p: usize, coding: EventCoding, missing_after_event: bool) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recs: Vec<SubjectRecord> = (0..n)
        .map(|i| {
            let trt = (i % 2) as u8;
            // Guarantee each (arm, event) cell has members.
            let event = if i < 4 { (i / 2) as u8 } else { u8::from(rng.random::<f64>() < 0.3) };
            let x: Vec<f64> = (0..p).map(|_| (rng.sample::<f64, _>(StandardNormal) * 100.0).round() / 100.0).collect();
            let y = rng.sample::<f64, _>(StandardNormal) + trt as f64 * 0.5;
            let outcome = (event == 0 || !missing_after_event).then_some(y);
            SubjectRecord::new(format!("s{i}"), trt, event, outcome, x)
        })
        .collect();
    let names = (1..=p).map(|j| format!("c{j}")).collect();
    TrialDataset::new(recs, names, vec![], coding, OutcomeDirection::HigherIsBetter).unwrap()
}

fn with_records(ds: &TrialDataset, recs: Vec<SubjectRecord>) -> TrialDataset {
    TrialDataset::new(
        recs,
        ds.covariate_names().to_vec(),
        ds.intermediate_names().to_vec(),
        ds.coding(),
        ds.outcome_direction(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), n in 8usize..60, p in 0usize..3, miss in any::<bool>()) {
        let ds = random_ds(seed, n, p, EventCoding::event_no_harmed(), miss);
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf, &[], None).unwrap();
        let back = read_csv(buf.as_slice(), &ColumnMapping::default(), ds.coding(), ds.outcome_direction()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn arm_summary_is_order_invariant(seed in any::<u64>(), n in 8usize..60) {
        let ds = random_ds(seed, n, 1, EventCoding::event_no_harmed(), true);
        let mut recs = ds.records().to_vec();
        recs.reverse();
        let rev = with_records(&ds, recs);
        let (a, b) = (summarize_arms(&ds).unwrap(), summarize_arms(&rev).unwrap());
        for arm in [Arm::Control, Arm::Treated] {
            let (x, y) = (a.arm(arm), b.arm(arm));
            prop_assert!((0.0..=1.0).contains(&x.p_event_free));
            prop_assert_eq!(x.n, y.n);
            prop_assert_eq!(x.n_event_free, y.n_event_free);
            prop_assert_eq!(x.p_event_free, y.p_event_free);
        }
    }

    #[test]
    fn cace_iv_is_shift_invariant(seed in any::<u64>(), n in 20usize..80, c in -50.0f64..50.0) {
        let ds = random_ds(seed, n, 0, EventCoding::iv(), false);
        let Ok(base) = cace_iv(&ds, 0.0) else { return Ok(()); };
        let shifted: Vec<SubjectRecord> = ds
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.outcome = r.outcome.map(|y| y + c);
                r
            })
            .collect();
        let moved = cace_iv(&with_records(&ds, shifted), 0.0).unwrap();
        prop_assert!((moved.point - base.point).abs() < 1e-9 * (1.0 + base.point.abs()));
    }

    #[test]
    fn naive_equals_itt_without_events(seed in any::<u64>(), n in 6usize..50) {
        let ds = random_ds(seed, n, 0, EventCoding::event_no_harmed(), false);
        let recs: Vec<SubjectRecord> = ds.records().iter().map(|r| { let mut r = r.clone(); r.event = 0; r }).collect();
        let ds = with_records(&ds, recs);
        prop_assert_eq!(naive_completers(&ds).unwrap().point, itt_effect(&ds).unwrap().point);
    }

    #[test]
    fn t3_equals_t4_with_constant_weights(seed in any::<u64>(), n in 20usize..80) {
        // Without covariates both event-free models are intercept-only, and
        // inverse weighting of completers reduces to the completer mean.
        let ds = random_ds(seed, n, 0, EventCoding::adherence(Monotonicity::None), true);
        let t3 = no_mono_weighted(&ds, NoMonoVariant::T3).unwrap().point;
        let t4 = no_mono_weighted(&ds, NoMonoVariant::T4).unwrap().point;
        prop_assert!((t3 - t4).abs() < 1e-8, "{} vs {}", t3, t4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn principal_scores_sum_to_one(seed in 0u64..1000) {
        let (_, ds) = generate(&preset("pi_baseline").unwrap().with_n(800), seed).unwrap();
        let m = fit_principal_scores_em(&ds).unwrap();
        for p in &m.probs {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert_eq!(p[StrataLabel::S01.index()], 0.0);
        }
        prop_assert!(m.ll_trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
    }

    #[test]
    fn pooled_point_is_mean_of_per_set_points(seed in 0u64..1000) {
        let (_, ds) = generate(&preset("pi_baseline").unwrap().with_n(600), seed).unwrap();
        let set = StratumSet::single(StrataLabel::S00);
        let imps = impute_strata_mi(&ds, 7, seed).unwrap();
        let pooled = analyze_mi(&imps, set, MiAnalysis::MeanDifference).unwrap().point;
        let recs = ds.records();
        let per: Vec<f64> = imps
            .completed
            .iter()
            .map(|c| {
                let arm_mean = |t: u8| {
                    let v: Vec<f64> = (0..recs.len())
                        .filter(|&i| recs[i].trt == t && set.contains(c.stratum(i)))
                        .filter_map(|i| c.y[i][t as usize])
                        .collect();
                    stats::mean(&v)
                };
                arm_mean(1) - arm_mean(0)
            })
            .collect();
        prop_assert!((pooled - stats::mean(&per)).abs() < 1e-12);
    }
}

#[test]
fn extended_mi_is_identical_across_thread_counts() {
    let (_, ds) = generate(&preset("staged_qu").unwrap().with_n(600), 3).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let mut buf = Vec::new();
            extended_mi(&ds, 6, 21).unwrap().write_csv_to(&mut buf).unwrap();
            buf
        })
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(4));
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn randomized_assignment_is_independent_of_potential_outcomes() {
    // Correlation test at α = 0.001 across seeds: |r|·√n < 3.29.
    let mut rejections = 0;
    let seeds = 100;
    for seed in 0..seeds {
        let (t, _) = generate(&preset("pi_baseline").unwrap().with_n(2000), seed).unwrap();
        let trt: Vec<f64> = t.rows().iter().map(|r| r.trt as f64).collect();
        for arm in 0..2 {
            let y: Vec<f64> = t.rows().iter().map(|r| r.y[arm]).collect();
            let r = correlation(&trt, &y);
            if r.abs() * (trt.len() as f64).sqrt() > 3.29 {
                rejections += 1;
            }
        }
    }
    assert!(rejections <= 2, "{rejections} rejections over {} tests", 2 * seeds);
}
