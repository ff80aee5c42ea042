//! Subcommand bodies: load data, call the estimator, collect artifacts.

use pstrat_core::basic::{cace_iv, itt_effect, naive_completers};
use pstrat_core::bayes::{
    bayes_report, gibbs_sample, prior_sensitivity_sweep, GibbsConfig, NormalPrior, OutcomeFamily, PriorSpec,
    SWEEP_PRIORS,
};
use pstrat_core::covariate::{
    fit_principal_scores_em, no_mono_weighted, predicted_counterfactual_t1, principal_score_estimator,
    strata_covariate_distribution, strata_propensity_weighted_t2, NoMonoVariant,
};
use pstrat_core::data::{
    load_csv, summarize_arms, ColumnMapping, EventCoding, Monotonicity, OutcomeDirection, StrataLabel, StratumSet,
    TrialDataset, Vocabulary, ZeroMeans,
};
use pstrat_core::imputation::{
    analyze_mi, extended_mi, impute_strata_mi, method_a, method_b, mi_bootstrap, ImputationKind, MethodOptions,
    MiAnalysis, Population, StagedMethod,
};
use pstrat_core::numerics::Resampling;
use pstrat_core::observational::{fit_propensity, ipw_method, obs_sensitivity_tau, IpwOptions};
use pstrat_core::oracle::{generate, preset, read_table_csv, PRESET_NAMES};
use pstrat_core::report::{EstimateReport, SensitivityCurve};
use pstrat_core::sensitivity::{
    binary_beta, binary_gamma, binary_tau, cace_band_no_monotonicity, gbh_continuous, linspace, sace_crude,
    zhang_rubin_bounds,
};
use pstrat_core::staged::StagedOptions;
use pstrat_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;

/// Everything a subcommand produces besides the envelope.
#[derive(Default)]
pub struct Output {
    pub reports: Vec<EstimateReport>,
    pub details: Option<Value>,
    /// `(file name, bytes)` written next to report.json.
    pub artifacts: Vec<(String, Vec<u8>)>,
}

impl Output {
    fn report(r: EstimateReport) -> Self {
        Output {
            reports: vec![r],
            ..Default::default()
        }
    }

    fn with_details(mut self, v: impl Serialize) -> Self {
        self.details = Some(serde_json::to_value(v).expect("details serialize"));
        self
    }

    fn artifact(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.artifacts.push((name.to_string(), bytes));
        self
    }
}

fn coding_from(p: CodingPreset) -> EventCoding {
    match p {
        CodingPreset::Iv => EventCoding::iv(),
        CodingPreset::Event => EventCoding::event_no_harmed(),
        CodingPreset::Survival => EventCoding::survival(),
        CodingPreset::Adherence => EventCoding::adherence(Monotonicity::S1LeS0),
        CodingPreset::AdherenceNone => EventCoding::adherence(Monotonicity::None),
        CodingPreset::None => EventCoding::new(ZeroMeans::NoEventOrCompliant, Monotonicity::None),
    }
}

/// Default coding per subcommand when `--coding` is absent.
fn default_coding(cmd: &str) -> CodingPreset {
    match cmd {
        "cace-iv" => CodingPreset::Iv,
        "t3" | "t4" | "sens-cace" | "oracle" => CodingPreset::None,
        "bounds" | "sace" => CodingPreset::Survival,
        _ => CodingPreset::Event,
    }
}

pub fn resolve_coding(cmd: &str, d: &DataArgs) -> EventCoding {
    let mut c = coding_from(d.coding.unwrap_or(default_coding(cmd)));
    if let Some(m) = d.monotonicity {
        c.monotonicity = match m {
            MonotonicityArg::S1GeS0 => Monotonicity::S1GeS0,
            MonotonicityArg::S1LeS0 => Monotonicity::S1LeS0,
            MonotonicityArg::None => Monotonicity::None,
        };
    }
    c
}

fn direction(d: &DataArgs) -> OutcomeDirection {
    match d.direction {
        DirectionArg::Higher => OutcomeDirection::HigherIsBetter,
        DirectionArg::Lower => OutcomeDirection::LowerIsBetter,
    }
}

fn load(cmd: &str, p: &Plain) -> Result<TrialDataset> {
    let d = &p.data;
    let path = d
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("{cmd} needs --input")))?;
    let map = ColumnMapping {
        id: d.id_col.clone(),
        trt: d.trt_col.clone(),
        event: d.event_col.clone(),
        outcome: d.outcome_col.clone(),
        covariate_prefix: d.covariate_prefix.clone(),
        stage_prefix: d.stage_prefix.clone(),
        intermediate_prefix: d.intermediate_prefix.clone(),
    };
    load_csv(path, &map, resolve_coding(cmd, d), direction(d))
}

fn need_seed(cmd: &str, seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::InvalidConfig(format!("{cmd} is stochastic: pass --seed or set PSTRAT_SEED")))
}

fn grid(g: &GridArgs) -> Result<Vec<f64>> {
    match (g.value, g.from, g.to, g.steps) {
        (Some(v), ..) => Ok(vec![v]),
        (None, Some(a), Some(b), Some(k)) if k >= 1 => Ok(linspace(a, b, k)),
        _ => Err(Error::InvalidConfig("give --value or --from/--to/--steps (steps >= 1)".into())),
    }
}

fn stratum_set(s: &str) -> Result<StratumSet> {
    s.parse::<StratumSet>()
}

fn staged_options(s: &StagedArgs, seed: u64) -> StagedOptions {
    let mut o = StagedOptions::default();
    if let Some(d) = s.draws {
        o.draws = d;
    }
    o.pooled_adherence = !s.separate_adherence;
    o.seed = seed;
    o
}

fn population(p: PopulationArg) -> Population {
    match p {
        PopulationArg::SStar0 => Population::SStar0,
        PopulationArg::S00 => Population::S00,
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Runs one subcommand. `seed` is the resolved seed (flag or environment).
pub fn run(cmd: &Command, seed: Option<u64>) -> Result<Output> {
    let name = cmd.name();
    let level = cmd.run_args().level;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("--level {level} outside (0, 1)")));
    }
    match cmd {
        Command::Summary(a) => {
            let ds = load(name, a)?;
            Ok(Output::default().with_details(summarize_arms(&ds)?))
        }
        Command::Itt(a) => Ok(Output::report(itt_effect(&load(name, a)?)?)),
        Command::Naive(a) => Ok(Output::report(naive_completers(&load(name, a)?)?)),
        Command::CaceIv(a) => Ok(Output::report(cace_iv(&load(name, &a.base)?, a.floor)?)),
        Command::SensBinary(a) => sens_binary(name, a, level),
        Command::SensGbh(a) => {
            let ds = load(name, &a.base)?;
            let seed = if a.boot > 0 { need_seed(name, seed)? } else { seed.unwrap_or(0) };
            let scheme = match a.resampling {
                ResamplingArg::Stratified => Resampling::StratifiedByArm,
                ResamplingArg::Pooled => Resampling::Pooled,
            };
            let g = linspace(a.beta_from, a.beta_to, a.beta_steps);
            let curve = gbh_continuous(&ds, &g, a.boot, seed, level, scheme)?;
            let bytes = csv_bytes(|b| curve.write_csv(b))?;
            Ok(Output::default().with_details(&curve).artifact("curve.csv", bytes))
        }
        Command::SensCace(a) => {
            let ds = load(name, &a.base)?;
            Ok(Output::report(cace_band_no_monotonicity(&ds, a.pi01, a.beta0, a.beta1)?))
        }
        Command::Sace(a) => Ok(Output::report(sace_crude(&load(name, &a.base)?, a.alpha)?)),
        Command::Bounds(a) => Ok(Output::default().with_details(zhang_rubin_bounds(&load(name, a)?)?)),
        Command::T1(a) => Ok(Output::report(predicted_counterfactual_t1(
            &load(name, &a.base)?,
            a.use_intermediates,
        )?)),
        Command::T2(a) => Ok(Output::report(strata_propensity_weighted_t2(&load(name, a)?)?)),
        Command::T3(a) => Ok(Output::report(no_mono_weighted(&load(name, a)?, NoMonoVariant::T3)?)),
        Command::T4(a) => Ok(Output::report(no_mono_weighted(&load(name, a)?, NoMonoVariant::T4)?)),
        Command::Pscore(a) => {
            let ds = load(name, a)?;
            let m = fit_principal_scores_em(&ds)?;
            let rep = principal_score_estimator(&ds, &m)?;
            let details = json!({
                "strata": m.strata,
                "reference": m.reference,
                "coefficients": m.coefficients,
                "em_iterations": m.em_iterations,
                "converged": m.converged,
                "log_likelihood": m.log_likelihood,
                "ll_trace": m.ll_trace,
            });
            Ok(Output::report(rep).with_details(details))
        }
        Command::Mi(a) => mi(name, a, ImputationKind::Strata, need_seed(name, seed)?),
        Command::MiExtended(a) => mi(name, a, ImputationKind::Extended, need_seed(name, seed)?),
        Command::MethodA(a) | Command::MethodB(a) => {
            let seed = need_seed(name, seed)?;
            let ds = load(name, &a.base)?;
            let opts = MethodOptions {
                staged: staged_options(&a.staged, seed),
                bootstrap: a.boot,
                bootstrap_seed: seed,
            };
            let pop = population(a.staged.population);
            let rep = if matches!(cmd, Command::MethodA(_)) {
                method_a(&ds, pop, &opts)?
            } else {
                method_b(&ds, pop, &opts)?
            };
            Ok(Output::report(rep))
        }
        Command::Bayes(a) => {
            let seed = need_seed(name, seed)?;
            let ds = load(name, &a.base)?;
            let prior = NormalPrior::new(a.eta01_mean, a.eta01_sd);
            let priors = PriorSpec::default_for(ds.p()).with_eta01_intercept(prior);
            let draws = gibbs_sample(&ds, &priors, &gibbs_config(a, seed))?;
            let rep = bayes_report(&draws, level)?;
            let bytes = csv_bytes(|b| draws.write_csv_to(b))?;
            let details = json!({
                "param_names": draws.param_names,
                "diagnostics": draws.diagnostics,
                "warnings": draws.warnings,
            });
            Ok(Output::report(rep).with_details(details).artifact("draws.csv", bytes))
        }
        Command::BayesSweep(a) => {
            let seed = need_seed(name, seed)?;
            let ds = load(name, &a.base)?;
            let rows = prior_sensitivity_sweep(&ds, &SWEEP_PRIORS, &PriorSpec::default_for(ds.p()), &gibbs_config(a, seed));
            let mut out = Output::default();
            let mut table = Vec::new();
            for (prior, row) in rows {
                match row {
                    Ok(r) => {
                        let mut rep = EstimateReport::new("bayes_prior_sweep", "S00", r.effect.mean, ds.len())
                            .param("eta01_intercept_mean", prior.mean)
                            .param("eta01_intercept_sd", prior.sd)
                            .extra("posterior_sd", r.effect.sd)
                            .extra("pi01_mean", r.pi01.mean)
                            .extra("max_rhat", r.max_rhat)
                            .with_ci(r.effect.ci[0], r.effect.ci[1], r.effect.level);
                        rep.se = Some(r.effect.sd);
                        out.reports.push(rep);
                        table.push(json!({"prior": prior, "effect": r.effect, "pi01": r.pi01, "max_rhat": r.max_rhat}));
                    }
                    Err(e) => table.push(json!({"prior": prior, "error": e.name(), "message": e.to_string()})),
                }
            }
            Ok(out.with_details(table))
        }
        Command::Covdist(a) => {
            let ds = load(name, &a.base)?;
            let u = StrataLabel::parse(&a.stratum)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown stratum `{}`", a.stratum)))?;
            let m = fit_principal_scores_em(&ds)?;
            let dist = strata_covariate_distribution(&ds, &m.probs, u, &a.covariate, a.grid_points)?;
            let bytes = csv_bytes(|b| dist.write_csv_to(b))?;
            Ok(Output::default().with_details(&dist).artifact("dist.csv", bytes))
        }
        Command::ObsTau(a) => {
            let ds = load(name, &a.base)?;
            let prop = fit_propensity(&ds)?;
            let rep = obs_sensitivity_tau(&ds, &prop, a.tau)?;
            let bytes = csv_bytes(|b| prop.write_csv_to(&ds, b))?;
            Ok(Output::report(rep).artifact("propensity.csv", bytes))
        }
        Command::ObsIpw(a) => {
            let seed = need_seed(name, seed)?;
            let ds = load(name, &a.base)?;
            let prop = fit_propensity(&ds)?;
            let opts = IpwOptions {
                staged: staged_options(&a.staged, seed),
                truncate: a.truncate_lo.zip(a.truncate_hi),
            };
            let method = match a.method {
                MethodArg::A => StagedMethod::A,
                MethodArg::B => StagedMethod::B,
            };
            let rep = ipw_method(&ds, &prop, population(a.staged.population), method, &opts)?;
            let bytes = csv_bytes(|b| prop.write_csv_to(&ds, b))?;
            Ok(Output::report(rep).artifact("propensity.csv", bytes))
        }
        Command::Simulate(a) => {
            let seed = need_seed(name, seed)?;
            let mut cfg = preset(&a.preset).map_err(|e| match e {
                Error::UnknownPreset(p) => Error::UnknownPreset(format!("{p} (known: {})", PRESET_NAMES.join(", "))),
                e => e,
            })?;
            if let Some(n) = a.n {
                cfg = cfg.with_n(n);
            }
            let (table, ds) = generate(&cfg, seed)?;
            let table_csv = csv_bytes(|b| table.write_csv_to(b))?;
            let data_csv = csv_bytes(|b| pstrat_core::data::write_csv_to(&ds, b, &[], None))?;
            let counts = table.stratum_counts();
            println!("analyze with: {}", coding_flags(cfg.coding));
            let details = json!({
                "preset": cfg,
                "coding_flags": coding_flags(cfg.coding),
                "stratum_counts": {
                    "S00": counts[0], "S01": counts[1], "S10": counts[2], "S11": counts[3],
                },
            });
            Ok(Output::default()
                .with_details(details)
                .artifact("table.csv", table_csv)
                .artifact("data.csv", data_csv))
        }
        Command::Oracle(a) => {
            let d = &a.base.data;
            let path = d
                .input
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("oracle needs --input (a table.csv from simulate)".into()))?;
            let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let table = read_table_csv(std::io::BufReader::new(f), resolve_coding(name, d), direction(d))?;
            let set = stratum_set(&a.stratum)?;
            let effect = table.effect(set)?;
            let share = table.share(set);
            let k = (share * table.len() as f64).round() as usize;
            let rep = EstimateReport::new("oracle_effect", &set.describe(), effect, k)
                .extra("share", share)
                .extra("mean_y1", table.mean_po(pstrat_core::data::Arm::Treated, set)?)
                .extra("mean_y0", table.mean_po(pstrat_core::data::Arm::Control, set)?)
                .extra("n_table", table.len() as f64);
            Ok(Output::report(rep))
        }
    }
}

/// Flags that reproduce `c` when analyzing simulated data.
fn coding_flags(c: EventCoding) -> String {
    if c.zero_means == ZeroMeans::TakingExperimental {
        return "--coding iv".into();
    }
    let base = match c.vocabulary {
        Vocabulary::Adherence => "adherence",
        Vocabulary::Survival => "survival",
        _ => "event",
    };
    let mono = match c.monotonicity {
        Monotonicity::S1GeS0 => "s1-ge-s0",
        Monotonicity::S1LeS0 => "s1-le-s0",
        Monotonicity::None => "none",
    };
    format!("--coding {base} --monotonicity {mono}")
}

fn gibbs_config(a: &BayesArgs, seed: u64) -> GibbsConfig {
    GibbsConfig {
        iters: a.iters,
        burn_in: a.burn_in,
        chains: a.chains,
        thin: a.thin,
        seed,
        reduced: a.reduced,
        family: a.family.map(|f| match f {
            FamilyArg::Gaussian => OutcomeFamily::Gaussian,
            FamilyArg::Bernoulli => OutcomeFamily::Bernoulli,
        }),
        exclusion: a.exclusion,
    }
}

fn sens_binary(name: &str, a: &SensBinaryArgs, level: f64) -> Result<Output> {
    let ds = load(name, &a.base)?;
    let g = grid(&a.grid)?;
    let f = |v: f64| match a.param {
        BinaryParam::Tau => binary_tau(&ds, v),
        BinaryParam::Gamma => binary_gamma(&ds, v),
        BinaryParam::Beta => binary_beta(&ds, v),
    };
    let label = match a.param {
        BinaryParam::Tau => "tau",
        BinaryParam::Gamma => "gamma",
        BinaryParam::Beta => "beta",
    };
    if g.len() == 1 {
        return Ok(Output::report(f(g[0])?));
    }
    let mut out = Output::default();
    let mut curve = SensitivityCurve {
        param_name: label.into(),
        grid: g.clone(),
        estimates: Vec::new(),
        ci_low: Some(Vec::new()),
        ci_high: Some(Vec::new()),
        alpha_solutions: None,
        failures: Vec::new(),
        level: Some(level),
        odds_multipliers: None,
    };
    for &v in &g {
        match f(v) {
            Ok(rep) => {
                curve.estimates.push(Some(rep.point));
                curve.ci_low.as_mut().unwrap().push(rep.ci.map(|c| c[0]));
                curve.ci_high.as_mut().unwrap().push(rep.ci.map(|c| c[1]));
                curve.failures.push(None);
                out.reports.push(rep);
            }
            Err(e) => {
                curve.estimates.push(None);
                curve.ci_low.as_mut().unwrap().push(None);
                curve.ci_high.as_mut().unwrap().push(None);
                curve.failures.push(Some(e.name().to_string()));
            }
        }
    }
    if curve.estimates.iter().all(Option::is_none) {
        return Err(Error::PreconditionFailed(format!("every {label} grid point failed")));
    }
    let bytes = csv_bytes(|b| curve.write_csv(b))?;
    Ok(out.with_details(&curve).artifact("curve.csv", bytes))
}

fn mi(name: &str, a: &MiArgs, kind: ImputationKind, seed: u64) -> Result<Output> {
    let ds = load(name, &a.base)?;
    let set = stratum_set(&a.stratum)?;
    let analysis = match a.analysis {
        AnalysisArg::Ancova => MiAnalysis::Ancova,
        AnalysisArg::MeanDifference => MiAnalysis::MeanDifference,
        AnalysisArg::PotentialOutcomes => MiAnalysis::PotentialOutcomes,
    };
    let imps = match kind {
        ImputationKind::Strata => impute_strata_mi(&ds, a.m, seed)?,
        ImputationKind::Extended => extended_mi(&ds, a.m, seed)?,
    };
    let mut rep = analyze_mi(&imps, set, analysis)?;
    if a.boot > 0 {
        let b = mi_bootstrap(&ds, kind, a.m, set, analysis, a.boot, seed)?;
        rep = rep.with_bootstrap(&b);
    }
    let mut out = Output::report(rep);
    if a.write_imputations {
        let bytes = csv_bytes(|b| imps.write_csv_to(b))?;
        out = out.artifact("imputations.csv", bytes);
    }
    Ok(out)
}
