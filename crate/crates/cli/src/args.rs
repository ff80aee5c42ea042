//! Command-line grammar. Every flag is long-form; a `--config` file holds
//! the same flags as `key = value` lines (see [`crate::config`]).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "pstrat", version, about = "Principal stratification estimators", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Per-arm event-free rates and outcome summaries.
    Summary(Plain),
    /// Intention-to-treat difference in means.
    Itt(Plain),
    /// Completers-only (event-free) comparison.
    Naive(Plain),
    /// IV (Wald) complier effect.
    CaceIv(CaceIvArgs),
    /// Binary-outcome sensitivity analysis in τ, γ or β.
    SensBinary(SensBinaryArgs),
    /// Continuous-outcome selection-model sensitivity curve over β.
    SensGbh(SensGbhArgs),
    /// Always-complier effect without monotonicity, given (π01, β0, β1).
    SensCace(SensCaceArgs),
    /// Survivor effect with sensitivity parameter α.
    Sace(SaceArgs),
    /// Trimming bounds on the survivor effect.
    Bounds(Plain),
    /// Predicted-counterfactual estimator under principal ignorability.
    T1(T1Args),
    /// Strata-propensity weighted estimator.
    T2(Plain),
    /// Weighted completers estimator without monotonicity.
    T3(Plain),
    /// Doubly weighted estimator without monotonicity.
    T4(Plain),
    /// Principal scores by EM and the weighted S00 effect.
    Pscore(Plain),
    /// Multiple imputation of strata memberships.
    Mi(MiArgs),
    /// Multiple imputation of memberships and missing potential outcomes.
    MiExtended(MiArgs),
    /// Staged estimator A (intermediate outcomes).
    MethodA(MethodArgs),
    /// Staged estimator B (intermediate outcomes).
    MethodB(MethodArgs),
    /// Bayesian mixture model fitted by data augmentation.
    Bayes(BayesArgs),
    /// Prior sensitivity of the Bayesian mixture over the η01 intercept.
    BayesSweep(BayesArgs),
    /// Covariate distribution within a principal stratum.
    Covdist(CovdistArgs),
    /// Observational binary sensitivity analysis in τ.
    ObsTau(ObsTauArgs),
    /// Inverse-propensity-weighted staged estimators.
    ObsIpw(ObsIpwArgs),
    /// Draw a potential-outcome table from a preset.
    Simulate(SimulateArgs),
    /// Exact stratum effect from a potential-outcome table.
    Oracle(OracleArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Summary(_) => "summary",
            Command::Itt(_) => "itt",
            Command::Naive(_) => "naive",
            Command::CaceIv(_) => "cace-iv",
            Command::SensBinary(_) => "sens-binary",
            Command::SensGbh(_) => "sens-gbh",
            Command::SensCace(_) => "sens-cace",
            Command::Sace(_) => "sace",
            Command::Bounds(_) => "bounds",
            Command::T1(_) => "t1",
            Command::T2(_) => "t2",
            Command::T3(_) => "t3",
            Command::T4(_) => "t4",
            Command::Pscore(_) => "pscore",
            Command::Mi(_) => "mi",
            Command::MiExtended(_) => "mi-extended",
            Command::MethodA(_) => "method-a",
            Command::MethodB(_) => "method-b",
            Command::Bayes(_) => "bayes",
            Command::BayesSweep(_) => "bayes-sweep",
            Command::Covdist(_) => "covdist",
            Command::ObsTau(_) => "obs-tau",
            Command::ObsIpw(_) => "obs-ipw",
            Command::Simulate(_) => "simulate",
            Command::Oracle(_) => "oracle",
        }
    }

    pub fn run_args(&self) -> &RunArgs {
        match self {
            Command::Summary(a)
            | Command::Itt(a)
            | Command::Naive(a)
            | Command::Bounds(a)
            | Command::T2(a)
            | Command::T3(a)
            | Command::T4(a)
            | Command::Pscore(a) => &a.run,
            Command::CaceIv(a) => &a.base.run,
            Command::SensBinary(a) => &a.base.run,
            Command::SensGbh(a) => &a.base.run,
            Command::SensCace(a) => &a.base.run,
            Command::Sace(a) => &a.base.run,
            Command::T1(a) => &a.base.run,
            Command::Mi(a) | Command::MiExtended(a) => &a.base.run,
            Command::MethodA(a) | Command::MethodB(a) => &a.base.run,
            Command::Bayes(a) | Command::BayesSweep(a) => &a.base.run,
            Command::Covdist(a) => &a.base.run,
            Command::ObsTau(a) => &a.base.run,
            Command::ObsIpw(a) => &a.base.run,
            Command::Simulate(a) => &a.run,
            Command::Oracle(a) => &a.base.run,
        }
    }
}

/// Output, seeding and parallelism.
#[derive(Args, Debug, Clone, Serialize)]
pub struct RunArgs {
    /// Directory for report.json and any CSV artifacts.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed for stochastic methods; falls back to PSTRAT_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Confidence / credible level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Key-value file with default flag values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodingPreset {
    /// S = treatment taken, no defiers.
    Iv,
    /// S = 1 harmful event, no Harmed stratum.
    Event,
    /// S = 1 death, S(1) <= S(0).
    Survival,
    /// S = 1 non-adherence, S(1) <= S(0).
    Adherence,
    /// S = 1 non-adherence, no monotonicity.
    AdherenceNone,
    /// S = 1 event, no monotonicity.
    None,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotonicityArg {
    S1GeS0,
    S1LeS0,
    None,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionArg {
    Higher,
    Lower,
}

/// Input file, column mapping and event coding.
#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Trial CSV (`id,trt,event,y`, `x_*` covariates, `event_k`, `z<k>_*`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Meaning of S and the monotonicity direction.
    #[arg(long, value_enum)]
    pub coding: Option<CodingPreset>,
    /// Overrides the monotonicity implied by --coding.
    #[arg(long, value_enum)]
    pub monotonicity: Option<MonotonicityArg>,
    /// Which outcome values are better.
    #[arg(long, value_enum, default_value = "higher")]
    pub direction: DirectionArg,
    #[arg(long, default_value = "id")]
    pub id_col: String,
    #[arg(long, default_value = "trt")]
    pub trt_col: String,
    #[arg(long, default_value = "event")]
    pub event_col: String,
    #[arg(long, default_value = "y")]
    pub outcome_col: String,
    #[arg(long, default_value = "x_")]
    pub covariate_prefix: String,
    #[arg(long, default_value = "event_")]
    pub stage_prefix: String,
    #[arg(long, default_value = "z")]
    pub intermediate_prefix: String,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Plain {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CaceIvArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    /// Minimum acceptable complier share.
    #[arg(long, default_value_t = 0.0)]
    pub floor: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinaryParam {
    Tau,
    Gamma,
    Beta,
}

/// A single value (`--value`) or an evenly spaced grid.
#[derive(Args, Debug, Clone, Serialize)]
pub struct GridArgs {
    #[arg(long, conflicts_with_all = ["from", "to", "steps"], allow_negative_numbers = true)]
    pub value: Option<f64>,
    #[arg(long, requires_all = ["to", "steps"], allow_negative_numbers = true)]
    pub from: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub to: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SensBinaryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[arg(long, value_enum)]
    pub param: BinaryParam,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplingArg {
    Stratified,
    Pooled,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SensGbhArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[arg(long, default_value_t = -1.5, allow_negative_numbers = true)]
    pub beta_from: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub beta_to: f64,
    #[arg(long, default_value_t = 16)]
    pub beta_steps: usize,
    /// Bootstrap replicates (0 = point estimates only).
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    #[arg(long, value_enum, default_value = "stratified")]
    pub resampling: ResamplingArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SensCaceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[arg(long)]
    pub pi01: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub beta0: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub beta1: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SaceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct T1Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    /// Integrate over the intermediate-outcome blocks.
    #[arg(long)]
    pub use_intermediates: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisArg {
    Ancova,
    MeanDifference,
    PotentialOutcomes,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    /// Number of imputations.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    /// Target stratum or union (`S00`, `S*0`, `immune+benefiters`, ...).
    #[arg(long, default_value = "S00")]
    pub stratum: String,
    #[arg(long, value_enum, default_value = "ancova")]
    pub analysis: AnalysisArg,
    /// Bootstrap replicates for a percentile interval (0 = Rubin's rules).
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    /// Also write the completed data sets to imputations.csv.
    #[arg(long)]
    pub write_imputations: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopulationArg {
    SStar0,
    S00,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct StagedArgs {
    #[arg(long, value_enum, default_value = "s-star0")]
    pub population: PopulationArg,
    /// Monte Carlo draws per subject for the intermediate-outcome integrals.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Fit stage adherence models separately per arm.
    #[arg(long)]
    pub separate_adherence: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MethodArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[command(flatten)]
    #[serde(flatten)]
    pub staged: StagedArgs,
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Gaussian,
    Bernoulli,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BayesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    /// Post-burn-in iterations per chain.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Ignore outcomes after the event and drop the S11 outcome model.
    #[arg(long)]
    pub reduced: bool,
    /// Outcome family; inferred from the data when omitted.
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Bernoulli only: no treatment effect in S00 and S11.
    #[arg(long)]
    pub exclusion: bool,
    /// Prior mean of the η01 intercept (`bayes` only).
    #[arg(long, default_value_t = -50.0, allow_negative_numbers = true)]
    pub eta01_mean: f64,
    /// Prior SD of the η01 intercept (`bayes` only).
    #[arg(long, default_value_t = 0.1)]
    pub eta01_sd: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CovdistArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[arg(long, default_value = "S00")]
    pub stratum: String,
    /// Covariate name without the column prefix.
    #[arg(long)]
    pub covariate: String,
    #[arg(long, default_value_t = 128)]
    pub grid_points: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ObsTauArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[arg(long)]
    pub tau: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    A,
    B,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ObsIpwArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    #[command(flatten)]
    #[serde(flatten)]
    pub staged: StagedArgs,
    #[arg(long, value_enum, default_value = "a")]
    pub method: MethodArg,
    /// Lower propensity quantile for truncation.
    #[arg(long, requires = "truncate_hi")]
    pub truncate_lo: Option<f64>,
    /// Upper propensity quantile for truncation.
    #[arg(long, requires = "truncate_lo")]
    pub truncate_hi: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub preset: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: Plain,
    /// Stratum or union (`compliers`, `S00`, `S*0`, `all`, ...).
    #[arg(long)]
    pub stratum: String,
}
