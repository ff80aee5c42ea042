//! Bayesian four-stratum mixtures fitted by data augmentation.
//!
//! Stratum probabilities follow a multinomial logit
//! `π_u(x) = exp(x'η_u) / Σ_k exp(x'η_k)` with `η_10 ≡ 0`. Each observed
//! `(T, S)` cell mixes exactly two strata, so the latent label of every
//! subject is drawn from a closed-form two-point conditional. Outcomes are
//! either Gaussian, `Y(t) | U = u ~ N(x'β_u + t·δ_u, σ_u²)`, or Bernoulli
//! with stratum/arm logits `θ_u(t)`. Monotonicity is imposed through the
//! prior on `η_01` rather than by deleting the stratum.
//!
//! One Gibbs sweep: labels, then `(β_u, δ_u)` by conjugate normal draws,
//! `σ_u` by a shrinkage slice update on its bounded support (or `θ` by
//! random-walk Metropolis), then each free `η_u` block by Metropolis with a
//! normal proposal shaped by the conditional information matrix. Proposal
//! shape and scale adapt during burn-in and are frozen afterwards.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, StrataLabel, TrialDataset};
use crate::error::{Error, Result};
use crate::numerics::{effective_sample_size, expit, fit_ols, log1pexp, split_rhat, stats, stream, tag};
use crate::report::{tags, EstimateReport};

/// Stratum whose softmax coefficients are pinned at zero.
pub const REFERENCE: StrataLabel = StrataLabel::S10;

const ADAPT_EVERY: usize = 50;
const ACCEPT_BAND: (f64, f64) = (0.2, 0.5);
const ACCEPT_TARGET: f64 = 0.3;
const SLICE_MAX_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub const fn new(mean: f64, sd: f64) -> Self {
        NormalPrior { mean, sd }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.sd > 0.0 && self.sd.is_finite() && self.mean.is_finite()) {
            return Err(Error::PriorSupportViolation(format!(
                "{what}: N({}, {}) needs a finite mean and sd > 0",
                self.mean, self.sd
            )));
        }
        Ok(())
    }

    fn log_density(&self, x: f64) -> f64 {
        -0.5 * ((x - self.mean) / self.sd).powi(2)
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.mean + self.sd * rng.sample::<f64, _>(StandardNormal)
    }
}

impl std::fmt::Display for NormalPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "N({}, {})", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub lo: f64,
    pub hi: f64,
}

/// Priors for the mixture. `eta` is indexed S00, S01, S10, S11 with one
/// entry per coefficient of `(1, x)`; the reference entry must be empty.
/// For Bernoulli outcomes `beta` is the prior of every logit `θ_u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta: NormalPrior,
    pub delta: NormalPrior,
    pub sigma: UniformPrior,
    pub eta: [Vec<NormalPrior>; 4],
}

/// Intercept priors for `η_01` swept in the monotonicity sensitivity
/// analysis, from near-certain monotonicity to diffuse.
pub const SWEEP_PRIORS: [NormalPrior; 6] = [
    NormalPrior::new(-50.0, 0.1),
    NormalPrior::new(-25.0, 0.2),
    NormalPrior::new(-10.0, 0.5),
    NormalPrior::new(-5.0, 1.0),
    NormalPrior::new(-2.0, 2.5),
    NormalPrior::new(0.0, 10.0),
];

impl PriorSpec {
    /// Diffuse outcome priors, `N(0, 1)` on the free softmax coefficients
    /// and a near-degenerate `N(−50, 0.1)` intercept for `η_01`.
    pub fn default_for(p: usize) -> Self {
        let unit = vec![NormalPrior::new(0.0, 1.0); p + 1];
        let mut harmed = unit.clone();
        harmed[0] = NormalPrior::new(-50.0, 0.1);
        PriorSpec {
            beta: NormalPrior::new(0.0, 10.0),
            delta: NormalPrior::new(0.0, 10.0),
            sigma: UniformPrior { lo: 0.01, hi: 20.0 },
            eta: [unit.clone(), harmed, Vec::new(), unit],
        }
    }

    /// Same priors with a diffuse `η_01` (no monotonicity).
    pub fn non_monotone(p: usize) -> Self {
        Self::default_for(p).with_eta01_intercept(NormalPrior::new(0.0, 1.0))
    }

    pub fn with_eta01_intercept(mut self, prior: NormalPrior) -> Self {
        if let Some(first) = self.eta[1].first_mut() {
            *first = prior;
        }
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        self.beta.validate("beta")?;
        self.delta.validate("delta")?;
        let UniformPrior { lo, hi } = self.sigma;
        if !(lo > 0.0 && hi.is_finite() && lo < hi) {
            return Err(Error::PriorSupportViolation(format!(
                "sigma: Unif({lo}, {hi}) needs 0 < lo < hi < ∞"
            )));
        }
        for u in StrataLabel::ALL {
            let v = &self.eta[u.index()];
            if u == REFERENCE {
                if !v.is_empty() {
                    return Err(Error::PriorSupportViolation(format!(
                        "eta_{}: reference stratum coefficients are fixed at zero",
                        &u.code()[1..]
                    )));
                }
                continue;
            }
            if v.len() != p + 1 {
                return Err(Error::DimensionMismatch { expected: p + 1, got: v.len() });
            }
            for (j, pr) in v.iter().enumerate() {
                pr.validate(&format!("eta_{}[{j}]", &u.code()[1..]))?;
            }
        }
        Ok(())
    }
}

/// Softmax coefficient matrix, one row per stratum (S00, S01, S10, S11).
#[derive(Debug, Clone, PartialEq)]
pub struct StrataSoftmax {
    pub eta: DMatrix<f64>,
}

impl StrataSoftmax {
    pub fn new(eta: DMatrix<f64>) -> Result<Self> {
        if eta.nrows() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: eta.nrows() });
        }
        Ok(StrataSoftmax { eta })
    }

    pub fn zeros(p: usize) -> Self {
        StrataSoftmax { eta: DMatrix::zeros(4, p + 1) }
    }

    pub fn probs(&self, x: &[f64]) -> Result<[f64; 4]> {
        strata_probs(self, x)
    }
}

/// `π_u(x)` for a covariate vector that includes the leading 1.
pub fn strata_probs(eta: &StrataSoftmax, x: &[f64]) -> Result<[f64; 4]> {
    if x.len() != eta.eta.ncols() {
        return Err(Error::DimensionMismatch { expected: eta.eta.ncols(), got: x.len() });
    }
    let mut lp = [0.0; 4];
    for (u, l) in lp.iter_mut().enumerate() {
        *l = x.iter().enumerate().map(|(j, v)| eta.eta[(u, j)] * v).sum();
    }
    Ok(softmax(&lp))
}

fn softmax(lp: &[f64; 4]) -> [f64; 4] {
    let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = [0.0; 4];
    let mut s = 0.0;
    for (o, l) in e.iter_mut().zip(lp) {
        *o = (l - m).exp();
        s += *o;
    }
    let ls = m + s.ln();
    let mut out = [0.0; 4];
    for (o, l) in out.iter_mut().zip(lp) {
        *o = (l - ls).exp();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Post-burn-in iterations per chain (before thinning).
    pub iters: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub thin: usize,
    pub seed: u64,
    /// Conditional model for outcomes truncated by the event: outcomes of
    /// subjects with `S = 1` are ignored and the S11 outcome parameters are
    /// dropped.
    pub reduced: bool,
    /// `None` picks Bernoulli when every observed outcome is 0/1.
    pub family: Option<OutcomeFamily>,
    /// Bernoulli only: tie `θ_u(1) = θ_u(0)` for S00 and S11.
    pub exclusion: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iters: 2000,
            burn_in: 1000,
            chains: 4,
            thin: 1,
            seed: 0,
            reduced: false,
            family: None,
            exclusion: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub param: String,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// Kept states, one row per kept iteration, columns as `param_names`.
    pub values: Vec<Vec<f64>>,
    /// 1-based iteration number of every kept row (burn-in included in the
    /// count).
    pub iterations: Vec<usize>,
    /// Post-burn-in label frequencies per subject (S00, S01, S10, S11).
    pub label_counts: Vec<[u32; 4]>,
    pub final_labels: Vec<StrataLabel>,
    /// Post-burn-in Metropolis acceptance for each `η_u` block (NaN for the
    /// reference stratum).
    pub eta_acceptance: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    pub burn_in: usize,
    pub thin: usize,
    pub iters: usize,
    pub seed: u64,
    pub family: OutcomeFamily,
    pub reduced: bool,
    pub exclusion: bool,
    pub n_subjects: usize,
    pub diagnostics: Vec<ParamDiagnostic>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.param_names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn chain_draws(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let j = self.param_index(name)?;
        Ok(self.chains.iter().map(|c| c.values.iter().map(|r| r[j]).collect()).collect())
    }

    /// All chains concatenated.
    pub fn draws(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.chain_draws(name)?.concat())
    }

    pub fn diagnostic(&self, name: &str) -> Result<&ParamDiagnostic> {
        self.diagnostics
            .iter()
            .find(|d| d.param == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn max_rhat(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.rhat).filter(|r| r.is_finite()).fold(1.0, f64::max)
    }

    /// Posterior membership probabilities of subject `i`.
    pub fn membership(&self, i: usize) -> [f64; 4] {
        let mut c = [0.0; 4];
        for ch in &self.chains {
            for (o, v) in c.iter_mut().zip(ch.label_counts[i]) {
                *o += v as f64;
            }
        }
        let s: f64 = c.iter().sum();
        c.map(|v| if s > 0.0 { v / s } else { f64::NAN })
    }

    /// Name of the S00 contrast: `delta_00` (Gaussian) or `rd_00`
    /// (Bernoulli risk difference).
    pub fn effect_param(&self) -> &'static str {
        match self.family {
            OutcomeFamily::Gaussian => "delta_00",
            OutcomeFamily::Bernoulli => "rd_00",
        }
    }

    /// Long-format draws: `chain,iter,param,value`.
    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["chain", "iter", "param", "value"])?;
        for (c, ch) in self.chains.iter().enumerate() {
            for (row, it) in ch.values.iter().zip(&ch.iterations) {
                for (name, v) in self.param_names.iter().zip(row) {
                    wr.write_record([c.to_string(), it.to_string(), name.clone(), format!("{v:e}")])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub param: String,
    pub mean: f64,
    pub sd: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub rhat: f64,
    pub ess: f64,
    pub n_draws: usize,
}

/// Pooled-chain mean and equal-tailed credible interval.
pub fn posterior_summary(draws: &PosteriorDraws, param: &str, level: f64) -> Result<PosteriorSummary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {level}")));
    }
    let chains = draws.chain_draws(param)?;
    let mut all = chains.concat();
    if all.len() < 100 {
        return Err(Error::PreconditionFailed(format!(
            "posterior summary needs at least 100 post-burn-in draws, found {}",
            all.len()
        )));
    }
    all.sort_by(|a, b| a.total_cmp(b));
    let a = (1.0 - level) / 2.0;
    Ok(PosteriorSummary {
        param: param.to_string(),
        mean: stats::mean(&all),
        sd: stats::sd(&all),
        ci: [stats::quantile_sorted(&all, a), stats::quantile_sorted(&all, 1.0 - a)],
        level,
        rhat: split_rhat(&chains),
        ess: effective_sample_size(&chains),
        n_draws: all.len(),
    })
}

// ---------------------------------------------------------------------------
// sampler

struct Subject {
    x1: Vec<f64>,
    t: usize,
    event: u8,
    y: Option<f64>,
    cell: [usize; 2],
}

struct Model<'a> {
    subjects: Vec<Subject>,
    d: usize,
    family: OutcomeFamily,
    /// Strata carrying outcome parameters.
    active: [bool; 4],
    exclusion: bool,
    priors: &'a PriorSpec,
    cfg: &'a GibbsConfig,
    names: Vec<String>,
    y_mean: f64,
    y_sd: f64,
}

struct Start {
    coef: [Vec<f64>; 4],
    sigma: [f64; 4],
    theta: [[f64; 2]; 4],
    eta_intercept: [f64; 4],
}

#[derive(Clone)]
struct State {
    /// Gaussian: `(β_u, δ_u)` over `(1, x, t)`.
    coef: [Vec<f64>; 4],
    sigma: [f64; 4],
    theta: [[f64; 2]; 4],
    eta: [Vec<f64>; 4],
    labels: Vec<usize>,
}

fn code(u: usize) -> &'static str {
    &StrataLabel::ALL[u].code()[1..]
}

fn free_strata() -> impl Iterator<Item = usize> {
    (0..4).filter(|&u| u != REFERENCE.index())
}

impl<'a> Model<'a> {
    fn new(ds: &TrialDataset, priors: &'a PriorSpec, cfg: &'a GibbsConfig) -> Result<Self> {
        let p = ds.p();
        priors.validate(p)?;
        if cfg.iters == 0 || cfg.chains == 0 || cfg.thin == 0 {
            return Err(Error::InvalidConfig("iters, chains and thin must be positive".into()));
        }
        let family = cfg.family.unwrap_or(if ds.outcome_is_binary() {
            OutcomeFamily::Bernoulli
        } else {
            OutcomeFamily::Gaussian
        });
        if cfg.exclusion && family == OutcomeFamily::Gaussian {
            return Err(Error::InvalidConfig(
                "the exclusion option applies to Bernoulli outcomes only".into(),
            ));
        }
        let mut subjects = Vec::with_capacity(ds.len());
        let mut truncated = true;
        let mut any_event = false;
        for r in ds.records() {
            let arm = r.arm();
            let s = r.event;
            if s == 1 {
                any_event = true;
                truncated &= r.outcome.is_none();
            }
            let cell: Vec<usize> = StrataLabel::ALL
                .into_iter()
                .filter(|u| u.s_at(arm) == s)
                .map(|u| u.index())
                .collect();
            let y = if cfg.reduced && s == 1 { None } else { r.outcome };
            if let Some(v) = y {
                if family == OutcomeFamily::Bernoulli && v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidDataset(format!(
                        "Bernoulli outcome model needs 0/1 outcomes, found {v}"
                    )));
                }
            }
            let mut x1 = Vec::with_capacity(p + 1);
            x1.push(1.0);
            x1.extend_from_slice(&r.baseline);
            subjects.push(Subject { x1, t: arm.index(), event: s, y, cell: [cell[0], cell[1]] });
        }
        if any_event && truncated && !cfg.reduced {
            return Err(Error::PreconditionFailed(
                "no outcome is observed after the event; the full mixture is not \
                 estimable, use the reduced model"
                    .into(),
            ));
        }
        let ys: Vec<f64> = subjects.iter().filter_map(|s| s.y).collect();
        if ys.is_empty() {
            return Err(Error::InvalidDataset("no observed outcomes".into()));
        }
        let mut active = [true; 4];
        if cfg.reduced {
            active[StrataLabel::S11.index()] = false;
        }
        let covs = ds.covariate_names();
        let coef_names: Vec<String> =
            std::iter::once("intercept".to_string()).chain(covs.iter().cloned()).collect();
        let mut names = Vec::new();
        for u in (0..4).filter(|&u| active[u]) {
            match family {
                OutcomeFamily::Gaussian => {
                    for c in &coef_names {
                        names.push(format!("beta_{}_{c}", code(u)));
                    }
                    names.push(format!("delta_{}", code(u)));
                    names.push(format!("sigma_{}", code(u)));
                }
                OutcomeFamily::Bernoulli => {
                    names.push(format!("theta_{}_t0", code(u)));
                    names.push(format!("theta_{}_t1", code(u)));
                    names.push(format!("rd_{}", code(u)));
                }
            }
        }
        for u in free_strata() {
            for c in &coef_names {
                names.push(format!("eta_{}_{c}", code(u)));
            }
        }
        for u in 0..4 {
            names.push(format!("pi_{}", code(u)));
        }
        let y_mean = stats::mean(&ys);
        let y_sd = if ys.len() > 1 && stats::sd(&ys) > 0.0 { stats::sd(&ys) } else { 1.0 };
        Ok(Model {
            subjects,
            d: p + 1,
            family,
            active,
            exclusion: cfg.exclusion,
            priors,
            cfg,
            names,
            y_mean,
            y_sd,
        })
    }

    fn tied(&self, u: usize) -> bool {
        self.exclusion && (u == StrataLabel::S00.index() || u == StrataLabel::S11.index())
    }

    /// Data-driven starting point shared by all chains (before jitter).
    ///
    /// Each stratum's outcome model starts at a fit to the observed cell
    /// containing it in the control arm (treated arm if that cell has no
    /// outcomes) with zero treatment effect, and the softmax intercepts
    /// start at the cell margins read under `S(1) <= S(0)`. Starting all
    /// strata at a common value instead leaves label assignment in the mixed
    /// cells to chance, and chains can settle in swapped local modes.
    fn start(&self) -> Start {
        let d = self.d;
        let mut start = Start {
            coef: Default::default(),
            sigma: [self.y_sd; 4],
            theta: [[0.0; 2]; 4],
            eta_intercept: [0.0; 4],
        };
        let fallback = |y_mean: f64| {
            let mut c = vec![0.0; d + 1];
            c[0] = y_mean;
            c
        };
        for u in 0..4 {
            let mut fitted = None;
            for t in [0, 1] {
                let rows: Vec<&Subject> = self
                    .subjects
                    .iter()
                    .filter(|s| s.t == t && s.y.is_some() && s.cell.contains(&u))
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let ys: Vec<f64> = rows.iter().map(|s| s.y.unwrap()).collect();
                let ybar = stats::mean(&ys);
                let p_hat = ((ys.iter().sum::<f64>() + 0.5) / (ys.len() as f64 + 1.0)).clamp(0.02, 0.98);
                let lg = (p_hat / (1.0 - p_hat)).ln();
                start.theta[u] = [lg, lg];
                let design = DMatrix::from_fn(rows.len(), d, |i, j| rows[i].x1[j]);
                fitted = Some(match fit_ols(&design, &ys, None) {
                    Ok(f) => {
                        let mut c: Vec<f64> = f.coefficients.iter().cloned().collect();
                        c.push(0.0);
                        (c, f.rmse)
                    }
                    Err(_) => (fallback(ybar), self.y_sd),
                });
                break;
            }
            let (c, sd) = fitted.unwrap_or_else(|| (fallback(self.y_mean), self.y_sd));
            start.coef[u] = c;
            start.sigma[u] = if sd > 0.0 { sd } else { self.y_sd };
        }
        // Margins: Pr(S=0 | T=0) ≈ π00, Pr(S=1 | T=1) ≈ π11.
        let share = |t: usize, s: u8| {
            let arm: Vec<&Subject> = self.subjects.iter().filter(|r| r.t == t).collect();
            let k = arm.iter().filter(|r| r.event == s).count();
            (k as f64 + 0.5) / (arm.len() as f64 + 1.0)
        };
        let p00 = share(0, 0);
        let p11 = share(1, 1);
        let p10 = (1.0 - p00 - p11).max(0.05);
        start.eta_intercept[StrataLabel::S00.index()] = (p00 / p10).ln();
        start.eta_intercept[StrataLabel::S11.index()] = (p11 / p10).ln();
        start
    }

    fn init(&self, start: &Start, rng: &mut ChaCha8Rng) -> State {
        let d = self.d;
        let z = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
        let UniformPrior { lo, hi } = self.priors.sigma;
        let pad = 1e-3 * (hi - lo);
        let mut coef: [Vec<f64>; 4] = Default::default();
        let mut sigma = [0.0; 4];
        let mut theta = [[0.0; 2]; 4];
        for u in 0..4 {
            let mut c = start.coef[u].clone();
            c[0] += 0.1 * self.y_sd * z(rng);
            c[d] += 0.1 * self.y_sd * z(rng);
            coef[u] = c;
            sigma[u] = (start.sigma[u] * (0.1 * z(rng)).exp()).clamp(lo + pad, hi - pad);
            theta[u] = [start.theta[u][0] + 0.1 * z(rng), start.theta[u][1] + 0.1 * z(rng)];
            if self.tied(u) {
                theta[u][1] = theta[u][0];
            }
        }
        let mut eta: [Vec<f64>; 4] = Default::default();
        for u in 0..4 {
            eta[u] = if u == REFERENCE.index() {
                vec![0.0; d]
            } else {
                self.priors.eta[u]
                    .iter()
                    .enumerate()
                    .map(|(j, pr)| {
                        // The harmed stratum keeps its prior centre: the
                        // margins carry no information about it.
                        let centre = if j == 0 && u != StrataLabel::S01.index() {
                            start.eta_intercept[u]
                        } else {
                            pr.mean
                        };
                        centre + 0.1 * pr.sd.min(1.0) * z(rng)
                    })
                    .collect()
            };
        }
        State {
            coef,
            sigma,
            theta,
            eta,
            labels: self.subjects.iter().map(|s| s.cell[0]).collect(),
        }
    }

    fn log_outcome(&self, st: &State, s: &Subject, u: usize) -> f64 {
        let Some(y) = s.y else { return 0.0 };
        if !self.active[u] {
            return 0.0;
        }
        match self.family {
            OutcomeFamily::Gaussian => {
                let c = &st.coef[u];
                let mut m = c[self.d] * s.t as f64;
                for (a, b) in c.iter().zip(&s.x1) {
                    m += a * b;
                }
                let sd = st.sigma[u];
                -sd.ln() - 0.5 * ((y - m) / sd).powi(2)
            }
            OutcomeFamily::Bernoulli => {
                let th = st.theta[u][s.t];
                y * th - log1pexp(th)
            }
        }
    }

    fn run_chain(&self, start: &Start, chain: usize) -> Result<ChainDraws> {
        let mut rng = stream(self.cfg.seed, &[tag("bayes-gibbs"), chain as u64]);
        let mut st = self.init(start, &mut rng);
        let n = self.subjects.len();
        let mut eta_blk = EtaSampler::new(self, &st);
        let mut theta_scale = [[1.0f64; 2]; 4];
        let mut theta_acc = [[0usize; 2]; 4];
        let mut label_counts = vec![[0u32; 4]; n];
        let mut values = Vec::new();
        let mut iterations = Vec::new();
        let total = self.cfg.burn_in + self.cfg.iters;
        let mut post_acc = [0usize; 4];
        for it in 0..total {
            let burning = it < self.cfg.burn_in;

            // (1) labels
            for (i, s) in self.subjects.iter().enumerate() {
                let [a, b] = s.cell;
                let la = eta_blk.lp[i * 4 + a] + self.log_outcome(&st, s, a);
                let lb = eta_blk.lp[i * 4 + b] + self.log_outcome(&st, s, b);
                let diff = lb - la;
                if diff.is_nan() || (la == f64::NEG_INFINITY && lb == f64::NEG_INFINITY) {
                    return Err(Error::NonFiniteLikelihood(format!(
                        "subject {} has no finite label weight at iteration {}",
                        i + 1,
                        it + 1
                    )));
                }
                let pa = expit(-diff);
                st.labels[i] = if rng.random::<f64>() < pa { a } else { b };
            }

            // (2)-(3) outcome parameters
            match self.family {
                OutcomeFamily::Gaussian => self.update_gaussian(&mut st, &mut rng)?,
                OutcomeFamily::Bernoulli => {
                    self.update_theta(&mut st, &mut rng, &mut theta_scale, &mut theta_acc)
                }
            }

            // (4) softmax coefficients
            for u in free_strata() {
                let acc = eta_blk.update(self, &mut st, u, &mut rng);
                if acc && !burning {
                    post_acc[u] += 1;
                }
            }

            if burning && (it + 1) % ADAPT_EVERY == 0 {
                eta_blk.adapt(self, &st);
                for u in 0..4 {
                    for t in 0..2 {
                        let r = theta_acc[u][t] as f64 / ADAPT_EVERY as f64;
                        theta_scale[u][t] *= (r - ACCEPT_TARGET).exp();
                        theta_acc[u][t] = 0;
                    }
                }
            }

            if !burning {
                for (c, &l) in label_counts.iter_mut().zip(&st.labels) {
                    c[l] += 1;
                }
                if (it - self.cfg.burn_in) % self.cfg.thin == 0 {
                    values.push(self.record(&st, &eta_blk));
                    iterations.push(it + 1);
                }
            }
        }
        let mut eta_acceptance = [f64::NAN; 4];
        for u in free_strata() {
            eta_acceptance[u] = post_acc[u] as f64 / self.cfg.iters as f64;
        }
        Ok(ChainDraws {
            values,
            iterations,
            label_counts,
            final_labels: st.labels.iter().map(|&u| StrataLabel::ALL[u]).collect(),
            eta_acceptance,
        })
    }

    fn update_gaussian(&self, st: &mut State, rng: &mut ChaCha8Rng) -> Result<()> {
        let k = self.d + 1;
        let pr = self.priors;
        for u in (0..4).filter(|&u| self.active[u]) {
            let sig2 = st.sigma[u].powi(2);
            let mut ztz = DMatrix::<f64>::zeros(k, k);
            let mut zty = DVector::<f64>::zeros(k);
            let mut z = vec![0.0; k];
            for (s, &l) in self.subjects.iter().zip(&st.labels) {
                let (Some(y), true) = (s.y, l == u) else { continue };
                z[..self.d].copy_from_slice(&s.x1);
                z[self.d] = s.t as f64;
                for a in 0..k {
                    zty[a] += z[a] * y;
                    for b in 0..=a {
                        ztz[(a, b)] += z[a] * z[b];
                    }
                }
            }
            let mut prec = DMatrix::<f64>::zeros(k, k);
            let mut rhs = DVector::<f64>::zeros(k);
            for a in 0..k {
                let prior = if a == self.d { pr.delta } else { pr.beta };
                let w = prior.sd.powi(-2);
                prec[(a, a)] = w;
                rhs[a] = w * prior.mean + zty[a] / sig2;
                for b in 0..=a {
                    let v = ztz[(a, b)] / sig2;
                    prec[(a, b)] += v;
                    if a != b {
                        prec[(b, a)] += v;
                    }
                }
            }
            let chol = prec.cholesky().ok_or_else(|| {
                Error::NonFiniteLikelihood(format!("posterior precision for stratum {} is singular", code(u)))
            })?;
            let mean = chol.solve(&rhs);
            let e = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dev = chol
                .l()
                .transpose()
                .solve_upper_triangular(&e)
                .expect("triangular factor is invertible");
            let draw = mean + dev;
            st.coef[u] = draw.iter().cloned().collect();

            // σ_u | β_u, δ_u, labels
            let c = &st.coef[u];
            let (mut nu, mut ss) = (0usize, 0.0);
            for (s, &l) in self.subjects.iter().zip(&st.labels) {
                let (Some(y), true) = (s.y, l == u) else { continue };
                let mut m = c[self.d] * s.t as f64;
                for (a, b) in c.iter().zip(&s.x1) {
                    m += a * b;
                }
                nu += 1;
                ss += (y - m).powi(2);
            }
            st.sigma[u] = slice_sigma(st.sigma[u], nu as f64, ss, pr.sigma, rng);
            if !(st.sigma[u] >= pr.sigma.lo && st.sigma[u] <= pr.sigma.hi) {
                return Err(Error::PriorSupportViolation(format!(
                    "sigma_{} = {} left its support",
                    code(u),
                    st.sigma[u]
                )));
            }
        }
        Ok(())
    }

    fn update_theta(
        &self,
        st: &mut State,
        rng: &mut ChaCha8Rng,
        scale: &mut [[f64; 2]; 4],
        acc: &mut [[usize; 2]; 4],
    ) {
        let mut k = [[0.0f64; 2]; 4];
        let mut m = [[0.0f64; 2]; 4];
        for (s, &l) in self.subjects.iter().zip(&st.labels) {
            if let Some(y) = s.y {
                k[l][s.t] += y;
                m[l][s.t] += 1.0;
            }
        }
        let prior = self.priors.beta;
        for u in (0..4).filter(|&u| self.active[u]) {
            let arms: &[usize] = if self.tied(u) { &[0] } else { &[0, 1] };
            for &t in arms {
                let (kk, mm) = if self.tied(u) {
                    (k[u][0] + k[u][1], m[u][0] + m[u][1])
                } else {
                    (k[u][t], m[u][t])
                };
                let lpost = |th: f64| kk * th - mm * log1pexp(th) + prior.log_density(th);
                let cur = st.theta[u][t];
                let sd = scale[u][t] * (1.0 / (0.25 * mm + prior.sd.powi(-2))).sqrt();
                let prop = cur + sd * rng.sample::<f64, _>(StandardNormal);
                let log_u = -rng.sample::<f64, _>(Exp1);
                if log_u < lpost(prop) - lpost(cur) {
                    st.theta[u][t] = prop;
                    acc[u][t] += 1;
                }
            }
            if self.tied(u) {
                st.theta[u][1] = st.theta[u][0];
            }
        }
    }

    fn record(&self, st: &State, eta: &EtaSampler) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.names.len());
        for u in (0..4).filter(|&u| self.active[u]) {
            match self.family {
                OutcomeFamily::Gaussian => {
                    out.extend_from_slice(&st.coef[u]);
                    out.push(st.sigma[u]);
                }
                OutcomeFamily::Bernoulli => {
                    let [a, b] = st.theta[u];
                    out.extend_from_slice(&[a, b, expit(b) - expit(a)]);
                }
            }
        }
        for u in free_strata() {
            out.extend_from_slice(&st.eta[u]);
        }
        out.extend_from_slice(&eta.marginal_probs());
        out
    }
}

/// Shrinkage slice sampler for `σ` with density `σ^{-n} exp(-ss / 2σ²)` on
/// `[lo, hi]` (a flat prior on σ times the Gaussian likelihood).
fn slice_sigma(cur: f64, n: f64, ss: f64, support: UniformPrior, rng: &mut ChaCha8Rng) -> f64 {
    let logf = |s: f64| -n * s.ln() - ss / (2.0 * s * s);
    let thr = logf(cur) - rng.sample::<f64, _>(Exp1);
    let (mut lo, mut hi) = (support.lo, support.hi);
    for _ in 0..SLICE_MAX_STEPS {
        let s = lo + rng.random::<f64>() * (hi - lo);
        if logf(s) >= thr {
            return s;
        }
        if s < cur {
            lo = s;
        } else {
            hi = s;
        }
    }
    cur
}

/// Metropolis updates for the softmax blocks with cached linear predictors.
struct EtaSampler {
    n: usize,
    d: usize,
    /// `n × 4` linear predictors, row-major.
    lp: Vec<f64>,
    lse: Vec<f64>,
    /// Cholesky factor of the proposal covariance per stratum.
    chol: [DMatrix<f64>; 4],
    scale: [f64; 4],
    accepted: [usize; 4],
    new_col: Vec<f64>,
    new_lse: Vec<f64>,
}

impl EtaSampler {
    fn new(model: &Model, st: &State) -> Self {
        let n = model.subjects.len();
        let d = model.d;
        let mut s = EtaSampler {
            n,
            d,
            lp: vec![0.0; n * 4],
            lse: vec![0.0; n],
            chol: Default::default(),
            scale: [2.38 / (d as f64).sqrt(); 4],
            accepted: [0; 4],
            new_col: vec![0.0; n],
            new_lse: vec![0.0; n],
        };
        for (i, sub) in model.subjects.iter().enumerate() {
            for u in 0..4 {
                s.lp[i * 4 + u] = dot(&st.eta[u], &sub.x1);
            }
            s.lse[i] = lse4(&s.lp[i * 4..i * 4 + 4]);
        }
        s.reshape(model, st);
        s
    }

    /// Proposal covariance from the inverse conditional information.
    fn reshape(&mut self, model: &Model, _st: &State) {
        let d = self.d;
        for u in free_strata() {
            let mut h = DMatrix::<f64>::zeros(d, d);
            for (i, sub) in model.subjects.iter().enumerate() {
                let p = (self.lp[i * 4 + u] - self.lse[i]).exp();
                let w = p * (1.0 - p);
                if w == 0.0 {
                    continue;
                }
                for a in 0..d {
                    for b in 0..=a {
                        h[(a, b)] += w * sub.x1[a] * sub.x1[b];
                    }
                }
            }
            for a in 0..d {
                for b in 0..a {
                    h[(b, a)] = h[(a, b)];
                }
                h[(a, a)] += model.priors.eta[u][a].sd.powi(-2);
            }
            let cov = h
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| DMatrix::identity(d, d));
            self.chol[u] = cov
                .cholesky()
                .map(|c| c.l())
                .unwrap_or_else(|| DMatrix::identity(d, d));
        }
    }

    fn adapt(&mut self, model: &Model, st: &State) {
        for u in free_strata() {
            let r = self.accepted[u] as f64 / ADAPT_EVERY as f64;
            if r < ACCEPT_BAND.0 || r > ACCEPT_BAND.1 {
                self.scale[u] *= (2.0 * (r - ACCEPT_TARGET)).exp();
            }
            self.accepted[u] = 0;
        }
        self.reshape(model, st);
    }

    fn update(&mut self, model: &Model, st: &mut State, u: usize, rng: &mut ChaCha8Rng) -> bool {
        let d = self.d;
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &self.chol[u] * z * self.scale[u];
        let prop: Vec<f64> = st.eta[u].iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let priors = &model.priors.eta[u];
        let mut delta: f64 = priors
            .iter()
            .zip(prop.iter().zip(&st.eta[u]))
            .map(|(pr, (new, old))| pr.log_density(*new) - pr.log_density(*old))
            .sum();
        for (i, sub) in model.subjects.iter().enumerate() {
            let c = dot(&prop, &sub.x1);
            let row = &self.lp[i * 4..i * 4 + 4];
            let mut tmp = [row[0], row[1], row[2], row[3]];
            tmp[u] = c;
            let l = lse4(&tmp);
            self.new_col[i] = c;
            self.new_lse[i] = l;
            if st.labels[i] == u {
                delta += c - row[u];
            }
            delta -= l - self.lse[i];
        }
        let log_u = -rng.sample::<f64, _>(Exp1);
        if delta.is_finite() && log_u < delta {
            for i in 0..self.n {
                self.lp[i * 4 + u] = self.new_col[i];
            }
            self.lse.copy_from_slice(&self.new_lse);
            st.eta[u] = prop;
            self.accepted[u] += 1;
            true
        } else {
            false
        }
    }

    /// Subject-averaged `π_u(x_i)`.
    fn marginal_probs(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for i in 0..self.n {
            for (u, o) in m.iter_mut().enumerate() {
                *o += (self.lp[i * 4 + u] - self.lse[i]).exp();
            }
        }
        m.map(|v| v / self.n as f64)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lse4(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Runs `cfg.chains` independent data-augmentation chains (concurrently)
/// and attaches split-R̂ / ESS diagnostics for every parameter.
pub fn gibbs_sample(ds: &TrialDataset, priors: &PriorSpec, cfg: &GibbsConfig) -> Result<PosteriorDraws> {
    let model = Model::new(ds, priors, cfg)?;
    let start = model.start();
    let chains: Vec<ChainDraws> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| model.run_chain(&start, c))
        .collect::<Result<_>>()?;
    let mut draws = PosteriorDraws {
        param_names: model.names.clone(),
        chains,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        iters: cfg.iters,
        seed: cfg.seed,
        family: model.family,
        reduced: cfg.reduced,
        exclusion: cfg.exclusion,
        n_subjects: ds.len(),
        diagnostics: Vec::new(),
        warnings: Vec::new(),
    };
    for (j, name) in draws.param_names.iter().enumerate() {
        let per: Vec<Vec<f64>> =
            draws.chains.iter().map(|c| c.values.iter().map(|r| r[j]).collect()).collect();
        draws.diagnostics.push(ParamDiagnostic {
            param: name.clone(),
            rhat: split_rhat(&per),
            ess: effective_sample_size(&per),
        });
    }
    let effect = draws.effect_param();
    if let Ok(d) = draws.diagnostic(effect) {
        if d.rhat > 1.05 {
            let msg = format!("{effect}: split R-hat {:.3} exceeds 1.05", d.rhat);
            draws.warnings.push(msg);
        }
    }
    for (c, ch) in draws.chains.iter().enumerate() {
        for u in free_strata() {
            let a = ch.eta_acceptance[u];
            if a < 0.1 || a > 0.7 {
                draws.warnings.push(format!(
                    "chain {c}: eta_{} acceptance {a:.2} outside the tuned range",
                    code(u)
                ));
            }
        }
    }
    if ds.arm_count(Arm::Treated) == 0 || ds.arm_count(Arm::Control) == 0 {
        draws.warnings.push("one arm is empty".into());
    }
    Ok(draws)
}

/// Report for the S00 contrast: posterior mean and equal-tailed interval.
pub fn bayes_report(draws: &PosteriorDraws, level: f64) -> Result<EstimateReport> {
    let effect = draws.effect_param();
    let s = posterior_summary(draws, effect, level)?;
    let method = if draws.reduced { "bayes_mixture_reduced" } else { "bayes_mixture" };
    let mut rep = EstimateReport::new(method, "S00", s.mean, draws.n_subjects)
        .with_ci(s.ci[0], s.ci[1], level)
        .assume(&[tags::SUTVA, tags::RANDOMIZATION, "monotonicity_by_prior"])
        .extra("posterior_sd", s.sd)
        .extra("rhat", s.rhat)
        .extra("ess", s.ess)
        .extra("max_rhat", draws.max_rhat())
        .extra("chains", draws.chains.len() as f64)
        .extra("iterations", draws.iters as f64)
        .extra("burn_in", draws.burn_in as f64);
    rep.se = Some(s.sd);
    if draws.exclusion {
        rep = rep.assume(&[tags::EXCLUSION]);
    }
    for u in 0..4 {
        let name = format!("pi_{}", code(u));
        let v = draws.draws(&name)?;
        rep = rep.extra(&format!("{name}_mean"), stats::mean(&v));
    }
    for w in &draws.warnings {
        rep.warn(w.clone());
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub prior: NormalPrior,
    pub effect: PosteriorSummary,
    /// Subject-averaged `π_01`.
    pub pi01: PosteriorSummary,
    pub max_rhat: f64,
}

/// One sampler run per intercept prior for `η_01`, everything else as in
/// `base`. Rows share the seed so differences reflect the prior rather than
/// Monte Carlo noise. Errors are kept per row.
pub fn prior_sensitivity_sweep(
    ds: &TrialDataset,
    eta01_intercept_priors: &[NormalPrior],
    base: &PriorSpec,
    cfg: &GibbsConfig,
) -> Vec<(NormalPrior, Result<SweepRow>)> {
    eta01_intercept_priors
        .iter()
        .map(|&prior| {
            let row = (|| {
                prior.validate("eta_01 intercept")?;
                let priors = base.clone().with_eta01_intercept(prior);
                let draws = gibbs_sample(ds, &priors, cfg)?;
                Ok(SweepRow {
                    prior,
                    effect: posterior_summary(&draws, draws.effect_param(), 0.95)?,
                    pi01: posterior_summary(&draws, "pi_01", 0.95)?,
                    max_rhat: draws.max_rhat(),
                })
            })();
            (prior, row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventCoding, OutcomeDirection, SubjectRecord};
    use crate::numerics::stream;

    #[test]
    fn softmax_identities() {
        let sm = StrataSoftmax::zeros(2);
        let p = sm.probs(&[1.0, 0.3, -2.0]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let mut eta = DMatrix::zeros(4, 3);
        eta[(1, 0)] = -50.0;
        let p = strata_probs(&StrataSoftmax::new(eta.clone()).unwrap(), &[1.0, 0.0, 0.0]).unwrap();
        assert!(p[1] < 1e-20);
        for u in [0, 2, 3] {
            assert!((p[u] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(matches!(
            strata_probs(&StrataSoftmax::new(eta).unwrap(), &[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn priors_are_validated() {
        let mut p = PriorSpec::default_for(1);
        p.validate(1).unwrap();
        assert!(matches!(p.validate(2), Err(Error::DimensionMismatch { .. })));
        p.sigma = UniformPrior { lo: 2.0, hi: 1.0 };
        assert!(matches!(p.validate(1), Err(Error::PriorSupportViolation(_))));
        let mut p = PriorSpec::default_for(1);
        p.eta[REFERENCE.index()] = vec![NormalPrior::new(0.0, 1.0); 2];
        assert!(matches!(p.validate(1), Err(Error::PriorSupportViolation(_))));
        let p = PriorSpec::default_for(1).with_eta01_intercept(NormalPrior::new(0.0, 0.0));
        assert!(matches!(p.validate(1), Err(Error::PriorSupportViolation(_))));
    }

    #[test]
    fn slice_sampler_matches_inverse_gamma() {
        // σ² ~ InvGamma((n-1)/2, ss/2) for a flat prior on σ; E[σ²] = ss/(n-3).
        let mut rng = stream(1, &[]);
        let (n, ss) = (40.0, 80.0);
        let sup = UniformPrior { lo: 0.01, hi: 20.0 };
        let mut s = 1.0;
        let mut acc = 0.0;
        let m = 40_000;
        for _ in 0..m {
            s = slice_sigma(s, n, ss, sup, &mut rng);
            acc += s * s;
        }
        let want = ss / (n - 3.0);
        assert!((acc / m as f64 - want).abs() < 0.03 * want, "{} vs {want}", acc / m as f64);
    }

    fn toy(n: usize, seed: u64) -> TrialDataset {
        // Monotone two-covariate mixture; Y observed for everyone.
        let mut rng = stream(seed, &[]);
        let mut recs = Vec::new();
        for i in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let lp = [0.5 + 0.5 * x, f64::NEG_INFINITY, 0.0, -0.3 - 0.4 * x];
            let p = softmax(&lp);
            let r: f64 = rng.random();
            let u = if r < p[0] { 0 } else if r < p[0] + p[2] { 2 } else { 3 };
            let lab = StrataLabel::ALL[u];
            let t: u8 = rng.random_range(0..2);
            let base = [0.0, 0.0, 1.5, -1.5][u] + 0.5 * x;
            let eff = [-0.25, 0.0, 0.5, 0.0][u];
            let y = base + eff * t as f64 + 0.5 * rng.sample::<f64, _>(StandardNormal);
            let s = lab.s_at(Arm::from_bit(t));
            recs.push(SubjectRecord::new(format!("{i}"), t, s, Some(y), vec![x]));
        }
        TrialDataset::new(
            recs,
            vec!["x1".into()],
            vec![],
            EventCoding::event_no_harmed(),
            OutcomeDirection::HigherIsBetter,
        )
        .unwrap()
    }

    fn quick() -> GibbsConfig {
        GibbsConfig { iters: 400, burn_in: 300, chains: 2, seed: 9, ..Default::default() }
    }

    #[test]
    fn labels_respect_cells_and_chains_replay() {
        let ds = toy(400, 2);
        let cfg = quick();
        let a = gibbs_sample(&ds, &PriorSpec::default_for(1), &cfg).unwrap();
        let b = gibbs_sample(&ds, &PriorSpec::default_for(1), &cfg).unwrap();
        // NaN acceptance slots make `==` unusable; compare the exports.
        let csv = |d: &PosteriorDraws| {
            let mut buf = Vec::new();
            d.write_csv_to(&mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&a), csv(&b));
        assert_eq!(a.chains[1].label_counts, b.chains[1].label_counts);
        for ch in &a.chains {
            for (r, lab) in ds.records().iter().zip(&ch.final_labels) {
                assert_eq!(lab.s_at(r.arm()), r.event);
            }
            for (r, c) in ds.records().iter().zip(&ch.label_counts) {
                for u in StrataLabel::ALL {
                    if u.s_at(r.arm()) != r.event {
                        assert_eq!(c[u.index()], 0);
                    }
                }
            }
            for row in &ch.values {
                let s: f64 = ["pi_00", "pi_01", "pi_10", "pi_11"]
                    .iter()
                    .map(|p| row[a.param_index(p).unwrap()])
                    .sum();
                assert!((s - 1.0).abs() < 1e-12);
                let sig = row[a.param_index("sigma_00").unwrap()];
                assert!((0.01..=20.0).contains(&sig));
            }
        }
        let mut buf = Vec::new();
        a.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("chain,iter,param,value\n0,301,beta_00_intercept,"));
    }

    #[test]
    fn recovers_always_adherer_effect() {
        let ds = toy(2000, 4);
        let draws = gibbs_sample(&ds, &PriorSpec::default_for(1), &quick()).unwrap();
        let s = posterior_summary(&draws, "delta_00", 0.95).unwrap();
        assert!((s.mean + 0.25).abs() < 0.1, "{s:?}");
        assert!(s.ci[0] < -0.25 && s.ci[1] > -0.25);
        assert!(s.rhat < 1.1, "{s:?}");
        let pi01 = posterior_summary(&draws, "pi_01", 0.95).unwrap();
        assert!(pi01.mean < 1e-15);
    }

    #[test]
    fn reduced_model_drops_doomed_outcomes() {
        let full = toy(600, 5);
        let recs = full
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.event == 1 {
                    r.outcome = None;
                }
                r
            })
            .collect();
        let ds = TrialDataset::new(
            recs,
            vec!["x1".into()],
            vec![],
            EventCoding::event_no_harmed(),
            OutcomeDirection::HigherIsBetter,
        )
        .unwrap();
        let cfg = quick();
        assert!(matches!(
            gibbs_sample(&ds, &PriorSpec::default_for(1), &cfg),
            Err(Error::PreconditionFailed(_))
        ));
        let draws = gibbs_sample(&ds, &PriorSpec::default_for(1), &GibbsConfig { reduced: true, ..cfg }).unwrap();
        assert!(draws.param_index("delta_11").is_err());
        assert!(draws.param_index("pi_11").is_ok());
        assert!(matches!(
            posterior_summary(&draws, "nope", 0.95),
            Err(Error::UnknownParameter(_))
        ));
    }

    #[test]
    fn bernoulli_mode_with_exclusion() {
        let mut rng = stream(3, &[]);
        let recs: Vec<SubjectRecord> = (0..600)
            .map(|i| {
                let t: u8 = (i % 2) as u8;
                let s: u8 = rng.random_bool(0.3) as u8;
                let y = rng.random_bool(if t == 1 { 0.6 } else { 0.4 }) as u8 as f64;
                SubjectRecord::new(format!("{i}"), t, s, Some(y), vec![])
            })
            .collect();
        let ds = TrialDataset::new(recs, vec![], vec![], EventCoding::event_no_harmed(), OutcomeDirection::HigherIsBetter)
            .unwrap();
        let cfg = GibbsConfig { exclusion: true, ..quick() };
        let draws = gibbs_sample(&ds, &PriorSpec::default_for(0), &cfg).unwrap();
        assert_eq!(draws.family, OutcomeFamily::Bernoulli);
        let rd = draws.draws("rd_00").unwrap();
        assert!(rd.iter().all(|v| *v == 0.0));
        let rep = bayes_report(&draws, 0.95).unwrap();
        assert_eq!(rep.point, 0.0);
        let cfg = quick();
        let free = gibbs_sample(&ds, &PriorSpec::default_for(0), &cfg).unwrap();
        let s = posterior_summary(&free, "rd_00", 0.9).unwrap();
        assert!((s.mean - 0.2).abs() < 0.12, "{s:?}");
    }

    #[test]
    fn constant_draws_summarize_exactly() {
        let draws = PosteriorDraws {
            param_names: vec!["c".into()],
            chains: vec![ChainDraws {
                values: vec![vec![2.5]; 150],
                iterations: (1..=150).collect(),
                label_counts: vec![],
                final_labels: vec![],
                eta_acceptance: [f64::NAN; 4],
            }],
            burn_in: 0,
            thin: 1,
            iters: 150,
            seed: 0,
            family: OutcomeFamily::Gaussian,
            reduced: false,
            exclusion: false,
            n_subjects: 0,
            diagnostics: vec![],
            warnings: vec![],
        };
        let s = posterior_summary(&draws, "c", 0.95).unwrap();
        assert_eq!((s.mean, s.ci), (2.5, [2.5, 2.5]));
    }
}
