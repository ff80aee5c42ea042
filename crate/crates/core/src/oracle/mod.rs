//! Potential-outcome simulation oracle.
//!
//! A [`DGPConfig`] describes covariates, a strata mechanism, an outcome
//! mechanism, an optional staged intermediate structure and treatment
//! assignment. [`generate`] draws a full counterfactual table
//! ([`PotentialOutcomeTable`]) and the observed [`TrialDataset`] obtained by
//! revealing only the assigned arm. Stratum effects are then exact
//! finite-population means, which the test suites use as ground truth.
//!
//! Each subject draws from its own counter-based stream, so output depends
//! only on `(config, seed)`.

mod presets;

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    write_csv_to, Arm, EventCoding, OutcomeDirection, StrataLabel, StratumSet, SubjectRecord, TrialDataset,
};
use crate::error::{Error, Result};
use crate::numerics::{expit, stream, tag};

pub use presets::{preset, PRESET_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDist {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// How `(S(0), S(1))` is generated.
///
/// Every linear predictor takes `(1, x)`; `u` is a latent standard normal
/// that may also enter the outcome (a confounder of strata and outcome),
/// `w` is a second latent that only touches the strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrataMechanism {
    /// `Pr(U = u | x) ∝ exp(η_u'(1, x) + λ_u u)`; a `None` coefficient
    /// vector gives that stratum zero mass.
    MultinomialLogit {
        eta: [Option<Vec<f64>>; 4],
        #[serde(default)]
        latent: [f64; 4],
    },
    /// `S(0)` and `S(1)` independent Bernoulli given `x`, with logits for
    /// `Pr(S(t) = 1 | x)`. `shared` loads both on the strata-only latent,
    /// breaking cross-world independence without touching the outcome.
    IndependentConditional {
        s0: Vec<f64>,
        s1: Vec<f64>,
        #[serde(default)]
        latent: f64,
        #[serde(default)]
        shared: f64,
    },
    /// Outcome-dependent selection under monotonicity. `S(mixed)` has logit
    /// `s_mixed'(1, x)`; subjects with `S(mixed) = 0` get `S(other) = 0` with
    /// probability `expit(alpha + beta·Y(mixed))`; subjects with
    /// `S(mixed) = 1` get `S(other) = 0` with probability `violation`.
    OutcomeSelection {
        mixed: Arm,
        s_mixed: Vec<f64>,
        alpha: f64,
        beta: f64,
        #[serde(default)]
        violation: f64,
    },
    /// `S(t)` is the union of the staged events in arm `t`.
    Staged,
}

/// Outcome model `Y(t) = a_t + b_t'x + c_t'Z(t) + shift[t][U] + λ u + ε_t`.
///
/// For binary outcomes the linear predictor is a logit and `ε` enters
/// through a Gaussian copula, so `rho` still couples the two arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMechanism {
    pub intercept: [f64; 2],
    #[serde(default)]
    pub slope: [Vec<f64>; 2],
    /// Additive shift per arm and stratum (indexed S00, S01, S10, S11).
    #[serde(default)]
    pub stratum_shift: [[f64; 4]; 2],
    #[serde(default)]
    pub z_slope: [Vec<f64>; 2],
    #[serde(default)]
    pub latent: f64,
    pub noise_sd: f64,
    /// Cross-world residual correlation.
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub binary: bool,
    /// Force `Y(1) = Y(0)` whenever `S(0) = S(1)`.
    #[serde(default)]
    pub exclusion: bool,
}

/// One coordinate-wise linear Gaussian block: coordinate `j` is
/// `coefs[j]'(1, x, z^(<k)) + noise_sd·N(0,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockModel {
    pub coefs: Vec<Vec<f64>>,
    pub noise_sd: f64,
}

/// Staged intercurrent events with intermediate blocks.
///
/// There are `block_dims.len() + 1` stages. Stage `k` has logit
/// `stage_logits[k]'(1, x, z^(<k)) + latent·u` for *no* event given no
/// earlier event, identical across arms. Block `k` and the outcome are
/// unobserved once an event has occurred at stage `≤ k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedSpec {
    pub block_dims: Vec<usize>,
    /// `z_models[t][k]`.
    pub z_models: [Vec<BlockModel>; 2],
    pub stage_logits: Vec<Vec<f64>>,
    #[serde(default)]
    pub latent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assignment {
    /// Independent Bernoulli(p) per subject.
    Randomized { p: f64 },
    /// `Pr(T = 1 | x) = expit(coef'(1, x) + latent·u)`.
    Confounded {
        coef: Vec<f64>,
        #[serde(default)]
        latent: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DGPConfig {
    pub name: String,
    pub n: usize,
    pub covariates: Vec<CovariateDist>,
    pub strata: StrataMechanism,
    pub outcome: OutcomeMechanism,
    #[serde(default)]
    pub staged: Option<StagedSpec>,
    pub assignment: Assignment,
    pub coding: EventCoding,
    pub direction: OutcomeDirection,
    /// Reveal `Y` for subjects with `S = 1` (actual-treatment coding).
    #[serde(default)]
    pub observe_outcome_after_event: bool,
}

fn lin(coef: &[f64], v: &[f64]) -> f64 {
    coef.iter().zip(v).map(|(c, x)| c * x).sum()
}

fn check_len(what: &str, v: &[f64], want: usize) -> Result<()> {
    if !v.is_empty() && v.len() != want {
        return Err(Error::InvalidConfig(format!(
            "{what}: expected {want} coefficients, found {}",
            v.len()
        )));
    }
    Ok(())
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("{what} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

impl DGPConfig {
    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.p()).map(|j| format!("x{j}")).collect()
    }

    pub fn block_names(&self) -> Vec<Vec<String>> {
        self.staged
            .as_ref()
            .map(|s| {
                s.block_dims
                    .iter()
                    .map(|&d| (1..=d).map(|j| format!("c{j}")).collect())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn z_total(&self) -> usize {
        self.staged.as_ref().map(|s| s.block_dims.iter().sum()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let k1 = p + 1;
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        for (j, c) in self.covariates.iter().enumerate() {
            match *c {
                CovariateDist::Normal { sd, .. } if sd.is_nan() || sd < 0.0 => {
                    return Err(Error::InvalidConfig(format!("covariate {j}: negative sd")));
                }
                CovariateDist::Bernoulli { p } => check_prob("covariate probability", p)?,
                CovariateDist::Uniform { lo, hi } if !(lo < hi) => {
                    return Err(Error::InvalidConfig(format!("covariate {j}: empty range")));
                }
                _ => {}
            }
        }
        match &self.strata {
            StrataMechanism::MultinomialLogit { eta, latent } => {
                if eta.iter().all(Option::is_none) {
                    return Err(Error::InvalidConfig("all strata have zero mass".into()));
                }
                for (u, e) in eta.iter().enumerate() {
                    if let Some(e) = e {
                        check_len(&format!("eta[{u}]"), e, k1)?;
                    }
                }
                if latent.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig("non-finite latent loading".into()));
                }
            }
            StrataMechanism::IndependentConditional { s0, s1, .. } => {
                check_len("s0", s0, k1)?;
                check_len("s1", s1, k1)?;
            }
            StrataMechanism::OutcomeSelection {
                s_mixed, violation, ..
            } => {
                check_len("s_mixed", s_mixed, k1)?;
                check_prob("violation", *violation)?;
                if self.outcome.stratum_shift.iter().flatten().any(|&v| v != 0.0) {
                    return Err(Error::InvalidConfig(
                        "outcome-selection strata are drawn after the outcome; stratum shifts must be zero"
                            .into(),
                    ));
                }
            }
            StrataMechanism::Staged => {
                if self.staged.is_none() {
                    return Err(Error::InvalidConfig("staged strata need a staged spec".into()));
                }
            }
        }
        let o = &self.outcome;
        if !(-1.0..=1.0).contains(&o.rho) {
            return Err(Error::InvalidConfig(format!("rho must lie in [-1, 1], got {}", o.rho)));
        }
        if o.noise_sd.is_nan() || o.noise_sd < 0.0 {
            return Err(Error::InvalidConfig("noise_sd must be non-negative".into()));
        }
        for t in 0..2 {
            check_len("outcome slope", &o.slope[t], p)?;
            check_len("outcome z_slope", &o.z_slope[t], self.z_total())?;
        }
        if let Some(s) = &self.staged {
            let nb = s.block_dims.len();
            if s.stage_logits.len() != nb + 1 {
                return Err(Error::InvalidConfig(format!(
                    "{} blocks need {} stage logits, found {}",
                    nb,
                    nb + 1,
                    s.stage_logits.len()
                )));
            }
            let mut width = k1;
            for k in 0..=nb {
                check_len(&format!("stage {k} logit"), &s.stage_logits[k], width)?;
                if k < nb {
                    for t in 0..2 {
                        let b = s.z_models[t].get(k).ok_or_else(|| {
                            Error::InvalidConfig(format!("arm {t}: missing model for block {k}"))
                        })?;
                        if b.coefs.len() != s.block_dims[k] {
                            return Err(Error::InvalidConfig(format!(
                                "arm {t} block {k}: expected {} coordinates",
                                s.block_dims[k]
                            )));
                        }
                        for c in &b.coefs {
                            check_len("block coefficients", c, width)?;
                        }
                    }
                    width += s.block_dims[k];
                }
            }
        }
        match &self.assignment {
            Assignment::Randomized { p } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "randomization probability must lie in (0, 1), got {p}"
                    )));
                }
            }
            Assignment::Confounded { coef, .. } => check_len("assignment", coef, k1)?,
        }
        Ok(())
    }
}

/// One row of the counterfactual table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialRow {
    pub x: Vec<f64>,
    pub trt: u8,
    pub s: [u8; 2],
    pub y: [f64; 2],
    /// Per-arm stage events; `None` after the first event.
    #[serde(default)]
    pub stages: [Vec<Option<u8>>; 2],
    /// Per-arm intermediate blocks, drawn in full regardless of events.
    #[serde(default)]
    pub z: [Vec<Vec<f64>>; 2],
}

impl PotentialRow {
    /// A row without staged structure.
    pub fn simple(x: Vec<f64>, trt: u8, s0: u8, s1: u8, y0: f64, y1: f64) -> Self {
        PotentialRow {
            x,
            trt,
            s: [s0, s1],
            y: [y0, y1],
            stages: Default::default(),
            z: Default::default(),
        }
    }

    pub fn stratum(&self) -> StrataLabel {
        StrataLabel::from_pair(self.s[0], self.s[1])
    }

    fn reveal(&self, id: usize, observe_after: bool) -> SubjectRecord {
        let t = self.trt as usize;
        let s = self.s[t];
        let outcome = (s == 0 || observe_after).then_some(self.y[t]);
        let mut rec = SubjectRecord::new((id + 1).to_string(), self.trt, s, outcome, self.x.clone());
        rec.stage_events = self.stages[t].clone();
        rec.intermediate = self.z[t]
            .iter()
            .enumerate()
            .map(|(k, b)| (self.stages[t].get(k) == Some(&Some(0))).then(|| b.clone()))
            .collect();
        rec
    }
}

/// Metadata needed to reveal a table as a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub covariate_names: Vec<String>,
    pub block_names: Vec<Vec<String>>,
    pub coding: EventCoding,
    pub direction: OutcomeDirection,
    pub observe_outcome_after_event: bool,
}

/// Full counterfactual table for a finite population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomeTable {
    rows: Vec<PotentialRow>,
    meta: TableMeta,
}

impl PotentialOutcomeTable {
    pub fn from_rows(rows: Vec<PotentialRow>, meta: TableMeta) -> Self {
        PotentialOutcomeTable { rows, meta }
    }

    pub fn rows(&self) -> &[PotentialRow] {
        &self.rows
    }

    pub fn meta(&self) -> &TableMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn stratum_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for r in &self.rows {
            c[r.stratum().index()] += 1;
        }
        c
    }

    /// Population share of a stratum union.
    pub fn share(&self, set: StratumSet) -> f64 {
        let k = self.rows.iter().filter(|r| set.contains(r.stratum())).count();
        k as f64 / self.rows.len().max(1) as f64
    }

    fn members(&self, set: StratumSet) -> Result<Vec<&PotentialRow>> {
        let m: Vec<_> = self.rows.iter().filter(|r| set.contains(r.stratum())).collect();
        if m.is_empty() {
            return Err(Error::EmptyStratum(set.describe()));
        }
        Ok(m)
    }

    /// Mean of `Y(t)` over a stratum union.
    pub fn mean_po(&self, arm: Arm, set: StratumSet) -> Result<f64> {
        let m = self.members(set)?;
        Ok(m.iter().map(|r| r.y[arm.index()]).sum::<f64>() / m.len() as f64)
    }

    /// Mean of `Y(1) − Y(0)` over a stratum union.
    pub fn effect(&self, set: StratumSet) -> Result<f64> {
        let m = self.members(set)?;
        Ok(m.iter().map(|r| r.y[1] - r.y[0]).sum::<f64>() / m.len() as f64)
    }

    /// Mean of `Y(t)` over the subjects with `S(t') = 0`, an arm-specific
    /// union used by the staged estimands.
    pub fn mean_po_where(&self, arm: Arm, pred: impl Fn(&PotentialRow) -> bool) -> Result<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| pred(r)).map(|r| r.y[arm.index()]).collect();
        if v.is_empty() {
            return Err(Error::EmptyStratum("selection".into()));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Observed dataset: only arm-consistent values are revealed.
    pub fn observed(&self) -> Result<TrialDataset> {
        let recs: Vec<SubjectRecord> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.reveal(i, self.meta.observe_outcome_after_event))
            .collect();
        TrialDataset::new(
            recs,
            self.meta.covariate_names.clone(),
            self.meta.block_names.clone(),
            self.meta.coding,
            self.meta.direction,
        )
    }

    /// Writes the observed schema with `s0,s1,y0,y1` appended.
    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let ds = self.observed()?;
        let headers: Vec<String> = ["s0", "s1", "y0", "y1"].iter().map(|s| s.to_string()).collect();
        let extra: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.s[0].to_string(),
                    r.s[1].to_string(),
                    r.y[0].to_string(),
                    r.y[1].to_string(),
                ]
            })
            .collect();
        write_csv_to(&ds, w, &headers, Some(&extra))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(f))
    }
}

/// Reads a table written by [`PotentialOutcomeTable::write_csv_to`].
/// Staged columns are not reconstructed; the observed schema must carry
/// `s0,s1,y0,y1`.
pub fn read_table_csv<R: Read>(
    mut r: R,
    coding: EventCoding,
    direction: OutcomeDirection,
) -> Result<PotentialOutcomeTable> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let ds = crate::data::read_csv(buf.as_slice(), &crate::data::ColumnMapping::default(), coding, direction)?;
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx = [col("s0")?, col("s1")?, col("y0")?, col("y1")?];
    let mut rows = Vec::with_capacity(ds.len());
    for (i, (rec, r)) in rdr.records().zip(ds.records()).enumerate() {
        let rec = rec?;
        let mut v = [0.0; 4];
        for (k, &j) in idx.iter().enumerate() {
            v[k] = rec.get(j).unwrap_or("").trim().parse::<f64>().map_err(|_| Error::MalformedRow {
                row: i + 1,
                column: headers[j].clone(),
                reason: "expected a number".into(),
            })?;
        }
        let s0 = v[0] as u8;
        let s1 = v[1] as u8;
        if v[0] != s0 as f64 || v[1] != s1 as f64 || s0 > 1 || s1 > 1 {
            return Err(Error::MalformedRow {
                row: i + 1,
                column: "s0/s1".into(),
                reason: "potential strata must be 0/1".into(),
            });
        }
        if r.event != [s0, s1][r.trt as usize] {
            return Err(Error::InvalidDataset(format!("row {}: observed event disagrees with s{}", i + 1, r.trt)));
        }
        rows.push(PotentialRow::simple(r.baseline.clone(), r.trt, s0, s1, v[2], v[3]));
    }
    let observe_after = ds.records().iter().any(|r| r.event == 1 && r.outcome.is_some());
    Ok(PotentialOutcomeTable::from_rows(
        rows,
        TableMeta {
            covariate_names: ds.covariate_names().to_vec(),
            block_names: vec![],
            coding,
            direction,
            observe_outcome_after_event: observe_after,
        },
    ))
}

/// Exact mean of `Y(1) − Y(0)` over the subjects of `set`.
pub fn true_principal_effect(table: &PotentialOutcomeTable, set: StratumSet) -> Result<f64> {
    table.effect(set)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn bern(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    (rng.random::<f64>() < p) as u8
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

fn draw_row(cfg: &DGPConfig, seed: u64, i: usize) -> PotentialRow {
    let mut rng = stream(seed, &[tag("oracle-subject"), i as u64]);
    let x: Vec<f64> = cfg
        .covariates
        .iter()
        .map(|c| match *c {
            CovariateDist::Normal { mean, sd } => mean + sd * normal(&mut rng),
            CovariateDist::Bernoulli { p } => bern(&mut rng, p) as f64,
            CovariateDist::Uniform { lo, hi } => rng.random_range(lo..hi),
        })
        .collect();
    let mut x1 = Vec::with_capacity(x.len() + 1);
    x1.push(1.0);
    x1.extend_from_slice(&x);
    let u = normal(&mut rng);
    let w = normal(&mut rng);

    let trt = match &cfg.assignment {
        Assignment::Randomized { p } => bern(&mut rng, *p),
        Assignment::Confounded { coef, latent } => bern(&mut rng, expit(lin(coef, &x1) + latent * u)),
    };

    // Staged intermediates and events per arm.
    let mut stages: [Vec<Option<u8>>; 2] = Default::default();
    let mut z: [Vec<Vec<f64>>; 2] = Default::default();
    let mut zflat: [Vec<f64>; 2] = Default::default();
    if let Some(st) = &cfg.staged {
        for t in 0..2 {
            let mut design = x1.clone();
            let mut evented = false;
            for k in 0..=st.block_dims.len() {
                let p_free = expit(lin(&st.stage_logits[k], &design) + st.latent * u);
                let draw: f64 = rng.random();
                if evented {
                    stages[t].push(None);
                } else if draw < p_free {
                    stages[t].push(Some(0));
                } else {
                    stages[t].push(Some(1));
                    evented = true;
                }
                if k < st.block_dims.len() {
                    let bm = &st.z_models[t][k];
                    let block: Vec<f64> = bm
                        .coefs
                        .iter()
                        .map(|c| lin(c, &design) + bm.noise_sd * normal(&mut rng))
                        .collect();
                    design.extend_from_slice(&block);
                    z[t].push(block);
                }
            }
            zflat[t] = design[x1.len()..].to_vec();
        }
    }

    let o = &cfg.outcome;
    let e0 = normal(&mut rng);
    let e1 = o.rho * e0 + (1.0 - o.rho * o.rho).max(0.0).sqrt() * normal(&mut rng);
    let eps = [e0, e1];
    let base: Vec<f64> = (0..2)
        .map(|t| o.intercept[t] + lin(&o.slope[t], &x) + lin(&o.z_slope[t], &zflat[t]) + o.latent * u)
        .collect();
    let outcome = |t: usize, shift: f64| -> f64 {
        let m = base[t] + shift;
        if o.binary {
            (std_normal_cdf(eps[t]) < expit(m)) as u8 as f64
        } else {
            m + o.noise_sd * eps[t]
        }
    };

    let s: [u8; 2];
    let mut y: [f64; 2];
    match &cfg.strata {
        StrataMechanism::OutcomeSelection {
            mixed,
            s_mixed,
            alpha,
            beta,
            violation,
        } => {
            y = [outcome(0, 0.0), outcome(1, 0.0)];
            let m = mixed.index();
            let sm = bern(&mut rng, expit(lin(s_mixed, &x1)));
            let so = if sm == 0 {
                1 - bern(&mut rng, expit(alpha + beta * y[m]))
            } else {
                1 - bern(&mut rng, *violation)
            };
            let mut pair = [0u8; 2];
            pair[m] = sm;
            pair[1 - m] = so;
            s = pair;
        }
        mech => {
            s = match mech {
                StrataMechanism::MultinomialLogit { eta, latent } => {
                    let scores: Vec<Option<f64>> = eta
                        .iter()
                        .zip(latent)
                        .map(|(e, l)| e.as_ref().map(|e| lin(e, &x1) + l * u))
                        .collect();
                    let mx = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let wts: Vec<f64> = scores
                        .iter()
                        .map(|s| s.map(|v| (v - mx).exp()).unwrap_or(0.0))
                        .collect();
                    let total: f64 = wts.iter().sum();
                    let mut draw = rng.random::<f64>() * total;
                    let mut pick = wts.iter().rposition(|&v| v > 0.0).unwrap_or(0);
                    for (k, &v) in wts.iter().enumerate() {
                        if v > 0.0 && draw < v {
                            pick = k;
                            break;
                        }
                        draw -= v;
                    }
                    let lab = StrataLabel::ALL[pick];
                    [lab.s0(), lab.s1()]
                }
                StrataMechanism::IndependentConditional {
                    s0,
                    s1,
                    latent,
                    shared,
                } => {
                    let a = bern(&mut rng, expit(lin(s0, &x1) + latent * u + shared * w));
                    let b = bern(&mut rng, expit(lin(s1, &x1) + latent * u + shared * w));
                    [a, b]
                }
                StrataMechanism::Staged => {
                    let any = |v: &Vec<Option<u8>>| v.iter().flatten().any(|&e| e == 1) as u8;
                    [any(&stages[0]), any(&stages[1])]
                }
                StrataMechanism::OutcomeSelection { .. } => unreachable!(),
            };
            let ui = StrataLabel::from_pair(s[0], s[1]).index();
            y = [outcome(0, o.stratum_shift[0][ui]), outcome(1, o.stratum_shift[1][ui])];
        }
    }
    if o.exclusion && s[0] == s[1] {
        y[1] = y[0];
    }
    PotentialRow {
        x,
        trt,
        s,
        y,
        stages,
        z,
    }
}

/// Draws a population and reveals it. Deterministic in `(config, seed)` and
/// independent of the thread count.
pub fn generate(config: &DGPConfig, seed: u64) -> Result<(PotentialOutcomeTable, TrialDataset)> {
    config.validate()?;
    let rows: Vec<PotentialRow> = (0..config.n)
        .into_par_iter()
        .map(|i| draw_row(config, seed, i))
        .collect();
    let table = PotentialOutcomeTable::from_rows(
        rows,
        TableMeta {
            covariate_names: config.covariate_names(),
            block_names: config.block_names(),
            coding: config.coding,
            direction: config.direction,
            observe_outcome_after_event: config.observe_outcome_after_event,
        },
    );
    let ds = table.observed()?;
    Ok((table, ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Monotonicity;

    #[test]
    fn table_csv_round_trips_effects() {
        let cfg = preset("iv_compliance").unwrap().with_n(500);
        let (t, _) = generate(&cfg, 9).unwrap();
        let mut buf = Vec::new();
        t.write_csv_to(&mut buf).unwrap();
        let back = read_table_csv(buf.as_slice(), cfg.coding, cfg.direction).unwrap();
        assert_eq!(back.stratum_counts(), t.stratum_counts());
        for u in StrataLabel::ALL {
            let set = StratumSet::single(u);
            if t.share(set) > 0.0 {
                assert!((back.effect(set).unwrap() - t.effect(set).unwrap()).abs() < 1e-12);
            }
        }
        assert_eq!(back.observed().unwrap(), t.observed().unwrap());
    }

    fn hand_table() -> PotentialOutcomeTable {
        // Ten subjects; compliers (S01) have Y(1) − Y(0) = 2.
        let rows = vec![
            PotentialRow::simple(vec![], 1, 0, 1, 1.0, 3.0),
            PotentialRow::simple(vec![], 0, 0, 1, 2.0, 4.0),
            PotentialRow::simple(vec![], 1, 0, 1, 0.0, 2.0),
            PotentialRow::simple(vec![], 0, 0, 1, 1.5, 3.5),
            PotentialRow::simple(vec![], 1, 0, 0, 1.0, 1.0),
            PotentialRow::simple(vec![], 0, 0, 0, 2.0, 2.0),
            PotentialRow::simple(vec![], 1, 1, 1, 5.0, 5.0),
            PotentialRow::simple(vec![], 0, 1, 1, 4.0, 4.0),
            PotentialRow::simple(vec![], 1, 0, 1, 2.0, 4.0),
            PotentialRow::simple(vec![], 0, 0, 0, 0.5, 0.5),
        ];
        PotentialOutcomeTable::from_rows(
            rows,
            TableMeta {
                covariate_names: vec![],
                block_names: vec![],
                coding: EventCoding::iv(),
                direction: OutcomeDirection::HigherIsBetter,
                observe_outcome_after_event: true,
            },
        )
    }

    #[test]
    fn hand_table_complier_effect_is_two() {
        let t = hand_table();
        let e = true_principal_effect(&t, StratumSet::single(StrataLabel::S01)).unwrap();
        assert_eq!(e, 2.0);
        let ate = t.effect(StratumSet::all()).unwrap();
        assert!((ate - 1.0).abs() < 1e-12);
        assert!(matches!(
            t.effect(StratumSet::single(StrataLabel::S10)),
            Err(Error::EmptyStratum(_))
        ));
    }

    #[test]
    fn strata_partition_the_ate() {
        let (t, _) = generate(&preset("crossworld_independent").unwrap().with_n(4000), 3).unwrap();
        let ate = t.effect(StratumSet::all()).unwrap();
        let mix: f64 = StrataLabel::ALL
            .iter()
            .map(|&u| {
                let s = StratumSet::single(u);
                t.share(s) * t.effect(s).unwrap_or(0.0)
            })
            .sum();
        assert!((ate - mix).abs() < 1e-12);
    }

    #[test]
    fn monotone_mechanism_leaves_forbidden_cell_empty() {
        for name in ["pi_baseline", "iv_compliance", "gbh_monotone", "binary_event"] {
            let cfg = preset(name).unwrap().with_n(5000);
            let forbidden = cfg.coding.forbidden().unwrap();
            let (t, _) = generate(&cfg, 11).unwrap();
            assert_eq!(t.stratum_counts()[forbidden.index()], 0, "{name}");
        }
    }

    #[test]
    fn violated_twins_break_their_assumption() {
        let (t, _) = generate(&preset("gbh_monotone_violated").unwrap().with_n(5000), 1).unwrap();
        assert!(t.stratum_counts()[StrataLabel::S10.index()] > 0);
        let (t, _) = generate(&preset("iv_compliance_violated").unwrap().with_n(5000), 1).unwrap();
        let differs = t
            .rows()
            .iter()
            .filter(|r| r.s[0] == r.s[1])
            .any(|r| r.y[0] != r.y[1]);
        assert!(differs);
    }

    #[test]
    fn randomized_fraction_and_exclusion() {
        let (t, ds) = generate(&preset("iv_compliance").unwrap().with_n(100_000), 5).unwrap();
        let frac = ds.arm_count(Arm::Treated) as f64 / ds.len() as f64;
        assert!((frac - 0.5).abs() < 0.01);
        for r in t.rows().iter().filter(|r| r.s[0] == r.s[1]) {
            assert_eq!(r.y[0], r.y[1]);
        }
    }

    #[test]
    fn revealing_rule_is_exact() {
        let cfg = preset("staged_qu").unwrap().with_n(2000);
        let (t, ds) = generate(&cfg, 9).unwrap();
        for (r, rec) in t.rows().iter().zip(ds.records()) {
            let a = r.trt as usize;
            assert_eq!(rec.event, r.s[a]);
            assert_eq!(rec.stage_events, r.stages[a]);
            if r.s[a] == 0 {
                assert_eq!(rec.outcome, Some(r.y[a]));
            } else {
                assert_eq!(rec.outcome, None);
            }
            assert_eq!(rec.stage_union(), Some(r.s[a]));
            for (k, b) in rec.intermediate.iter().enumerate() {
                if let Some(b) = b {
                    assert_eq!(b, &r.z[a][k]);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = preset("pi_baseline").unwrap().with_n(3000);
        let (a, _) = generate(&cfg, 42).unwrap();
        let (b, _) = generate(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = preset("pi_baseline").unwrap();
        cfg.outcome.rho = 1.5;
        assert!(matches!(generate(&cfg, 1), Err(Error::InvalidConfig(_))));
        let mut cfg = preset("pi_baseline").unwrap();
        cfg.assignment = Assignment::Randomized { p: 1.0 };
        assert!(matches!(generate(&cfg, 1), Err(Error::InvalidConfig(_))));
        let mut cfg = preset("staged_qu").unwrap();
        cfg.staged.as_mut().unwrap().stage_logits.pop();
        assert!(matches!(generate(&cfg, 1), Err(Error::InvalidConfig(_))));
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn cross_world_correlation_follows_rho() {
        let mut cfg = preset("crossworld_independent").unwrap().with_n(20_000);
        cfg.outcome.rho = 0.8;
        cfg.outcome.slope = [vec![], vec![]];
        let (t, _) = generate(&cfg, 2).unwrap();
        let y0: Vec<f64> = t.rows().iter().map(|r| r.y[0]).collect();
        let y1: Vec<f64> = t.rows().iter().map(|r| r.y[1]).collect();
        let (m0, m1) = (crate::numerics::stats::mean(&y0), crate::numerics::stats::mean(&y1));
        let cov: f64 = y0.iter().zip(&y1).map(|(a, b)| (a - m0) * (b - m1)).sum::<f64>() / y0.len() as f64;
        let r = cov / (crate::numerics::stats::var(&y0) * crate::numerics::stats::var(&y1)).sqrt();
        assert!((r - 0.8).abs() < 0.02, "{r}");
        assert_eq!(cfg.coding.monotonicity, Monotonicity::None);
    }

    #[test]
    fn table_csv_has_potential_columns() {
        let t = hand_table();
        let mut buf = Vec::new();
        t.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().ends_with("s0,s1,y0,y1"));
        assert_eq!(text.lines().count(), 11);
    }
}
