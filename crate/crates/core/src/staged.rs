//! Intermediate-outcome machinery shared by the staged estimators.
//!
//! * [`ZChain`] — sequential linear-Gaussian model of `Z(t) | X` fitted in
//!   one arm, one univariate regression per intermediate coordinate.
//! * [`AdherenceModel`] — stage-wise logistic models for
//!   `Pr(S^(k) = 0 | X, Z^(<k))`, composed multiplicatively into `g(x, z)`.
//! * [`StagedNuisance`] — per-subject Monte Carlo integrals over `Z(t) | X`
//!   of `g`, the outcome regression `ψ_t`, and their product.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, SubjectRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::numerics::{expit, fit_logistic, fit_ols, stream, tag, LogisticFit, OlsFit};

/// Monte Carlo draws per subject for `Z | X` integrals.
pub const DEFAULT_DRAWS: usize = 200;
/// Escalation ceiling when the integration error is too large.
pub const MAX_DRAWS: usize = 800;
/// Relative tolerance on the Monte Carlo standard error.
pub const MC_TOLERANCE: f64 = 0.10;

const INTEGRATION: u64 = tag("z-integration");

/// Options shared by the staged estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagedOptions {
    pub draws: usize,
    /// Fit the stage adherence models on both arms together.
    pub pooled_adherence: bool,
    /// Sub-seed for the integration streams.
    pub seed: u64,
}

impl Default for StagedOptions {
    fn default() -> Self {
        StagedOptions {
            draws: DEFAULT_DRAWS,
            pooled_adherence: true,
            seed: INTEGRATION,
        }
    }
}

/// `(1, x)` for a record.
pub(crate) fn x1(r: &SubjectRecord) -> Vec<f64> {
    let mut v = Vec::with_capacity(r.baseline.len() + 1);
    v.push(1.0);
    v.extend_from_slice(&r.baseline);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multivariate normal draw `mean + L z`.
pub(crate) fn mvn_draw(mean: &[f64], cov: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = mean.len();
    let l = (cov + DMatrix::identity(k, k) * 1e-12)
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::zeros(k, k));
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let d = l * z;
    mean.iter().zip(d.iter()).map(|(m, e)| m + e).collect()
}

/// Logistic coefficients drawn from their asymptotic normal posterior.
pub(crate) fn logistic_draw(fit: &LogisticFit, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cov = fit.covariance()?;
    Ok(mvn_draw(&fit.coefficients, &cov, rng))
}

/// Sequential model for the flattened intermediate vector of one arm.
#[derive(Debug, Clone)]
pub struct ZChain {
    pub arm: Arm,
    pub block_dims: Vec<usize>,
    /// Coordinate `c` regresses on `(1, x, z_0..z_{c-1})`.
    pub coefficients: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    fits: Vec<OlsFit>,
}

impl ZChain {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Draws `Z | x` given the design prefix `(1, x)`; returns the flat `z`.
    pub fn sample(&self, x1: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut design = x1.to_vec();
        self.sample_into(&mut design, rng);
        design.split_off(x1.len())
    }

    /// Appends a draw of the coordinates not yet present in `design`
    /// (which starts with `(1, x)` and may hold an observed prefix of `z`).
    pub fn sample_into(&self, design: &mut Vec<f64>, rng: &mut ChaCha8Rng) {
        let base = self.coefficients.first().map_or(design.len(), |c| c.len());
        let have = design.len() - base;
        for (c, s) in self.coefficients.iter().zip(&self.sigma).skip(have) {
            let e: f64 = rng.sample(StandardNormal);
            let v = dot(c, design) + s * e;
            design.push(v);
        }
    }

    /// A chain with `(β, σ²)` drawn from each coordinate's posterior.
    pub fn posterior_draw(&self, rng: &mut ChaCha8Rng) -> ZChain {
        let mut out = self.clone();
        for (c, f) in self.fits.iter().enumerate() {
            let (b, s2) = f.posterior_draw(rng);
            out.coefficients[c] = b.iter().cloned().collect();
            out.sigma[c] = s2.sqrt();
        }
        out
    }
}

/// Block index of each flat intermediate coordinate.
fn coord_blocks(dims: &[usize]) -> Vec<usize> {
    dims.iter().enumerate().flat_map(|(k, &d)| std::iter::repeat_n(k, d)).collect()
}

/// Fits `Z(t) | X` on the subjects of `arm`; coordinate `c` of block `k`
/// uses the subjects with block `k` observed.
pub fn fit_zchain(ds: &TrialDataset, arm: Arm) -> Result<ZChain> {
    let dims = ds.block_dims();
    let blocks = coord_blocks(&dims);
    let p = ds.p();
    let mut coefficients = Vec::new();
    let mut sigma = Vec::new();
    let mut fits = Vec::new();
    let starts: Vec<usize> = dims
        .iter()
        .scan(0, |acc, d| {
            let s = *acc;
            *acc += d;
            Some(s)
        })
        .collect();
    for (c, &k) in blocks.iter().enumerate() {
        let j = c - starts[k];
        let rows: Vec<(Vec<f64>, f64)> = ds
            .records()
            .iter()
            .filter(|r| r.arm() == arm)
            .filter_map(|r| {
                let z = r.intermediate_prefix(k + 1)?;
                let mut d = x1(r);
                d.extend_from_slice(&z[..c]);
                Some((d, z[starts[k] + j]))
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::StageDataMissing(format!(
                "no arm-{} subject has intermediate block {} observed",
                arm.bit(),
                k + 1
            )));
        }
        let width = p + 1 + c;
        let design = DMatrix::from_fn(rows.len(), width, |i, m| rows[i].0[m]);
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let f = fit_ols(&design, &y, None)
            .map_err(|e| Error::ModelFitFailed(format!("Z model, arm {}, coordinate {}: {e}", arm.bit(), c + 1)))?;
        coefficients.push(f.coefficients.iter().cloned().collect());
        sigma.push(f.sigma2.sqrt());
        fits.push(f);
    }
    Ok(ZChain {
        arm,
        block_dims: dims,
        coefficients,
        sigma,
        fits,
    })
}

/// Stage-wise adherence model; `g(x, z) = Π_k Pr(S^(k) = 0 | x, z^(<k))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdherenceModel {
    pub pooled: bool,
    /// `stages[t][k]`; identical across arms when pooled.
    pub stages: [Vec<LogisticFit>; 2],
    /// Number of flat intermediate coordinates entering stage `k`.
    pub z_width: Vec<usize>,
}

impl AdherenceModel {
    pub fn n_stages(&self) -> usize {
        self.z_width.len()
    }

    /// Composed adherence probability for `arm` at `(1, x)` and flat `z`.
    pub fn g(&self, arm: Arm, x1: &[f64], z: &[f64]) -> f64 {
        self.g_with(&self.stage_coefs(arm), x1, z)
    }

    pub(crate) fn stage_coefs(&self, arm: Arm) -> Vec<&[f64]> {
        self.stages[arm.index()].iter().map(|f| f.coefficients.as_slice()).collect()
    }

    pub(crate) fn g_with(&self, coefs: &[&[f64]], x1: &[f64], z: &[f64]) -> f64 {
        let mut prod = 1.0;
        for (k, c) in coefs.iter().enumerate() {
            let w = self.z_width[k];
            let eta = dot(&c[..x1.len()], x1) + dot(&c[x1.len()..], &z[..w]);
            prod *= expit(eta);
        }
        prod
    }

    /// Probability of no event at stage `k` given no earlier event.
    pub fn stage_prob(&self, arm: Arm, k: usize, x1: &[f64], z: &[f64]) -> f64 {
        let c = &self.stages[arm.index()][k].coefficients;
        let w = self.z_width[k];
        expit(dot(&c[..x1.len()], x1) + dot(&c[x1.len()..], &z[..w]))
    }
}

/// Fits one logistic model per stage on the subjects at risk at that stage
/// (non-missing stage event), using baseline covariates and the blocks
/// completed before the stage.
pub fn fit_adherence_model(ds: &TrialDataset, pooled: bool) -> Result<AdherenceModel> {
    let k_stages = ds.n_stages();
    if k_stages == 0 {
        return Err(Error::StageDataMissing("dataset has no stage events".into()));
    }
    let dims = ds.block_dims();
    let z_width: Vec<usize> = (0..k_stages)
        .map(|k| dims.iter().take(k.min(dims.len())).sum())
        .collect();
    let fit_stage = |k: usize, arm: Option<Arm>| -> Result<LogisticFit> {
        let nb = k.min(dims.len());
        let mut rows = Vec::new();
        let mut resp = Vec::new();
        for r in ds.records() {
            if arm.is_some_and(|a| r.arm() != a) {
                continue;
            }
            let Some(ev) = r.stage_events[k] else { continue };
            let z = r.intermediate_prefix(nb).ok_or_else(|| {
                Error::StageDataMissing(format!(
                    "subject {} is at risk at stage {} but earlier intermediates are missing",
                    r.id,
                    k + 1
                ))
            })?;
            let mut d = x1(r);
            d.extend_from_slice(&z);
            rows.push(d);
            resp.push(1.0 - ev as f64);
        }
        if rows.is_empty() {
            return Err(Error::StageDataMissing(format!("no subject at risk at stage {}", k + 1)));
        }
        let width = rows[0].len();
        let design = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
        fit_logistic(&design, &resp, None)
            .map_err(|e| Error::ModelFitFailed(format!("adherence stage {}: {e}", k + 1)))
    };
    let stages = if pooled {
        let s: Vec<LogisticFit> = (0..k_stages).map(|k| fit_stage(k, None)).collect::<Result<_>>()?;
        [s.clone(), s]
    } else {
        [
            (0..k_stages).map(|k| fit_stage(k, Some(Arm::Control))).collect::<Result<_>>()?,
            (0..k_stages).map(|k| fit_stage(k, Some(Arm::Treated))).collect::<Result<_>>()?,
        ]
    };
    Ok(AdherenceModel {
        pooled,
        stages,
        z_width,
    })
}

/// Outcome regression `ψ_t(x, z)` on the arm-`t` subjects with an observed
/// outcome and all intermediate blocks.
pub fn fit_outcome_regression(ds: &TrialDataset, arm: Arm) -> Result<OlsFit> {
    let nb = ds.n_blocks();
    let rows: Vec<(Vec<f64>, f64)> = ds
        .records()
        .iter()
        .filter(|r| r.arm() == arm)
        .filter_map(|r| {
            let y = r.outcome?;
            let z = r.intermediate_prefix(nb)?;
            let mut d = x1(r);
            d.extend_from_slice(&z);
            Some((d, y))
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::ModelFitFailed(format!(
            "no arm-{} subject with observed outcome and intermediates",
            arm.bit()
        )));
    }
    let width = rows[0].0.len();
    let design = DMatrix::from_fn(rows.len(), width, |i, j| rows[i].0[j]);
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    fit_ols(&design, &y, None).map_err(|e| Error::ModelFitFailed(format!("outcome model, arm {}: {e}", arm.bit())))
}

/// Per-subject Monte Carlo integrals for one arm's potential world.
#[derive(Debug, Clone, Default)]
pub struct ArmIntegrals {
    /// `h_t(x) = E[g(x, Z(t)) | x]`.
    pub h: Vec<f64>,
    /// `φ_t(x) = E[ψ_t(x, Z(t)) | x]`.
    pub phi: Vec<f64>,
    /// `ϕ_t(x) = E[g(x, Z(t)) ψ_t(x, Z(t)) | x]`.
    pub gphi: Vec<f64>,
    /// Monte Carlo variances of the per-draw integrands (divide by draws).
    pub h_var: Vec<f64>,
    pub phi_var: Vec<f64>,
    pub gphi_var: Vec<f64>,
}

/// All fitted nuisance pieces plus their integrals for both arms.
#[derive(Debug, Clone)]
pub struct StagedNuisance {
    pub adherence: AdherenceModel,
    pub zchain: [ZChain; 2],
    pub outcome: [OlsFit; 2],
    pub arms: [ArmIntegrals; 2],
    /// `g(x_i, z_i)` at the observed intermediates (subjects with all blocks).
    pub g_observed: Vec<Option<f64>>,
    pub draws: usize,
}

impl StagedNuisance {
    pub fn fit(ds: &TrialDataset, opts: &StagedOptions) -> Result<StagedNuisance> {
        if ds.n_stages() == 0 {
            return Err(Error::StageDataMissing("staged estimators need stage events".into()));
        }
        let adherence = fit_adherence_model(ds, opts.pooled_adherence)?;
        let zchain = [fit_zchain(ds, Arm::Control)?, fit_zchain(ds, Arm::Treated)?];
        let outcome = [
            fit_outcome_regression(ds, Arm::Control)?,
            fit_outcome_regression(ds, Arm::Treated)?,
        ];
        let mut out = StagedNuisance {
            adherence,
            zchain,
            outcome,
            arms: Default::default(),
            g_observed: Vec::new(),
            draws: opts.draws,
        };
        out.integrate(ds, opts.draws, opts.seed);
        let nb = ds.n_blocks();
        out.g_observed = ds
            .records()
            .iter()
            .map(|r| {
                let z = r.intermediate_prefix(nb)?;
                Some(out.adherence.g(r.arm(), &x1(r), &z))
            })
            .collect();
        Ok(out)
    }

    /// Recomputes the integrals with `draws` per subject.
    pub fn integrate(&mut self, ds: &TrialDataset, draws: usize, seed: u64) {
        self.draws = draws;
        for arm in Arm::BOTH {
            let t = arm.index();
            let chain = &self.zchain[t];
            let psi = &self.outcome[t];
            let adh = &self.adherence;
            let coefs = adh.stage_coefs(arm);
            let per: Vec<[f64; 6]> = ds
                .records()
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut rng = stream(seed, &[INTEGRATION, t as u64, i as u64]);
                    let xv = x1(r);
                    let mut acc = [0.0; 6];
                    let mut row = xv.clone();
                    for _ in 0..draws {
                        row.truncate(xv.len());
                        chain.sample_into(&mut row, &mut rng);
                        let g = adh.g_with(&coefs, &xv, &row[xv.len()..]);
                        let y = psi.predict(&row);
                        let gy = g * y;
                        acc[0] += g;
                        acc[1] += y;
                        acc[2] += gy;
                        acc[3] += g * g;
                        acc[4] += y * y;
                        acc[5] += gy * gy;
                    }
                    let d = draws as f64;
                    let m = [acc[0] / d, acc[1] / d, acc[2] / d];
                    let v = |s2: f64, m: f64| ((s2 / d - m * m) * d / (d - 1.0).max(1.0)).max(0.0);
                    [m[0], m[1], m[2], v(acc[3], m[0]), v(acc[4], m[1]), v(acc[5], m[2])]
                })
                .collect();
            let col = |j: usize| per.iter().map(|a| a[j]).collect::<Vec<f64>>();
            self.arms[t] = ArmIntegrals {
                h: col(0),
                phi: col(1),
                gphi: col(2),
                h_var: col(3),
                phi_var: col(4),
                gphi_var: col(5),
            };
        }
    }
}

/// Monte Carlo SE of `Σ_{i∈idx} c_i f_i` given per-subject integrand
/// variances and the draw count.
pub(crate) fn mc_se(vars: &[f64], coef: impl Fn(usize) -> f64, idx: &[usize], draws: usize) -> f64 {
    (idx.iter().map(|&i| coef(i).powi(2) * vars[i]).sum::<f64>() / draws as f64).sqrt()
}

/// Runs `f(draws)` at the configured draw count; if the reported Monte
/// Carlo SE exceeds `MC_TOLERANCE` of the returned scale, retries at
/// `MAX_DRAWS`, then fails with `IntegrationUnstable`.
pub(crate) fn with_escalation<T>(
    start: usize,
    mut f: impl FnMut(usize) -> Result<(T, f64, f64)>,
) -> Result<(T, usize)> {
    let mut draws = start.max(2);
    loop {
        let (v, se, scale) = f(draws)?;
        if se <= MC_TOLERANCE * scale {
            return Ok((v, draws));
        }
        if draws >= MAX_DRAWS {
            return Err(Error::IntegrationUnstable(format!(
                "Monte Carlo SE {se:.3e} exceeds {:.0}% of scale {scale:.3e} at {draws} draws",
                MC_TOLERANCE * 100.0
            )));
        }
        draws = (draws * 2).min(MAX_DRAWS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{generate, preset};

    #[test]
    fn zchain_recovers_generating_coefficients() {
        let cfg = preset("staged_qu").unwrap().with_n(40_000);
        let (_, ds) = generate(&cfg, 4).unwrap();
        let ch = fit_zchain(&ds, Arm::Treated).unwrap();
        let truth = &cfg.staged.as_ref().unwrap().z_models[1][0].coefs[0];
        for (a, b) in ch.coefficients[0].iter().zip(truth) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
        assert!((ch.sigma[0] - 0.8).abs() < 0.02);
        // Second coordinate of block 1 also regresses on the first (true 0).
        assert!(ch.coefficients[1][4].abs() < 0.05);
    }

    #[test]
    fn pooled_adherence_recovers_stage_logits() {
        let cfg = preset("staged_qu").unwrap().with_n(60_000);
        let (_, ds) = generate(&cfg, 5).unwrap();
        let m = fit_adherence_model(&ds, true).unwrap();
        let truth = &cfg.staged.as_ref().unwrap().stage_logits;
        for k in 0..3 {
            for (a, b) in m.stages[0][k].coefficients.iter().zip(&truth[k]) {
                assert!((a - b).abs() < 0.12, "stage {k}: {a} vs {b}");
            }
        }
        assert_eq!(m.z_width, vec![0, 2, 4]);
    }

    #[test]
    fn escalation_doubles_then_fails() {
        let mut seen = Vec::new();
        let r = with_escalation(200, |d| {
            seen.push(d);
            Ok(((), 1.0, 1.0))
        });
        assert!(matches!(r, Err(Error::IntegrationUnstable(_))));
        assert_eq!(seen, vec![200, 400, 800]);
        let (_, d) = with_escalation(200, |d| Ok(((), if d >= 400 { 0.0 } else { 1.0 }, 1.0))).unwrap();
        assert_eq!(d, 400);
    }
}
