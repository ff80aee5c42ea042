//! Sensitivity-parameter estimators for the event-free stratum.
//!
//! Under monotonicity the stratum `S00` is one arm's whole event-free cell
//! (the "pure" cell) while the other arm's event-free cell mixes `S00` with
//! one more stratum (the "mixed" cell). With `S(1) <= S(0)` the pure cell is
//! control and the mixed cell is treated (Immune + Benefiters); with
//! `S(1) >= S(0)` the roles swap. `r = Pr(S00 | mixed cell)` is the ratio of
//! event-free rates, pure over mixed.

use serde::{Deserialize, Serialize};

use crate::basic::{cell, p_event_free, CellStats, DEFAULT_LEVEL};
use crate::data::{Arm, Monotonicity, OutcomeDirection, TrialDataset, ZeroMeans};
use crate::error::{Error, Result};
use crate::numerics::{bootstrap_with, brent_root, expit, logit, percentile_ci, Resampling};
use crate::report::{tags, BoundsReport, EstimateReport, SensitivityCurve};

const ALPHA_TOL: f64 = 1e-13;

/// Arms and margins of the mixed/pure decomposition.
#[derive(Debug, Clone, Copy)]
pub struct MixSetup {
    pub mixed: Arm,
    pub pure: Arm,
    pub p_mixed: f64,
    pub p_pure: f64,
    /// `p_pure / p_mixed`, the `S00` share of the mixed cell.
    pub r: f64,
}

pub fn mix_setup(ds: &TrialDataset) -> Result<MixSetup> {
    let coding = ds.coding();
    if coding.zero_means != ZeroMeans::NoEventOrCompliant {
        return Err(Error::PreconditionFailed(
            "sensitivity estimators need S = 1 to denote the intercurrent event".into(),
        ));
    }
    let (mixed, pure) = match coding.monotonicity {
        Monotonicity::S1LeS0 => (Arm::Treated, Arm::Control),
        Monotonicity::S1GeS0 => (Arm::Control, Arm::Treated),
        Monotonicity::None => {
            return Err(Error::PreconditionFailed(
                "this estimator requires a declared monotonicity direction".into(),
            ))
        }
    };
    let p_mixed = p_event_free(ds, mixed)?;
    let p_pure = p_event_free(ds, pure)?;
    if p_mixed == 0.0 {
        return Err(Error::EmptyStratumCell(format!("no event-free subjects in arm {}", mixed.bit())));
    }
    let r = p_pure / p_mixed;
    if r > 1.0 + 1e-9 {
        return Err(Error::MonotonicityInconsistent(format!(
            "event-free rate in arm {} ({p_pure:.4}) exceeds arm {} ({p_mixed:.4})",
            pure.bit(),
            mixed.bit()
        )));
    }
    Ok(MixSetup {
        mixed,
        pure,
        p_mixed,
        p_pure,
        r: r.min(1.0),
    })
}

// ---------------------------------------------------------------------------
// binary outcome

/// Plug-in pieces for the binary-outcome families.
struct BinaryPieces {
    mix: MixSetup,
    /// `Pr(Y(mixed)=1 | mixed cell)`.
    p_y_mixed: f64,
    /// `Pr(Y(pure)=1 | S00)`.
    p_y_pure: f64,
    n_used: usize,
}

fn binary_pieces(ds: &TrialDataset) -> Result<BinaryPieces> {
    if !ds.outcome_is_binary() {
        return Err(Error::PreconditionFailed("binary sensitivity analysis needs a 0/1 outcome".into()));
    }
    let mix = mix_setup(ds)?;
    let m = cell(ds, mix.mixed, 0)?;
    let p = cell(ds, mix.pure, 0)?;
    Ok(BinaryPieces {
        mix,
        p_y_mixed: m.mean,
        p_y_pure: p.mean,
        n_used: m.n + p.n,
    })
}

fn arm_rate(mix: &MixSetup, arm: Arm) -> f64 {
    if arm == mix.mixed {
        mix.p_mixed
    } else {
        mix.p_pure
    }
}

fn check_prob(what: &str, v: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&v) || !v.is_finite() {
        return Err(Error::ProbabilityOutOfRange { what: what.into(), value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

fn odds_ratio(p1: f64, p0: f64) -> Result<f64> {
    let or = p1 * (1.0 - p0) / ((1.0 - p1) * p0);
    if !or.is_finite() {
        return Err(Error::PreconditionFailed(format!(
            "odds ratio undefined at Pr(Y(1)=1|S00) = {p1}, Pr(Y(0)=1|S00) = {p0}"
        )));
    }
    Ok(or)
}

/// Assemble the report: point is `OR(S00)` (treated vs control).
fn binary_report(method: &str, bp: &BinaryPieces, p_adj: f64) -> Result<EstimateReport> {
    let (p1, p0) = match bp.mix.mixed {
        Arm::Treated => (p_adj, bp.p_y_pure),
        Arm::Control => (bp.p_y_pure, p_adj),
    };
    let or = odds_ratio(p1, p0)?;
    Ok(EstimateReport::new(method, "OR(Y | S00), treated vs control", or, bp.n_used)
        .assume(&[tags::SUTVA, tags::RANDOMIZATION, tags::MONOTONICITY, tags::POSITIVITY, tags::SENSITIVITY])
        .extra("pr_y1_s00", p1)
        .extra("pr_y0_s00", p0)
        .extra("risk_difference", p1 - p0)
        .extra("pr_y_mixed_cell", bp.p_y_mixed)
        .extra("pr_s00_given_mixed", bp.mix.r)
        .extra("p_event_free_treated", arm_rate(&bp.mix, Arm::Treated))
        .extra("p_event_free_control", arm_rate(&bp.mix, Arm::Control)))
}

/// γ family: `γ` is the outcome probability in the non-`S00` part of the
/// mixed cell (Benefiters under `S(1) <= S(0)`).
pub fn binary_gamma(ds: &TrialDataset, gamma: f64) -> Result<EstimateReport> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma = {gamma} outside [0, 1]")));
    }
    let bp = binary_pieces(ds)?;
    let r = bp.mix.r;
    if r == 0.0 {
        return Err(Error::PositivityViolation("S00 share of the mixed cell is zero".into()));
    }
    let p = check_prob("Pr(Y=1 | S00) under gamma", bp.p_y_mixed / r - (1.0 - r) / r * gamma)?;
    Ok(binary_report("binary_gamma", &bp, p)?.param("gamma", gamma))
}

/// τ family: `τ` is the risk ratio of the other stratum vs `S00` within the
/// mixed cell.
pub fn binary_tau(ds: &TrialDataset, tau: f64) -> Result<EstimateReport> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau = {tau} must be positive and finite")));
    }
    let bp = binary_pieces(ds)?;
    let r = bp.mix.r;
    let p = check_prob("Pr(Y=1 | S00) under tau", bp.p_y_mixed / (tau + (1.0 - tau) * r))?;
    Ok(binary_report("binary_tau", &bp, p)?.param("tau", tau))
}

/// Solves the two-point normalisation
/// `(1/r)·[expit(α)(1−P) + expit(α+β)P] = 1` for `α`.
pub fn binary_alpha(r: f64, p_y: f64, beta: f64) -> Result<f64> {
    if beta == 0.0 {
        return Ok(logit(r));
    }
    let f = |a: f64| (expit(a) * (1.0 - p_y) + expit(a + beta) * p_y) / r - 1.0;
    brent_root(f, logit(r) - 10.0, logit(r) + 10.0, ALPHA_TOL)
}

/// β family: logistic selection `Pr(S00 | Y=y, mixed) = expit(α + βy)`.
pub fn binary_beta(ds: &TrialDataset, beta: f64) -> Result<EstimateReport> {
    let bp = binary_pieces(ds)?;
    let r = bp.mix.r;
    if r >= 1.0 {
        let mut rep = binary_report("binary_beta", &bp, bp.p_y_mixed)?.param("beta", beta);
        rep.warn("mixed cell contains only S00; beta has no effect");
        return Ok(rep);
    }
    if r == 0.0 {
        return Err(Error::PositivityViolation("S00 share of the mixed cell is zero".into()));
    }
    let alpha = binary_alpha(r, bp.p_y_mixed, beta)?;
    let p = check_prob("Pr(Y=1 | S00) under beta", bp.p_y_mixed * expit(alpha + beta) / r)?;
    let residual = (expit(alpha) * (1.0 - bp.p_y_mixed) + expit(alpha + beta) * bp.p_y_mixed) / r - 1.0;
    Ok(binary_report("binary_beta", &bp, p)?
        .param("beta", beta)
        .param("alpha", alpha)
        .extra("alpha_residual", residual))
}

// ---------------------------------------------------------------------------
// continuous outcome (weighted test statistic)

/// One grid point of the weighted statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbhPoint {
    pub beta: f64,
    pub alpha: f64,
    /// Treated-minus-control effect in `S00`.
    pub estimate: f64,
    /// `(1/r)(1/n)Σw − 1` at the solved `α`.
    pub residual: f64,
    /// Odds multiplier for `S00` membership per unit decrease in outcome.
    pub odds_multiplier: f64,
}

/// Odds multiplier per unit drop in outcome implied by slope `β`.
pub fn odds_multiplier_per_unit_drop(beta: f64) -> f64 {
    (-beta).exp()
}

struct GbhCells {
    mix: MixSetup,
    mixed_y: Vec<f64>,
    pure: CellStats,
}

fn gbh_cells(ds: &TrialDataset) -> Result<GbhCells> {
    let mix = mix_setup(ds)?;
    let mixed_y = ds.cell_outcomes(mix.mixed, 0);
    if mixed_y.is_empty() {
        return Err(Error::EmptyStratumCell(format!("T={},S=0 has no observed outcomes", mix.mixed.bit())));
    }
    let pure = cell(ds, mix.pure, 0)?;
    Ok(GbhCells { mix, mixed_y, pure })
}

/// Solve the empirical normalisation `(1/(r n)) Σ expit(α + β y_i) = 1`.
pub fn gbh_alpha(y: &[f64], r: f64, beta: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        if r >= 1.0 {
            return Err(Error::PreconditionFailed(
                "equal event-free rates: the weighted cell contains only S00 and alpha is unbounded".into(),
            ));
        }
        return Err(Error::PositivityViolation("S00 share of the weighted cell is zero".into()));
    }
    if beta == 0.0 {
        return Ok(logit(r));
    }
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let f = |a: f64| y.iter().map(|&v| expit(a + beta * v)).sum::<f64>() / (r * n) - 1.0;
    let c = logit(r) - beta * ybar;
    brent_root(f, c - 5.0, c + 5.0, ALPHA_TOL)
}

fn gbh_eval(cells: &GbhCells, beta: f64) -> Result<GbhPoint> {
    let r = cells.mix.r;
    let y = &cells.mixed_y;
    let n = y.len() as f64;
    let (alpha, weighted_mean, residual) = if r >= 1.0 {
        // no second stratum in the mixed cell; every weight is one
        (f64::INFINITY, y.iter().sum::<f64>() / n, 0.0)
    } else {
        let alpha = gbh_alpha(y, r, beta)?;
        let w: Vec<f64> = y.iter().map(|&v| expit(alpha + beta * v)).collect();
        let sw: f64 = w.iter().sum();
        let swy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
        (alpha, swy / (r * n), sw / (r * n) - 1.0)
    };
    let estimate = match cells.mix.mixed {
        Arm::Treated => weighted_mean - cells.pure.mean,
        Arm::Control => cells.pure.mean - weighted_mean,
    };
    Ok(GbhPoint {
        beta,
        alpha,
        estimate,
        residual,
        odds_multiplier: odds_multiplier_per_unit_drop(beta),
    })
}

/// Weighted statistic at a single `β`.
pub fn gbh_point(ds: &TrialDataset, beta: f64) -> Result<GbhPoint> {
    gbh_eval(&gbh_cells(ds)?, beta)
}

/// Evenly spaced grid from `from` to `to` with `steps` points.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![from],
        _ => (0..steps)
            .map(|i| from + (to - from) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Weighted test statistic over a `β` grid with percentile bootstrap
/// intervals; `α` is re-solved inside every replicate. Grid points that fail
/// are reported in `failures` and the curve continues.
pub fn gbh_continuous(
    ds: &TrialDataset,
    beta_grid: &[f64],
    boot_b: usize,
    seed: u64,
    level: f64,
    scheme: Resampling,
) -> Result<SensitivityCurve> {
    if beta_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("beta grid must be strictly increasing".into()));
    }
    let cells = gbh_cells(ds)?;
    let points: Vec<Result<GbhPoint>> = beta_grid.iter().map(|&b| gbh_eval(&cells, b)).collect();

    let (ci_low, ci_high) = if boot_b >= 2 {
        let reps: Vec<Vec<Option<f64>>> = bootstrap_with(ds, boot_b, seed, scheme, |_, d| match gbh_cells(d) {
            Ok(c) => beta_grid.iter().map(|&b| gbh_eval(&c, b).ok().map(|p| p.estimate)).collect(),
            Err(_) => vec![None; beta_grid.len()],
        });
        let mut lo = Vec::with_capacity(beta_grid.len());
        let mut hi = Vec::with_capacity(beta_grid.len());
        for j in 0..beta_grid.len() {
            let ok: Vec<f64> = reps.iter().filter_map(|r| r[j]).collect();
            if points[j].is_ok() && ok.len() * 2 >= boot_b && ok.len() >= 2 {
                let (l, h) = percentile_ci(&ok, level);
                lo.push(Some(l));
                hi.push(Some(h));
            } else {
                lo.push(None);
                hi.push(None);
            }
        }
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };

    Ok(SensitivityCurve {
        param_name: "beta".into(),
        grid: beta_grid.to_vec(),
        estimates: points.iter().map(|p| p.as_ref().ok().map(|p| p.estimate)).collect(),
        ci_low,
        ci_high,
        alpha_solutions: Some(points.iter().map(|p| p.as_ref().ok().map(|p| p.alpha)).collect()),
        failures: points.iter().map(|p| p.as_ref().err().map(|e| e.name().to_string())).collect(),
        level: (boot_b >= 2).then_some(level),
        odds_multipliers: Some(beta_grid.iter().map(|&b| odds_multiplier_per_unit_drop(b)).collect()),
    })
}

// ---------------------------------------------------------------------------
// no-monotonicity complier band, crude SACE, bounds

/// Complier (`S00`) effect without monotonicity: observed completers
/// difference plus the bias
/// `α = (π01/π0)β0 − ((π1 − π0 + π01)/π1)β1`.
pub fn cace_band_no_monotonicity(ds: &TrialDataset, pi01: f64, beta0: f64, beta1: f64) -> Result<EstimateReport> {
    if ds.coding().zero_means != ZeroMeans::NoEventOrCompliant {
        return Err(Error::PreconditionFailed("S = 1 must denote non-compliance".into()));
    }
    let pi0 = p_event_free(ds, Arm::Control)?;
    let pi1 = p_event_free(ds, Arm::Treated)?;
    if pi0 == 0.0 || pi1 == 0.0 {
        return Err(Error::EmptyStratumCell("an arm has no compliers".into()));
    }
    let lo = (pi0 - pi1).max(0.0);
    let hi = pi0.min(1.0 - pi1);
    if !(pi01 >= lo - 1e-12 && pi01 <= hi + 1e-12) {
        return Err(Error::InfeasiblePi01 { pi01, lo, hi });
    }
    let t = cell(ds, Arm::Treated, 0)?;
    let c = cell(ds, Arm::Control, 0)?;
    let naive = t.mean - c.mean;
    let c0 = pi01 / pi0;
    let c1 = -(pi1 - pi0 + pi01) / pi1;
    let alpha = c0 * beta0 + c1 * beta1;
    Ok(EstimateReport::new("cace_band", "E[Y(1) - Y(0) | S(0)=0, S(1)=0]", naive + alpha, t.n + c.n)
        .with_se((t.se2() + c.se2()).sqrt(), DEFAULT_LEVEL)
        .assume(&[tags::SUTVA, tags::RANDOMIZATION, tags::SENSITIVITY])
        .param("pi01", pi01)
        .param("beta0", beta0)
        .param("beta1", beta1)
        .extra("naive", naive)
        .extra("alpha", alpha)
        .extra("coef_beta0", c0)
        .extra("coef_beta1", c1)
        .extra("pi0", pi0)
        .extra("pi1", pi1)
        .extra("pi01_lower", lo)
        .extra("pi01_upper", hi))
}

/// Crude survivor effect: observed-survivor difference minus `α`, the gap
/// in `Y(1)` between treated survivors and control survivors. Conservative
/// when `α <= 0`; the condition is flagged, not enforced.
pub fn sace_crude(ds: &TrialDataset, alpha: f64) -> Result<EstimateReport> {
    if ds.coding().zero_means != ZeroMeans::NoEventOrCompliant {
        return Err(Error::PreconditionFailed("S = 1 must denote death / the terminal event".into()));
    }
    let t = cell(ds, Arm::Treated, 0)?;
    let c = cell(ds, Arm::Control, 0)?;
    let naive = t.mean - c.mean;
    let mut rep = EstimateReport::new("sace_crude", "E[Y(1) - Y(0) | S(0)=0, S(1)=0]", naive - alpha, t.n + c.n)
        .with_se((t.se2() + c.se2()).sqrt(), DEFAULT_LEVEL)
        .assume(&[tags::SUTVA, tags::RANDOMIZATION, tags::MONOTONICITY, tags::SENSITIVITY, tags::ALPHA_NONPOSITIVE])
        .param("alpha", alpha)
        .extra("naive", naive);
    if alpha > 0.0 {
        rep.warn("alpha > 0: the crude estimate is not guaranteed conservative");
    }
    Ok(rep)
}

/// Mean of the best `k = n·q` values with fractional weight on the value at
/// the cut. "Best" follows the outcome direction.
pub fn trimmed_best_mean(values: &[f64], q: f64, direction: OutcomeDirection) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyStratumCell("no values to trim".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidConfig(format!("trim fraction {q} outside (0, 1]")));
    }
    let mut v = values.to_vec();
    match direction {
        OutcomeDirection::HigherIsBetter => v.sort_by(|a, b| b.total_cmp(a)),
        OutcomeDirection::LowerIsBetter => v.sort_by(|a, b| a.total_cmp(b)),
    }
    let k = v.len() as f64 * q;
    let whole = k.floor() as usize;
    let frac = k - whole as f64;
    let mut sum: f64 = v[..whole].iter().sum();
    if frac > 0.0 && whole < v.len() {
        sum += frac * v[whole];
    }
    Ok(sum / k)
}

/// Sharp bounds on the survivor effect under monotonicity `S(1) <= S(0)` and
/// stochastic dominance. One end is the observed-survivor difference, the
/// other uses the trimmed mean of the best `q = p0/p1` share of treated
/// survivors.
pub fn zhang_rubin_bounds(ds: &TrialDataset) -> Result<BoundsReport> {
    if ds.coding().zero_means != ZeroMeans::NoEventOrCompliant {
        return Err(Error::PreconditionFailed("S = 1 must denote death / the terminal event".into()));
    }
    let p0 = p_event_free(ds, Arm::Control)?;
    let p1 = p_event_free(ds, Arm::Treated)?;
    if p1 == 0.0 {
        return Err(Error::EmptyStratumCell("no treated survivors".into()));
    }
    let q = p0 / p1;
    if q > 1.0 + 1e-9 {
        return Err(Error::MonotonicityInconsistent(format!(
            "control survival {p0:.4} exceeds treated survival {p1:.4} (q = {q:.4})"
        )));
    }
    if q == 0.0 {
        return Err(Error::EmptyStratumCell("no control survivors".into()));
    }
    let q = q.min(1.0);
    let ty = ds.cell_outcomes(Arm::Treated, 0);
    let c = cell(ds, Arm::Control, 0)?;
    if ty.is_empty() {
        return Err(Error::EmptyStratumCell("T=1,S=0 has no observed outcomes".into()));
    }
    let mean_t = ty.iter().sum::<f64>() / ty.len() as f64;
    let naive = mean_t - c.mean;
    let trimmed = if q >= 1.0 {
        naive
    } else {
        trimmed_best_mean(&ty, q, ds.outcome_direction())? - c.mean
    };
    Ok(BoundsReport {
        lower: naive.min(trimmed),
        upper: naive.max(trimmed),
        trim_fraction: q,
        assumptions: vec![
            tags::SUTVA.into(),
            tags::RANDOMIZATION.into(),
            tags::MONOTONICITY.into(),
            tags::STOCHASTIC_DOMINANCE.into(),
        ],
        n_used: ty.len() + c.n,
        p0,
        p1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basic::naive_completers;
    use crate::data::{EventCoding, SubjectRecord};
    use proptest::prelude::*;

    fn ds_from(rows: &[(u8, u8, Option<f64>)], coding: EventCoding, dir: OutcomeDirection) -> TrialDataset {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(t, s, y))| SubjectRecord::new(i.to_string(), t, s, y, vec![]))
            .collect();
        TrialDataset::new(recs, vec![], vec![], coding, dir).unwrap()
    }

    /// Treated: 10 subjects, 8 event-free (5 with Y=1). Control: 10, 6 event-free (2 with Y=1).
    fn binary_fixture() -> TrialDataset {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((1, (i >= 8) as u8, Some(if i < 8 { (i < 5) as u8 as f64 } else { 0.0 })));
            rows.push((0, (i >= 6) as u8, Some(if i < 6 { (i < 2) as u8 as f64 } else { 1.0 })));
        }
        ds_from(&rows, EventCoding::event_no_harmed(), OutcomeDirection::LowerIsBetter)
    }

    #[test]
    fn binary_null_points_agree() {
        let ds = binary_fixture();
        let plug = 5.0 / 8.0;
        let t = binary_tau(&ds, 1.0).unwrap();
        let g = binary_gamma(&ds, plug).unwrap();
        let b = binary_beta(&ds, 0.0).unwrap();
        for r in [&t, &g, &b] {
            assert!((r.extras["pr_y1_s00"] - plug).abs() < 1e-10);
        }
        assert!((t.point - g.point).abs() < 1e-10 && (t.point - b.point).abs() < 1e-10);
        // naive OR: (5/8 · 4/6) / (3/8 · 2/6)
        let naive_or = (0.625 * (4.0 / 6.0)) / (0.375 * (2.0 / 6.0));
        assert!((t.point - naive_or).abs() < 1e-10);
    }

    #[test]
    fn gamma_infeasible() {
        // r = 0.75; P/r - (1-r)/r γ with γ = 1 → 0.8333 - 0.3333 = 0.5 feasible;
        // use γ = 0 → 0.8333 feasible; raise P: make the mixed cell all ones.
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((1, (i >= 8) as u8, Some(if i < 8 { 1.0 } else { 0.0 })));
            rows.push((0, (i >= 2) as u8, Some(0.0)));
        }
        // r = 0.2/0.8 = 0.25; γ = 0 → 4.0 > 1
        let ds = ds_from(&rows, EventCoding::event_no_harmed(), OutcomeDirection::LowerIsBetter);
        assert_eq!(binary_gamma(&ds, 0.0).unwrap_err().name(), "ProbabilityOutOfRange");
    }

    #[test]
    fn gamma_with_empty_benefiters() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((1, (i >= 8) as u8, Some((i < 3) as u8 as f64)));
            rows.push((0, (i >= 8) as u8, Some((i < 5) as u8 as f64)));
        }
        let ds = ds_from(&rows, EventCoding::event_no_harmed(), OutcomeDirection::LowerIsBetter);
        let g = binary_gamma(&ds, 3.0 / 8.0).unwrap();
        assert!((g.extras["pr_y1_s00"] - 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn tau_limit_goes_to_zero() {
        let ds = binary_fixture();
        let r = binary_tau(&ds, 1e9).unwrap();
        assert!(r.extras["pr_y1_s00"] < 1e-8);
    }

    #[test]
    fn beta_negative_lowers_probability() {
        let ds = binary_fixture();
        let b0 = binary_beta(&ds, 0.0).unwrap().extras["pr_y1_s00"];
        let bn = binary_beta(&ds, -1.0).unwrap();
        assert!(bn.extras["pr_y1_s00"] <= b0);
        assert!(bn.extras["alpha_residual"].abs() < 1e-10);
        // direct two-point check
        let a = bn.sensitivity_params["alpha"];
        let r = 0.75;
        let direct = 0.625 * expit(a - 1.0) / r;
        assert!((direct - bn.extras["pr_y1_s00"]).abs() < 1e-12);
    }

    fn continuous_fixture(coding: EventCoding) -> TrialDataset {
        let mut rows = Vec::new();
        for i in 0..40 {
            let y = ((i * 37) % 17) as f64 / 4.0 - 2.0;
            rows.push((1, (i % 5 == 0) as u8, Some(y - 0.3)));
            rows.push((0, (i % 10 == 0) as u8, Some(y)));
        }
        ds_from(&rows, coding, OutcomeDirection::LowerIsBetter)
    }

    #[test]
    fn gbh_null_is_naive() {
        // control event-free rate 0.9 > treated 0.8 → S(1) >= S(0) weights control
        let ds = continuous_fixture(EventCoding::adherence(Monotonicity::S1GeS0));
        let p = gbh_point(&ds, 0.0).unwrap();
        let naive = naive_completers(&ds).unwrap().point;
        assert!((p.estimate - naive).abs() < 1e-10);
    }

    #[test]
    fn gbh_odds_multiplier() {
        assert!((odds_multiplier_per_unit_drop(-1.5) - 4.48).abs() < 5e-3);
    }

    #[test]
    fn gbh_curve_monotone_and_normalised() {
        let ds = continuous_fixture(EventCoding::adherence(Monotonicity::S1GeS0));
        let grid = linspace(-1.5, 0.0, 16);
        let c = gbh_continuous(&ds, &grid, 50, 3, 0.95, Resampling::StratifiedByArm).unwrap();
        assert_eq!(c.grid.len(), 16);
        let est: Vec<f64> = c.estimates.iter().map(|e| e.unwrap()).collect();
        // weighting better (lower) control outcomes makes the control mean lower, so
        // the treated-minus-control estimate rises toward zero as beta decreases
        for w in est.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        for &b in &grid {
            assert!(gbh_point(&ds, b).unwrap().residual.abs() < 1e-8);
        }
        let lo = c.ci_low.unwrap();
        let hi = c.ci_high.unwrap();
        for j in 0..16 {
            assert!(lo[j].unwrap() <= hi[j].unwrap());
        }
    }

    #[test]
    fn cace_band_identities() {
        let ds = continuous_fixture(EventCoding::adherence(Monotonicity::None));
        let naive = naive_completers(&ds).unwrap().point;
        let r = cace_band_no_monotonicity(&ds, 0.1, 3.0, 0.0).unwrap();
        let pi0 = 0.9;
        assert!((r.point - (naive + 0.1 / pi0 * 3.0)).abs() < 1e-12);
        let r0 = cace_band_no_monotonicity(&ds, 0.1, 0.0, 0.0).unwrap();
        assert!((r0.point - naive).abs() < 1e-12);
        // pi01 below max(0, pi0 - pi1) = 0.1 is infeasible
        assert_eq!(cace_band_no_monotonicity(&ds, 0.05, 0.0, 0.0).unwrap_err().name(), "InfeasiblePi01");
    }

    #[test]
    fn cace_band_zero_pi01_kills_beta0() {
        // equal arms: pi0 = pi1
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((1, (i >= 8) as u8, Some(i as f64)));
            rows.push((0, (i >= 8) as u8, Some(0.5 * i as f64)));
        }
        let ds = ds_from(&rows, EventCoding::adherence(Monotonicity::None), OutcomeDirection::LowerIsBetter);
        let a = cace_band_no_monotonicity(&ds, 0.0, 7.0, 2.0).unwrap();
        let b = cace_band_no_monotonicity(&ds, 0.0, -3.0, 2.0).unwrap();
        assert_eq!(a.point, b.point);
        assert_eq!(a.extras["alpha"], 0.0);
    }

    #[test]
    fn sace_linear_in_alpha() {
        let ds = continuous_fixture(EventCoding::survival());
        let naive = naive_completers(&ds).unwrap().point;
        assert!((sace_crude(&ds, 0.0).unwrap().point - naive).abs() < 1e-15);
        assert!((sace_crude(&ds, -0.1).unwrap().point - (naive + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn trimmed_mean_example() {
        let m = trimmed_best_mean(&[1.0, 2.0, 3.0, 4.0], 0.5, OutcomeDirection::HigherIsBetter).unwrap();
        assert_eq!(m, 3.5);
        let f = trimmed_best_mean(&[1.0, 2.0, 3.0, 4.0], 0.625, OutcomeDirection::HigherIsBetter).unwrap();
        assert!((f - (4.0 + 3.0 + 0.5 * 2.0) / 2.5).abs() < 1e-12);
    }

    #[test]
    fn bounds_collapse_when_rates_equal() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((1, (i >= 8) as u8, Some(i as f64)));
            rows.push((0, (i >= 8) as u8, Some(0.5 * i as f64)));
        }
        let ds = ds_from(&rows, EventCoding::survival(), OutcomeDirection::HigherIsBetter);
        let b = zhang_rubin_bounds(&ds).unwrap();
        assert_eq!(b.lower, b.upper);
        assert_eq!(b.trim_fraction, 1.0);
    }

    #[test]
    fn bounds_reject_inverted_rates() {
        let ds = continuous_fixture(EventCoding::survival());
        // control survival 0.9 > treated 0.8
        assert_eq!(zhang_rubin_bounds(&ds).unwrap_err().name(), "MonotonicityInconsistent");
    }

    proptest! {
        #[test]
        fn gbh_residual_small(beta in -3.0f64..1.0, shift in -5.0f64..5.0) {
            let ys: Vec<f64> = (0..30).map(|i| ((i * 13) % 11) as f64 * 0.3 + shift).collect();
            let a = gbh_alpha(&ys, 0.7, beta).unwrap();
            let s: f64 = ys.iter().map(|&y| expit(a + beta * y)).sum::<f64>() / (0.7 * 30.0);
            prop_assert!((s - 1.0).abs() < 1e-8);
        }

        #[test]
        fn cace_band_affine(b0 in -5.0f64..5.0, b1 in -5.0f64..5.0) {
            let ds = continuous_fixture(EventCoding::adherence(Monotonicity::None));
            let r = cace_band_no_monotonicity(&ds, 0.12, b0, b1).unwrap();
            let base = cace_band_no_monotonicity(&ds, 0.12, 0.0, 0.0).unwrap();
            let want = base.point + 0.12 / 0.9 * b0 - (0.8 - 0.9 + 0.12) / 0.8 * b1;
            prop_assert!((r.point - want).abs() < 1e-10);
        }

        #[test]
        fn bounds_ordered(vals in proptest::collection::vec(-10.0f64..10.0, 5..30)) {
            let mut rows = Vec::new();
            for (i, v) in vals.iter().enumerate() {
                rows.push((1, 0, Some(*v)));
                rows.push((0, (i % 2) as u8, Some(0.0)));
            }
            let ds = ds_from(&rows, EventCoding::survival(), OutcomeDirection::HigherIsBetter);
            let b = zhang_rubin_bounds(&ds).unwrap();
            prop_assert!(b.lower <= b.upper);
        }
    }
}
