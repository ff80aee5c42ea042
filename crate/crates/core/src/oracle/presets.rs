//! Named configurations, one per estimator family, each with a `_violated`
//! twin that breaks exactly one identifying assumption.
//!
//! | preset | holds | twin breaks |
//! |---|---|---|
//! | `iv_compliance` | exclusion, no defiers | exclusion (never/always-takers shifted) |
//! | `gbh_monotone` | monotonicity, logistic outcome selection | monotonicity (S10 mass) |
//! | `pi_baseline` | principal ignorability, no Harmed | PI (latent confounder of strata and outcome) |
//! | `crossworld_independent` | `S(0) ⫫ S(1) | X`, PI | cross-world independence (shared strata latent) |
//! | `staged_qu` | A4–A7 | A5 (latent in stage logits and outcome) |
//! | `confounded_obs` | A4*/A5* given X | A4* (latent in assignment and outcome) |
//! | `binary_event` | monotonicity, binary outcome | monotonicity (Harmed mass) |
//! | `confounded_binary` | A4*/A5*, monotonicity | A4* |

use super::{
    Assignment, BlockModel, CovariateDist, DGPConfig, OutcomeMechanism, StagedSpec, StrataMechanism,
};
use crate::data::{Arm, EventCoding, Monotonicity, OutcomeDirection};
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 9] = [
    "iv_compliance",
    "gbh_monotone",
    "pi_baseline",
    "crossworld_independent",
    "staged_qu",
    "confounded_obs",
    "binary_event",
    "confounded_binary",
    "mixture_monotone",
];

const DEFAULT_N: usize = 10_000;

fn normal() -> CovariateDist {
    CovariateDist::Normal { mean: 0.0, sd: 1.0 }
}

fn outcome(intercept: [f64; 2], slope: [Vec<f64>; 2], noise_sd: f64) -> OutcomeMechanism {
    OutcomeMechanism {
        intercept,
        slope,
        stratum_shift: [[0.0; 4]; 2],
        z_slope: [vec![], vec![]],
        latent: 0.0,
        noise_sd,
        rho: 0.0,
        binary: false,
        exclusion: false,
    }
}

fn iv_compliance() -> DGPConfig {
    let mut o = outcome([1.0, 1.0], [vec![0.5, 0.3], vec![0.5, 0.3]], 1.0);
    // Complier effect 2; strata differ at baseline.
    o.stratum_shift = [[0.0, 0.5, 0.0, -0.5], [0.0, 2.5, 0.0, -0.5]];
    o.exclusion = true;
    DGPConfig {
        name: "iv_compliance".into(),
        n: DEFAULT_N,
        covariates: vec![normal(), CovariateDist::Bernoulli { p: 0.5 }],
        strata: StrataMechanism::MultinomialLogit {
            eta: [
                Some(vec![0.0, 0.3, 0.0]),
                Some(vec![0.8, -0.2, 0.3]),
                None,
                Some(vec![-0.7, 0.4, 0.0]),
            ],
            latent: [0.0; 4],
        },
        outcome: o,
        staged: None,
        assignment: Assignment::Randomized { p: 0.5 },
        coding: EventCoding::iv(),
        direction: OutcomeDirection::HigherIsBetter,
        observe_outcome_after_event: true,
    }
}

fn gbh_monotone() -> DGPConfig {
    DGPConfig {
        name: "gbh_monotone".into(),
        n: DEFAULT_N,
        covariates: vec![normal(), CovariateDist::Bernoulli { p: 0.4 }],
        strata: StrataMechanism::OutcomeSelection {
            mixed: Arm::Control,
            s_mixed: vec![-1.5, 0.3, 0.0],
            alpha: 1.8,
            beta: -1.0,
            violation: 0.0,
        },
        outcome: outcome([0.5, 0.0], [vec![0.4, 0.2], vec![0.4, 0.2]], 1.0),
        staged: None,
        assignment: Assignment::Randomized { p: 0.5 },
        coding: EventCoding::adherence(Monotonicity::S1GeS0),
        direction: OutcomeDirection::LowerIsBetter,
        observe_outcome_after_event: false,
    }
}

fn pi_baseline() -> DGPConfig {
    DGPConfig {
        name: "pi_baseline".into(),
        n: DEFAULT_N,
        covariates: vec![normal(), normal(), CovariateDist::Bernoulli { p: 0.5 }],
        strata: StrataMechanism::MultinomialLogit {
            eta: [
                Some(vec![0.5, 0.8, -0.5, 0.3]),
                None,
                Some(vec![-0.3, -0.4, 0.6, 0.0]),
                Some(vec![0.0, 0.0, 0.0, 0.0]),
            ],
            latent: [0.0; 4],
        },
        outcome: outcome([0.0, 0.5], [vec![1.0, 0.5, -0.5], vec![1.3, 0.5, 0.0]], 1.0),
        staged: None,
        assignment: Assignment::Randomized { p: 0.5 },
        coding: EventCoding::event_no_harmed(),
        direction: OutcomeDirection::HigherIsBetter,
        observe_outcome_after_event: false,
    }
}

fn crossworld_independent() -> DGPConfig {
    DGPConfig {
        name: "crossworld_independent".into(),
        n: DEFAULT_N,
        covariates: vec![normal(), normal()],
        strata: StrataMechanism::IndependentConditional {
            s0: vec![-0.5, 1.2, -0.4],
            s1: vec![-0.8, 1.2, 0.5],
            latent: 0.0,
            shared: 0.0,
        },
        outcome: outcome([0.0, -0.4], [vec![0.8, 0.4], vec![1.6, 0.4]], 1.0),
        staged: None,
        assignment: Assignment::Randomized { p: 0.5 },
        coding: EventCoding::adherence(Monotonicity::None),
        direction: OutcomeDirection::LowerIsBetter,
        observe_outcome_after_event: true,
    }
}

fn staged_spec() -> StagedSpec {
    let b = |coefs: Vec<Vec<f64>>| BlockModel { coefs, noise_sd: 0.8 };
    StagedSpec {
        block_dims: vec![2, 2],
        z_models: [
            vec![
                b(vec![vec![0.0, 0.5, 0.2, 0.3], vec![0.2, -0.3, 0.4, 0.0]]),
                b(vec![
                    vec![0.1, 0.2, 0.0, 0.1, 0.6, 0.2],
                    vec![0.0, 0.0, 0.3, 0.0, 0.3, 0.5],
                ]),
            ],
            vec![
                b(vec![vec![-0.4, 0.5, 0.2, 0.3], vec![-0.1, -0.3, 0.4, 0.0]]),
                b(vec![
                    vec![-0.3, 0.2, 0.0, 0.1, 0.6, 0.2],
                    vec![-0.2, 0.0, 0.3, 0.0, 0.3, 0.5],
                ]),
            ],
        ],
        stage_logits: vec![
            vec![2.2, 0.3, -0.2, 0.0],
            vec![1.8, 0.2, 0.0, 0.2, -0.5, 0.3],
            vec![1.6, 0.0, 0.2, 0.0, -0.3, 0.0, -0.5, 0.3],
        ],
        latent: 0.0,
    }
}

fn staged_qu() -> DGPConfig {
    let mut o = outcome([0.0, -0.3], [vec![0.5, 0.3, -0.2], vec![0.5, 0.3, -0.2]], 1.0);
    o.z_slope = [vec![0.6, 0.2, 0.8, 0.3], vec![0.6, 0.2, 0.8, 0.3]];
    DGPConfig {
        name: "staged_qu".into(),
        n: DEFAULT_N,
        covariates: vec![normal(), normal(), CovariateDist::Bernoulli { p: 0.4 }],
        strata: StrataMechanism::Staged,
        outcome: o,
        staged: Some(staged_spec()),
        assignment: Assignment::Randomized { p: 0.5 },
        coding: EventCoding::adherence(Monotonicity::None),
        direction: OutcomeDirection::LowerIsBetter,
        observe_outcome_after_event: false,
    }
}

fn confounded_obs() -> DGPConfig {
    let mut c = staged_qu();
    c.name = "confounded_obs".into();
    c.assignment = Assignment::Confounded {
        coef: vec![0.1, 0.8, -0.5, 0.4],
        latent: 0.0,
    };
    c
}

fn binary_event() -> DGPConfig {
    let mut o = outcome([-0.3, 0.2], [vec![0.5, -0.2], vec![0.5, -0.2]], 1.0);
    o.binary = true;
    o.stratum_shift = [[0.0, 0.0, 0.4, 0.0], [0.0, 0.0, -0.6, 0.0]];
    DGPConfig {
        name: "binary_event".into(),
        n: DEFAULT_N,
        covariates: vec![normal(), CovariateDist::Bernoulli { p: 0.5 }],
        strata: StrataMechanism::MultinomialLogit {
            eta: [
                Some(vec![0.8, 0.3, 0.0]),
                None,
                Some(vec![-0.2, -0.3, 0.2]),
                Some(vec![-0.5, 0.0, 0.0]),
            ],
            latent: [0.0; 4],
        },
        outcome: o,
        staged: None,
        assignment: Assignment::Randomized { p: 0.5 },
        coding: EventCoding::event_no_harmed(),
        direction: OutcomeDirection::LowerIsBetter,
        observe_outcome_after_event: false,
    }
}

fn confounded_binary() -> DGPConfig {
    let mut c = binary_event();
    c.name = "confounded_binary".into();
    c.assignment = Assignment::Confounded {
        coef: vec![-0.2, 0.9, 0.6],
        latent: 0.0,
    };
    c
}

/// Monotone strata with well-separated outcome distributions, generated
/// from the Gaussian mixture model itself; `Y` is unobserved after the event.
fn mixture_monotone() -> DGPConfig {
    let mut o = outcome([0.0, -0.25], [vec![0.5, -0.3], vec![0.5, -0.3]], 0.7);
    o.stratum_shift = [[0.0, 0.0, 2.0, -2.0], [0.0, 0.0, 2.0, -2.0]];
    DGPConfig {
        name: "mixture_monotone".into(),
        n: DEFAULT_N,
        covariates: vec![normal(), normal()],
        strata: StrataMechanism::MultinomialLogit {
            eta: [
                Some(vec![0.6, 0.4, -0.3]),
                None,
                Some(vec![0.0, 0.0, 0.0]),
                Some(vec![-0.2, -0.3, 0.4]),
            ],
            latent: [0.0; 4],
        },
        outcome: o,
        staged: None,
        assignment: Assignment::Randomized { p: 0.5 },
        coding: EventCoding::event_no_harmed(),
        direction: OutcomeDirection::HigherIsBetter,
        observe_outcome_after_event: false,
    }
}

/// Looks up a preset; `<name>_violated` gives the negative-control twin.
pub fn preset(name: &str) -> Result<DGPConfig> {
    let (base, violated) = match name.strip_suffix("_violated") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let mut c = match base {
        "iv_compliance" => iv_compliance(),
        "gbh_monotone" => gbh_monotone(),
        "pi_baseline" => pi_baseline(),
        "crossworld_independent" => crossworld_independent(),
        "staged_qu" => staged_qu(),
        "confounded_obs" => confounded_obs(),
        "binary_event" => binary_event(),
        "confounded_binary" => confounded_binary(),
        "mixture_monotone" => mixture_monotone(),
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    if violated {
        c.name = name.to_string();
        match base {
            "iv_compliance" => {
                c.outcome.exclusion = false;
                c.outcome.stratum_shift[1][0] += 1.0;
                c.outcome.stratum_shift[1][3] += 1.0;
            }
            "gbh_monotone" => {
                if let StrataMechanism::OutcomeSelection { violation, .. } = &mut c.strata {
                    *violation = 0.3;
                }
            }
            "pi_baseline" => {
                if let StrataMechanism::MultinomialLogit { latent, .. } = &mut c.strata {
                    *latent = [1.0, 0.0, -1.0, 0.0];
                }
                c.outcome.latent = 1.0;
            }
            "crossworld_independent" => {
                if let StrataMechanism::IndependentConditional { shared, .. } = &mut c.strata {
                    *shared = 3.0;
                }
            }
            "staged_qu" => {
                c.staged.as_mut().expect("staged").latent = -1.0;
                c.outcome.latent = 1.0;
            }
            "confounded_obs" | "confounded_binary" => {
                if let Assignment::Confounded { latent, .. } = &mut c.assignment {
                    *latent = 1.5;
                }
                c.outcome.latent = 1.0;
            }
            "mixture_monotone" => {
                // Harmed stratum gets mass.
                if let StrataMechanism::MultinomialLogit { eta, .. } = &mut c.strata {
                    eta[1] = Some(vec![-0.8, 0.0, 0.0]);
                }
            }
            "binary_event" => {
                if let StrataMechanism::MultinomialLogit { eta, .. } = &mut c.strata {
                    eta[1] = Some(vec![-1.0, 0.0, 0.0]);
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(c)
}
