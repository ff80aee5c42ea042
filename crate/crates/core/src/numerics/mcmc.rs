//! Convergence diagnostics for MCMC output: split-R̂ and the multi-chain
//! effective sample size with Geyer's initial monotone sequence.

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Splits every chain in half (dropping a middle draw for odd lengths).
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let len = c.len();
        out.push(&c[..n]);
        out.push(&c[len - n..]);
    }
    out
}

struct Moments {
    w: f64,
    var_plus: f64,
    n: usize,
}

fn moments(parts: &[&[f64]]) -> Option<Moments> {
    let n = parts.first()?.len();
    if n < 2 {
        return None;
    }
    let means: Vec<f64> = parts.iter().map(|c| mean(c)).collect();
    let w = parts
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / parts.len() as f64;
    let b_over_n = if parts.len() > 1 {
        let mm = mean(&means);
        means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (parts.len() - 1) as f64
    } else {
        0.0
    };
    Some(Moments {
        w,
        var_plus: (n - 1) as f64 / n as f64 * w + b_over_n,
        n,
    })
}

/// Split potential scale reduction factor. Constant chains give 1; fewer
/// than four draws per chain give NaN.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let Some(m) = moments(&parts) else {
        return f64::NAN;
    };
    if m.w == 0.0 {
        return if m.var_plus == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (m.var_plus / m.w).sqrt()
}

/// Effective sample size over split chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let Some(m) = moments(&parts) else {
        return f64::NAN;
    };
    let n = m.n;
    let total = (parts.len() * n) as f64;
    if m.var_plus == 0.0 {
        return total;
    }
    let centered: Vec<Vec<f64>> = parts
        .iter()
        .map(|c| {
            let mu = mean(c);
            c.iter().map(|v| v - mu).collect()
        })
        .collect();
    // Within-chain variance using the biased autocovariance at lag 0, to
    // match the lag-t estimates below.
    let rho = |t: usize| -> f64 {
        let acov = centered
            .iter()
            .map(|c| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / centered.len() as f64;
        1.0 - (m.w - acov) / m.var_plus
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    let tau = tau.max(1.0 / total.log10().max(1.0));
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn iid_chains_have_rhat_near_one_and_full_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let r = split_rhat(&chains);
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let ess = effective_sample_size(&chains);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // ESS/N for AR(1) with coefficient a is (1 - a)/(1 + a).
        let a = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut v = 0.0;
                (0..20_000)
                    .map(|_| {
                        v = a * v + rng.sample::<f64, _>(StandardNormal);
                        v
                    })
                    .collect()
            })
            .collect();
        let ratio = effective_sample_size(&chains) / 80_000.0;
        let expect = (1.0 - a) / (1.0 + a);
        assert!((ratio - expect).abs() < 0.2 * expect, "{ratio} vs {expect}");
    }

    #[test]
    fn shifted_chains_are_flagged() {
        let chains = vec![vec![0.0, 1.0, 0.5, 0.2, 0.7, 0.1], vec![5.0, 6.0, 5.5, 5.2, 5.7, 5.1]];
        assert!(split_rhat(&chains) > 2.0);
        assert_eq!(split_rhat(&[vec![2.0; 10], vec![2.0; 10]]), 1.0);
    }
}
