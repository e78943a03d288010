//! Posterior state segmentation: filtered and smoothed marginals and the
//! most likely state path for each analyst.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{period_log_table, transition_sequence, CommonParams, ModelSpec, RandomEffects};
use crate::math::log_sum_exp;
use crate::panel::{PanelData, PeriodObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePosterior {
    pub analyst_id: String,
    /// `[t][s]`: `P(S_t = s | O_1..O_T)`.
    pub smoothed: Vec<Vec<f64>>,
    /// `[t][s]`: `P(S_t = s | O_1..O_t)`.
    pub filtered: Vec<Vec<f64>>,
    /// Zero-based most likely path.
    pub viterbi: Vec<usize>,
    pub log_lik: f64,
}

fn normalize(log_w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_w);
    let mut p: Vec<f64> = log_w.iter().map(|l| (l - z).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Forward-backward and Viterbi in log space, over the same period
/// probabilities and transition matrices as the likelihood.
pub fn smooth_states(
    spec: &ModelSpec,
    params: &CommonParams,
    re: &RandomEffects,
    periods: &[PeriodObservation],
) -> Result<StatePosterior> {
    params.check_shape(spec)?;
    let n = spec.n_states;
    let horizon = periods.len();
    if horizon == 0 {
        return Err(Error::InvalidData("cannot decode an empty period sequence".into()));
    }
    let lp = period_log_table(spec, params, re.eta, periods)?;
    let trans = transition_sequence(params, re.zeta, periods)?;
    let log_q = |t: usize, from: usize, to: usize| trans[t].get(from, to).ln();
    let log_pi: Vec<f64> = spec.initial.iter().map(|p| p.ln()).collect();

    let mut la = vec![vec![0.0; n]; horizon];
    for s in 0..n {
        la[0][s] = log_pi[s] + lp[0][s];
    }
    for t in 1..horizon {
        for to in 0..n {
            let terms: Vec<f64> = (0..n).map(|from| la[t - 1][from] + log_q(t - 1, from, to)).collect();
            la[t][to] = log_sum_exp(&terms) + lp[t][to];
        }
    }
    let log_lik = log_sum_exp(&la[horizon - 1]);
    if !log_lik.is_finite() {
        return Err(Error::NonFinite {
            t: horizon,
            what: "log-likelihood".into(),
        });
    }

    let mut lb = vec![vec![0.0; n]; horizon];
    for t in (0..horizon - 1).rev() {
        for from in 0..n {
            let terms: Vec<f64> = (0..n)
                .map(|to| log_q(t, from, to) + lp[t + 1][to] + lb[t + 1][to])
                .collect();
            lb[t][from] = log_sum_exp(&terms);
        }
    }

    let filtered: Vec<Vec<f64>> = la.iter().map(|row| normalize(row)).collect();
    let smoothed: Vec<Vec<f64>> = la
        .iter()
        .zip(&lb)
        .map(|(a, b)| normalize(&a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>()))
        .collect();

    // max-product
    let mut score = vec![vec![f64::NEG_INFINITY; n]; horizon];
    let mut back = vec![vec![0usize; n]; horizon];
    for s in 0..n {
        score[0][s] = log_pi[s] + lp[0][s];
    }
    for t in 1..horizon {
        for to in 0..n {
            let (mut best, mut arg) = (f64::NEG_INFINITY, to);
            for from in 0..n {
                let v = score[t - 1][from] + log_q(t - 1, from, to);
                if v > best {
                    best = v;
                    arg = from;
                }
            }
            score[t][to] = best + lp[t][to];
            back[t][to] = arg;
        }
    }
    let mut path = vec![0; horizon];
    path[horizon - 1] = (0..n)
        .max_by(|&a, &b| score[horizon - 1][a].total_cmp(&score[horizon - 1][b]).then(b.cmp(&a)))
        .unwrap_or(0);
    for t in (1..horizon).rev() {
        path[t - 1] = back[t][path[t]];
    }

    Ok(StatePosterior {
        analyst_id: String::new(),
        smoothed,
        filtered,
        viterbi: path,
        log_lik,
    })
}

/// Decodes every analyst; `all_re` is in panel order.
pub fn decode_panel(
    spec: &ModelSpec,
    params: &CommonParams,
    all_re: &[RandomEffects],
    panel: &PanelData,
) -> Result<Vec<StatePosterior>> {
    if all_re.len() != panel.n_analysts() {
        return Err(Error::Shape(format!(
            "{} random-effect pairs for {} analysts",
            all_re.len(),
            panel.n_analysts()
        )));
    }
    spec.check_panel(panel)?;
    panel
        .analysts
        .par_iter()
        .zip(all_re.par_iter())
        .map(|(a, re)| {
            let mut p = smooth_states(spec, params, re, &a.periods)?;
            p.analyst_id = a.analyst_id.clone();
            Ok(p)
        })
        .collect()
}

/// Averages smoothed and filtered marginals over several parameter draws;
/// the path and log-likelihood come from the first draw.
pub fn average_posteriors(draws: &[Vec<StatePosterior>]) -> Result<Vec<StatePosterior>> {
    let Some(first) = draws.first() else {
        return Err(Error::InsufficientSample("no draws to average".into()));
    };
    let m = draws.len() as f64;
    let mut out = first.clone();
    for (i, post) in out.iter_mut().enumerate() {
        for (t, row) in post.smoothed.iter_mut().enumerate() {
            for (s, v) in row.iter_mut().enumerate() {
                *v = draws.iter().map(|d| d[i].smoothed[t][s]).sum::<f64>() / m;
            }
        }
        for (t, row) in post.filtered.iter_mut().enumerate() {
            for (s, v) in row.iter_mut().enumerate() {
                *v = draws.iter().map(|d| d[i].filtered[t][s]).sum::<f64>() / m;
            }
        }
    }
    Ok(out)
}

/// `[t][s]`: number of analysts whose decoded path is in state `s` at `t`.
pub fn occupancy(posteriors: &[StatePosterior], n_states: usize) -> Vec<Vec<usize>> {
    let horizon = posteriors.iter().map(|p| p.viterbi.len()).max().unwrap_or(0);
    let mut counts = vec![vec![0; n_states]; horizon];
    for p in posteriors {
        for (t, &s) in p.viterbi.iter().enumerate() {
            counts[t][s] += 1;
        }
    }
    counts
}

/// `analyst_id,t,state,probability` rows of smoothed marginals, one-based.
pub fn posteriors_csv(posteriors: &[StatePosterior]) -> String {
    let mut out = String::from("analyst_id,t,state,probability\n");
    for p in posteriors {
        for (t, row) in p.smoothed.iter().enumerate() {
            for (s, v) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", p.analyst_id, t + 1, s + 1, v));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_transition_matrix, emission_log_pmf, ThresholdSet};
    use crate::panel::QueryObservation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        horizon: usize,
        same_emissions: bool,
    ) -> (ModelSpec, CommonParams, RandomEffects, Vec<PeriodObservation>) {
        let spec = ModelSpec::new(n, 1, 2).unwrap();
        let mut p = CommonParams::zeros(&spec);
        let cuts: Vec<(Option<f64>, Option<f64>)> = (0..n)
            .map(|s| {
                let d = (s > 0).then(|| rng.random_range(-2.0..0.0));
                let u = (s + 1 < n).then(|| rng.random_range(0.1..2.0));
                (d, u)
            })
            .collect();
        p.thresholds = ThresholdSet::from_cutpoints(&cuts).unwrap();
        for b in p.beta.iter_mut() {
            b[0] = rng.random_range(-1.0..1.0);
        }
        for (s, r) in p.rho.iter_mut().enumerate() {
            r[0] = if same_emissions { 1.0 } else { 0.5 + s as f64 };
            r[1] = if same_emissions {
                0.2
            } else {
                rng.random_range(-0.5..0.5)
            };
        }
        let periods = (0..horizon)
            .map(|t| PeriodObservation {
                period_index: t + 1,
                activities: vec![rng.random_range(0.0..3.0)],
                queries: (0..rng.random_range(0..3))
                    .map(|k| QueryObservation {
                        query_id: format!("q{t}-{k}"),
                        completion_time: rng.random_range(0..20),
                        covariates: vec![1.0, rng.random_range(-1.0..1.0)],
                    })
                    .collect(),
            })
            .collect();
        let re = RandomEffects {
            zeta: rng.random_range(-0.5..0.5),
            eta: rng.random_range(-0.5..0.5),
        };
        (spec, p, re, periods)
    }

    /// Joint log-probabilities of every path.
    fn enumerate(
        spec: &ModelSpec,
        p: &CommonParams,
        re: &RandomEffects,
        periods: &[PeriodObservation],
    ) -> Vec<(Vec<usize>, f64)> {
        let n = spec.n_states;
        let horizon = periods.len();
        let mut out = Vec::new();
        for code in 0..n.pow(horizon as u32) {
            let path: Vec<usize> = (0..horizon).map(|t| (code / n.pow(t as u32)) % n).collect();
            let mut lp = spec.initial[path[0]].ln();
            for t in 0..horizon {
                if t > 0 {
                    let q = build_transition_matrix(p, re.zeta, &periods[t - 1].activities).unwrap();
                    lp += q.get(path[t - 1], path[t]).ln();
                }
                for q in &periods[t].queries {
                    lp += emission_log_pmf(p, path[t], re.eta, q).unwrap();
                }
            }
            out.push((path, lp));
        }
        out
    }

    #[test]
    fn one_state_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (spec, p, re, periods) = random_instance(&mut rng, 1, 4, false);
        let post = smooth_states(&spec, &p, &re, &periods).unwrap();
        assert!(post.smoothed.iter().flatten().all(|&v| v == 1.0));
        assert_eq!(post.viterbi, vec![0; 4]);
    }

    #[test]
    fn marginals_and_path_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in 0..30 {
            let n = 2 + case % 2;
            let horizon = 1 + case % 5;
            let (spec, p, re, periods) = random_instance(&mut rng, n, horizon, case % 3 == 0);
            let post = smooth_states(&spec, &p, &re, &periods).unwrap();
            let paths = enumerate(&spec, &p, &re, &periods);
            let total = log_sum_exp(&paths.iter().map(|x| x.1).collect::<Vec<_>>());
            assert!((post.log_lik - total).abs() < 1e-9);
            for t in 0..horizon {
                for s in 0..n {
                    let m: f64 = paths.iter().filter(|x| x.0[t] == s).map(|x| (x.1 - total).exp()).sum();
                    assert!((post.smoothed[t][s] - m).abs() < 1e-10);
                }
                assert!((post.smoothed[t].iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!((post.filtered[t].iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            for s in 0..n {
                assert!((post.smoothed[horizon - 1][s] - post.filtered[horizon - 1][s]).abs() < 1e-12);
            }
            let best = paths.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let viterbi_lp = paths.iter().find(|x| x.0 == post.viterbi).unwrap().1;
            assert!((viterbi_lp - best).abs() < 1e-9);
            assert!(post.viterbi.windows(2).all(|w| w[0].abs_diff(w[1]) <= 1));
        }
    }

    #[test]
    fn csv_and_occupancy_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (spec, p, re, periods) = random_instance(&mut rng, 3, 3, false);
        let mut post = smooth_states(&spec, &p, &re, &periods).unwrap();
        post.analyst_id = "a1".into();
        let csv = posteriors_csv(std::slice::from_ref(&post));
        assert_eq!(csv.lines().count(), 1 + 3 * 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("a1,1,1,"));
        let occ = occupancy(&[post.clone(), post], 3);
        assert!(occ.iter().all(|row| row.iter().sum::<usize>() == 2));
    }
}
