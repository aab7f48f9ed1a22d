//! Candidate election against the projected samples, and the test-time
//! noise controller that adapts generation diversity from the spread of
//! candidate qualities.

use serde::{Deserialize, Serialize};

use crate::augment::ProjectedSet;
use crate::error::{Error, Result};
use crate::generation::{generate_candidates, CandidateSet, MoEParams, StaticCond};
use crate::grid::Map2;
use crate::scene::SampleSet;

/// State of the noise controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCtlState {
    /// Current noise standard deviation injected into the fusion gain.
    pub sigma_t: f64,
    pub delta_sigma: f64,
    pub sigma_max: f64,
    pub var_threshold: f64,
}

impl NoiseCtlState {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t > 0.0 && self.sigma_t <= self.sigma_max) {
            return Err(Error::InvalidConfig(format!(
                "sigma_t must lie in (0, sigma_max], got {} vs max {}",
                self.sigma_t, self.sigma_max
            )));
        }
        if self.delta_sigma <= 0.0 || self.var_threshold <= 0.0 {
            return Err(Error::InvalidConfig(
                "delta_sigma and var_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for NoiseCtlState {
    fn default() -> Self {
        NoiseCtlState { sigma_t: 0.05, delta_sigma: 0.05, sigma_max: 0.3, var_threshold: 1e-3 }
    }
}

/// Election outcome for one candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionReport {
    pub distances: Vec<f64>,
    pub winner_index: usize,
    /// Population variance of the distances.
    pub variance: f64,
    pub updated_sigma: f64,
}

/// Squared disagreement between a candidate and the projected samples.
///
/// Pass-through entries compare against the raw sample value; dropped
/// entries substitute the candidate's own value and so contribute zero.
pub fn election_distance(
    candidate: &Map2,
    projected: &ProjectedSet,
    samples: &SampleSet,
) -> Result<f64> {
    if projected.entries.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} projected entries", samples.len()),
            got: format!("{}", projected.entries.len()),
        });
    }
    let mut acc = 0.0f64;
    for e in &projected.entries {
        if e.x >= candidate.nx() || e.y >= candidate.ny() {
            return Err(Error::OutOfRange(format!(
                "projected entry ({}, {}) outside candidate map",
                e.x, e.y
            )));
        }
        if e.dropped {
            continue; // r_hat := candidate value, zero term
        }
        let r_bar = candidate.get(e.x, e.y) as f64;
        let r_hat = e.rss_hat as f64;
        acc += (r_bar - r_hat) * (r_bar - r_hat);
    }
    Ok(acc)
}

/// Pick the candidate minimizing the election distance (ties resolve to the
/// lowest index) and report all distances with their population variance.
pub fn select_best(
    candidates: &CandidateSet,
    projected: &ProjectedSet,
    samples: &SampleSet,
) -> Result<(Map2, ElectionReport)> {
    if candidates.candidates.is_empty() {
        return Err(Error::InvalidConfig("empty candidate set".into()));
    }
    let distances = candidates
        .candidates
        .iter()
        .map(|c| election_distance(c, projected, samples))
        .collect::<Result<Vec<_>>>()?;
    let winner_index = distances
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap();
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let variance =
        distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / distances.len() as f64;
    let report = ElectionReport {
        distances,
        winner_index,
        variance,
        updated_sigma: 0.0, // filled by the controller
    };
    Ok((candidates.candidates[winner_index].clone(), report))
}

/// The controller rule: grow the noise (capped) while candidate quality
/// variance stays below the threshold, halve it otherwise.
pub fn update_noise(state: &NoiseCtlState, variance: f64) -> NoiseCtlState {
    let sigma_t = if variance < state.var_threshold {
        (state.sigma_t + state.delta_sigma).min(state.sigma_max)
    } else {
        state.sigma_t / 2.0
    };
    NoiseCtlState { sigma_t, ..*state }
}

/// One row of the election-loop trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionRound {
    pub round: usize,
    pub sigma: f64,
    pub variance: f64,
    pub best_distance: f64,
}

/// Generate, score, and adapt for `rounds` iterations; the winner is the
/// best candidate seen across all rounds.
#[allow(clippy::too_many_arguments)]
pub fn run_election_loop(
    moe: &MoEParams,
    cond: &StaticCond,
    projected: &ProjectedSet,
    samples: &SampleSet,
    m: usize,
    steps: usize,
    rounds: usize,
    init_state: NoiseCtlState,
    seed: u64,
) -> Result<(Map2, ElectionReport, Vec<ElectionRound>)> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("need at least one election round".into()));
    }
    init_state.validate()?;
    let mut state = init_state;
    let mut best: Option<(f64, Map2, ElectionReport)> = None;
    let mut trace = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let round_seed = seed.wrapping_add(round as u64);
        let set = generate_candidates(moe, cond, m, steps, round_seed, state.sigma_t)?;
        let (winner, mut report) = select_best(&set, projected, samples)?;
        let best_d = report.distances[report.winner_index];
        state = update_noise(&state, report.variance);
        report.updated_sigma = state.sigma_t;
        trace.push(ElectionRound {
            round,
            sigma: set.sigma_trace[0],
            variance: report.variance,
            best_distance: best_d,
        });
        if best.as_ref().map_or(true, |(d, _, _)| best_d < *d) {
            best = Some((best_d, winner, report));
        }
    }
    let (_, winner, report) = best.unwrap();
    Ok((winner, report, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::ProjectedSample;
    use crate::scene::{GridSpec, Sample};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn setup(k: usize, seed: u64) -> (SampleSet, ProjectedSet, Map2) {
        let grid = GridSpec::default();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        let mut entries = Vec::new();
        for i in 0..k {
            let (x, y) = (rng.gen_range(0..32), rng.gen_range(0..32));
            samples.push(Sample { x, y, h: i % 3, rss: rng.gen_range(0.0..1.0) });
            entries.push(ProjectedSample {
                source_index: i,
                x,
                y,
                rss_hat: rng.gen_range(0.0..1.0),
                dropped: rng.gen_bool(0.2),
                pass_through: false,
            });
        }
        let candidate = Map2::from_fn(32, 32, |_, _| rng.gen_range(0.0..1.0));
        (
            SampleSet { samples, grid },
            ProjectedSet { target_h: 0, entries },
            candidate,
        )
    }

    #[test]
    fn exact_agreement_scores_zero() {
        let (samples, mut projected, mut candidate) = setup(10, 1);
        for e in &mut projected.entries {
            e.dropped = false;
            candidate.set(e.x, e.y, e.rss_hat);
        }
        assert_eq!(election_distance(&candidate, &projected, &samples).unwrap(), 0.0);
    }

    #[test]
    fn three_sites_differing_by_tenth() {
        let grid = GridSpec::default();
        let samples = SampleSet {
            samples: (0..3)
                .map(|i| Sample { x: i, y: 0, h: 0, rss: 0.5 })
                .collect(),
            grid,
        };
        let projected = ProjectedSet {
            target_h: 0,
            entries: (0..3)
                .map(|i| ProjectedSample {
                    source_index: i,
                    x: i,
                    y: 0,
                    rss_hat: 0.5,
                    dropped: false,
                    pass_through: true,
                })
                .collect(),
        };
        let mut candidate = Map2::zeros(32, 32);
        for i in 0..3 {
            candidate.set(i, 0, 0.6);
        }
        let d = election_distance(&candidate, &projected, &samples).unwrap();
        // Values are stored as f32, so 0.1 carries representation error.
        assert!((d - 0.03).abs() < 1e-7, "d = {d}");
    }

    #[test]
    fn matches_brute_force_resummation() {
        let (samples, projected, candidate) = setup(40, 7);
        let d = election_distance(&candidate, &projected, &samples).unwrap();
        let mut brute = 0.0f64;
        for e in &projected.entries {
            if !e.dropped {
                let diff = candidate.get(e.x, e.y) as f64 - e.rss_hat as f64;
                brute += diff * diff;
            }
        }
        assert!((d - brute).abs() < 1e-12);
    }

    #[test]
    fn select_best_prefers_exact_candidate_and_breaks_ties_low() {
        let (samples, mut projected, _) = setup(12, 3);
        for e in &mut projected.entries {
            e.dropped = false;
        }
        let mut exact = Map2::zeros(32, 32);
        for e in &projected.entries {
            exact.set(e.x, e.y, e.rss_hat);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut candidates = vec![];
        for _ in 0..9 {
            candidates.push(Map2::from_fn(32, 32, |_, _| rng.gen_range(0.0..1.0)));
        }
        candidates.insert(4, exact.clone());
        let set = CandidateSet {
            seeds: (0..10).map(|i| i as u64).collect(),
            sigma_trace: vec![0.1; 10],
            candidates,
        };
        let (winner, report) = select_best(&set, &projected, &samples).unwrap();
        assert_eq!(report.winner_index, 4);
        assert_eq!(winner, exact);
        // Winner's distance is the minimum, verified exhaustively.
        for d in &report.distances {
            assert!(report.distances[report.winner_index] <= *d);
        }

        // Tie-breaking: two identical candidates -> lower index wins.
        let set2 = CandidateSet {
            candidates: vec![exact.clone(), exact.clone()],
            seeds: vec![0, 1],
            sigma_trace: vec![0.1; 2],
        };
        let (_, r2) = select_best(&set2, &projected, &samples).unwrap();
        assert_eq!(r2.winner_index, 0);
    }

    #[test]
    fn noise_controller_triple() {
        let base = NoiseCtlState {
            sigma_t: 0.10,
            delta_sigma: 0.05,
            sigma_max: 0.3,
            var_threshold: 1.0,
        };
        let s1 = update_noise(&base, 0.5);
        assert!((s1.sigma_t - 0.15).abs() < 1e-12);
        let s2 = update_noise(&NoiseCtlState { sigma_t: 0.28, ..base }, 0.5);
        assert!((s2.sigma_t - 0.30).abs() < 1e-12);
        let s3 = update_noise(&NoiseCtlState { sigma_t: 0.20, ..base }, 2.0);
        assert!((s3.sigma_t - 0.10).abs() < 1e-12);
    }

    #[test]
    fn repeated_halving_stays_positive() {
        let mut s = NoiseCtlState::default();
        for _ in 0..200 {
            s = update_noise(&s, s.var_threshold + 1.0);
            assert!(s.sigma_t > 0.0 && s.sigma_t <= s.sigma_max);
        }
    }

    proptest! {
        #[test]
        fn controller_output_always_in_range(
            sigma in 1e-6f64..0.3,
            dv in 1e-6f64..0.2,
            var in 0.0f64..10.0,
        ) {
            let s = NoiseCtlState { sigma_t: sigma, delta_sigma: dv, sigma_max: 0.3, var_threshold: 1.0 };
            let next = update_noise(&s, var);
            prop_assert!(next.sigma_t > 0.0 && next.sigma_t <= s.sigma_max);
        }

        #[test]
        fn argmin_invariant_under_positive_rescaling(scale in 0.01f64..100.0) {
            let (samples, projected, _) = setup(20, 11);
            let mut rng = ChaCha12Rng::seed_from_u64(13);
            let candidates: Vec<Map2> = (0..6)
                .map(|_| Map2::from_fn(32, 32, |_, _| rng.gen_range(0.0..1.0)))
                .collect();
            let set = CandidateSet {
                seeds: (0..6).map(|i| i as u64).collect(),
                sigma_trace: vec![0.1; 6],
                candidates,
            };
            let (_, report) = select_best(&set, &projected, &samples).unwrap();
            let scaled_winner = report
                .distances
                .iter()
                .map(|d| d * scale)
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            prop_assert_eq!(scaled_winner, report.winner_index);
        }
    }
}
