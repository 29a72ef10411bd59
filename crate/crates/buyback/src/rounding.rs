//! Randomized rounding schemes for single-resource and large-capacity
//! matching runs: the lossless quantile rounding, the direct randomized
//! integral threshold algorithm, and independent per-arrival sampling under
//! large capacities.

use crate::model::{
    allocate_with_buyback, AllocationDistribution, EventTrace, ProfitLedger, WeightMatrixInstance,
};
use crate::engine::RunResult;
use crate::numerics::w_hat_star;
use crate::rng::Rng;
use crate::{Error, Result};

/// Shared randomness of a rounding run: the quantile offset `eta ∈ [0,1)`
/// fixed for the whole run, plus a seed for per-arrival coins.
#[derive(Debug, Clone, Copy)]
pub struct RoundingSeed {
    pub eta: f64,
    pub rng_seed: u64,
}

impl RoundingSeed {
    pub fn new(eta: f64, rng_seed: u64) -> Self {
        assert!((0.0..1.0).contains(&eta), "eta must lie in [0, 1)");
        RoundingSeed { eta, rng_seed }
    }
}

fn check_plan(fractional_masses: &[f64], weights: &[f64]) -> Result<()> {
    if fractional_masses.len() != weights.len() {
        return Err(Error::MisalignedInput(format!(
            "{} fractional masses vs {} weights",
            fractional_masses.len(),
            weights.len()
        )));
    }
    for (i, &x) in fractional_masses.iter().enumerate() {
        if !(0.0..=1.0 + 1e-12).contains(&x) {
            return Err(Error::MisalignedInput(format!("fractional mass x({i}) = {x} outside [0,1]")));
        }
    }
    Ok(())
}

/// Lossless rounding of a single-resource fractional plan: allocate
/// integrally exactly at the arrivals where the cumulative fractional mass
/// crosses `ℓ + η - 1` for ℓ = 1, 2, ...; each new allocation buys back the
/// previous one at the instance's true factor.
pub fn lossless_round_single(
    fractional_masses: &[f64],
    weights: &[f64],
    f: f64,
    seed: RoundingSeed,
) -> Result<RunResult> {
    check_plan(fractional_masses, weights)?;
    let eta = seed.eta;
    assert!((0.0..1.0).contains(&eta), "eta must lie in [0, 1)");

    let mut dist = AllocationDistribution::new(1.0);
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut per_arrival_profit = Vec::with_capacity(weights.len());

    let mut cumulative = 0.0f64;
    let mut level = 1u64; // next threshold is level + eta - 1
    for (t, (&x, &w)) in fractional_masses.iter().zip(weights).enumerate() {
        let before = ledger.profit();
        let prev = cumulative;
        cumulative += x;
        let target = level as f64 + eta - 1.0;
        if prev <= target && target < cumulative {
            allocate_with_buyback(&mut dist, &mut ledger, &mut trace, f, t, 0, w, 1.0)?;
            level += 1;
        }
        per_arrival_profit.push(ledger.profit() - before);
    }
    Ok(RunResult { ledger, trace, final_distributions: vec![dist], per_arrival_profit })
}

/// Profit of the fractional plan itself: allocate `x(t)` at each arrival with
/// greedy buyback, charging `f` on every refunded piece of positive weight.
pub fn fractional_plan_profit(fractional_masses: &[f64], weights: &[f64], f: f64) -> Result<f64> {
    check_plan(fractional_masses, weights)?;
    let mut dist = AllocationDistribution::new(1.0);
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    for (t, (&x, &w)) in fractional_masses.iter().zip(weights).enumerate() {
        if x > 0.0 {
            allocate_with_buyback(&mut dist, &mut ledger, &mut trace, f, t, 0, w, x.min(1.0))?;
        }
    }
    Ok(ledger.profit())
}

/// The η-breakpoints of the lossless rounding: within each interval between
/// consecutive fractional parts of the cumulative masses the allocation
/// pattern is constant in η.
pub fn lossless_eta_breakpoints(fractional_masses: &[f64]) -> Vec<f64> {
    let mut points = vec![0.0, 1.0];
    let mut cumulative = 0.0f64;
    for &x in fractional_masses {
        cumulative += x;
        let frac = cumulative.fract();
        if frac > 0.0 && frac < 1.0 {
            points.push(frac);
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    points
}

/// Exact expectation over η of the lossless rounding profit, by enumerating
/// the η-breakpoints rather than sampling.
pub fn lossless_expected_profit(
    fractional_masses: &[f64],
    weights: &[f64],
    f: f64,
) -> Result<f64> {
    let points = lossless_eta_breakpoints(fractional_masses);
    let mut expectation = 0.0;
    for pair in points.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let eta = 0.5 * (lo + hi);
        let run = lossless_round_single(fractional_masses, weights, f, RoundingSeed::new(eta, 0))?;
        expectation += (hi - lo) * run.profit();
    }
    Ok(expectation)
}

/// Exact per-arrival allocation probabilities of the lossless rounding over
/// η, by breakpoint enumeration.
pub fn lossless_allocation_probabilities(
    fractional_masses: &[f64],
    weights: &[f64],
    f: f64,
) -> Result<Vec<f64>> {
    let points = lossless_eta_breakpoints(fractional_masses);
    let mut probs = vec![0.0; fractional_masses.len()];
    for pair in points.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let eta = 0.5 * (lo + hi);
        let run = lossless_round_single(fractional_masses, weights, f, RoundingSeed::new(eta, 0))?;
        for e in &run.trace.events {
            if e.kind == crate::model::EventKind::Allocate {
                probs[e.arrival_index] += hi - lo;
            }
        }
    }
    Ok(probs)
}

/// Decision data of the threshold algorithm at one arrival: the level, its
/// threshold `ŵ^{η+ℓ-2}` and the acceptance probability `threshold/w`.
pub(crate) fn threshold_decision(
    w_normalized: f64,
    eta: f64,
    level_max: i64,
    w_hat: f64,
) -> Option<(i64, f64, f64)> {
    if w_normalized <= 0.0 {
        return None;
    }
    let ln_w_hat = w_hat.ln();
    if ln_w_hat <= 0.0 {
        return None;
    }
    // largest integer level with ŵ^{η+ℓ-2} <= w
    let level = (2.0 - eta + w_normalized.ln() / ln_w_hat).floor() as i64;
    if level < 1 || level <= level_max {
        return None;
    }
    let threshold = w_hat.powf(eta + level as f64 - 2.0);
    if threshold > w_normalized {
        // floor rounding put the threshold just above the weight
        return None;
    }
    Some((level, threshold, (threshold / w_normalized).min(1.0)))
}

/// Direct randomized integral algorithm for a single resource: maintains the
/// highest crossed level of the geometric threshold grid `ŵ^{η+ℓ-2}` and, on
/// each arrival that crosses a fresh level, sells with probability
/// `threshold/w` (buying back the previous holding). Weights are normalized
/// by the first arrival's weight internally; the ledger is kept in original
/// units. Only buys back when a new allocation is made.
pub fn threshold_randomized_single(stream: &[f64], f: f64, seed: RoundingSeed) -> Result<RunResult> {
    if stream.is_empty() {
        return Ok(RunResult {
            ledger: ProfitLedger::default(),
            trace: EventTrace::default(),
            final_distributions: vec![AllocationDistribution::new(1.0)],
            per_arrival_profit: Vec::new(),
        });
    }
    let scale = stream[0];
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInstance(format!(
            "first weight {scale} must be positive to normalize the stream"
        )));
    }
    let w_hat = w_hat_star(f);
    let mut rng = Rng::new(seed.rng_seed);
    let mut dist = AllocationDistribution::new(1.0);
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut per_arrival_profit = Vec::with_capacity(stream.len());
    let mut level_max = 0i64;
    let keep_max = w_hat <= 1.0 + 1e-12;
    let mut best = 0.0f64;

    for (t, &w) in stream.iter().enumerate() {
        let before = ledger.profit();
        if keep_max {
            // f = 0 limit: the threshold grid degenerates; keep the maximum.
            if w > best {
                allocate_with_buyback(&mut dist, &mut ledger, &mut trace, f, t, 0, w, 1.0)?;
                best = w;
            }
        } else if let Some((level, _, p)) = threshold_decision(w / scale, seed.eta, level_max, w_hat)
        {
            if rng.next_f64() < p {
                allocate_with_buyback(&mut dist, &mut ledger, &mut trace, f, t, 0, w, 1.0)?;
            }
            level_max = level;
        }
        per_arrival_profit.push(ledger.profit() - before);
    }
    Ok(RunResult { ledger, trace, final_distributions: vec![dist], per_arrival_profit })
}

/// Independent randomized rounding of a fractional matching run under large
/// capacities: each arrival is assigned one unit to node `j` with probability
/// `(1-κ)·z_ij` (and left unassigned otherwise), buying back the node's
/// lowest held weight whenever its holding would exceed the capacity.
/// `κ = min(1, sqrt(2·ln(s_min)/s_min))`.
pub fn large_capacity_round(
    instance: &WeightMatrixInstance,
    z: &[Vec<f64>],
    rng_seed: u64,
) -> Result<RunResult> {
    instance.validate()?;
    if z.len() != instance.arrivals.len() {
        return Err(Error::MisalignedInput(format!(
            "{} allocation rows vs {} arrivals",
            z.len(),
            instance.arrivals.len()
        )));
    }
    let n = instance.num_offline;
    let mut s_min = f64::INFINITY;
    for &s in &instance.capacities {
        if s < 1.0 {
            return Err(Error::Unsupported(format!(
                "large-capacity rounding needs capacities >= 1, got {s}"
            )));
        }
        s_min = s_min.min(s);
    }
    for (i, row) in z.iter().enumerate() {
        if row.len() != n {
            return Err(Error::MisalignedInput(format!("allocation row {i} has wrong length")));
        }
        let total: f64 = row.iter().sum();
        if total > 1.0 + 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::MisalignedInput(format!(
                "allocation row {i} is not a subdistribution (sum {total})"
            )));
        }
    }
    let kappa = kappa_for(s_min);
    let f = instance.buyback_factor;
    let mut rng = Rng::new(rng_seed);
    let mut held: Vec<Vec<f64>> = vec![Vec::new(); n]; // sorted ascending per node
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut per_arrival_profit = Vec::with_capacity(z.len());

    for (i, row) in z.iter().enumerate() {
        let before = ledger.profit();
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut choice = None;
        for (j, &zij) in row.iter().enumerate() {
            acc += (1.0 - kappa) * zij;
            if u < acc {
                choice = Some(j);
                break;
            }
        }
        if let Some(j) = choice {
            let w = instance.arrivals[i].weights[j];
            let pos = held[j].partition_point(|&h| h < w);
            held[j].insert(pos, w);
            ledger.reward_collected += w;
            trace.push(crate::model::Event {
                arrival_index: i,
                offline_index: j,
                kind: crate::model::EventKind::Allocate,
                weight: w,
                mass: 1.0,
            });
            while held[j].len() as f64 > instance.capacities[j] {
                let evicted = held[j].remove(0);
                ledger.reward_refunded += evicted;
                ledger.penalty_paid += f * evicted;
                trace.push(crate::model::Event {
                    arrival_index: i,
                    offline_index: j,
                    kind: crate::model::EventKind::Buyback,
                    weight: evicted,
                    mass: 1.0,
                });
            }
        }
        per_arrival_profit.push(ledger.profit() - before);
    }

    let final_distributions = held
        .iter()
        .zip(&instance.capacities)
        .map(|(units, &cap)| {
            let mut atoms: Vec<(f64, f64)> = Vec::new();
            let free = cap - units.len() as f64;
            if free > 0.0 || units.is_empty() {
                atoms.push((0.0, free.max(1e-12)));
            }
            for &w in units {
                match atoms.last_mut() {
                    Some(last) if last.0 == w => last.1 += 1.0,
                    _ => atoms.push((w, 1.0)),
                }
            }
            AllocationDistribution::from_atoms(&atoms)
        })
        .collect();
    Ok(RunResult { ledger, trace, final_distributions, per_arrival_profit })
}

/// The sampling attenuation `κ = min(1, sqrt(2·ln(s_min)/s_min))`.
pub fn kappa_for(s_min: f64) -> f64 {
    (2.0 * s_min.ln() / s_min).sqrt().clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::fractional_primal_dual;
    use crate::model::EventKind;
    use crate::numerics::{canonical_profit, matching_penalty};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn lossless_examples() {
        // x = (0.5, 0.5), weights (1, 2)
        let x = [0.5, 0.5];
        let w = [1.0, 2.0];
        let run = lossless_round_single(&x, &w, 0.0, RoundingSeed::new(0.3, 0)).unwrap();
        assert_close(run.profit(), 1.0, 0.0); // crosses 0.3 at t=1 only
        let run = lossless_round_single(&x, &w, 0.0, RoundingSeed::new(0.7, 0)).unwrap();
        assert_close(run.profit(), 2.0, 0.0); // crosses 0.7 at t=2 only

        // deterministic plan x=(1, 0): always allocate arrival 1, never 2
        for eta in [0.0, 0.25, 0.5, 0.9999] {
            let run =
                lossless_round_single(&[1.0, 0.0], &w, 0.0, RoundingSeed::new(eta, 0)).unwrap();
            let allocs: Vec<usize> = run
                .trace
                .events
                .iter()
                .filter(|e| e.kind == EventKind::Allocate)
                .map(|e| e.arrival_index)
                .collect();
            assert_eq!(allocs, vec![0], "eta={eta}");
        }

        // misaligned inputs
        assert!(lossless_round_single(&[0.5], &w, 0.0, RoundingSeed::new(0.1, 0)).is_err());
    }

    #[test]
    fn lossless_expectation_matches_fractional_profit() {
        // plan from an actual fractional run on an increasing stream
        let stream = [1.0, 2.5, 4.0, 9.0];
        for &f in &[0.0, 0.5, 1.0] {
            let inst = crate::model::WeightMatrixInstance::single_resource(f, &stream);
            let run = fractional_primal_dual(&inst, &matching_penalty(f)).unwrap();
            let x = run.allocated_per_arrival(stream.len());
            let expected = lossless_expected_profit(&x, &stream, f).unwrap();
            let fractional = fractional_plan_profit(&x, &stream, f).unwrap();
            assert_close(expected, fractional, 1e-9);
            assert_close(fractional, run.profit(), 1e-9);
            // marginals equal the plan exactly
            let probs = lossless_allocation_probabilities(&x, &stream, f).unwrap();
            for (t, (&p, &xt)) in probs.iter().zip(&x).enumerate() {
                assert_close(p, xt, 1e-12 + 1e-9 * xt.abs());
                let _ = t;
            }
        }
    }

    #[test]
    fn threshold_algorithm_level_mechanics() {
        let w_hat = 3.0;
        // stream (1): level 1 always crosses, acceptance prob = ŵ^{η-1}
        for eta in [0.0, 0.3, 0.99] {
            match threshold_decision(1.0, eta, 0, w_hat) {
                Some((level, threshold, p)) => {
                    assert!(level >= 1);
                    assert_close(p * 1.0, threshold, 1e-15); // p·w = threshold
                    if eta > 0.0 {
                        assert_eq!(level, 1);
                        assert_close(p, w_hat.powf(eta - 1.0), 1e-12);
                    }
                }
                None => panic!("level must cross at w=1, eta={eta}"),
            }
        }
        // conditional expected reward at a level equals the threshold:
        // p·w = ŵ^{η+ℓ-2} for the first arrival w exceeding the threshold
        let (level, threshold, p) = threshold_decision(7.3, 0.4, 1, w_hat).unwrap();
        assert!(level > 1);
        assert_close(p * 7.3, threshold, 1e-12);
        // already-crossed levels do not re-trigger
        assert!(threshold_decision(7.3, 0.4, level, w_hat).is_none());
    }

    #[test]
    fn threshold_run_buys_back_only_on_allocation() {
        let stream = [1.0, 1.7, 2.9, 5.0, 8.5, 14.0];
        for seed in 0..200u64 {
            let mut rng = Rng::new(seed ^ 0xabcdef);
            let eta = rng.next_f64();
            let run =
                threshold_randomized_single(&stream, 1.0, RoundingSeed::new(eta, seed)).unwrap();
            let events = &run.trace.events;
            let mut holding = 0usize;
            for (k, e) in events.iter().enumerate() {
                match e.kind {
                    EventKind::Buyback => {
                        // every buyback is paired with an allocation at the
                        // same arrival (no standalone buybacks)
                        let next = events.get(k + 1);
                        assert!(
                            next.is_some_and(|n| n.kind == EventKind::Allocate
                                && n.arrival_index == e.arrival_index),
                            "unpaired buyback at event {k}"
                        );
                        if e.weight > 0.0 {
                            assert_eq!(holding, 1);
                            holding -= 1;
                        }
                    }
                    EventKind::Allocate => holding = 1,
                }
            }
            assert!(holding <= 1);
        }
    }

    #[test]
    fn threshold_monte_carlo_beats_canonical_minus_noise() {
        let stream: Vec<f64> = (0..12).map(|k| 1.5f64.powi(k)).collect();
        let f = 1.0;
        let reps = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut rng = Rng::new(505);
        for r in 0..reps {
            let eta = rng.next_f64();
            let run =
                threshold_randomized_single(&stream, f, RoundingSeed::new(eta, r as u64)).unwrap();
            let p = run.profit();
            sum += p;
            sumsq += p * p;
        }
        let mean = sum / reps as f64;
        let var = (sumsq / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        let target = canonical_profit(f, *stream.last().unwrap());
        assert!(
            mean >= target - 3.0 * se,
            "mean {mean} vs canonical {target} (se {se})"
        );
    }

    #[test]
    fn large_capacity_no_plan_no_allocations() {
        let inst = crate::model::WeightMatrixInstance {
            num_offline: 2,
            buyback_factor: 0.5,
            capacities: vec![4.0, 4.0],
            arrivals: vec![
                crate::model::Arrival::unit(vec![1.0, 2.0]),
                crate::model::Arrival::unit(vec![2.0, 1.0]),
            ],
        };
        let z = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let run = large_capacity_round(&inst, &z, 7).unwrap();
        assert!(run.trace.is_empty());
        assert_eq!(run.profit(), 0.0);
    }

    #[test]
    fn large_capacity_frequency_matches_sampling_law() {
        let inst = crate::model::WeightMatrixInstance {
            num_offline: 2,
            buyback_factor: 0.0,
            capacities: vec![3.0, 3.0],
            arrivals: vec![
                crate::model::Arrival::unit(vec![1.0, 2.0]),
                crate::model::Arrival::unit(vec![2.0, 1.0]),
            ],
        };
        let z = vec![vec![0.4, 0.3], vec![0.1, 0.6]];
        let kappa = kappa_for(3.0);
        let reps = 40_000;
        let mut counts = vec![vec![0usize; 2]; 2];
        for seed in 0..reps {
            let run = large_capacity_round(&inst, &z, seed as u64).unwrap();
            for e in &run.trace.events {
                if e.kind == EventKind::Allocate {
                    counts[e.arrival_index][e.offline_index] += 1;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let p = (1.0 - kappa) * z[i][j];
                let freq = counts[i][j] as f64 / reps as f64;
                let se = (p * (1.0 - p) / reps as f64).sqrt();
                assert!(
                    (freq - p).abs() <= 4.0 * se + 1e-9,
                    "({i},{j}): freq {freq} vs p {p}"
                );
            }
        }
    }

    #[test]
    fn large_capacity_rejects_small_capacity() {
        let mut inst = crate::model::WeightMatrixInstance::single_resource(0.0, &[1.0]);
        inst.capacities = vec![0.5];
        assert!(large_capacity_round(&inst, &[vec![1.0]], 0).is_err());
    }
}
