//! The online algorithms: fractional primal-dual matching via exact
//! event-driven water-filling, the deterministic integral rule, greedy and
//! free-disposal baselines, the single-resource canonical allocation, and the
//! mini-node reduction for non-uniform demands.

use serde::{Deserialize, Serialize};

use crate::model::{
    allocate_with_buyback, AllocationDistribution, Event, EventKind, EventTrace, ProfitLedger,
    WeightMatrixInstance,
};
use crate::numerics::{beta_value, matching_penalty, small_f_penalty, w_hat_star, PenaltySpec};
use crate::{Error, Result};

/// Demand below this threshold counts as exhausted.
pub const DEMAND_TOLERANCE: f64 = 1e-12;

/// Relative factor of the gap-termination tolerance: an arrival stops once
/// `max_j (w_ij - beta_j) <= 1e-9 · (running max weight)`. A relative
/// tolerance keeps the stopping rule scale-equivariant.
pub const GAP_TOLERANCE_FACTOR: f64 = 1e-9;

/// Outcome of one online run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub ledger: ProfitLedger,
    pub trace: EventTrace,
    pub final_distributions: Vec<AllocationDistribution>,
    pub per_arrival_profit: Vec<f64>,
}

impl RunResult {
    pub fn profit(&self) -> f64 {
        self.ledger.profit()
    }

    /// Total allocated mass per arrival (summed over offline nodes).
    pub fn allocated_per_arrival(&self, num_arrivals: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_arrivals];
        for e in &self.trace.events {
            if e.kind == EventKind::Allocate {
                out[e.arrival_index] += e.mass;
            }
        }
        out
    }

    /// Allocation matrix `z[i][j]`: mass allocated between arrival `i` and
    /// node `j` (gross, before buybacks).
    pub fn allocation_matrix(&self, num_arrivals: usize, num_offline: usize) -> Vec<Vec<f64>> {
        let mut z = vec![vec![0.0; num_offline]; num_arrivals];
        for e in &self.trace.events {
            if e.kind == EventKind::Allocate {
                z[e.arrival_index][e.offline_index] += e.mass;
            }
        }
        z
    }
}

/// Identifier of a runnable online algorithm with its canonical
/// parameterization derived from the instance's buyback factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmId {
    /// Fractional primal-dual water-filling with the regime-matching penalty.
    Fractional,
    /// Deterministic integral rule with the optimal penalty scalar.
    Deterministic,
    /// Integral greedy on marginal profit.
    Greedy,
    /// Fractional water-filling parameterized as if f = 0, charged at true f.
    FreeDisposal,
    /// Single-resource canonical allocation (requires one offline node).
    SingleCanonical,
}

impl AlgorithmId {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmId::Fractional => "fractional",
            AlgorithmId::Deterministic => "det",
            AlgorithmId::Greedy => "greedy",
            AlgorithmId::FreeDisposal => "free-disposal",
            AlgorithmId::SingleCanonical => "single-canonical",
        }
    }
}

impl std::str::FromStr for AlgorithmId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fractional" => Ok(AlgorithmId::Fractional),
            "det" | "deterministic" => Ok(AlgorithmId::Deterministic),
            "greedy" => Ok(AlgorithmId::Greedy),
            "free-disposal" => Ok(AlgorithmId::FreeDisposal),
            "single-canonical" => Ok(AlgorithmId::SingleCanonical),
            other => Err(Error::Unsupported(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Runs an algorithm with its canonical parameterization for the instance's
/// buyback factor.
pub fn run_algorithm(id: AlgorithmId, instance: &WeightMatrixInstance) -> Result<RunResult> {
    let f = instance.buyback_factor;
    match id {
        AlgorithmId::Fractional => fractional_primal_dual(instance, &matching_penalty(f)),
        AlgorithmId::Deterministic => deterministic_integral(instance, crate::numerics::deterministic_tau(f)),
        AlgorithmId::Greedy => greedy_integral(instance),
        AlgorithmId::FreeDisposal => free_disposal(instance),
        AlgorithmId::SingleCanonical => {
            if instance.num_offline != 1 {
                return Err(Error::Unsupported(
                    "single-canonical requires exactly one offline node".into(),
                ));
            }
            let stream: Vec<f64> = instance.arrivals.iter().map(|a| a.weights[0]).collect();
            single_resource_canonical(&stream, f)
        }
    }
}

/// Phase coefficient of the water level: while mass moves from the bottom
/// atom (weight `b`) to weight `w` on a node, its dual value follows
/// `beta(m) = C + A·λ^m` with `A = τ·∫_{(b, w]} λ^{y} dw`.
///
/// Uses the closed-form identity `τ·∫_{(0, top]} λ^y dw = beta + τ·top`, so
/// the common case `w >= top` costs O(1); otherwise the segments above `w`
/// are walked from the top. Falls back to a full walk if cancellation puts
/// the identity result below the mathematical floor `τ·(w - b)`.
fn phase_coefficient(
    dist: &AllocationDistribution,
    beta: f64,
    pen: &PenaltySpec,
    w: f64,
) -> f64 {
    let b = dist.bottom_weight();
    if w <= b {
        return 0.0;
    }
    let tau = pen.tau;
    let lambda = pen.lambda;
    let top = dist.top_weight();
    let cap = dist.capacity();
    let bottom_term = tau * b * lambda.powf(cap);
    let a = if w >= top {
        beta + tau * w - bottom_term
    } else {
        // tail = τ·∫_{(w, top]} λ^y dw, walked from the top down to w
        let atoms: Vec<_> = dist.atoms().collect();
        let mut tail = 0.0;
        let mut suffix = 0.0;
        let mut hi = top;
        for k in (0..atoms.len()).rev() {
            suffix += atoms[k].mass;
            let lo = if k > 0 { atoms[k - 1].weight } else { 0.0 };
            let lo_clamped = lo.max(w);
            if hi > lo_clamped {
                tail += tau * (hi - lo_clamped) * lambda.powf(suffix);
            }
            if lo <= w {
                break;
            }
            hi = lo;
        }
        beta + tau * top - tail - bottom_term
    };
    let floor = tau * (w - b);
    if !a.is_finite() || a < floor {
        // cancellation; recompute directly from the segments in (b, w]
        return phase_coefficient_walk(dist, pen, w).max(floor);
    }
    a
}

/// Direct O(atoms) evaluation of `τ·∫_{(b, w]} λ^{y} dw`.
fn phase_coefficient_walk(dist: &AllocationDistribution, pen: &PenaltySpec, w: f64) -> f64 {
    let b = dist.bottom_weight();
    if w <= b {
        return 0.0;
    }
    let atoms: Vec<_> = dist.atoms().collect();
    let mut suffix: Vec<f64> = vec![0.0; atoms.len() + 1];
    for k in (0..atoms.len()).rev() {
        suffix[k] = suffix[k + 1] + atoms[k].mass;
    }
    let mut total = 0.0;
    let mut lo = 0.0f64;
    for (k, atom) in atoms.iter().enumerate() {
        let hi = atom.weight;
        let left = lo.max(b);
        let right = hi.min(w);
        if right > left {
            total += (right - left) * pen.lambda.powf(suffix[k]);
        }
        lo = hi;
    }
    if w > lo {
        total += w - lo; // level zero above the top atom
    }
    pen.tau * total
}

struct ActiveNode {
    node: usize,
    weight: f64,
    coef: f64,
    bottom_mass: f64,
    full_drain_rise: f64,
}

/// Fractional primal-dual allocation: per arrival, raise the dual values of
/// all maximum-gap offline nodes at a common rate (water-filling), allocating
/// at the arrival's weight while greedily buying back the smallest held
/// weights, until the demand is exhausted or no gap remains.
///
/// The continuous procedure is run exactly via breakpoint events: within a
/// phase (fixed active set and bottom atoms) the mass that raises a node's
/// dual by `Δβ` is `log_λ(1 + Δβ/A)`, so the engine computes the largest
/// common water-level drop before any event fires, applies the exact masses,
/// processes the event and repeats. Events, in processing priority on ties:
/// demand exhaustion, water level reaching zero, a bottom atom draining
/// empty, an outside node's gap reaching the water level.
pub fn fractional_primal_dual(
    instance: &WeightMatrixInstance,
    pen: &PenaltySpec,
) -> Result<RunResult> {
    instance.validate()?;
    if !(pen.lambda > 1.0) || !(pen.tau > 0.0) {
        return Err(Error::Domain(format!(
            "fractional primal-dual needs lambda > 1 and tau > 0, got ({}, {})",
            pen.lambda, pen.tau
        )));
    }
    let f = instance.buyback_factor;
    let n = instance.num_offline;
    let lambda = pen.lambda;
    let ln_lambda = pen.lambda.ln();

    let mut dists: Vec<AllocationDistribution> =
        instance.capacities.iter().map(|&s| AllocationDistribution::new(s)).collect();
    let mut beta = vec![0.0f64; n];
    // Cached-dual error feeds back through the phase coefficient and gets
    // amplified by λ^mass per phase; once the accumulated amplification of a
    // node passes this bound, its dual is recomputed from the distribution.
    let mut amplification = vec![1.0f64; n];
    const AMPLIFICATION_RESYNC: f64 = 1e3;
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut per_arrival_profit = Vec::with_capacity(instance.arrivals.len());
    let mut running_max_weight: f64 = 0.0;

    for (i, arrival) in instance.arrivals.iter().enumerate() {
        let profit_before = ledger.profit();
        for &w in &arrival.weights {
            running_max_weight = running_max_weight.max(w);
        }
        let eps_gap = GAP_TOLERANCE_FACTOR * running_max_weight;
        let mut remaining = arrival.demand;

        // Gaps of nodes not yet in the active set are frozen for the whole
        // arrival (their duals do not move), so one ascending sort suffices.
        let mut queue: Vec<(f64, usize)> = (0..n)
            .filter_map(|j| {
                let gap = arrival.weights[j] - beta[j];
                (gap > eps_gap).then_some((gap, j))
            })
            .collect();
        queue.sort_by(|a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)) // pop() yields largest gap, lowest index first
        });

        let mut active: Vec<ActiveNode> = Vec::new();
        let mut v = match queue.last() {
            Some(&(gap, _)) => gap,
            None => {
                per_arrival_profit.push(0.0);
                continue;
            }
        };
        while let Some(&(gap, _)) = queue.last() {
            if gap < v {
                break;
            }
            let (_, j) = queue.pop().unwrap();
            push_active(&mut active, &dists, &beta, pen, j, arrival.weights[j]);
        }

        let max_phases = 64 * (n + 16) + 8 * trace_budget(&dists);
        let mut phases = 0usize;
        while remaining > DEMAND_TOLERANCE && v > eps_gap && !active.is_empty() {
            phases += 1;
            if phases > max_phases {
                return Err(Error::Domain(format!(
                    "water-filling made no progress after {phases} phases at arrival {i}"
                )));
            }

            // Candidate water-level drops for each event kind.
            let dv_full_drain = active
                .iter()
                .map(|a| a.full_drain_rise)
                .fold(f64::INFINITY, f64::min);
            let dv_join = queue
                .last()
                .map(|&(gap, _)| v - gap)
                .unwrap_or(f64::INFINITY);
            let dv_zero = v;
            let dv_cap = dv_zero.min(dv_full_drain).min(dv_join);

            // Total mass consumed by a common drop of dv.
            let mass_for = |dv: f64| -> f64 {
                active.iter().map(|a| (1.0 + dv / a.coef).ln() / ln_lambda).sum()
            };

            let demand_fires = mass_for(dv_cap) >= remaining;
            let dv = if demand_fires {
                solve_demand_drop(&active, ln_lambda, remaining, dv_cap)
            } else {
                dv_cap
            };

            // Apply the exact masses for this phase.
            for a in active.iter_mut() {
                let full = !demand_fires && a.full_drain_rise <= dv;
                let mass = if full {
                    a.bottom_mass
                } else {
                    ((1.0 + dv / a.coef).ln() / ln_lambda).min(a.bottom_mass)
                };
                if mass > 0.0 {
                    allocate_with_buyback(
                        &mut dists[a.node],
                        &mut ledger,
                        &mut trace,
                        f,
                        i,
                        a.node,
                        a.weight,
                        mass,
                    )?;
                    let growth = lambda.powf(mass);
                    beta[a.node] += a.coef * (growth - 1.0);
                    amplification[a.node] *= growth;
                    if amplification[a.node] > AMPLIFICATION_RESYNC {
                        beta[a.node] = beta_value(&dists[a.node], pen);
                        amplification[a.node] = 1.0;
                    }
                    remaining -= mass;
                }
            }
            v -= dv;

            if demand_fires {
                break;
            }
            if dv == dv_zero {
                // water level reached zero: all active gaps are closed
                break;
            }

            // Refresh phase data of still-active nodes (bottom atoms may have
            // changed); drop nodes that can no longer raise their dual.
            let mut refreshed = Vec::with_capacity(active.len());
            for a in &active {
                push_active(&mut refreshed, &dists, &beta, pen, a.node, a.weight);
            }
            active = refreshed;

            // Admit outside nodes whose frozen gap now equals the level.
            while let Some(&(gap, _)) = queue.last() {
                if gap < v {
                    break;
                }
                let (_, j) = queue.pop().unwrap();
                push_active(&mut active, &dists, &beta, pen, j, arrival.weights[j]);
            }
        }
        per_arrival_profit.push(ledger.profit() - profit_before);
    }

    // Revalidate the incrementally maintained duals against the closed form.
    let beta_tolerance = 1e-9 * running_max_weight.max(1.0);
    for j in 0..n {
        let fresh = beta_value(&dists[j], pen);
        if (fresh - beta[j]).abs() > beta_tolerance {
            return Err(Error::Domain(format!(
                "cached dual of node {j} drifted: {} vs {}",
                beta[j], fresh
            )));
        }
    }

    Ok(RunResult { ledger, trace, final_distributions: dists, per_arrival_profit })
}

fn trace_budget(dists: &[AllocationDistribution]) -> usize {
    dists.iter().map(|d| d.num_atoms()).sum::<usize>() + 16
}

fn push_active(
    active: &mut Vec<ActiveNode>,
    dists: &[AllocationDistribution],
    beta: &[f64],
    pen: &PenaltySpec,
    node: usize,
    weight: f64,
) {
    let coef = phase_coefficient(&dists[node], beta[node], pen, weight);
    if coef <= 0.0 {
        // Allocating at `weight` cannot raise this node's dual (the weight is
        // at or below its bottom atom); drop it for the rest of the arrival.
        return;
    }
    let bottom_mass = dists[node].bottom_mass();
    let full_drain_rise = coef * (pen.lambda.powf(bottom_mass) - 1.0);
    active.push(ActiveNode { node, weight, coef, bottom_mass, full_drain_rise });
}

/// Solves `Σ_j log_λ(1 + dv/A_j) = remaining` for `dv ∈ (0, dv_cap]`.
/// The left side is concave and increasing, so Newton from below converges
/// monotonically; a bisection guard keeps it inside the bracket.
fn solve_demand_drop(active: &[ActiveNode], ln_lambda: f64, remaining: f64, dv_cap: f64) -> f64 {
    let mass_for = |dv: f64| -> f64 {
        active.iter().map(|a| (1.0 + dv / a.coef).ln() / ln_lambda).sum::<f64>() - remaining
    };
    let slope = |dv: f64| -> f64 {
        active.iter().map(|a| 1.0 / (ln_lambda * (a.coef + dv))).sum::<f64>()
    };
    let mut lo = 0.0;
    let mut hi = dv_cap;
    let mut x = (remaining * slope(0.0).recip()).min(dv_cap);
    for _ in 0..200 {
        let fx = mass_for(x);
        if fx.abs() <= 1e-15 * remaining.max(1e-300) {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = fx / slope(x);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == x {
            break;
        }
        x = next;
    }
    x
}

/// Deterministic integral rule: allocate arrival `i` integrally to the node
/// maximizing `w_ij - τ·(held weight)` when that score is strictly positive,
/// buying back the full previously held edge; otherwise leave `i` unmatched.
/// Ties break to the lowest offline index. Requires unit demands and unit
/// capacities.
pub fn deterministic_integral(instance: &WeightMatrixInstance, tau: f64) -> Result<RunResult> {
    integral_scored_run(instance, tau, true)
}

/// Integral greedy baseline: allocate to the largest marginal profit
/// `w_ij - (1+f)·(held weight)`. Zero marginals still reallocate (the swap
/// nets zero), which is what pins greedy at profit 2 on doubling streams.
pub fn greedy_integral(instance: &WeightMatrixInstance) -> Result<RunResult> {
    integral_scored_run(instance, 1.0 + instance.buyback_factor, false)
}

fn integral_scored_run(
    instance: &WeightMatrixInstance,
    tau: f64,
    strict: bool,
) -> Result<RunResult> {
    instance.validate()?;
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Domain(format!("penalty scalar {tau} must be positive")));
    }
    for &s in &instance.capacities {
        if s != 1.0 {
            return Err(Error::Unsupported(format!(
                "integral algorithms require unit capacities, got {s}"
            )));
        }
    }
    for (i, a) in instance.arrivals.iter().enumerate() {
        if a.demand != 1.0 {
            return Err(Error::Unsupported(format!(
                "integral algorithms require unit demands, arrival {i} has {}",
                a.demand
            )));
        }
    }
    let f = instance.buyback_factor;
    let n = instance.num_offline;
    let mut dists: Vec<AllocationDistribution> =
        (0..n).map(|_| AllocationDistribution::new(1.0)).collect();
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut per_arrival_profit = Vec::with_capacity(instance.arrivals.len());

    for (i, arrival) in instance.arrivals.iter().enumerate() {
        let profit_before = ledger.profit();
        let mut best: Option<(f64, usize)> = None;
        for (j, dist) in dists.iter().enumerate() {
            let held = dist.bottom_weight();
            let score = arrival.weights[j] - tau * held;
            let admissible =
                if strict { score > 0.0 } else { score >= 0.0 && arrival.weights[j] > 0.0 };
            if admissible && best.is_none_or(|(s, _)| score > s) {
                best = Some((score, j));
            }
        }
        if let Some((_, j)) = best {
            allocate_with_buyback(
                &mut dists[j],
                &mut ledger,
                &mut trace,
                f,
                i,
                j,
                arrival.weights[j],
                1.0,
            )?;
        }
        per_arrival_profit.push(ledger.profit() - profit_before);
    }
    Ok(RunResult { ledger, trace, final_distributions: dists, per_arrival_profit })
}

/// Free-disposal baseline: the fractional primal-dual algorithm parameterized
/// as if `f = 0`, while the ledger keeps charging the instance's true factor
/// on buybacks.
pub fn free_disposal(instance: &WeightMatrixInstance) -> Result<RunResult> {
    fractional_primal_dual(instance, &small_f_penalty(0.0))
}

/// Single-resource canonical allocation via the reduction from general
/// streams to the weight continuum: on every new running maximum
/// `w_prev → w_i`, the discounted-model ledger collects
/// `(w_i - w_prev)/ln ŵ` of reward and refunds
/// `(w_i - w_prev)/(ŵ·ln ŵ)` (plus the `f` penalty); non-maximum arrivals
/// produce no events. At `f = 0` (ŵ = 1) this degrades to keep-the-max.
///
/// The trace summarizes the continuum churn: masses carry their exact
/// mass-weighted prices, so the face values of the events reproduce the
/// ledger, but the events are aggregates rather than unit reallocations.
pub fn single_resource_canonical(stream: &[f64], f: f64) -> Result<RunResult> {
    for &w in stream {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidInstance(format!("weight {w} must be finite nonnegative")));
        }
    }
    if !(f >= 0.0) {
        return Err(Error::InvalidInstance(format!("buyback factor {f} must be nonnegative")));
    }
    let w_hat = w_hat_star(f);
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut per_arrival_profit = Vec::with_capacity(stream.len());

    if w_hat <= 1.0 + 1e-12 {
        // Keep-the-max: integral reallocation on each new maximum.
        let mut dist = AllocationDistribution::new(1.0);
        let mut w_max = 0.0f64;
        for (i, &w) in stream.iter().enumerate() {
            let before = ledger.profit();
            if w > w_max {
                allocate_with_buyback(&mut dist, &mut ledger, &mut trace, f, i, 0, w, 1.0)?;
                w_max = w;
            }
            per_arrival_profit.push(ledger.profit() - before);
        }
        return Ok(RunResult {
            ledger,
            trace,
            final_distributions: vec![dist],
            per_arrival_profit,
        });
    }

    let ln_w_hat = w_hat.ln();
    // Summary atoms of the canonical holdings: (price, mass), ascending.
    let mut atoms: std::collections::VecDeque<(f64, f64)> = std::collections::VecDeque::new();
    atoms.push_back((0.0, 1.0));
    let mut w_max = 0.0f64;

    for (i, &w) in stream.iter().enumerate() {
        let before = ledger.profit();
        if w > w_max {
            let reward;
            let refund;
            let alloc_mass;
            let alloc_price;
            let buyback_mass;
            if w_max == 0.0 {
                reward = w / ln_w_hat;
                refund = w / (w_hat * ln_w_hat);
                // churn of the first continuum step, folded into one buyback
                buyback_mass = 1.0 / (w_hat - 1.0);
                alloc_mass = 1.0 + buyback_mass;
                alloc_price = reward / alloc_mass;
                trace.push(Event {
                    arrival_index: i,
                    offline_index: 0,
                    kind: EventKind::Buyback,
                    weight: 0.0,
                    mass: 1.0,
                });
            } else {
                reward = (w - w_max) / ln_w_hat;
                refund = (w - w_max) / (w_hat * ln_w_hat);
                alloc_mass = (w / w_max).ln() / ln_w_hat;
                alloc_price = reward / alloc_mass;
                buyback_mass = alloc_mass;
            }
            let buyback_price = refund / buyback_mass;
            trace.push(Event {
                arrival_index: i,
                offline_index: 0,
                kind: EventKind::Buyback,
                weight: buyback_price,
                mass: buyback_mass,
            });
            trace.push(Event {
                arrival_index: i,
                offline_index: 0,
                kind: EventKind::Allocate,
                weight: alloc_price,
                mass: alloc_mass,
            });
            ledger.reward_collected += reward;
            ledger.reward_refunded += refund;
            ledger.penalty_paid += f * refund;

            // Maintain the summary holdings: drop the bought-back mass from
            // the bottom, add the new step's mass at its average price.
            if w_max == 0.0 {
                atoms.clear();
                atoms.push_back((alloc_price, 1.0));
            } else {
                let mut rest = buyback_mass;
                while rest > 0.0 {
                    let Some(front) = atoms.front_mut() else { break };
                    if front.1 > rest {
                        front.1 -= rest;
                        break;
                    }
                    rest -= front.1;
                    atoms.pop_front();
                }
                atoms.push_back((alloc_price, alloc_mass));
            }
            w_max = w;
        }
        per_arrival_profit.push(ledger.profit() - before);
    }

    let final_dist = if atoms.is_empty() {
        AllocationDistribution::new(1.0)
    } else {
        let collected: Vec<(f64, f64)> = atoms.iter().copied().collect();
        AllocationDistribution::from_atoms(&collected)
    };
    Ok(RunResult { ledger, trace, final_distributions: vec![final_dist], per_arrival_profit })
}

/// Mini-node reduction for a single resource with non-uniform demands: the
/// capacity is split into `k` mini-nodes of capacity `s/k`, each tracking a
/// high-water mark; every arrival is shown to the `⌊k·d_i⌋` mini-nodes with
/// the smallest marks (ties by index), each running the canonical-allocation
/// step against `max(w_i, mark)`.
pub fn nonuniform_single_resource(
    stream: &[(f64, f64)],
    capacity: f64,
    k: usize,
    f: f64,
) -> Result<RunResult> {
    if k == 0 {
        return Err(Error::InvalidInstance("at least one mini-node required".into()));
    }
    if !(capacity > 0.0) {
        return Err(Error::InvalidInstance(format!("capacity {capacity} must be positive")));
    }
    for &(w, d) in stream {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidInstance(format!("weight {w} must be finite nonnegative")));
        }
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::InvalidInstance(format!("demand {d} must lie in (0, 1]")));
        }
    }
    let w_hat = w_hat_star(f);
    let keep_max = w_hat <= 1.0 + 1e-12;
    let ln_w_hat = w_hat.ln();
    let unit = capacity / k as f64;

    let mut marks = vec![0.0f64; k];
    let mut order: Vec<usize> = (0..k).collect();
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut per_arrival_profit = Vec::with_capacity(stream.len());

    for (i, &(w, d)) in stream.iter().enumerate() {
        let before = ledger.profit();
        let shown = ((k as f64 * d).floor() as usize).min(k);
        if shown > 0 && w > 0.0 {
            order.sort_by(|&a, &b| {
                marks[a].partial_cmp(&marks[b]).unwrap().then(a.cmp(&b))
            });
            let mut reward = 0.0;
            let mut refund = 0.0;
            let mut alloc_mass = 0.0;
            let mut buyback_mass = 0.0;
            for &j in order.iter().take(shown) {
                let prev = marks[j];
                if w <= prev {
                    continue;
                }
                if keep_max {
                    reward += w * unit;
                    refund += prev * unit;
                    alloc_mass += unit;
                    buyback_mass += unit;
                } else {
                    reward += (w - prev) / ln_w_hat * unit;
                    refund += (w - prev) / (w_hat * ln_w_hat) * unit;
                    let step_mass = if prev == 0.0 {
                        1.0 + 1.0 / (w_hat - 1.0)
                    } else {
                        (w / prev).ln() / ln_w_hat
                    };
                    alloc_mass += step_mass * unit;
                    buyback_mass += step_mass * unit;
                }
                marks[j] = w;
            }
            if alloc_mass > 0.0 {
                if refund > 0.0 || !keep_max {
                    trace.push(Event {
                        arrival_index: i,
                        offline_index: 0,
                        kind: EventKind::Buyback,
                        weight: if buyback_mass > 0.0 { refund / buyback_mass } else { 0.0 },
                        mass: buyback_mass,
                    });
                }
                trace.push(Event {
                    arrival_index: i,
                    offline_index: 0,
                    kind: EventKind::Allocate,
                    weight: reward / alloc_mass,
                    mass: alloc_mass,
                });
                ledger.reward_collected += reward;
                ledger.reward_refunded += refund;
                ledger.penalty_paid += f * refund;
            }
        }
        per_arrival_profit.push(ledger.profit() - before);
    }

    // Final holdings summary: mini-node high-water marks, aggregated.
    let mut sorted = marks.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for &m in &sorted {
        match atoms.last_mut() {
            Some(last) if last.0 == m => last.1 += unit,
            _ => atoms.push((m, unit)),
        }
    }
    Ok(RunResult {
        ledger,
        trace,
        final_distributions: vec![AllocationDistribution::from_atoms(&atoms)],
        per_arrival_profit,
    })
}
