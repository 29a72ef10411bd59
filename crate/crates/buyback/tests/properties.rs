//! Cross-module invariants: mass conservation, ledger identities, trace
//! replay determinism, greedy buyback order, scale equivariance, and
//! agreement of the exact water-filling engine with an independent
//! micro-step simulator.

use buyback::engine::{
    fractional_primal_dual, free_disposal, greedy_integral, run_algorithm, AlgorithmId,
};
use buyback::generators::{greedy_killer, random_instance, RandomSpec};
use buyback::model::{
    allocate_with_buyback, check_greedy_buyback_order, replay_trace, AllocationDistribution,
    EventTrace, ProfitLedger, WeightMatrixInstance,
};
use buyback::numerics::{large_f_penalty, matching_penalty, w_hat_star, CanonicalAllocation};

use proptest::prelude::*;

/// Independent single-resource oracle: fixed-step fractional allocation with
/// greedy buyback and a generic penalty integral, on its own flat data
/// structures (no shared code with the engine's closed-form path).
struct MicroSim<F: Fn(f64) -> f64> {
    atoms: Vec<(f64, f64)>,
    psi: F,
    profit: f64,
    f: f64,
}

impl<F: Fn(f64) -> f64> MicroSim<F> {
    fn new(psi: F, f: f64) -> Self {
        MicroSim { atoms: vec![(0.0, 1.0)], psi, profit: 0.0, f }
    }

    fn beta(&self) -> f64 {
        // sum over quantile segments of psi(suffix mass)
        let mut total = 0.0;
        let mut suffix: f64 = self.atoms.iter().map(|a| a.1).sum();
        let mut lo = 0.0;
        for &(w, m) in &self.atoms {
            if w > lo {
                total += (w - lo) * (self.psi)(suffix);
                lo = w;
            }
            suffix -= m;
        }
        total
    }

    fn allocate(&mut self, w: f64, mut m: f64) {
        // drain from the bottom
        while m > 0.0 && !self.atoms.is_empty() {
            let (bw, bm) = self.atoms[0];
            let take = bm.min(m);
            self.profit -= (1.0 + self.f) * bw * take;
            if take == bm {
                self.atoms.remove(0);
            } else {
                self.atoms[0].1 -= take;
            }
            m -= take;
            // add at w
            let pos = self.atoms.iter().position(|&(aw, _)| aw >= w);
            match pos {
                Some(k) if self.atoms[k].0 == w => self.atoms[k].1 += take,
                Some(k) => self.atoms.insert(k, (w, take)),
                None => self.atoms.push((w, take)),
            }
            self.profit += w * take;
        }
    }

    fn run(&mut self, stream: &[f64], step: f64) {
        let mut w_max: f64 = 0.0;
        for &w in stream {
            w_max = w_max.max(w);
            let eps = 1e-9 * w_max;
            let mut remaining = 1.0;
            while remaining > 1e-12 {
                if w - self.beta() <= eps {
                    break;
                }
                let m = step.min(remaining);
                self.allocate(w, m);
                remaining -= m;
            }
        }
    }

    fn quantile(&self, w: f64) -> f64 {
        self.atoms.iter().filter(|&&(aw, _)| aw >= w).map(|&(_, m)| m).sum()
    }
}

#[test]
fn micro_step_oracle_agrees_on_killer_instance() {
    // Example instance: T=10, f=1, large-f parameterization. The exact
    // event-driven engine must agree with a step-mass 1e-6 simulation.
    let f = 1.0;
    let inst = greedy_killer(10, f);
    let stream: Vec<f64> = inst.arrivals.iter().map(|a| a.weights[0]).collect();
    let pen = large_f_penalty(f);
    let run = fractional_primal_dual(&inst, &pen).unwrap();

    let mut sim = MicroSim::new(|y: f64| pen.tau * (pen.lambda.powf(y) - 1.0), f);
    sim.run(&stream, 1e-6);

    let rel = (run.profit() - sim.profit).abs() / sim.profit.abs();
    assert!(
        rel <= 1e-4,
        "engine {} vs micro-step {} (rel {rel})",
        run.profit(),
        sim.profit
    );

    let opt = 2.0f64.powi(10);
    assert!(opt / run.profit() <= buyback::numerics::gamma_general(f) + 1e-6);
}

#[test]
fn linear_penalty_also_follows_canonical_allocation() {
    // The continuum algorithm is penalty-agnostic: with the linear penalty
    // psi(y) = tau*y and tau = what*ln(what)/(what-1), the allocation
    // distribution converges to the canonical form parameterized by what.
    let f = 1.0;
    let w_hat = w_hat_star(f);
    let tau = w_hat * w_hat.ln() / (w_hat - 1.0);
    let t_max = 20.0;
    let stream = buyback::generators::continuum_stream(t_max, 1.02, None);

    let mut sim = MicroSim::new(move |y: f64| tau * y, f);
    sim.run(&stream, 2e-5);

    let canonical = CanonicalAllocation::new(w_hat);
    for k in 1..40 {
        let w = t_max * k as f64 / 40.0;
        let expect = canonical.quantile(w_hat * w / t_max);
        let got = sim.quantile(w);
        assert!(
            (got - expect).abs() <= 0.02,
            "quantile mismatch at w={w}: {got} vs canonical {expect}"
        );
    }
}

#[test]
fn exponential_penalty_scalar_remark_holds() {
    // Exponential penalty tau*(e^y - 1) with tau = (w ln w - w)/(w - e)
    // follows the canonical allocation parameterized by that same w.
    let w_hat = 4.5f64; // > e, arbitrary
    let tau_scalar = (w_hat * w_hat.ln() - w_hat) / (w_hat - std::f64::consts::E);
    let pen = buyback::numerics::PenaltySpec { lambda: std::f64::consts::E, tau: tau_scalar };
    let t_max = 50.0;
    let inst = WeightMatrixInstance::single_resource(
        0.0,
        &buyback::generators::continuum_stream(t_max, 1.005, None),
    );
    let run = fractional_primal_dual(&inst, &pen).unwrap();
    let canonical = CanonicalAllocation::new(w_hat);
    for k in 1..40 {
        let w = t_max * k as f64 / 40.0;
        let expect = canonical.quantile(w_hat * w / t_max);
        let got = run.final_distributions[0].quantile(w);
        assert!(
            (got - expect).abs() <= 0.02,
            "quantile mismatch at w={w}: {got} vs canonical {expect}"
        );
    }
}

#[test]
fn trace_replay_is_deterministic_and_exact() {
    for seed in 0..20u64 {
        let spec = RandomSpec {
            n: 1 + (seed % 6) as usize,
            t: 5 + (seed % 20) as usize,
            f: 0.25 * (seed % 5) as f64,
            w_min: 0.0,
            w_max: 7.0,
            zero_prob: 0.2,
            seed,
        };
        let inst = random_instance(&spec);
        let pen = matching_penalty(inst.buyback_factor);
        let run1 = fractional_primal_dual(&inst, &pen).unwrap();
        let run2 = fractional_primal_dual(&inst, &pen).unwrap();
        // byte-identical traces across repeat runs
        assert_eq!(run1.trace.to_csv(), run2.trace.to_csv());
        // replay reproduces the ledger and the distributions exactly
        let (dists, ledger) = replay_trace(&run1.trace, &inst).unwrap();
        assert_eq!(ledger, run1.ledger);
        assert_eq!(dists, run1.final_distributions);
        // CSV round trip preserves the trace bit-for-bit
        let back = EventTrace::from_csv(&run1.trace.to_csv()).unwrap();
        assert_eq!(back, run1.trace);
    }
}

#[test]
fn greedy_buyback_order_across_algorithms() {
    for seed in 0..12u64 {
        let spec = RandomSpec {
            n: 1 + (seed % 5) as usize,
            t: 4 + (seed % 16) as usize,
            f: 0.3 * (seed % 4) as f64,
            w_min: 0.0,
            w_max: 5.0,
            zero_prob: 0.25,
            seed: seed ^ 0x5151,
        };
        let inst = random_instance(&spec);
        for id in [AlgorithmId::Fractional, AlgorithmId::Deterministic, AlgorithmId::Greedy] {
            let run = run_algorithm(id, &inst).unwrap();
            assert!(check_greedy_buyback_order(&run.trace, &inst).unwrap(), "{id:?}");
        }
        let run = free_disposal(&inst).unwrap();
        assert!(check_greedy_buyback_order(&run.trace, &inst).unwrap());
    }
}

#[test]
fn greedy_integral_never_loses_money_per_step() {
    // every reallocation has nonnegative marginal profit by construction
    for seed in 0..10u64 {
        let spec = RandomSpec {
            n: 3,
            t: 20,
            f: 1.0,
            w_min: 0.0,
            w_max: 4.0,
            zero_prob: 0.3,
            seed: seed ^ 0xbeef,
        };
        let inst = random_instance(&spec);
        let run = greedy_integral(&inst).unwrap();
        for delta in &run.per_arrival_profit {
            assert!(*delta >= -1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_conservation_under_random_operations(
        ops in prop::collection::vec((0.0f64..20.0, 1e-6f64..1.0), 1..40),
        f in 0.0f64..3.0,
    ) {
        let mut dist = AllocationDistribution::new(1.0);
        let mut ledger = ProfitLedger::default();
        let mut trace = EventTrace::default();
        for (i, &(w, m)) in ops.iter().enumerate() {
            allocate_with_buyback(&mut dist, &mut ledger, &mut trace, f, i, 0, w, m).unwrap();
            prop_assert!((dist.total_mass() - 1.0).abs() <= 1e-9);
        }
        // ledger identity: profit equals final holdings minus penalty
        let holdings: f64 = dist.atoms().map(|a| a.weight * a.mass).sum();
        prop_assert!((ledger.profit() - (holdings - f * ledger.reward_refunded)).abs() <= 1e-9 * holdings.abs().max(1.0));
        // penalty tracks refunds at the fixed factor
        prop_assert!((ledger.penalty_paid - f * ledger.reward_refunded).abs() <= 1e-9 * ledger.reward_refunded.max(1.0));
    }

    #[test]
    fn quantile_is_monotone_step_readout(
        weights in prop::collection::vec(0.0f64..10.0, 1..12),
        probe in 0.0f64..12.0,
    ) {
        let mut dist = AllocationDistribution::new(1.0);
        let mut ledger = ProfitLedger::default();
        let mut trace = EventTrace::default();
        for (i, &w) in weights.iter().enumerate() {
            allocate_with_buyback(&mut dist, &mut ledger, &mut trace, 0.0, i, 0, w, 0.5 / weights.len() as f64).unwrap();
        }
        let q0 = dist.quantile(probe);
        let q1 = dist.quantile(probe + 0.5);
        prop_assert!(q1 <= q0 + 1e-15);
        prop_assert!(q0 <= 1.0 + 1e-9);
        prop_assert!(dist.quantile(0.0) >= 1.0 - 1e-9);
    }

    #[test]
    fn fractional_run_is_scale_equivariant(
        seed in 0u64..1000,
        c in prop::sample::select(vec![0.125, 0.7, 7.3, 64.0, 1e6]),
    ) {
        let spec = RandomSpec {
            n: 1 + (seed % 4) as usize,
            t: 3 + (seed % 10) as usize,
            f: 0.5 * (seed % 3) as f64,
            w_min: 0.0,
            w_max: 4.0,
            zero_prob: 0.2,
            seed,
        };
        let inst = random_instance(&spec);
        for id in [AlgorithmId::Fractional, AlgorithmId::Deterministic, AlgorithmId::Greedy] {
            prop_assert!(buyback::audit::check_scale_equivariance(id, &inst, c).unwrap());
        }
    }
}

/// Independent matching oracle: direct micro-step execution of the
/// continuous allocation rule (argmax-gap node gets the next sliver, duals
/// recomputed from scratch each step). Shares no code with the engine's
/// event-driven phases.
fn matching_micro_step(
    inst: &WeightMatrixInstance,
    pen: &buyback::numerics::PenaltySpec,
    step: f64,
) -> f64 {
    use buyback::model::{allocate_with_buyback, EventTrace, ProfitLedger};
    use buyback::numerics::beta_value;
    let n = inst.num_offline;
    let mut dists: Vec<AllocationDistribution> =
        inst.capacities.iter().map(|&s| AllocationDistribution::new(s)).collect();
    let mut ledger = ProfitLedger::default();
    let mut trace = EventTrace::default();
    let mut w_max: f64 = 0.0;
    for (i, arrival) in inst.arrivals.iter().enumerate() {
        for &w in &arrival.weights {
            w_max = w_max.max(w);
        }
        let eps = 1e-9 * w_max;
        let mut remaining = arrival.demand;
        loop {
            if remaining <= 1e-12 {
                break;
            }
            let mut best: Option<(f64, usize)> = None;
            for (j, dist) in dists.iter().enumerate().take(n) {
                let gap = arrival.weights[j] - beta_value(dist, pen);
                if gap > eps && best.is_none_or(|(g, _)| gap > g) {
                    best = Some((gap, j));
                }
            }
            let Some((_, j)) = best else { break };
            let m = step.min(remaining);
            allocate_with_buyback(
                &mut dists[j],
                &mut ledger,
                &mut trace,
                inst.buyback_factor,
                i,
                j,
                arrival.weights[j],
                m,
            )
            .unwrap();
            remaining -= m;
        }
    }
    ledger.profit()
}

#[test]
fn matching_micro_step_oracle_agrees_with_engine() {
    // small matching instances across both penalty regimes
    for (seed, f) in [(3u64, 0.0), (8, 0.5), (21, 1.0), (34, 2.0)] {
        let spec = RandomSpec {
            n: 3,
            t: 8,
            f,
            w_min: 0.5,
            w_max: 4.0,
            zero_prob: 0.2,
            seed: seed ^ 0xabc,
        };
        let inst = random_instance(&spec);
        let pen = matching_penalty(f);
        let engine = fractional_primal_dual(&inst, &pen).unwrap();
        let micro = matching_micro_step(&inst, &pen, 2e-5);
        let rel = (engine.profit() - micro).abs() / micro.abs().max(1e-9);
        assert!(
            rel <= 2e-3,
            "f={f} seed={seed}: engine {} vs micro-step {} (rel {rel})",
            engine.profit(),
            micro
        );
    }
}

#[test]
fn argmax_ties_break_to_lowest_index() {
    // two identical offline nodes: the deterministic rule must pick node 0
    let inst = WeightMatrixInstance::new(
        2,
        0.5,
        vec![buyback::model::Arrival::unit(vec![2.0, 2.0])],
    );
    let run = buyback::engine::deterministic_integral(&inst, 1.5).unwrap();
    let allocs: Vec<usize> = run
        .trace
        .events
        .iter()
        .filter(|e| e.kind == buyback::model::EventKind::Allocate)
        .map(|e| e.offline_index)
        .collect();
    assert_eq!(allocs, vec![0]);
    let run = greedy_integral(&inst).unwrap();
    let allocs: Vec<usize> = run
        .trace
        .events
        .iter()
        .filter(|e| e.kind == buyback::model::EventKind::Allocate)
        .map(|e| e.offline_index)
        .collect();
    assert_eq!(allocs, vec![0]);
}

#[test]
fn nonuniform_trace_face_values_reproduce_ledger() {
    let stream: Vec<(f64, f64)> = vec![(2.0, 0.8), (5.0, 0.5), (3.0, 1.0), (9.0, 0.25)];
    for &f in &[0.0, 1.0] {
        let run =
            buyback::engine::nonuniform_single_resource(&stream, 1.0, 16, f).unwrap();
        let mut reward = 0.0;
        let mut refund = 0.0;
        for e in &run.trace.events {
            match e.kind {
                buyback::model::EventKind::Allocate => reward += e.weight * e.mass,
                buyback::model::EventKind::Buyback => refund += e.weight * e.mass,
            }
        }
        assert!((reward - run.ledger.reward_collected).abs() <= 1e-12 * reward.max(1.0));
        assert!((refund - run.ledger.reward_refunded).abs() <= 1e-12 * refund.max(1.0));
        assert!(
            (run.ledger.penalty_paid - f * run.ledger.reward_refunded).abs()
                <= 1e-12 * run.ledger.reward_refunded.max(1.0)
        );
    }
}
