//! Optimum offline benchmark oracles.
//!
//! The optimum offline pays no buyback cost: it is the maximum edge-weighted
//! bipartite matching (transportation) value, computed by successive shortest
//! paths on a min-cost flow network. Only positive-gain edges enter the
//! network and augmentation stops once the best path has nonnegative cost, so
//! arrivals are left unmatched rather than matched at zero or negative gain.

use crate::model::WeightMatrixInstance;
use crate::{Error, Result};

/// Optimal offline value together with a feasible assignment achieving it.
#[derive(Debug, Clone)]
pub struct OptResult {
    pub value: f64,
    pub assignment: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
    flow: i64,
}

struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        FlowNetwork { arcs: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        let idx = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost, flow: 0 });
        self.arcs.push(Arc { to: from, cap: 0, cost: -cost, flow: 0 });
        self.adj[from].push(idx);
        self.adj[to].push(idx + 1);
    }

    /// One Bellman-Ford pass (queue-based) over the residual network.
    fn shortest_path(&self, source: usize, sink: usize) -> Option<Vec<usize>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut in_queue = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = 0.0;
        queue.push_back(source);
        in_queue[source] = true;
        let mut pops = 0usize;
        let pop_budget = n.saturating_mul(n).saturating_add(16);
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            pops += 1;
            if pops > pop_budget {
                break; // residual graphs here have no negative cycles
            }
            for &a in &self.adj[u] {
                let arc = &self.arcs[a];
                if arc.cap - arc.flow > 0 && dist[u] + arc.cost < dist[arc.to] - 1e-15 {
                    dist[arc.to] = dist[u] + arc.cost;
                    pred[arc.to] = Some(a);
                    if !in_queue[arc.to] {
                        queue.push_back(arc.to);
                        in_queue[arc.to] = true;
                    }
                }
            }
        }
        // Augment only while the path strictly improves the objective.
        if !dist[sink].is_finite() || dist[sink] >= -1e-15 {
            return None;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while v != source {
            let a = pred[v].expect("predecessor chain reaches the source");
            path.push(a);
            v = self.arcs[a ^ 1].to;
        }
        path.reverse();
        Some(path)
    }
}

/// Maximum edge-weighted matching value with integral capacities and unit
/// demands. Bipartite integrality makes the flow optimum equal the fractional
/// LP optimum in this regime.
pub fn optimal_matching(instance: &WeightMatrixInstance) -> Result<OptResult> {
    instance.validate()?;
    let n = instance.num_offline;
    let t = instance.arrivals.len();
    let mut caps = Vec::with_capacity(n);
    for &s in &instance.capacities {
        let rounded = s.round();
        if (s - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::Unsupported(format!(
                "optimal_matching requires positive integer capacities, got {s}"
            )));
        }
        caps.push(rounded as i64);
    }
    for (i, arrival) in instance.arrivals.iter().enumerate() {
        if (arrival.demand - 1.0).abs() > 1e-12 {
            return Err(Error::Unsupported(format!(
                "optimal_matching requires unit demands, arrival {i} has {}",
                arrival.demand
            )));
        }
    }

    let source = t + n;
    let sink = t + n + 1;
    let mut net = FlowNetwork::new(t + n + 2);
    for i in 0..t {
        net.add_arc(source, i, 1, 0.0);
        for (j, &w) in instance.arrivals[i].weights.iter().enumerate() {
            if w > 0.0 {
                net.add_arc(i, t + j, 1, -w);
            }
        }
    }
    for (j, &cap) in caps.iter().enumerate() {
        net.add_arc(t + j, sink, cap, 0.0);
    }

    while let Some(path) = net.shortest_path(source, sink) {
        let mut bottleneck = i64::MAX;
        for &a in &path {
            bottleneck = bottleneck.min(net.arcs[a].cap - net.arcs[a].flow);
        }
        for &a in &path {
            net.arcs[a].flow += bottleneck;
            let rev = a ^ 1;
            net.arcs[rev].flow -= bottleneck;
        }
    }

    let mut value = 0.0;
    let mut assignment = Vec::new();
    for i in 0..t {
        for &a in &net.adj[i] {
            let arc = &net.arcs[a];
            if a % 2 == 0 && arc.flow > 0 && arc.to >= t && arc.to < t + n {
                let j = arc.to - t;
                let mass = arc.flow as f64;
                value += instance.arrivals[i].weights[j] * mass;
                assignment.push((i, j, mass));
            }
        }
    }
    Ok(OptResult { value, assignment })
}

/// Optimum offline of a single resource: the maximum weight in the stream.
pub fn optimal_single(stream: &[f64]) -> f64 {
    stream.iter().copied().fold(0.0, f64::max)
}
