use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{TopologyMode, TopologyParams};
use crate::model::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("degree {degree} infeasible with {n} sensors")]
    Infeasible { n: usize, degree: usize },
    #[error("exact-regular graph needs n * degree even (n = {n}, degree = {degree})")]
    OddDegreeSum { n: usize, degree: usize },
    #[error("at least one actor is required")]
    NoActors,
}

/// Node placement, one-hop links, regions and sensor-to-actor routes.
#[derive(Debug, Clone)]
pub struct Topology {
    pub mode: TopologyMode,
    pub sensors: Vec<NodeId>,
    pub actors: Vec<NodeId>,
    pub spares: Vec<NodeId>,
    pub sink: NodeId,
    pub positions: BTreeMap<NodeId, (f64, f64)>,
    /// One-hop discovery links. Includes actor links when actors take part
    /// in pair-wise discovery.
    pub adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Sensor -> actor whose region it belongs to at build time.
    pub region_of: BTreeMap<NodeId, NodeId>,
    /// Actor -> sensor used as the multi-hop entry point towards it.
    gateways: BTreeMap<NodeId, NodeId>,
    /// Actor -> (sensor -> next hop towards the gateway).
    parents: BTreeMap<NodeId, BTreeMap<NodeId, NodeId>>,
}

fn fresh_id(rng: &mut ChaCha8Rng, used: &mut BTreeSet<u32>) -> NodeId {
    loop {
        let v: u32 = rng.random();
        if v != 0 && used.insert(v) {
            return NodeId(v);
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl Topology {
    /// Deterministic in `rng`'s state.
    pub fn build(params: &TopologyParams, rng: &mut ChaCha8Rng) -> Result<Self, TopologyError> {
        let n = params.n_sensors;
        let d = params.degree;
        if params.n_actors == 0 {
            return Err(TopologyError::NoActors);
        }
        if d > 0 && d >= n {
            return Err(TopologyError::Infeasible { n, degree: d });
        }
        if params.mode == TopologyMode::ExactRegular && (n * d) % 2 == 1 {
            return Err(TopologyError::OddDegreeSum { n, degree: d });
        }
        let mut used = BTreeSet::new();
        let sensors: Vec<NodeId> = (0..n).map(|_| fresh_id(rng, &mut used)).collect();
        let actors: Vec<NodeId> = (0..params.n_actors).map(|_| fresh_id(rng, &mut used)).collect();
        let spares: Vec<NodeId> = (0..params.spare_actors).map(|_| fresh_id(rng, &mut used)).collect();
        let sink = fresh_id(rng, &mut used);

        let mut positions = BTreeMap::new();
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = sensors.iter().map(|s| (*s, BTreeSet::new())).collect();
        let link = |a: NodeId, b: NodeId, adj: &mut BTreeMap<NodeId, BTreeSet<NodeId>>| {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        };
        match params.mode {
            TopologyMode::ExactRegular => {
                let ring = |i: usize, count: usize, phase: f64| {
                    let a = std::f64::consts::TAU * (i as f64 + phase) / count as f64;
                    (0.5 + 0.4 * a.cos(), 0.5 + 0.4 * a.sin())
                };
                for (i, s) in sensors.iter().enumerate() {
                    positions.insert(*s, ring(i, n, 0.0));
                }
                for (j, a) in actors.iter().enumerate() {
                    positions.insert(*a, ring(j, actors.len(), 0.5));
                }
                for i in 0..n {
                    for k in 1..=d / 2 {
                        link(sensors[i], sensors[(i + k) % n], &mut adjacency);
                    }
                    if d % 2 == 1 {
                        link(sensors[i], sensors[(i + n / 2) % n], &mut adjacency);
                    }
                }
            }
            TopologyMode::Geometric => {
                for s in &sensors {
                    positions.insert(*s, (rng.random::<f64>(), rng.random::<f64>()));
                }
                for a in &actors {
                    positions.insert(*a, (rng.random::<f64>(), rng.random::<f64>()));
                }
                let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
                for i in 0..n {
                    for j in i + 1..n {
                        pairs.push((dist(positions[&sensors[i]], positions[&sensors[j]]), i, j));
                    }
                }
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let k = ((n * d) as f64 / 2.0).round() as usize;
                for &(_, i, j) in pairs.iter().take(k) {
                    link(sensors[i], sensors[j], &mut adjacency);
                }
            }
        }
        for s in &spares {
            positions.insert(*s, (0.5, 0.5));
        }
        positions.insert(sink, (0.5, 0.5));

        let mut region_of = BTreeMap::new();
        for s in &sensors {
            let p = positions[s];
            let nearest = actors
                .iter()
                .min_by(|a, b| dist(p, positions[*a]).total_cmp(&dist(p, positions[*b])).then(a.cmp(b)))
                .copied()
                .unwrap();
            region_of.insert(*s, nearest);
        }
        if params.actor_pairwise {
            for (s, a) in &region_of {
                link(*s, *a, &mut adjacency);
            }
        }
        let mut topo = Topology {
            mode: params.mode,
            sensors,
            actors,
            spares,
            sink,
            positions,
            adjacency,
            region_of,
            gateways: BTreeMap::new(),
            parents: BTreeMap::new(),
        };
        topo.recompute_routes();
        Ok(topo)
    }

    pub fn is_sensor(&self, id: NodeId) -> bool {
        self.region_of.contains_key(&id)
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency.get(&id).map_or(0, |s| s.len())
    }

    /// Sensor-to-sensor degree (actor links excluded).
    pub fn sensor_degree(&self, id: NodeId) -> usize {
        self.neighbors(id).filter(|n| self.is_sensor(*n)).count()
    }

    pub fn members(&self, actor: NodeId) -> BTreeSet<NodeId> {
        self.region_of.iter().filter(|(_, a)| **a == actor).map(|(s, _)| *s).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency.iter().all(|(a, ns)| ns.iter().all(|b| self.adjacency.get(b).is_some_and(|m| m.contains(a))))
    }

    pub fn mean_sensor_degree(&self) -> f64 {
        if self.sensors.is_empty() {
            return 0.0;
        }
        self.sensors.iter().map(|s| self.sensor_degree(*s)).sum::<usize>() as f64 / self.sensors.len() as f64
    }

    /// Links a new sensor into the graph and its region.
    pub fn attach_sensor(&mut self, id: NodeId, neighbors: &[NodeId], actor: NodeId) {
        let p = if neighbors.is_empty() {
            self.positions.get(&actor).copied().unwrap_or((0.5, 0.5))
        } else {
            let (x, y) = neighbors
                .iter()
                .map(|n| self.positions.get(n).copied().unwrap_or((0.5, 0.5)))
                .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
            (x / neighbors.len() as f64, y / neighbors.len() as f64)
        };
        self.positions.insert(id, p);
        self.sensors.push(id);
        self.adjacency.entry(id).or_default();
        for n in neighbors {
            self.adjacency.entry(id).or_default().insert(*n);
            self.adjacency.entry(*n).or_default().insert(id);
        }
        self.region_of.insert(id, actor);
        self.recompute_routes();
    }

    /// A replacement actor takes over the position and routes of `old`.
    pub fn hand_over(&mut self, old: NodeId, new: NodeId) {
        if let Some(p) = self.positions.get(&old).copied() {
            self.positions.insert(new, p);
        }
        for a in self.region_of.values_mut() {
            if *a == old {
                *a = new;
            }
        }
        if let Some(g) = self.gateways.remove(&old) {
            self.gateways.insert(new, g);
        }
        if let Some(p) = self.parents.remove(&old) {
            self.parents.insert(new, p);
        }
    }

    pub fn reassign(&mut self, sensor: NodeId, actor: NodeId) {
        self.region_of.insert(sensor, actor);
    }

    /// Shortest-path trees from each actor's gateway sensor over
    /// sensor-to-sensor links.
    pub fn recompute_routes(&mut self) {
        self.gateways.clear();
        self.parents.clear();
        let actors: Vec<NodeId> = self.region_of.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
        for actor in actors {
            let Some(ap) = self.positions.get(&actor).copied() else { continue };
            let members = self.members(actor);
            let Some(gateway) = members
                .iter()
                .min_by(|a, b| dist(ap, self.positions[*a]).total_cmp(&dist(ap, self.positions[*b])).then(a.cmp(b)))
                .copied()
            else {
                continue;
            };
            let mut parent = BTreeMap::new();
            parent.insert(gateway, gateway);
            let mut queue = VecDeque::from([gateway]);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u).filter(|v| self.is_sensor(*v)).collect::<Vec<_>>() {
                    if let std::collections::btree_map::Entry::Vacant(e) = parent.entry(v) {
                        e.insert(u);
                        queue.push_back(v);
                    }
                }
            }
            self.gateways.insert(actor, gateway);
            self.parents.insert(actor, parent);
        }
    }

    /// Hop list from `sensor` to `actor`, ending with the actor. Sensors
    /// cut off from the gateway reach the actor directly.
    pub fn route(&self, sensor: NodeId, actor: NodeId) -> Vec<NodeId> {
        let mut hops = Vec::new();
        if let Some(parent) = self.parents.get(&actor) {
            if parent.contains_key(&sensor) {
                let mut cur = sensor;
                while parent[&cur] != cur {
                    cur = parent[&cur];
                    hops.push(cur);
                }
            }
        }
        hops.push(actor);
        hops
    }

    pub fn max_route_len(&self) -> usize {
        self.region_of.iter().map(|(s, a)| self.route(*s, *a).len()).max().unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params(n: usize, d: usize, mode: TopologyMode) -> TopologyParams {
        TopologyParams { n_sensors: n, n_actors: 2, spare_actors: 1, degree: d, mode, actor_pairwise: false }
    }

    #[test]
    fn exact_regular_degrees() {
        for (n, d) in [(20, 4), (100, 10), (10, 3), (2, 1), (0, 0)] {
            let t = Topology::build(&params(n, d, TopologyMode::ExactRegular), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert!(t.is_symmetric());
            assert!(t.sensors.iter().all(|s| t.degree(*s) == d), "n={n} d={d}");
        }
    }

    #[test]
    fn infeasible_degree_is_an_error() {
        let p = params(5, 5, TopologyMode::Geometric);
        assert_eq!(
            Topology::build(&p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err(),
            TopologyError::Infeasible { n: 5, degree: 5 }
        );
        let p = params(5, 3, TopologyMode::ExactRegular);
        assert!(Topology::build(&p, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn geometric_mean_degree_tracks_target() {
        for seed in 0..5 {
            let t = Topology::build(&params(60, 6, TopologyMode::Geometric), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(t.is_symmetric());
            assert!((t.mean_sensor_degree() - 6.0).abs() <= 0.3);
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let p = params(30, 4, TopologyMode::Geometric);
        let a = Topology::build(&p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Topology::build(&p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        assert_eq!(a.region_of, b.region_of);
    }

    #[test]
    fn routes_end_at_actor() {
        let t = Topology::build(&params(30, 4, TopologyMode::ExactRegular), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (s, a) in &t.region_of {
            let r = t.route(*s, *a);
            assert_eq!(r.last(), Some(a));
            let mut prev = *s;
            for hop in &r[..r.len() - 1] {
                assert!(t.adjacency[&prev].contains(hop));
                prev = *hop;
            }
        }
    }

    #[test]
    fn single_actor_owns_everything() {
        let mut p = params(12, 2, TopologyMode::Geometric);
        p.n_actors = 1;
        let t = Topology::build(&p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(t.members(t.actors[0]).len(), 12);
    }
}
