//! Exhaustive configuration-graph oracle for tiny populations.
//!
//! A protocol stably computes its goal from an initial configuration iff
//! every bottom strongly connected component of the reachable configuration
//! graph consists of goal configurations. Finite graphs make this decidable.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::error::{Error, Result};
use crate::model::{Configuration, Goal, Protocol, StateId};

pub const DEFAULT_CAP: usize = 1_000_000;

/// Reachable configurations (as sorted agent lists) and their successors.
#[derive(Clone, Debug)]
pub struct ReachabilityGraph {
    num_states: usize,
    nodes: Vec<Box<[StateId]>>,
    edges: Vec<Vec<u32>>,
    /// BFS tree parent, for counterexample paths. The root is node 0.
    parent: Vec<Option<u32>>,
}

impl ReachabilityGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn configuration(&self, i: usize) -> Configuration {
        Configuration::from_agents(self.num_states, &self.nodes[i]).expect("explored configuration")
    }

    pub fn successors(&self, i: usize) -> &[u32] {
        &self.edges[i]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Node ids from the initial configuration to `target`.
    pub fn path_to(&self, target: usize) -> Vec<usize> {
        let mut path = vec![target];
        let mut cur = target;
        while let Some(p) = self.parent[cur] {
            cur = p as usize;
            path.push(cur);
        }
        path.reverse();
        path
    }
}

/// Breadth-first closure of `init` under every applicable interaction.
pub fn explore<P: Protocol + ?Sized>(
    proto: &P,
    init: &Configuration,
    cap: usize,
) -> Result<ReachabilityGraph> {
    if init.n() < 2 {
        return Err(Error::InvalidPopulation { n: init.n() });
    }
    let num_states = proto.num_states();
    let root: Box<[StateId]> = init.agents().into();
    let mut index: HashMap<Box<[StateId]>, u32> = HashMap::new();
    index.insert(root.clone(), 0);
    let mut g = ReachabilityGraph {
        num_states,
        nodes: vec![root],
        edges: vec![Vec::new()],
        parent: vec![None],
    };
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let c = g.configuration(i);
        let mut present: Vec<(StateId, u32)> = c.iter().collect();
        present.sort_unstable();
        let mut succ = Vec::new();
        for (x, &(s, ks)) in present.iter().enumerate() {
            for &(t, _) in &present[x..] {
                if s == t && ks < 2 {
                    continue;
                }
                let orders: &[(StateId, StateId)] =
                    if s == t { &[(s, t)] } else { &[(s, t), (t, s)] };
                for &(u, v) in orders {
                    let mut next = c.clone();
                    next.apply(u, v, proto)?;
                    let key: Box<[StateId]> = next.agents().into();
                    let id = match index.get(&key) {
                        Some(&id) => id,
                        None => {
                            if g.nodes.len() >= cap {
                                return Err(Error::StateSpaceExplosion {
                                    reached: g.nodes.len(),
                                    cap,
                                });
                            }
                            let id = g.nodes.len() as u32;
                            index.insert(key.clone(), id);
                            g.nodes.push(key);
                            g.edges.push(Vec::new());
                            g.parent.push(Some(i as u32));
                            queue.push_back(id as usize);
                            id
                        }
                    };
                    succ.push(id);
                }
            }
        }
        succ.sort_unstable();
        succ.dedup();
        g.edges[i] = succ;
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail { reason: String, path: Vec<String> },
    NotEvaluated(String),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("PASS"),
            Verdict::NotEvaluated(why) => write!(f, "NOT EVALUATED ({why})"),
            Verdict::Fail { reason, path } => {
                writeln!(f, "FAIL: {reason}")?;
                for (i, c) in path.iter().enumerate() {
                    writeln!(f, "  {i:>3}: {c}")?;
                }
                Ok(())
            }
        }
    }
}

/// Renders a configuration as `{state: count, ...}` in state order.
pub fn render<P: Protocol + ?Sized>(proto: &P, c: &Configuration) -> String {
    let mut items: Vec<(StateId, u32)> = c.iter().collect();
    items.sort_unstable();
    let body: Vec<String> = items
        .iter()
        .map(|&(s, k)| format!("{}: {k}", proto.describe(s)))
        .collect();
    format!("{{{}}}", body.join(", "))
}

fn fail_at<P: Protocol + ?Sized>(
    g: &ReachabilityGraph,
    proto: &P,
    node: usize,
    reason: String,
) -> Verdict {
    let path = g
        .path_to(node)
        .into_iter()
        .map(|i| render(proto, &g.configuration(i)))
        .collect();
    Verdict::Fail { reason, path }
}

/// Bottom SCCs of the graph, as lists of node ids.
pub fn bottom_components(g: &ReachabilityGraph) -> Vec<Vec<usize>> {
    let mut dg: DiGraph<(), ()> = DiGraph::with_capacity(g.len(), g.edge_count());
    for _ in 0..g.len() {
        dg.add_node(());
    }
    for (i, succ) in g.edges.iter().enumerate() {
        for &j in succ {
            dg.add_edge(NodeIndex::new(i), NodeIndex::new(j as usize), ());
        }
    }
    let sccs = tarjan_scc(&dg);
    let mut comp = vec![0usize; g.len()];
    for (k, scc) in sccs.iter().enumerate() {
        for v in scc {
            comp[v.index()] = k;
        }
    }
    sccs.into_iter()
        .enumerate()
        .filter(|(k, scc)| {
            scc.iter()
                .all(|v| g.edges[v.index()].iter().all(|&j| comp[j as usize] == *k))
        })
        .map(|(_, scc)| scc.into_iter().map(|v| v.index()).collect())
        .collect()
}

/// PASS iff (i) a goal configuration is reachable from every node and (ii)
/// every bottom SCC contains only goal configurations.
pub fn verify_stable_computation<P: Protocol + ?Sized>(
    g: &ReachabilityGraph,
    proto: &P,
    goal: Goal,
) -> Verdict {
    let good: Vec<bool> = (0..g.len())
        .map(|i| goal.holds(proto, &g.configuration(i)))
        .collect();

    for scc in bottom_components(g) {
        if let Some(&bad) = scc.iter().find(|&&v| !good[v]) {
            return fail_at(
                g,
                proto,
                bad,
                format!(
                    "bottom component of {} configurations violates {goal:?}",
                    scc.len()
                ),
            );
        }
    }

    let mut reverse = vec![Vec::new(); g.len()];
    for (i, succ) in g.edges.iter().enumerate() {
        for &j in succ {
            reverse[j as usize].push(i);
        }
    }
    let mut reaches = good.clone();
    let mut queue: VecDeque<usize> = (0..g.len()).filter(|&i| good[i]).collect();
    while let Some(v) = queue.pop_front() {
        for &u in &reverse[v] {
            if !reaches[u] {
                reaches[u] = true;
                queue.push_back(u);
            }
        }
    }
    if let Some(bad) = reaches.iter().position(|r| !r) {
        return fail_at(
            g,
            proto,
            bad,
            format!("no {goal:?} configuration is reachable"),
        );
    }
    Verdict::Pass
}

/// Explores from the protocol's initial configuration and checks its goal.
pub fn check_protocol<P: Protocol + ?Sized>(proto: &P, cap: usize) -> Result<(Verdict, usize)> {
    let Some(goal) = proto.goal() else {
        return Ok((
            Verdict::NotEvaluated("no expected output (tie input)".into()),
            0,
        ));
    };
    let g = explore(proto, &proto.initial(), cap)?;
    Ok((verify_stable_computation(&g, proto, goal), g.len()))
}

/// Checks that the protocol's stabilization detector is closed under
/// successors. Returns a node where it fires but a successor disagrees.
pub fn detector_counterexample<P: Protocol + ?Sized>(
    g: &ReachabilityGraph,
    proto: &P,
) -> Result<Option<usize>> {
    let mut stable = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        stable.push(proto.is_stable_output(&g.configuration(i))?);
    }
    Ok((0..g.len()).find(|&i| stable[i] && g.edges[i].iter().any(|&j| !stable[j as usize])))
}
