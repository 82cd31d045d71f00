//! Continuous-time Galton-Watson genealogies (no spatial motion).
//!
//! A tree is generated event by event: a min-priority queue keyed on death
//! time pops the next individual to die, whose children (if any) are born at
//! that instant with fresh exponential lifetimes. Nodes are stored in an
//! arena in event order, which is automatically topological: every node's
//! death is processed after its birth. Children of one parent occupy
//! consecutive arena slots, so Ulam-Harris navigation is index arithmetic.
//!
//! Every node draws its lifetime, offspring count and branching seed from a
//! private stream derived from `(replica seed, label)`; re-simulating any
//! subtree from its label reproduces it exactly.

use crate::error::SimError;
use crate::offspring::OffspringDistribution;
use crate::rng::{Purpose, StreamKey};
use crate::Result;
use rand::Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

pub const NO_NODE: u32 = u32::MAX;

/// Ulam-Harris label: a word of positive child indices; the empty word is
/// the root. Prefix order is the ancestor relation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct NodeLabel(pub Vec<u32>);

impl NodeLabel {
    pub fn root() -> Self {
        NodeLabel(Vec::new())
    }

    /// Generation `|u|`.
    pub fn generation(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, j: u32) -> Self {
        debug_assert!(j >= 1);
        let mut path = self.0.clone();
        path.push(j);
        NodeLabel(path)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(NodeLabel(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    /// Whether `self` is an ancestor of `other` (prefix order, reflexive).
    pub fn is_prefix_of(&self, other: &NodeLabel) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

/// Most recent common ancestor: longest common prefix of the two labels.
pub fn mrca(u: &NodeLabel, v: &NodeLabel) -> NodeLabel {
    let mut out = Vec::new();
    for (a, b) in u.0.iter().zip(v.0.iter()) {
        if a == b {
            out.push(*a);
        } else {
            break;
        }
    }
    NodeLabel(out)
}

/// One individual of the genealogy.
#[derive(Clone, Debug)]
pub struct TreeNode {
    pub parent: u32,
    /// Arena index of child 1; children are contiguous. `NO_NODE` if no
    /// children were materialized (leaf, or death past the horizon).
    pub first_child: u32,
    /// Offspring count drawn at birth (children exist only if death < horizon).
    pub nu: u32,
    pub generation: u32,
    /// Birth time `alpha(u)`.
    pub alpha: f64,
    /// Death time `beta(u) = alpha(u) + lifetime`.
    pub beta: f64,
    /// Lineage stream key (drives lifetime/offspring/kernel/motion draws).
    pub key: StreamKey,
    /// Branching-event seed consumed by the kernel at this node's death.
    pub theta: u64,
}

impl TreeNode {
    pub fn lifetime(&self) -> f64 {
        self.beta - self.alpha
    }
}

/// Caps guarding supercritical blow-up.
#[derive(Copy, Clone, Debug)]
pub struct Caps {
    pub max_nodes: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_nodes: 1_000_000,
        }
    }
}

/// An explicit continuous-time Galton-Watson tree up to a horizon.
#[derive(Clone, Debug)]
pub struct GWTree {
    nodes: Vec<TreeNode>,
    pub horizon: f64,
    pub rate: f64,
    pub truncated: bool,
}

/// Closed-form population moments at time `t`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Moments {
    /// `E[N_t]`
    pub en: f64,
    /// `E[N_t^2]`
    pub en2: f64,
    /// `E[D_t]`
    pub ed: f64,
}

/// Mean population size `E[N_t] = exp(r (m-1) t)`.
pub fn expected_population(d: &OffspringDistribution, r: f64, t: f64) -> f64 {
    (r * (d.mean() - 1.0) * t).exp()
}

/// Closed-form `E[N_t]`, `E[N_t^2]`, `E[D_t]`.
///
/// At `m = 1` the death formula degenerates; its limit `r t` is used.
pub fn expected_moments(d: &OffspringDistribution, r: f64, t: f64) -> Moments {
    let m = d.mean();
    let var = d.variance();
    if (m - 1.0).abs() < 1e-12 {
        return Moments {
            en: 1.0,
            en2: 1.0 + var * r * t,
            ed: r * t,
        };
    }
    let en = (r * (m - 1.0) * t).exp();
    let en2 = en + (var / (m - 1.0) + m) * (en * en - en);
    let ed = (en - 1.0) / (m - 1.0);
    Moments { en, en2, ed }
}

/// Min-heap entry ordered by death time, ties broken by arena index.
struct DeathEvent {
    beta: f64,
    idx: u32,
}

impl PartialEq for DeathEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for DeathEvent {}
impl PartialOrd for DeathEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for DeathEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want earliest death first
        other
            .beta
            .total_cmp(&self.beta)
            .then(other.idx.cmp(&self.idx))
    }
}

fn draw_node(key: StreamKey, d: &OffspringDistribution, r: f64) -> (f64, u32, u64) {
    let mut rng = key.rng(Purpose::Structure);
    let u: f64 = rng.random();
    let lifetime = -(1.0 - u).ln() / r;
    let nu = d.sample(&mut rng);
    let theta: u64 = rng.random();
    (lifetime, nu, theta)
}

/// Simulate a tree up to `horizon`. Every node born before the horizon is
/// present with its offspring count drawn; children are materialized only
/// for parents dying before the horizon.
pub fn simulate_tree(
    d: &OffspringDistribution,
    r: f64,
    horizon: f64,
    caps: Caps,
    key: StreamKey,
) -> Result<GWTree> {
    simulate_tree_from(d, r, 0.0, horizon, caps, key)
}

/// Simulate the subtree of an individual born at `root_birth` with stream
/// key `key`; used both for whole replicas (`root_birth = 0`) and for exact
/// subtree replays.
pub fn simulate_tree_from(
    d: &OffspringDistribution,
    r: f64,
    root_birth: f64,
    horizon: f64,
    caps: Caps,
    key: StreamKey,
) -> Result<GWTree> {
    assert!(
        r > 0.0 && horizon > root_birth,
        "rate must be positive and horizon past the root birth"
    );
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut heap = BinaryHeap::new();

    let (lifetime, nu, theta) = draw_node(key, d, r);
    nodes.push(TreeNode {
        parent: NO_NODE,
        first_child: NO_NODE,
        nu,
        generation: 0,
        alpha: root_birth,
        beta: root_birth + lifetime,
        key,
        theta,
    });
    heap.push(DeathEvent {
        beta: root_birth + lifetime,
        idx: 0,
    });

    while let Some(ev) = heap.pop() {
        if ev.beta >= horizon {
            break;
        }
        let (parent_key, nu, gen) = {
            let n = &nodes[ev.idx as usize];
            (n.key, n.nu, n.generation)
        };
        if nu == 0 {
            continue;
        }
        if nodes.len() + nu as usize > caps.max_nodes {
            let nodes_so_far = nodes.len();
            let partial = GWTree {
                nodes,
                horizon,
                rate: r,
                truncated: true,
            };
            return Err(SimError::PopulationCapExceeded {
                nodes: nodes_so_far,
                partial: Some(Box::new(partial)),
            });
        }
        nodes[ev.idx as usize].first_child = nodes.len() as u32;
        for j in 1..=nu {
            let child_key = parent_key.child(j);
            let (lifetime, child_nu, child_theta) = draw_node(child_key, d, r);
            let idx = nodes.len() as u32;
            nodes.push(TreeNode {
                parent: ev.idx,
                first_child: NO_NODE,
                nu: child_nu,
                generation: gen + 1,
                alpha: ev.beta,
                beta: ev.beta + lifetime,
                key: child_key,
                theta: child_theta,
            });
            heap.push(DeathEvent {
                beta: ev.beta + lifetime,
                idx,
            });
        }
    }

    Ok(GWTree {
        nodes,
        horizon,
        rate: r,
        truncated: false,
    })
}

impl GWTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: u32) -> &TreeNode {
        &self.nodes[idx as usize]
    }

    fn check_horizon(&self, t: f64) -> Result<()> {
        if t > self.horizon {
            Err(SimError::BeyondHorizon {
                t,
                horizon: self.horizon,
            })
        } else {
            Ok(())
        }
    }

    /// Indices of individuals alive at `t`: `alpha(u) <= t < beta(u)`.
    pub fn alive_at(&self, t: f64) -> Result<Vec<u32>> {
        self.check_horizon(t)?;
        Ok(self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alpha <= t && t < n.beta)
            .map(|(i, _)| i as u32)
            .collect())
    }

    /// `N_t`, without materializing the index list.
    pub fn population_at(&self, t: f64) -> Result<usize> {
        self.check_horizon(t)?;
        Ok(self
            .nodes
            .iter()
            .filter(|n| n.alpha <= t && t < n.beta)
            .count())
    }

    /// `D_t`: number of individuals dead strictly before `t`.
    pub fn deaths_before(&self, t: f64) -> Result<usize> {
        self.check_horizon(t)?;
        Ok(self.nodes.iter().filter(|n| n.beta < t).count())
    }

    /// The ancestor of `u` alive at time `t` (possibly `u` itself).
    pub fn ancestor_at(&self, u: u32, t: f64) -> Result<u32> {
        let node = self.nodes.get(u as usize).ok_or(SimError::NotAlive)?;
        if t >= node.beta {
            return Err(SimError::NotAlive);
        }
        let mut cur = u;
        loop {
            let n = &self.nodes[cur as usize];
            if n.alpha <= t {
                return Ok(cur);
            }
            if n.parent == NO_NODE {
                // only reachable for subtree replays queried before the
                // root's birth
                return Err(SimError::NotAlive);
            }
            cur = n.parent;
        }
    }

    /// Arena index of a label, if that individual was materialized.
    pub fn index_of(&self, label: &NodeLabel) -> Option<u32> {
        let mut cur = 0u32;
        for &j in &label.0 {
            let n = &self.nodes[cur as usize];
            if n.first_child == NO_NODE || j == 0 || j > n.nu {
                return None;
            }
            cur = n.first_child + (j - 1);
        }
        Some(cur)
    }

    /// Ulam-Harris label of an arena index.
    pub fn label_of(&self, idx: u32) -> NodeLabel {
        let mut path = Vec::new();
        let mut cur = idx;
        while self.nodes[cur as usize].parent != NO_NODE {
            let parent = self.nodes[cur as usize].parent;
            let j = cur - self.nodes[parent as usize].first_child + 1;
            path.push(j);
            cur = parent;
        }
        path.reverse();
        NodeLabel(path)
    }

    /// Child `j` (1-based) of `idx`, if materialized.
    pub fn child_of(&self, idx: u32, j: u32) -> Option<u32> {
        let n = &self.nodes[idx as usize];
        if n.first_child == NO_NODE || j == 0 || j > n.nu {
            None
        } else {
            Some(n.first_child + (j - 1))
        }
    }

    /// One node per line, `label<TAB>alpha<TAB>beta<TAB>nu`, breadth-first in
    /// lexicographic label order.
    pub fn dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(0u32);
        while let Some(idx) = queue.pop_front() {
            let n = &self.nodes[idx as usize];
            writeln!(w, "{}\t{}\t{}\t{}", self.label_of(idx), n.alpha, n.beta, n.nu)?;
            if n.first_child != NO_NODE {
                for j in 0..n.nu {
                    queue.push_back(n.first_child + j);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(seed: u64, replica: u64) -> StreamKey {
        StreamKey::replica(seed, replica)
    }

    #[test]
    fn immediate_death_gives_single_node() {
        let d = OffspringDistribution::validate(&[(0, 1.0)]).unwrap();
        let tree = simulate_tree(&d, 3.0, 5.0, Caps::default(), key(1, 0)).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.node(0).nu, 0);
        assert_eq!(tree.alive_at(0.0).unwrap(), vec![0]);
    }

    #[test]
    fn root_alive_at_zero_and_dead_counts() {
        let d = OffspringDistribution::yule();
        let tree = simulate_tree(&d, 1.0, 2.0, Caps::default(), key(2, 0)).unwrap();
        assert_eq!(tree.alive_at(0.0).unwrap(), vec![0]);
        assert_eq!(tree.deaths_before(0.0).unwrap(), 0);
        // just below the first death only the root is alive
        let first_death = tree.node(0).beta.min(2.0);
        if first_death < 2.0 {
            let t = first_death * (1.0 - 1e-12);
            assert_eq!(tree.alive_at(t).unwrap(), vec![0]);
        }
    }

    #[test]
    fn parent_child_times_are_bit_equal() {
        let d = OffspringDistribution::validate(&[(0, 0.3), (2, 0.5), (3, 0.2)]).unwrap();
        for replica in 0..50 {
            let tree = simulate_tree(&d, 1.3, 4.0, Caps::default(), key(3, replica)).unwrap();
            for (i, n) in tree.nodes().iter().enumerate() {
                if n.parent != NO_NODE {
                    let p = tree.node(n.parent);
                    assert_eq!(n.alpha.to_bits(), p.beta.to_bits());
                }
                if n.first_child != NO_NODE {
                    assert!(n.beta < tree.horizon);
                    for j in 1..=n.nu {
                        let c = tree.child_of(i as u32, j).unwrap();
                        assert_eq!(tree.node(c).parent, i as u32);
                    }
                }
            }
        }
    }

    #[test]
    fn beyond_horizon_rejected() {
        let d = OffspringDistribution::yule();
        let tree = simulate_tree(&d, 1.0, 1.0, Caps::default(), key(4, 0)).unwrap();
        assert!(matches!(
            tree.alive_at(1.5),
            Err(SimError::BeyondHorizon { .. })
        ));
        assert!(matches!(
            tree.deaths_before(2.0),
            Err(SimError::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn cap_returns_partial_tree() {
        let d = OffspringDistribution::yule();
        let err = simulate_tree(&d, 1.0, 50.0, Caps { max_nodes: 64 }, key(5, 0)).unwrap_err();
        match err {
            SimError::PopulationCapExceeded { nodes, partial } => {
                assert!(nodes <= 64);
                let partial = partial.unwrap();
                assert!(partial.truncated);
                assert_eq!(partial.len(), nodes);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ancestor_at_walks_the_lineage() {
        let d = OffspringDistribution::yule();
        // pick a replica with at least one death before t = 2.5
        let tree = (0..20)
            .map(|rep| simulate_tree(&d, 1.0, 3.0, Caps::default(), key(6, rep)).unwrap())
            .find(|tr| tr.nodes().iter().any(|n| n.beta < 2.5))
            .expect("a replica with an early death");
        let alive = tree.alive_at(2.5).unwrap();
        for &u in &alive {
            // identity case
            assert_eq!(tree.ancestor_at(u, 2.5).unwrap(), u);
            // at t=0 every lineage passes through the root
            assert_eq!(tree.ancestor_at(u, 0.0).unwrap(), 0);
            // the ancestor alive at t has matching interval
            let a = tree.ancestor_at(u, 1.0).unwrap();
            let n = tree.node(a);
            assert!(n.alpha <= 1.0 && 1.0 < n.beta);
            // and is a prefix of u
            assert!(tree.label_of(a).is_prefix_of(&tree.label_of(u)));
        }
        let dead = tree
            .nodes()
            .iter()
            .position(|n| n.beta < 2.5)
            .expect("some death by t=2.5");
        assert!(matches!(
            tree.ancestor_at(dead as u32, 2.5),
            Err(SimError::NotAlive)
        ));
    }

    #[test]
    fn mrca_examples() {
        let u = NodeLabel(vec![1, 2, 1]);
        let v = NodeLabel(vec![1, 3]);
        assert_eq!(mrca(&u, &v), NodeLabel(vec![1]));
        assert_eq!(mrca(&u, &u), u);
        assert_eq!(
            mrca(&NodeLabel(vec![1, 1]), &NodeLabel(vec![2, 1])),
            NodeLabel::root()
        );
    }

    #[test]
    fn label_index_round_trip() {
        let d = OffspringDistribution::validate(&[(0, 0.2), (2, 0.6), (3, 0.2)]).unwrap();
        let tree = simulate_tree(&d, 1.0, 3.5, Caps::default(), key(7, 3)).unwrap();
        for idx in 0..tree.len() as u32 {
            let label = tree.label_of(idx);
            assert_eq!(tree.index_of(&label), Some(idx));
            assert_eq!(label.generation(), tree.node(idx).generation as usize);
        }
        assert_eq!(tree.index_of(&NodeLabel(vec![9, 9, 9])), None);
    }

    #[test]
    fn expected_moments_yule_and_critical() {
        let yule = OffspringDistribution::yule();
        let m = expected_moments(&yule, 1.0, 1.0);
        let e = std::f64::consts::E;
        assert!((m.en - e).abs() < 1e-12);
        assert!((m.en2 - (2.0 * e * e - e)).abs() < 1e-12);
        assert!((m.ed - (e - 1.0)).abs() < 1e-12);

        // critical law {0: 0.5, 2: 0.5}: EN = 1, EN2 = 1 + var * r * t
        let crit = OffspringDistribution::validate(&[(0, 0.5), (2, 0.5)]).unwrap();
        let mc = expected_moments(&crit, 1.0, 2.0);
        assert!((mc.en - 1.0).abs() < 1e-12);
        assert!((mc.en2 - (1.0 + crit.variance() * 2.0)).abs() < 1e-12);
        assert!((mc.ed - 2.0).abs() < 1e-12);

        // t = 0
        let m0 = expected_moments(&yule, 1.0, 0.0);
        assert_eq!((m0.en, m0.en2, m0.ed), (1.0, 1.0, 0.0));
    }

    #[test]
    fn monte_carlo_moments_match_closed_form() {
        // supercritical {0: 0.25, 2: 0.75} and Yule, t = 1, 10^4 replicas
        let laws = [
            OffspringDistribution::yule(),
            OffspringDistribution::validate(&[(0, 0.25), (2, 0.75)]).unwrap(),
        ];
        for (li, d) in laws.iter().enumerate() {
            let n_reps = 10_000u64;
            let t = 1.0;
            let mut n_vals = Vec::new();
            let mut n2_vals = Vec::new();
            let mut d_vals = Vec::new();
            for rep in 0..n_reps {
                let tree =
                    simulate_tree(d, 1.0, t, Caps::default(), key(100 + li as u64, rep)).unwrap();
                let n = tree.population_at(t).unwrap() as f64;
                n_vals.push(n);
                n2_vals.push(n * n);
                d_vals.push(tree.deaths_before(t).unwrap() as f64);
            }
            let m = expected_moments(d, 1.0, t);
            for (vals, target) in [(n_vals, m.en), (n2_vals, m.en2), (d_vals, m.ed)] {
                let est = crate::stats::McEstimate::from_values(&vals);
                assert!(
                    (est.mean - target).abs() < 4.0 * est.se,
                    "law {li}: {} vs {target} (se {})",
                    est.mean,
                    est.se
                );
            }
        }
    }

    #[test]
    fn same_seed_dumps_identical_bytes() {
        let d = OffspringDistribution::yule();
        let a = simulate_tree(&d, 1.0, 3.0, Caps::default(), key(8, 11)).unwrap();
        let b = simulate_tree(&d, 1.0, 3.0, Caps::default(), key(8, 11)).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.dump(&mut ba).unwrap();
        b.dump(&mut bb).unwrap();
        assert!(!ba.is_empty());
        assert_eq!(ba, bb);
    }

    #[test]
    fn dump_is_breadth_first_lexicographic() {
        let d = OffspringDistribution::yule();
        let tree = simulate_tree(&d, 1.0, 2.0, Caps::default(), key(9, 2)).unwrap();
        let mut buf = Vec::new();
        tree.dump(&mut buf).unwrap();
        let labels: Vec<Vec<u32>> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| {
                let field = l.split('\t').next().unwrap();
                if field.is_empty() {
                    vec![]
                } else {
                    field.split('.').map(|s| s.parse().unwrap()).collect()
                }
            })
            .collect();
        assert_eq!(labels.len(), tree.len());
        for w in labels.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(
                a.len() < b.len() || (a.len() == b.len() && a < b),
                "not BFS-lex: {a:?} then {b:?}"
            );
        }
    }

    #[test]
    fn yule_limit_law_after_rescaling_is_exponential() {
        // N_t e^{-rt} approaches an Exp(1) limit; KS below 0.02 at t = 6.
        let d = OffspringDistribution::yule();
        let t = 6.0;
        let n_reps = 10_000u64;
        let mut w = Vec::with_capacity(n_reps as usize);
        for rep in 0..n_reps {
            let tree = simulate_tree(&d, 1.0, t, Caps::default(), key(400, rep)).unwrap();
            w.push(tree.population_at(t).unwrap() as f64 * (-t).exp());
        }
        w.sort_by(f64::total_cmp);
        let ks = crate::stats::ks_statistic_sorted(&w, |x| 1.0 - (-x).exp());
        assert!(ks < 0.02, "KS = {ks}");
    }
}
