use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tree over feature channels (bones). Parents precede children.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    parents: Vec<Option<usize>>,
}

impl Topology {
    pub fn new(parents: Vec<Option<usize>>) -> Result<Self> {
        if parents.is_empty() || parents[0].is_some() {
            return Err(Error::Skeleton("topology needs a root at index 0".into()));
        }
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return Err(Error::Skeleton(format!("bone {i} has invalid parent {p:?}"))),
            }
        }
        Ok(Topology { parents })
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (i + 1..self.parents.len()).filter(move |&c| self.parents[c] == Some(i))
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (c, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                adj[p].push(c);
                adj[c].push(p);
            }
        }
        adj
    }

    /// Tree distance (number of edges) from `src` to every bone.
    pub fn distances_from(&self, src: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut dist = vec![usize::MAX; self.len()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Neighbor sets within tree distance `d` (self included).
    pub fn neighbors_within(&self, d: usize) -> NeighborTable {
        let sets = (0..self.len())
            .map(|i| {
                self.distances_from(i)
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, dist)| dist <= d)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        NeighborTable::from_sets(sets)
    }

    /// Merges parent-child pairs whose shared joint has degree two, searching
    /// outward from the root in pre-order; unmatched bones stay singletons.
    pub fn pooling_plan(&self) -> PoolingPlan {
        let n = self.len();
        let mut group_of: Vec<Option<usize>> = vec![None; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            let kids: Vec<usize> = self.children(u).collect();
            if group_of[u].is_none() {
                let g = groups.len();
                group_of[u] = Some(g);
                match kids.as_slice() {
                    [only] => {
                        group_of[*only] = Some(g);
                        groups.push(vec![u, *only]);
                    }
                    _ => groups.push(vec![u]),
                }
            }
            // children in index order
            stack.extend(kids.into_iter().rev());
        }
        let group_of: Vec<usize> = group_of.into_iter().map(|g| g.unwrap()).collect();
        let merged_parents = groups
            .iter()
            .map(|members| self.parents[members[0]].map(|p| group_of[p]))
            .collect();
        PoolingPlan {
            groups,
            group_of,
            merged: Topology {
                parents: merged_parents,
            },
        }
    }
}

/// For each bone `i`, the sorted set of bones within distance `d`.
///
/// Pairs `(i, j)` are numbered bone-major so packed per-pair weights can be
/// addressed by [`NeighborTable::pair_index`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    sets: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

impl NeighborTable {
    pub fn from_sets(sets: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(sets.len() + 1);
        let mut acc = 0;
        for s in &sets {
            offsets.push(acc);
            acc += s.len();
        }
        offsets.push(acc);
        NeighborTable { sets, offsets }
    }

    pub fn num_bones(&self) -> usize {
        self.sets.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn num_pairs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// First pair index belonging to bone `i`.
    pub fn pair_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.sets[i].iter().position(|&x| x == j).map(|k| self.offsets[i] + k)
    }
}

/// Disjoint groups of bones merged by one pooling step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolingPlan {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    merged: Topology,
}

impl PoolingPlan {
    /// Plan that keeps every bone on its own.
    pub fn identity(topology: &Topology) -> Self {
        let n = topology.len();
        PoolingPlan {
            groups: (0..n).map(|i| vec![i]).collect(),
            group_of: (0..n).collect(),
            merged: topology.clone(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, bone: usize) -> usize {
        self.group_of[bone]
    }

    pub fn source_bones(&self) -> usize {
        self.group_of.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Topology of the pooled skeleton.
    pub fn merged(&self) -> &Topology {
        &self.merged
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Skeleton;
    use proptest::prelude::*;

    fn chain(n: usize) -> Topology {
        Topology::new((0..n).map(|i| i.checked_sub(1)).collect()).unwrap()
    }

    fn star(leaves: usize) -> Topology {
        let mut p = vec![None];
        p.extend((0..leaves).map(|_| Some(0)));
        Topology::new(p).unwrap()
    }

    #[test]
    fn distance_zero_is_self() {
        let t = Skeleton::toy7().topology().neighbors_within(0);
        for i in 0..7 {
            assert_eq!(t.neighbors(i), &[i]);
        }
    }

    #[test]
    fn chain_neighbors() {
        let t = chain(3).neighbors_within(1);
        assert_eq!(t.neighbors(0), &[0, 1]);
        assert_eq!(t.neighbors(1), &[0, 1, 2]);
        assert_eq!(t.neighbors(2), &[1, 2]);
        let t5 = chain(5).neighbors_within(2);
        assert_eq!(t5.neighbors(0), &[0, 1, 2]);
        assert_eq!(t5.num_pairs(), 3 + 4 + 5 + 4 + 3);
        assert_eq!(t5.pair_index(1, 3), Some(3 + 3));
        assert_eq!(t5.pair_index(0, 4), None);
    }

    #[test]
    fn chain_pooling_pairs_from_the_root() {
        assert_eq!(chain(4).pooling_plan().groups(), &[vec![0, 1], vec![2, 3]]);
        assert_eq!(chain(5).pooling_plan().groups(), &[vec![0, 1], vec![2, 3], vec![4]]);
    }

    #[test]
    fn star_pools_to_singletons() {
        let plan = star(3).pooling_plan();
        assert!(plan.groups().iter().all(|g| g.len() == 1));
        assert_eq!(plan.num_groups(), 4);
    }

    #[test]
    fn toy7_has_pairs_and_singletons() {
        let plan = Skeleton::toy7().topology().pooling_plan();
        assert_eq!(plan.groups(), &[vec![0, 1], vec![2], vec![3, 4], vec![5, 6]]);
        assert_eq!(plan.merged().parents(), &[None, Some(0), Some(0), Some(0)]);
    }

    #[test]
    fn smpl24_hierarchy_shrinks() {
        let mut topo = Skeleton::smpl24().topology();
        let mut counts = vec![topo.len()];
        for _ in 0..4 {
            let plan = topo.pooling_plan();
            topo = plan.merged().clone();
            counts.push(topo.len());
        }
        assert_eq!(counts[0], 24);
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        assert!(counts[1] < 24);
    }

    fn random_tree() -> impl Strategy<Value = Topology> {
        (1usize..50).prop_flat_map(|n| {
            proptest::collection::vec(any::<proptest::sample::Index>(), n - 1).prop_map(move |idx| {
                let mut parents = vec![None];
                for (i, ix) in idx.iter().enumerate() {
                    parents.push(Some(ix.index(i + 1)));
                }
                Topology::new(parents).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn neighbor_sets_are_symmetric_and_reflexive(topo in random_tree(), d in 0usize..4) {
            let t = topo.neighbors_within(d);
            for i in 0..topo.len() {
                prop_assert!(t.neighbors(i).contains(&i));
                for &j in t.neighbors(i) {
                    prop_assert!(t.neighbors(j).contains(&i));
                }
            }
        }

        #[test]
        fn pooling_groups_partition_the_bones(topo in random_tree()) {
            let plan = topo.pooling_plan();
            let mut seen = vec![0usize; topo.len()];
            for (g, members) in plan.groups().iter().enumerate() {
                prop_assert!(members.len() == 1 || members.len() == 2);
                if let [a, b] = members.as_slice() {
                    prop_assert_eq!(topo.parents()[*b], Some(*a));
                    prop_assert_eq!(topo.children(*a).count(), 1);
                }
                for &m in members {
                    seen[m] += 1;
                    prop_assert_eq!(plan.group_of(m), g);
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert!(Topology::new(plan.merged().parents().to_vec()).is_ok());
        }
    }
}
