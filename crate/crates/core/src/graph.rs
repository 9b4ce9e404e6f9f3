//! Conflict graphs and the set of feasible schedules.
//!
//! Links are indexed from 0. A schedule is stored as a bit mask with link 0
//! in the least significant bit, which is also the canonical sort key of a
//! [`ScheduleSet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest link count a [`ConflictGraph`] can hold (one bit per link).
pub const MAX_LINKS: usize = 64;

/// Default cap for exhaustive schedule enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Symmetric interference relation over `L` links, without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    links: usize,
    neighbors: Vec<u64>,
}

/// On-disk graph description: `{"links": L, "conflicts": [[i, j], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub links: usize,
    #[serde(default)]
    pub conflicts: Vec<[usize; 2]>,
}

impl ConflictGraph {
    /// Builds a graph from an undirected conflict list. Pairs are closed
    /// symmetrically; duplicates are harmless.
    pub fn new(links: usize, conflicts: &[(usize, usize)]) -> Result<Self> {
        if links == 0 {
            return Err(Error::InvalidGraph("a graph needs at least one link".into()));
        }
        if links > MAX_LINKS {
            return Err(Error::InvalidGraph(format!("{links} links exceeds the supported maximum of {MAX_LINKS}")));
        }
        let mut neighbors = vec![0u64; links];
        for &(i, j) in conflicts {
            if i >= links || j >= links {
                return Err(Error::InvalidGraph(format!("conflict ({i}, {j}) references a link outside 0..{links}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("link {i} cannot conflict with itself")));
            }
            neighbors[i] |= 1 << j;
            neighbors[j] |= 1 << i;
        }
        Ok(Self { links, neighbors })
    }

    /// Builds a graph from a boolean interference matrix, which must be
    /// symmetric with a false diagonal.
    pub fn from_matrix(matrix: &[Vec<bool>]) -> Result<Self> {
        let links = matrix.len();
        let mut conflicts = Vec::new();
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != links {
                return Err(Error::LengthMismatch { expected: links, got: row.len() });
            }
            for (j, &a) in row.iter().enumerate() {
                if a != matrix[j][i] {
                    return Err(Error::InvalidGraph(format!("interference matrix is not symmetric at ({i}, {j})")));
                }
                if a && i < j {
                    conflicts.push((i, j));
                } else if a && i == j {
                    return Err(Error::InvalidGraph(format!("diagonal entry {i} is set")));
                }
            }
        }
        Self::new(links, &conflicts)
    }

    /// Linear network: link `i` interferes with `i - 1` and `i + 1`.
    pub fn path(links: usize) -> Result<Self> {
        let conflicts: Vec<_> = (1..links).map(|i| (i - 1, i)).collect();
        Self::new(links, &conflicts)
    }

    /// Full interference: every pair of links conflicts.
    pub fn complete(links: usize) -> Result<Self> {
        let mut conflicts = Vec::new();
        for i in 0..links {
            for j in i + 1..links {
                conflicts.push((i, j));
            }
        }
        Self::new(links, &conflicts)
    }

    /// No interference at all.
    pub fn independent(links: usize) -> Result<Self> {
        Self::new(links, &[])
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        let conflicts: Vec<_> = spec.conflicts.iter().map(|&[i, j]| (i, j)).collect();
        Self::new(spec.links, &conflicts)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GraphSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidGraph(format!("malformed graph JSON: {e}")))?;
        Self::from_spec(&spec)
    }

    pub fn to_spec(&self) -> GraphSpec {
        let mut conflicts = Vec::new();
        for i in 0..self.links {
            for j in i + 1..self.links {
                if self.interferes(i, j) {
                    conflicts.push([i, j]);
                }
            }
        }
        GraphSpec { links: self.links, conflicts }
    }

    pub fn links(&self) -> usize {
        self.links
    }

    pub fn interferes(&self, l: usize, k: usize) -> bool {
        self.neighbors[l] >> k & 1 == 1
    }

    /// Bit mask of the links interfering with `l`.
    pub fn neighbor_mask(&self, l: usize) -> u64 {
        self.neighbors[l]
    }

    pub fn matrix(&self) -> Vec<Vec<bool>> {
        (0..self.links).map(|i| (0..self.links).map(|j| self.interferes(i, j)).collect()).collect()
    }

    /// Mask with one bit per link.
    pub fn full_mask(&self) -> u64 {
        if self.links == 64 {
            u64::MAX
        } else {
            (1u64 << self.links) - 1
        }
    }

    /// True when no two links of `m` interfere and `m` only uses valid links.
    pub fn admits(&self, m: Schedule) -> bool {
        if m.0 & !self.full_mask() != 0 {
            return false;
        }
        m.links().all(|l| self.neighbors[l] & m.0 == 0)
    }
}

/// A link activation profile, as a bit mask (bit `l` set iff link `l` is active).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Schedule(pub u64);

impl Schedule {
    pub const EMPTY: Schedule = Schedule(0);

    pub fn from_links(links: &[usize]) -> Self {
        Schedule(links.iter().fold(0, |acc, &l| acc | 1 << l))
    }

    pub fn from_bools(active: &[bool]) -> Result<Self> {
        if active.len() > MAX_LINKS {
            return Err(Error::LengthMismatch { expected: MAX_LINKS, got: active.len() });
        }
        Ok(Schedule(active.iter().enumerate().fold(0, |acc, (l, &a)| if a { acc | 1 << l } else { acc })))
    }

    pub fn to_bools(self, links: usize) -> Vec<bool> {
        (0..links).map(|l| self.contains(l)).collect()
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn contains(self, l: usize) -> bool {
        self.0 >> l & 1 == 1
    }

    pub fn with(self, l: usize) -> Self {
        Schedule(self.0 | 1 << l)
    }

    pub fn without(self, l: usize) -> Self {
        Schedule(self.0 & !(1 << l))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Active link indices in increasing order.
    pub fn links(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let l = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(l)
            }
        })
    }
}

/// All feasible schedules of a graph, in canonical (increasing mask) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleSet {
    links: usize,
    schedules: Vec<Schedule>,
}

impl ScheduleSet {
    pub fn links(&self) -> usize {
        self.links
    }

    pub fn len(&self) -> usize {
        self.schedules.len()
    }

    /// Never true for a set built by enumeration (it holds the empty schedule).
    pub fn is_empty(&self) -> bool {
        self.schedules.is_empty()
    }

    pub fn schedules(&self) -> &[Schedule] {
        &self.schedules
    }

    pub fn iter(&self) -> impl Iterator<Item = Schedule> + '_ {
        self.schedules.iter().copied()
    }

    pub fn get(&self, index: usize) -> Option<Schedule> {
        self.schedules.get(index).copied()
    }

    pub fn index_of(&self, m: Schedule) -> Option<usize> {
        self.schedules.binary_search(&m).ok()
    }

    pub fn contains(&self, m: Schedule) -> bool {
        self.index_of(m).is_some()
    }
}

pub fn enumerate_schedules(g: &ConflictGraph) -> Result<ScheduleSet> {
    enumerate_schedules_with_cap(g, DEFAULT_ENUMERATION_CAP)
}

/// Enumerates every independent set of `g` by backtracking over links.
pub fn enumerate_schedules_with_cap(g: &ConflictGraph, cap: usize) -> Result<ScheduleSet> {
    if g.links() > cap {
        return Err(Error::GraphTooLarge { links: g.links(), cap });
    }
    let mut schedules = Vec::new();
    extend(g, 0, 0, 0, &mut schedules);
    schedules.sort_unstable();
    Ok(ScheduleSet { links: g.links(), schedules })
}

fn extend(g: &ConflictGraph, next: usize, current: u64, blocked: u64, out: &mut Vec<Schedule>) {
    if next == g.links() {
        out.push(Schedule(current));
        return;
    }
    extend(g, next + 1, current, blocked, out);
    if blocked >> next & 1 == 0 {
        extend(g, next + 1, current | 1 << next, blocked | g.neighbor_mask(next), out);
    }
}

/// Feasibility of a boolean activation vector.
pub fn is_feasible(active: &[bool], g: &ConflictGraph) -> Result<bool> {
    if active.len() != g.links() {
        return Err(Error::LengthMismatch { expected: g.links(), got: active.len() });
    }
    Ok(g.admits(Schedule::from_bools(active)?))
}

/// Inactive links that can join `m` without creating interference.
pub fn addable_links(m: Schedule, g: &ConflictGraph) -> Result<Vec<usize>> {
    if !g.admits(m) {
        return Err(Error::InfeasibleSchedule);
    }
    Ok(addable_mask(m, g).links().collect())
}

/// Mask form of [`addable_links`] for a schedule already known to be feasible.
pub(crate) fn addable_mask(m: Schedule, g: &ConflictGraph) -> Schedule {
    let mut mask = 0;
    for l in 0..g.links() {
        if !m.contains(l) && g.neighbor_mask(l) & m.0 == 0 {
            mask |= 1 << l;
        }
    }
    Schedule(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path3() -> ConflictGraph {
        ConflictGraph::path(3).unwrap()
    }

    #[test]
    fn path3_schedules() {
        let s = enumerate_schedules(&path3()).unwrap();
        let expected: Vec<_> =
            [vec![], vec![0], vec![1], vec![2], vec![0, 2]].iter().map(|v| Schedule::from_links(v)).collect();
        let mut sorted = expected.clone();
        sorted.sort();
        assert_eq!(s.schedules(), sorted.as_slice());
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn single_and_complete() {
        let s = enumerate_schedules(&ConflictGraph::path(1).unwrap()).unwrap();
        assert_eq!(s.schedules(), &[Schedule(0), Schedule(1)]);
        let s = enumerate_schedules(&ConflictGraph::complete(3).unwrap()).unwrap();
        assert_eq!(s.schedules(), &[Schedule(0), Schedule(1), Schedule(2), Schedule(4)]);
    }

    #[test]
    fn enumeration_cap() {
        let g = ConflictGraph::path(21).unwrap();
        assert_eq!(enumerate_schedules(&g), Err(Error::GraphTooLarge { links: 21, cap: 20 }));
        assert!(enumerate_schedules_with_cap(&g, 21).is_ok());
    }

    #[test]
    fn feasibility() {
        let g = path3();
        assert!(is_feasible(&[true, false, true], &g).unwrap());
        assert!(!is_feasible(&[true, true, false], &g).unwrap());
        assert!(is_feasible(&[false, false, false], &g).unwrap());
        assert!(matches!(is_feasible(&[true], &g), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn addable() {
        let g = path3();
        assert_eq!(addable_links(Schedule::EMPTY, &g).unwrap(), vec![0, 1, 2]);
        assert_eq!(addable_links(Schedule::from_links(&[0]), &g).unwrap(), vec![2]);
        assert!(addable_links(Schedule::from_links(&[0, 2]), &g).unwrap().is_empty());
        assert_eq!(addable_links(Schedule::from_links(&[0, 1]), &g), Err(Error::InfeasibleSchedule));
    }

    #[test]
    fn invalid_graphs() {
        assert!(ConflictGraph::new(0, &[]).is_err());
        assert!(ConflictGraph::new(2, &[(0, 2)]).is_err());
        assert!(ConflictGraph::new(2, &[(1, 1)]).is_err());
        assert!(ConflictGraph::from_matrix(&[vec![false, true], vec![false, false]]).is_err());
    }

    #[test]
    fn json_round_trip_applies_symmetric_closure() {
        let g = ConflictGraph::from_json(r#"{"links": 3, "conflicts": [[1, 0], [2, 1]]}"#).unwrap();
        assert_eq!(g, path3());
        assert!(g.interferes(0, 1) && g.interferes(1, 0));
        let again = ConflictGraph::from_spec(&g.to_spec()).unwrap();
        assert_eq!(again, g);
    }

    fn arb_graph() -> impl Strategy<Value = ConflictGraph> {
        (1usize..=10).prop_flat_map(|links| {
            proptest::collection::vec(any::<bool>(), links * links).prop_map(move |bits| {
                let mut conflicts = Vec::new();
                for i in 0..links {
                    for j in i + 1..links {
                        if bits[i * links + j] {
                            conflicts.push((i, j));
                        }
                    }
                }
                ConflictGraph::new(links, &conflicts).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn enumeration_is_closed_and_exact(g in arb_graph()) {
            let s = enumerate_schedules(&g).unwrap();
            prop_assert!(s.len() > g.links());
            // exactly the independent subsets, via brute force over all masks
            let brute: Vec<_> = (0..1u64 << g.links()).map(Schedule).filter(|&m| g.admits(m)).collect();
            prop_assert_eq!(s.schedules(), brute.as_slice());
            for m in s.iter() {
                for l in addable_links(m, &g).unwrap() {
                    prop_assert!(s.contains(m.with(l)));
                }
            }
        }
    }

    #[test]
    fn edgeless_and_complete_counts() {
        for links in 1..=10 {
            let free = enumerate_schedules(&ConflictGraph::independent(links).unwrap()).unwrap();
            assert_eq!(free.len(), 1 << links);
            let full = enumerate_schedules(&ConflictGraph::complete(links).unwrap()).unwrap();
            assert_eq!(full.len(), links + 1);
        }
    }
}
