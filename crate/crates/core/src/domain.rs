//! Finite 4-connected grid domain: locations, adjacency, distances,
//! n-step reachability and sensing disks.

use std::collections::VecDeque;
use std::fmt;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a grid cell in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationId(pub usize);

impl LocationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A subset of the domain's cells backed by a bitset sized to `|V|`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CellSet {
    bits: FixedBitSet,
}

impl CellSet {
    pub fn empty(n: usize) -> Self {
        Self { bits: FixedBitSet::with_capacity(n) }
    }

    pub fn full(n: usize) -> Self {
        let mut bits = FixedBitSet::with_capacity(n);
        bits.insert_range(..);
        Self { bits }
    }

    pub fn from_ids<I: IntoIterator<Item = LocationId>>(n: usize, ids: I) -> Self {
        let mut s = Self::empty(n);
        for id in ids {
            s.insert(id);
        }
        s
    }

    /// Size of the universe the set lives in.
    #[inline]
    pub fn capacity(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn contains(&self, id: LocationId) -> bool {
        self.bits.contains(id.0)
    }

    /// Returns `true` if the cell was not already present.
    #[inline]
    pub fn insert(&mut self, id: LocationId) -> bool {
        !self.bits.put(id.0)
    }

    #[inline]
    pub fn remove(&mut self, id: LocationId) {
        self.bits.set(id.0, false);
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    /// Members in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = LocationId> + '_ {
        self.bits.ones().map(LocationId)
    }

    pub fn to_vec(&self) -> Vec<LocationId> {
        self.iter().collect()
    }

    pub fn union_with(&mut self, other: &CellSet) {
        self.bits.union_with(&other.bits);
    }

    pub fn intersect_with(&mut self, other: &CellSet) {
        self.bits.intersect_with(&other.bits);
    }

    pub fn difference_with(&mut self, other: &CellSet) {
        self.bits.difference_with(&other.bits);
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        let mut s = self.clone();
        s.union_with(other);
        s
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        let mut s = self.clone();
        s.intersect_with(other);
        s
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        let mut s = self.clone();
        s.difference_with(other);
        s
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.bits.is_subset(&other.bits)
    }

    pub fn intersects(&self, other: &CellSet) -> bool {
        !self.bits.is_disjoint(&other.bits)
    }

    /// Lowest-index member.
    pub fn first(&self) -> Option<LocationId> {
        self.bits.ones().next().map(LocationId)
    }
}

impl fmt::Debug for CellSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.bits.ones()).finish()
    }
}

/// How a sensing disk interacts with a restriction set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiskMode {
    /// Breadth-first search never leaves the restriction set.
    #[default]
    PathRestricted,
    /// Unrestricted r-step ball intersected with the restriction set.
    PlainIntersection,
}

/// Sensing region of an agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Disk {
    pub center: LocationId,
    /// Sorted by index.
    pub members: Vec<LocationId>,
}

/// Rectangular 4-connected grid with uniform cell spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain<T> {
    width: usize,
    height: usize,
    spacing: T,
}

impl<T: Scalar> GridDomain<T> {
    pub fn new(width: usize, height: usize, spacing: T) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!("grid must be non-empty, got {width}x{height}")));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Self { width, height, spacing })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn spacing(&self) -> T {
        self.spacing
    }

    /// `|V|`.
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = LocationId> {
        (0..self.len()).map(LocationId)
    }

    pub fn contains(&self, id: LocationId) -> bool {
        id.0 < self.len()
    }

    pub fn check(&self, id: LocationId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(id))
        }
    }

    #[inline]
    pub fn row_col(&self, id: LocationId) -> (usize, usize) {
        (id.0 / self.width, id.0 % self.width)
    }

    #[inline]
    pub fn id_at(&self, row: usize, col: usize) -> LocationId {
        debug_assert!(row < self.height && col < self.width);
        LocationId(row * self.width + col)
    }

    /// Cell-center coordinates `(col * spacing, row * spacing)`.
    pub fn coords(&self, id: LocationId) -> (T, T) {
        let (r, c) = self.row_col(id);
        (T::from_usize_lossy(c) * self.spacing, T::from_usize_lossy(r) * self.spacing)
    }

    pub fn empty_set(&self) -> CellSet {
        CellSet::empty(self.len())
    }

    pub fn full_set(&self) -> CellSet {
        CellSet::full(self.len())
    }

    /// Neighbors in increasing index order.
    pub fn neighbors(&self, id: LocationId) -> impl Iterator<Item = LocationId> {
        let (r, c) = self.row_col(id);
        let (w, h) = (self.width, self.height);
        let up = (r > 0).then(|| LocationId(id.0 - w));
        let left = (c > 0).then(|| LocationId(id.0 - 1));
        let right = (c + 1 < w).then(|| LocationId(id.0 + 1));
        let down = (r + 1 < h).then(|| LocationId(id.0 + w));
        [up, left, right, down].into_iter().flatten()
    }

    pub fn degree(&self, id: LocationId) -> usize {
        self.neighbors(id).count()
    }

    /// Euclidean distance between cell centers in length units.
    ///
    /// Computed from integer offsets so that axis-aligned neighbors sit at
    /// exactly `spacing`.
    pub fn distance(&self, a: LocationId, b: LocationId) -> T {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        let dr = ra.abs_diff(rb);
        let dc = ca.abs_diff(cb);
        self.spacing * T::from_usize_lossy(dr * dr + dc * dc).sqrt()
    }

    /// Number of grid steps on the unrestricted grid (L1 offset).
    pub fn hop_distance(&self, a: LocationId, b: LocationId) -> usize {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    /// `seed` plus every location within `n` graph hops of it.
    pub fn n_step_reach(&self, seed: &CellSet, n: usize) -> CellSet {
        self.bfs_within(seed, Some(n), None)
    }

    /// Connected-component closure of `seed`, optionally confined to `within`.
    /// Seed cells are always part of the result.
    pub fn reach_closure(&self, seed: &CellSet, within: Option<&CellSet>) -> CellSet {
        self.bfs_within(seed, None, within)
    }

    fn bfs_within(&self, seed: &CellSet, max_hops: Option<usize>, within: Option<&CellSet>) -> CellSet {
        let mut seen = seed.clone();
        let mut frontier: Vec<LocationId> = seed.to_vec();
        let mut hops = 0;
        while !frontier.is_empty() && max_hops.map_or(true, |m| hops < m) {
            let mut next = Vec::new();
            for v in frontier {
                for nb in self.neighbors(v) {
                    if within.map_or(true, |w| w.contains(nb)) && seen.insert(nb) {
                        next.push(nb);
                    }
                }
            }
            frontier = next;
            hops += 1;
        }
        seen
    }

    /// Sensing disk of radius `r` steps around `center`.
    ///
    /// With a restriction set the search never steps outside it, so pockets
    /// behind excluded cells are not covered.
    pub fn disk(&self, center: LocationId, r: usize, restrict: Option<&CellSet>) -> Result<Disk> {
        self.disk_with_mode(center, r, restrict, DiskMode::PathRestricted)
    }

    pub fn disk_with_mode(
        &self,
        center: LocationId,
        r: usize,
        restrict: Option<&CellSet>,
        mode: DiskMode,
    ) -> Result<Disk> {
        self.check(center)?;
        if let Some(rs) = restrict {
            if !rs.contains(center) {
                return Err(Error::OutsideRestriction(center));
            }
        }
        let members = self.disk_members(center, r, restrict, mode);
        Ok(Disk { center, members })
    }

    /// Disk members without validation; `center` must lie in `restrict`.
    pub(crate) fn disk_members(
        &self,
        center: LocationId,
        r: usize,
        restrict: Option<&CellSet>,
        mode: DiskMode,
    ) -> Vec<LocationId> {
        let mut out = match (mode, restrict) {
            (DiskMode::PathRestricted, Some(rs)) => {
                // Every cell within r hops lies in the (2r+1)^2 window around the center.
                let (cr, cc) = self.row_col(center);
                let side = 2 * r + 1;
                let slot = |id: LocationId| {
                    let (row, col) = self.row_col(id);
                    (row + r - cr) * side + (col + r - cc)
                };
                let mut visited = vec![false; side * side];
                visited[slot(center)] = true;
                let mut seen = vec![center];
                let mut queue = VecDeque::from([(center, 0usize)]);
                while let Some((v, d)) = queue.pop_front() {
                    if d == r {
                        continue;
                    }
                    for nb in self.neighbors(v) {
                        if rs.contains(nb) && !visited[slot(nb)] {
                            visited[slot(nb)] = true;
                            seen.push(nb);
                            queue.push_back((nb, d + 1));
                        }
                    }
                }
                seen
            }
            _ => {
                // L1 ball on the unrestricted grid.
                let (cr, cc) = self.row_col(center);
                let mut v = Vec::new();
                let r0 = cr.saturating_sub(r);
                let r1 = (cr + r).min(self.height - 1);
                for row in r0..=r1 {
                    let rem = r - cr.abs_diff(row);
                    let c0 = cc.saturating_sub(rem);
                    let c1 = (cc + rem).min(self.width - 1);
                    for col in c0..=c1 {
                        let id = self.id_at(row, col);
                        if restrict.map_or(true, |rs| rs.contains(id)) {
                            v.push(id);
                        }
                    }
                }
                v
            }
        };
        out.sort_unstable();
        out
    }
}

/// Multi-source BFS hop distances on the unrestricted grid.
pub fn hop_layers<T: Scalar>(domain: &GridDomain<T>, sources: &CellSet) -> Vec<usize> {
    let mut dist = vec![usize::MAX; domain.len()];
    let mut queue = VecDeque::new();
    for s in sources.iter() {
        dist[s.0] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        let d = dist[v.0];
        for nb in domain.neighbors(v) {
            if dist[nb.0] == usize::MAX {
                dist[nb.0] = d + 1;
                queue.push_back(nb);
            }
        }
    }
    dist
}
