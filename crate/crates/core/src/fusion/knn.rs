//! Radius-bounded k-nearest-neighbor search between voxel coordinate lists.
//!
//! Targets are bucketed in a spatial hash whose cells have side `r`, so every
//! target within distance `r` of a query lies in the query cell's 27-neighborhood.
//! Neighbors are ranked by `(squared distance, target coordinate)`; the
//! coordinate tie-break makes results independent of target order.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::CoordList;
use crate::{Error, Result};

pub const NO_NEIGHBOR: u32 = u32::MAX;

/// Up to `k` neighbors per query, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    pub k: usize,
    pub radius: f64,
    /// `[queries, k]` indices into the target list, `NO_NEIGHBOR` past `found`.
    pub indices: Vec<u32>,
    /// `[queries, k]` squared distances in voxel units, 0 past `found`.
    pub dist2: Vec<u64>,
    pub found: Vec<usize>,
}

impl NeighborTable {
    pub fn queries(&self) -> usize {
        self.found.len()
    }

    /// `(target index, squared distance)` pairs for query `q`.
    pub fn neighbors(&self, q: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        (0..self.found[q]).map(move |j| {
            (
                self.indices[q * self.k + j] as usize,
                self.dist2[q * self.k + j],
            )
        })
    }

    /// Debug dump: `query,slot,target,dist2` for every found neighbor.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("query,slot,target,dist2\n");
        for q in 0..self.queries() {
            for (slot, (t, d)) in self.neighbors(q).enumerate() {
                let _ = writeln!(s, "{q},{slot},{t},{d}");
            }
        }
        s
    }
}

#[inline]
fn dist2(a: [i32; 3], b: [i32; 3]) -> u64 {
    (0..3)
        .map(|i| {
            let d = (a[i] as i64 - b[i] as i64).unsigned_abs();
            d * d
        })
        .sum()
}

/// Inserts `(d2, coord, idx)` into a short list sorted ascending, capped at `k`.
#[inline]
fn insert_sorted(best: &mut Vec<(u64, [i32; 3], u32)>, k: usize, cand: (u64, [i32; 3], u32)) {
    let key = |c: &(u64, [i32; 3], u32)| (c.0, c.1);
    if best.len() == k && key(&cand) >= key(best.last().unwrap()) {
        return;
    }
    let pos = best.partition_point(|b| key(b) < key(&cand));
    best.insert(pos, cand);
    best.truncate(k);
}

fn cell_of(c: [i32; 3], inv_r: f64) -> [i64; 3] {
    [
        (c[0] as f64 * inv_r).floor() as i64,
        (c[1] as f64 * inv_r).floor() as i64,
        (c[2] as f64 * inv_r).floor() as i64,
    ]
}

pub fn knn_search(
    queries: &CoordList,
    targets: &CoordList,
    k: usize,
    r: f64,
) -> Result<NeighborTable> {
    if k == 0 {
        return Err(Error::config("knn needs k >= 1"));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::config(format!(
            "knn radius must be positive, got {r}"
        )));
    }
    let inv_r = 1.0 / r;
    let r2 = r * r;
    let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::with_capacity(targets.len());
    for (i, &t) in targets.entries.iter().enumerate() {
        buckets.entry(cell_of(t, inv_r)).or_default().push(i as u32);
    }

    let m = queries.len();
    let mut table = NeighborTable {
        k,
        radius: r,
        indices: vec![NO_NEIGHBOR; m * k],
        dist2: vec![0; m * k],
        found: vec![0; m],
    };
    let mut best = Vec::with_capacity(k + 1);
    for (qi, &q) in queries.entries.iter().enumerate() {
        best.clear();
        let c = cell_of(q, inv_r);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(bucket) = buckets.get(&[c[0] + dz, c[1] + dy, c[2] + dx]) else {
                        continue;
                    };
                    for &ti in bucket {
                        let t = targets.entries[ti as usize];
                        let d = dist2(q, t);
                        if d as f64 <= r2 {
                            insert_sorted(&mut best, k, (d, t, ti));
                        }
                    }
                }
            }
        }
        table.found[qi] = best.len();
        for (j, &(d, _, ti)) in best.iter().enumerate() {
            table.indices[qi * k + j] = ti;
            table.dist2[qi * k + j] = d;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::CoordSource;

    fn list(v: &[[i32; 3]]) -> CoordList {
        CoordList::new(v.to_vec(), CoordSource::Camera)
    }

    #[test]
    fn coincident_target_comes_first() {
        let t = list(&[[0, 0, 1], [2, 2, 2], [0, 0, 0]]);
        let q = list(&[[2, 2, 2]]);
        let tab = knn_search(&q, &t, 2, 3.0).unwrap();
        assert_eq!(tab.neighbors(0).collect::<Vec<_>>(), vec![(1, 0), (0, 9)]);
    }

    #[test]
    fn empty_targets_find_nothing() {
        let tab = knn_search(&list(&[[1, 1, 1]]), &list(&[]), 2, 3.0).unwrap();
        assert_eq!(tab.found, vec![0]);
    }

    #[test]
    fn radius_is_inclusive() {
        let tab = knn_search(&list(&[[0, 0, 0]]), &list(&[[0, 0, 3], [0, 4, 0]]), 3, 3.0).unwrap();
        assert_eq!(tab.neighbors(0).collect::<Vec<_>>(), vec![(0, 9)]);
    }

    #[test]
    fn ties_break_on_coordinate() {
        let t = list(&[[0, 1, 0], [0, 0, 1], [1, 0, 0]]);
        let tab = knn_search(&list(&[[0, 0, 0]]), &t, 2, 1.0).unwrap();
        assert_eq!(
            tab.neighbors(0).map(|n| n.0).collect::<Vec<_>>(),
            vec![1, 0]
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(knn_search(&list(&[]), &list(&[]), 0, 1.0).is_err());
        assert!(knn_search(&list(&[]), &list(&[]), 1, 0.0).is_err());
    }

    #[test]
    fn csv_dump() {
        let tab = knn_search(&list(&[[0, 0, 0]]), &list(&[[0, 0, 1]]), 1, 2.0).unwrap();
        assert_eq!(tab.to_csv(), "query,slot,target,dist2\n0,0,0,1\n");
    }
}
