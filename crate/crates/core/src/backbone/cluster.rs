// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use super::{Attribution, BackboneError, BackboneRouter, PopRef};

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage components of the graph joining routers closer than
/// `threshold_ms`. Returns, per router, the index of its component's
/// representative.
pub fn components(matrix: &[Vec<f64>], threshold_ms: f64) -> Result<Vec<usize>, BackboneError> {
    let n = matrix.len();
    if let Some(bad) = matrix.iter().find(|row| row.len() != n) {
        return Err(BackboneError::MatrixShapeMismatch { rows: n, columns: bad.len() });
    }
    let mut sets = DisjointSets::new(n);
    for (i, row) in matrix.iter().enumerate() {
        for (j, &d) in row.iter().enumerate().skip(i + 1) {
            if d < threshold_ms {
                sets.union(i, j);
            }
        }
    }
    Ok((0..n).map(|i| sets.find(i)).collect())
}

/// Assigns PoPs to unresolved routers by single-linkage clustering.
///
/// A component anchored by PTR-attributed routers of exactly one PoP hands
/// that PoP to its other members. Components anchored in several PoPs are
/// ambiguous and assign nothing. Components without anchors become
/// `unknown-N`, numbered by their smallest router address. The output keeps
/// the input order; previously clustered routers are recomputed.
pub fn cluster_unresolved(
    routers: &[BackboneRouter],
    matrix: &[Vec<f64>],
    threshold_ms: f64,
) -> Result<Vec<BackboneRouter>, BackboneError> {
    if matrix.len() != routers.len() {
        return Err(BackboneError::MatrixShapeMismatch { rows: matrix.len(), columns: routers.len() });
    }
    let comp = components(matrix, threshold_ms)?;

    let mut anchors: BTreeMap<usize, BTreeSet<PopRef>> = BTreeMap::new();
    let mut min_addr = BTreeMap::new();
    for (i, r) in routers.iter().enumerate() {
        let c = comp[i];
        let slot = min_addr.entry(c).or_insert(r.addr);
        *slot = (*slot).min(r.addr);
        if r.attribution == Attribution::Ptr {
            anchors.entry(c).or_default().extend(r.pop.clone());
        }
    }
    let mut orphans: Vec<(std::net::Ipv6Addr, usize)> =
        min_addr.iter().filter(|(c, _)| !anchors.contains_key(c)).map(|(&c, &a)| (a, c)).collect();
    orphans.sort();
    let synthetic: BTreeMap<usize, u32> = orphans.iter().enumerate().map(|(n, &(_, c))| (c, n as u32 + 1)).collect();

    Ok(routers
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut out = r.clone();
            if r.attribution == Attribution::Ptr {
                return out;
            }
            out.ambiguous = false;
            let c = comp[i];
            match anchors.get(&c) {
                Some(pops) if pops.len() == 1 => {
                    out.pop = pops.iter().next().cloned();
                    out.attribution = Attribution::LatencyCluster;
                }
                Some(_) => {
                    out.pop = None;
                    out.attribution = Attribution::Unresolved;
                    out.ambiguous = true;
                }
                None => {
                    out.pop = Some(PopRef::Synthetic(synthetic[&c]));
                    out.attribution = Attribution::LatencyCluster;
                }
            }
            out
        })
        .collect())
}
