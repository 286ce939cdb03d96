//! Emergent-pattern analysis of agent snapshots: lane detection by y-gap
//! splitting, cluster detection by single-linkage components, and the
//! head-on proximity metric used to quantify how well the two directions
//! have separated.

use serde::Serialize;

use crate::measures::TwoScaleState;
use crate::vec2::Vec2;

/// Agent positions of both subpopulations at one instant.
#[derive(Clone, Debug, Default)]
pub struct Frame {
    pub t: f64,
    pub positions: [Vec<Vec2>; 2],
}

impl Frame {
    pub fn from_state(t: f64, state: &TwoScaleState) -> Self {
        Frame {
            t,
            positions: [
                state.pops[0].micro.positions().to_vec(),
                state.pops[1].micro.positions().to_vec(),
            ],
        }
    }
}

/// One band of same-direction agents.
#[derive(Clone, Debug, Serialize)]
pub struct Lane {
    /// Mean y of the members.
    pub center: f64,
    /// y-extent of the band.
    pub y_min: f64,
    pub y_max: f64,
    pub occupancy: usize,
    /// Single-linkage component sizes among the members, ascending.
    pub cluster_sizes: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LaneReport {
    /// Lanes per subpopulation, centers ascending.
    pub lanes: [Vec<Lane>; 2],
    /// Count of y-bands after merging overlapping bands across both
    /// subpopulations: the number of separated traffic stripes.
    pub total_lanes: usize,
}

/// Splits each subpopulation into lanes wherever the gap between
/// consecutive sorted y-coordinates exceeds `gap_threshold`, then merges
/// overlapping bands across subpopulations for the total count. Clusters
/// inside each lane are single-linkage components at `link_distance`.
pub fn detect_lanes(frame: &Frame, gap_threshold: f64, link_distance: f64) -> LaneReport {
    let mut lanes: [Vec<Lane>; 2] = [Vec::new(), Vec::new()];
    for (pop_lanes, agents) in lanes.iter_mut().zip(&frame.positions) {
        let mut members: Vec<Vec2> = agents.clone();
        members.sort_by(|a, b| a.y.total_cmp(&b.y));
        let mut start = 0;
        for k in 0..members.len() {
            let is_last = k + 1 == members.len();
            let split = !is_last && members[k + 1].y - members[k].y > gap_threshold;
            if is_last || split {
                let band = &members[start..=k];
                let center = band.iter().map(|p| p.y).sum::<f64>() / band.len() as f64;
                pop_lanes.push(Lane {
                    center,
                    y_min: band[0].y,
                    y_max: band[band.len() - 1].y,
                    occupancy: band.len(),
                    cluster_sizes: cluster_sizes(band, link_distance),
                });
                start = k + 1;
            }
        }
    }

    // merge overlapping [y_min, y_max] bands across subpopulations
    let mut bands: Vec<(f64, f64)> = lanes
        .iter()
        .flatten()
        .map(|l| (l.y_min, l.y_max))
        .collect();
    bands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total_lanes = 0;
    let mut reach = f64::NEG_INFINITY;
    for (lo, hi) in bands {
        if lo > reach {
            total_lanes += 1;
            reach = hi;
        } else {
            reach = reach.max(hi);
        }
    }
    LaneReport { lanes, total_lanes }
}

/// Sizes of the single-linkage connected components of subpopulation `pop`,
/// with edges between agents at mutual distance <= `link_distance`,
/// ascending.
pub fn detect_clusters(frame: &Frame, pop: usize, link_distance: f64) -> Vec<usize> {
    assert!(link_distance > 0.0, "link distance must be positive");
    cluster_sizes(&frame.positions[pop], link_distance)
}

fn cluster_sizes(points: &[Vec2], link_distance: f64) -> Vec<usize> {
    let n = points.len();
    let mut dsu = DisjointSets::new(n);
    let link2 = link_distance * link_distance;
    for a in 0..n {
        for b in a + 1..n {
            if (points[a] - points[b]).norm_sq() <= link2 {
                dsu.union(a, b);
            }
        }
    }
    let mut counts = vec![0usize; n];
    for k in 0..n {
        counts[dsu.find(k)] += 1;
    }
    let mut sizes: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    sizes.sort_unstable();
    sizes
}

/// Number of opposite-group pairs within `radius` of each other
/// (minimum-image in x when `x_period` is given).
pub fn proximity_events(frame: &Frame, radius: f64, x_period: Option<f64>) -> usize {
    let r2 = radius * radius;
    let mut events = 0;
    for a in &frame.positions[0] {
        for b in &frame.positions[1] {
            let mut dx = b.x - a.x;
            if let Some(l) = x_period {
                dx = dx.rem_euclid(l);
                if dx >= l / 2.0 {
                    dx -= l;
                }
            }
            let dy = b.y - a.y;
            if dx * dx + dy * dy <= r2 {
                events += 1;
            }
        }
    }
    events
}

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}
