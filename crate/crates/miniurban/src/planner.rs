//! Global route planner over the lane graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{EnvError, Result};
use crate::geom::{Polyline, Vec2};
use crate::map::{LaneId, Map, NodeId};

/// Spacing of the planner's waypoints, meters.
pub const WAYPOINT_SPACING: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub start: NodeId,
    pub target: NodeId,
    pub lanes: Vec<LaneId>,
    pub polyline: Polyline,
    /// `(arc-length, point)` at fixed spacing, excluding the start point.
    pub waypoints: Vec<(f64, Vec2)>,
}

impl Route {
    pub fn length(&self) -> f64 {
        self.polyline.length()
    }

    /// Builds a route from an explicit polyline (used when a route is
    /// extended past its original target).
    pub fn from_polyline(
        start: NodeId,
        target: NodeId,
        lanes: Vec<LaneId>,
        polyline: Polyline,
    ) -> Self {
        let waypoints = polyline.resample(WAYPOINT_SPACING);
        Self {
            start,
            target,
            lanes,
            polyline,
            waypoints,
        }
    }
}

#[derive(PartialEq)]
struct Frontier {
    cost: f64,
    node: NodeId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, ties broken by node id for determinism.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest lane sequence from `start` to `target` by arc-length.
pub fn shortest_lanes(map: &Map, start: NodeId, target: NodeId) -> Result<Vec<LaneId>> {
    let n = map.nodes.len();
    if start >= n || target >= n {
        return Err(EnvError::Planning(format!(
            "node {} does not exist",
            start.max(target)
        )));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut via: Vec<Option<LaneId>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Frontier {
        cost: 0.0,
        node: start,
    });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if node == target {
            break;
        }
        if cost > dist[node] {
            continue;
        }
        for &lane in map.outgoing(node) {
            let l = map.lane(lane);
            let next = cost + l.length();
            if next < dist[l.to] {
                dist[l.to] = next;
                via[l.to] = Some(lane);
                heap.push(Frontier {
                    cost: next,
                    node: l.to,
                });
            }
        }
    }
    if !dist[target].is_finite() {
        return Err(EnvError::Planning(format!(
            "node {target} is unreachable from node {start}"
        )));
    }
    let mut lanes = Vec::new();
    let mut node = target;
    while node != start {
        let lane = via[node].expect("predecessor recorded on the shortest-path tree");
        lanes.push(lane);
        node = map.lane(lane).from;
    }
    lanes.reverse();
    Ok(lanes)
}

pub fn plan_route(map: &Map, start: NodeId, target: NodeId) -> Result<Route> {
    let lanes = shortest_lanes(map, start, target)?;
    let mut polyline = Polyline::new(vec![map.nodes[start]]);
    for &l in &lanes {
        polyline.extend(&map.lane(l).polyline);
    }
    Ok(Route::from_polyline(start, target, lanes, polyline))
}
