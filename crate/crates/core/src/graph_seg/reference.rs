//! Transparent re-derivation of the region merge, used to check the fast
//! path. Keeps explicit membership vectors and recomputes each region's
//! internal variation from a fresh minimum spanning tree at every
//! decision, instead of carrying it incrementally through a union-find.
//! Quadratic and worse; only for small graphs in tests.

use super::fh::Edge;

/// Largest edge weight in a minimum spanning tree of the subgraph induced
/// by the nodes with `comp[v] == id`. Zero for singletons. The component
/// must be connected inside `edges` (always true for components formed by
/// merging along edges). The maximum MST edge weight is the same for
/// every MST of a graph, so no tie policy is needed here.
fn internal_variation(comp: &[u32], edges: &[Edge], id: u32) -> f32 {
    let members: Vec<u32> = (0..comp.len() as u32)
        .filter(|&v| comp[v as usize] == id)
        .collect();
    if members.len() <= 1 {
        return 0.0;
    }
    let mut in_tree = vec![false; comp.len()];
    in_tree[members[0] as usize] = true;
    let mut joined = 1;
    let mut largest = 0.0f32;
    while joined < members.len() {
        let mut best: Option<f32> = None;
        let mut best_node = 0u32;
        for e in edges {
            if comp[e.a as usize] != id || comp[e.b as usize] != id {
                continue;
            }
            let (inside, outside) = match (in_tree[e.a as usize], in_tree[e.b as usize]) {
                (true, false) => (e.a, e.b),
                (false, true) => (e.b, e.a),
                _ => continue,
            };
            let _ = inside;
            if best.is_none() || e.weight < best.unwrap() {
                best = Some(e.weight);
                best_node = outside;
            }
        }
        let w = best.expect("component not connected by the given edges");
        in_tree[best_node as usize] = true;
        joined += 1;
        if w > largest {
            largest = w;
        }
    }
    largest
}

fn component_size(comp: &[u32], id: u32) -> u32 {
    comp.iter().filter(|&&c| c == id).count() as u32
}

fn merge(comp: &mut [u32], from: u32, into: u32) {
    for c in comp.iter_mut() {
        if *c == from {
            *c = into;
        }
    }
}

/// Reference segmentation; same contract as `fh_segment`, returning the
/// dense 1-based labeling.
pub fn fh_reference(node_count: usize, edges: &[Edge], k: f32, min_size: u32) -> Vec<u32> {
    let mut finite: Vec<Edge> = edges
        .iter()
        .copied()
        .filter(|e| e.weight.is_finite())
        .collect();
    finite.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then_with(|| (x.a, x.b).cmp(&(y.a, y.b)))
    });

    let mut comp: Vec<u32> = (0..node_count as u32).collect();
    for e in &finite {
        let ca = comp[e.a as usize];
        let cb = comp[e.b as usize];
        if ca == cb {
            continue;
        }
        let ta = internal_variation(&comp, &finite, ca) + k / component_size(&comp, ca) as f32;
        let tb = internal_variation(&comp, &finite, cb) + k / component_size(&comp, cb) as f32;
        if e.weight <= ta.min(tb) {
            merge(&mut comp, cb, ca);
        }
    }

    if min_size > 1 {
        for e in &finite {
            let ca = comp[e.a as usize];
            let cb = comp[e.b as usize];
            if ca != cb
                && (component_size(&comp, ca) < min_size || component_size(&comp, cb) < min_size)
            {
                merge(&mut comp, cb, ca);
            }
        }
    }

    let mut dense = vec![0u32; node_count];
    let mut labels = vec![0u32; node_count];
    let mut next = 0u32;
    for v in 0..node_count {
        let c = comp[v] as usize;
        if dense[c] == 0 {
            next += 1;
            dense[c] = next;
        }
        labels[v] = dense[c];
    }
    labels
}
