//! Greedy graph-based region merging.
//!
//! Edges are visited in ascending weight order (ties broken by the node
//! pair). Two regions merge when the current edge weight does not exceed
//!
//! ```text
//! min(Int(R1) + k / |R1|, Int(R2) + k / |R2|)
//! ```
//!
//! where `Int(R)` is the largest edge weight in R's minimum spanning tree
//! (zero for singletons) and `k` trades region size against evidence of a
//! boundary. A second pass then merges every region smaller than
//! `min_size` into its lowest-weight neighbor; `min_size <= 1` disables
//! it. Edges with non-finite weight are barriers: they are skipped
//! entirely, in both passes.

/// Weighted undirected edge between two node indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f32,
}

impl Edge {
    /// Edge with endpoints in canonical (low, high) order.
    pub fn new(a: u32, b: u32, weight: f32) -> Self {
        debug_assert_ne!(a, b, "self edge");
        if a < b {
            Edge { a, b, weight }
        } else {
            Edge { a: b, b: a, weight }
        }
    }
}

/// Union-find over dense u32 ids with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Size of the set whose root is `root`.
    pub fn size_of_root(&self, root: u32) -> u32 {
        self.size[root as usize]
    }

    /// Merges the sets rooted at `ra` and `rb`; returns the surviving root.
    /// The larger set keeps its root, ties keep the smaller id.
    pub fn union_roots(&mut self, ra: u32, rb: u32) -> u32 {
        assert_ne!(ra, rb, "union of a set with itself");
        let (keep, absorb) = if self.size[ra as usize] > self.size[rb as usize]
            || (self.size[ra as usize] == self.size[rb as usize] && ra < rb)
        {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[absorb as usize] = keep;
        self.size[keep as usize] += self.size[absorb as usize];
        keep
    }
}

/// Result of [`fh_segment`]: a dense labeling, 1..=n_regions in order of
/// first node occurrence.
#[derive(Debug, Clone)]
pub struct FhResult {
    pub labels: Vec<u32>,
    pub n_regions: usize,
}

/// Sorts edges by (weight, a, b) ascending, dropping non-finite weights.
pub fn sort_edges(edges: &mut Vec<Edge>) {
    edges.retain(|e| e.weight.is_finite());
    edges.sort_unstable_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then_with(|| (x.a, x.b).cmp(&(y.a, y.b)))
    });
}

/// Runs the merge over `node_count` nodes. Takes the edge list by value
/// because it is sorted in place.
pub fn fh_segment(node_count: usize, mut edges: Vec<Edge>, k: f32, min_size: u32) -> FhResult {
    debug_assert!(edges.iter().all(|e| {
        e.a != e.b
            && (e.a as usize) < node_count
            && (e.b as usize) < node_count
            && !e.weight.is_nan()
            && e.weight >= 0.0
    }));
    sort_edges(&mut edges);

    let mut ds = DisjointSet::new(node_count);
    // Largest merge weight inside each set, indexed by root.
    let mut int_diff = vec![0.0f32; node_count];
    for e in &edges {
        let ra = ds.find(e.a);
        let rb = ds.find(e.b);
        if ra == rb {
            continue;
        }
        let ta = int_diff[ra as usize] + k / ds.size_of_root(ra) as f32;
        let tb = int_diff[rb as usize] + k / ds.size_of_root(rb) as f32;
        if e.weight <= ta.min(tb) {
            let keep = ds.union_roots(ra, rb);
            int_diff[keep as usize] = e.weight
                .max(int_diff[ra as usize])
                .max(int_diff[rb as usize]);
        }
    }

    if min_size > 1 {
        // Ascending order means a small region meets its lowest-weight
        // neighbor first.
        for e in &edges {
            let ra = ds.find(e.a);
            let rb = ds.find(e.b);
            if ra != rb && (ds.size_of_root(ra) < min_size || ds.size_of_root(rb) < min_size) {
                ds.union_roots(ra, rb);
            }
        }
    }

    let mut labels = vec![0u32; node_count];
    let mut dense = vec![0u32; node_count];
    let mut next = 0u32;
    for v in 0..node_count as u32 {
        let root = ds.find(v) as usize;
        if dense[root] == 0 {
            next += 1;
            dense[root] = next;
        }
        labels[v as usize] = dense[root];
    }
    FhResult {
        labels,
        n_regions: next as usize,
    }
}
