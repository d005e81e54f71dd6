//! Exact k-nearest-neighbour search over stored key sites.
//!
//! Candidates are ordered by `(squared distance, id)`, the same total order
//! the linear scan uses, so both paths select identical neighbours
//! including on exact ties.

/// A selected neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub id: u64,
}

#[inline]
fn before(a: (f64, u64), b: (f64, u64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Fixed-capacity sorted candidate list (k is small).
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    items: Vec<Neighbor>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.items.len() == self.k
    }

    /// Largest retained distance, or +inf while not full.
    #[inline]
    pub fn bound(&self) -> f64 {
        if self.is_full() {
            self.items[self.k - 1].dist2
        } else {
            f64::INFINITY
        }
    }

    /// Insert a candidate. Re-offering a candidate already held is a no-op,
    /// so callers may seed the list before a full search.
    #[inline]
    pub fn offer(&mut self, dist2: f64, id: u64) {
        if self.is_full() {
            let worst = self.items[self.k - 1];
            if !before((dist2, id), (worst.dist2, worst.id)) {
                return;
            }
        }
        let pos = self
            .items
            .iter()
            .position(|n| !before((n.dist2, n.id), (dist2, id)))
            .unwrap_or(self.items.len());
        if let Some(n) = self.items.get(pos) {
            if n.dist2 == dist2 && n.id == id {
                return;
            }
        }
        if self.is_full() {
            self.items.pop();
        }
        self.items.insert(pos, Neighbor { dist2, id });
    }

    pub fn as_slice(&self) -> &[Neighbor] {
        &self.items
    }
}

/// Squared Euclidean distance. Channel `c` accumulates into lane `c % 4`
/// and the lanes are combined as `(l0 + l1) + (l2 + l3)`; every search path
/// uses this exact order so distances agree bit for bit.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut s = [0.0; 4];
    let mut i = 0;
    while i + 4 <= n {
        accumulate4(&mut s, &a[i..i + 4], &b[i..i + 4]);
        i += 4;
    }
    for j in 0..n - i {
        let d = a[i + j] - b[i + j];
        s[j] += d * d;
    }
    lane_total(&s)
}

#[inline(always)]
fn accumulate4(s: &mut [f64; 4], a: &[f64], b: &[f64]) {
    let (a, b) = (&a[..4], &b[..4]);
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]];
    s[0] += d[0] * d[0];
    s[1] += d[1] * d[1];
    s[2] += d[2] * d[2];
    s[3] += d[3] * d[3];
}

#[inline]
fn lane_total(s: &[f64; 4]) -> f64 {
    (s[0] + s[1]) + (s[2] + s[3])
}

/// [`squared_distance`], or some value above `bound` once the partial sum
/// exceeds it. Rounding is monotone, so a partial sum above `bound` implies
/// the full distance is too.
#[inline]
pub fn squared_distance_within(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let n = a.len().min(b.len());
    let mut s = [0.0; 4];
    let mut i = 0;
    while i + 4 <= n {
        accumulate4(&mut s, &a[i..i + 4], &b[i..i + 4]);
        i += 4;
        let t = lane_total(&s);
        if t > bound {
            return t;
        }
    }
    for j in 0..n - i {
        let d = a[i + j] - b[i + j];
        s[j] += d * d;
    }
    lane_total(&s)
}

/// Brute-force scan over a flat `n x dim` point buffer; ids are row numbers.
pub fn scan(points: &[f64], dim: usize, query: &[f64], out: &mut TopK) {
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let d = squared_distance(query, p);
        out.offer(d, i as u64);
    }
}

const LEAF_SIZE: usize = 24;
/// Rows sampled per node when choosing the split dimension.
const SPLIT_SAMPLE: usize = 64;
/// Relative slack on incremental cell bounds. They are accumulated in a
/// different order than point distances, so pruning is made conservative
/// by far more than the possible rounding error.
const PRUNE_SLACK: f64 = 1e-9;

const NONE: u32 = u32::MAX;

struct Scratch {
    points: Vec<f64>,
    ids: Vec<u64>,
    keys: Vec<(f64, u64)>,
}

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    /// Child node indices; [`NONE`] for leaves.
    left: u32,
    right: u32,
    /// Split dimension for internal nodes, bounding-box slot for leaves.
    aux: u32,
    /// Left points have `p[aux] <= split`, right points `p[aux] >= split`.
    split: f64,
}

/// Static kd-tree. Internal nodes carry cut planes, leaves carry tight
/// bounding boxes.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    nodes: Vec<Node>,
    /// `lo` and `hi` corners per leaf, `2 * dim` values each.
    boxes: Vec<f64>,
    /// Points in tree order.
    points: Vec<f64>,
    /// Id of each point in tree order.
    ids: Vec<u64>,
}

impl KdTree {
    /// Tree over a flat `n x dim` buffer with row numbers as ids.
    pub fn build(points: &[f64], dim: usize) -> Self {
        let n = points.len() / dim.max(1);
        Self::with_ids(points, dim, (0..n as u64).collect())
    }

    /// Tree with caller-supplied ids, which must be distinct.
    pub fn with_ids(points: &[f64], dim: usize, ids: Vec<u64>) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim));
        let n = points.len() / dim;
        assert!(n < NONE as usize && ids.len() == n);
        let mut tree = KdTree {
            dim,
            nodes: Vec::with_capacity(4 * n / LEAF_SIZE + 1),
            boxes: Vec::with_capacity((2 * n / LEAF_SIZE + 1) * 2 * dim),
            points: points.to_vec(),
            ids,
        };
        if n > 0 {
            let mut scratch = Scratch {
                points: vec![0.0; points.len()],
                ids: vec![0; n],
                keys: Vec::with_capacity(n),
            };
            tree.build_node(&mut scratch, 0, n);
        }
        tree
    }

    fn spread(&self, start: usize, end: usize, step: usize) -> (usize, f64) {
        let dim = self.dim;
        let mut lo = self.points[start * dim..(start + 1) * dim].to_vec();
        let mut hi = lo.clone();
        for row in (start..end).step_by(step) {
            let p = &self.points[row * dim..(row + 1) * dim];
            for c in 0..dim {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        (0..dim)
            .map(|c| (c, hi[c] - lo[c]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    fn build_node(&mut self, scratch: &mut Scratch, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            left: NONE,
            right: NONE,
            aux: 0,
            split: 0.0,
        });
        let mut split_dim = None;
        if end - start > LEAF_SIZE {
            let (c, spread) = self.spread(start, end, ((end - start) / SPLIT_SAMPLE).max(1));
            if spread > 0.0 {
                split_dim = Some(c);
            } else {
                let (c, spread) = self.spread(start, end, 1);
                if spread > 0.0 {
                    split_dim = Some(c);
                }
            }
        }
        let Some(split_dim) = split_dim else {
            self.nodes[id as usize].aux = self.push_box(start, end);
            return id;
        };
        let mid = start + (end - start) / 2;
        let split = self.partition(scratch, start, end, mid, split_dim);
        let left = self.build_node(scratch, start, mid);
        let right = self.build_node(scratch, mid, end);
        let node = &mut self.nodes[id as usize];
        node.left = left;
        node.right = right;
        node.aux = split_dim as u32;
        node.split = split;
        id
    }

    fn push_box(&mut self, start: usize, end: usize) -> u32 {
        let dim = self.dim;
        let slot = (self.boxes.len() / (2 * dim)) as u32;
        let rows = &self.points[start * dim..end * dim];
        let mut lo = rows[..dim].to_vec();
        let mut hi = lo.clone();
        for p in rows.chunks_exact(dim).skip(1) {
            for c in 0..dim {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);
        slot
    }

    /// Reorder rows `start..end` so the `mid - start` smallest by
    /// `(value on split_dim, id)` come first; returns the pivot value.
    fn partition(&mut self, scratch: &mut Scratch, start: usize, end: usize, mid: usize, split_dim: usize) -> f64 {
        let dim = self.dim;
        let order = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        scratch.keys.clear();
        scratch
            .keys
            .extend((start..end).map(|r| (self.points[r * dim + split_dim], self.ids[r])));
        let (_, pivot, _) = scratch.keys.select_nth_unstable_by(mid - start, order);
        let pivot = *pivot;
        let (mut l, mut r) = (start, mid);
        for row in start..end {
            let key = (self.points[row * dim + split_dim], self.ids[row]);
            let dst = if order(&key, &pivot).is_lt() {
                l += 1;
                l - 1
            } else {
                r += 1;
                r - 1
            };
            scratch.points[dst * dim..(dst + 1) * dim].copy_from_slice(&self.points[row * dim..(row + 1) * dim]);
            scratch.ids[dst] = self.ids[row];
        }
        debug_assert_eq!((l, r), (mid, end));
        self.points[start * dim..end * dim].copy_from_slice(&scratch.points[start * dim..end * dim]);
        self.ids[start..end].copy_from_slice(&scratch.ids[start..end]);
        pivot.0
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Squared distance from the query to a leaf box, accumulated like
    /// [`squared_distance`]. Every term is no larger than the matching term
    /// for a point inside, so the result never exceeds that point's distance.
    #[inline]
    fn box_bound(&self, slot: usize, query: &[f64]) -> f64 {
        let dim = self.dim;
        let lo = &self.boxes[slot * 2 * dim..slot * 2 * dim + dim];
        let hi = &self.boxes[slot * 2 * dim + dim..(slot + 1) * 2 * dim];
        let mut s = [0.0; 4];
        for c in 0..dim {
            let q = query[c];
            let d = if q < lo[c] {
                lo[c] - q
            } else if q > hi[c] {
                q - hi[c]
            } else {
                0.0
            };
            s[c % 4] += d * d;
        }
        lane_total(&s)
    }

    /// Merge the nearest points into `out`, which may already hold
    /// candidates from elsewhere.
    pub fn search(&self, query: &[f64], out: &mut TopK) {
        self.search_where(query, out, |_| true);
    }

    /// [`KdTree::search`] restricted to points whose id passes `keep`.
    pub fn search_where(&self, query: &[f64], out: &mut TopK, keep: impl Fn(u64) -> bool) {
        if self.nodes.is_empty() {
            return;
        }
        let mut off = vec![0.0; self.dim];
        self.search_node(0, query, 0.0, &mut off, out, &keep);
    }

    fn search_node(
        &self,
        node: usize,
        query: &[f64],
        rd: f64,
        off: &mut [f64],
        out: &mut TopK,
        keep: &impl Fn(u64) -> bool,
    ) {
        let n = &self.nodes[node];
        if n.left == NONE {
            // ties at the bound may still win on index, so prune only strictly
            if self.box_bound(n.aux as usize, query) > out.bound() {
                return;
            }
            let dim = self.dim;
            for slot in n.start as usize..n.end as usize {
                let bound = out.bound();
                let d = squared_distance_within(query, &self.points[slot * dim..(slot + 1) * dim], bound);
                if d <= bound && keep(self.ids[slot]) {
                    out.offer(d, self.ids[slot]);
                }
            }
            return;
        }
        let c = n.aux as usize;
        let diff = query[c] - n.split;
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search_node(near as usize, query, rd, off, out, keep);
        let old = off[c];
        let far_rd = rd - old * old + diff * diff;
        let bound = out.bound();
        if far_rd <= bound + bound * PRUNE_SLACK {
            off[c] = diff;
            self.search_node(far as usize, query, far_rd, off, out, keep);
            off[c] = old;
        }
    }
}
