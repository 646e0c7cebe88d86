//! Arena-backed AVL tree with subtree count and sum aggregates.
//!
//! Keys are raw fixed-point values; inserting an existing key folds the new
//! multiplicity and value into that node, so the tree size is bounded by the
//! number of distinct keys. Every public operation reports the number of
//! nodes it touched through an `ops` accumulator, which the engine exposes as
//! its index-operation count.

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    key: i64,
    count: u64,
    sum: i128,
    sub_count: u64,
    sub_sum: i128,
    height: i8,
    left: u32,
    right: u32,
}

/// Count and value sum over a key range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RangeAgg {
    pub count: u64,
    pub sum: i128,
}

#[derive(Debug, Clone)]
pub struct AggTree {
    nodes: Vec<Node>,
    root: u32,
}

impl Default for AggTree {
    fn default() -> Self {
        Self::new()
    }
}

impl AggTree {
    pub fn new() -> Self {
        AggTree { nodes: Vec::new(), root: NIL }
    }

    /// Number of distinct keys.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total(&self) -> RangeAgg {
        if self.root == NIL {
            RangeAgg::default()
        } else {
            let n = &self.nodes[self.root as usize];
            RangeAgg { count: n.sub_count, sum: n.sub_sum }
        }
    }

    pub fn insert(&mut self, key: i64, count: u64, value: i128, ops: &mut u64) {
        self.root = self.insert_at(self.root, key, count, value, ops);
    }

    /// Aggregate over keys strictly below `bound`.
    pub fn below(&self, bound: i64, ops: &mut u64) -> RangeAgg {
        let mut acc = RangeAgg::default();
        let mut cur = self.root;
        while cur != NIL {
            *ops += 1;
            let n = &self.nodes[cur as usize];
            if n.key < bound {
                let l = self.agg(n.left);
                acc.count += l.count + n.count;
                acc.sum += l.sum + n.sum;
                cur = n.right;
            } else {
                cur = n.left;
            }
        }
        acc
    }

    /// Aggregate over keys strictly above `bound`.
    pub fn above(&self, bound: i64, ops: &mut u64) -> RangeAgg {
        let mut acc = RangeAgg::default();
        let mut cur = self.root;
        while cur != NIL {
            *ops += 1;
            let n = &self.nodes[cur as usize];
            if n.key > bound {
                let r = self.agg(n.right);
                acc.count += r.count + n.count;
                acc.sum += r.sum + n.sum;
                cur = n.left;
            } else {
                cur = n.right;
            }
        }
        acc
    }

    pub fn height(&self) -> i8 {
        self.h(self.root)
    }

    fn agg(&self, idx: u32) -> RangeAgg {
        if idx == NIL {
            RangeAgg::default()
        } else {
            let n = &self.nodes[idx as usize];
            RangeAgg { count: n.sub_count, sum: n.sub_sum }
        }
    }

    fn h(&self, idx: u32) -> i8 {
        if idx == NIL {
            0
        } else {
            self.nodes[idx as usize].height
        }
    }

    fn pull(&mut self, idx: u32) {
        let (l, r) = {
            let n = &self.nodes[idx as usize];
            (n.left, n.right)
        };
        let (la, ra) = (self.agg(l), self.agg(r));
        let height = 1 + self.h(l).max(self.h(r));
        let n = &mut self.nodes[idx as usize];
        n.sub_count = la.count + ra.count + n.count;
        n.sub_sum = la.sum + ra.sum + n.sum;
        n.height = height;
    }

    fn rotate_right(&mut self, idx: u32) -> u32 {
        let l = self.nodes[idx as usize].left;
        self.nodes[idx as usize].left = self.nodes[l as usize].right;
        self.nodes[l as usize].right = idx;
        self.pull(idx);
        self.pull(l);
        l
    }

    fn rotate_left(&mut self, idx: u32) -> u32 {
        let r = self.nodes[idx as usize].right;
        self.nodes[idx as usize].right = self.nodes[r as usize].left;
        self.nodes[r as usize].left = idx;
        self.pull(idx);
        self.pull(r);
        r
    }

    fn rebalance(&mut self, idx: u32) -> u32 {
        self.pull(idx);
        let (l, r) = {
            let n = &self.nodes[idx as usize];
            (n.left, n.right)
        };
        let balance = self.h(l) - self.h(r);
        if balance > 1 {
            let ll = self.nodes[l as usize].left;
            let lr = self.nodes[l as usize].right;
            if self.h(lr) > self.h(ll) {
                let nl = self.rotate_left(l);
                self.nodes[idx as usize].left = nl;
            }
            return self.rotate_right(idx);
        }
        if balance < -1 {
            let rl = self.nodes[r as usize].left;
            let rr = self.nodes[r as usize].right;
            if self.h(rl) > self.h(rr) {
                let nr = self.rotate_right(r);
                self.nodes[idx as usize].right = nr;
            }
            return self.rotate_left(idx);
        }
        idx
    }

    fn insert_at(&mut self, idx: u32, key: i64, count: u64, value: i128, ops: &mut u64) -> u32 {
        *ops += 1;
        if idx == NIL {
            let id = u32::try_from(self.nodes.len()).expect("tree exceeds u32 nodes");
            self.nodes.push(Node {
                key,
                count,
                sum: value,
                sub_count: count,
                sub_sum: value,
                height: 1,
                left: NIL,
                right: NIL,
            });
            return id;
        }
        let node_key = self.nodes[idx as usize].key;
        if key < node_key {
            let l = self.nodes[idx as usize].left;
            let nl = self.insert_at(l, key, count, value, ops);
            self.nodes[idx as usize].left = nl;
        } else if key > node_key {
            let r = self.nodes[idx as usize].right;
            let nr = self.insert_at(r, key, count, value, ops);
            self.nodes[idx as usize].right = nr;
        } else {
            let n = &mut self.nodes[idx as usize];
            n.count += count;
            n.sum += value;
        }
        self.rebalance(idx)
    }

    #[cfg(test)]
    fn check(&self, idx: u32) -> (i8, RangeAgg) {
        if idx == NIL {
            return (0, RangeAgg::default());
        }
        let n = &self.nodes[idx as usize];
        let (lh, la) = self.check(n.left);
        let (rh, ra) = self.check(n.right);
        assert!((lh - rh).abs() <= 1, "unbalanced at key {}", n.key);
        if n.left != NIL {
            assert!(self.nodes[n.left as usize].key < n.key);
        }
        if n.right != NIL {
            assert!(self.nodes[n.right as usize].key > n.key);
        }
        let agg = RangeAgg { count: la.count + ra.count + n.count, sum: la.sum + ra.sum + n.sum };
        assert_eq!(agg, RangeAgg { count: n.sub_count, sum: n.sub_sum });
        assert_eq!(n.height, 1 + lh.max(rh));
        (n.height, agg)
    }
}
