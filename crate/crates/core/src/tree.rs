//! Perfect binary trees of description subsets and problem instances.
//!
//! A tree of depth `L` has `M = 2^(L-1)` leaves. Node `(k, i)` with
//! `1 <= k <= L`, `1 <= i <= 2^(k-1)` owns the contiguous description range
//! `(2^(L-k) (i-1), 2^(L-k) i]`. Per-node data is stored level-major at
//! offset `2^(k-1) - 1 + (i-1)`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::Error;
use crate::linalg::{is_loewner_leq, is_loewner_lt, SymMatrix, Tolerance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Node {
    pub k: usize,
    pub i: usize,
}

impl Node {
    pub const ROOT: Node = Node { k: 1, i: 1 };

    pub fn new(k: usize, i: usize) -> Self {
        debug_assert!(k >= 1 && i >= 1 && i <= 1 << (k - 1));
        Node { k, i }
    }

    pub fn offset(self) -> usize {
        (1 << (self.k - 1)) - 1 + (self.i - 1)
    }

    pub fn parent(self) -> Option<Node> {
        (self.k > 1).then(|| Node { k: self.k - 1, i: self.i.div_ceil(2) })
    }

    pub fn odd_child(self) -> Node {
        Node { k: self.k + 1, i: 2 * self.i - 1 }
    }

    pub fn even_child(self) -> Node {
        Node { k: self.k + 1, i: 2 * self.i }
    }

    pub fn is_odd(self) -> bool {
        self.i % 2 == 1
    }

    pub fn is_root(self) -> bool {
        self.k == 1
    }

    /// 1-based inclusive description range `(lo, hi)` in a tree of depth `levels`.
    pub fn subset(self, levels: usize) -> (usize, usize) {
        let w = 1 << (levels - self.k);
        (w * (self.i - 1) + 1, w * self.i)
    }

    pub fn contains_leaf(self, levels: usize, j: usize) -> bool {
        let (lo, hi) = self.subset(levels);
        lo <= j && j <= hi
    }

    /// Ancestors from the root down to and including `self`.
    pub fn path(self) -> Vec<Node> {
        let mut v = Vec::with_capacity(self.k);
        let mut n = Some(self);
        while let Some(x) = n {
            v.push(x);
            n = x.parent();
        }
        v.reverse();
        v
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k, self.i)
    }
}

/// Lowest common ancestor of leaves `a` and `b` (1-based) at depth `levels`.
pub fn leaf_lca(levels: usize, a: usize, b: usize) -> Node {
    let mut x = Node::new(levels, a);
    let mut y = Node::new(levels, b);
    while x != y {
        x = x.parent().expect("leaves share the root");
        y = y.parent().expect("leaves share the root");
    }
    x
}

/// Nodes of levels `1..=levels` in storage order.
pub fn nodes(levels: usize) -> impl Iterator<Item = Node> {
    (1..=levels).flat_map(|k| (1..=1usize << (k - 1)).map(move |i| Node { k, i }))
}

/// Dense per-node storage over levels `1..=levels`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeMap<T> {
    levels: usize,
    values: Vec<T>,
}

/// Serialized as a map keyed `"k,i"`.
#[cfg(feature = "serde")]
impl<T: serde::Serialize> serde::Serialize for NodeMap<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.iter().map(|(n, v)| (alloc::format!("{},{}", n.k, n.i), v)))
    }
}

impl<T> NodeMap<T> {
    pub fn from_fn(levels: usize, mut f: impl FnMut(Node) -> T) -> Self {
        NodeMap { levels, values: nodes(levels).map(&mut f).collect() }
    }

    pub fn from_vec(levels: usize, values: Vec<T>) -> Result<Self, Error> {
        let want = (1 << levels) - 1;
        if values.len() != want {
            return Err(Error::DimensionMismatch { expected: want, found: values.len() });
        }
        Ok(NodeMap { levels, values })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, n: Node) -> &T {
        &self.values[n.offset()]
    }

    pub fn get_mut(&mut self, n: Node) -> &mut T {
        &mut self.values[n.offset()]
    }

    pub fn set(&mut self, n: Node, v: T) {
        self.values[n.offset()] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Node, &T)> {
        nodes(self.levels).zip(self.values.iter())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn map<U>(&self, mut f: impl FnMut(Node, &T) -> U) -> NodeMap<U> {
        NodeMap { levels: self.levels, values: self.iter().map(|(n, v)| f(n, v)).collect() }
    }
}

/// Source covariance and one distortion constraint per tree node.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub m: usize,
    pub levels: usize,
    pub sigma_x: SymMatrix,
    pub distortions: NodeMap<SymMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum ViolationKind {
    SourceNotPositiveDefinite,
    DistortionNotPositiveDefinite,
    DistortionExceedsSource,
    DimensionMismatch,
    NotFinite,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Violation {
    pub node: Option<Node>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "{:?} at {}", self.kind, n),
            None => write!(f, "{:?} at source", self.kind),
        }
    }
}

impl ProblemInstance {
    pub fn new(sigma_x: SymMatrix, levels: usize, distortions: NodeMap<SymMatrix>) -> Result<Self, Error> {
        if levels < 2 {
            return Err(Error::InvalidDepth(levels));
        }
        if distortions.levels() != levels {
            return Err(Error::DimensionMismatch { expected: levels, found: distortions.levels() });
        }
        let m = sigma_x.dim();
        for (_, d) in distortions.iter() {
            if d.dim() != m {
                return Err(Error::DimensionMismatch { expected: m, found: d.dim() });
            }
        }
        Ok(ProblemInstance { m, levels, sigma_x, distortions })
    }

    pub fn descriptions(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn d(&self, n: Node) -> &SymMatrix {
        self.distortions.get(n)
    }

    /// Internal nodes (levels `1..L`) in storage order.
    pub fn internal_nodes(&self) -> impl Iterator<Item = Node> {
        nodes(self.levels - 1)
    }

    pub fn leaves(&self) -> impl Iterator<Item = Node> {
        let l = self.levels;
        (1..=1usize << (l - 1)).map(move |i| Node { k: l, i })
    }

    /// All constraint violations; empty means the instance is usable.
    pub fn violations(&self, tol: &Tolerance) -> Vec<Violation> {
        let mut out = Vec::new();
        let m = self.m;
        if self.sigma_x.dim() != m || m == 0 {
            out.push(Violation { node: None, kind: ViolationKind::DimensionMismatch });
            return out;
        }
        if !self.sigma_x.is_finite() {
            out.push(Violation { node: None, kind: ViolationKind::NotFinite });
            return out;
        }
        if !(self.sigma_x.min_eigenvalue() > tol.psd_slack(&self.sigma_x)) {
            out.push(Violation { node: None, kind: ViolationKind::SourceNotPositiveDefinite });
        }
        if self.distortions.levels() != self.levels {
            out.push(Violation { node: None, kind: ViolationKind::DimensionMismatch });
            return out;
        }
        for (n, d) in self.distortions.iter() {
            if d.dim() != m {
                out.push(Violation { node: Some(n), kind: ViolationKind::DimensionMismatch });
                continue;
            }
            if !d.is_finite() {
                out.push(Violation { node: Some(n), kind: ViolationKind::NotFinite });
                continue;
            }
            if !(d.min_eigenvalue() > tol.psd_slack(d)) {
                out.push(Violation { node: Some(n), kind: ViolationKind::DistortionNotPositiveDefinite });
            }
            if !is_loewner_leq(d, &self.sigma_x, tol) {
                out.push(Violation { node: Some(n), kind: ViolationKind::DistortionExceedsSource });
            }
        }
        out
    }

    pub fn validate(&self, tol: &Tolerance) -> Result<(), Error> {
        if self.levels < 2 {
            return Err(Error::InvalidDepth(self.levels));
        }
        let v = self.violations(tol);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInstance(v))
        }
    }

    /// First node whose distortion touches the source covariance.
    pub fn first_boundary_node(&self, tol: &Tolerance) -> Option<Node> {
        self.distortions
            .iter()
            .find(|(_, d)| !is_loewner_lt(d, &self.sigma_x, tol))
            .map(|(n, _)| n)
    }

    pub fn is_strictly_interior(&self, tol: &Tolerance) -> bool {
        self.first_boundary_node(tol).is_none()
    }

    /// Every distortion replaced by `D - eps I`.
    pub fn epsilon_shrink(&self, eps: f64, tol: &Tolerance) -> Result<ProblemInstance, Error> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::NegativeEpsilon);
        }
        if eps == 0.0 {
            return Ok(self.clone());
        }
        let shift = SymMatrix::identity(self.m).scale(eps);
        let mut out = self.clone();
        for (n, d) in self.distortions.iter() {
            let nd = d - &shift;
            if !(nd.min_eigenvalue() > tol.psd_slack(&nd)) {
                return Err(Error::EpsTooLarge { node: n });
            }
            out.distortions.set(n, nd);
        }
        Ok(out)
    }
}

/// Constraint on reconstructing from a subset of descriptions (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub subset: Vec<usize>,
    pub d: SymMatrix,
}

/// Laminar family of constraints over `descriptions` descriptions.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralTreeSpec {
    pub descriptions: usize,
    pub sigma_x: SymMatrix,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaddedInstance {
    pub instance: ProblemInstance,
    /// `relabel[j - 1]` is the padded leaf position of description `j`;
    /// entries past the original count belong to dummy descriptions.
    pub relabel: Vec<usize>,
    pub original_descriptions: usize,
    /// Index of the originating constraint, `None` for dummy nodes.
    pub origin: NodeMap<Option<usize>>,
}

enum BNode {
    Leaf { desc: usize, origin: Option<usize> },
    Internal { origin: Option<usize>, left: Box<BNode>, right: Box<BNode> },
}

impl BNode {
    fn height(&self) -> usize {
        match self {
            BNode::Leaf { .. } => 0,
            BNode::Internal { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

fn intersects(a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|x| b.binary_search(x).is_ok())
}

fn binarize(family: &[(Vec<usize>, Option<usize>)], children: &[Vec<usize>], idx: usize) -> BNode {
    let (set, origin) = &family[idx];
    if set.len() == 1 {
        return BNode::Leaf { desc: set[0], origin: *origin };
    }
    fn group(family: &[(Vec<usize>, Option<usize>)], children: &[Vec<usize>], kids: &[usize]) -> BNode {
        if kids.len() == 1 {
            return binarize(family, children, kids[0]);
        }
        let mid = kids.len().div_ceil(2);
        BNode::Internal {
            origin: None,
            left: Box::new(group(family, children, &kids[..mid])),
            right: Box::new(group(family, children, &kids[mid..])),
        }
    }
    let kids = &children[idx];
    let mid = kids.len().div_ceil(2);
    BNode::Internal {
        origin: *origin,
        left: Box::new(group(family, children, &kids[..mid])),
        right: Box::new(group(family, children, &kids[mid..])),
    }
}

struct Placer {
    levels: usize,
    next_dummy: usize,
    relabel: Vec<usize>,
    origin: NodeMap<Option<usize>>,
}

impl Placer {
    fn place(&mut self, b: &BNode, n: Node) {
        match b {
            BNode::Internal { origin, left, right } => {
                self.origin.set(n, *origin);
                self.place(left, n.odd_child());
                self.place(right, n.even_child());
            }
            BNode::Leaf { desc, origin } => {
                if n.k == self.levels {
                    self.origin.set(n, *origin);
                    self.relabel[desc - 1] = n.i;
                } else {
                    self.origin.set(n, None);
                    self.place(b, n.odd_child());
                    self.dummy(n.even_child());
                }
            }
        }
    }

    fn dummy(&mut self, n: Node) {
        self.origin.set(n, None);
        if n.k == self.levels {
            self.relabel[self.next_dummy - 1] = n.i;
            self.next_dummy += 1;
        } else {
            self.dummy(n.odd_child());
            self.dummy(n.even_child());
        }
    }
}

/// Embeds a laminar family into a perfect binary tree. Missing root and
/// singleton nodes, binarization nodes and dummy descriptions all carry
/// `D = sigma_x`, which leaves the optimal sum rate unchanged.
pub fn pad_to_perfect_binary(spec: &GeneralTreeSpec) -> Result<PaddedInstance, Error> {
    let big_m = spec.descriptions;
    let m = spec.sigma_x.dim();
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(spec.constraints.len());
    for (c, con) in spec.constraints.iter().enumerate() {
        if con.d.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, found: con.d.dim() });
        }
        let mut s = con.subset.clone();
        s.sort_unstable();
        let before = s.len();
        s.dedup();
        if s.is_empty() || s.len() != before || s[0] == 0 || s[s.len() - 1] > big_m {
            return Err(Error::InvalidSubset { constraint: c });
        }
        sets.push(s);
    }
    if big_m == 0 {
        return Err(Error::InvalidSubset { constraint: 0 });
    }
    for a in 0..sets.len() {
        for b in (a + 1)..sets.len() {
            if sets[a] == sets[b] {
                return Err(Error::DuplicateSubset { first: a, second: b });
            }
            if intersects(&sets[a], &sets[b]) && !is_subset(&sets[a], &sets[b]) && !is_subset(&sets[b], &sets[a]) {
                return Err(Error::NotATree { first: a, second: b });
            }
        }
    }

    let mut family: Vec<(Vec<usize>, Option<usize>)> =
        sets.iter().cloned().enumerate().map(|(c, s)| (s, Some(c))).collect();
    let full: Vec<usize> = (1..=big_m).collect();
    if !family.iter().any(|(s, _)| *s == full) {
        family.push((full, None));
    }
    for j in 1..=big_m {
        if !family.iter().any(|(s, _)| s.len() == 1 && s[0] == j) {
            family.push((vec![j], None));
        }
    }

    // Parent of each set is the smallest strict superset.
    let count = family.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); count];
    let mut root = 0;
    for a in 0..count {
        let mut parent: Option<usize> = None;
        for b in 0..count {
            if a != b && family[a].0.len() < family[b].0.len() && is_subset(&family[a].0, &family[b].0) {
                match parent {
                    Some(p) if family[p].0.len() <= family[b].0.len() => {}
                    _ => parent = Some(b),
                }
            }
        }
        match parent {
            Some(p) => children[p].push(a),
            None => root = a,
        }
    }
    for kids in children.iter_mut() {
        kids.sort_by_key(|&c| family[c].0[0]);
    }

    let tree = binarize(&family, &children, root);
    let levels = (tree.height() + 1).max(2);
    let total = 1 << (levels - 1);
    let mut placer = Placer {
        levels,
        next_dummy: big_m + 1,
        relabel: vec![0; total],
        origin: NodeMap::from_fn(levels, |_| None),
    };
    placer.place(&tree, Node::ROOT);

    let distortions = placer.origin.map(|_, o| match o {
        Some(c) => spec.constraints[*c].d.clone(),
        None => spec.sigma_x.clone(),
    });
    let instance = ProblemInstance::new(spec.sigma_x.clone(), levels, distortions)?;
    Ok(PaddedInstance { instance, relabel: placer.relabel, original_descriptions: big_m, origin: placer.origin })
}

impl PaddedInstance {
    /// Original constraints recovered from the non-dummy nodes, ordered by
    /// constraint index, subsets sorted.
    pub fn strip_dummies(&self) -> Vec<(usize, Constraint)> {
        let levels = self.instance.levels;
        let mut inverse = vec![0usize; self.relabel.len() + 1];
        for (j, &pos) in self.relabel.iter().enumerate() {
            inverse[pos] = j + 1;
        }
        let mut out: Vec<(usize, Constraint)> = self
            .origin
            .iter()
            .filter_map(|(n, o)| {
                o.map(|c| {
                    let (lo, hi) = n.subset(levels);
                    let mut subset: Vec<usize> =
                        (lo..=hi).map(|p| inverse[p]).filter(|&j| j <= self.original_descriptions).collect();
                    subset.sort_unstable();
                    (c, Constraint { subset, d: self.instance.d(n).clone() })
                })
            })
            .collect();
        out.sort_by_key(|(c, _)| *c);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level(sigma: f64, d: [f64; 3]) -> ProblemInstance {
        let map = NodeMap::from_vec(2, d.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap();
        ProblemInstance::new(SymMatrix::scalar(sigma), 2, map).unwrap()
    }

    #[test]
    fn node_indexing() {
        assert_eq!(Node::new(1, 1).offset(), 0);
        assert_eq!(Node::new(3, 4).offset(), 6);
        assert_eq!(Node::new(3, 3).parent(), Some(Node::new(2, 2)));
        assert_eq!(Node::new(2, 2).subset(3), (3, 4));
        assert_eq!(Node::new(1, 1).subset(3), (1, 4));
        assert_eq!(leaf_lca(3, 1, 2), Node::new(2, 1));
        assert_eq!(leaf_lca(3, 2, 3), Node::ROOT);
        assert_eq!(leaf_lca(3, 4, 4), Node::new(3, 4));
    }

    #[test]
    fn validate_examples() {
        let t = Tolerance::default();
        assert!(two_level(1.0, [0.25, 0.5, 0.5]).validate(&t).is_ok());
        let bad = two_level(1.0, [0.25, 1.5, 0.5]);
        match bad.validate(&t) {
            Err(Error::InvalidInstance(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].node, Some(Node::new(2, 1)));
                assert_eq!(v[0].kind, ViolationKind::DistortionExceedsSource);
            }
            other => panic!("unexpected {other:?}"),
        }
        let z = two_level(1.0, [0.0, 0.5, 0.5]);
        assert!(z.validate(&t).is_err());
    }

    #[test]
    fn interior_and_shrink() {
        let t = Tolerance::default();
        let b = two_level(1.0, [0.25, 1.0, 1.0]);
        assert!(!b.is_strictly_interior(&t));
        assert_eq!(b.first_boundary_node(&t), Some(Node::new(2, 1)));
        let s = b.epsilon_shrink(1e-3, &t).unwrap();
        assert!(s.is_strictly_interior(&t));
        assert!((s.d(Node::ROOT).get(0, 0) - 0.249).abs() < 1e-15);
        assert_eq!(b.epsilon_shrink(0.0, &t).unwrap(), b);
        let small = two_level(1.0, [0.05, 0.5, 0.5]);
        assert!(matches!(small.epsilon_shrink(0.1, &t), Err(Error::EpsTooLarge { node }) if node == Node::ROOT));
        assert!(matches!(b.epsilon_shrink(-1.0, &t), Err(Error::NegativeEpsilon)));
    }

    fn spec(big_m: usize, subsets: &[&[usize]]) -> GeneralTreeSpec {
        GeneralTreeSpec {
            descriptions: big_m,
            sigma_x: SymMatrix::scalar(1.0),
            constraints: subsets
                .iter()
                .enumerate()
                .map(|(c, s)| Constraint { subset: s.to_vec(), d: SymMatrix::scalar(0.1 + 0.01 * c as f64) })
                .collect(),
        }
    }

    #[test]
    fn pad_three_descriptions() {
        let s = spec(3, &[&[1], &[2], &[3], &[1, 2], &[1, 2, 3]]);
        let p = pad_to_perfect_binary(&s).unwrap();
        assert_eq!(p.instance.levels, 3);
        assert_eq!(p.relabel, vec![1, 2, 3, 4]);
        assert_eq!(*p.origin.get(Node::new(2, 2)), None);
        assert_eq!(*p.origin.get(Node::new(3, 4)), None);
        assert_eq!(p.instance.d(Node::new(2, 2)), &s.sigma_x);
        assert_eq!(p.instance.d(Node::new(3, 4)), &s.sigma_x);
        assert_eq!(*p.origin.get(Node::new(3, 3)), Some(2));
        let back = p.strip_dummies();
        assert_eq!(back.len(), 5);
        for (c, con) in back {
            assert_eq!(con, s.constraints[c]);
        }
    }

    #[test]
    fn pad_inserts_missing_singletons() {
        let s = spec(2, &[&[1, 2]]);
        let p = pad_to_perfect_binary(&s).unwrap();
        assert_eq!(p.instance.levels, 2);
        assert_eq!(*p.origin.get(Node::ROOT), Some(0));
        assert_eq!(p.instance.d(Node::new(2, 1)), &s.sigma_x);
        assert_eq!(p.instance.d(Node::new(2, 2)), &s.sigma_x);
    }

    #[test]
    fn pad_rejects_crossing_subsets() {
        let s = spec(3, &[&[1, 2], &[2, 3]]);
        assert!(matches!(pad_to_perfect_binary(&s), Err(Error::NotATree { first: 0, second: 1 })));
        let s = spec(2, &[&[1, 3]]);
        assert!(matches!(pad_to_perfect_binary(&s), Err(Error::InvalidSubset { constraint: 0 })));
    }

    #[test]
    fn pad_relabels_non_contiguous_groups() {
        let s = spec(4, &[&[1, 3], &[2, 4], &[3]]);
        let p = pad_to_perfect_binary(&s).unwrap();
        assert_eq!(p.instance.levels, 3);
        let back = p.strip_dummies();
        for (c, con) in back {
            assert_eq!(con, s.constraints[c]);
        }
    }

    #[test]
    fn pad_single_description() {
        let s = spec(1, &[&[1]]);
        let p = pad_to_perfect_binary(&s).unwrap();
        assert_eq!(p.instance.levels, 2);
        assert_eq!(*p.origin.get(Node::new(2, 1)), Some(0));
        assert_eq!(p.relabel, vec![1, 2]);
    }
}
