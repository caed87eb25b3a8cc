use mdtree_core::linalg::is_loewner_leq;
use mdtree_core::optimizer::{solve, SolverConfig};
use mdtree_core::tree::{pad_to_perfect_binary, Constraint, GeneralTreeSpec};
use mdtree_core::{SymMatrix, Tolerance};
use proptest::prelude::*;

/// Random laminar family on `1..=n`: recursive splits of contiguous ranges,
/// each range kept with probability `keep`, then relabeled by `perm`.
fn laminar(n: usize, cuts: &[usize], keeps: &[bool], perm: &[usize]) -> Vec<Vec<usize>> {
    fn go(lo: usize, hi: usize, cuts: &[usize], keeps: &[bool], idx: &mut usize, out: &mut Vec<(usize, usize)>) {
        let k = *idx;
        *idx += 1;
        if keeps[k % keeps.len()] {
            out.push((lo, hi));
        }
        if hi > lo {
            let mid = lo + cuts[k % cuts.len()] % (hi - lo);
            go(lo, mid, cuts, keeps, idx, out);
            go(mid + 1, hi, cuts, keeps, idx, out);
        }
    }
    let mut ranges = Vec::new();
    go(1, n, cuts, keeps, &mut 0, &mut ranges);
    ranges
        .into_iter()
        .map(|(lo, hi)| {
            let mut s: Vec<usize> = (lo..=hi).map(|j| perm[j - 1]).collect();
            s.sort_unstable();
            s
        })
        .collect()
}

fn permutation(n: usize, keys: &[u32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..=n).collect();
    idx.sort_by_key(|&j| (keys[(j - 1) % keys.len()], j));
    idx
}

proptest! {
    #[test]
    fn pad_round_trips(
        n in 1usize..9,
        cuts in proptest::collection::vec(0usize..8, 16),
        keeps in proptest::collection::vec(any::<bool>(), 16),
        keys in proptest::collection::vec(any::<u32>(), 8),
        ds in proptest::collection::vec(0.05f64..0.95, 16),
    ) {
        let perm = permutation(n, &keys);
        let sets = laminar(n, &cuts, &keeps, &perm);
        let constraints: Vec<Constraint> =
            sets.iter().enumerate().map(|(c, s)| Constraint { subset: s.clone(), d: SymMatrix::scalar(ds[c % ds.len()]) }).collect();
        let spec = GeneralTreeSpec { descriptions: n, sigma_x: SymMatrix::scalar(1.0), constraints: constraints.clone() };
        let p = pad_to_perfect_binary(&spec).unwrap();
        prop_assert!(p.instance.descriptions() >= n);
        let back = p.strip_dummies();
        prop_assert_eq!(back.len(), constraints.len());
        for (c, con) in back {
            prop_assert_eq!(&con, &constraints[c]);
        }
        // Relabeling is a bijection onto the leaves.
        let mut leaves = p.relabel.clone();
        leaves.sort_unstable();
        prop_assert_eq!(leaves, (1..=p.instance.descriptions()).collect::<Vec<_>>());
        // Dummy nodes carry Σ_X.
        for (node, o) in p.origin.iter() {
            if o.is_none() {
                prop_assert_eq!(p.instance.d(node), &spec.sigma_x);
            }
        }
    }

    #[test]
    fn padded_instance_is_valid_and_solvable(ds in proptest::collection::vec(0.05f64..0.95, 3)) {
        let tol = Tolerance::default();
        let spec = GeneralTreeSpec {
            descriptions: 3,
            sigma_x: SymMatrix::scalar(1.0),
            constraints: vec![
                Constraint { subset: vec![1, 2, 3], d: SymMatrix::scalar(ds[0]) },
                Constraint { subset: vec![1, 2], d: SymMatrix::scalar(ds[1]) },
                Constraint { subset: vec![3], d: SymMatrix::scalar(ds[2]) },
            ],
        };
        let p = pad_to_perfect_binary(&spec).unwrap();
        prop_assert!(p.instance.validate(&tol).is_ok());
        for (_, d) in p.instance.distortions.iter() {
            prop_assert!(is_loewner_leq(d, &spec.sigma_x, &tol));
        }
        let v = solve(&p.instance, &SolverConfig::default(), &tol).unwrap().value_nats;
        prop_assert!(v >= -1e-12);
    }
}

#[test]
fn overlapping_subsets_are_not_a_tree() {
    let spec = GeneralTreeSpec {
        descriptions: 3,
        sigma_x: SymMatrix::scalar(1.0),
        constraints: vec![
            Constraint { subset: vec![1, 2], d: SymMatrix::scalar(0.5) },
            Constraint { subset: vec![2, 3], d: SymMatrix::scalar(0.5) },
        ],
    };
    assert_eq!(pad_to_perfect_binary(&spec).unwrap_err().kind(), "NotATree");
}
