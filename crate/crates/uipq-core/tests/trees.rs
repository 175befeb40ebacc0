use num_rational::Rational64;
use proptest::prelude::*;
use uipq_core::samplers::{sample_dyck_tree, RandomSource};
use uipq_core::tree_core::*;
use uipq_core::LabeledTree;

/// Random labeled tree with root label `root`, from a seed.
fn tree_from(seed: u64, n: usize, root: i32) -> LabeledTree {
    let mut rng = RandomSource::new(seed);
    let shape = sample_dyck_tree(n, &mut rng);
    let inc: Vec<i8> = (0..n).map(|_| rng.below(3) as i8 - 1).collect();
    LabeledTree::from_increments(shape, root, &inc).unwrap()
}

proptest! {
    #[test]
    fn contour_roundtrip(seed in any::<u64>(), n in 0usize..60, root in -5i32..10) {
        let t = tree_from(seed, n, root);
        let p = encode_contour(&t);
        prop_assert_eq!(p.c.len(), 2 * n + 1);
        prop_assert_eq!(decode_contour(&p).unwrap(), t.clone());
        let q: ContourPair = p.to_string().parse().unwrap();
        prop_assert_eq!(q, p);
    }

    #[test]
    fn truncation_is_a_projection(seed in any::<u64>(), n in 0usize..60, s in 0usize..8, r in 0usize..8) {
        let t = tree_from(seed, n, 1);
        let a = truncate_tree(&t, s);
        prop_assert!(a.height() <= s);
        prop_assert_eq!(truncate_tree(&a, s), a.clone());
        prop_assert_eq!(truncate_tree(&a, s.min(r)), truncate_tree(&t, s.min(r)));
    }

    #[test]
    fn tree_distance_is_ultrametric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>(), n in 0usize..12) {
        let (x, y, z) = (tree_from(a, n, 1), tree_from(b, n, 1), tree_from(c, n + 1, 1));
        let d = tree_local_distance;
        prop_assert_eq!(d(&x, &x), Rational64::from_integer(0));
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert!(d(&x, &z) <= d(&x, &y).max(d(&y, &z)));
    }

    #[test]
    fn corner_counts_add_up(seed in any::<u64>(), n in 0usize..60) {
        let t = tree_from(seed, n, 3);
        let total: usize = (t.min_label()..=t.labels().iter().copied().max().unwrap()).map(|l| t.corner_count(l)).sum();
        prop_assert_eq!(total, 2 * n);
    }
}

#[test]
fn enumeration_sizes() {
    let catalan = [1usize, 1, 2, 5, 14, 42, 132];
    for n in 0..=6 {
        assert_eq!(all_plane_trees(n).len(), catalan[n]);
        assert_eq!(all_labeled_trees(n, 1, false).len(), catalan[n] * 3usize.pow(n as u32));
    }
    let counts: Vec<usize> = (1..=3).map(|n| all_labeled_trees(n, 1, true).len()).collect();
    assert_eq!(counts, [2, 9, 54]);
}

#[test]
fn spine_trees_assemble_to_their_truncations() {
    let leaf = |l| LabeledTree::single(l);
    let s = SpineTree {
        spine: vec![1, 2, 2, 3],
        left: vec![LabeledTree::star(1, &[1, 2]).unwrap(), leaf(2), LabeledTree::star(2, &[3]).unwrap(), leaf(3)],
        right: vec![leaf(1), LabeledTree::star(2, &[1]).unwrap(), leaf(2), leaf(3)],
        truncation: None,
    };
    let full = assemble_spine(&s, 3).unwrap();
    for d in 0..=3 {
        assert_eq!(truncate_tree(&full, d), assemble_spine(&s, d).unwrap());
    }
    assert!(assemble_spine(&s, 4).is_err());
    let mut bad = s.clone();
    bad.spine[1] = 3;
    assert!(bad.validate().is_err());
}
