use std::collections::HashSet;

use num_rational::Rational64;
use rand::seq::SliceRandom;
use uipq_core::formulas::d_n_closed;
use uipq_core::map_core::*;
use uipq_core::samplers::{sample_mu_n, RandomSource};
use uipq_core::tree_core::all_labeled_trees;
use uipq_core::LabeledTree;

#[test]
fn bijection_on_all_small_trees() {
    for n in 1..=6 {
        let mut codes = HashSet::new();
        let trees = all_labeled_trees(n, 1, true);
        for t in &trees {
            let s = schaeffer_forward(t).unwrap();
            let m = s.quad.map();
            let diag = validate_quadrangulation(m);
            assert!(diag.pass(), "{}", diag.summary());
            assert_eq!((diag.faces, diag.vertices, diag.edges), (n, n + 2, 2 * n));
            assert_eq!(m.root_vertex(), s.v0);
            let dist = bfs_distances(m, s.v0);
            for u in 0..t.len() {
                assert_eq!(dist[s.tree_vertex[u]], Some(t.label(u) as usize));
            }
            assert_eq!(dist[s.v0], Some(0));
            codes.insert(quad_code(&s.quad));
        }
        assert_eq!(codes.len(), trees.len());
        assert_eq!(codes.len(), usize::try_from(d_n_closed(n)).unwrap());
    }
}

#[test]
fn adjacent_vertices_differ_by_one() {
    let mut rng = RandomSource::new(3);
    for _ in 0..50 {
        let s = schaeffer_forward(&sample_mu_n(40, &mut rng)).unwrap();
        let m = s.quad.map();
        let dist = bfs_distances(m, s.v0);
        for d in 0..m.darts() {
            let (a, b) = (dist[m.vertex(d)].unwrap(), dist[m.vertex(m.alpha(d))].unwrap());
            assert_eq!(a.abs_diff(b), 1);
        }
    }
}

fn shuffled(m: &RotationMap, rng: &mut RandomSource) -> RotationMap {
    let mut perm: Vec<usize> = (0..m.darts()).collect();
    perm.shuffle(rng);
    m.relabel(&perm)
}

#[test]
fn codes_ignore_dart_names() {
    let mut rng = RandomSource::new(4);
    for i in 0..1000 {
        let t = sample_mu_n(5 + i % 30, &mut rng);
        let q = schaeffer_forward(&t).unwrap().quad;
        let r = shuffled(q.map(), &mut rng);
        assert_eq!(canonical_code(q.map()), canonical_code(&r));
        let ball = extract_ball(&q, 1 + i % 2);
        let moved = QuadMap::new(r).unwrap();
        assert_eq!(ball.code(), extract_ball(&moved, 1 + i % 2).code());
    }
}

#[test]
fn codes_see_the_root() {
    // moving the root dart to another dart changes the rooted map in general
    let t = LabeledTree::star(1, &[2, 1]).unwrap();
    let q = schaeffer_forward(&t).unwrap().quad;
    let f = q.map().to_fixture();
    let codes: HashSet<CanonicalCode> = (0..f.darts.len())
        .map(|r| canonical_code(&RotationMap::new(f.darts.clone(), f.sigma.clone(), r).unwrap()))
        .collect();
    assert!(codes.len() > 1);
}

#[test]
fn fixtures_roundtrip_through_json() {
    let t = LabeledTree::star(1, &[2, 1, 2]).unwrap();
    let q = schaeffer_forward(&t).unwrap().quad;
    let text = serde_json::to_string(&q.map().to_fixture()).unwrap();
    let back: MapFixture = serde_json::from_str(&text).unwrap();
    assert_eq!(canonical_code(&RotationMap::from_fixture(&back).unwrap()), quad_code(&q));
}

#[test]
fn nested_balls_agree() {
    let mut rng = RandomSource::new(6);
    for _ in 0..200 {
        let q = schaeffer_forward(&sample_mu_n(60, &mut rng)).unwrap().quad;
        for r in 1..=3 {
            let small = extract_ball(&q, r);
            validate_ball(&small).unwrap();
            for wider in r + 1..=r + 2 {
                let big = extract_ball(&q, wider);
                validate_ball(&big).unwrap();
                assert_eq!(extract_ball_of_ball(&big, r).code(), small.code());
            }
            assert_eq!(extract_ball_of_ball(&small, r).code(), small.code());
        }
    }
}

#[test]
fn local_distance_on_random_maps() {
    let mut rng = RandomSource::new(7);
    let maps: Vec<QuadMap> = (0..30).map(|_| schaeffer_forward(&sample_mu_n(25, &mut rng)).unwrap().quad).collect();
    for a in &maps {
        assert_eq!(map_local_distance(a, a), Rational64::from_integer(0));
        for b in &maps {
            let d = map_local_distance(a, b);
            assert_eq!(d, map_local_distance(b, a));
            if canonical_code(a.map()) != canonical_code(b.map()) {
                assert!(d > Rational64::from_integer(0) && d <= Rational64::from_integer(1));
                let k = *d.recip().numer() as usize - 1;
                if k >= 1 {
                    assert_eq!(extract_ball(a, k).code(), extract_ball(b, k).code());
                }
                assert_ne!(extract_ball(a, k + 1).code(), extract_ball(b, k + 1).code());
            }
        }
    }
}
