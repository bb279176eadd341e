use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signbridge::anchors::{AnchorVocab, EmbeddingInit};
use signbridge::ccm::{
    anchor_query, collect_batch_anchors, combined_loss, init_ccm, sample_triplets, triplet_loss, BatchAnchorSet,
    CcmConfig, HingePlacement, QueryTensor, QueryVars, Triplet, ANCHOR_TABLE,
};
use signbridge::params::ParamStore;
use signbridge::tensor::{Array, GradCheck, Tape, Var};

const MU: f64 = 0.4;

fn vocab(words: &[&str]) -> AnchorVocab {
    AnchorVocab::from_entries(words.iter().map(|w| (w.to_string(), 11, 1)).collect(), BTreeSet::new()).unwrap()
}

/// Unit vector at cosine `c` to the x axis.
fn at_cos(c: f64) -> [f64; 2] {
    [c, (1.0 - c * c).sqrt()]
}

/// Query vars where anchor `m` is the x axis and `h[n][m]` is given.
fn query(tape: &Tape, h: &[Vec<[f64; 2]>]) -> QueryVars {
    let m = h[0].len();
    let q = tape.leaf(Array::from_fn(&[m, 2], |i| if i % 2 == 0 { 1.0 } else { 0.0 }), true);
    let h = h
        .iter()
        .map(|rows| tape.leaf(Array::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()), true))
        .collect();
    QueryVars { q, h }
}

fn loss_of(h: &[Vec<[f64; 2]>], triplets: &[Triplet], hinge: HingePlacement) -> f64 {
    let tape = Tape::new();
    let q = query(&tape, h);
    tape.item(triplet_loss(&tape, Some(&q), triplets, MU, hinge).unwrap().loss)
}

fn toy_ccm() -> CcmConfig {
    CcmConfig {
        heads: 2,
        hidden: 3,
        d_ca: 4,
        ..CcmConfig::default()
    }
}

fn toy_store(cfg: &CcmConfig, anchors: usize, d_visual: usize) -> ParamStore {
    let mut g = ChaCha8Rng::seed_from_u64(11);
    let init = EmbeddingInit {
        matrix: Array::from_fn(&[anchors, cfg.d_ca], |_| g.random_range(-1.0..1.0)),
        d_ca: cfg.d_ca,
        oov_mask: vec![false; anchors],
    };
    let mut store = ParamStore::new();
    init_ccm(&mut store, cfg, d_visual, &init, 4).unwrap();
    store
}

fn feats(len: usize, d: usize, seed: u64) -> Array {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(&[len, d], |_| g.random_range(-1.0..1.0))
}

#[test]
fn batch_anchor_collection() {
    let v = vocab(&["snow", "rain", "falls"]);
    let b = collect_batch_anchors(&["snow falls", "rain falls"], &v);
    assert_eq!(b.len(), 3);
    let by_word = |w: &str| &b.membership[b.anchors.iter().position(|&a| a == v.id(w).unwrap()).unwrap()];
    assert_eq!(by_word("snow"), &BTreeSet::from([0]));
    assert_eq!(by_word("rain"), &BTreeSet::from([1]));
    assert_eq!(by_word("falls"), &BTreeSet::from([0, 1]));
    assert!(collect_batch_anchors(&["nothing here"], &v).is_empty());
    let twice = collect_batch_anchors(&["Snow, snow and snow."], &v);
    assert_eq!(twice.membership, [BTreeSet::from([0])]);
}

#[test]
fn equal_similarities_give_the_margin() {
    let h = vec![vec![at_cos(0.3)], vec![at_cos(0.3)]];
    let t = [Triplet { m: 0, pos: 0, neg: 1 }];
    for hinge in [HingePlacement::OverMean, HingePlacement::PerTriplet] {
        assert!((loss_of(&h, &t, hinge) - MU).abs() < 1e-12);
    }
}

#[test]
fn separated_triplet_gives_zero() {
    let h = vec![vec![at_cos(1.0)], vec![at_cos(-1.0)]];
    let t = [Triplet { m: 0, pos: 0, neg: 1 }];
    assert_eq!(loss_of(&h, &t, HingePlacement::OverMean), 0.0);
}

/// `l_1 = 0.4 − 0 + 0.2 = 0.6` and `l_2 = 0.4 − 0.6 + 0 = −0.2`.
fn mixed_case() -> (Vec<Vec<[f64; 2]>>, [Triplet; 2]) {
    let h = vec![
        vec![at_cos(0.0), at_cos(0.5)],
        vec![at_cos(0.2), at_cos(0.6)],
        vec![at_cos(0.9), at_cos(0.0)],
    ];
    let t = [Triplet { m: 0, pos: 0, neg: 1 }, Triplet { m: 1, pos: 1, neg: 2 }];
    (h, t)
}

#[test]
fn two_triplet_hand_example() {
    let (h, t) = mixed_case();
    assert!((loss_of(&h, &t, HingePlacement::OverMean) - 0.2).abs() < 1e-12);
}

#[test]
fn hinge_placement_only_matters_for_mixed_signs() {
    let (h, t) = mixed_case();
    // mixed violations: max(0, mean) = 0.2 but mean(max(0, ·)) = 0.3
    assert!((loss_of(&h, &t, HingePlacement::PerTriplet) - 0.3).abs() < 1e-12);
    // all violations positive: identical
    let all_pos = vec![vec![at_cos(0.1)], vec![at_cos(0.2)]];
    let one = [Triplet { m: 0, pos: 0, neg: 1 }];
    assert!((loss_of(&all_pos, &one, HingePlacement::OverMean) - loss_of(&all_pos, &one, HingePlacement::PerTriplet)).abs() < 1e-15);
    // all non-positive: both zero
    let sep = vec![vec![at_cos(1.0)], vec![at_cos(-1.0)]];
    assert_eq!(loss_of(&sep, &one, HingePlacement::PerTriplet), 0.0);
    assert_eq!(loss_of(&sep, &one, HingePlacement::OverMean), 0.0);
}

#[test]
fn inactive_hinge_has_exactly_zero_gradient() {
    let tape = Tape::new();
    let q = query(&tape, &[vec![at_cos(0.9)], vec![at_cos(-0.5)]]);
    let t = [Triplet { m: 0, pos: 0, neg: 1 }];
    let loss = triplet_loss(&tape, Some(&q), &t, MU, HingePlacement::OverMean).unwrap().loss;
    assert_eq!(tape.item(loss), 0.0);
    tape.backward(loss).unwrap();
    for v in std::iter::once(q.q).chain(q.h.iter().copied()) {
        assert!(tape.grad(v).is_none_or(|g| g.data().iter().all(|x| *x == 0.0)));
    }
}

#[test]
fn no_triplets_or_anchors_give_zero() {
    let tape = Tape::new();
    let q = query(&tape, &[vec![at_cos(0.1)]]);
    let l = triplet_loss(&tape, Some(&q), &[], MU, HingePlacement::OverMean).unwrap();
    assert_eq!(tape.item(l.loss), 0.0);
    let l = triplet_loss(&tape, None, &[Triplet { m: 0, pos: 0, neg: 1 }], MU, HingePlacement::OverMean).unwrap();
    assert_eq!(tape.item(l.loss), 0.0);
    let store = toy_store(&toy_ccm(), 3, 5);
    let p = store.bind(&tape, |_| false);
    let f = tape.constant(feats(2, 5, 0));
    let valid = [true, true];
    assert!(anchor_query(&p, &BatchAnchorSet::default(), &[(f, &valid[..])], &toy_ccm()).unwrap().is_none());
}

#[test]
fn loss_is_bounded_by_margin_plus_two() {
    let h = vec![vec![at_cos(-1.0)], vec![at_cos(1.0)]];
    let t = [Triplet { m: 0, pos: 0, neg: 1 }];
    let l = loss_of(&h, &t, HingePlacement::OverMean);
    assert!((l - (MU + 2.0)).abs() < 1e-9);
}

#[test]
fn single_key_attention_ignores_scores() {
    let cfg = toy_ccm();
    let store = toy_store(&cfg, 3, 5);
    let s = feats(1, 5, 1);
    let tape = Tape::new();
    let p = store.bind(&tape, |_| false);
    let batch = BatchAnchorSet {
        anchors: vec![0, 2],
        membership: vec![BTreeSet::from([0]), BTreeSet::from([0])],
        num_samples: 1,
    };
    let f = tape.constant(s.clone());
    let valid = [true];
    let q = anchor_query(&p, &batch, &[(f, &valid[..])], &cfg).unwrap().unwrap();
    // with one key every head returns s·W_V, so H = s·W_V·W_O for every anchor
    let w_v = store.get("ccm.w_v").unwrap();
    let w_o = store.get("ccm.w_o").unwrap();
    let hd = cfg.heads * cfg.hidden;
    let sv: Vec<f64> = (0..hd).map(|j| (0..5).map(|k| s.data()[k] * w_v.at(&[k, j])).sum()).collect();
    let want: Vec<f64> = (0..cfg.d_ca).map(|j| (0..hd).map(|k| sv[k] * w_o.at(&[k, j])).sum()).collect();
    let h = tape.value(q.h[0]);
    for m in 0..2 {
        for (a, b) in h.row(m).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn padded_positions_do_not_move_queries() {
    let cfg = toy_ccm();
    let store = toy_store(&cfg, 4, 5);
    let batch = BatchAnchorSet {
        anchors: vec![1, 3],
        membership: vec![BTreeSet::from([0]), BTreeSet::from([1])],
        num_samples: 2,
    };
    let valid0 = [true, true, false, false];
    let valid1 = [true, true, true, true];
    let run = |s0: &Array| {
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let enc = [(tape.constant(s0.clone()), &valid0[..]), (tape.constant(feats(4, 5, 3)), &valid1[..])];
        let q = anchor_query(&p, &batch, &enc, &cfg).unwrap().unwrap();
        QueryTensor::from_vars(&tape, &q)
    };
    let a = feats(4, 5, 2);
    let mut b = a.clone();
    for v in &mut b.data_mut()[10..] {
        *v = -*v * 40.0 + 3.0;
    }
    let (ha, hb) = (run(&a), run(&b));
    assert_eq!(ha.h.shape(), &[2, 2, cfg.d_ca]);
    assert!(ha.h.max_abs_diff(&hb.h) < 1e-9);
}

#[test]
fn anchor_query_gradients() {
    let cfg = toy_ccm();
    let store = toy_store(&cfg, 3, 5);
    let batch = BatchAnchorSet {
        anchors: vec![0, 2],
        membership: vec![BTreeSet::from([0]), BTreeSet::from([1])],
        num_samples: 2,
    };
    let names = [ANCHOR_TABLE, "ccm.w_q", "ccm.w_k", "ccm.w_v", "ccm.w_o"];
    let inputs: Vec<Array> = names.iter().map(|n| (**store.get(n).unwrap()).clone()).collect();
    let (s0, s1) = (feats(3, 5, 5), feats(3, 5, 6));
    let valid = [true, true, false];
    let report = GradCheck::default()
        .run(
            |t: &Tape, v: &[Var]| {
                let p = store.bind(t, |_| false);
                for (n, &x) in names.iter().zip(v) {
                    p.pin(n, x);
                }
                let enc = [(t.constant(s0.clone()), &valid[..]), (t.constant(s1.clone()), &valid[..])];
                let q = anchor_query(&p, &batch, &enc, &cfg)?.unwrap();
                let mut acc = t.constant(Array::scalar(0.0));
                for (n, &h) in q.h.iter().enumerate() {
                    let w = t.constant(Array::from_fn(&t.shape(h), |i| ((i + n) % 5) as f64 - 2.0));
                    acc = t.add(acc, t.sum(t.mul(h, w)?))?;
                }
                Ok::<_, signbridge::Error>(acc)
            },
            &inputs,
        )
        .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn triplet_sampling_skips_and_singletons() {
    let batch = BatchAnchorSet {
        anchors: vec![0, 1, 2],
        membership: vec![BTreeSet::from([0, 1]), BTreeSet::from([1]), BTreeSet::from([0])],
        num_samples: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = sample_triplets(&batch, &mut rng);
    assert_eq!(d.skipped, 1);
    assert_eq!(d.triplets, [Triplet { m: 1, pos: 1, neg: 0 }, Triplet { m: 2, pos: 0, neg: 1 }]);
}

#[test]
fn triplet_draws_are_uniform() {
    let batch = BatchAnchorSet {
        anchors: vec![0],
        membership: vec![BTreeSet::from([0, 2, 5])],
        num_samples: 7,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pos = [0usize; 7];
    let mut neg = [0usize; 7];
    let draws = 10_000;
    for _ in 0..draws {
        let t = sample_triplets(&batch, &mut rng).triplets[0];
        pos[t.pos] += 1;
        neg[t.neg] += 1;
    }
    for n in [0, 2, 5] {
        let f = pos[n] as f64 / draws as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.05 / 3.0, "pos {n}: {f}");
        assert_eq!(neg[n], 0);
    }
    for n in [1, 3, 4, 6] {
        let f = neg[n] as f64 / draws as f64;
        assert!((f - 0.25).abs() < 0.05 * 0.25, "neg {n}: {f}");
    }
}

#[test]
fn combined_loss_arithmetic() {
    let tape = Tape::new();
    let ce = tape.constant(Array::scalar(2.0));
    let itl = tape.constant(Array::scalar(0.3));
    assert!((tape.item(combined_loss(&tape, ce, itl, 1.0).unwrap()) - 2.3).abs() < 1e-15);
    assert_eq!(tape.item(combined_loss(&tape, ce, itl, 0.0).unwrap()), 2.0);
}

#[test]
fn combined_gradient_is_the_weighted_sum() {
    // a shared input feeding both losses
    let x0 = Array::from_vec(vec![0.3, -0.7, 0.2, 0.9]);
    let grads = |which: u8| {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let ce = tape.sum(tape.mul(x, x).unwrap());
        let h0 = tape.reshape(tape.narrow(x, 0, 0, 2).unwrap(), &[1, 2]).unwrap();
        let h1 = tape.reshape(tape.narrow(x, 0, 2, 2).unwrap(), &[1, 2]).unwrap();
        let q = tape.constant(Array::new(&[1, 2], vec![1.0, 0.5]).unwrap());
        let qv = QueryVars { q, h: vec![h0, h1] };
        let itl = triplet_loss(&tape, Some(&qv), &[Triplet { m: 0, pos: 0, neg: 1 }], MU, HingePlacement::OverMean)
            .unwrap()
            .loss;
        assert!(tape.item(itl) > 0.0);
        let root = match which {
            0 => ce,
            1 => itl,
            _ => combined_loss(&tape, ce, itl, 0.7).unwrap(),
        };
        tape.backward(root).unwrap();
        tape.grad(x).unwrap()
    };
    let (a, b, c) = (grads(0), grads(1), grads(2));
    for i in 0..4 {
        assert!((c.data()[i] - (a.data()[i] + 0.7 * b.data()[i])).abs() < 1e-12);
    }
}

fn sims() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..6)
}

proptest! {
    #[test]
    fn loss_ignores_anchor_and_sample_order(pairs in sims(), rot in 0usize..6) {
        // anchor m has positive sample 2m and negative 2m+1
        let m = pairs.len();
        let build = |perm_a: &[usize], perm_s: &[usize]| {
            let mut h = vec![vec![[0.0, 0.0]; m]; 2 * m];
            let mut t = Vec::new();
            for (orig, &(sp, sn)) in pairs.iter().enumerate() {
                let (a, ps, ns) = (perm_a[orig], perm_s[2 * orig], perm_s[2 * orig + 1]);
                h[ps][a] = at_cos(sp);
                h[ns][a] = at_cos(sn);
                t.push(Triplet { m: a, pos: ps, neg: ns });
            }
            (h, t)
        };
        let ident_a: Vec<usize> = (0..m).collect();
        let ident_s: Vec<usize> = (0..2 * m).collect();
        let mut rot_a = ident_a.clone();
        rot_a.rotate_left(rot % m);
        let mut rot_s = ident_s.clone();
        rot_s.reverse();
        let (h1, t1) = build(&ident_a, &ident_s);
        let (h2, mut t2) = build(&rot_a, &rot_s);
        t2.reverse();
        for hinge in [HingePlacement::OverMean, HingePlacement::PerTriplet] {
            let (l1, l2) = (loss_of(&h1, &t1, hinge), loss_of(&h2, &t2, hinge));
            prop_assert!((l1 - l2).abs() < 1e-12);
            prop_assert!((0.0..=MU + 2.0 + 1e-12).contains(&l1));
        }
    }
}
