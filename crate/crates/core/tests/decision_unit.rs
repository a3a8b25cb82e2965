mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saia_core::decision_unit::{
    du_confusion, generate_meta, jitter_meta, label_rule, load_meta_csv, oracle_route, route, save_meta_csv,
    train_du, DuConfig, MetaJitter, MetaRecord, Route, KEEP, SEND,
};
use saia_core::gbdt::{self, GbdtModel, Objective, ScaledTree, TrainConfig, Tree, TreeNode};
use saia_core::{Dataset, Error, PosteriorVector, Sample};

#[test]
fn label_rule_truth_table() {
    let mut sends = 0;
    for emb in 0..3 {
        for net in 0..3 {
            for truth in 0..3 {
                let expected = if emb != net && net == truth { SEND } else { KEEP };
                assert_eq!(label_rule(emb, net, truth), expected, "({emb},{net},{truth})");
                sends += usize::from(expected == SEND);
            }
        }
    }
    // net correct (3 choices of truth) with emb one of the two other classes
    assert_eq!(sends, 6);
    assert_eq!(label_rule(2, 1, 1), SEND);
    assert_eq!(label_rule(0, 1, 2), KEEP);
}

#[test]
fn meta_labels_match_hand_loop() {
    let (_, prep) = common::small_fixture(1);
    let records = generate_meta(&prep.embedded, &prep.ensemble, &prep.split.meta).unwrap();
    assert_eq!(records.len(), prep.split.meta.len());
    for (r, s) in records.iter().zip(prep.split.meta.samples()) {
        let probs = prep.embedded.predict_proba(s).unwrap();
        let emb = probs.argmax();
        let net = prep.ensemble.predict(s).unwrap().class;
        let truth = s.label.unwrap();
        let expected = u8::from(emb != net && net == truth);
        assert_eq!(r.id, s.id);
        assert_eq!(r.meta, probs);
        assert_eq!(r.routing_label, Some(expected));
    }
}

fn constant_du(weight: f64, m: usize) -> GbdtModel {
    GbdtModel::new(Objective::Logistic, m, 0.0, 1.0, vec![vec![ScaledTree { tree: Tree::leaf(weight), scale: 1.0 }]])
        .unwrap()
}

#[test]
fn no_communication_never_sends() {
    let meta = PosteriorVector::new(vec![0.3, 0.7]).unwrap();
    for i in -40..=40 {
        let du = constant_du(i as f64 / 4.0, 2);
        for tau in [0.01, 0.25, 0.5, 0.75, 0.99] {
            assert_eq!(route(&du, &meta, false, tau).unwrap().route, Route::KeepOnClient);
        }
    }
    let du = constant_du((0.9f64 / 0.1).ln(), 2);
    let d = route(&du, &meta, true, 0.5).unwrap();
    assert!((d.du_score - 0.9).abs() < 1e-12);
    assert!(d.is_send());
}

#[test]
fn zero_epsilon_keeps_everything() {
    let (cfg, prep) = common::small_fixture(2);
    let du = train_du(&prep.meta, &DuConfig { epsilon: 0.0, ..cfg.du.clone() }).unwrap();
    for r in &prep.meta {
        assert!(!route(&du, &r.meta, true, 0.5).unwrap().is_send());
    }
}

#[test]
fn unit_epsilon_is_plain_logistic_training() {
    let (cfg, prep) = common::small_fixture(3);
    let du = train_du(&prep.meta, &DuConfig { epsilon: 1.0, ..cfg.du.clone() }).unwrap();
    let samples = prep
        .meta
        .iter()
        .map(|r| Sample::new(r.id.clone(), r.meta.probs().to_vec(), r.routing_label.map(usize::from)))
        .collect();
    let ds = Dataset::new(samples, 2, prep.meta[0].meta.class_count()).unwrap();
    let plain = gbdt::fit(&ds, Objective::Logistic, &TrainConfig { epsilon: 1.0, ..cfg.du.train.clone() }).unwrap();
    assert_eq!(du.to_text(), plain.to_text());
}

#[test]
fn larger_epsilon_raises_held_out_tpr() {
    let (cfg, prep) = common::small_fixture(4);
    let held_out = generate_meta(&prep.embedded, &prep.ensemble, &prep.split.test).unwrap();
    let tpr = |eps: f64| {
        let du = train_du(&prep.meta, &DuConfig { epsilon: eps, ..cfg.du.clone() }).unwrap();
        du_confusion(&du, &held_out, 0.5).unwrap()
    };
    let (low, high) = (tpr(3.0), tpr(25.0));
    assert!(high.tpr >= low.tpr, "{} < {}", high.tpr, low.tpr);
    assert!(high.tpr > high.fpr && low.tpr > low.fpr);
}

#[test]
fn raising_threshold_never_sends_more() {
    let (cfg, prep) = common::small_fixture(5);
    let du = train_du(&prep.meta, &DuConfig { epsilon: 5.0, ..cfg.du.clone() }).unwrap();
    let mut last = usize::MAX;
    for step in 1..100 {
        let tau = step as f64 / 100.0;
        let sent = prep.meta.iter().filter(|r| route(&du, &r.meta, true, tau).unwrap().is_send()).count();
        assert!(sent <= last, "tau {tau}: {sent} > {last}");
        last = sent;
    }
}

fn record(id: usize, p0: f64, label: u8) -> MetaRecord {
    MetaRecord { id: format!("r{id}"), meta: PosteriorVector::new(vec![p0, 1.0 - p0]).unwrap(), routing_label: Some(label) }
}

#[test]
fn confusion_against_hand_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records: Vec<MetaRecord> = (0..100)
        .map(|i| {
            let p0: f64 = rng.random_range(0.0..1.0);
            let label = u8::from(p0 < 0.5);
            record(i, p0, if rng.random_bool(0.15) { 1 - label } else { label })
        })
        .collect();
    // sends when p0 < 0.5
    let nodes = vec![
        TreeNode::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
        TreeNode::Leaf { weight: 10.0 },
        TreeNode::Leaf { weight: -10.0 },
    ];
    let du = GbdtModel::new(
        Objective::Logistic,
        2,
        0.0,
        1.0,
        vec![vec![ScaledTree { tree: Tree::from_nodes(nodes, 2).unwrap(), scale: 1.0 }]],
    )
    .unwrap();
    let c = du_confusion(&du, &records, 0.5).unwrap();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for r in &records {
        match (r.routing_label == Some(1), r.meta.probs()[0] < 0.5) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fn_));
    assert!((c.tpr + c.fnr - 1.0).abs() < 1e-12 && (c.tnr + c.fpr - 1.0).abs() < 1e-12);

    let perfect: Vec<MetaRecord> = (0..20).map(|i| record(i, i as f64 / 20.0, u8::from(i < 10))).collect();
    let c = du_confusion(&du, &perfect, 0.5).unwrap();
    assert_eq!((c.tpr, c.fpr), (1.0, 0.0));
    let c = du_confusion(&constant_du(10.0, 2), &perfect, 0.5).unwrap();
    assert_eq!((c.tpr, c.fpr), (1.0, 1.0));
    assert!(matches!(du_confusion(&du, &perfect[..5], 0.5), Err(Error::DegenerateLabels(_))));
}

#[test]
fn single_class_meta_is_degenerate() {
    let records: Vec<MetaRecord> = (0..10).map(|i| record(i, 0.4, KEEP)).collect();
    assert!(matches!(train_du(&records, &DuConfig::default()), Err(Error::DegenerateLabels(_))));
    assert!(train_du(&records, &DuConfig { epsilon: 0.0, ..DuConfig::default() }).is_ok());
}

#[test]
fn oracle_routing_bound_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let n = rng.random_range(100..1000);
        let m = rng.random_range(2..6);
        let (emb_acc, net_acc) = (rng.random_range(0.3..0.9), rng.random_range(0.5..0.99));
        let guess = |rng: &mut ChaCha8Rng, y: usize, acc: f64| {
            if rng.random_bool(acc) { y } else { (y + rng.random_range(1..m)) % m }
        };
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let emb: Vec<usize> = truth.iter().map(|&y| guess(&mut rng, y, emb_acc)).collect();
        let net: Vec<usize> = truth.iter().map(|&y| guess(&mut rng, y, net_acc)).collect();

        let mut routed_correct = 0;
        let mut either = 0;
        for i in 0..n {
            let d = oracle_route(emb[i], net[i], truth[i]);
            if emb[i] == truth[i] {
                assert_eq!(d.route, Route::KeepOnClient);
            }
            let fin = if d.is_send() { net[i] } else { emb[i] };
            routed_correct += usize::from(fin == truth[i]);
            either += usize::from(emb[i] == truth[i] || net[i] == truth[i]);
        }
        assert_eq!(routed_correct, either);
        let count = |p: &[usize]| p.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(routed_correct >= count(&emb).max(count(&net)));
    }
}

#[test]
fn meta_csv_round_trip_and_jitter() {
    let records: Vec<MetaRecord> = (0..6).map(|i| record(i, i as f64 / 7.0, (i % 2) as u8)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("meta.csv");
    save_meta_csv(&records, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "id,p0,p1,routing_label");
    assert_eq!(load_meta_csv(&path).unwrap(), records);

    let jittered = jitter_meta(&records, &MetaJitter { copies: 2, sigma: 0.01 }, 3).unwrap();
    assert_eq!(jittered.len(), 18);
    assert_eq!(&jittered[..6], &records[..]);
    for (j, r) in jittered[6..].iter().zip(records.iter().cycle()) {
        assert_eq!(j.routing_label, r.routing_label);
        assert!((j.meta.probs()[0] - r.meta.probs()[0]).abs() < 0.1);
    }
    assert_eq!(jittered, jitter_meta(&records, &MetaJitter { copies: 2, sigma: 0.01 }, 3).unwrap());
}
