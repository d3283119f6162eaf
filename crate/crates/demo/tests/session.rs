use hetexplain_demo::Session;

fn small() -> Session {
    Session::train(r#"{"synth": {"target_nodes": 90}, "predictor": {"epochs": 40, "patience": 20}}"#).unwrap()
}

#[test]
fn train_explain_and_intervene() {
    let s = small();
    let summary = s.summary();
    assert_eq!(summary.views, ["IAI", "ITI"]);
    assert!((summary.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(!summary.test_nodes.is_empty());

    let node = summary.test_nodes[0];
    for name in ["Grad", "GNNShap", "RandomNodeMask"] {
        let r = s.explain(node, name, 0.25).unwrap();
        assert_eq!(r.node, node);
        assert_eq!(r.views.len(), 2);
        assert!((r.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(r.probabilities.len(), 3);
        for v in &r.views {
            assert_eq!(v.kept.len(), v.scores.len());
        }
    }

    let learned = s.intervene("learned").unwrap();
    assert_eq!(learned.test_macro_f1, summary.test_macro_f1);
    let one_hot = s.intervene("one_hot_1").unwrap();
    assert_eq!(one_hot.attention, vec![0.0, 1.0]);
}

#[test]
fn bad_inputs_are_errors() {
    let s = small();
    assert!(s.intervene("one_hot_x").is_err());
    assert!(s.intervene("one_hot_5").is_err());
    assert!(s.explain(10_000, "Grad", 0.25).is_err());
    assert!(s.explain(0, "Nope", 0.25).is_err());
    assert!(s.explain(0, "Grad", 0.0).is_err());
    assert!(Session::train(r#"{"synth": {"bogus": 1}}"#).is_err());
}

#[test]
fn empty_request_uses_defaults() {
    let s = Session::train("").unwrap();
    assert_eq!(s.summary().views.len(), 2);
    assert!(s.summary().test_macro_f1 > 50.0);
}
