//! Host-side checks of the JSON contract the demo page consumes.
//!
//! The `ops` module is target-independent, so the exact strings the wasm
//! exports hand to JavaScript can be pinned here: field names and shapes
//! asserted below are exactly what `demo/index.html` destructures.

use exituq_wasm::ops::{exit_weights, quantify_exits, train_demo};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).expect("exported functions return valid JSON")
}

#[test]
fn quantify_exits_reports_record_and_per_exit_rows() {
    let input = r#"{
        "students": [[0.8789, 0.1211], [0.9914, 0.0086]],
        "teacher": [0.9753, 0.0247]
    }"#;
    let out = parse(quantify_exits(input).expect("valid probabilities"));

    for key in [
        "disagreement",
        "uc_linear",
        "uc_nonlinear",
        "uc_norm_linear",
        "uc_norm_nonlinear",
        "teacher_entropy",
        "teacher_argmax",
    ] {
        assert!(out.get(key).is_some(), "missing field {key}: {out}");
    }
    assert_eq!(out["teacher_argmax"], 0);
    assert!((out["disagreement"].as_f64().unwrap() - 0.1082).abs() < 5e-4);

    let per_exit = out["per_exit"].as_array().expect("per_exit array");
    assert_eq!(per_exit.len(), 2);
    for (i, e) in per_exit.iter().enumerate() {
        assert_eq!(e["l"], (i + 1) as u64);
        for key in
            ["argmax", "disagrees", "kl_to_teacher", "jsd_to_teacher", "weight_linear", "weight_nonlinear"]
        {
            assert!(e.get(key).is_some(), "missing per-exit field {key}");
        }
        // Both students agree with the teacher here, so weights stay at 1.
        assert_eq!(e["disagrees"], false);
        assert_eq!(e["weight_linear"].as_f64().unwrap(), 1.0);
    }
}

#[test]
fn quantify_exits_rejects_malformed_rows() {
    assert!(quantify_exits("not json").is_err());
    // Row does not sum to one.
    let bad = r#"{"students": [[0.9, 0.9]], "teacher": [0.5, 0.5]}"#;
    assert!(quantify_exits(bad).is_err());
    // Mismatched class counts.
    let bad = r#"{"students": [[0.5, 0.5]], "teacher": [0.2, 0.3, 0.5]}"#;
    assert!(quantify_exits(bad).is_err());
}

#[test]
fn exit_weights_covers_both_curves_and_bounds() {
    let out = parse(exit_weights(4).expect("m=4 valid"));
    assert_eq!(out["m"], 4);
    let rows = out["weights"].as_array().unwrap();
    assert_eq!(rows.len(), 3, "one row per early exit");
    for (i, row) in rows.iter().enumerate() {
        let l = (i + 1) as f64;
        assert_eq!(row["l"], (i + 1) as u64);
        assert!((row["linear"].as_f64().unwrap() - (1.0 + l / 4.0)).abs() < 1e-12);
        assert!((row["nonlinear"].as_f64().unwrap() - (2.0 - (-l).exp())).abs() < 1e-12);
    }
    assert!(out["uc_max_linear"].as_f64().unwrap() > 0.0);
    assert!(out["uc_max_nonlinear"].as_f64().unwrap() > 0.0);

    assert!(exit_weights(1).is_err(), "need at least two exits");
    assert!(exit_weights(99).is_err(), "demo cap");
}

#[test]
fn train_demo_runs_end_to_end_and_is_deterministic() {
    let cfg = r#"{"patients": 24, "epochs": 3, "seed": 5, "alpha": 0.6, "lambda": 0.04}"#;
    let a = train_demo(cfg).expect("training succeeds");
    let b = train_demo(cfg).expect("training succeeds");
    assert_eq!(a, b, "same config must give byte-identical output");

    let out = parse(a);
    assert_eq!(out["history"].as_array().unwrap().len(), 3);
    for h in out["history"].as_array().unwrap() {
        for key in ["epoch", "plain", "train_total", "val_teacher_ce"] {
            assert!(h.get(key).is_some(), "missing history field {key}");
        }
        assert!(h["train_total"].as_f64().unwrap().is_finite());
    }
    let f1 = out["test_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert!(out["n_train"].as_u64().unwrap() > 0);
    assert!(out["n_test"].as_u64().unwrap() > 0);

    let examples = out["examples"].as_array().unwrap();
    assert!(!examples.is_empty() && examples.len() <= 10);
    for ex in examples {
        for key in [
            "label",
            "prediction",
            "correct",
            "disagreement",
            "uc_norm_linear",
            "uc_norm_nonlinear",
            "teacher_entropy",
            "exit_probs",
        ] {
            assert!(ex.get(key).is_some(), "missing example field {key}");
        }
        let norm = ex["uc_norm_linear"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&norm));
        let rows = ex["exit_probs"].as_array().unwrap();
        assert_eq!(rows.len(), 3, "three exits incl. teacher");
    }
}
