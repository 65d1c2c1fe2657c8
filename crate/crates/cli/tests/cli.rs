use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
# small model for tests
hidden = 8
d1 = 8
word_dim = 12
char_dim = 4
char_filters = 3
mlp_hidden = 16
mlp_p_hidden = 8
k = 3
epochs = 2
pretrain_epochs = 2
batch_size = 8
pretrain_batch_size = 8
";

const GOOD: [&str; 4] = ["great", "sturdy", "reliable", "solid"];
const BAD: [&str; 4] = ["broken", "flimsy", "awful", "useless"];
const PARTS: [&str; 4] = ["lid", "cable", "motor", "button"];

fn rahp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rahp"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rahp(dir, args);
    assert!(
        out.status.success(),
        "rahp {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_inputs(dir: &Path) {
    fs::write(dir.join("tiny.cfg"), CONFIG).unwrap();
    let mut reviews = Vec::new();
    for p in 0..3 {
        for r in 0..3 {
            let w = if (p + r) % 2 == 0 { GOOD[r] } else { BAD[r] };
            let text = format!("The {} is {w}. Shipping was fast!", PARTS[(p + r) % 4]);
            reviews.push(
                serde_json::json!({"product_id": format!("p{p}"), "review_text": text, "review_id": format!("p{p}r{r}")}).to_string(),
            );
        }
    }
    fs::write(dir.join("reviews.jsonl"), reviews.join("\n") + "\n").unwrap();
    let answers: Vec<String> = (0..60)
        .map(|i| {
            let word = if i % 3 == 0 { BAD[i % 4] } else { GOOD[i % 4] };
            let y = 1 + i % 4;
            let x = if i % 3 == 0 { 0 } else { y };
            serde_json::json!({
                "product_id": format!("p{}", i % 4),
                "question": format!("how is the {} ?", PARTS[i % 4]),
                "answer": format!("it is {word}"),
                "vote_x": x,
                "vote_y": y,
            })
            .to_string()
        })
        .collect();
    fs::write(dir.join("answers.jsonl"), answers.join("\n") + "\n").unwrap();
    let mut nli = String::from("gold_label\tsentence1\tsentence2\n");
    for i in 0..24 {
        let (p, w) = (PARTS[i % 4], GOOD[i % 4]);
        let (label, hyp) = match i % 3 {
            0 => ("entailment", format!("{p} is {w}")),
            1 => ("neutral", format!("the {p} ships in a box")),
            _ => ("contradiction", format!("the {p} is {}", BAD[i % 4])),
        };
        nli.push_str(&format!("{label}\tthe {p} is {w} and works\t{hyp}\n"));
    }
    fs::write(dir.join("nli.tsv"), nli).unwrap();
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_inputs(d);
    let cfg = ["--config", "tiny.cfg"];

    let out = ok(
        d,
        &[
            &cfg[..],
            &[
                "prepare",
                "--answers",
                "answers.jsonl",
                "--reviews",
                "reviews.jsonl",
                "--out",
                "data",
            ],
        ]
        .concat(),
    );
    assert!(out.contains("splits    train 40 / valid 5 / test 5"), "{out}");
    assert!(d.join("data/prepare_meta.json").exists());

    let out = ok(d, &[&cfg[..], &["pretrain", "--corpus", "nli.tsv", "--out", "pre"]].concat());
    assert!(out.contains("pairs 24 train"), "{out}");

    let train = [&cfg[..], &["train", "--data", "data", "--pretrained", "pre", "--out", "model"]].concat();
    let out = ok(d, &train);
    assert!(out.contains("epoch   2"), "{out}");
    assert!(out.contains("transferred"), "{out}");
    let first = fs::read(d.join("model/model.ckpt")).unwrap();
    ok(
        d,
        &[&cfg[..], &["train", "--data", "data", "--pretrained", "pre", "--out", "model2"]].concat(),
    );
    assert_eq!(first, fs::read(d.join("model2/model.ckpt")).unwrap());

    let eval = [
        "evaluate",
        "--model",
        "model",
        "--shard",
        "data/test.jsonl",
        "--dump",
        "scores.csv",
        "--report",
        "report.json",
    ];
    let table = ok(d, &eval);
    assert!(table.contains("F1") && table.contains("AUROC"), "{table}");
    assert_eq!(table, ok(d, &eval));
    let dump = fs::read_to_string(d.join("scores.csv")).unwrap();
    assert!(dump.starts_with("instance_id,score,label\n"));
    assert_eq!(dump.lines().count(), 6);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["count"], 5);

    let predict = [
        "predict",
        "--model",
        "model",
        "--question",
        "how is the lid ?",
        "--answer",
        "it is sturdy",
        "--product",
        "p1",
        "--reviews",
        "reviews.jsonl",
    ];
    let out = ok(d, &[&predict[..], &["--dump-attention", "attn"]].concat());
    assert!(out.starts_with("probability 0."), "{out}");
    assert_eq!(out.matches("EMPTY").count(), 0, "{out}");
    assert_eq!(out, ok(d, &predict));
    let alpha = fs::read_to_string(d.join("attn/alpha_q.csv")).unwrap();
    assert!(alpha.starts_with("token,it,is,sturdy\n"), "{alpha}");

    let mut unknown = predict.to_vec();
    unknown[8] = "p9";
    let out = rahp(d, &[&unknown[..], &["--json"]].concat());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("p9"));
    let p: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let prob = p["probability"].as_f64().unwrap();
    assert!(prob > 0.0 && prob < 1.0);
    assert_eq!(p["known_product"], false);

    let out = ok(
        d,
        &[
            "overlap",
            "--reference",
            "reviews.jsonl",
            "--category",
            "answers=answers.jsonl",
            "--category",
            "nli=nli.tsv",
        ],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "category,ratio");
    assert!(lines[1].starts_with("answers,0.") && lines[2].starts_with("nli,0."), "{out}");
}

#[test]
fn bad_arguments_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_inputs(d);
    let prepare = [
        "prepare",
        "--answers",
        "answers.jsonl",
        "--reviews",
        "reviews.jsonl",
        "--out",
        "data",
    ];
    assert!(!rahp(d, &[&["--set", "hidden"][..], &prepare].concat()).status.success());
    assert!(!rahp(d, &[&["--set", "nope=1"][..], &prepare].concat()).status.success());
    assert!(!rahp(
        d,
        &[
            "prepare",
            "--answers",
            "missing.jsonl",
            "--reviews",
            "reviews.jsonl",
            "--out",
            "data"
        ]
    )
    .status
    .success());
    assert!(!rahp(d, &["evaluate", "--model", "nowhere", "--shard", "x.jsonl"]).status.success());
    assert!(!rahp(d, &["overlap", "--reference", "reviews.jsonl", "--category", "noequals"])
        .status
        .success());
}

#[test]
fn ablation_flag_must_match_trained_model() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_inputs(d);
    ok(
        d,
        &[
            "--config",
            "tiny.cfg",
            "prepare",
            "--answers",
            "answers.jsonl",
            "--reviews",
            "reviews.jsonl",
            "--out",
            "data",
        ],
    );
    ok(
        d,
        &["--config", "tiny.cfg", "--no-ra-coherence", "train", "--data", "data", "--out", "m"],
    );
    let cfg = fs::read_to_string(d.join("m/config.txt")).unwrap();
    assert!(cfg.contains("no_ra_coherence = true"));
    ok(d, &["evaluate", "--model", "m", "--shard", "data/test.jsonl"]);
    assert!(!rahp(
        d,
        &[
            "evaluate",
            "--model",
            "m",
            "--shard",
            "data/test.jsonl",
            "--set",
            "no_ra_coherence=false"
        ]
    )
    .status
    .success());
}
