//! End-to-end runs of the `attrieval` binary.

use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_attrieval"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn bench_to_retrieval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run(
        dir,
        &[
            "bench",
            "generate",
            "--lengths",
            "0,1024",
            "--per-length",
            "2",
            "--seed",
            "5",
            "--out",
            "data.jsonl",
        ],
    );
    assert_eq!(
        std::fs::read_to_string(dir.join("data.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    run(
        dir,
        &[
            "bench",
            "export-tasks",
            "--data",
            "data.jsonl",
            "--out-dir",
            "tasks",
        ],
    );
    let task = "tasks/deduction-1024-1.task.json";
    run(
        dir,
        &[
            "trace",
            "synth",
            "--task",
            task,
            "--out-dir",
            "traces",
            "--answer",
            "The answer is 3.",
        ],
    );

    let header: serde_json::Value = serde_json::from_str(&run(
        dir,
        &["trace", "inspect", "traces/deduction-1024-1.cot.atrv"],
    ))
    .unwrap();
    assert_eq!(header["T"], 16);
    assert_eq!(header["sections"][0]["section"], "attention");

    for mode in ["cot", "attrieval", "attrieval-kl"] {
        let res: serde_json::Value = serde_json::from_str(&run(
            dir,
            &[
                "retrieve",
                "--task",
                task,
                "--trace-dir",
                "traces",
                "--mode",
                mode,
            ],
        ))
        .unwrap();
        assert_eq!(res["mode"], mode);
        if mode == "cot" {
            assert!(res["retrieved"].as_array().unwrap().is_empty());
            continue;
        }
        assert_eq!(res["final_answer"], "The answer is 3.");
        let task: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join(task)).unwrap()).unwrap();
        let prefix = task["prefix"].as_str().unwrap();
        let retrieved: Vec<&str> = res["retrieved"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["text"].as_str().unwrap())
            .collect();
        for g in task["gold_facts"].as_array().unwrap() {
            let text =
                &prefix[g["start"].as_u64().unwrap() as usize..g["end"].as_u64().unwrap() as usize];
            assert!(retrieved.contains(&text), "{mode}: {text} not retrieved");
        }
        let subset = res["token_subset"].as_array().unwrap().len();
        assert_eq!(subset, if mode == "attrieval-kl" { 10 } else { 16 });
    }

    let csv = run(
        dir,
        &[
            "analyze",
            "heatmap",
            "--trace",
            "traces/deduction-1024-1.cot.atrv",
            "--task",
            task,
            "--plot",
            "h.svg",
        ],
    );
    assert!(csv.starts_with("layer,t,span_id,span,share\n"));
    assert!(std::fs::read_to_string(dir.join("h.svg"))
        .unwrap()
        .starts_with("<svg"));
    let facts: serde_json::Value = serde_json::from_str(&run(
        dir,
        &[
            "analyze",
            "facts",
            "--task",
            task,
            "--trace",
            "traces/deduction-1024-1.cot.atrv",
        ],
    ))
    .unwrap();
    assert!(facts["facts"].as_array().unwrap().len() > 10);

    std::fs::write(
        dir.join("texts.jsonl"),
        "{\"id\":\"deduction-0-0\",\"text\":\"nothing\",\"response\":\"The answer is 1.\"}\n",
    )
    .unwrap();
    let report: serde_json::Value = serde_json::from_str(&run(
        dir,
        &[
            "bench",
            "recall",
            "--data",
            "data.jsonl",
            "--texts",
            "texts.jsonl",
        ],
    ))
    .unwrap();
    assert_eq!(report["entries"][0]["overall_recall"], 0.0);
}

#[test]
fn config_file_and_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.toml"), "[retrieval]\nk = 0\n").unwrap();
    run(
        dir,
        &[
            "bench",
            "generate",
            "--lengths",
            "0",
            "--per-length",
            "1",
            "--out",
            "d.jsonl",
        ],
    );
    run(
        dir,
        &[
            "bench",
            "export-tasks",
            "--data",
            "d.jsonl",
            "--out-dir",
            "t",
        ],
    );
    let out = Command::new(env!("CARGO_BIN_EXE_attrieval"))
        .current_dir(dir)
        .args([
            "retrieve",
            "--task",
            "t/deduction-0-0.task.json",
            "--trace-dir",
            ".",
            "--config",
            "bad.toml",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be at least 1"));
    std::fs::write(dir.join("junk.atrv"), b"NOTATRACE").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_attrieval"))
        .current_dir(dir)
        .args(["trace", "inspect", "junk.atrv"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}
