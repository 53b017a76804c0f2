use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pilot"))
}

fn write_run_config(dir: &Path) -> std::path::PathBuf {
    let personas = serde_json::json!([
        {"id": "p1", "description": "retired teacher", "base_persona": "teacher"}
    ]);
    let requests = serde_json::json!([
        {"id": "r1", "content_type": "personal writing", "text": "Write a short diary entry."},
        {"id": "r2", "content_type": "email correspondence", "text": "Write a thank-you email."}
    ]);
    fs::write(dir.join("personas.json"), personas.to_string()).unwrap();
    fs::write(dir.join("requests.json"), requests.to_string()).unwrap();
    let config = serde_json::json!({
        "provider": "stub",
        "persona_catalog": dir.join("personas.json"),
        "request_catalog": dir.join("requests.json"),
        "conditions": ["NPS", "SBS"],
        "models": ["stub-a"],
        "seed": 42,
        "corpus_out": dir.join("corpus.jsonl"),
        "report_out": dir.join("report.json")
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn generate_then_evaluate_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_config(dir.path());

    let out = bin()
        .args(["generate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let corpus = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 4); // 1 persona x 2 conditions x 2 requests x 1 model

    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .args(["--group-by", "condition"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["groups"].get("NPS").is_some());
    assert!(report["groups"].get("SBS").is_some());
    assert_eq!(report["metadata"]["n_records"], 4);
}

#[test]
fn evaluate_missing_corpus_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_config(dir.path());
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_error_exits_2() {
    let out = bin().args(["generate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn profile_elicit_average_validate_variation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_config(dir.path());
    let profiles_dir = dir.path().join("profiles");

    let out = bin()
        .args(["profile", "elicit", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&profiles_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let elicited = profiles_dir.join("p1.json");
    assert!(elicited.exists());

    let out = bin()
        .args(["profile", "validate"])
        .arg(&elicited)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let averaged = dir.path().join("avg.json");
    let out = bin()
        .args(["profile", "average", "--in"])
        .arg(&elicited)
        .args(["--in"])
        .arg(&elicited)
        .arg("--out")
        .arg(&averaged)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["profile", "variation"])
        .arg(&elicited)
        .arg(&averaged)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"persona_id\": \"x\"}").unwrap();
    let out = bin().args(["profile", "validate"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_over_ratings_and_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_config(dir.path());
    assert!(bin().args(["generate", "--config"]).arg(&config).status().unwrap().success());

    let corpus = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    let ids: Vec<String> = corpus
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_str().unwrap().to_owned())
        .collect();
    let mut csv = String::from("response_id,rater_id,human_likeness,content_adherence,quality,helpfulness,feedback\n");
    for (i, id) in ids.iter().enumerate() {
        let score = 1 + (i % 3);
        csv.push_str(&format!("{id},rater-{},{score},{score},{score},{score},\n", i % 2));
    }
    let ratings = dir.path().join("ratings.csv");
    fs::write(&ratings, csv).unwrap();

    let out = bin()
        .args(["stats", "--ratings"])
        .arg(&ratings)
        .args(["--factor", "condition", "--corpus"])
        .arg(dir.path().join("corpus.jsonl"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("human_likeness"), "{stdout}");
}
