mod common;

use std::path::Path;
use std::process::Command;

use common::*;
use dragonfly_core::cli::{run_stats, run_tokenize, InspectReport, PipelineArgs, StatsArgs, Status};
use dragonfly_core::{tokenfile, CdfFormat, ImageBuffer, SeparatorPolicy, ZoomTarget};

fn dragonfly(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dragonfly")).args(args).output().unwrap()
}

fn pattern(w: u32, h: u32, k: u8) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| [x as u8 ^ k, y as u8, k.wrapping_mul(31)]).unwrap()
}

fn small_cli_flags() -> Vec<&'static str> {
    vec!["--seed", "3", "--encoder-dim", "4", "--proj-dim", "4"]
}

fn stats_args(manifest: &Path, out: &Path) -> StatsArgs {
    StatsArgs {
        pipeline: PipelineArgs::default(),
        manifest: manifest.to_path_buf(),
        out: Some(out.to_path_buf()),
        thresholds: vec![1.0, 2.0, 4.0],
        target: ZoomTarget::High,
        format: CdfFormat::Csv,
    }
}

#[test]
fn tokenize_three_images_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let inputs: Vec<_> = [(40, 30), (100, 20), (17, 90)]
        .iter()
        .enumerate()
        .map(|(i, &(w, h))| write_dfim(dir.path(), &format!("img{i}.dfim"), &pattern(w, h, i as u8)))
        .collect();
    let out = dir.path().join("out");
    let mut args: Vec<String> = vec!["tokenize".into(), "--out".into(), out.display().to_string()];
    args.extend(small_cli_flags().iter().map(|s| s.to_string()));
    args.extend(inputs.iter().map(|p| p.display().to_string()));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let result = dragonfly(&argv);
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stderr));

    for i in 0..3 {
        let seq = tokenfile::read(&out.join(format!("img{i}.dftk"))).unwrap();
        assert_eq!((seq.image_token_count(), seq.separator_count(), seq.dim()), (2016, 40, 4));
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    assert!(manifest["entries"].as_array().unwrap().iter().all(|e| e["status"] == "ok"));
}

#[test]
fn corrupt_input_gives_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_dfim(dir.path(), "a.dfim", &pattern(30, 30, 1));
    let b = write_dfim(dir.path(), "b.dfim", &pattern(50, 20, 2));
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"\x89PNG\r\n\x1a\nnot really a png").unwrap();

    let out = dir.path().join("out");
    let outcome = run_tokenize(&tokenize_args(small_pipeline(), &out, vec![a, bad, b]), &mut Vec::new());
    assert_eq!(outcome.exit_code, 1);
    let manifest = outcome.manifest.unwrap();
    let statuses: Vec<_> = manifest.entries.iter().map(|e| (e.image_id.as_str(), e.status)).collect();
    assert_eq!(statuses, [("a", Status::Ok), ("bad", Status::Failed), ("b", Status::Ok)]);
    assert!(manifest.entries[1].error.as_deref().unwrap().starts_with("DecodeError"));
    assert!(out.join("a.dftk").exists() && out.join("b.dftk").exists());
    assert!(!out.join("bad.dftk").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn missing_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_dfim(dir.path(), "a.dfim", &pattern(20, 20, 0));
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.toml");
    let result = dragonfly(&[
        "tokenize",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        img.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn invalid_config_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_dfim(dir.path(), "a.dfim", &pattern(20, 20, 0));
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "pool_stride = 5\n").unwrap();
    let out = dir.path().join("out");
    let result = dragonfly(&[
        "tokenize",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        img.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn stats_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("corpus.tsv");
    let mut text = String::from("# id\twidth\theight\n");
    let dims = [(640, 480), (4032, 3024), (100, 100), (2016, 1008), (50, 5000), (800, 600), (640, 480), (336, 336), (1920, 1080), (3000, 200)];
    for (i, (w, h)) in dims.iter().enumerate() {
        text.push_str(&format!("img{i}\t{w}\t{h}\n"));
    }
    std::fs::write(&manifest, text).unwrap();
    let out = dir.path().join("stats");
    let mut stdout = Vec::new();
    assert_eq!(run_stats(&stats_args(&manifest, &out), &mut stdout), 0);

    let csv = std::fs::read_to_string(out.join("zoom_cdf.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("ratio,cum_fraction"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert!(!rows.is_empty() && rows.len() <= 10);
    assert!(rows.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    assert_eq!(rows.last().unwrap().1, 1.0);

    let summary = std::fs::read_to_string(out.join("zoom_summary.tsv")).unwrap();
    assert_eq!(summary, String::from_utf8(stdout).unwrap());
    let at_least: Vec<&str> = summary.lines().filter(|l| l.starts_with("at_least\t")).collect();
    assert_eq!(summary.lines().next(), Some("n\t10"));
    assert_eq!(at_least.len(), 3);
    assert!(at_least[0].starts_with("at_least\t1.0\t"));
    assert!(at_least[2].starts_with("at_least\t4.0\t"));
}

#[test]
fn stats_json_format() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("corpus.tsv");
    std::fs::write(&manifest, "a\t1000\t1000\nb\t100\t400\n").unwrap();
    let out = dir.path().join("stats");
    let args = StatsArgs {
        format: CdfFormat::Json,
        ..stats_args(&manifest, &out)
    };
    assert_eq!(run_stats(&args, &mut Vec::new()), 0);
    let points: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("zoom_cdf.json")).unwrap()).unwrap();
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[1]["cum_fraction"], 1.0);
}

#[test]
fn stats_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stats");
    assert_eq!(run_stats(&stats_args(&dir.path().join("absent.tsv"), &out), &mut Vec::new()), 3);

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "# nothing\n").unwrap();
    assert_eq!(run_stats(&stats_args(&empty, &out), &mut Vec::new()), 1);

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "a\t10\tzero\n").unwrap();
    assert_eq!(run_stats(&stats_args(&bad, &out), &mut Vec::new()), 1);
}

#[test]
fn inspect_reports_and_rejects_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_dfim(dir.path(), "g.dfim", &golden_image());
    let out = dir.path().join("out");
    assert_eq!(run_tokenize(&tokenize_args(golden_pipeline(), &out, vec![img]), &mut Vec::new()).exit_code, 0);
    let file = out.join("g.dftk");

    let result = dragonfly(&["inspect", file.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(0));
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.contains("image tokens: 2016\n"), "{text}");
    assert!(text.contains("separators: 40\n"));
    assert!(text.contains("segments: 41\n"));

    let bytes = std::fs::read(&file).unwrap();
    let truncated = dir.path().join("t.dftk");
    std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
    let result = dragonfly(&["inspect", truncated.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    assert!(matches!(
        InspectReport::from_bytes(&bytes[..bytes.len() - 5]),
        Err(dragonfly_core::Error::Format(_))
    ));
    assert_eq!(dragonfly(&["inspect", dir.path().join("nope.dftk").to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn separator_policy_none_has_no_separators() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_dfim(dir.path(), "a.dfim", &pattern(70, 33, 4));
    let out = dir.path().join("out");
    for (policy, expected) in [
        (SeparatorPolicy::None, 0),
        (SeparatorPolicy::BetweenCropsOnly, 39),
        (SeparatorPolicy::BetweenAll, 40),
    ] {
        let pipeline = PipelineArgs {
            separator_policy: Some(policy),
            ..small_pipeline()
        };
        let outcome = run_tokenize(&tokenize_args(pipeline, &out, vec![img.clone()]), &mut Vec::new());
        assert_eq!(outcome.exit_code, 0);
        let seq = tokenfile::read(&out.join("a.dftk")).unwrap();
        assert_eq!((seq.image_token_count(), seq.separator_count()), (2016, expected));
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let inputs: Vec<_> = (0..6)
        .map(|i| write_dfim(dir.path(), &format!("i{i}.dfim"), &pattern(20 + i * 37, 90 - i * 11, i as u8)))
        .collect();
    let mut results = Vec::new();
    for workers in [1, 4] {
        let out = dir.path().join(format!("out{workers}"));
        let args = dragonfly_core::cli::TokenizeArgs {
            workers,
            ..tokenize_args(small_pipeline(), &out, inputs.clone())
        };
        assert_eq!(run_tokenize(&args, &mut Vec::new()).exit_code, 0);
        let files: Vec<Vec<u8>> = (0..6).map(|i| std::fs::read(out.join(format!("i{i}.dftk"))).unwrap()).collect();
        results.push(files);
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn manifest_input_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    write_dfim(dir.path(), "x.dfim", &pattern(25, 25, 9));
    let list = dir.path().join("inputs.tsv");
    std::fs::write(&list, "first\tx.dfim\n").unwrap();
    let out = dir.path().join("out");
    let mut args = tokenize_args(small_pipeline(), &out, vec![]);
    args.manifest = Some(list);
    let a = run_tokenize(&args, &mut Vec::new()).manifest.unwrap();
    assert!(out.join("first.dftk").exists());

    args.pipeline.seed = Some(4);
    let b = run_tokenize(&args, &mut Vec::new()).manifest.unwrap();
    assert_ne!(a.config_digest, b.config_digest);
}

#[test]
fn bench_runs() {
    let result = dragonfly(&["bench", "--images", "2", "--max-side", "200", "--encoder-dim", "4", "--proj-dim", "4"]);
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stderr));
    assert!(!result.stdout.is_empty());
}
