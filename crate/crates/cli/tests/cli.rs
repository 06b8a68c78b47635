use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use liverformer_cli::Cli;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liverformer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "phantom.dims = 8 24 24\naugment.pyramid_levels = 1\naugment.iterations_per_level = 3\n";

/// Every leaf subcommand with its path of names.
fn leaves(cmd: &clap::Command, path: Vec<String>, out: &mut Vec<(Vec<String>, clap::Command)>) {
    let subs: Vec<_> = cmd.get_subcommands().filter(|s| s.get_name() != "help").collect();
    if subs.is_empty() {
        out.push((path.clone(), cmd.clone()));
    }
    for s in subs {
        let mut p = path.clone();
        p.push(s.get_name().to_string());
        leaves(s, p, out);
    }
}

#[test]
fn help_documents_every_flag() {
    let mut all = Vec::new();
    leaves(&Cli::command(), Vec::new(), &mut all);
    let names: Vec<String> = all.iter().map(|(p, _)| p.join(" ")).collect();
    for want in [
        "phantom gen", "preprocess", "register", "augment", "train", "predict", "evaluate", "compare", "view",
    ] {
        assert!(names.iter().any(|n| n == want), "missing subcommand {want}");
    }
    for (path, cmd) in &all {
        let mut args: Vec<&str> = path.iter().map(String::as_str).collect();
        args.push("--help");
        let o = bin(&args);
        assert!(o.status.success(), "{args:?}");
        let help = stdout(&o);
        for arg in cmd.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "{args:?} help lacks --{long}");
                assert!(arg.get_help().is_some() || long == "help" || long == "version", "--{long} undocumented");
            }
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    let o = bin(&["evaluate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["compare", "--reports", "only-one.json"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["evaluate", "--pred", "missing.nii", "--truth", "missing.nii", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error: ") && err.lines().count() == 1, "{err}");
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "train.nonsense = 1\n").unwrap();
    let o = bin(&["phantom", "gen", "--n", "1", "--out", p(dir.path()), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_identical_labels_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    assert!(bin(&["phantom", "gen", "--n", "2", "--seed", "4", "--out", p(&data), "--config", p(&cfg)]).status.success());
    let manifest = data.join("manifest.json");
    let out = dir.path().join("eval");
    let o = bin(&["evaluate", "--pred", p(&manifest), "--truth", p(&manifest), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.starts_with("summary")).collect();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let dice: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(dice, 1.0, "{row}");
    }
    assert!(out.join("report.json").exists());
    assert!(stdout(&o).contains("1.000 ± 0.000"));

    // single-volume form and PGM export
    let labels = data.join("labels/phantom-00004.nii");
    let o = bin(&["evaluate", "--pred", p(&labels), "--truth", p(&labels), "--out", p(&out)]);
    assert!(o.status.success());
    let pgm = dir.path().join("s.pgm");
    assert!(bin(&["view", "--in", p(&labels), "--labels", "--out", p(&pgm)]).status.success());
    assert!(std::fs::read(&pgm).unwrap().starts_with(b"P5\n24 24\n255\n"));
}

#[test]
fn augment_counts_one_template_over_87() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("pool");
    assert!(bin(&["phantom", "gen", "--n", "87", "--out", p(&data), "--config", p(&cfg)]).status.success());
    let manifest = data.join("manifest.json");
    let out = dir.path().join("aug");
    let o = bin(&[
        "augment", "--manifest", p(&manifest), "--templates", "phantom-00000", "--out", p(&out), "--config", p(&cfg),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("synthesized: 172"), "{}", stdout(&o));
    let expanded = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert_eq!(expanded.matches("\"id\"").count(), 87 + 172);

    let o = bin(&[
        "augment", "--manifest", p(&manifest), "--templates", "phantom-00000,phantom-00001,phantom-00002",
        "--out", p(&out), "--plan-only",
    ]);
    let text = stdout(&o);
    assert!(text.contains("synthesized: 516") && text.contains("510"), "{text}");
    let o = bin(&[
        "augment", "--manifest", p(&manifest), "--templates", "phantom-00000,phantom-00001,phantom-00002",
        "--out", p(&out), "--plan-only", "--partner-rule", "exclude-templates",
    ]);
    assert!(stdout(&o).contains("synthesized: 504"));
}
