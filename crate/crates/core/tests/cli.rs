//! End-to-end checks of the command-line surface: file formats, exit
//! codes, and determinism of emitted artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use pidae::data::{read_dataset, Variable, RTU_COUNT, STEPS_PER_DAY};

fn pidae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pidae"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn pidae")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Raw export with one sample per half-hour bin; `skip_last` drops the
/// final bin of the last day, leaving it incomplete.
fn write_raw_file(path: &Path, days: usize, skip_last: bool) {
    let mut text = String::from("timestamp");
    for prefix in ["t_sa", "t_ra", "t_ma", "t_oa", "v_sa"] {
        for i in 1..=RTU_COUNT {
            write!(text, ",{prefix}_{i}").unwrap();
        }
    }
    text.push_str(",t_shw,t_rhw,v_shw\n");
    for day in 0..days {
        for slot in 0..STEPS_PER_DAY {
            if skip_last && day == days - 1 && slot == STEPS_PER_DAY - 1 {
                continue;
            }
            let (h, m) = (slot / 2, if slot % 2 == 0 { 0 } else { 30 });
            write!(text, "2021-03-{:02}T{h:02}:{m:02}:00", day + 1).unwrap();
            let phase = slot as f64 * 0.13 + day as f64;
            for value in [
                [15.0 + phase.sin(); 4], // t_sa
                [21.0 + 0.5 * phase.cos(); 4],
                [18.0; 4],
                [12.0 + 2.0 * phase.sin(); 4],
                [1.0 + 0.1 * (day as f64); 4], // v_sa
            ] {
                for v in value {
                    write!(text, ",{v}").unwrap();
                }
            }
            write!(text, ",45.0,{},3.6", 40.0 - phase.sin()).unwrap();
            text.push('\n');
        }
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn prepare_slices_complete_days() {
    let dir = tempfile::tempdir().unwrap();
    write_raw_file(&dir.path().join("raw.csv"), 3, true);
    let out = pidae(
        dir.path(),
        &["prepare", "--input", "raw.csv", "--output", "ds.csv"],
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("prepared 2 complete days (1 dropped)"), "{stdout}");

    let ds = read_dataset(&dir.path().join("ds.csv")).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.variables(), Variable::ALL.to_vec());
}

#[test]
fn synth_files_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = pidae(
            dir.path(),
            &["--seed", "9", "synth", "--days", "6", "--output", name],
        );
        assert_success(&out);
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn filter_reports_and_case2_subset() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&pidae(
        dir.path(),
        &["synth", "--days", "10", "--output", "ds.csv"],
    ));
    let out = pidae(
        dir.path(),
        &[
            "filter",
            "--dataset",
            "ds.csv",
            "--output",
            "sweep.csv",
            "--case2-output",
            "case2.csv",
        ],
    );
    assert_success(&out);
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("iqr_cool_kw,iqr_heat_kw,days,pcc_1"));
    // Zero-threshold row retains every day.
    assert!(sweep.lines().nth(1).unwrap().starts_with("0,0,10,"));
    let case2 = read_dataset(&dir.path().join("case2.csv")).unwrap();
    assert!(case2.len() <= 10);
}

#[test]
fn train_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("quick.toml"),
        "[harness]\nmax_epochs = 4\npatience = 10\nrestarts = 1\n",
    )
    .unwrap();
    assert_success(&pidae(
        dir.path(),
        &["synth", "--days", "12", "--output", "ds.csv"],
    ));
    let out = pidae(
        dir.path(),
        &[
            "--config",
            "quick.toml",
            "train",
            "--synthetic",
            "--synth-days",
            "12",
            "--model",
            "pi_dae",
            "--tr",
            "0.5",
            "--cr",
            "0.2",
            "--output",
            "model.json",
            "--history",
            "history.csv",
        ],
    );
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("coefficients:"));
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 4);

    let out = pidae(
        dir.path(),
        &[
            "evaluate",
            "--dataset",
            "ds.csv",
            "--checkpoint",
            "model.json",
            "--cr",
            "0.4",
            "--output",
            "eval.csv",
        ],
    );
    assert_success(&out);
    let eval = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert!(eval.starts_with("cr,variable,rmse,days"));
    // One row per corruptible variable.
    assert_eq!(eval.lines().count(), 1 + 3);
}

#[test]
fn ablation_writes_reports_and_flags_failures() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("quick.toml"),
        concat!(
            "[harness]\n",
            "max_epochs = 3\n",
            "restarts = 1\n",
            "split_seeds = 1\n",
            "training_rates = [0.5]\n",
            "corruption_rates = [0.4]\n",
        ),
    )
    .unwrap();
    let out = pidae(
        dir.path(),
        &[
            "--config",
            "quick.toml",
            "ablation",
            "--synthetic",
            "--synth-days",
            "12",
            "--models",
            "lin,knn,univariate_dae_1",
            "--out-dir",
            "reports",
        ],
    );
    assert_success(&out);
    for file in [
        "ablation_rmse.csv",
        "ablation_rmse_by_tr.csv",
        "ablation_cr_std.csv",
        "coefficients.csv",
        "eval_masks.csv",
        "failures.csv",
    ] {
        assert!(dir.path().join("reports").join(file).exists(), "{file}");
    }

    // A dataset too small to split makes every cell fail: exit code 3.
    let out = pidae(
        dir.path(),
        &[
            "--config",
            "quick.toml",
            "ablation",
            "--synthetic",
            "--synth-days",
            "2",
            "--models",
            "lin",
            "--out-dir",
            "reports2",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag: usage error.
    let out = pidae(dir.path(), &["synth", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown model kind: usage error.
    let out = pidae(
        dir.path(),
        &[
            "train", "--synthetic", "--model", "nope", "--tr", "0.5", "--cr", "0.2",
            "--output", "m.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    // Missing input file: data error.
    let out = pidae(
        dir.path(),
        &["prepare", "--input", "missing.csv", "--output", "ds.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    // Malformed dataset file: data error.
    std::fs::write(dir.path().join("bad.csv"), "date,variable,v00\n").unwrap();
    let out = pidae(dir.path(), &["filter", "--dataset", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
