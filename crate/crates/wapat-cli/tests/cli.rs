//! End-to-end checks of the command surface via the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn wapat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wapat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_quick_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        r#"
seed = 11

[corpus]
vocab_size = 5
n_train = 6
n_eval = 3
utt_len_min = 2
utt_len_max = 3

[train]
mode = "no_at"
total_steps = 4
batch_seconds = 2.0
hidden = 10
"#,
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_generate_train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    let out = wapat(&["generate", "--config", cfg, "--out", "run_a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for split in ["train", "val", "test", "dom_band", "dom_combined", "dom_noise", "dom_pitch", "dom_reverb"] {
        assert!(
            dir.path().join("run_a/corpora").join(split).join("manifest.tsv").exists(),
            "missing {split}"
        );
    }

    let out = wapat(&["train", "--config", cfg, "--out", "run_a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final_clean_loss="), "{stdout}");
    assert!(stdout.contains("mode=no_at"));
    assert!(dir.path().join("run_a/checkpoint.bin").exists());
    assert!(dir.path().join("run_a/train_log.csv").exists());
    let log = std::fs::read_to_string(dir.path().join("run_a/train_log.csv")).unwrap();
    assert!(log.starts_with("step,lr,mode,transform,clean_loss,adv_loss,wag_term\n"));

    let out = wapat(&["evaluate", "--config", cfg, "--out", "run_a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let wer_csv = dir.path().join("run_a/wer.csv");
    let text = std::fs::read_to_string(&wer_csv).unwrap();
    assert!(text.starts_with("dataset,wer_percent\n"));
    assert!(text.lines().last().unwrap().starts_with("macro,"));

    // evaluating the same checkpoint twice gives identical reports
    let out = wapat(
        &["evaluate", "--config", cfg, "--out", "run_a"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&wer_csv).unwrap(), text);

    // drop-rate of the report against itself is all zeros
    let wer = wer_csv.to_str().unwrap().to_string();
    let out = wapat(
        &["report", "--baseline", &wer, "--treated", &wer, "--out", "run_a"],
        dir.path(),
    );
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.starts_with("dataset,drop_percent\n"));
    for line in table.lines().skip(1) {
        assert!(line.ends_with("+0.00") || line.ends_with("na"), "{line}");
    }
}

#[test]
fn identical_checkpoints_for_pat_epsilon_zero_and_no_at() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    let out = wapat(&["generate", "--config", cfg, "--out", "shared"], dir.path());
    assert!(out.status.success());
    // corpora live under shared/; train into separate dirs off the same data
    std::fs::create_dir_all(dir.path().join("m_no/corpora")).unwrap();
    std::fs::create_dir_all(dir.path().join("m_pat/corpora")).unwrap();
    for split in ["train", "val", "test"] {
        for target in ["m_no", "m_pat"] {
            let from = dir.path().join("shared/corpora").join(split);
            let to = dir.path().join(target).join("corpora").join(split);
            copy_dir(&from, &to);
        }
    }

    let out = wapat(
        &["train", "--config", cfg, "--out", "m_no", "--mode", "no_at"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = wapat(
        &["train", "--config", cfg, "--out", "m_pat", "--mode", "pat", "--epsilon", "0"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let a = std::fs::read(dir.path().join("m_no/checkpoint.bin")).unwrap();
    let b = std::fs::read(dir.path().join("m_pat/checkpoint.bin")).unwrap();
    assert_eq!(a, b);
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

#[test]
fn failure_paths_exit_nonzero_with_named_cause() {
    let dir = tempfile::tempdir().unwrap();

    // invalid field value names the field
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[corpus]\nvocab_size = 0\n").unwrap();
    let out = wapat(
        &["generate", "--config", bad.to_str().unwrap(), "--out", "x"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocab_size"));

    // unknown config key rejected
    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "[train]\nmodee = \"pat\"\n").unwrap();
    let out = wapat(
        &["train", "--config", typo.to_str().unwrap(), "--out", "x"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("modee"));

    // training without corpora: nonzero exit, no partial checkpoint
    let cfg = write_quick_config(dir.path());
    let out = wapat(
        &["train", "--config", cfg.to_str().unwrap(), "--out", "empty_run"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("empty_run/checkpoint.bin").exists());

    // evaluate with a missing checkpoint
    let out = wapat(
        &["evaluate", "--config", cfg.to_str().unwrap(), "--out", "empty_run"],
        dir.path(),
    );
    assert!(!out.status.success());
}
