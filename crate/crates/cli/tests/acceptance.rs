//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Run with `cargo test -p maskpos-cli --test acceptance`.

use std::process::{Command, ExitCode};

use maskpos_cli::acceptance::{Outcome, Suite, RENDER_EXAMPLE};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maskpos"))
}

/// The binary itself must reproduce results byte for byte and render the
/// reference example exactly.
fn binary_checks() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut notes = Vec::new();
    let mut passed = true;

    let sim = |sub: &str| {
        bin()
            .args(["simulate", "--mode", "nope", "--trials", "500", "--seed", "7", "--alpha", "0.2"])
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .expect("spawn maskpos")
            .status
            .success()
    };
    let same = sim("a")
        && sim("b")
        && ["layer2_gram_mean.csv", "layer4_mean.csv", "manifest.txt"].iter().all(|f| {
            std::fs::read(dir.path().join("a").join(f)).ok()
                == std::fs::read(dir.path().join("b").join(f)).ok()
        });
    passed &= same;
    notes.push(format!("repeated CLI runs {}", if same { "identical" } else { "differ" }));

    let csv = dir.path().join("example.csv");
    std::fs::write(&csv, "1,0\n0.5,1\n").expect("write csv");
    let pgm = dir.path().join("example.pgm");
    let ok = bin().arg("render").arg(&csv).arg(&pgm).output().expect("spawn").status.success()
        && std::fs::read(&pgm).ok().as_deref() == Some(RENDER_EXAMPLE);
    passed &= ok;
    notes.push(format!("CLI render {}", if ok { "exact" } else { "wrong" }));

    Outcome {
        id: 0,
        name: "binary end to end",
        passed,
        detail: notes.join("; "),
    }
}

fn main() -> ExitCode {
    let suite = Suite::new();
    let mut outcomes = Vec::new();
    for outcome in suite.run_all() {
        println!("{outcome}");
        outcomes.push(outcome);
    }
    let extra = binary_checks();
    println!("{extra}");
    outcomes.push(extra);

    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.id.to_string())
        .collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        outcomes.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
