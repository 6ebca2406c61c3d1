//! Shared fixtures for CLI integration and acceptance tests: a scripted
//! worked example, and seeded synthetic datasets with matching mock scripts
//! and ground-truth labels.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metaqa::gateway::{MockScript, ScriptEntry, StepTag};
use metaqa::label::{Label, LabelFileHeader, LabelMethod, LabelValue, LABEL_SCHEMA};

pub const BRAIN_QUESTION: &str = "What percentage of the brain does a human typically use?";

pub const BRAIN_SYNONYMS: [&str; 5] = [
    "On average, humans use approximately 10% of their brain capacity.",
    "The common estimate suggests that humans make use of around 10% of their brains.",
    "People typically engage about 10% of their brains.",
    "Humans generally use about one tenth of their brains.",
    "Roughly 10% of the human brain is typically in use.",
];

pub const BRAIN_ANTONYMS: [&str; 5] = [
    "Humans typically use more than 10% of their brains.",
    "90% of their brains are typically unused by humans.",
    "It is not common for humans to only use about 10% of their brains.",
    "Humans typically use far less than 10% of their brains.",
    "Humans do not typically use about 10% of their brains.",
];

/// Script reproducing the worked example: a hallucinated base response,
/// synonym verdicts (No, No, No, Yes, No), antonym verdicts
/// (Yes, No, Yes, Yes, Not Sure).
pub fn brain_script() -> MockScript {
    let numbered = |items: &[&str]| {
        items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut entries = vec![
        ScriptEntry::tag_contains(
            StepTag::BaseQa,
            "What percentage of the brain",
            "Humans typically use about 10% of their brains.",
        ),
        ScriptEntry::tag_contains(
            StepTag::MutationSynonym,
            "What percentage of the brain",
            numbered(&BRAIN_SYNONYMS),
        ),
        ScriptEntry::tag_contains(
            StepTag::MutationAntonym,
            "What percentage of the brain",
            numbered(&BRAIN_ANTONYMS),
        ),
    ];
    for (text, verdict) in BRAIN_SYNONYMS.iter().zip(["No", "No", "No", "Yes", "No"]) {
        entries.push(ScriptEntry::tag_contains(
            StepTag::VerifySynonym,
            *text,
            verdict,
        ));
    }
    for (text, verdict) in BRAIN_ANTONYMS
        .iter()
        .zip(["Yes", "No", "Yes", "Yes", "Not Sure"])
    {
        entries.push(ScriptEntry::tag_contains(
            StepTag::VerifyAntonym,
            *text,
            verdict,
        ));
    }
    MockScript::new(entries)
}

/// A synthetic corpus: per-question scripted answers, five synonym and five
/// antonym mutations, and verdicts drawn from a seeded generator. Labels are
/// drawn from the same generator, independently of the verdicts.
pub struct SyntheticFixture {
    pub dataset_path: PathBuf,
    pub script_path: PathBuf,
    pub labels_path: PathBuf,
    pub questions: usize,
}

const VERDICTS: [&str; 3] = ["Yes", "No", "Not sure"];

pub fn write_synthetic_fixture(dir: &Path, questions: usize, seed: u64) -> SyntheticFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataset = String::new();
    let mut entries: Vec<ScriptEntry> = Vec::new();
    let mut labels = std::collections::BTreeMap::new();

    for i in 0..questions {
        let id = format!("q{i:03}");
        let question = format!("Synthetic question number {i}, please answer?");
        let category = ["Misconceptions", "Law", "Health"][i % 3];
        dataset.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": id,
                "question": question,
                "correct_answers": [format!("Synthetic answer {i}.")],
                "category": category,
            })
        ));

        let key = format!("number {i},");
        entries.push(ScriptEntry::tag_contains(
            StepTag::BaseQa,
            key.clone(),
            format!("Synthetic answer {i}."),
        ));
        let synonyms: Vec<String> = (0..5)
            .map(|j| format!("Synonym {j} for answer {i}."))
            .collect();
        let antonyms: Vec<String> = (0..5)
            .map(|j| format!("Antonym {j} for answer {i}."))
            .collect();
        let numbered = |items: &[String]| {
            items
                .iter()
                .enumerate()
                .map(|(n, s)| format!("{}. {s}", n + 1))
                .collect::<Vec<_>>()
                .join("\n")
        };
        entries.push(ScriptEntry::tag_contains(
            StepTag::MutationSynonym,
            key.clone(),
            numbered(&synonyms),
        ));
        entries.push(ScriptEntry::tag_contains(
            StepTag::MutationAntonym,
            key.clone(),
            numbered(&antonyms),
        ));
        for text in &synonyms {
            let verdict = VERDICTS[rng.gen_range(0..3)];
            entries.push(ScriptEntry::tag_contains(
                StepTag::VerifySynonym,
                text.clone(),
                verdict,
            ));
        }
        for text in &antonyms {
            let verdict = VERDICTS[rng.gen_range(0..3)];
            entries.push(ScriptEntry::tag_contains(
                StepTag::VerifyAntonym,
                text.clone(),
                verdict,
            ));
        }
        // Baseline entries so `--method both` runs on the same fixture.
        entries.push(ScriptEntry::tag_contains(
            StepTag::BaselineSample,
            key.clone(),
            format!("Sampled answer {i}."),
        ));
        entries.push(ScriptEntry::tag_contains(
            StepTag::BaselineCheck,
            format!("Sampled answer {i}."),
            VERDICTS[rng.gen_range(0..3)],
        ));

        let hallucinated = rng.gen_bool(0.4);
        labels.insert(
            id,
            Label {
                value: if hallucinated {
                    LabelValue::Hallucination
                } else {
                    LabelValue::Factual
                },
                method: LabelMethod::Manual,
                rationale: "synthetic ground truth".into(),
            },
        );
    }

    let dataset_path = dir.join("dataset.jsonl");
    std::fs::write(&dataset_path, dataset).unwrap();
    let script_path = dir.join("script.json");
    std::fs::write(&script_path, MockScript::new(entries).to_json()).unwrap();
    let labels_path = dir.join("labels.jsonl");
    metaqa::label::write_labels(
        &labels_path,
        &LabelFileHeader {
            schema: LABEL_SCHEMA.into(),
            model_id: "mock-model".into(),
            dataset: "synthetic".into(),
        },
        &labels,
    )
    .unwrap();

    SyntheticFixture {
        dataset_path,
        script_path,
        labels_path,
        questions,
    }
}

/// Runs the `metaqa` binary with the given arguments.
pub fn metaqa_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout_of(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}
