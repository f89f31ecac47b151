//! Run a small ablation matrix and print the comparison table.
//!
//! Usage: cargo run --release -p wapat --example ablation -- [steps] [seeds] [batch_s] [hidden] [n_train]

use std::collections::BTreeMap;
use std::time::Instant;

use wapat::adversary::AttackConfig;
use wapat::augment::NoiseBank;
use wapat::datagen::{default_domain_profiles, generate_corpus, CorpusSpec};
use wapat::frontend::FrontendSpec;
use wapat::model::ScheduleSpec;
use wapat::trainer::{run_ablation, AblationVariant, TrainConfig, TrainMode};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric args"))
        .collect();
    let total_steps = *args.first().unwrap_or(&2000);
    let n_seeds = *args.get(1).unwrap_or(&1);
    let batch_s = *args.get(2).unwrap_or(&5);
    let hidden = *args.get(3).unwrap_or(&48);
    let n_train = *args.get(4).unwrap_or(&400);

    let frontend = FrontendSpec::default();
    let bank = NoiseBank::synthetic_default();

    let mut corpus_spec = CorpusSpec::clean(10, n_train, 1000);
    corpus_spec.utt_len = (3, 5);
    let corpus = generate_corpus(&corpus_spec).unwrap();

    let mut suites = BTreeMap::new();
    let mut clean_eval = CorpusSpec::clean(10, 40, 2000);
    clean_eval.utt_len = (3, 5);
    suites.insert("clean".to_string(), generate_corpus(&clean_eval).unwrap());
    for (name, profile) in default_domain_profiles() {
        let mut spec = CorpusSpec::clean(10, 40, 3000 + name.len() as u64);
        spec.utt_len = (3, 5);
        spec.domain_profile = profile;
        suites.insert(name, generate_corpus(&spec).unwrap());
    }

    let variants = vec![
        AblationVariant { label: "no_at".into(), mode: TrainMode::NoAt, epsilon: 0.0 },
        AblationVariant { label: "pat".into(), mode: TrainMode::Pat, epsilon: 0.01 },
        AblationVariant { label: "wapat".into(), mode: TrainMode::Wapat, epsilon: 0.01 },
        AblationVariant { label: "wapat_half".into(), mode: TrainMode::Wapat, epsilon: 0.005 },
        AblationVariant { label: "wapat_150pct".into(), mode: TrainMode::Wapat, epsilon: 0.015 },
    ];

    for seed in 0..n_seeds as u64 {
        let base = TrainConfig {
            mode: TrainMode::NoAt,
            attack: AttackConfig::default(),
            schedule: ScheduleSpec::new(3e-3, [0.1, 0.4, 0.5], total_steps).unwrap(),
            batch_seconds: batch_s as f64,
            total_steps,
            seed,
            vocab: 10,
            hidden,
            waveform_attack_steps: 5,
        };
        let t0 = Instant::now();
        let rows =
            run_ablation(&base, &variants, &corpus, &suites, "clean", &frontend, &bank).unwrap();
        println!("== seed {seed} ({:.1}s)", t0.elapsed().as_secs_f64());
        println!("{}", wapat::trainer::render_ablation_table(&rows));
        for row in &rows {
            if let Ok(eval) = &row.outcome {
                let per: Vec<String> = eval
                    .per_dataset
                    .iter()
                    .map(|(k, v)| format!("{k}={:.1}", 100.0 * v.value()))
                    .collect();
                println!("   {:<14} {}", row.variant.label, per.join(" "));
            }
        }
    }
}
