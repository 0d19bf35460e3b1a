//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints exactly one PASS or FAIL line.

// Checks are written as `x < bound` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use clap::Parser;
use peft_ser::audit::{millions, param_table, TABLE_ROWS};
use peft_ser::data::{folds_for_speakers, synth_corpus, Example, Gender, SplitScheme, SynthOptions};
use peft_ser::eval::{demographic_parity, equality_of_odds};
use peft_ser::gradcheck::{gradcheck, GradcheckConfig, TOLERANCE};
use peft_ser::peft::merge_lora;
use peft_ser::pipeline::{default_grids, grid};
use peft_ser::trainer::{train, TrainConfig, Trainer};
use peft_ser::{BackboneConfig, HeadConfig, Model, PeftConfig, PeftKind, PeftState, Tensor};
use peft_ser_cli::{execute, Cli};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let t = started.elapsed();
    if t > limit {
        return Err(format!("took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()));
    }
    Ok(())
}

/// The learnability corpus and its first speaker-independent fold.
fn corpus_fold() -> (Vec<Example>, Vec<Example>) {
    let ex = synth_corpus(&SynthOptions {
        n_per_class: 50,
        n_speakers: 10,
        seed: 0,
        ..Default::default()
    })
    .expect("synthetic corpus")
    .examples(6.0);
    let speakers: Vec<&str> = ex.iter().map(|e| e.speaker.as_str()).collect();
    let fold = folds_for_speakers(&speakers, &SplitScheme::KFold { k: 5 })
        .expect("folds")
        .remove(0);
    let pick = |idx: &[usize]| idx.iter().map(|&i| ex[i].clone()).collect();
    (pick(&fold.train), pick(&fold.val))
}

fn toy_model(kind: PeftKind, seed: u64) -> Model {
    let bb = BackboneConfig::toy();
    Model::new(bb, PeftConfig::new(kind), HeadConfig::for_backbone(&bb), seed).expect("toy model")
}

fn random_inputs(n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.random_range(3..=60);
            Tensor::normal(&[t, 16], 1.0, &mut rng)
        })
        .collect()
}

fn parameter_table() -> Result<String, String> {
    let started = Instant::now();
    // Cells as printed, in downstream / adapter / prompt / LoRA order.
    let printed: [[&str; 4]; 5] = [
        ["0.3", "0.40", "0.01", "0.06"],
        ["0.33", "0.79", "0.02", "0.12"],
        ["0.4", "2.37", "0.05", "0.37"],
        ["0.4", "2.37", "0.05", "0.37"],
        ["0.4", "2.37", "0.05", "0.37"],
    ];
    let rows = param_table().map_err(|e| e.to_string())?;
    ensure!(rows.len() == TABLE_ROWS.len(), "expected {} rows", TABLE_ROWS.len());
    for (row, want) in rows.iter().zip(printed) {
        for (n, cell) in row.cells().into_iter().zip(want) {
            let decimals = cell.split('.').nth(1).map_or(0, str::len);
            let got = format!("{:.*}", decimals, n as f64 / 1e6);
            ensure!(got == cell, "{} cell {n} prints as {got}, table says {cell}", row.model);
        }
    }

    let mut out = Vec::new();
    let cli = Cli::try_parse_from(["peft-ser", "count-params", "--table", "--json"]).map_err(|e| e.to_string())?;
    execute(cli.command, &mut out).map_err(|e| e.to_string())?;
    let from_cli: serde_json::Value = serde_json::from_slice(&out).map_err(|e| e.to_string())?;
    ensure!(
        from_cli == serde_json::to_value(&rows).unwrap(),
        "count-params --table disagrees with the library table"
    );
    within(started, Duration::from_secs(1))?;
    Ok(format!(
        "20 cells match, e.g. Whisper Small adapter {}",
        millions(rows[2].adapter)
    ))
}

fn gradient_check() -> Result<String, String> {
    let started = Instant::now();
    let report = gradcheck(&GradcheckConfig {
        seed: 7,
        directions: 20,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    ensure!(report.kinds.len() == 5, "checked {} kinds", report.kinds.len());
    for k in &report.kinds {
        ensure!(
            k.max_rel_err < TOLERANCE,
            "{}: relative error {:.3e}",
            k.kind,
            k.max_rel_err
        );
    }
    ensure!(report.passed, "report marked failed");
    within(started, Duration::from_secs(60))?;
    Ok(format!(
        "5 kinds x 20 directions, max relative error {:.2e}",
        report.max_rel_err
    ))
}

fn lora_merge() -> Result<String, String> {
    let (train_set, _) = corpus_fold();
    let model = toy_model(PeftKind::Lora, 0);
    let before = model.backbone.checksum();
    let mut trainer = Trainer::new(model, TrainConfig::default()).map_err(|e| e.to_string())?;
    let mut order: Vec<&Example> = train_set.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while trainer.steps() < 200 {
        order.shuffle(&mut rng);
        for batch in order.chunks(32) {
            if trainer.steps() == 200 {
                break;
            }
            trainer.step(batch).map_err(|e| e.to_string())?;
        }
    }
    let m = trainer.into_model();
    ensure!(
        m.backbone.checksum() == before,
        "frozen backbone changed during LoRA training"
    );
    let moved = m
        .peft
        .params()
        .iter()
        .filter(|p| p.name.ends_with("up"))
        .any(|p| p.tensor.data().iter().any(|&v| v != 0.0));
    ensure!(moved, "LoRA up-projections are still zero after 200 steps");

    let merged = merge_lora(&m.backbone, &m.peft).map_err(|e| e.to_string())?;
    let plain = PeftState::new(merged.config(), &PeftConfig::new(PeftKind::None), 0).map_err(|e| e.to_string())?;
    let merged_model = Model::from_parts(merged, plain, m.head.clone());
    let mut worst: f64 = 0.0;
    for x in random_inputs(10, 3) {
        let a = m.predict_logits(&x).map_err(|e| e.to_string())?;
        let b = merged_model.predict_logits(&x).map_err(|e| e.to_string())?;
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
        let ha = m
            .backbone
            .forward_values(&x, Some(&m.peft))
            .map_err(|e| e.to_string())?;
        let hb = merged_model
            .backbone
            .forward_values(&x, None)
            .map_err(|e| e.to_string())?;
        for (u, v) in ha.iter().zip(&hb) {
            worst = worst.max(u.max_abs_diff(v));
        }
    }
    ensure!(worst < 1e-9, "merged and hooked outputs differ by {worst:e}");
    Ok(format!("200 steps, max |difference| {worst:.2e}"))
}

fn identity_at_init() -> Result<String, String> {
    let inputs = random_inputs(10, 4);
    let base = toy_model(PeftKind::None, 9);
    for kind in [PeftKind::Adapter, PeftKind::ParallelAdapter, PeftKind::Lora] {
        let m = toy_model(kind, 9);
        for x in &inputs {
            let a = base.predict_logits(x).map_err(|e| e.to_string())?;
            let b = m.predict_logits(x).map_err(|e| e.to_string())?;
            let same = a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits());
            ensure!(same, "{kind}: logits differ from the plain model at initialization");
        }
    }
    Ok("adapter, parallel_adapter, lora bit-identical on 10 inputs".into())
}

fn frozen_checksum() -> Result<String, String> {
    let (train_set, val) = corpus_fold();
    let cfg = TrainConfig {
        max_epochs: 2,
        ..Default::default()
    };
    for kind in PeftKind::ALL {
        let m = toy_model(kind, 1);
        let before = m.backbone.checksum();
        let out = train(m, &train_set, &val, cfg).map_err(|e| e.to_string())?;
        ensure!(
            out.model.backbone.checksum() == before,
            "{kind}: backbone checksum changed"
        );
    }
    Ok("5 configurations unchanged after training".into())
}

fn learnability() -> Result<String, String> {
    let started = Instant::now();
    let (train_set, val) = corpus_fold();
    let mut summary = Vec::new();
    for kind in [
        PeftKind::Adapter,
        PeftKind::ParallelAdapter,
        PeftKind::Prompt,
        PeftKind::Lora,
    ] {
        let m = toy_model(kind, 0);
        let before = m.backbone.checksum();
        let out = train(m, &train_set, &val, TrainConfig::default()).map_err(|e| e.to_string())?;
        ensure!(
            out.model.backbone.checksum() == before,
            "{kind}: backbone checksum changed"
        );
        let best = out.report.best_val_uar;
        ensure!(best >= 80.0, "{kind}: best validation UAR {best:.1} below 80");
        summary.push(format!("{kind} {best:.1}"));
    }
    within(started, Duration::from_secs(300))?;
    Ok(format!(
        "best validation UAR: {} in {:.0}s",
        summary.join(", "),
        started.elapsed().as_secs_f64()
    ))
}

/// Brute-force gap between groups, averaged over classes, for the
/// utterances selected by `keep`.
fn brute_gap(preds: &[usize], genders: &[Gender], keep: impl Fn(usize) -> bool, c: usize) -> Option<f64> {
    let share = |g: Gender, class: usize| {
        let members: Vec<usize> = (0..preds.len()).filter(|&i| keep(i) && genders[i] == g).collect();
        let hits = members.iter().filter(|&&i| preds[i] == class).count();
        (!members.is_empty()).then(|| hits as f64 / members.len() as f64)
    };
    let mut gap = 0.0;
    for class in 0..c {
        gap += (share(Gender::Female, class)? - share(Gender::Male, class)?).abs();
    }
    Some(100.0 * gap / c as f64)
}

fn fairness_oracle() -> Result<String, String> {
    const C: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    let mut sets = 0;
    while sets < 100 {
        let n = rng.random_range(4..150);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..C)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..C)).collect();
        let genders: Vec<Gender> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => Gender::Unknown,
                1..=5 => Gender::Female,
                _ => Gender::Male,
            })
            .collect();
        let Some(dp_want) = brute_gap(&preds, &genders, |_| true, C) else {
            continue;
        };
        let strata: Vec<f64> = (0..C)
            .filter_map(|y| brute_gap(&preds, &genders, |i| labels[i] == y, C))
            .collect();
        let dp = demographic_parity(&preds, &genders, C).map_err(|e| e.to_string())?;
        worst = worst.max((dp - dp_want).abs());
        if !strata.is_empty() {
            let eo_want = strata.iter().sum::<f64>() / strata.len() as f64;
            let eo = equality_of_odds(&preds, &labels, &genders, C).map_err(|e| e.to_string())?;
            worst = worst.max((eo - eo_want).abs());
        }

        let swapped: Vec<Gender> = genders
            .iter()
            .map(|g| match g {
                Gender::Female => Gender::Male,
                Gender::Male => Gender::Female,
                Gender::Unknown => Gender::Unknown,
            })
            .collect();
        let dp_swapped = demographic_parity(&preds, &swapped, C).map_err(|e| e.to_string())?;
        ensure!((dp - dp_swapped).abs() < 1e-12, "swapping groups changed DP");

        let mirrored_preds: Vec<usize> = preds.iter().chain(&preds).copied().collect();
        let mirrored_labels: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let mirrored_genders: Vec<Gender> = std::iter::repeat_n(Gender::Female, n)
            .chain(std::iter::repeat_n(Gender::Male, n))
            .collect();
        let dp0 = demographic_parity(&mirrored_preds, &mirrored_genders, C).map_err(|e| e.to_string())?;
        let eo0 =
            equality_of_odds(&mirrored_preds, &mirrored_labels, &mirrored_genders, C).map_err(|e| e.to_string())?;
        ensure!(dp0 == 0.0 && eo0 == 0.0, "identical groups scored DP {dp0}, EO {eo0}");
        sets += 1;
    }
    ensure!(worst < 1e-9, "max deviation from brute force {worst:e}");
    Ok(format!(
        "100 random sets, max |difference| {worst:.1e}; identical groups score 0; swap symmetric"
    ))
}

fn sweep_accounting() -> Result<String, String> {
    let mut points = 0;
    let presets = std::iter::once("toy").chain(TABLE_ROWS.iter().map(|r| r.1));
    for preset in presets {
        let bb = BackboneConfig::preset(preset).map_err(|e| e.to_string())?;
        for (kind, values) in default_grids() {
            for p in grid(kind, &values).map_err(|e| e.to_string())? {
                let state = PeftState::new(&bb, &p, 0).map_err(|e| e.to_string())?;
                let (got, want) = (state.trainable_count(), p.trainable_count(&bb));
                ensure!(got == want, "{preset} {kind}: instantiated {got}, closed form {want}");
                points += 1;
            }
        }
    }
    let bb = BackboneConfig::toy();
    let inputs = random_inputs(3, 8);
    for l in [1, 3, 5] {
        let m = Model::new(bb, PeftConfig::prompt(l), HeadConfig::for_backbone(&bb), 0).map_err(|e| e.to_string())?;
        for x in &inputs {
            let hiddens = m.backbone.forward_values(x, Some(&m.peft)).map_err(|e| e.to_string())?;
            for h in &hiddens {
                ensure!(
                    h.shape() == [x.rows(), bb.hidden],
                    "prompt length {l}: shape {:?}",
                    h.shape()
                );
            }
            let logits = m.predict_logits(x).map_err(|e| e.to_string())?;
            ensure!(logits.len() == 4, "prompt length {l}: {} logits", logits.len());
        }
    }
    Ok(format!(
        "{points} grid points match; prompt outputs keep T x d for l in 1, 3, 5"
    ))
}

fn split_integrity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..1000 {
        let k = rng.random_range(3..=8);
        let n_speakers = rng.random_range(k..=30);
        let mut speakers: Vec<String> = Vec::new();
        for s in 0..n_speakers {
            for _ in 0..rng.random_range(1..=6) {
                speakers.push(format!("s{s}"));
            }
        }
        speakers.shuffle(&mut rng);
        let refs: Vec<&str> = speakers.iter().map(String::as_str).collect();
        let folds = folds_for_speakers(&refs, &SplitScheme::KFold { k }).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(folds.len() == k, "case {case}: {} folds for k={k}", folds.len());
        let mut tested = vec![0usize; refs.len()];
        for f in &folds {
            let who = |idx: &[usize]| idx.iter().map(|&i| refs[i]).collect::<HashSet<_>>();
            let (tr, va, te) = (who(&f.train), who(&f.val), who(&f.test));
            ensure!(
                tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te),
                "case {case} fold {}: a speaker appears in two splits",
                f.index
            );
            let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
            all.sort_unstable();
            ensure!(
                all == (0..refs.len()).collect::<Vec<_>>(),
                "case {case} fold {}: splits are not a partition",
                f.index
            );
            for &i in &f.test {
                tested[i] += 1;
            }
        }
        ensure!(
            tested.iter().all(|&c| c == 1),
            "case {case}: test sets do not cover each utterance once"
        );
    }
    Ok("1000 random cases, no leakage, exact partitions".into())
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("parameter table", parameter_table),
        ("gradient check", gradient_check),
        ("LoRA merge equivalence", lora_merge),
        ("identity at initialization", identity_at_init),
        ("frozen backbone checksum", frozen_checksum),
        ("learnability", learnability),
        ("fairness oracle", fairness_oracle),
        ("sweep accounting", sweep_accounting),
        ("speaker split integrity", split_integrity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
