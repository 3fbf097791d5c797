//! Acceptance suite. Runs without the libtest harness so every criterion prints its verdict.
//!
//! cargo test --release --test acceptance            all criteria
//! cargo test --release --test acceptance -- 1 4 10  a selection

mod common;

use std::path::Path;
use std::time::Instant;

use common::oracles::{brute_force_decode, crafted_document, golden, random_distribution, random_entities};
use common::reference::ReferenceTrainer;
use common::{small_corpus, tiny_model, Fixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vancl::backbone::{check_gradients, init_params, Flow, Model, ModelConfig, TokenBatch, TokenDistributions};
use vancl::cli::{run_ablation, AblationOptions, RunConfig, Suite};
use vancl::decode::{viterbi, TransitionMask};
use vancl::document::{entities_from_tags, tags_from_entities, LabelSet, TagSet};
use vancl::eval::{evaluate, score_corpus};
use vancl::paint::{builtin_scheme, paint_document};
use vancl::synthgen::{generate_corpus, generate_document, GenSpec};
use vancl::vancl::loss::{js_row, kl_row};
use vancl::vancl::{consistency_loss, train, DivergenceKind, Mode, TrainConfig, Trainer};
use vancl::Error;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn divergence_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let k = rng.gen_range(2..9);
        let p = random_distribution(&mut rng, k);
        let q = random_distribution(&mut rng, k);
        let kl = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y.max(1e-9)).ln()).sum()
        };
        let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let js = 0.5 * kl(&p, &m) + 0.5 * kl(&q, &m);
        worst = worst
            .max(kl_row(&p, &p).abs())
            .max(js_row(&p, &p).abs())
            .max((js_row(&p, &q) - js_row(&q, &p)).abs())
            .max((js_row(&p, &q) - js).abs())
            .max((kl_row(&p, &q) - kl(&p, &q)).abs())
            .max((js_row(&p, &q) - js_row(&p, &q).clamp(0.0, std::f64::consts::LN_2)).abs());
        let sym = consistency_loss(
            &TokenDistributions::from_rows(&[&p]),
            &TokenDistributions::from_rows(&[&q]),
            DivergenceKind::Kl,
            &[true],
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((sym - 0.5 * (kl(&p, &q) + kl(&q, &p))).abs());
    }
    let disjoint = (js_row(&[1.0, 0.0], &[0.0, 1.0]) - std::f64::consts::LN_2).abs();
    let elapsed = start.elapsed().as_secs_f64();
    check(
        worst < 1e-9 && disjoint < 1e-12 && elapsed < 1.0,
        format!("max deviation {worst:.1e}, {elapsed:.3} s"),
    )
}

fn gradient_check() -> Outcome {
    let fx = Fixture::small(2, 8);
    let (params, outer) = init_params::<f32>(&fx.config, 3);
    let sl = check_gradients::<f32, f64>(&fx.config, &params, None, &fx.sl_batch(), Flow::Sl, 60, 1e-3, 11)
        .map_err(|e| e.to_string())?;
    let ve = check_gradients::<f32, f64>(&fx.config, &params, Some(&outer), &fx.ve_batch(), Flow::Ve, 60, 1e-3, 12)
        .map_err(|e| e.to_string())?;
    let worst = sl.max_rel_err.max(ve.max_rel_err);
    check(
        sl.probes >= 50 && ve.probes >= 50 && worst <= 1e-3,
        format!("{} + {} probes, max relative error {worst:.2e}", sl.probes, ve.probes),
    )
}

fn viterbi_oracle() -> Outcome {
    let tagset = TagSet::new(&LabelSet::funsd());
    let mask = TransitionMask::bio(&tagset);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut agree = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..tagset.len()).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
        let rows: Vec<&[f64]> = scores.iter().map(|r| r.as_slice()).collect();
        let path = viterbi(&rows, &mask).map_err(|e| e.to_string())?;
        agree += usize::from(path == brute_force_decode(&scores, &tagset));
    }
    check(agree == 100, format!("{agree}/100 instances match exhaustive search"))
}

fn painting() -> Outcome {
    let doc = crafted_document();
    let painted = paint_document(&doc, &builtin_scheme(1).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let golden_ok = doc.image.to_ppm() == golden("crafted_source.ppm") && painted.image.to_ppm() == golden("crafted_row1_painted.ppm");

    let spec = GenSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut stray = 0usize;
    for i in 0..50 {
        let d = generate_document(&spec, rng.gen_range(0..10_000), format!("a{i}")).map_err(|e| e.to_string())?;
        let scheme = builtin_scheme(rng.gen_range(1..=8)).map_err(|e| e.to_string())?;
        let p = paint_document(&d, &scheme).map_err(|e| e.to_string())?.image;
        for y in 0..d.image.height() {
            for x in 0..d.image.width() {
                if !d.segments.iter().any(|s| s.pixel_box.contains(x, y)) && p.get(x, y) != d.image.get(x, y) {
                    stray += 1;
                }
            }
        }
    }
    check(golden_ok && stray == 0, format!("golden bytes {}, {stray} changed pixels outside boxes over 50 pages", if golden_ok { "match" } else { "differ" }))
}

fn deployment_invariance() -> Outcome {
    let (corpus, labels) = small_corpus(12, 6, 5);
    let tc = TrainConfig {
        lr: 2e-3,
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let out = train::<f32>(&corpus.train, &[], &labels, &tc, &tiny_model(16)).map_err(|e| e.to_string())?;
    let full = out.model;
    let bytes = full.to_bytes(false).map_err(|e| e.to_string())?;
    let deployed = Model::<f32>::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let refs: Vec<_> = corpus.test.iter().collect();
    let same = full.infer(&refs).map_err(|e| e.to_string())?.0 == deployed.infer(&refs).map_err(|e| e.to_string())?.0;

    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + header_len]).map_err(|e| e.to_string())?;
    let outer_tensors = header["tensors"]
        .as_array()
        .ok_or("checkpoint header lists no tensors")?
        .iter()
        .filter(|t| t["name"].as_str().is_some_and(|n| n.starts_with("outer.")))
        .count();
    check(
        same && outer_tensors == 0 && deployed.outer.is_none() && full.outer.is_some(),
        format!("outputs identical: {same}, outer tensors in deployment checkpoint: {outer_tensors}"),
    )
}

fn baseline_equivalence() -> Outcome {
    let model = ModelConfig {
        dropout_p: 0.1,
        ..tiny_model(16)
    };
    let fx = Fixture::new(Fixture::small(6, 16).docs, LabelSet::funsd(), &model);
    let tc = TrainConfig {
        lr: 2e-3,
        seed: 5,
        ..TrainConfig::default()
    }
    .as_baseline();
    let batches: Vec<_> = fx
        .sl
        .chunks(2)
        .map(|c| TokenBatch::from_prepared(&c.iter().collect::<Vec<_>>()).unwrap())
        .collect();
    let mut ours = Trainer::<f32>::new(fx.config.clone(), tc.clone()).map_err(|e| e.to_string())?;
    let mut reference = ReferenceTrainer::<f32>::new(fx.config.clone(), &tc);
    let mut equal_losses = 0;
    for s in 0..5 {
        let batch = &batches[s % batches.len()];
        let r = ours.train_step(batch, None).map_err(|e| e.to_string())?;
        let l = reference.step(batch);
        equal_losses += usize::from(r.l_final.to_bits() == l.to_bits() && r.l_cons == 0.0);
    }
    let params_equal = ours.params == reference.params;
    check(
        equal_losses == 5 && params_equal,
        format!("{equal_losses}/5 steps bitwise equal, parameters equal: {params_equal}"),
    )
}

struct Desk {
    vancl: Vec<f64>,
    none: Vec<f64>,
    baseline: Vec<f64>,
    seconds: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn desk_experiment() -> Result<Desk, String> {
    let start = Instant::now();
    let spec = GenSpec::default();
    let corpus = generate_corpus(&spec).map_err(|e| e.to_string())?;
    let run = |mode: Mode, baseline: bool| -> Result<Vec<f64>, String> {
        (0..3)
            .map(|seed| {
                let cfg = TrainConfig {
                    lr: 2e-3,
                    epochs: 20,
                    seed,
                    mode,
                    baseline,
                    ..TrainConfig::default()
                };
                let out = train::<f32>(&corpus.train, &[], &spec.labels, &cfg, &ModelConfig::default()).map_err(|e| e.to_string())?;
                Ok(100.0 * evaluate(&out.model, &corpus.test).map_err(|e| e.to_string())?.micro.f1)
            })
            .collect()
    };
    Ok(Desk {
        vancl: run(Mode::Vancl, false)?,
        none: run(Mode::None, false)?,
        baseline: run(Mode::None, true)?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn summary(name: &str, v: &[f64]) -> String {
    format!("{name} {:.2} +- {:.2}", mean(v), std(v))
}

fn vancl_beats_baseline(desk: &Result<Desk, String>) -> Outcome {
    let d = desk.as_ref().map_err(|e| e.clone())?;
    let gap = mean(&d.vancl) - mean(&d.baseline);
    check(
        gap >= 1.0,
        format!("{}, {}, gap {gap:.2} F1 ({:.0} s)", summary("VANCL", &d.vancl), summary("baseline", &d.baseline), d.seconds),
    )
}

fn consistency_matters(desk: &Result<Desk, String>) -> Outcome {
    let d = desk.as_ref().map_err(|e| e.clone())?;
    check(
        mean(&d.none) <= mean(&d.vancl),
        format!("{}, {}", summary("NONE", &d.none), summary("VANCL", &d.vancl)),
    )
}

fn sweeps_resume(dir: &Path) -> Outcome {
    let spec = GenSpec {
        n_train: 20,
        n_test: 6,
        segments_per_doc: 6,
        ..GenSpec::default()
    };
    let data = dir.join("data");
    generate_corpus(&spec)
        .and_then(|c| c.save(&data, &spec.labels, Some(spec.digest())))
        .map_err(|e| e.to_string())?;
    let base = RunConfig {
        train: TrainConfig {
            lr: 2e-3,
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        },
        model: tiny_model(16),
    };
    let mut notes = Vec::new();
    for (suite, rows, kill_at) in [(Suite::Colors, 8, 3), (Suite::Lowres, 10, 4)] {
        let out = dir.join(suite.as_str());
        let mut opts = AblationOptions {
            seeds: vec![0],
            fail_after: Some(kill_at),
            jobs: 2,
        };
        match run_ablation(suite, &base, &data, &out, &opts) {
            Err(Error::Interrupted { completed }) if completed >= kill_at => {}
            other => return Err(format!("{}: expected an interruption, got {:?}", suite.as_str(), other.map(|_| ()))),
        }
        let kept = std::fs::read_dir(out.join("cells")).map_err(|e| e.to_string())?.count();
        opts.fail_after = None;
        let report = run_ablation(suite, &base, &data, &out, &opts).map_err(|e| e.to_string())?;
        let cells = std::fs::read_dir(out.join("cells")).map_err(|e| e.to_string())?.count();
        if report.rows.len() != rows || cells != rows {
            return Err(format!("{}: {} rows, {cells} cells", suite.as_str(), report.rows.len()));
        }
        notes.push(format!("{} {kept} -> {cells} cells", suite.as_str()));
    }
    Ok(notes.join(", "))
}

fn bio_and_duplication() -> Outcome {
    const LABELS: [&str; 3] = ["QUESTION", "ANSWER", "HEADER"];
    let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut round_trips = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..40);
        let ents = random_entities(&mut rng, n, &LABELS);
        let tags = tags_from_entities(&ents, n).map_err(|e| e.to_string())?;
        round_trips += usize::from(tags.is_valid_bio() && entities_from_tags(&tags) == ents);
    }
    let mut invariant = 0;
    for _ in 0..1000 {
        let docs: Vec<_> = (0..rng.gen_range(1..5))
            .map(|_| {
                let n = rng.gen_range(0..30);
                (random_entities(&mut rng, n, &LABELS), random_entities(&mut rng, n, &LABELS))
            })
            .collect();
        let twice: Vec<_> = docs.iter().chain(&docs).cloned().collect();
        let a = score_corpus(&docs, &labels).map_err(|e| e.to_string())?;
        let b = score_corpus(&twice, &labels).map_err(|e| e.to_string())?;
        invariant += usize::from(a.micro == b.micro);
    }
    check(
        round_trips == 1000 && invariant == 1000,
        format!("{round_trips}/1000 round trips, {invariant}/1000 duplication-invariant scores"),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: usize| selected.is_empty() || selected.contains(&n);
    let tmp = tempfile::TempDir::new().expect("temp dir");

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wants(n) {
            let outcome = f();
            let (verdict, detail) = match &outcome {
                Ok(d) => ("PASS", d),
                Err(d) => ("FAIL", d),
            };
            println!("criterion {n:>2} {verdict}  {name}: {detail}");
            results.push((n, name, outcome));
        }
    };
    record(1, "divergence identities", &divergence_identities);
    record(2, "gradient check", &gradient_check);
    record(3, "constrained decoding", &viterbi_oracle);
    record(4, "painting", &painting);
    record(5, "deployment invariance", &deployment_invariance);
    record(6, "baseline equivalence", &baseline_equivalence);
    if wants(7) || wants(8) {
        let desk = desk_experiment();
        record(7, "VANCL beats the single-flow baseline", &|| vancl_beats_baseline(&desk));
        record(8, "consistency term helps", &|| consistency_matters(&desk));
    }
    record(9, "sweeps complete and resume", &|| sweeps_resume(tmp.path()));
    record(10, "tag round trip and metric duplication", &bio_and_duplication);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
