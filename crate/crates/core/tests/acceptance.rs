//! Acceptance checks, one line per criterion:
//!
//! ```text
//! cargo test -p clozecheck --test acceptance
//! ```
//!
//! The full-scale zero-shot check needs a real masked-LM backend and a
//! labeled dev sample; it runs only when `CLOZECHECK_HW_DEV` and
//! `CLOZECHECK_BACKEND_URL` are set (see README).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use clozecheck::entailment::{
    accuracy, loss_and_grad, train, write_model, FeatureSource, FeatureVector, LabeledFeatures, MlpParams,
    TrainConfig,
};
use clozecheck::evaluation::{build_confusion, compute_metrics, f1_score, ErrorCategory};
use clozecheck::pipeline::{self, Backends, ClozeBackendConfig, PipelineConfig};
use clozecheck::{VerificationLabel, Verdict};

use common::example_config;
use VerificationLabel::*;

type Check = fn() -> Result<String, String>;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// label, precision, recall, printed f1
type Row = (VerificationLabel, f64, f64, f64);

const REPORTED_ROWS: [(&str, [Row; 3], f64); 3] = [
    (
        "frozen encoder",
        [(Refutes, 0.36, 0.69, 0.47), (Supports, 0.43, 0.09, 0.15), (Nei, 0.39, 0.35, 0.37)],
        0.33,
    ),
    (
        "fine-tuned encoder",
        [(Refutes, 0.62, 0.55, 0.58), (Supports, 0.54, 0.67, 0.59), (Nei, 0.57, 0.49, 0.53)],
        0.57,
    ),
    (
        "LM as knowledge base",
        [(Refutes, 0.76, 0.38, 0.51), (Supports, 0.41, 0.92, 0.57), (Nei, 0.58, 0.15, 0.24)],
        0.44,
    ),
];

fn reported_rows_arithmetic() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (model, rows, macro_f1) in REPORTED_ROWS {
        let mut f1s = Vec::new();
        for (label, p, r, printed) in rows {
            let f1 = f1_score(p, r);
            worst = worst.max((f1 - printed).abs());
            ensure((f1 - printed).abs() <= 0.01, || {
                format!("{model} {label}: F1({p}, {r}) = {f1:.4}, printed {printed}")
            })?;
            f1s.push(f1);
        }
        for (what, mean) in [
            ("computed", f1s.iter().sum::<f64>() / 3.0),
            ("printed", rows.iter().map(|r| r.3).sum::<f64>() / 3.0),
        ] {
            worst = worst.max((mean - macro_f1).abs());
            ensure((mean - macro_f1).abs() <= 0.01, || {
                format!("{model}: mean of {what} F1s = {mean:.4}, printed macro F1 {macro_f1}")
            })?;
        }
    }
    Ok(format!("9 class rows and 3 macro F1s, max deviation {worst:.4}"))
}

fn example_claims_end_to_end() -> Result<String, String> {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = example_config(out.path());
    let backends = Backends::from_config(&cfg).map_err(|e| e.to_string())?;
    let report = pipeline::run_zero_shot(&cfg, &backends).map_err(|e| e.to_string())?;
    let expected = [
        (1, Supports, None),
        (2, Supports, None),
        (3, Refutes, Some(ErrorCategory::EntityTypeBias)),
        (4, Refutes, Some(ErrorCategory::GenericPrefix)),
        (5, Refutes, Some(ErrorCategory::ShortClaim)),
    ];
    ensure(report.per_claim.len() == 5, || format!("{} claims scored", report.per_claim.len()))?;
    for (o, (id, predicted, category)) in report.per_claim.iter().zip(expected) {
        ensure(
            o.claim_id == id && o.gold == Supports && o.predicted == predicted && o.category == category,
            || format!("claim {}: got {:?} / {:?}, want {predicted:?} / {category:?}", o.claim_id, o.predicted, o.category),
        )?;
    }
    ensure(report.matrix.correct() == 2, || "expected 2 correct".into())?;
    Ok("claims 1-2 SUPPORTS; 3, 4, 5 REFUTES as ENTITY_TYPE_BIAS, GENERIC_PREFIX, SHORT_CLAIM".into())
}

fn gradient_oracle() -> Result<String, String> {
    const STEP: f64 = 1e-5;
    // relative error uses max(|analytic|, |numeric|, FLOOR) as denominator
    const FLOOR: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + instance);
        let mut params = MlpParams::init(5, 4, &mut rng);
        for b in params.b1.iter_mut().chain(params.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let n = rng.random_range(1..=8);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<VerificationLabel> = (0..n).map(|_| VerificationLabel::ALL[rng.random_range(0..3)]).collect();
        let batch: Vec<(&[f64], VerificationLabel)> = xs.iter().map(|x| x.as_slice()).zip(labels).collect();
        let loss = |p: &MlpParams| loss_and_grad(&batch, p).map(|(l, _)| l).map_err(|e| e.to_string());

        let (_, grads) = loss_and_grad(&batch, &params).map_err(|e| e.to_string())?;
        for t in 0..4 {
            for i in 0..grads.tensors()[t].len() {
                let mut plus = params.clone();
                plus.tensors_mut()[t][i] += STEP;
                let mut minus = params.clone();
                minus.tensors_mut()[t][i] -= STEP;
                let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * STEP);
                let analytic = grads.tensors()[t][i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
                worst = worst.max(rel);
                checked += 1;
                ensure(rel <= 1e-4, || {
                    format!("instance {instance}, tensor {t}[{i}]: analytic {analytic:e}, numeric {numeric:e}")
                })?;
            }
        }
    }
    Ok(format!("20 instances, {checked} partials, max relative error {worst:.2e}"))
}

fn clusters(seed: u64, per_class: usize) -> (Vec<LabeledFeatures>, Vec<LabeledFeatures>) {
    const D: usize = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..D).map(|_| unit.sample(&mut rng)).collect()).collect();
    let sample = |n: usize, rng: &mut ChaCha8Rng| -> Vec<LabeledFeatures> {
        let mut out = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..n {
                let x = c.iter().map(|m| m + unit.sample(rng)).collect();
                out.push((FeatureVector::new(x, FeatureSource::Entailment), VerificationLabel::ALL[k]));
            }
        }
        out
    };
    let tr = sample(per_class, &mut rng);
    let dv = sample(per_class / 4, &mut rng);
    (tr, dv)
}

fn training_oracle() -> Result<String, String> {
    let (tr, dv) = clusters(2024, 200);
    let cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let model = train(&tr, &dv, &cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let acc = accuracy(&model.params, &tr).map_err(|e| e.to_string())?;
    ensure(acc >= 0.95, || format!("train accuracy {acc}"))?;
    let runs = model.epochs_run();
    let early = runs == model.best_epoch + 1 + cfg.patience;
    ensure(early || runs == cfg.max_epochs, || {
        format!("ran {runs} epochs, best {}, patience {}", model.best_epoch, cfg.patience)
    })?;

    let mut a = Vec::new();
    write_model(&model, &mut a).map_err(|e| e.to_string())?;
    let again = train(&tr, &dv, &cfg).map_err(|e| e.to_string())?;
    let mut b = Vec::new();
    write_model(&again, &mut b).map_err(|e| e.to_string())?;
    ensure(a == b, || "same seed gave different model bytes".into())?;
    Ok(format!(
        "train accuracy {acc:.3}, {} after {runs} epochs ({:.1}s), {} identical model bytes",
        if early { "early stop" } else { "max epochs" },
        elapsed.as_secs_f64(),
        a.len()
    ))
}

fn metric_brute_force() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let one_hot = |l: VerificationLabel| {
        let mut p = [0.0; 3];
        p[l.index()] = 1.0;
        p
    };
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let mut zero_denominators = 0usize;
    for case in 0..1000 {
        // skewed class weights so some classes are never predicted or never gold
        let wg: [u32; 3] = [rng.random_range(0..4), rng.random_range(0..4), rng.random_range(1..4)];
        let wp: [u32; 3] = [rng.random_range(0..4), rng.random_range(1..4), rng.random_range(0..4)];
        let pick = |w: &[u32; 3], rng: &mut ChaCha8Rng| {
            let mut r = rng.random_range(0..w.iter().sum::<u32>());
            for (i, &x) in w.iter().enumerate() {
                if r < x {
                    return VerificationLabel::ALL[i];
                }
                r -= x;
            }
            unreachable!()
        };
        let n = rng.random_range(1..=60);
        let pairs: Vec<(VerificationLabel, VerificationLabel)> =
            (0..n).map(|_| (pick(&wg, &mut rng), pick(&wp, &mut rng))).collect();
        let verdicts: Vec<(Verdict, Option<VerificationLabel>)> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(g, p))| (Verdict::from_probabilities(i as u64, one_hot(p), None).unwrap(), Some(g)))
            .collect();
        let got = compute_metrics(&build_confusion(&verdicts).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

        let mut ps = Vec::new();
        for (k, &l) in VerificationLabel::ALL.iter().enumerate() {
            let tp = pairs.iter().filter(|&&(g, p)| g == l && p == l).count();
            let predicted = pairs.iter().filter(|&&(_, p)| p == l).count();
            let support = pairs.iter().filter(|&&(g, _)| g == l).count();
            zero_denominators += usize::from(predicted == 0) + usize::from(support == 0);
            let (p, r) = (ratio(tp, predicted), ratio(tp, support));
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            let c = &got.per_class[k];
            ensure(
                c.label == l && c.precision == p && c.recall == r && c.f1 == f1 && c.support == support as u64,
                || format!("case {case} {l}: {c:?} vs p={p} r={r} f1={f1} support={support}"),
            )?;
            ps.push((p, r, f1));
        }
        let correct = pairs.iter().filter(|(g, p)| g == p).count();
        let mean = |f: fn(&(f64, f64, f64)) -> f64| (f(&ps[0]) + f(&ps[1]) + f(&ps[2])) / 3.0;
        ensure(
            got.accuracy == ratio(correct, n)
                && got.total == n as u64
                && got.macro_precision == mean(|x| x.0)
                && got.macro_recall == mean(|x| x.1)
                && got.macro_f1 == mean(|x| x.2),
            || format!("case {case}: aggregate mismatch {got:?}"),
        )?;
    }
    Ok(format!("1000 random inputs exact, {zero_denominators} zero-denominator cells"))
}

fn hardware_zero_shot() -> Option<Result<String, String>> {
    let dev = std::env::var_os("CLOZECHECK_HW_DEV")?;
    let url = std::env::var("CLOZECHECK_BACKEND_URL").ok()?;
    Some((|| {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let vocab = std::env::var_os("CLOZECHECK_HW_VOCAB").map(PathBuf::from);
        let mut cfg = PipelineConfig::new(PathBuf::from(dev), ClozeBackendConfig::Remote { url, vocab }, out.path());
        cfg.ner_lexicon = std::env::var_os("CLOZECHECK_HW_NER").map(PathBuf::from);
        let backends = Backends::from_config(&cfg).map_err(|e| e.to_string())?;
        let report = pipeline::run_zero_shot(&cfg, &backends).map_err(|e| e.to_string())?;
        let binary = report.binary_metrics.as_ref().ok_or("no binary metrics")?;
        let f1 = binary.class(Supports).ok_or("no SUPPORTS row")?.f1;
        ensure((0.50..=0.70).contains(&f1), || format!("SUPPORTS F1 {f1:.3} outside [0.50, 0.70]"))?;
        Ok(format!("SUPPORTS F1 {f1:.3} over {} claims", binary.total))
    })())
}

fn run(check: Check) -> Outcome {
    match catch_unwind(AssertUnwindSafe(check)) {
        Ok(Ok(detail)) => Outcome::Pass(detail),
        Ok(Err(why)) => Outcome::Fail(why),
        Err(panic) => Outcome::Fail(
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()),
        ),
    }
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 5] = [
        ("F1 arithmetic on reported precision and recall rows", reported_rows_arithmetic),
        ("five-claim zero-shot fixture end to end", example_claims_end_to_end),
        ("gradient oracle vs central differences", gradient_oracle),
        ("training oracle on three seeded clusters", training_oracle),
        ("metric brute-force equivalence", metric_brute_force),
    ];
    let mut outcomes: Vec<(&str, Outcome)> = checks.iter().map(|&(name, c)| (name, run(c))).collect();
    outcomes.push((
        "full-scale zero-shot SUPPORTS F1 in [0.50, 0.70]",
        match hardware_zero_shot() {
            None => Outcome::Skip("needs CLOZECHECK_HW_DEV and CLOZECHECK_BACKEND_URL".into()),
            Some(Ok(d)) => Outcome::Pass(d),
            Some(Err(e)) => Outcome::Fail(e),
        },
    ));

    let mut failed = 0;
    for (name, o) in &outcomes {
        let (tag, detail) = match o {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
