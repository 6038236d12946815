//! Acceptance suite: one PASS/FAIL/WARN line per criterion.
//!
//! `cargo test -p mlcl --test acceptance` runs every criterion; numeric
//! arguments (`-- 1 4 8`) select a subset. Exit status is 1 on any FAIL.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mlcl::data::{ContrastiveBatch, LabelMatrix};
use mlcl::evaluation::{alignment, average_precision, hamming, macro_f1, mean_average_precision, micro_f1, uniformity};
use mlcl::experiment::{cmd_compare, cmd_sweep_tau, cmd_train, ExperimentConfig};
use mlcl::losses::{classic_loss, contrastive_loss, reg_forms, LossConfig, LossId};
use mlcl::numerics::Matrix;
use mlcl::verification::{check_gradients, minimum_condition_case, minimum_residual, random_batch};
use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Warn(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    if a.dim() != b.dim() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn temp_config() -> (tempfile::TempDir, ExperimentConfig) {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = ExperimentConfig::default();
    cfg.run.out = dir.path().to_string_lossy().into_owned();
    (dir, cfg)
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut worst_reg = 0.0f64;
    let clipped = LossConfig { margin: 0.05, gamma_pos: 1.0, gamma_neg: 4.0, ..Default::default() };
    let runs = LossId::ALL.map(|id| (id, LossConfig::default())).into_iter().chain([(LossId::Asy, clipped)]);
    for (id, cfg) in runs {
        match check_gradients(id, 100, 1e-5, 2024, &cfg) {
            Ok(reports) => {
                for r in &reports {
                    worst = worst.max(r.max_rel_error);
                    worst_reg = worst_reg.max(r.reg_closed_form_error.unwrap_or(0.0));
                }
                let failed = reports.iter().filter(|r| !r.pass).count();
                if failed > 0 || reports.len() != 100 {
                    failures.push(format!("{id}: {failed} failed"));
                }
            }
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "11 losses + clipped asy, 100 trials each, max rel err {worst:.2e}, max closed-form err {worst_reg:.2e}, {:.1}s{}",
        elapsed.as_secs_f64(),
        if failures.is_empty() { String::new() } else { format!(" [{}]", failures.join("; ")) }
    );
    verdict(failures.is_empty() && elapsed < Duration::from_secs(60), detail)
}

fn clamp_invariant() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut pairs, mut open) = (0.0f64, 0usize, 0usize);
    for t in 0..1000 {
        let n = rng.random_range(4..=16);
        let d = rng.random_range(3..=8);
        let l = rng.random_range(2..=6);
        let cfg = LossConfig {
            use_regularizer: true,
            use_alpha_weighting: rng.random_bool(0.5),
            alpha: rng.random_range(0.0..3.0),
            tau: rng.random_range(0.05..1.0),
            ..Default::default()
        };
        let (id, batch) = if t % 2 == 0 {
            (LossId::Reg, random_batch(&mut rng, n, d, l, false, true))
        } else {
            (LossId::SupConReg, random_batch(&mut rng, n, d, l, true, false))
        };
        match contrastive_loss(id, &batch, &cfg) {
            Ok(out) => {
                for g in &out.gates {
                    worst = worst.max((g.combined - g.gate.min(0.0)).abs());
                    open += usize::from(g.gate > 0.0);
                }
                pairs += out.gates.len();
            }
            Err(e) => return Verdict::Fail(format!("trial {t}: {e}")),
        }
    }
    // Without prototypes an anchor's weight mass can fall below its normalizer;
    // the clamp then leaves a scaled coefficient that must still be non-repulsive.
    let mut max_ablation = f64::NEG_INFINITY;
    let cfg = LossConfig { use_regularizer: true, use_prototypes: false, ..Default::default() };
    for t in 0..200 {
        let n = rng.random_range(4..=16);
        let d = rng.random_range(3..=8);
        let l = rng.random_range(2..=6);
        let batch = random_batch(&mut rng, n, d, l, false, false);
        match contrastive_loss(LossId::Reg, &batch, &cfg) {
            Ok(out) => max_ablation = out.gates.iter().map(|g| g.combined).fold(max_ablation, f64::max),
            Err(e) => return Verdict::Fail(format!("ablation trial {t}: {e}")),
        }
    }
    verdict(
        worst <= 1e-12 && pairs > 0 && max_ablation <= 1e-12,
        format!(
            "1000 batches, {pairs} positive pairs ({open} gated), max |combined - min(0, gate)| {worst:.2e}; \
             no-prototype ablation max combined {max_ablation:.2e}"
        ),
    )
}

fn shared_minimum() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut value, mut grad, mut residual) = (0.0f64, 0.0f64, 0.0f64);
    for variant in 0..100 {
        let (id, batch, cfg) = minimum_condition_case(&mut rng, variant);
        let out = match contrastive_loss(id, &batch, &cfg) {
            Ok(out) => out,
            Err(e) => return Verdict::Fail(format!("case {variant}: {e}")),
        };
        value = value.max(out.reg_value.abs());
        let norm = out.reg_dz.iter().chain(out.reg_dc.iter()).map(|x| x * x).sum::<f64>().sqrt();
        grad = grad.max(norm);
        residual = residual.max(minimum_residual(&out.pairs).unwrap_or(f64::INFINITY));
    }
    verdict(
        value < 1e-12 && grad < 1e-12,
        format!("100 cases, max |reg| {value:.2e}, max grad norm {grad:.2e}, max residual {residual:.2e}"),
    )
}

fn reductions() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LossConfig::default();
    let mut worst = [0.0f64; 4];
    let mut record = |slot: usize, dv: f64, dg: f64| worst[slot] = worst[slot].max(dv.abs()).max(dg);
    for _ in 0..50 {
        let n = rng.random_range(4..=12);
        let d = rng.random_range(3..=6);
        let l = rng.random_range(2..=5);

        let b = random_batch(&mut rng, n, d, l, true, false);
        let (m, s) = (contrastive_loss(LossId::MulSupCon, &b, &cfg), contrastive_loss(LossId::SupCon, &b, &cfg));
        match (m, s) {
            (Ok(m), Ok(s)) => record(0, m.loss_value - s.loss_value, max_abs_diff(&m.dz, &s.dz)),
            (m, s) => return Verdict::Fail(format!("single-label reduction errored: {:?} {:?}", m.err(), s.err())),
        }

        let z = random_batch(&mut rng, n, d, l, false, false).embeddings().clone();
        let label = rng.random_range(0..l);
        let same = ContrastiveBatch::new(z, LabelMatrix::new(l, vec![vec![label]; n]).unwrap(), None).unwrap();
        match (contrastive_loss(LossId::Base, &same, &cfg), contrastive_loss(LossId::SupCon, &same, &cfg)) {
            (Ok(a), Ok(s)) => record(1, a.loss_value - s.loss_value, max_abs_diff(&a.dz, &s.dz)),
            (a, s) => return Verdict::Fail(format!("uniform-label reduction errored: {:?} {:?}", a.err(), s.err())),
        }

        let b = random_batch(&mut rng, n, d, l, false, true);
        let weighted = LossConfig { use_alpha_weighting: true, alpha: 0.0, ..cfg.clone() };
        match (contrastive_loss(LossId::Reg, &b, &weighted), contrastive_loss(LossId::Reg, &b, &cfg)) {
            (Ok(w), Ok(r)) => {
                let dg = max_abs_diff(&w.dz, &r.dz).max(max_abs_diff(&w.dc, &r.dc));
                record(2, w.loss_value - r.loss_value, dg)
            }
            (w, r) => return Verdict::Fail(format!("alpha reduction errored: {:?} {:?}", w.err(), r.err())),
        }

        let labels = b.labels().clone();
        let logits = Matrix::from_shape_simple_fn((n, l), || rng.random_range(-6.0..6.0));
        let plain = LossConfig { gamma_pos: 0.0, gamma_neg: 0.0, margin: 0.0, ..cfg.clone() };
        match (classic_loss(LossId::Asy, &logits, &labels, &plain), classic_loss(LossId::Bce, &logits, &labels, &cfg)) {
            (Ok(a), Ok(b)) => record(3, a.value - b.value, max_abs_diff(&a.grad, &b.grad)),
            (a, b) => return Verdict::Fail(format!("asymmetric reduction errored: {:?} {:?}", a.err(), b.err())),
        }
    }
    let ok = worst.iter().all(|&w| w <= 1e-12);
    verdict(
        ok,
        format!(
            "50 batches each; mulsupcon/supcon {:.1e}, base/supcon {:.1e}, weighted/plain reg {:.1e}, asy/bce {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn form_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let n = rng.random_range(4..=16);
        let d = rng.random_range(3..=8);
        let l = rng.random_range(2..=6);
        let b = random_batch(&mut rng, n, d, l, false, true);
        let cfg = LossConfig {
            use_alpha_weighting: t % 2 == 1,
            alpha: 1.5,
            use_regularizer: true,
            ..Default::default()
        };
        match (reg_forms::matrix_form(&b, &cfg), reg_forms::direct_form(&b, &cfg)) {
            (Ok(m), Ok(d)) => worst = worst.max((m.total() - d.total()).abs()),
            (m, d) => return Verdict::Fail(format!("batch {t}: {:?} {:?}", m.err(), d.err())),
        }
    }
    verdict(worst <= 1e-10, format!("100 batches, max |matrix - per-anchor| {worst:.2e}"))
}

fn prr_trend() -> Verdict {
    let (_dir, cfg) = temp_config();
    let rows = match cmd_sweep_tau(&cfg) {
        Ok(rows) => rows,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let table: Vec<String> = rows
        .iter()
        .map(|(t, p)| format!("{t}:{}", p.map(|p| format!("{p:.4}")).unwrap_or("-".into())))
        .collect();
    let detail = format!("loss {} [{}]", cfg.run.loss, table.join(", "));
    let Some(prr) = rows.iter().map(|r| r.1).collect::<Option<Vec<f64>>>() else {
        return Verdict::Fail(format!("{detail}; missing PRR"));
    };
    let in_range = prr.iter().all(|p| (0.0..=1.0).contains(p));
    let rises: Vec<f64> = prr.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    let trend = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.02);
    let at_01 = rows.iter().find(|r| r.0 == 0.1).and_then(|r| r.1);
    let ok = in_range && trend && at_01.is_some_and(|p| p > 0.05);
    verdict(ok, format!("{detail}; {} increase(s)", rises.len()))
}

fn end_to_end() -> Verdict {
    let (_dir, mut cfg) = temp_config();
    cfg.run.seeds = (0..5).collect();
    cfg.run.losses = vec![LossId::Base, LossId::Reg];
    let start = Instant::now();
    let results = match cmd_compare(&cfg) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let per_seed = |id: LossId| -> Vec<f64> {
        results
            .iter()
            .filter(|r| r.loss == id)
            .flat_map(|r| r.runs.iter().map(|(_, m)| m.macro_f1))
            .collect()
    };
    let (base, reg) = (per_seed(LossId::Base), per_seed(LossId::Reg));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "macro-F1 reg {:.4} [{}] vs base {:.4} [{}], {:.0}s",
        mean(&reg),
        fmt(&reg),
        mean(&base),
        fmt(&base),
        elapsed.as_secs_f64()
    );
    if elapsed >= Duration::from_secs(600) {
        Verdict::Fail(format!("{detail}; over 10 min"))
    } else if mean(&reg) >= mean(&base) {
        Verdict::Pass(detail)
    } else {
        Verdict::Warn(detail)
    }
}

fn metric_examples() -> Verdict {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    let truth = array![[true, true, false], [true, false, false]];
    let pred = array![[true, false, true], [true, false, false]];
    check("micro-F1", micro_f1(pred.view(), truth.view()).ok() == Some(2.0 / 3.0));
    let t2 = array![[true, true], [false, true]];
    let p2 = array![[true, false], [false, false]];
    check("macro-F1", macro_f1(p2.view(), t2.view()).ok() == Some(0.5));
    let t3 = array![[true, false, true, false, false], [false, true, false, false, true]];
    let mut p3 = t3.clone();
    p3[[1, 3]] = true;
    check("hamming", hamming(p3.view(), t3.view()).ok().map(|h| h * 1000.0) == Some(100.0));
    // Precision at each hit, averaged over hits.
    let at_hits = (1.0 / 1.0 + 2.0 / 3.0) / 2.0;
    check("AP", average_precision(&[0.9, 0.5, 0.4], &[true, false, true]) == Some(at_hits));
    check("AP last", average_precision(&[3.0, 2.0, 1.0, 0.0], &[false, false, false, true]) == Some(0.25));
    let tm = array![[true, false], [false, true], [true, false]];
    let sm = tm.mapv(|t| if t { 1.0 } else { 0.0 });
    check("mAP", mean_average_precision(sm.view(), tm.view()).ok() == Some(Some(1.0)));
    let same = LabelMatrix::new(1, vec![vec![0], vec![0]]).unwrap();
    let ortho = array![[1.0, 0.0], [0.0, 3.0]];
    let anti = array![[1.0, 0.0], [-2.0, 0.0]];
    check("align orthogonal", alignment(ortho.view(), &same).ok() == Some(Some(2.0)));
    check("align antipodal", alignment(anti.view(), &same).ok() == Some(Some(4.0)));
    check("uniform orthogonal", uniformity(ortho.view()).ok() == Some(-4.0));
    check("uniform antipodal", uniformity(anti.view()).ok() == Some(-8.0));
    let detail = if failed.is_empty() {
        "F1, Hamming, AP/mAP, alignment and uniformity examples exact".to_string()
    } else {
        format!("mismatch: {}", failed.join(", "))
    };
    verdict(failed.is_empty(), detail)
}

fn determinism() -> Verdict {
    let (a, mut cfg) = temp_config();
    let b = tempfile::tempdir().expect("temp dir");
    if let Err(e) = cmd_train(&cfg) {
        return Verdict::Fail(e.to_string());
    }
    cfg.run.out = b.path().to_string_lossy().into_owned();
    if let Err(e) = cmd_train(&cfg) {
        return Verdict::Fail(e.to_string());
    }
    let mut differing = Vec::new();
    for file in ["checkpoint.json", "train_log.csv"] {
        let (x, y) = (fs::read(a.path().join(file)), fs::read(b.path().join(file)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y && !x.is_empty() => {}
            _ => differing.push(file),
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("loss {}, checkpoint and log byte-identical", cfg.run.loss)
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

type Criterion = (usize, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 9] = [
    (1, "gradient fidelity", gradient_fidelity),
    (2, "clamp invariant", clamp_invariant),
    (3, "shared minimum", shared_minimum),
    (4, "reduction identities", reductions),
    (5, "matrix/per-anchor equivalence", form_equivalence),
    (6, "PRR vs temperature", prr_trend),
    (7, "end-to-end direction (soft)", end_to_end),
    (8, "metric examples", metric_examples),
    (9, "determinism", determinism),
];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&k) {
            continue;
        }
        let (tag, detail) = match run() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Warn(d) => ("WARN", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {k}. {name}: {detail}");
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
