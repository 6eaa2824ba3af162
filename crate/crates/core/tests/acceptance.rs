//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=1,4,9` restricts the run.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use condgan::autodiff::Tensor;
use condgan::harness::{load_checkpoint, resume, train, LogRow, Mode, TrainingConfig};
use condgan::metrics::{fid, kid, precision_recall, FeatureSet};
use condgan::nets::{init_params, ArchConfig};
use condgan::objective::Formulation;
use condgan::schedule::TransitionSchedule;

use common::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const REFERENCE_R1: f64 = 1.0;

/// Reference limited-data run: 8 classes × 20 samples, 4 modes per class on rings.
fn reference(mode: Mode, seed: u64) -> TrainingConfig {
    TrainingConfig {
        mode,
        t_start: 1000,
        t_end: 2000,
        t_max: 6000,
        clip_max: 0.5,
        num_classes: 8,
        samples_per_class: 20,
        modes_per_class: 4,
        lr: 1e-3,
        batch_size: 128,
        r1_weight: REFERENCE_R1,
        eval_every: 1000,
        seed,
        ..TrainingConfig::default()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// 1 ------------------------------------------------------------------------

fn schedule_exactness() -> Outcome {
    // the published timeline: transition from 2k to 4k
    let s = TransitionSchedule::new(2000, 4000, 8000, 1.0).unwrap();
    let mut ok = s.lambda_at(2000) == 0.0
        && s.lambda_at(3000) == 0.5
        && s.lambda_at(4000) == 1.0
        && s.lambda_at(8000) == 1.0
        && s.lambda_at(100_000) == 1.0
        && s.lambda_at(0) == 0.0;
    let clipped = TransitionSchedule::new(2000, 4000, 8000, 0.2).unwrap();
    ok &= clipped.lambda_at(2200) == 0.1
        && clipped.lambda_at(2400) == 0.2
        && clipped.lambda_at(3000) == 0.2
        && clipped.lambda_at(4000) == 0.2
        && clipped.lambda_at(8000) == 0.2;
    let mut mismatches = 0;
    for t in -10..=8010 {
        let formula = (((t - 2000) as f64 / 2000.0).max(0.0)).min(1.0);
        if s.lambda_at(t) != formula || clipped.lambda_at(t) != formula.min(0.2) {
            mismatches += 1;
        }
    }
    ok &= mismatches == 0;
    outcome(ok, format!("checkpoints exact, {mismatches} mismatches over t in [-10, 8010]"))
}

// 2 ------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let mut total = Counts {
        total: 0,
        within: 0,
        worst: 0.0,
    };
    for net in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + net);
        let arch = ArchConfig {
            data_dim: rng.random_range(2..=3),
            num_classes: rng.random_range(2..=4),
            latent_dim: rng.random_range(2..=4),
            embed_dim: rng.random_range(2..=4),
            mapping_layers: rng.random_range(1..=2),
            mapping_units: rng.random_range(3..=6),
            synthesis_layers: rng.random_range(1..=3),
            synthesis_units: rng.random_range(3..=6),
            trunk_layers: rng.random_range(1..=3),
            trunk_units: rng.random_range(3..=6),
        };
        let (mut g, mut d) = init_params(&arch, net).unwrap();
        // random biases, so no unit sits at a kink by construction
        for (_, t) in g.named_mut().into_iter().chain(d.named_mut()) {
            for v in t.data_mut() {
                *v += 0.1 * gaussian(&mut rng);
            }
        }
        let batch = 4;
        let real: Vec<f64> = (0..batch * arch.data_dim).map(|_| gaussian(&mut rng)).collect();
        let z: Vec<f64> = (0..batch * arch.latent_dim).map(|_| gaussian(&mut rng)).collect();
        let p = Problem {
            real: Tensor::matrix(batch, arch.data_dim, real).unwrap(),
            z: Tensor::matrix(batch, arch.latent_dim, z).unwrap(),
            labels: (0..batch).map(|_| rng.random_range(0..arch.num_classes)).collect(),
            g_lambda: rng.random_range(0.05..1.0),
            l_lambda: rng.random_range(0.05..1.0),
            formulation: if net % 2 == 0 {
                Formulation::Additive
            } else {
                Formulation::Convex
            },
            r1_weight: 0.5,
        };
        total.add(check_problem(&g, &d, &p, 1e-5, 1e-4));
    }
    let frac = total.fraction();
    outcome(
        frac >= 0.99,
        format!(
            "{}/{} coordinates within rel 1e-4 ({:.4}); worst {:.2e}",
            total.within, total.total, frac, total.worst
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn gaussian_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    let mu = [2.0 * gaussian(rng), 2.0 * gaussian(rng)];
    let a = [[gaussian(rng), gaussian(rng)], [gaussian(rng), gaussian(rng)]];
    (0..n)
        .map(|_| {
            let e = [gaussian(rng), gaussian(rng)];
            [
                mu[0] + a[0][0] * e[0] + a[0][1] * e[1],
                mu[1] + a[1][0] * e[0] + a[1][1] * e[1],
            ]
        })
        .collect()
}

fn to_set(points: &[[f64; 2]]) -> FeatureSet {
    FeatureSet::new(2, points.iter().flatten().copied().collect(), None).unwrap()
}

fn fid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let r = gaussian_set(&mut rng, 200);
        let f = gaussian_set(&mut rng, 150);
        let lib = fid(&to_set(&r), &to_set(&f)).unwrap();
        let oracle = fid2_oracle(&r, &f);
        worst = worst.max((lib - oracle).abs() / oracle.abs().max(1.0));
    }
    let r = gaussian_set(&mut rng, 300);
    let delta = [0.7, -1.3];
    let shifted: Vec<[f64; 2]> = r.iter().map(|p| [p[0] + delta[0], p[1] + delta[1]]).collect();
    let lib = fid(&to_set(&r), &to_set(&shifted)).unwrap();
    let expected = delta[0] * delta[0] + delta[1] * delta[1];
    let shift_err = (lib - expected).abs();
    outcome(
        worst <= 1e-6 && shift_err <= 1e-9,
        format!("max deviation {worst:.2e} over 50 pairs; shifted case |err| {shift_err:.2e}"),
    )
}

// 4 ------------------------------------------------------------------------

fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| shift + gaussian(rng)).collect()).collect()
}

fn set_of(rows: &[Vec<f64>]) -> FeatureSet {
    FeatureSet::from_rows(rows, None).unwrap()
}

fn kid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = rows(&mut rng, 4, 3, 0.0);
        let y = rows(&mut rng, 4, 3, 0.5);
        let lib = kid(&set_of(&x), &set_of(&y), 4).unwrap();
        worst = worst.max((lib - mmd2_brute(&x, &y)).abs());
    }
    let null: Vec<f64> = (0..100)
        .map(|_| {
            let x = rows(&mut rng, 50, 2, 0.0);
            let y = rows(&mut rng, 50, 2, 0.0);
            kid(&set_of(&x), &set_of(&y), 50).unwrap()
        })
        .collect();
    let mean = null.iter().sum::<f64>() / 100.0;
    let var = null.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0;
    let se = (var / 100.0).sqrt();
    outcome(
        worst <= 1e-12 && mean.abs() <= 3.0 * se,
        format!("brute-force |err| {worst:.2e}; null mean {mean:.3e} vs 3 SE {:.3e}", 3.0 * se),
    )
}

// 5 ------------------------------------------------------------------------

fn pr_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mismatches = 0;
    for i in 0..20 {
        let x = rows(&mut rng, 16, 2, 0.0);
        let y = rows(&mut rng, 16, 2, 0.1 * i as f64);
        let lib = precision_recall(&set_of(&x), &set_of(&y), 3).unwrap();
        if lib != precision_recall_brute(&x, &y, 3) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches}/20 instances differ from the double loop"))
}

// 6-8 ----------------------------------------------------------------------

/// Final log rows per labelled regime, with wall time per regime.
struct Runs {
    rows: HashMap<String, Vec<LogRow>>,
    seconds: HashMap<String, f64>,
}

impl Runs {
    fn new() -> Self {
        Self {
            rows: HashMap::new(),
            seconds: HashMap::new(),
        }
    }

    fn regime(&mut self, label: &str, make: impl Fn(u64) -> TrainingConfig) -> &[LogRow] {
        if !self.rows.contains_key(label) {
            let start = Instant::now();
            let finals = SEEDS
                .iter()
                .map(|&s| *train(&make(s)).unwrap().log.last().unwrap())
                .collect();
            self.seconds.insert(label.into(), start.elapsed().as_secs_f64());
            self.rows.insert(label.into(), finals);
        }
        &self.rows[label]
    }

    fn median(&mut self, label: &str, make: impl Fn(u64) -> TrainingConfig, f: impl Fn(&LogRow) -> f64) -> f64 {
        median(self.regime(label, make).iter().map(f).collect())
    }
}

fn cov(r: &LogRow) -> f64 {
    r.mode_coverage
}

fn unpenalized(cfg: TrainingConfig) -> TrainingConfig {
    TrainingConfig { r1_weight: 0.0, ..cfg }
}

fn collapse_phenomenon(runs: &mut Runs) -> Outcome {
    let unc = |s| reference(Mode::Unconditional, s);
    let con = |s| reference(Mode::Conditional, s);
    let tra = |s| reference(Mode::Transitional, s);
    let cov_c = runs.median("conditional", con, cov);
    let cov_t = runs.median("transitional", tra, cov);
    let fid_u = runs.median("unconditional", unc, |r| r.fid);
    let fid_t = runs.median("transitional", tra, |r| r.fid);
    let fidel_t = runs.median("transitional", tra, |r| r.class_fidelity);
    let fidel_u = runs.median("unconditional", unc, |r| r.class_fidelity);
    // the ordering must not hinge on the penalty
    let cov_c0 = runs.median("conditional r1=0", |s| unpenalized(con(s)), cov);
    let cov_t0 = runs.median("transitional r1=0", |s| unpenalized(tra(s)), cov);
    let slowest = runs.seconds.values().copied().fold(0.0, f64::max);
    let pass = cov_c < cov_t && fid_t <= 1.2 * fid_u && fidel_t > 0.9 && cov_c0 < cov_t0 && slowest <= 900.0;
    outcome(
        pass,
        format!(
            "coverage cond {cov_c:.3} < trans {cov_t:.3}; FID trans {fid_t:.3} <= 1.2 x uncond {fid_u:.3}; \
             fidelity trans {fidel_t:.3} (uncond {fidel_u:.3}); without R1 coverage cond {cov_c0:.3} < trans {cov_t0:.3}; \
             slowest regime {slowest:.0}s"
        ),
    )
}

fn abundant(mode: Mode, seed: u64) -> TrainingConfig {
    TrainingConfig {
        samples_per_class: 500,
        ..reference(mode, seed)
    }
}

fn abundant_reversal(runs: &mut Runs) -> Outcome {
    let con = |s| abundant(Mode::Conditional, s);
    let tra = |s| abundant(Mode::Transitional, s);
    let fid_c = runs.median("abundant conditional", con, |r| r.fid);
    let fid_t = runs.median("abundant transitional", tra, |r| r.fid);
    let cov_c = runs.median("abundant conditional", con, cov);
    outcome(
        fid_c <= 1.5 * fid_t && cov_c > 0.8,
        format!("FID cond {fid_c:.3} <= 1.5 x trans {fid_t:.3}; coverage cond {cov_c:.3} > 0.8"),
    )
}

/// Median coverages of (final method, no_transition, transition_loss_only, t_start=0).
fn ablation_coverages(runs: &mut Runs, r1: f64) -> [f64; 4] {
    let suffix = if r1 == REFERENCE_R1 { String::new() } else { format!(" r1={r1}") };
    let with = move |mode: Mode| {
        move |s| TrainingConfig {
            r1_weight: r1,
            ..reference(mode, s)
        }
    };
    let ts0 = move |s| {
        let base = with(Mode::Transitional)(s);
        TrainingConfig {
            t_start: 0,
            t_end: base.t_end - base.t_start,
            ..base
        }
    };
    [
        runs.median(&format!("transitional{suffix}"), with(Mode::Transitional), cov),
        runs.median(&format!("no_transition{suffix}"), with(Mode::NoTransition), cov),
        runs.median(&format!("transition_loss_only{suffix}"), with(Mode::TransitionLossOnly), cov),
        runs.median(&format!("t_start=0{suffix}"), ts0, cov),
    ]
}

fn ablation_direction(runs: &mut Runs) -> Outcome {
    let mid = reference(Mode::Transitional, 0).t_start;
    let mut pass = true;
    let mut parts = Vec::new();
    for r1 in [REFERENCE_R1, 0.0] {
        let [fin, no_tr, loss_only, ts0] = ablation_coverages(runs, r1);
        pass &= no_tr < fin && loss_only < fin && ts0 < fin;
        parts.push(format!(
            "r1={r1}: no_transition {no_tr:.3}, transition_loss_only {loss_only:.3}, \
             t_start=0 {ts0:.3} vs final method (t_start={mid}) {fin:.3}"
        ));
    }
    outcome(pass, format!("median coverage {}", parts.join("; ")))
}

// 9 ------------------------------------------------------------------------

fn short(mode: Mode) -> TrainingConfig {
    TrainingConfig {
        mode,
        t_max: 200,
        eval_every: 50,
        ..reference(mode, 7)
    }
}

fn mode_equivalence() -> Outcome {
    let unc = run_to_end(&short(Mode::Unconditional));
    let never = run_to_end(&TrainingConfig {
        t_start: 201,
        t_end: 201,
        ..short(Mode::Transitional)
    });
    let con = run_to_end(&short(Mode::Conditional));
    let always = run_to_end(&TrainingConfig {
        t_start: -2,
        t_end: -1,
        clip_max: 1.0,
        formulation: Formulation::Convex,
        ..short(Mode::Transitional)
    });
    let a = unc == never;
    let b = con == always;
    outcome(
        a && b,
        format!("unconditional == transitional(T_s=T_e=T_m+1): {a}; conditional == transitional(T_s<0): {b}"),
    )
}

// 10 -----------------------------------------------------------------------

fn determinism_and_resume() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let dir = |name: &str| Some(root.path().join(name).to_string_lossy().into_owned());
    let cfg = |out| TrainingConfig {
        t_max: 600,
        eval_every: 100,
        checkpoint_every: 300,
        output_dir: out,
        ..reference(Mode::Transitional, 3)
    };
    train(&cfg(dir("a"))).unwrap();
    train(&cfg(dir("b"))).unwrap();
    let read = |name: &str, file: &str| std::fs::read(root.path().join(name).join(file)).unwrap();
    let same_csv = read("a", "metrics.csv") == read("b", "metrics.csv");

    // the transition (steps 1000-2000 in the reference) is moved inside this short run
    let cfg_tr = |out| TrainingConfig {
        t_start: 200,
        t_end: 400,
        ..cfg(out)
    };
    let full = train(&cfg_tr(dir("c"))).unwrap();
    let mid = load_checkpoint(&root.path().join("c").join("checkpoint_step300.bin")).unwrap();
    let resumed = resume(&mid, dir("d")).unwrap();
    let same_resume = read("c", "metrics.csv") == read("d", "metrics.csv")
        && full.checkpoint.arrays == resumed.checkpoint.arrays
        && full.checkpoint.bytes == resumed.checkpoint.bytes;
    outcome(
        same_csv && same_resume,
        format!("repeat run metrics.csv identical: {same_csv}; resume at 300 of 600 identical: {same_resume}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut runs = Runs::new();
    let mut failed = Vec::new();

    let criteria: Vec<(usize, &str, Box<dyn FnOnce(&mut Runs) -> Outcome>)> = vec![
        (1, "schedule exactness", Box::new(|_| schedule_exactness())),
        (2, "gradient oracle", Box::new(|_| gradient_oracle())),
        (3, "FID oracle", Box::new(|_| fid_oracle())),
        (4, "KID oracle", Box::new(|_| kid_oracle())),
        (5, "precision/recall oracle", Box::new(|_| pr_oracle())),
        (6, "collapse phenomenon", Box::new(collapse_phenomenon)),
        (7, "abundant-data reversal", Box::new(abundant_reversal)),
        (8, "ablation direction", Box::new(ablation_direction)),
        (9, "mode equivalence", Box::new(|_| mode_equivalence())),
        (10, "determinism and resume", Box::new(|_| determinism_and_resume())),
    ];
    for (n, name, check) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let o = check(&mut runs);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] criterion {n:>2} {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
