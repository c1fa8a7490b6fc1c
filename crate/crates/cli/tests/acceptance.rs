//! Acceptance suite: twelve criteria, one PASS/FAIL line each.
//!
//! Run a subset with `cargo test --test acceptance -- 3 7`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nfpe::coefficients::{validate_hypotheses, DriftField, Mobility, Sampler};
use nfpe::diagnostics::{
    barenblatt_oracle, compare_l1, h_functional, heat_oracle, uniqueness_gap, HeatParams, UniquenessOptions,
};
use nfpe::mckean::{marginal_discrepancy, simulate_linearized, InitialLaw, SdeConfig};
use nfpe::resolvent::{default_eps_schedule, resolvent, resolvent_identity_check, ResolventConfig};
use nfpe::semigroup::{exponential_formula_study, mild_solution, semigroup_law_check};
use nfpe::{Boundary, CoefficientSet, Field, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn tanh() -> DriftField {
    DriftField::TanhWell { strength: 1.0 }
}

/// The built-in model suite.
fn suite() -> Vec<CoefficientSet> {
    vec![
        CoefficientSet::heat(),
        CoefficientSet::porous_medium(2.0).unwrap(),
        CoefficientSet::porous_medium(3.0).unwrap(),
        CoefficientSet::bose_einstein(1.0).unwrap(),
        CoefficientSet::heat().with_mobility(Mobility::Constant(1.0)).with_drift(tanh()).named("heat_drift"),
        CoefficientSet::porous_medium(2.0)
            .unwrap()
            .with_mobility(Mobility::SelfConsistent)
            .with_drift(tanh())
            .named("porous_medium_2_drift"),
        CoefficientSet::bose_einstein(1.0)
            .unwrap()
            .with_mobility(Mobility::SelfConsistent)
            .with_drift(tanh())
            .named("bose_einstein_1_drift"),
    ]
}

fn small_grid() -> GridSpec {
    GridSpec::new(1, 4.0, 64, Boundary::NoFlux).unwrap()
}

/// Nonnegative sum of one to three bumps, Gaussian or compactly supported.
fn bumps(rng: &mut ChaCha8Rng, g: &GridSpec) -> Field {
    let l = g.half_width();
    let k = rng.random_range(1..=3);
    let parts: Vec<(f64, f64, f64, bool)> = (0..k)
        .map(|_| {
            (
                rng.random_range(-0.5 * l..0.5 * l),
                rng.random_range(0.2..1.0),
                rng.random_range(0.2..1.0),
                rng.random_bool(0.5),
            )
        })
        .collect();
    Field::from_fn(*g, |x| {
        parts
            .iter()
            .map(|&(c, s, w, compact)| {
                let q = (x[0] - c) * (x[0] - c) / (s * s);
                if compact {
                    w * (1.0 - q).max(0.0)
                } else {
                    w * (-0.5 * q).exp()
                }
            })
            .sum()
    })
}

fn density(rng: &mut ChaCha8Rng, g: &GridSpec) -> Field {
    let f = bumps(rng, g);
    f.scale(1.0 / f.mass())
}

/// A signed field with sup norm between roughly 0.1 and 3.
fn signed(rng: &mut ChaCha8Rng, g: &GridSpec) -> Field {
    let a = bumps(rng, g);
    let b = bumps(rng, g);
    let amp = rng.random_range(0.1..3.0);
    a.lincomb(amp, &b, -amp * rng.random_range(0.0..1.0))
}

fn linf(f: &Field) -> f64 {
    f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn criterion_1() -> Outcome {
    let g = small_grid();
    let cfg = ResolventConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut pairs, mut violations, mut worst) = (0, 0, 0.0_f64);
    for c in suite() {
        for lambda in [0.01, 0.1, 0.5] {
            let cfg = cfg.clone().with_lambda(lambda);
            for _ in 0..50 {
                let (f1, f2) = (signed(&mut rng, &g), signed(&mut rng, &g));
                let y1 = resolvent(&f1, &c, &cfg).unwrap().y;
                let y2 = resolvent(&f2, &c, &cfg).unwrap().y;
                let ratio = y1.l1_distance(&y2) / f1.l1_distance(&f2);
                worst = worst.max(ratio);
                pairs += 1;
                if ratio > 1.0 + 1e-8 {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("resolvent L1 contraction: {violations} violations in {pairs} pairs, largest ratio {worst:.6}"),
    )
}

fn criterion_2() -> Outcome {
    let g = small_grid();
    let cfg = ResolventConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut step_drift, mut run_drift, mut min_val) = (0.0_f64, 0.0_f64, f64::INFINITY);
    for c in suite() {
        for _ in 0..20 {
            let rho = density(&mut rng, &g);
            let y = resolvent(&rho, &c, &cfg).unwrap().y;
            step_drift = step_drift.max((y.mass() - rho.mass()).abs());
            min_val = min_val.min(y.min());
            let traj = mild_solution(&rho, &c, 1.0, 0.01, &cfg).unwrap();
            assert_eq!(traj.states.len(), 101);
            for s in &traj.states {
                run_drift = run_drift.max((s.mass() - rho.mass()).abs());
                min_val = min_val.min(s.min());
            }
        }
    }
    outcome(
        step_drift <= 1e-8 && run_drift <= 1e-7 && min_val >= -1e-8,
        format!(
            "P-invariance: per-application mass drift {step_drift:.2e}, 100-step drift {run_drift:.2e}, min value {min_val:.2e}"
        ),
    )
}

/// `sup |D| + (div D)^-` over the cell centres, by central differences.
fn drift_constant(c: &CoefficientSet, g: &GridSpec) -> f64 {
    let d = |x: f64| c.drift(&[x])[0];
    let dh = 1e-5;
    (0..g.cells())
        .map(|i| {
            let x = g.center(i);
            let div = (d(x + dh) - d(x - dh)) / (2.0 * dh);
            d(x).abs() + (-div).max(0.0)
        })
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let g = small_grid();
    let cfg = ResolventConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut violations, mut worst) = (0, 0, 0.0_f64);
    for c in suite() {
        let factor = 1.0 + drift_constant(&c, &g).sqrt();
        for lambda in [0.05, 0.2, 0.5] {
            let cfg = cfg.clone().with_lambda(lambda);
            for k in 0..10 {
                let f = if k % 2 == 0 { density(&mut rng, &g).scale(rng.random_range(0.5..4.0)) } else { signed(&mut rng, &g) };
                let y = resolvent(&f, &c, &cfg).unwrap().y;
                worst = worst.max(linf(&y) / (factor * linf(&f)));
                checked += 1;
                if linf(&y) > factor * linf(&f) + 1e-8 {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("L-infinity bound: {violations} violations in {checked} solves, largest |Jf|/bound {worst:.4}"),
    )
}

fn criterion_4() -> Outcome {
    let g = small_grid();
    let cfg = ResolventConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = 10.0 * cfg.cauchy_tol;
    let mut worst = 0.0_f64;
    for c in suite() {
        for (l1, l2) in [(0.005, 0.01), (0.01, 0.05)] {
            for _ in 0..10 {
                let f = signed(&mut rng, &g);
                worst = worst.max(resolvent_identity_check(&f, &c, l1, l2, &cfg).unwrap());
            }
        }
    }
    outcome(worst <= tol, format!("resolvent identity: largest defect {worst:.2e} (limit {tol:.0e})"))
}

fn criterion_5() -> Outcome {
    let g = small_grid();
    let cfg = ResolventConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, steps) = (0.01, 10);
    let law_tol = 10.0 * cfg.cauchy_tol * steps as f64;
    let (mut law, mut excess) = (0.0_f64, f64::NEG_INFINITY);
    for c in suite() {
        let rho = density(&mut rng, &g);
        law = law.max(semigroup_law_check(&rho, &c, 0.05, 0.05, h, &cfg).unwrap());
        for _ in 0..10 {
            let (a, b) = (signed(&mut rng, &g), signed(&mut rng, &g));
            let ta = mild_solution(&a, &c, h * steps as f64, h, &cfg).unwrap();
            let tb = mild_solution(&b, &c, h * steps as f64, h, &cfg).unwrap();
            let d0 = a.l1_distance(&b);
            for (j, (sa, sb)) in ta.states.iter().zip(&tb.states).enumerate() {
                excess = excess.max(sa.l1_distance(sb) - d0 - j as f64 * 1e-8);
            }
        }
    }
    outcome(
        law <= law_tol && excess <= 0.0,
        format!("semigroup law defect {law:.2e} (limit {law_tol:.0e}); flow contraction worst excess {excess:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let g = GridSpec::new(1, 8.0, 256, Boundary::NoFlux).unwrap();
    let rho0 = heat_oracle(HeatParams { mean: [0.5, 0.0], sigma0: 0.5 }, 0.0, &g);
    let cfg = ResolventConfig::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for c in suite() {
        let rep = exponential_formula_study(&rho0, &c, 0.1, &[8, 16, 32, 64, 128], &cfg).unwrap();
        let monotone = rep.gaps.windows(2).all(|w| w[1] < w[0]);
        let order = rep.order.unwrap_or(0.0);
        let need = match c.name.as_str() {
            "heat" => 0.8,
            "porous_medium_2" => 0.5,
            _ => 0.0,
        };
        ok &= monotone && order >= need;
        parts.push(format!("{} {order:.2}{}", c.name, if monotone { "" } else { " (not monotone)" }));
    }
    outcome(ok, format!("exponential formula orders: {}", parts.join(", ")))
}

fn heat_error(n: usize, h: f64) -> f64 {
    let g = GridSpec::new(1, 8.0, n, Boundary::NoFlux).unwrap();
    let p = HeatParams { mean: [0.0, 0.0], sigma0: 0.5 };
    let traj = mild_solution(&heat_oracle(p, 0.0, &g), &CoefficientSet::heat(), 0.1, h, &ResolventConfig::default())
        .unwrap();
    compare_l1(&traj, |t| heat_oracle(p, t, &g)).unwrap().max
}

fn criterion_7() -> Outcome {
    let coarse = heat_error(512, 1e-3);
    let fine = heat_error(1024, 5e-4);
    outcome(
        coarse <= 5e-3 && fine < coarse,
        format!("heat oracle: max L1 error {coarse:.2e} at (512, 1e-3), {fine:.2e} at (1024, 5e-4)"),
    )
}

fn barenblatt_error(n: usize, h: f64) -> f64 {
    let g = GridSpec::new(1, 8.0, n, Boundary::NoFlux).unwrap();
    let c = CoefficientSet::porous_medium(2.0).unwrap();
    let rho0 = barenblatt_oracle(2.0, 0.0, 0.01, &g).unwrap();
    let traj = mild_solution(&rho0, &c, 0.05, h, &ResolventConfig::default()).unwrap();
    traj.final_state().l1_distance(&barenblatt_oracle(2.0, 0.05, 0.01, &g).unwrap())
}

fn criterion_8() -> Outcome {
    let coarse = barenblatt_error(512, 5e-4);
    let fine = barenblatt_error(1024, 2.5e-4);
    let ratio = fine / coarse;
    outcome(
        coarse <= 2e-2 && (0.375..=0.625).contains(&ratio),
        format!("Barenblatt oracle: L1 error {coarse:.2e} at n=512, {fine:.2e} at n=1024, ratio {ratio:.3}"),
    )
}

fn criterion_9() -> Outcome {
    let g = GridSpec::new(1, 4.0, 128, Boundary::NoFlux).unwrap();
    let base = ResolventConfig::default();
    let knobs = ResolventConfig { eps_schedule: default_eps_schedule(10), damping: 0.9, ..base.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let knob_limit = 100.0 * base.cauchy_tol * base.cauchy_tol;
    let (mut knob_max, mut violations, mut pairs, mut closest) = (0.0_f64, 0, 0, 0.0_f64);
    for c in suite() {
        let sampler = Sampler::new(-10.0, 10.0, 2000).with_drift_grid(g);
        let report = validate_hypotheses(&c, &sampler).unwrap();
        assert!(report.all_passed(), "{} fails its hypotheses", c.name);
        let rho0 = density(&mut rng, &g);
        let a = mild_solution(&rho0, &c, 0.1, 0.01, &base).unwrap();
        let b = mild_solution(&rho0, &c, 0.1, 0.01, &knobs).unwrap();
        let rep = uniqueness_gap(&a, &b, &c, UniquenessOptions::new(0.1)).unwrap();
        knob_max = knob_max.max(rep.h_eps.iter().copied().fold(0.0, f64::max));
        violations += usize::from(rep.violated);
        pairs += 1;
        for delta in [0.05, 0.2] {
            let other = density(&mut rng, &g);
            let perturbed = rho0.lincomb(1.0 - delta, &other, delta);
            let b = mild_solution(&perturbed, &c, 0.1, 0.01, &base).unwrap();
            let rep = uniqueness_gap(&a, &b, &c, UniquenessOptions::new(0.1)).unwrap();
            violations += usize::from(rep.violated);
            pairs += 1;
            for (h, bound) in rep.h_eps.iter().zip(&rep.gronwall_bound) {
                closest = closest.max(h / bound);
            }
        }
    }
    outcome(
        knob_max <= knob_limit && violations == 0,
        format!(
            "uniqueness diagnostic: knob-perturbed max h_eps {knob_max:.2e} (limit {knob_limit:.0e}), {violations} envelope violations in {pairs} pairs, largest h_eps/envelope {closest:.3}"
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let (dim, n) = if k % 4 == 3 { (2, 32) } else { (1, 128) };
        let boundary = if k % 2 == 0 { Boundary::NoFlux } else { Boundary::ZeroDirichlet };
        let g = GridSpec::new(dim, rng.random_range(1.0..8.0), n, boundary).unwrap();
        let values = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = Field::from_values(g, values).unwrap();
        let eps = 10f64.powf(rng.random_range(-3.0..0.0));
        worst = worst.max(h_functional(&z, eps).unwrap().identity_defect);
    }
    outcome(worst <= 1e-10, format!("discrete energy identity: largest relative defect {worst:.2e} over 100 fields"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Median over three seeds of (W1, L1) at the final time, for each N.
fn particle_study(traj: &nfpe::semigroup::Trajectory, c: &CoefficientSet) -> Vec<(usize, f64, f64)> {
    let rho_t = traj.final_state();
    [1_000, 10_000, 100_000]
        .into_iter()
        .map(|n| {
            let (mut w, mut l) = (Vec::new(), Vec::new());
            for seed in 0..3 {
                let sde = SdeConfig { n_particles: n, dt: 1e-3, seed, snapshot_stride: 1_000_000, ..SdeConfig::default() };
                let ens = simulate_linearized(traj, c, &sde, &InitialLaw::Density(traj.states[0].clone())).unwrap();
                let d = marginal_discrepancy(ens.last(), rho_t, &sde);
                w.push(d.w1);
                l.push(d.l1);
            }
            (n, median(w), median(l))
        })
        .collect()
}

fn criterion_11() -> Outcome {
    let cfg = ResolventConfig::default();
    let g = GridSpec::new(1, 8.0, 512, Boundary::NoFlux).unwrap();
    let heat = CoefficientSet::heat();
    let rho0 = heat_oracle(HeatParams { mean: [0.0, 0.0], sigma0: 0.5 }, 0.0, &g);
    let traj = mild_solution(&rho0, &heat, 0.1, 1e-3, &cfg).unwrap();
    let heat_rows = particle_study(&traj, &heat);

    let g = GridSpec::new(1, 4.0, 256, Boundary::NoFlux).unwrap();
    let pm = CoefficientSet::porous_medium(2.0).unwrap().with_mobility(Mobility::SelfConsistent).with_drift(tanh());
    let rho0 = heat_oracle(HeatParams { mean: [0.5, 0.0], sigma0: 0.5 }, 0.0, &g);
    let traj = mild_solution(&rho0, &pm, 0.1, 1e-3, &cfg).unwrap();
    let pm_rows = particle_study(&traj, &pm);

    let decreasing = |rows: &[(usize, f64, f64)]| rows.windows(2).all(|w| w[1].1 < w[0].1);
    let heat_w1 = heat_rows[2].1;
    let heat_limit = 5e-3 + 3.0 / (1e5f64).sqrt();
    let pm_l1 = pm_rows[2].2;
    let ok = heat_w1 <= heat_limit && decreasing(&heat_rows) && decreasing(&pm_rows) && pm_l1 <= 5e-2;
    let fmt = |rows: &[(usize, f64, f64)]| {
        rows.iter().map(|(n, w, l)| format!("N={n}: W1 {w:.2e} L1 {l:.2e}")).collect::<Vec<_>>().join("; ")
    };
    outcome(
        ok,
        format!(
            "particle marginals: heat [{}] (W1 limit {heat_limit:.2e}); porous medium [{}] (L1 limit 5e-2)",
            fmt(&heat_rows),
            fmt(&pm_rows)
        ),
    )
}

fn checksums(dir: &Path) -> BTreeMap<String, String> {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let mut out = BTreeMap::new();
    for f in manifest["files"].as_array().unwrap() {
        let rel = f["path"].as_str().unwrap().to_string();
        let bytes = std::fs::read(dir.join(&rel)).unwrap();
        let actual = hex_digest(&bytes);
        assert_eq!(actual, f["sha256"].as_str().unwrap(), "{rel} does not match its recorded checksum");
        out.insert(rel, actual);
    }
    out
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        r#"seed = 42
[model]
name = "porous_medium"
m = 2.0
mobility = "self_consistent"
drift = "tanh_well"
[grid]
half_width = 4.0
cells = 128
[time]
t_end = 0.05
h = 1e-3
stride = 5
[sde]
n_particles = 5000
snapshot_stride = 2
[output]
formats = ["csv", "binary"]
"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_nfpe");
    let run = |tag: &str, threads: &str| -> BTreeMap<String, String> {
        let pde = tmp.path().join(format!("pde_{tag}"));
        let sim = tmp.path().join(format!("sim_{tag}"));
        let status = Command::new(bin)
            .env("NFPE_THREADS", threads)
            .args(["solve", "--config"])
            .arg(&config)
            .arg("--output-dir")
            .arg(&pde)
            .status()
            .unwrap();
        assert!(status.success());
        let status = Command::new(bin)
            .env("NFPE_THREADS", threads)
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--pde-run")
            .arg(&pde)
            .arg("--output-dir")
            .arg(&sim)
            .status()
            .unwrap();
        assert!(status.success());
        let mut all = checksums(&pde);
        all.extend(checksums(&sim).into_iter().map(|(k, v)| (format!("sim/{k}"), v)));
        all
    };
    let first = run("a", "4");
    let second = run("b", "1");
    let differing: Vec<&String> = first.iter().filter(|(k, v)| second.get(*k) != Some(v)).map(|(k, _)| k).collect();
    outcome(
        differing.is_empty() && first.len() == second.len(),
        format!("determinism: {} data files, {} differ between runs", first.len(), differing.len()),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, fn() -> Outcome); 12] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
    ];
    let mut failed = 0;
    for (k, run) in criteria {
        if !selected.is_empty() && !selected.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.passed);
        println!(
            "criterion {k:>2}: {} {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
