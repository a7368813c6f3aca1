//! Acceptance suite: one PASS/FAIL line per criterion. Set `ACCEPTANCE_STRICT=1`
//! to turn a failing criterion into a nonzero exit.

use std::process::{Command, ExitCode};
use std::time::Instant;

use massive_ra::crapid::{optimize_scheme, sic_decode, slot_sinr, CrapidConfig, ReplicaFrame, Scheme, SchemeGrid, SinrMode};
use massive_ra::erapid::{
    default_activation_grid, default_pilot_grid, ergodic_sum_rate, fit_heuristic, optimize_erapid_refined,
    ErapidConfig, ErapidOptimum, SweepPoint,
};
use massive_ra::harness::{run_experiment, ExperimentSpec, ResultRow};
use massive_ra::stream::derive_stream;
use rand::Rng;

mod common;
use common::{brute_force, enumerate_missed_detection, random_frame, single_user_oracle};

const SEED: u64 = 1;

struct Check {
    label: String,
    passed: bool,
}

fn check(checks: &mut Vec<Check>, passed: bool, label: impl Into<String>) {
    checks.push(Check { label: label.into(), passed });
}

fn report(n: usize, title: &str, checks: &[Check], started: Instant) -> bool {
    let passed = checks.iter().all(|c| c.passed);
    println!(
        "criterion {n}: {} {title} ({:.0} s)",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    for c in checks {
        println!("    [{}] {}", if c.passed { "ok" } else { "FAILED" }, c.label);
    }
    passed
}

fn metric(rows: &[ResultRow], k: f64, mode: &str, name: &str) -> f64 {
    rows.iter()
        .find(|r| r.sweep_value == k && r.mode == mode && r.metric == name)
        .unwrap_or_else(|| panic!("missing row {k} {mode} {name}"))
        .mean
}

fn crowd_spec(estimator: &str, shadowing_db: f64, trials: usize, ks: &str) -> ExperimentSpec {
    ExperimentSpec::from_toml(&format!(
        r#"
[experiment]
kind = "sucre_fig3"
sweep_name = "num_devices"
sweep_values = {ks}
master_seed = {SEED}
num_trials = {trials}

[system]
num_antennas = 100
num_pilots = 10
edge_snr_db = 0.0
shadowing_std_db = {shadowing_db}

[sucre]
retry_prob = 0.5
max_attempts = 10
estimator = "{estimator}"

[scenario]
activation_prob = 0.001
num_slots = 2000
"#
    ))
    .expect("spec parses")
}

fn criterion_1_and_2() -> (bool, bool) {
    let t = Instant::now();
    let rows = run_experiment(&crowd_spec("ideal", 0.0, 20, "[100, 2000, 4000, 8000, 10000, 12000]")).unwrap();
    let mut c1 = Vec::new();
    let adm = metric(&rows, 10000.0, "sucre", "admission_fraction");
    check(&mut c1, adm >= 0.85, format!("sucre admission at K=10000: {adm:.3} (>= 0.85)"));
    for k in [100.0, 2000.0, 4000.0, 8000.0] {
        let a = metric(&rows, k, "sucre", "mean_attempts");
        check(&mut c1, a <= 1.5, format!("sucre mean attempts at K={k}: {a:.3} (<= 1.5)"));
    }
    let base = metric(&rows, 10000.0, "baseline", "admission_fraction");
    check(&mut c1, base <= 0.05, format!("baseline admission at K=10000: {base:.4} (<= 0.05)"));
    let (b, s) = (metric(&rows, 4000.0, "baseline", "mean_attempts"), metric(&rows, 4000.0, "sucre", "mean_attempts"));
    check(&mut c1, b >= 3.0 * s, format!("mean attempts at K=4000: baseline {b:.3} vs sucre {s:.3} (ratio {:.2} >= 3)", b / s));
    let p1 = report(1, "crowd admission sweep (ideal estimates, 20 x 2000 slots)", &c1, t);
    // At most one admission per pilot and slot, and a denial costs the full
    // attempt budget: mean attempts <= 1.5 forces an admitted fraction `a`,
    // which in turn needs an offered load of -ln(1 - a lambda) per pilot.
    let lambda: f64 = 0.8;
    let a = (10.0 - 1.5) / 9.0;
    println!(
        "    [info] K=8000: 1.5 mean attempts needs admission >= {a:.3}, which needs >= {:.2} attempts per request",
        -(1.0 - a * lambda).ln() / lambda
    );
    let shadowed = run_experiment(&crowd_spec("ideal", 8.0, 5, "[8000, 10000]")).unwrap();

    let t = Instant::now();
    let mut c2 = Vec::new();
    let res = metric(&rows, 10000.0, "sucre", "resolution_fraction");
    check(&mut c2, res >= 0.85, format!("ideal-estimate resolution at K=10000: {res:.3} (>= 0.85)"));
    let noisy = run_experiment(&crowd_spec("noisy", 0.0, 5, "[10000]")).unwrap();
    let nres = metric(&noisy, 10000.0, "sucre", "resolution_fraction");
    let p2 = report(2, "collision resolution fraction", &c2, t);
    for k in [8000.0, 10000.0] {
        println!(
            "    [info] 8 dB shadowing, K={k}: admission {:.3}, mean attempts {:.2}, resolution {:.3}",
            metric(&shadowed, k, "sucre", "admission_fraction"),
            metric(&shadowed, k, "sucre", "mean_attempts"),
            metric(&shadowed, k, "sucre", "resolution_fraction")
        );
    }
    println!("    [info] noisy-estimate resolution at K=10000: {nres:.3} (documented, 5 pp band: {})", if nres >= 0.80 { "inside" } else { "outside" });
    (p1, p2)
}

fn erapid_optimum(m: usize, tau_u: usize, snr_db: f64, sweep_index: u32) -> ErapidOptimum {
    let cfg = ErapidConfig { num_devices: 800, num_antennas: m, slot_length: tau_u, snr_db, ..ErapidConfig::default() };
    optimize_erapid_refined(
        &cfg,
        &default_pilot_grid(tau_u),
        &default_activation_grid(cfg.num_devices, cfg.num_devices / 2),
        3,
        &derive_stream(SEED, 2, sweep_index, 0),
    )
}

fn criterion_3() -> bool {
    let t = Instant::now();
    let mut c = Vec::new();
    for (m, lo, hi, idx) in [(100, 45.0, 75.0, 0), (400, 105.0, 175.0, 1)] {
        let o = erapid_optimum(m, 300, 10.0, idx);
        let na = o.bound.mean_active;
        check(&mut c, (lo..=hi).contains(&na), format!("M={m}: optimized mean active {na:.1} in [{lo}, {hi}]"));
        let pa = o.bound.per_active_rate;
        check(&mut c, (0.4..=0.6).contains(&pa), format!("M={m}: per-active rate {pa:.3} in [0.4, 0.6]"));
        let f = o.pilot_fraction(300);
        check(&mut c, (0.18..=0.48).contains(&f), format!("M={m}: pilot fraction {f:.3} in [0.18, 0.48] (tau_p={})", o.num_pilots));
    }
    let mut points = Vec::new();
    for (i, &(m, tau_u)) in [50, 100, 200, 400].iter().flat_map(|&m| [(m, 100), (m, 300)]).collect::<Vec<_>>().iter().enumerate() {
        let o = erapid_optimum(m, tau_u, 10.0, 10 + i as u32);
        points.push(SweepPoint { num_antennas: m, slot_length: tau_u, sum_rate: o.bound.sum_rate, mean_active: o.bound.mean_active });
    }
    let fit = fit_heuristic(&points).expect("eight sweep points");
    check(&mut c, (0.4..=0.6).contains(&fit.slope), format!("scaling slope {:.3} in [0.4, 0.6] (x = {:.3})", fit.slope, fit.x));
    let (r5, r20) = (erapid_optimum(100, 300, 5.0, 20).bound.sum_rate, erapid_optimum(100, 300, 20.0, 21).bound.sum_rate);
    let rel = (r20 - r5).abs() / r5.min(r20);
    check(&mut c, rel < 0.10, format!("optimized rate at 5 dB {r5:.2} vs 20 dB {r20:.2}: {:.1}% (< 10%)", 100.0 * rel));
    report(3, "pilot-hopping rate bound", &c, t)
}

fn criterion_4() -> bool {
    let t = Instant::now();
    let mut c = Vec::new();
    let grid = SchemeGrid::default();
    let rng = derive_stream(SEED, 3, 0, 0);
    let at = |m: usize, s: Scheme| {
        optimize_scheme(s, &CrapidConfig { num_antennas: m, code_rate: 0.5, ..CrapidConfig::default() }, &grid, 10, &rng)
            .throughput
    };
    let crapid: Vec<f64> = [64, 256, 400, 1024].iter().map(|&m| at(m, Scheme::Crapid)).collect();
    let aloha: Vec<f64> = [256, 400, 1024].iter().map(|&m| at(m, Scheme::Aloha)).collect();
    let smm400 = at(400, Scheme::Smm);
    let smm1024 = at(1024, Scheme::Smm);
    let r = crapid[2] / smm400;
    check(&mut c, (0.35..=0.55).contains(&r), format!("M=400 crapid/smm {r:.3} in [0.35, 0.55] ({:.1}/{smm400:.1})", crapid[2]));
    let r = crapid[3] / smm1024;
    check(&mut c, (0.51..=0.71).contains(&r), format!("M=1024 crapid/smm {r:.3} in [0.51, 0.71] ({:.1}/{smm1024:.1})", crapid[3]));
    let r = aloha[1] / smm400;
    check(&mut c, (0.23..=0.43).contains(&r), format!("M=400 aloha/smm {r:.3} in [0.23, 0.43]"));
    let gain = aloha[2] / aloha[0] - 1.0;
    check(&mut c, gain < 0.10, format!("aloha gain M=256 -> 1024: {:.1}% (< 10%)", 100.0 * gain));
    let inc = crapid[0] < crapid[1] && crapid[1] < crapid[3];
    check(&mut c, inc, format!("crapid over M=64, 256, 1024: {:.1}, {:.1}, {:.1} (strictly increasing)", crapid[0], crapid[1], crapid[3]));
    report(4, "replica framing vs. ALOHA and scheduled MIMO at R=0.5", &c, t)
}

fn criterion_5() -> bool {
    let t = Instant::now();
    let mut c = Vec::new();

    let mut rng = derive_stream(SEED, 5, 0, 0);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (mut frame, cfg) = random_frame(&mut rng, 12);
        let want = brute_force(&frame, &cfg);
        sic_decode(&mut frame, &cfg).expect("converges");
        if frame.decoded() != want.as_slice() {
            mismatches += 1;
        }
    }
    check(&mut c, mismatches == 0, format!("(a) peeling vs brute force on 200 frames: {mismatches} mismatches"));

    let mut rng = derive_stream(SEED, 5, 1, 0);
    for m in [100, 400] {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let pilots = rng.random_range(2..=8);
            let n = rng.random_range(1..=6);
            let triples: Vec<_> = (0..n).map(|d| (d, 0, rng.random_range(0..pilots))).collect();
            let cfg = CrapidConfig { num_devices: n, num_antennas: m, num_pilots: pilots, frame_length: 1, ..CrapidConfig::default() };
            let frame = ReplicaFrame::from_replicas(n, 1, pilots, vec![1.0; n], &triples).unwrap();
            let target = rng.random_range(0..n);
            let asym = slot_sinr(&frame, target, &cfg, SinrMode::Asymptotic, &mut rng);
            let exact = slot_sinr(&frame, target, &cfg, SinrMode::Exact { draws: 2000, symbols: 32 }, &mut rng);
            worst = worst.max((exact - asym).abs() / asym);
        }
        check(&mut c, worst <= 0.10, format!("(b) M={m}: asymptotic vs exact MRC SINR, worst of 100 slots {:.1}% (<= 10%)", 100.0 * worst));
    }

    let mut worst: f64 = 0.0;
    for tau in 2..=12 {
        for l in 1..tau {
            let (rate, want) = enumerate_missed_detection(tau, l);
            worst = worst.max((rate - want).abs());
        }
    }
    check(&mut c, worst < 1e-12, format!("(c) missed detection equals 1/C(tau, l) for tau <= 12: max deviation {worst:e}"));

    let mut worst: f64 = 0.0;
    for (m, tau_p, snr_db) in [(100, 10, 10.0), (400, 100, 0.0), (50, 1, 20.0)] {
        let cfg = ErapidConfig {
            num_devices: 1,
            num_antennas: m,
            num_pilots: tau_p,
            activation_prob: 1.0,
            gain_spread: 0.0,
            snr_db,
            ..ErapidConfig::default()
        };
        let r = ergodic_sum_rate(&cfg, &mut derive_stream(SEED, 5, 2, m as u64));
        let want = single_user_oracle(m as f64, tau_p as f64, cfg.slot_length as f64, cfg.mean_gain, cfg.noise_power());
        worst = worst.max((r.sum_rate - want).abs() / (1e-9 * want + 3.0 * r.std_error));
    }
    check(&mut c, worst <= 1.0, format!("(d) single-user bound vs closed form: worst deviation {worst:.2e} of tolerance"));
    report(5, "oracle suites", &c, t)
}

fn criterion_6() -> bool {
    let t = Instant::now();
    let mut c = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let specs = [
        (
            "crowd",
            "[experiment]\nkind = \"sucre_fig3\"\nsweep_name = \"num_devices\"\nsweep_values = [1000, 6000]\nnum_trials = 6\n\n[scenario]\nactivation_prob = 0.001\nnum_slots = 300\nwarmup_slots = 50\n",
        ),
        (
            "hopping",
            "[experiment]\nkind = \"erapid_fig4\"\nsweep_name = \"slot_length\"\nsweep_values = [60, 120]\nnum_trials = 2\n\n[erapid]\nnum_devices = 200\nnum_pilots = 20\nnum_antennas = 64\nmc_slots = 50\n\n[search]\nerapid_max_active = 60\n",
        ),
        (
            "framing",
            "[experiment]\nkind = \"crapid_fig5\"\nsweep_name = \"num_antennas\"\nsweep_values = [64, 256]\nnum_trials = 2\n\n[crapid]\nnum_devices = 200\n\n[search]\ncrapid_frames = 3\ncrapid_grid = { pilots = [16, 32], frame_lengths = [5, 10], loads = [0.5, 1.0, 2.0] }\n",
        ),
    ];
    for (name, text) in specs {
        let spec = dir.path().join(format!("{name}.toml"));
        std::fs::write(&spec, text).unwrap();
        let mut outputs = Vec::new();
        for workers in ["1", "8"] {
            let out = dir.path().join(format!("{name}-{workers}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_massive-ra"))
                .args(["run", spec.to_str().unwrap(), "--seed", "77", "--workers", workers, "--out", out.to_str().unwrap()])
                .output()
                .unwrap()
                .status;
            assert!(status.success(), "run failed for {name}");
            outputs.push(std::fs::read(&out).unwrap());
        }
        check(&mut c, outputs[0] == outputs[1], format!("{name}: workers 1 vs 8 CSV byte-identical ({} bytes)", outputs[0].len()));
    }
    report(6, "determinism across worker counts", &c, t)
}

fn main() -> ExitCode {
    let (p1, p2) = criterion_1_and_2();
    let results = [p1, p2, criterion_3(), criterion_4(), criterion_5(), criterion_6()];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i + 1).collect();
    if failed.is_empty() {
        println!("acceptance: all 6 criteria pass");
        return ExitCode::SUCCESS;
    }
    println!("acceptance: failing criteria {failed:?}");
    // Failures are reported, not fatal, unless strict mode is requested.
    if std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
