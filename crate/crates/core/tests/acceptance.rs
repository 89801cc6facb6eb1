//! End-to-end acceptance gate: one PASS/FAIL line per criterion, run
//! sequentially in a single test.

use std::time::{Duration, Instant};

use nodecorr::pipeline::{ensemble_stats, Method, RunMode, Study};
use nodecorr::scenario::ScenarioConfig;
use nodecorr::train::train_mars;
use nodecorr::verify::{self, CheckOutcome};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Pseudoinverse cutoff for the ensemble comparison.
const ENSEMBLE_PINV_RTOL: f64 = 0.01;

struct Line {
    id: u32,
    passed: bool,
    text: String,
}

fn report(lines: &mut Vec<Line>, id: u32, passed: bool, text: String) {
    println!("{} criterion {id:>2}: {text}", if passed { "PASS" } else { "FAIL" });
    lines.push(Line { id, passed, text });
}

fn oracle(lines: &mut Vec<Line>, id: u32, limit: Duration, check: impl FnOnce() -> CheckOutcome) {
    let start = Instant::now();
    let c = check();
    let took = start.elapsed();
    let ok = c.passed && took < limit;
    report(
        lines,
        id,
        ok,
        format!(
            "{} worst {:.3e} <= {:.0e}; {} ({:.2} s < {} s)",
            c.name,
            c.worst,
            c.tolerance,
            c.detail,
            took.as_secs_f64(),
            limit.as_secs()
        ),
    );
}

fn checks_json(fault: Option<verify::Fault>) -> String {
    serde_json::to_string(&verify::run_all(fault)).unwrap()
}

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    let s = Duration::from_secs;

    oracle(&mut lines, 1, s(1), verify::parameter_exactness);
    oracle(&mut lines, 2, s(1), verify::control_exactness);
    oracle(&mut lines, 3, s(10), verify::terminal_reduction);
    oracle(&mut lines, 4, s(120), verify::mars_sensitivity);
    oracle(&mut lines, 5, s(30), || verify::gramian_structure(None));
    oracle(&mut lines, 6, s(30), verify::pinv_min_norm);
    oracle(&mut lines, 7, s(120), verify::mars_gradient);

    // Stage 1 for every seed, then the nominal single-shot comparison.
    let start = Instant::now();
    let scen = ScenarioConfig::default();
    assert_eq!(scen.mission.tf, 43.0);
    let sys = scen.system();
    let mut studies = Vec::new();
    for &seed in &SEEDS {
        let (theta, _) = train_mars(&sys, &scen.training, &scen.fixed_grid(), seed).unwrap();
        let mut study = Study::new(scen.clone(), theta).unwrap();
        study.prepare(Method::Theta).unwrap();
        study.prepare(Method::U).unwrap();
        studies.push(study);
    }
    let mut reduced = 0;
    let mut u_complete = 0;
    let mut per_seed = Vec::new();
    for (seed, study) in SEEDS.iter().zip(&studies) {
        let x0 = study.nominal_state();
        let base = study.run(Method::None, RunMode::Single, &x0).unwrap().metrics;
        let theta = study.run(Method::Theta, RunMode::Single, &x0).map(|o| o.metrics);
        let u = study.run(Method::U, RunMode::Single, &x0).map(|o| o.metrics);
        if theta.as_ref().is_ok_and(|m| m.e_rf < base.e_rf) {
            reduced += 1;
        }
        let theta_rf = theta.map_or("failed".to_owned(), |m| format!("{:.2}", m.e_rf));
        let u_vf = match &u {
            Ok(m) => {
                u_complete += 1;
                format!("{:.2}", m.e_vf)
            }
            Err(_) => "failed".to_owned(),
        };
        per_seed
            .push(format!("seed {seed}: e_rf {:.2} -> {theta_rf} m, e_vf {:.2} (u {u_vf}) m/s", base.e_rf, base.e_vf));
    }
    let took = start.elapsed();
    for l in &per_seed {
        println!("    {l}");
    }
    report(
        &mut lines,
        8,
        reduced >= 4 && u_complete == SEEDS.len() && took < s(1800),
        format!(
            "theta correction reduces e_rf in {reduced}/5 seeds (need 4); u runs complete {u_complete}/5 ({:.0} s)",
            took.as_secs_f64()
        ),
    );

    // Ensemble over the ring of perturbed initial positions.
    let start = Instant::now();
    let mut below = 0;
    let mut complete = true;
    let mut per_seed = Vec::new();
    for (seed, study) in SEEDS.iter().zip(studies.iter_mut()) {
        let base = ensemble_stats(&study.run_ensemble(&[Method::None], RunMode::Single), Method::None);
        let at_default = ensemble_stats(&study.run_ensemble(&[Method::Theta], RunMode::Single), Method::Theta);
        study.pinv_rtol = ENSEMBLE_PINV_RTOL;
        let theta = ensemble_stats(&study.run_ensemble(&[Method::Theta], RunMode::Single), Method::Theta);
        complete &= base.complete && theta.complete && base.members == 16;
        if theta.complete && theta.e_rf.mean < base.e_rf.mean {
            below += 1;
        }
        per_seed.push(format!(
            "seed {seed}: mean e_rf baseline {:.1} m, theta {:.1} m ({}/16), at default cutoff {:.1} m ({}/16)",
            base.e_rf.mean, theta.e_rf.mean, theta.successes, at_default.e_rf.mean, at_default.successes
        ));
    }
    let took = start.elapsed();
    for l in &per_seed {
        println!("    {l}");
    }
    report(
        &mut lines,
        9,
        below == SEEDS.len() && complete && took < s(1800),
        format!(
            "ensemble mean e_rf below baseline in {below}/5 seeds at cutoff {ENSEMBLE_PINV_RTOL}, all members complete: {complete} ({:.0} s)",
            took.as_secs_f64()
        ),
    );

    // Repeat runs and thread counts.
    let first = checks_json(None);
    let second = checks_json(None);
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let study = &studies[0];
    let ens = |n| {
        pool(n).install(|| {
            serde_json::to_string(&study.run_ensemble(&[Method::None, Method::Theta, Method::U], RunMode::Single))
                .unwrap()
        })
    };
    let (one, eight) = (ens(1), ens(8));
    let mut quick = scen.clone();
    quick.training.adam.iterations = 5;
    let trained = |n| {
        pool(n).install(|| {
            serde_json::to_string(&train_mars(&sys, &quick.training, &quick.fixed_grid(), 7).unwrap()).unwrap()
        })
    };
    let same_train = trained(1) == trained(8);
    report(
        &mut lines,
        10,
        first == second && one == eight && same_train,
        format!(
            "verify repeat identical: {}, ensemble 1 vs 8 threads identical: {}, training 1 vs 8 threads identical: {same_train}",
            first == second,
            one == eight
        ),
    );

    let failed: Vec<_> = lines.iter().filter(|l| !l.passed).map(|l| format!("{}: {}", l.id, l.text)).collect();
    assert_eq!(lines.len(), 10);
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
