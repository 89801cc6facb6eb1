use std::collections::BTreeSet;
use std::path::Path;

use nodecorr::pipeline::{ensemble_stats, time_series_csv, LandingPoint, Method, RunMode, Study};
use nodecorr::policy::PolicyNetwork;
use nodecorr::scenario::ScenarioConfig;
use nodecorr::train::train_mars;
use nodecorr::verify::{run_all, Fault};

use crate::output::*;
use crate::{out_dir, Common, CorrectArgs, Failure};

fn load_scenario(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut scen = match &common.scenario {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(tf) = common.tf {
        scen = scen.with_tf(tf)?;
    }
    let distinct: BTreeSet<u64> = common.seed.iter().copied().collect();
    if distinct.len() != common.seed.len() {
        return Err(Failure::Usage("seeds must be distinct".into()));
    }
    if common.seed.is_empty() {
        return Err(Failure::Usage("at least one seed is required".into()));
    }
    Ok(scen)
}

fn prepare_out(common: &Common, scen: &ScenarioConfig) -> Result<std::path::PathBuf, Failure> {
    let out = out_dir(&common.out);
    ensure_dir(&out)?;
    write_text(&out.join("scenario.toml"), &scen.to_toml())?;
    Ok(out)
}

pub fn train(common: &Common) -> Result<(), Failure> {
    let scen = load_scenario(common)?;
    let out = prepare_out(common, &scen)?;
    let sys = scen.system();
    let grid = scen.fixed_grid();
    for &seed in &common.seed {
        let (theta, report) = train_mars(&sys, &scen.training, &grid, seed)?;
        let dir = seed_dir(&out, seed);
        ensure_dir(&dir)?;
        sys.net.unflatten(&theta)?.save(&dir.join("policy.json"))?;
        write_json(&dir.join("train_report.json"), &report)?;
        let c = report.components;
        println!(
            "seed {seed}: cost {:.6} (position {:.4}, velocity {:.4}, fuel {:.4}) after {} iterations",
            c.total, c.position, c.velocity, c.fuel, report.iterations
        );
        eprintln!("seed {seed}: trained in {:.1} s", report.wall_time_s);
    }
    Ok(())
}

fn load_study(scen: &ScenarioConfig, out: &Path, seed: u64, pinv_rtol: Option<f64>) -> Result<Study, Failure> {
    let path = seed_dir(out, seed).join("policy.json");
    if !path.exists() {
        return Err(Failure::Usage(format!("no checkpoint at {}; run `nodecorr train` first", path.display())));
    }
    let net = PolicyNetwork::load(&path)?;
    let mut study = Study::new(scen.clone(), net.theta().to_vec())?;
    if let Some(r) = pinv_rtol {
        if !(r > 0.0 && r < 1.0) {
            return Err(Failure::Usage(format!("--pinv-rtol must lie in (0, 1), got {r}")));
        }
        study.pinv_rtol = r;
    }
    Ok(study)
}

fn methods(args: &CorrectArgs) -> Vec<Method> {
    match args.method {
        None => Method::ALL.to_vec(),
        Some(Method::None) => vec![Method::None],
        Some(m) => vec![Method::None, m],
    }
}

pub fn correct(args: &CorrectArgs) -> Result<(), Failure> {
    let scen = load_scenario(&args.common)?;
    let out = prepare_out(&args.common, &scen)?;
    let mode = args.mode;
    let mut seeds = Vec::new();
    let mut failed = false;
    let mut rtol = args.pinv_rtol.unwrap_or(scen.correction.pinv_rtol);
    for &seed in &args.common.seed {
        let mut study = load_study(&scen, &out, seed, args.pinv_rtol)?;
        rtol = study.pinv_rtol;
        let dir = seed_dir(&out, seed).join(format!("correct-{}", mode.as_str()));
        let mut runs = Vec::new();
        for method in methods(args) {
            let result = study.prepare(method).and_then(|_| study.run(method, mode, &study.nominal_state()));
            match result {
                Ok(run) => {
                    write_text(&dir.join(format!("{method}.csv")), &time_series_csv(&study.system, &run))?;
                    let records = correction_records(&run);
                    if !records.is_empty() {
                        let files: Vec<CorrectionFile> =
                            records.iter().map(|(t, r)| CorrectionFile { computed_at: *t, correction: r }).collect();
                        write_json(&dir.join(format!("{method}-correction.json")), &files)?;
                    }
                    let m = run.metrics;
                    println!(
                        "seed {seed} {method:>5}: e_rf {:.4} m, e_vf {:.4} m/s, m_f {:.2} kg",
                        m.e_rf, m.e_vf, m.m_f
                    );
                    runs.push(RunSummary {
                        method,
                        status: "ok",
                        metrics: Some(m),
                        landing: Some(LandingPoint::of(&study.system, run.trajectory.last_state())),
                        diagnostics: run.diagnostics().cloned(),
                        error: None,
                    });
                }
                Err(e) if e.is_usage() => return Err(e.into()),
                Err(e) => {
                    failed = true;
                    eprintln!("seed {seed} {method}: {e}");
                    runs.push(RunSummary {
                        method,
                        status: "failed",
                        metrics: None,
                        landing: None,
                        diagnostics: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        seeds.push(SeedRuns { seed, runs });
    }
    let summary = CorrectSummary {
        format: "nodecorr-correct-summary",
        version: SUMMARY_VERSION,
        mode: mode.as_str(),
        tf: scen.mission.tf,
        pinv_rtol: rtol,
        seeds,
    };
    write_json(&out.join(format!("correct-{}-summary.json", mode.as_str())), &summary)?;
    if failed {
        return Err(Failure::Numerical("some runs failed; see the summary".into()));
    }
    Ok(())
}

pub fn ensemble(args: &CorrectArgs) -> Result<(), Failure> {
    let scen = load_scenario(&args.common)?;
    let out = prepare_out(&args.common, &scen)?;
    let mode: RunMode = args.mode;
    let methods = methods(args);
    let mut seeds = Vec::new();
    let mut rtol = args.pinv_rtol.unwrap_or(scen.correction.pinv_rtol);
    for &seed in &args.common.seed {
        let mut study = load_study(&scen, &out, seed, args.pinv_rtol)?;
        rtol = study.pinv_rtol;
        let prepared: Result<(), nodecorr::Error> = methods.iter().try_for_each(|&m| study.prepare(m));
        if let Err(e) = prepared {
            if e.is_usage() {
                return Err(e.into());
            }
            eprintln!("seed {seed}: {e}");
            seeds.push(SeedEnsemble { seed, error: Some(e.to_string()), stats: Vec::new(), members: Vec::new() });
            continue;
        }
        let dir = seed_dir(&out, seed).join(format!("ensemble-{}", mode.as_str()));
        let results = study.run_ensemble_full(&methods, mode);
        for (member, run) in &results {
            if let Some(run) = run {
                let name = format!("{}-{:02}.csv", member.method, member.index);
                write_text(&dir.join(name), &time_series_csv(&study.system, run))?;
            }
        }
        let members: Vec<_> = results.into_iter().map(|(m, _)| m).collect();
        write_text(&dir.join("landing.csv"), &landing_csv(&members))?;
        let stats: Vec<_> = methods.iter().map(|&m| ensemble_stats(&members, m)).collect();
        for s in &stats {
            let flag = if s.complete { "" } else { " (incomplete)" };
            println!(
                "seed {seed} {:>5}: e_rf {:.3} ± {:.3} m, e_vf {:.3} ± {:.3} m/s, m_f {:.1} kg, {}/{} members{flag}",
                s.method, s.e_rf.mean, s.e_rf.std, s.e_vf.mean, s.e_vf.std, s.m_f.mean, s.successes, s.members
            );
        }
        seeds.push(SeedEnsemble { seed, error: None, stats, members });
    }
    let summary = EnsembleSummary {
        format: "nodecorr-ensemble-summary",
        version: SUMMARY_VERSION,
        mode: mode.as_str(),
        tf: scen.mission.tf,
        pinv_rtol: rtol,
        radius: scen.ensemble.radius,
        seeds,
    };
    write_json(&out.join(format!("ensemble-{}-summary.json", mode.as_str())), &summary)?;
    Ok(())
}

pub fn verify(out: &Path, fault: Option<Fault>) -> Result<(), Failure> {
    ensure_dir(out)?;
    let checks = run_all(fault);
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<20} worst {:.3e} (tol {:.0e}) {}", c.name, c.worst, c.tolerance, c.detail);
    }
    write_json(&out.join("verify.json"), &checks)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} check(s) failed")));
    }
    Ok(())
}
