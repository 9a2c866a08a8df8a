//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Reference values come from code in this file (nalgebra eigen/linear
//! solves, direct recomputation of residuals, replayed edit sequences) or
//! from the gradient-descent oracle, never from the solver under test.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nsedit::certify::{small_instance, Instance};
use nsedit::config::parse_config;
use nsedit::editors::{apply_edit, solve_alphaedit, solve_memit, Method, SolverConfig};
use nsedit::harness::{batch_seed, run_experiment, ExperimentConfig};
use nsedit::knowledge::{
    generate_edit_batch, generate_world, EditHistory, KnowledgeSet, SyntheticSpec,
};
use nsedit::numerics::DenseMatrix;
use nsedit::oracle::{
    central_difference_gradient, evaluate_objective, gradient, minimize_default, ObjectiveSpec,
};
use nsedit::projector::{build_projector, DEFAULT_THRESHOLD};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.rows(), m.cols(), m.as_col_major())
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn desk_world(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    }
}

fn within(budget: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    if t <= budget {
        Ok(t)
    } else {
        Err(format!("took {t:.2?}, budget {budget:?}"))
    }
}

fn projector_algebra() -> Outcome {
    let start = Instant::now();
    let (mut sym, mut idem, mut eig_dev, mut annih) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..50 {
        let (_, pres) = generate_world(&desk_world(seed)).map_err(|e| e.to_string())?;
        let proj = build_projector(pres.keys(), DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
        if proj.retained_dim() != 24 {
            return Err(format!(
                "seed {seed}: retained_dim {} != 24",
                proj.retained_dim()
            ));
        }
        let p = na(proj.matrix());
        let k0 = na(pres.keys());
        sym = sym.max((&p - p.transpose()).amax());
        idem = idem.max((&p * &p - &p).amax());
        let eig = SymmetricEigen::new(p.clone());
        for l in eig.eigenvalues.iter() {
            eig_dev = eig_dev.max(l.abs().min((l - 1.0).abs()));
        }
        annih = annih.max((&p * &k0).norm() / k0.norm());
    }
    let t = within(Duration::from_secs(5), start)?;
    let detail = format!(
        "symmetry {sym:.1e}, idempotence {idem:.1e}, eigenvalue deviation {eig_dev:.1e}, \
         ||P K0||/||K0|| {annih:.1e} over 50 worlds ({t:.2?})"
    );
    if sym <= 1e-10 && idem <= 1e-10 && eig_dev <= 1e-8 && annih <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shared_null_space() -> Outcome {
    let start = Instant::now();
    let (_, pres) = generate_world(&desk_world(0)).map_err(|e| e.to_string())?;
    let proj = build_projector(pres.keys(), DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let basis = na(proj.retained_basis());
    let k0 = na(pres.keys());
    let k0_norm = k0.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = DMatrix::from_fn(basis.ncols(), 1, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let x = &basis * c;
        let ratio = (x.transpose() * &k0).norm() / (x.norm() * k0_norm);
        worst = worst.max(ratio);
    }
    let t = within(Duration::from_secs(1), start)?;
    let detail =
        format!("max ||x^T K0|| / (||x|| ||K0||) = {worst:.1e} over 1000 vectors ({t:.2?})");
    if worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn standard_config(methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        methods,
        ..ExperimentConfig::default()
    }
}

/// Replays the alphaedit sequence without the harness and returns the
/// preservation error after every step.
fn replay_alphaedit(config: &ExperimentConfig) -> Result<Vec<f64>, String> {
    let (mut memory, pres) = generate_world(&config.world).map_err(|e| e.to_string())?;
    let proj = build_projector(pres.keys(), config.solver.threshold).map_err(|e| e.to_string())?;
    let k0 = na(pres.keys());
    let v0 = na(pres.values());
    let mut history = EditHistory::empty(config.world.d_in, config.world.d_out);
    let mut out = Vec::new();
    for t in 0..config.batches {
        let batch = generate_edit_batch(
            &config.world,
            &memory,
            config.batch_size,
            batch_seed(config.seed, t),
        )
        .map_err(|e| e.to_string())?;
        let sol = solve_alphaedit(&memory, &batch, &proj, &history, &config.solver)
            .map_err(|e| e.to_string())?;
        memory = apply_edit(&memory, &sol).map_err(|e| e.to_string())?;
        out.push(rel(&(na(memory.weights()) * &k0), &v0));
        let achieved = memory.recall(batch.keys()).map_err(|e| e.to_string())?;
        history = history
            .extend(&KnowledgeSet::new(batch.keys().clone(), achieved).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    }
    Ok(out)
}

fn preservation_identity() -> Outcome {
    let start = Instant::now();
    let config = standard_config(vec![Method::AlphaEdit, Method::ProjectedMemit]);
    let traj = run_experiment(&config).map_err(|e| e.to_string())?;
    let replay = replay_alphaedit(&config)?;
    let mut worst = 0.0f64;
    let mut steps = 0;
    for m in &traj.per_method {
        for s in &m.steps {
            worst = worst.max(s.preservation_error);
            steps += 1;
        }
    }
    let replay_worst = replay.iter().copied().fold(0.0, f64::max);
    let t = within(Duration::from_secs(10), start)?;
    let detail = format!(
        "max preservation error {worst:.1e} over {steps} step records, independent replay {replay_worst:.1e} ({t:.2?})"
    );
    if steps == 40 && replay.len() == 20 && worst <= 1e-9 && replay_worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Minimizer of the projected sequential objective computed in the retained
/// basis `U`: `D = R K₁ᵀ U (Uᵀ (K₁K₁ᵀ + KₚKₚᵀ) U + α I)⁻¹ Uᵀ`.
fn reduced_alphaedit(inst: &Instance, alpha: f64) -> Result<DMatrix<f64>, String> {
    let u = na(inst.projector.retained_basis());
    let k1 = na(inst.batch.keys());
    let r = na(&inst
        .memory
        .residual(&inst.batch)
        .map_err(|e| e.to_string())?);
    let g = &k1 * k1.transpose() + na(inst.history.gram());
    let small = u.transpose() * g * &u + DMatrix::identity(u.ncols(), u.ncols()) * alpha;
    let inv = small.try_inverse().ok_or("reduced system singular")?;
    Ok(r * k1.transpose() * &u * inv * u.transpose())
}

fn alphaedit_closed_form() -> Outcome {
    let start = Instant::now();
    let config = SolverConfig::default();
    let alpha = config.ridge_scale;
    let (mut stat, mut agree, mut obj, mut reduced) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..20 {
        let inst = small_instance(seed, 10).map_err(|e| e.to_string())?;
        if inst.history.is_empty() {
            return Err("empty history".into());
        }
        let sol = solve_alphaedit(
            &inst.memory,
            &inst.batch,
            &inst.projector,
            &inst.history,
            &config,
        )
        .map_err(|e| e.to_string())?;
        // Stationarity residual recomputed here from its definition.
        let p = na(inst.projector.matrix());
        let d = na(&sol.delta) * &p;
        let k1 = na(inst.batch.keys());
        let r = na(&inst
            .memory
            .residual(&inst.batch)
            .map_err(|e| e.to_string())?);
        let gp = na(inst.history.gram());
        let res = (&d * &k1 - &r) * k1.transpose() * &p + &d * alpha + &d * gp * &p;
        let scale = r.norm() * k1.norm() + d.norm() * (1.0 + na(inst.history.gram()).norm());
        stat = stat.max(res.norm() / scale);

        let spec = ObjectiveSpec::projected_sequential(
            &inst.memory,
            &inst.batch,
            inst.projector.matrix(),
            alpha,
            &inst.history,
        )
        .map_err(|e| e.to_string())?;
        let oracle = minimize_default(&spec).map_err(|e| e.to_string())?;
        if !oracle.converged {
            return Err(format!("seed {seed}: oracle did not converge"));
        }
        let od = na(&oracle.delta) * &p;
        agree = agree.max(rel(&d, &od));
        let jc = evaluate_objective(&spec, &sol.delta).map_err(|e| e.to_string())?;
        obj = obj.max((jc - oracle.objective_value).abs() / oracle.objective_value);
        reduced = reduced.max(rel(&d, &reduced_alphaedit(&inst, alpha)?));
    }
    let t = within(Duration::from_secs(60), start)?;
    let detail = format!(
        "stationarity {stat:.1e}, oracle agreement {agree:.1e}, objective match {obj:.1e}, \
         reduced-basis solve {reduced:.1e} over 20 instances ({t:.2?})"
    );
    if stat <= 1e-8 && agree <= 1e-4 && obj <= 1e-8 && reduced <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn memit_closed_form() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for lambda in [1.0, 100.0] {
        let config = SolverConfig::default().with_preserved_weight(lambda);
        let (mut agree, mut obj) = (0.0f64, 0.0f64);
        for seed in 0..20 {
            let inst = small_instance(seed, 16).map_err(|e| e.to_string())?;
            let gram = inst.preserved.keys().gram();
            let sol = solve_memit(&inst.memory, &inst.batch, &gram, &inst.history, &config)
                .map_err(|e| e.to_string())?;
            let spec = ObjectiveSpec::regularized(
                &inst.memory,
                &inst.batch,
                &inst.preserved,
                lambda,
                &inst.history,
            )
            .map_err(|e| e.to_string())?;
            let oracle = minimize_default(&spec).map_err(|e| e.to_string())?;
            if !oracle.converged {
                return Err(format!(
                    "lambda {lambda}, seed {seed}: oracle did not converge"
                ));
            }
            agree = agree.max(rel(&na(&sol.delta), &na(&oracle.delta)));
            let jc = evaluate_objective(&spec, &sol.delta).map_err(|e| e.to_string())?;
            obj = obj.max((jc - oracle.objective_value).abs() / oracle.objective_value);
        }
        ok &= agree <= 1e-4 && obj <= 1e-8;
        parts.push(format!(
            "lambda {lambda}: agreement {agree:.1e}, objective {obj:.1e}"
        ));
    }
    let t = within(Duration::from_secs(60), start)?;
    let detail = format!("{} over 20 instances each ({t:.2?})", parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn invertibility() -> Outcome {
    let start = Instant::now();
    let config = SolverConfig::default();
    let mut worst_cond = 0.0f64;
    let mut worst_res = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100u64 {
        let d_in = rng.random_range(4..=32);
        let rank = rng.random_range(1..=d_in);
        let spec = SyntheticSpec {
            d_in,
            d_out: rng.random_range(1..=16),
            preserved_count: rank + rng.random_range(0..=20),
            effective_rank: rank,
            key_noise: if i % 3 == 0 { 0.05 } else { 0.0 },
            edit_novelty: 1.0,
            seed: i,
        };
        let (memory, pres) = generate_world(&spec).map_err(|e| e.to_string())?;
        let proj = build_projector(pres.keys(), DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
        let mut history = EditHistory::empty(spec.d_in, spec.d_out);
        for t in 0..rng.random_range(0..4) {
            let b = generate_edit_batch(&spec, &memory, rng.random_range(1..=8), batch_seed(i, t))
                .map_err(|e| e.to_string())?;
            history = history.extend(&b).map_err(|e| e.to_string())?;
        }
        let batch = generate_edit_batch(&spec, &memory, rng.random_range(1..=8), batch_seed(i, 99))
            .map_err(|e| e.to_string())?;
        let sol = solve_alphaedit(&memory, &batch, &proj, &history, &config)
            .map_err(|e| format!("system {i}: {e}"))?;
        if !sol.system_condition_estimate.is_finite() {
            return Err(format!("system {i}: condition estimate not finite"));
        }
        worst_cond = worst_cond.max(sol.system_condition_estimate);
        // The bracket solve itself, checked against its definition.
        let p = na(proj.matrix());
        let k1 = na(batch.keys());
        let bracket =
            na(history.gram()) * &p + &k1 * k1.transpose() * &p + DMatrix::identity(d_in, d_in);
        let r = na(&memory.residual(&batch).map_err(|e| e.to_string())?);
        let target = r * k1.transpose() * &p;
        let res = (na(&sol.delta) * bracket - &target).norm() / target.norm().max(1e-300);
        worst_res = worst_res.max(res);
    }
    let t = within(Duration::from_secs(5), start)?;
    let detail = format!(
        "100 systems solved, max condition estimate {worst_cond:.1e}, max relative solve residual {worst_res:.1e} ({t:.2?})"
    );
    if worst_res <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn drift_separation() -> Outcome {
    let start = Instant::now();
    let traj = run_experiment(&standard_config(vec![Method::Memit, Method::AlphaEdit]))
        .map_err(|e| e.to_string())?;
    let alpha: Vec<f64> = traj
        .method(Method::AlphaEdit)
        .ok_or("missing alphaedit")?
        .steps
        .iter()
        .map(|s| s.preservation_error)
        .collect();
    let memit_final = traj
        .method(Method::Memit)
        .ok_or("missing memit")?
        .steps
        .last()
        .ok_or("no steps")?
        .preservation_error;
    let alpha_final = *alpha.last().ok_or("no steps")?;
    let max = alpha.iter().copied().fold(0.0, f64::max);
    let min = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let flat = if min > 0.0 { max / min } else { f64::INFINITY };
    let factor = memit_final / alpha_final;
    let t = within(Duration::from_secs(10), start)?;
    let detail = format!(
        "final preservation alphaedit {alpha_final:.2e}, memit {memit_final:.2e} (factor {factor:.1e}), \
         alphaedit max/min {flat:.2} ({t:.2?})"
    );
    if alpha_final < 1e-8 && factor >= 1e3 && flat <= 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn projection_alone() -> Outcome {
    let start = Instant::now();
    let traj = run_experiment(&standard_config(vec![
        Method::ProjectedMemit,
        Method::AlphaEdit,
        Method::Memit,
    ]))
    .map_err(|e| e.to_string())?;
    let worst = |m: Method| -> Result<f64, String> {
        Ok(traj
            .method(m)
            .ok_or("missing method")?
            .steps
            .iter()
            .map(|s| s.preservation_error)
            .fold(0.0, f64::max))
    };
    let (pm, ae, me) = (
        worst(Method::ProjectedMemit)?,
        worst(Method::AlphaEdit)?,
        worst(Method::Memit)?,
    );
    let t = within(Duration::from_secs(10), start)?;
    let detail = format!(
        "max preservation projected-memit {pm:.1e}, alphaedit {ae:.1e}, unprojected memit {me:.1e} ({t:.2?})"
    );
    if pm <= 1e-9 && ae <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..10 {
        let d_in = rng.random_range(3..=10);
        let rank = rng.random_range(1..=d_in);
        let spec = SyntheticSpec {
            d_in,
            d_out: rng.random_range(1..=6),
            preserved_count: rank + 5,
            effective_rank: rank,
            key_noise: 0.0,
            edit_novelty: 1.0,
            seed,
        };
        let (memory, pres) = generate_world(&spec).map_err(|e| e.to_string())?;
        let proj = build_projector(pres.keys(), DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
        let history = EditHistory::empty(d_in, spec.d_out)
            .extend(
                &generate_edit_batch(&spec, &memory, 2, batch_seed(seed, 0))
                    .map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
        let batch = generate_edit_batch(&spec, &memory, 3, batch_seed(seed, 1))
            .map_err(|e| e.to_string())?;
        let lambda = rng.random_range(0.5..50.0);
        let alpha = rng.random_range(0.1..5.0);
        let specs = [
            ObjectiveSpec::naive(&memory, &batch),
            ObjectiveSpec::regularized(&memory, &batch, &pres, lambda, &history),
            ObjectiveSpec::projected_single(&memory, &batch, proj.matrix(), alpha),
            ObjectiveSpec::projected_sequential(&memory, &batch, proj.matrix(), alpha, &history),
        ];
        let delta = DenseMatrix::from_fn(spec.d_out, d_in, |_, _| rng.sample(StandardNormal));
        for (k, s) in specs.into_iter().enumerate() {
            let s = s.map_err(|e| e.to_string())?;
            let g = na(&gradient(&s, &delta).map_err(|e| e.to_string())?);
            let fd = na(&central_difference_gradient(&s, &delta, 1e-6).map_err(|e| e.to_string())?);
            worst[k] = worst[k].max(rel(&g, &fd));
        }
    }
    let t = within(Duration::from_secs(30), start)?;
    let detail = format!(
        "max relative gap naive {:.1e}, regularized {:.1e}, projected-single {:.1e}, projected-sequential {:.1e} ({t:.2?})",
        worst[0], worst[1], worst[2], worst[3]
    );
    if worst.iter().all(|&w| w <= 1e-4) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_nsedit"))
        .args(args)
        .arg("--output")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!(
            "nsedit {args:?} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        ))
    }
}

fn determinism_and_round_trip() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("in.toml");
    std::fs::write(
        &cfg,
        "batches = 6\nbatch_size = 3\nseed = 42\nkey_noise = 0.01\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    run_cli(&["run", "--config", cfg], &a)?;
    run_cli(&["run", "--config", cfg], &b)?;
    let resolved = a.join("config.resolved");
    run_cli(&["run", "--config", resolved.to_str().unwrap()], &c)?;

    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).map_err(|e| e.to_string());
    let mut identical = true;
    for f in [
        "trajectory.csv",
        "summary.csv",
        "projector.csv",
        "config.resolved",
    ] {
        let base = read(&a, f)?;
        identical &= base == read(&b, f)? && base == read(&c, f)?;
    }
    let text = String::from_utf8(read(&a, "config.resolved")?).map_err(|e| e.to_string())?;
    let reparsed = parse_config(&text).map_err(|e| e.to_string())?;
    let direct = parse_config(&std::fs::read_to_string(cfg).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let rows = read(&a, "trajectory.csv")?
        .iter()
        .filter(|&&c| c == b'\n')
        .count();
    let t = within(Duration::from_secs(5), start)?;
    let detail = format!(
        "repeat run and config.resolved re-run byte-identical: {identical}, resolved config equal: {}, {rows} lines ({t:.2?})",
        reparsed == direct
    );
    if identical && reparsed == direct && rows == 1 + 6 * 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("projector algebra", projector_algebra),
        ("shared null space", shared_null_space),
        ("preservation identity", preservation_identity),
        ("alphaedit closed form vs oracle", alphaedit_closed_form),
        ("memit closed form vs oracle", memit_closed_form),
        ("bracket invertibility", invertibility),
        ("drift separation", drift_separation),
        ("projection alone preserves", projection_alone),
        ("gradient correctness", gradient_correctness),
        ("determinism and round-trip", determinism_and_round_trip),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
