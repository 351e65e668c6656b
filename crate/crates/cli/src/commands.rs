//! The six subcommands. Each returns the process exit code: 0 when every
//! requested audit passes, 2 when an audit names a violated invariant
//! (details land in the JSON report), errors bubble up as exit 1.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use delay_consensus::fixed_delay::{
    augment_column, augment_row, closed_form_stationary, DelayAssignment,
};
use delay_consensus::graph::DirectedGraph;
use delay_consensus::matrix::{StochasticMatrix, Stochasticity};
use delay_consensus::poincare::{fit_quadratic, inverse_gap_experiment};
use delay_consensus::push_sum::{
    diameter_bound_check, write_pushsum_csv, PushSumFrame, PushSumOutcome, PushSumRun,
    PushSumState,
};
use delay_consensus::random_delay::{contraction_audit, write_trajectory_csv, RandomDelayRun};
use delay_consensus::spectral::{
    additive_reversibilization, lazy, second_eigenvalue, second_eigenvalue_reversible,
    stationary_distribution, tv_bound,
};
use delay_consensus::{Error, Protocol, Vector};

use crate::config::{DelayModel, Settings, STREAM_PUSH_RUN, STREAM_ROW_RUN};

fn out_path(settings: &Settings, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&settings.out)
        .with_context(|| format!("creating output dir {}", settings.out.display()))?;
    Ok(settings.out.join(name))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    Ok(())
}

/// Build the augmented system for a fixed delay assignment and write the
/// matrix CSV, the delay-node index map and (for doubly stochastic
/// protocols) the closed-form stationary distribution.
pub fn cmd_augment(settings: &Settings) -> Result<i32> {
    let graph = settings.graph()?;
    let protocol = settings.protocol(&graph)?;
    let delays = settings.fixed_delays(&graph)?;
    let algorithm = settings.algorithm.as_deref().unwrap_or("row-consensus");
    let aug = match algorithm {
        "row-consensus" => augment_row(&protocol, &delays, &graph)?,
        "push-sum" => augment_column(&protocol, &delays, &graph)?,
        other => bail!("unknown algorithm {other:?} (row-consensus | push-sum)"),
    };
    let mut csv = BufWriter::new(File::create(out_path(settings, "augmented.csv")?)?);
    aug.matrix().write_csv(&mut csv)?;
    write_json(&out_path(settings, "index_map.json")?, &aug.index_map_json())?;
    if protocol.tag() == Stochasticity::Doubly {
        let cf = closed_form_stationary(&protocol, &delays, &graph)?;
        write_json(
            &out_path(settings, "stationary.json")?,
            &serde_json::to_value(&cf)?,
        )?;
    }
    println!(
        "augmented {} compute + {} delay nodes -> {}",
        aug.compute_count(),
        aug.delay_count(),
        settings.out.display()
    );
    Ok(0)
}

/// Spectral report of the (optionally delay-augmented) row-stochastic chain:
/// second eigenvalue, lazy-reversibilized second eigenvalue, stationary
/// distribution and the squared-total-variation bound per step.
pub fn cmd_spectrum(settings: &Settings) -> Result<i32> {
    // a bare matrix file may come without a graph; use its own support
    let (graph, protocol): (DirectedGraph, Protocol) =
        if settings.graph.is_none() && settings.generator.is_none() && settings.matrix.is_some() {
            let path = settings.matrix.clone().unwrap();
            let file = File::open(&path)?;
            let tag = match settings.matrix_kind.as_deref().unwrap_or("row") {
                "row" => Stochasticity::Row,
                "doubly" => Stochasticity::Doubly,
                other => bail!("spectrum analyzes row-stochastic chains, not {other}"),
            };
            let p = StochasticMatrix::read_csv(BufReader::new(file), tag)?;
            (p.communication_support(), p)
        } else {
            let graph = settings.graph()?;
            let p = settings.protocol(&graph)?;
            (graph, p)
        };
    if !protocol.is_row_stochastic() {
        bail!("spectrum analyzes row-stochastic chains");
    }
    let delays = settings.fixed_delays(&graph)?;
    let aug = augment_row(&protocol, &delays, &graph)?;
    let chain = aug.matrix();

    let lambda2 = second_eigenvalue(chain)?;
    let mut report = json!({
        "dim": chain.dim(),
        "compute_nodes": aug.compute_count(),
        "lambda2": lambda2,
        "gap": 1.0 - lambda2,
    });
    match stationary_distribution(chain) {
        Ok(pi) => {
            let lazy_chain = lazy(chain)?;
            let u = additive_reversibilization(&lazy_chain, &pi)?;
            let lambda2_u = second_eigenvalue_reversible(u.as_matrix(), &pi)?;
            let pi_min = pi.iter().copied().fold(f64::INFINITY, f64::min);
            let mut csv = BufWriter::new(File::create(out_path(settings, "tv_bound.csv")?)?);
            writeln!(csv, "t,bound")?;
            for t in 1..=settings.tv_steps {
                writeln!(csv, "{t},{}", tv_bound(lambda2_u, pi_min, t)?)?;
            }
            report["mixing"] = json!(true);
            report["stationary"] = json!(pi.iter().copied().collect::<Vec<f64>>());
            report["lambda2_u_lazy"] = json!(lambda2_u);
            report["tv_bound_csv"] = json!("tv_bound.csv");
        }
        Err(Error::NotStronglyConnected) | Err(Error::NoConvergence { .. }) => {
            report["mixing"] = json!(false);
            report["stationary"] = Value::Null;
        }
        Err(e) => return Err(e.into()),
    }
    write_json(&out_path(settings, "spectrum.json")?, &report)?;
    println!("lambda2 = {lambda2}; report -> {}", settings.out.display());
    Ok(0)
}

/// Inverse-spectral-gap sweep over the maximum delay: per B, the worst
/// `1/(1 - lambda2(U(lazy(augmented))))` over seeded random assignments,
/// plus a least-squares `a * B^2` fit appended as metadata.
pub fn cmd_fig2(settings: &Settings) -> Result<i32> {
    let graph = settings.graph()?;
    let protocol = settings.protocol(&graph)?;
    if protocol.tag() != Stochasticity::Doubly {
        bail!("the sweep needs a doubly stochastic protocol (try the default maxweight)");
    }
    let b_values: Vec<u32> = settings
        .b_values
        .clone()
        .unwrap_or_else(|| (1..=10).collect());
    let trials = settings.trials.unwrap_or(50);
    let seed = settings.seed()?;
    let points = inverse_gap_experiment(&graph, &protocol, &b_values, trials, seed)?;
    let (fit_a, rel_residual) = fit_quadratic(&points);
    let path = out_path(settings, "fig2.csv")?;
    let mut csv = BufWriter::new(File::create(&path)?);
    writeln!(csv, "B,max_inverse_gap,trials,seed")?;
    for pt in &points {
        writeln!(csv, "{},{},{},{}", pt.max_delay, pt.max_inverse_gap, trials, seed)?;
    }
    writeln!(csv, "# fit_a,{fit_a},rel_residual,{rel_residual}")?;
    println!(
        "swept B in {:?} with {trials} trials: fit a*B^2 with a = {fit_a:.4}, relative residual {:.1}% -> {}",
        b_values,
        rel_residual * 100.0,
        path.display()
    );
    Ok(0)
}

fn row_audit_json(
    outcome: &delay_consensus::random_delay::ConsensusOutcome<f64>,
    contraction_max_increase: f64,
    empirical_r: Option<usize>,
    x0: &[f64],
    violations: &mut Vec<String>,
) -> Value {
    let audit = outcome.audit;
    let lemma1 = audit.lemma_support_ok;
    let lemma2 = audit.m2_max_row_sum_dev <= 1e-12;
    let lemma3 = audit.m1_max_row_sum_dev <= 1e-12
        && audit.m1_min_entry >= 0.0
        && audit.m1_min_diagonal > 0.0;
    let contraction = audit.masked_max_increase <= 1e-12
        && audit.masked_min_decrease <= 1e-12
        && contraction_max_increase <= 1e-12;
    let lo = x0.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let in_hull = outcome.value >= lo - 1e-12 && outcome.value <= hi + 1e-12;
    let certified = (outcome.value - outcome.m1_row_value).abs() < 1e-8;
    for (ok, name) in [
        (lemma1, "m2_support_matches_occupancy"),
        (lemma2, "m2_nonzero_rows_sum_to_one"),
        (lemma3, "m1_row_stochastic_nonnegative_positive_diagonal"),
        (contraction, "masked_extrema_monotone"),
        (in_hull, "consensus_value_in_initial_hull"),
        (certified, "consensus_value_matches_m1_certificate"),
    ] {
        if !ok {
            violations.push(name.to_string());
        }
    }
    json!({
        "lemma1": if lemma1 { "pass" } else { "fail" },
        "lemma2": if lemma2 { "pass" } else { "fail" },
        "lemma3": if lemma3 { "pass" } else { "fail" },
        "contraction": if contraction { "pass" } else { "fail" },
        "consensus_value": outcome.value,
        "steps": outcome.steps,
        "details": {
            "m2_max_row_sum_dev": audit.m2_max_row_sum_dev,
            "m1_max_row_sum_dev": audit.m1_max_row_sum_dev,
            "m1_min_diagonal": audit.m1_min_diagonal,
            "masked_max_increase": audit.masked_max_increase,
            "masked_min_decrease": audit.masked_min_decrease,
            "m1_certificate": outcome.m1_row_value,
            "empirical_contraction_windows": empirical_r,
        },
    })
}

fn pushsum_audit_json(
    outcome: &PushSumOutcome<f64>,
    target_mass: f64,
    compute_count: usize,
    violations: &mut Vec<String>,
) -> Value {
    if outcome.mass_error_s >= 1e-10 {
        violations.push("sum_mass_conserved".into());
    }
    if outcome.mass_error_w >= 1e-10 {
        violations.push("weight_mass_conserved".into());
    }
    let ergodicity = match &outcome.ergodicity {
        Some(report) => {
            if !report.all_contracting {
                violations.push("ergodicity_blocks_contract".into());
            }
            json!({
                "window": report.window,
                "c_max": report.geometric_rate_estimate,
                "blocks": report.c_values.len(),
            })
        }
        None => Value::Null,
    };
    json!({
        "mass_error_max": outcome.mass_error_s,
        "weight_error_max": outcome.mass_error_w,
        "target_mass": target_mass,
        "final_estimates": outcome.estimates[..compute_count]
            .iter()
            .map(|e| json!(e))
            .collect::<Vec<_>>(),
        "steps": outcome.steps,
        "ergodicity": ergodicity,
    })
}

/// Run both time-varying simulations side by side: row-stochastic random
/// delays (consensus value varies with the seed) and Push-Sum on the
/// transposed protocol (always the true average). Two trajectory CSVs plus
/// a summary with the audits.
pub fn cmd_fig3(settings: &Settings) -> Result<i32> {
    let graph = settings.graph()?;
    let protocol = settings.protocol(&graph)?;
    if !protocol.is_row_stochastic() {
        bail!("fig3 starts from a row-stochastic protocol (its transpose feeds Push-Sum)");
    }
    let max_delay = settings.max_delay.unwrap_or(5);
    let n = graph.node_count();
    let x0 = settings.x0(n)?;
    let x0v = Vector::from_vec(x0.clone());
    let mut violations = Vec::new();

    let mut row_run = RandomDelayRun::new(
        &graph,
        protocol.clone(),
        max_delay,
        settings.pmf.clone(),
        x0v.clone(),
        settings.run_seed(STREAM_ROW_RUN)?,
    )?;
    row_run.record_trajectory(true);
    let row_outcome = row_run.run_to_consensus(settings.tol, settings.max_steps)?;
    let row_contraction = contraction_audit(row_run.trajectory(), max_delay);
    let mut row_csv = BufWriter::new(File::create(out_path(settings, "fig3_row.csv")?)?);
    write_trajectory_csv(row_run.trajectory(), &mut row_csv)?;

    let mut push_run = PushSumRun::new(
        &graph,
        protocol.transpose(),
        max_delay,
        settings.pmf.clone(),
        x0v,
        settings.run_seed(STREAM_PUSH_RUN)?,
    )?;
    push_run.record_trajectory(true);
    let window = diameter_bound_check(&graph, max_delay)?.delayed_diameter + 1;
    push_run.audit_ergodicity(window);
    let push_outcome = push_run.run_to_consensus(settings.tol, settings.max_steps)?;
    let mut push_csv = BufWriter::new(File::create(out_path(settings, "fig3_pushsum.csv")?)?);
    write_pushsum_csv(push_run.trajectory(), &mut push_csv)?;

    let target_mass: f64 = x0.iter().sum();
    let summary = json!({
        "row_consensus": row_audit_json(
            &row_outcome,
            row_contraction.max_increase,
            row_contraction.empirical_r,
            &x0,
            &mut violations,
        ),
        "push_sum": pushsum_audit_json(&push_outcome, target_mass, n, &mut violations),
        "true_average": target_mass / n as f64,
        "violations": violations,
    });
    write_json(&out_path(settings, "fig3_summary.json")?, &summary)?;
    println!(
        "row-stochastic consensus at {} after {} steps; Push-Sum estimates at {:?} (true average {})",
        row_outcome.value,
        row_outcome.steps,
        push_outcome.estimates[0],
        target_mass / n as f64
    );
    if violations.is_empty() {
        Ok(0)
    } else {
        eprintln!("audit violations: {violations:?}");
        Ok(2)
    }
}

/// Row-stochastic random-delay simulation with the full runtime audit.
pub fn cmd_simulate(settings: &Settings) -> Result<i32> {
    let graph = settings.graph()?;
    let protocol = settings.protocol(&graph)?;
    let (max_delay, pmf) = match settings.delay_model()? {
        DelayModel::Random { max_delay, pmf } => (max_delay, pmf),
        DelayModel::None => (0, None),
        DelayModel::Fixed(_) => {
            bail!("simulate runs the random delay model; use augment/spectrum for fixed delays")
        }
    };
    let x0 = settings.x0(graph.node_count())?;
    let mut run = RandomDelayRun::new(
        &graph,
        protocol,
        max_delay,
        pmf,
        Vector::from_vec(x0.clone()),
        settings.run_seed(STREAM_ROW_RUN)?,
    )?;
    run.record_trajectory(true);
    let outcome = run.run_to_consensus(settings.tol, settings.max_steps)?;
    let contraction = contraction_audit(run.trajectory(), max_delay);
    let mut csv = BufWriter::new(File::create(out_path(settings, "trajectory.csv")?)?);
    write_trajectory_csv(run.trajectory(), &mut csv)?;
    let mut violations = Vec::new();
    let mut audit = row_audit_json(
        &outcome,
        contraction.max_increase,
        contraction.empirical_r,
        &x0,
        &mut violations,
    );
    audit["violations"] = json!(violations);
    write_json(&out_path(settings, "audit.json")?, &audit)?;
    println!(
        "consensus at {} after {} steps -> {}",
        outcome.value,
        outcome.steps,
        settings.out.display()
    );
    if violations.is_empty() {
        Ok(0)
    } else {
        eprintln!("audit violations: {violations:?}");
        Ok(2)
    }
}

/// Push-Sum averaging under no, fixed, or random delays.
pub fn cmd_pushsum(settings: &Settings) -> Result<i32> {
    let graph = settings.graph()?;
    let protocol = {
        // Push-Sum defaults to a random column-stochastic protocol
        let mut s = settings.clone();
        if s.matrix.is_none() && s.protocol.is_none() {
            s.protocol = Some("random-column-stochastic".into());
        }
        s.protocol(&graph)?
    };
    if !protocol.is_column_stochastic() {
        bail!("Push-Sum needs a column-stochastic (or doubly stochastic) protocol");
    }
    let x0 = settings.x0(graph.node_count())?;
    let x0v = Vector::from_vec(x0.clone());
    let target_mass: f64 = x0.iter().sum();
    let n = graph.node_count();
    let mut violations = Vec::new();

    let (outcome, frames): (PushSumOutcome<f64>, Vec<PushSumFrame<f64>>) =
        match settings.delay_model()? {
            DelayModel::Random { max_delay, pmf } => {
                let mut run = PushSumRun::new(
                    &graph,
                    protocol,
                    max_delay,
                    pmf,
                    x0v,
                    settings.run_seed(STREAM_PUSH_RUN)?,
                )?;
                run.record_trajectory(true);
                let window = diameter_bound_check(&graph, max_delay)?.delayed_diameter + 1;
                run.audit_ergodicity(window);
                let outcome = run.run_to_consensus(settings.tol, settings.max_steps)?;
                (outcome, run.trajectory().to_vec())
            }
            model => {
                let delays = match model {
                    DelayModel::Fixed(_) => settings.fixed_delays(&graph)?,
                    _ => DelayAssignment::zero(&graph),
                };
                let aug = augment_column(&protocol, &delays, &graph)?;
                let mut state = PushSumState::init(&x0v, aug.delay_count())?;
                let mut frames = vec![PushSumFrame {
                    t: 0,
                    s: state.s().clone(),
                    w: state.w().clone(),
                }];
                let mut mass_error_s = 0.0f64;
                let mut mass_error_w = 0.0f64;
                while state.compute_spread() >= settings.tol {
                    if state.time() >= settings.max_steps {
                        bail!(
                            "no convergence after {} steps (spread {})",
                            state.time(),
                            state.compute_spread()
                        );
                    }
                    state.step_fixed(&aug)?;
                    let (ms, mw) = state.mass();
                    mass_error_s = mass_error_s.max((ms - target_mass).abs());
                    mass_error_w = mass_error_w.max((mw - n as f64).abs());
                    frames.push(PushSumFrame {
                        t: state.time(),
                        s: state.s().clone(),
                        w: state.w().clone(),
                    });
                }
                let outcome = PushSumOutcome {
                    estimates: state.estimates(),
                    steps: state.time(),
                    mass_error_s,
                    mass_error_w,
                    ergodicity: None,
                    block_errors: Vec::new(),
                };
                (outcome, frames)
            }
        };

    let mut csv = BufWriter::new(File::create(out_path(settings, "trajectory.csv")?)?);
    write_pushsum_csv(&frames, &mut csv)?;
    let mut audit = pushsum_audit_json(&outcome, target_mass, n, &mut violations);
    audit["violations"] = json!(violations);
    write_json(&out_path(settings, "audit.json")?, &audit)?;
    let shown: Vec<f64> = outcome.estimates[..n].iter().map(|e| e.unwrap_or(f64::NAN)).collect();
    println!(
        "Push-Sum estimates {:?} after {} steps (true average {})",
        shown,
        outcome.steps,
        target_mass / n as f64
    );
    if violations.is_empty() {
        Ok(0)
    } else {
        eprintln!("audit violations: {violations:?}");
        Ok(2)
    }
}
