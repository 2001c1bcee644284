//! Mode dispatch: time integration, static solves and convergence studies.

use std::path::Path;

use anyhow::{anyhow, Result};
use elastocharge::diagnostics::{max_relative_drift, rates_from, EnergyLedger, RateKind, RatesTable, StudyAxis};
use elastocharge::dynamics::{Problem, SimulationState};
use elastocharge::kinematics::DeformationState;
use nalgebra::DVector;
use serde::Serialize;

use crate::audit::{run_audit, AuditReport};
use crate::output::{write_json, LedgerWriter, OutDir, ProbeRow, ProbeWriter, Snapshot};
use crate::scenario::{Mode, Observable, Scenario};

/// Summary written to `diag.json` after a time integration.
#[derive(Clone, Debug, Serialize)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub t_final: f64,
    pub det_floor: f64,
    pub min_det: f64,
    pub det_ok: bool,
    pub max_relative_drift: f64,
    /// Largest change of the balance residual over one step.
    pub max_step_residual: f64,
    pub final_residual: f64,
    pub dissipated: f64,
    pub rejections: usize,
    pub max_newton_iterations: usize,
    pub max_mech_residual: f64,
    /// `|W_g − W_g^parts|` at the final time.
    pub traction_work_gap: f64,
    pub final_ledger: EnergyLedger,
}

pub struct Trajectory {
    pub ledger: Vec<EnergyLedger>,
    pub probe: Vec<ProbeRow>,
    pub last: SimulationState,
    pub diagnostics: RunDiagnostics,
}

fn core<T>(r: elastocharge::Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("{e}"))
}

/// Builds the problem and its initial state at the scenario's level.
pub fn setup(sc: &Scenario) -> Result<(Problem, SimulationState)> {
    let p = sc.build_problem(sc.basis.level)?;
    let mech = sc.initial_mech(&p.basis)?;
    let m0 = sc.initial_concentration(&p.basis)?;
    let s0 = core(p.initial_state(mech, m0, 0.0))?;
    Ok((p, s0))
}

#[derive(Serialize)]
struct Failure<'a> {
    step: usize,
    t: f64,
    dt: f64,
    error: String,
    last_accepted: Snapshot<'a>,
}

/// Integrates from `s0` to `time.t_end`. With `out` the ledger, probe and
/// snapshots are streamed to disk; a failing step leaves `failure.json`.
pub fn integrate(sc: &Scenario, p: &Problem, s0: SimulationState, out: Option<&OutDir>) -> Result<Trajectory> {
    let steps = sc.steps();
    let dt = sc.time.dt;
    let x_probe = sc.probe_point();
    let mut ledger_w = out.map(|o| LedgerWriter::create(&o.file("ledger.csv"))).transpose()?;
    let mut probe_w = out
        .map(|o| ProbeWriter::create(&o.file("probe.csv"), p.dim(), s0.diff.is_some()))
        .transpose()?;
    let every = sc.output.snapshot_every;
    let mut ledger = Vec::with_capacity(steps + 1);
    let mut probe = Vec::with_capacity(steps + 1);
    let mut max_step_residual: f64 = 0.0;
    let mut max_newton = 0;
    let mut max_mech: f64 = 0.0;

    let mut record = |k: usize, s: &SimulationState, ledger: &mut Vec<EnergyLedger>, probe: &mut Vec<ProbeRow>| -> Result<()> {
        let row = ProbeRow::sample(p, s, &x_probe)?;
        if let Some(w) = ledger_w.as_mut() {
            w.push(&s.ledger)?;
        }
        if let Some(w) = probe_w.as_mut() {
            w.push(&row)?;
        }
        if let Some(o) = out {
            if every > 0 && (k % every == 0 || k == steps) {
                write_json(&o.snapshot(k), &Snapshot::of(p, k, s))?;
            }
        }
        ledger.push(s.ledger);
        probe.push(row);
        Ok(())
    };

    record(0, &s0, &mut ledger, &mut probe)?;
    let mut s = s0;
    let report = (steps / 10).max(1);
    for k in 1..=steps {
        let next = match p.advance(&s, dt) {
            Ok(n) => n,
            Err(e) => {
                if let Some(o) = out {
                    let dump = Failure {
                        step: k,
                        t: s.t,
                        dt,
                        error: e.to_string(),
                        last_accepted: Snapshot::of(p, k - 1, &s),
                    };
                    write_json(&o.file("failure.json"), &dump)?;
                }
                return Err(anyhow!("step {k} from t = {} failed: {e}", s.t));
            }
        };
        max_step_residual = max_step_residual.max((next.ledger.residual - s.ledger.residual).abs());
        max_newton = max_newton.max(next.newton_iterations);
        max_mech = max_mech.max(next.mech_residual);
        s = next;
        record(k, &s, &mut ledger, &mut probe)?;
        if k % report == 0 {
            log::info!("step {k}/{steps} t = {:.4} residual {:.3e}", s.t, s.ledger.residual);
        }
    }
    if let Some(w) = ledger_w {
        w.finish()?;
    }
    if let Some(w) = probe_w {
        w.finish()?;
    }
    let last_row = *ledger.last().unwrap();
    let min_det = ledger.iter().map(|r| r.min_det).fold(f64::INFINITY, f64::min);
    let diagnostics = RunDiagnostics {
        steps,
        t_final: s.t,
        det_floor: p.opts.det_floor,
        min_det,
        det_ok: min_det >= p.opts.det_floor,
        max_relative_drift: max_relative_drift(&ledger),
        max_step_residual,
        final_residual: last_row.residual,
        dissipated: last_row.dissipated,
        rejections: s.rejections,
        max_newton_iterations: max_newton,
        max_mech_residual: max_mech,
        traction_work_gap: (last_row.work_g - last_row.work_g_parts).abs(),
        final_ledger: last_row,
    };
    Ok(Trajectory {
        ledger,
        probe,
        last: s,
        diagnostics,
    })
}

/// Runs a scenario in dynamic or diffusion mode.
pub fn simulate(sc: &Scenario, out: Option<&OutDir>) -> Result<Trajectory> {
    let (p, s0) = setup(sc)?;
    integrate(sc, &p, s0, out)
}

#[derive(Clone, Debug, Serialize)]
pub struct StaticLevel {
    pub level: usize,
    pub energy: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StaticReport {
    pub levels: Vec<StaticLevel>,
    /// Energies non-increasing over the levels.
    pub monotone: bool,
}

fn prolongate_state(fine: &Problem, coarse: &Problem, st: &DeformationState) -> Result<DeformationState> {
    let dim = fine.dim();
    let n = fine.basis.dofs_per_component();
    let nc = coarse.basis.dofs_per_component();
    let mut chi = DVector::zeros(dim * n);
    for c in 0..dim {
        let part = core(fine.basis.prolongate(&coarse.basis, &st.chi.as_slice()[c * nc..(c + 1) * nc]))?;
        chi.rows_mut(c * n, n).copy_from(&part);
    }
    core(DeformationState::new(&fine.basis, chi, DVector::zeros(dim * n)))
}

/// Static equilibria over the configured levels, each started from the
/// previous solution.
pub fn solve_static_levels(sc: &Scenario, out: Option<&OutDir>) -> Result<StaticReport> {
    let levels = if sc.statics.levels.is_empty() { vec![sc.basis.level] } else { sc.statics.levels.clone() };
    let mut report = Vec::new();
    let mut prev: Option<(Problem, DeformationState)> = None;
    for (i, &level) in levels.iter().enumerate() {
        let p = sc.build_problem(level)?;
        let init = match &prev {
            Some((pc, st)) if pc.basis.element_count() <= p.basis.element_count() => prolongate_state(&p, pc, st)?,
            _ => {
                let mut m = sc.initial_mech(&p.basis)?;
                m.chidot.fill(0.0);
                m
            }
        };
        let sol = core(p.solve_static(&init, 0.0, sc.statics.tol, sc.statics.max_iter))
            .map_err(|e| anyhow!("static solve at level {level}: {e}"))?;
        log::info!("level {level}: energy {:.12e} (|g| {:.2e}, {} iterations)", sol.energy, sol.gradient_norm, sol.iterations);
        if let Some(o) = out {
            let s = core(p.initial_state(sol.state.clone(), None, 0.0))?;
            write_json(&o.snapshot(i), &Snapshot::of(&p, i, &s))?;
        }
        report.push(StaticLevel {
            level,
            energy: sol.energy,
            gradient_norm: sol.gradient_norm,
            iterations: sol.iterations,
        });
        prev = Some((p, sol.state));
    }
    let monotone = report.windows(2).all(|w| w[1].energy <= w[0].energy + 1e-12 * w[0].energy.abs());
    Ok(StaticReport { levels: report, monotone })
}

fn study_kind(axis: StudyAxis, obs: Observable) -> RateKind {
    match (axis, obs) {
        (_, Observable::Drift) => RateKind::Error,
        (StudyAxis::Level, Observable::Energy) => RateKind::Monotone,
        _ => RateKind::Differences,
    }
}

/// Scenario with one study axis set to `value`.
pub fn at_axis(sc: &Scenario, axis: StudyAxis, value: f64) -> Scenario {
    let mut s = sc.clone();
    match axis {
        StudyAxis::Dt => s.time.dt = value,
        StudyAxis::Level => s.basis.level = value as usize,
        StudyAxis::Radius => {
            // the spatial mesh spacing is held fixed
            if let Some(e) = s.electrostatics.as_mut() {
                e.elements = ((e.elements as f64) * value / e.radius).round().max(2.0) as usize;
                e.radius = value;
            }
        }
    }
    s
}

fn observe(sc: &Scenario, obs: Observable) -> Result<f64> {
    match obs {
        Observable::Drift => Ok(simulate(sc, None)?.diagnostics.max_relative_drift),
        Observable::Probe => Ok(simulate(sc, None)?.probe.last().unwrap().displacement[0]),
        Observable::Energy => {
            let mut s = sc.clone();
            s.statics.levels.clear();
            Ok(solve_static_levels(&s, None)?.levels[0].energy)
        }
    }
}

/// Runs the configured study, one thread per axis value.
pub fn run_study(sc: &Scenario) -> Result<RatesTable> {
    let spec = sc.study.as_ref().ok_or_else(|| anyhow!("field `study`: missing [study] section"))?;
    let scenarios: Vec<Scenario> = spec.values.iter().map(|&v| at_axis(sc, spec.axis, v)).collect();
    let results: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || observe(s, spec.observable)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("study worker panicked"))))
            .collect()
    });
    let observables = results
        .into_iter()
        .zip(&spec.values)
        .map(|(r, v)| r.map_err(|e| anyhow!("study value {v}: {e}")))
        .collect::<Result<Vec<_>>>()?;
    let table = rates_from(spec.axis, study_kind(spec.axis, spec.observable), &spec.values, observables);
    for n in &table.notes {
        log::warn!("{n}");
    }
    Ok(table)
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum Diag<'a> {
    Dynamic(&'a RunDiagnostics),
    Diffusion(&'a RunDiagnostics),
    Static(&'a StaticReport),
    Study(&'a RatesTable),
    Audit(&'a AuditReport),
}

/// Outcome of [`execute`]; `success` is false when an audit check fails.
#[derive(Clone, Debug)]
pub struct Execution {
    pub success: bool,
    pub summary: String,
}

/// Runs `sc` in its mode and writes all artifacts under `out`.
pub fn execute(sc: &Scenario, out: &Path) -> Result<Execution> {
    let dir = OutDir::create(out)?;
    write_json(&dir.file("scenario.json"), sc)?;
    match sc.mode {
        Mode::Dynamic | Mode::Diffusion => {
            let tr = simulate(sc, Some(&dir))?;
            let d = &tr.diagnostics;
            let diag = if sc.mode == Mode::Dynamic { Diag::Dynamic(d) } else { Diag::Diffusion(d) };
            write_json(&dir.file("diag.json"), &diag)?;
            Ok(Execution {
                success: d.det_ok,
                summary: format!(
                    "{} steps to t = {}: drift {:.3e}, residual {:.3e}, min det {:.4}",
                    d.steps, d.t_final, d.max_relative_drift, d.final_residual, d.min_det
                ),
            })
        }
        Mode::Static => {
            let rep = solve_static_levels(sc, Some(&dir))?;
            write_json(&dir.file("diag.json"), &Diag::Static(&rep))?;
            if rep.levels.len() >= 2 {
                let values: Vec<f64> = rep.levels.iter().map(|l| l.level as f64).collect();
                let energies = rep.levels.iter().map(|l| l.energy).collect();
                write_json(&dir.file("rates.json"), &rates_from(StudyAxis::Level, RateKind::Monotone, &values, energies))?;
            }
            let last = rep.levels.last().unwrap();
            Ok(Execution {
                success: rep.monotone,
                summary: format!("static energy {:.12e} at level {} (monotone: {})", last.energy, last.level, rep.monotone),
            })
        }
        Mode::Study => {
            let table = run_study(sc)?;
            write_json(&dir.file("rates.json"), &table)?;
            write_json(&dir.file("diag.json"), &Diag::Study(&table))?;
            Ok(Execution {
                success: true,
                summary: format!("observables {:?}, orders {:?}", table.observables, table.orders),
            })
        }
        Mode::Audit => {
            let rep = run_audit(sc)?;
            write_json(&dir.file("diag.json"), &Diag::Audit(&rep))?;
            let failed: Vec<_> = rep.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            Ok(Execution {
                success: failed.is_empty(),
                summary: if failed.is_empty() {
                    format!("all {} audit checks passed", rep.checks.len())
                } else {
                    format!("failed audit checks: {}", failed.join(", "))
                },
            })
        }
    }
}
