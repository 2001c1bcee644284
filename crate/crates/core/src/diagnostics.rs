//! Energy ledger and convergence studies.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One row of the energy balance.
///
/// The electrostatic energy is `elec_coupling − elec_field`: the coupling
/// `∫ q φ∘χ + ∫ q_ext φ` minus the field energy `∫ e(∇φ)`. Work and
/// dissipation columns are cumulative from the initial time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub t: f64,
    pub dt: f64,
    pub kinetic: f64,
    pub stored: f64,
    pub nonlocal: f64,
    pub elec_field: f64,
    pub elec_coupling: f64,
    pub dissipated: f64,
    pub work_f: f64,
    pub work_g: f64,
    /// Traction work through `[∫ g·χ] − ∫∫ ġ·χ`, kept for comparison.
    pub work_g_parts: f64,
    pub work_mu: f64,
    pub work_qext: f64,
    pub residual: f64,
    pub min_det: f64,
    pub initial_total: f64,
}

pub const LEDGER_COLUMNS: [&str; 14] = [
    "t",
    "dt",
    "T_kin",
    "E_store",
    "E_nonlocal",
    "E_elec_field",
    "E_elec_coupling",
    "D_cum",
    "W_f",
    "W_g",
    "W_mu",
    "W_qext",
    "residual",
    "min_det",
];

/// Energies of one state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    pub kinetic: f64,
    pub stored: f64,
    pub nonlocal: f64,
    pub elec_field: f64,
    pub elec_coupling: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.kinetic + self.stored + self.nonlocal + self.elec_coupling - self.elec_field
    }
}

/// Dissipation and work accumulated over one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Increments {
    pub dissipated: f64,
    pub work_f: f64,
    pub work_g: f64,
    pub work_g_parts: f64,
    pub work_mu: f64,
    pub work_qext: f64,
}

impl Increments {
    pub fn add(&mut self, o: &Increments) {
        self.dissipated += o.dissipated;
        self.work_f += o.work_f;
        self.work_g += o.work_g;
        self.work_g_parts += o.work_g_parts;
        self.work_mu += o.work_mu;
        self.work_qext += o.work_qext;
    }
}

impl EnergyLedger {
    pub fn initial(t: f64, e: &Energies, min_det: f64) -> Self {
        EnergyLedger {
            t,
            kinetic: e.kinetic,
            stored: e.stored,
            nonlocal: e.nonlocal,
            elec_field: e.elec_field,
            elec_coupling: e.elec_coupling,
            min_det,
            initial_total: e.total(),
            ..Default::default()
        }
    }

    pub fn energies(&self) -> Energies {
        Energies {
            kinetic: self.kinetic,
            stored: self.stored,
            nonlocal: self.nonlocal,
            elec_field: self.elec_field,
            elec_coupling: self.elec_coupling,
        }
    }

    pub fn electrostatic(&self) -> f64 {
        self.elec_coupling - self.elec_field
    }

    pub fn total_energy(&self) -> f64 {
        self.energies().total()
    }

    pub fn external_work(&self) -> f64 {
        self.work_f + self.work_g + self.work_mu + self.work_qext
    }

    /// Balance residual `[𝓣 + 𝓔](t) − [𝓣 + 𝓔](0) + D − W`.
    pub fn balance(&self) -> f64 {
        self.total_energy() - self.initial_total + self.dissipated - self.external_work()
    }

    pub fn record(&self) -> [f64; 14] {
        [
            self.t,
            self.dt,
            self.kinetic,
            self.stored,
            self.nonlocal,
            self.elec_field,
            self.elec_coupling,
            self.dissipated,
            self.work_f,
            self.work_g,
            self.work_mu,
            self.work_qext,
            self.residual,
            self.min_det,
        ]
    }
}

/// Next ledger row from the previous one, the new energies and the step's
/// increments.
pub fn ledger_update(prev: &EnergyLedger, t: f64, dt: f64, e: &Energies, inc: &Increments, min_det: f64) -> EnergyLedger {
    let mut row = EnergyLedger {
        t,
        dt,
        kinetic: e.kinetic,
        stored: e.stored,
        nonlocal: e.nonlocal,
        elec_field: e.elec_field,
        elec_coupling: e.elec_coupling,
        dissipated: prev.dissipated + inc.dissipated,
        work_f: prev.work_f + inc.work_f,
        work_g: prev.work_g + inc.work_g,
        work_g_parts: prev.work_g_parts + inc.work_g_parts,
        work_mu: prev.work_mu + inc.work_mu,
        work_qext: prev.work_qext + inc.work_qext,
        residual: 0.0,
        min_det,
        initial_total: prev.initial_total,
    };
    row.residual = row.balance();
    row
}

/// Maximum relative drift of the total energy along a ledger.
pub fn max_relative_drift(rows: &[EnergyLedger]) -> f64 {
    let Some(first) = rows.first() else { return 0.0 };
    let e0 = first.total_energy();
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    rows.iter()
        .map(|r| (r.total_energy() - e0).abs() / scale)
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    Dt,
    Level,
    Radius,
}

/// How observed orders are formed from the observable sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    /// The observable is itself an error that tends to zero.
    Error,
    /// The observable converges to an unknown limit; successive differences
    /// are used.
    Differences,
    /// The observable should be monotone along the axis; no orders.
    Monotone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatesTable {
    pub axis: StudyAxis,
    pub kind: RateKind,
    pub values: Vec<f64>,
    pub observables: Vec<f64>,
    /// Reduction factors between consecutive entries (or differences).
    pub ratios: Vec<f64>,
    pub orders: Vec<f64>,
    pub monotone: bool,
    pub notes: Vec<String>,
}

/// Runs `observe` at every axis value and forms Richardson-style ratios.
pub fn convergence_study(
    axis: StudyAxis,
    kind: RateKind,
    values: &[f64],
    mut observe: impl FnMut(f64) -> Result<f64>,
) -> Result<RatesTable> {
    if values.len() < 3 {
        return Err(invalid("values", "a convergence study needs at least 3 values"));
    }
    let observables = values.iter().map(|&v| observe(v)).collect::<Result<Vec<_>>>()?;
    Ok(rates_from(axis, kind, values, observables))
}

pub fn rates_from(axis: StudyAxis, kind: RateKind, values: &[f64], observables: Vec<f64>) -> RatesTable {
    let mut notes = Vec::new();
    let (ratios, orders, monotone) = match kind {
        RateKind::Error => {
            let ratios: Vec<f64> = observables.windows(2).map(|w| w[0].abs() / w[1].abs()).collect();
            let orders = ratios
                .iter()
                .zip(values.windows(2))
                .map(|(r, v)| r.ln() / (v[0] / v[1]).abs().ln())
                .collect();
            let monotone = ratios.iter().all(|&r| r > 1.0);
            (ratios, orders, monotone)
        }
        RateKind::Differences => {
            let diffs: Vec<f64> = observables.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            let ratios: Vec<f64> = diffs.windows(2).map(|w| w[0] / w[1]).collect();
            let orders = ratios
                .iter()
                .zip(values.windows(2))
                .map(|(r, v)| r.ln() / (v[0] / v[1]).abs().ln())
                .collect();
            let monotone = diffs.windows(2).all(|w| w[1] <= w[0]);
            (ratios, orders, monotone)
        }
        RateKind::Monotone => {
            let monotone = observables.windows(2).all(|w| w[1] <= w[0]);
            (Vec::new(), Vec::new(), monotone)
        }
    };
    if !monotone {
        notes.push("non-monotone refinement detected".to_string());
    }
    RatesTable {
        axis,
        kind,
        values: values.to_vec(),
        observables,
        ratios,
        orders,
        monotone,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conservative_row_has_no_dissipation_or_work() {
        let e = Energies {
            kinetic: 1.0,
            stored: 2.0,
            nonlocal: 0.5,
            elec_field: 0.25,
            elec_coupling: 0.5,
        };
        let r0 = EnergyLedger::initial(0.0, &e, 1.0);
        let r1 = ledger_update(&r0, 0.1, 0.1, &e, &Increments::default(), 1.0);
        assert_eq!(r1.dissipated, 0.0);
        assert_eq!(r1.external_work(), 0.0);
        assert_eq!(r1.residual, 0.0);
    }

    #[test]
    fn ledger_closure() {
        let e = Energies {
            kinetic: 0.3,
            stored: 1.7,
            nonlocal: 0.01,
            elec_field: 0.4,
            elec_coupling: 0.9,
        };
        let r = EnergyLedger::initial(0.0, &e, 1.0);
        let sum = r.kinetic + r.stored + r.nonlocal + r.elec_coupling - r.elec_field;
        assert!((sum - r.total_energy()).abs() <= 1e-12);
    }

    #[test]
    fn second_order_error_sequence() {
        let t = rates_from(
            StudyAxis::Dt,
            RateKind::Error,
            &[0.1, 0.05, 0.025],
            vec![1e-2, 2.5e-3, 6.25e-4],
        );
        assert!(t.orders.iter().all(|o| (o - 2.0).abs() < 1e-12));
        assert!(t.monotone);
    }

    #[test]
    fn too_few_values_rejected() {
        assert!(convergence_study(StudyAxis::Level, RateKind::Monotone, &[0.0, 1.0], |_| Ok(0.0)).is_err());
    }
}
