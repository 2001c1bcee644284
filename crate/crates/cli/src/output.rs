//! Ledger, probe and snapshot writers.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use elastocharge::diagnostics::{EnergyLedger, LEDGER_COLUMNS};
use elastocharge::dynamics::{Problem, SimulationState};
use serde::Serialize;

fn number(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub struct LedgerWriter {
    inner: csv::Writer<File>,
}

impl LedgerWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(LEDGER_COLUMNS)?;
        Ok(LedgerWriter { inner })
    }

    pub fn push(&mut self, row: &EnergyLedger) -> Result<()> {
        self.inner.write_record(row.record().iter().map(|&v| number(v)))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Position, displacement and velocity at one reference point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub t: f64,
    pub position: Vec<f64>,
    pub displacement: Vec<f64>,
    pub velocity: Vec<f64>,
    pub m: Option<f64>,
}

impl ProbeRow {
    pub fn sample(p: &Problem, s: &SimulationState, x: &elastocharge::tensor::Vec2) -> Result<Self> {
        let dim = p.dim();
        let y = s.mech.position(&p.basis, x).map_err(|e| anyhow::anyhow!("{e}"))?;
        let v = s.mech.velocity(&p.basis, x).map_err(|e| anyhow::anyhow!("{e}"))?;
        let m = match &s.diff {
            Some(d) => Some(p.basis.evaluate(d.m.as_slice(), x).map_err(|e| anyhow::anyhow!("{e}"))?.0),
            None => None,
        };
        Ok(ProbeRow {
            t: s.t,
            position: y.as_slice()[..dim].to_vec(),
            displacement: (0..dim).map(|c| y[c] - x[c]).collect(),
            velocity: v.as_slice()[..dim].to_vec(),
            m,
        })
    }
}

pub struct ProbeWriter {
    inner: csv::Writer<File>,
}

impl ProbeWriter {
    pub fn create(path: &Path, dim: usize, with_m: bool) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        let axes = ["x", "y"];
        let mut header = vec!["t".to_string()];
        for prefix in ["pos", "disp", "vel"] {
            header.extend(axes[..dim].iter().map(|a| format!("{prefix}_{a}")));
        }
        if with_m {
            header.push("m".into());
        }
        inner.write_record(&header)?;
        Ok(ProbeWriter { inner })
    }

    pub fn push(&mut self, row: &ProbeRow) -> Result<()> {
        let mut rec = vec![number(row.t)];
        for v in row.position.iter().chain(&row.displacement).chain(&row.velocity) {
            rec.push(number(*v));
        }
        if let Some(m) = row.m {
            rec.push(number(m));
        }
        self.inner.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Coefficient dump of one accepted state.
#[derive(Serialize)]
pub struct Snapshot<'a> {
    pub step: usize,
    pub t: f64,
    pub dim: usize,
    pub chi: &'a [f64],
    pub chidot: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<&'a [f64]>,
    /// Potential coefficients on the spatial mesh.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<&'a [f64]>,
    pub ledger: &'a EnergyLedger,
}

impl<'a> Snapshot<'a> {
    pub fn of(p: &Problem, step: usize, s: &'a SimulationState) -> Self {
        Snapshot {
            step,
            t: s.t,
            dim: p.dim(),
            chi: s.mech.chi.as_slice(),
            chidot: s.mech.chidot.as_slice(),
            m: s.diff.as_ref().map(|d| d.m.as_slice()),
            mu: s.diff.as_ref().map(|d| d.mu.as_slice()),
            phi: s.pot.as_ref().map(|f| f.coeffs.as_slice()),
            ledger: &s.ledger,
        }
    }
}

/// Output directory layout.
#[derive(Clone, Debug)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("snapshots")).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn snapshot(&self, step: usize) -> PathBuf {
        self.root.join("snapshots").join(format!("step_{step:06}.json"))
    }
}
