//! CSV and JSON output. Floats are written in Rust's shortest round-trip
//! form, so equal values always produce equal bytes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::ctmc::Trajectory;
use crate::error::Result;
use crate::ode::OdeSolution;
use crate::path::SamplePath;
use crate::scaling::RescaledPath;
use crate::sde::{DiffusionPath, SdeVariant};

/// A header plus rows of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.headers)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn path_table<P: SamplePath + ?Sized>(p: &P, headers: Vec<String>) -> Table {
    let mut t = Table::new(headers);
    for i in 0..p.len() {
        let mut row = vec![fmt(p.time(i))];
        row.extend((0..p.dim()).map(|k| fmt(p.value(i, k))));
        t.push(row);
    }
    t
}

/// `time,a_0,...,a_{K+1}`, one row per stored sample.
pub fn trajectory_table(tr: &Trajectory) -> Table {
    let mut t = Table::new(std::iter::once("time".to_string()).chain((0..tr.dim()).map(|k| format!("a_{k}"))));
    for i in 0..tr.len() {
        let mut row = vec![fmt(tr.time(i))];
        row.extend(tr.state(i).iter().map(u64::to_string));
        t.push(row);
    }
    t
}

/// `time,A_0,...,A_{K+1}` in rescaled time.
pub fn rescaled_table(p: &RescaledPath) -> Table {
    path_table(p, std::iter::once("time".to_string()).chain((0..p.dim()).map(|k| format!("A_{k}"))).collect())
}

/// `time,A_0,...,A_{K+1}` (or `time,Z` for the one-dimensional diffusion).
pub fn diffusion_table(p: &DiffusionPath, variant: SdeVariant) -> Table {
    let headers = std::iter::once("time".to_string())
        .chain(if variant == SdeVariant::Feller {
            vec!["Z".to_string()]
        } else {
            (0..p.dim).map(|k| format!("A_{k}")).collect()
        })
        .collect();
    path_table(p, headers)
}

/// `time,x_0,x_2,...,x_{K+1}`.
pub fn ode_table(sol: &OdeSolution) -> Table {
    let k = sol.stages();
    let headers = std::iter::once("time".to_string())
        .chain(std::iter::once("x_0".to_string()))
        .chain((2..=k + 1).map(|s| format!("x_{s}")))
        .collect();
    path_table(sol, headers)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{simulate_path, StopRule};
    use crate::model::{ModelParams, PopulationState};
    use crate::ode::{integrate_ode, Forcing, OdeConfig};
    use crate::rng::RngSeed;

    #[test]
    fn trajectory_csv_shape() {
        let p = ModelParams::critical(50, 2).unwrap();
        let tr = simulate_path(&p, &PopulationState::from_infected(50, &[2, 0]).unwrap(), StopRule::Absorption, RngSeed::new(1, 0)).unwrap();
        let s = trajectory_table(&tr).to_csv_string().unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "time,a_0,a_1,a_2,a_3");
        assert_eq!(lines.next().unwrap(), "0,48,2,0,0");
        assert_eq!(s.lines().count(), tr.len() + 1);
    }

    #[test]
    fn ode_csv_header() {
        let sol = integrate_ode(&[0.0, 1.0, 0.0, 0.0], &Forcing::Zero, &[0.0; 3], OdeConfig { dt: 0.5, horizon: 1.0 }).unwrap();
        let s = ode_table(&sol).to_csv_string().unwrap();
        assert!(s.starts_with("time,x_0,x_2,x_3,x_4\n"));
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789] {
            assert_eq!(fmt(x).parse::<f64>().unwrap(), x);
        }
    }
}
