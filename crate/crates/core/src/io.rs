//! CSV and JSON export. Every file is written to a temporary sibling and
//! renamed into place.

use std::fs;
use std::path::Path;

use crate::adiabatic::SpectrumTable;
use crate::analysis::{delta_n, Histogram, QGrid};
use crate::error::{Error, Result};
use crate::evolve::Schedule;
use crate::protocols::{ProtocolReport, TrajectoryPoint};

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::from(e)
    })
}

/// Numeric table with a header row.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Domain(format!("row of {} values for {} columns", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Histograms side by side; every column shares the bins of the first.
pub fn histogram_table(atoms: usize, columns: &[(&str, &Histogram)]) -> Result<Table> {
    let mut header = vec!["n_a".to_string(), "delta_n".to_string()];
    header.extend(columns.iter().map(|(name, _)| format!("p_{name}")));
    let mut table = Table::new(header);
    for n_a in 0..=atoms {
        let mut row = vec![n_a as f64, delta_n(n_a, atoms) as f64];
        row.extend(columns.iter().map(|(_, h)| h.probability(n_a)));
        table.push(row)?;
    }
    Ok(table)
}

pub fn trajectory_table(points: &[TrajectoryPoint]) -> Result<Table> {
    let mut table = Table::new([
        "t [1/Omega_JC]",
        "f1",
        "f2",
        "S",
        "leakage",
        "energy [Omega_JC]",
        "extremal_energy [Omega_JC]",
        "rydberg_population",
    ]);
    for p in points {
        table.push(vec![p.t, p.f1, p.f2, p.s, p.leakage, p.energy, p.extremal_energy, p.rydberg_population])?;
    }
    Ok(table)
}

pub fn schedule_table(schedule: &Schedule) -> Result<Table> {
    let mut table = Table::new(["t [1/Omega_JC]", "f1", "f2", "alpha1 [Omega_JC]", "alpha2 [Omega_JC]"]);
    for s in schedule.samples() {
        table.push(vec![s.t, s.f1, s.f2, s.alpha1, s.alpha2])?;
    }
    Ok(table)
}

pub fn spectrum_table(spectrum: &SpectrumTable) -> Result<Table> {
    let levels = spectrum.eigenvalues.first().map_or(0, Vec::len);
    let mut header = vec!["x".to_string()];
    header.extend((0..levels).map(|k| format!("e{k} [Omega_JC]")));
    let mut table = Table::new(header);
    for (x, row) in spectrum.x.iter().zip(&spectrum.eigenvalues) {
        let mut r = vec![*x];
        r.extend(row);
        table.push(r)?;
    }
    Ok(table)
}

/// `(theta, phi, Q)` triples, polar angle outermost.
pub fn qgrid_table(grid: &QGrid) -> Result<Table> {
    let mut table = Table::new(["theta [rad]", "phi [rad]", "q"]);
    for i in 0..grid.polar_samples {
        for j in 0..grid.azimuth_samples {
            table.push(vec![grid.polar(i), grid.azimuth(j), grid.values[(i, j)]])?;
        }
    }
    Ok(table)
}

pub fn write_report(report: &ProtocolReport, path: &Path) -> Result<()> {
    let mut json = report.to_json()?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let mut t = Table::new(["t [1/Omega_JC]", "S"]);
        t.push(vec![0.0, 0.25]).unwrap();
        t.push(vec![0.5, 0.125]).unwrap();
        assert!(t.push(vec![1.0]).is_err());
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(text, "t [1/Omega_JC],S\n0,0.25\n0.5,0.125\n");
    }

    #[test]
    fn atomic_write_replaces_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
