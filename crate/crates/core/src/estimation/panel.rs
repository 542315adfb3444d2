use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowProblem};
use crate::model::Action;

/// One bus-month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub bus_id: u64,
    pub month: u64,
    pub x_bin: usize,
    pub decision: u8,
    pub delta_bin: usize,
}

impl Observation {
    pub fn action(&self) -> Action {
        if self.decision == 1 {
            Action::Replace
        } else {
            Action::Keep
        }
    }
}

/// Panel of bus-months, stored bus by bus in month order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub rows: Vec<Observation>,
}

impl PanelDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_buses(&self) -> usize {
        let mut n = 0;
        let mut last = None;
        for r in &self.rows {
            if last != Some(r.bus_id) {
                n += 1;
                last = Some(r.bus_id);
            }
        }
        n
    }

    /// Every structural problem with the panel. With `n_bins` given, mileage
    /// beyond the grid is rejected and the top bin absorbs overflow in the
    /// mileage update.
    pub fn problems(&self, n_bins: Option<usize>) -> Vec<RowProblem> {
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut push = |row: usize, message: String| out.push(RowProblem { row, message });
        for (i, r) in self.rows.iter().enumerate() {
            if r.decision > 1 {
                push(i, format!("decision {} is not 0 or 1", r.decision));
            }
            if let Some(n) = n_bins {
                if r.x_bin >= n {
                    push(i, format!("x_bin {} outside the grid of {n} bins", r.x_bin));
                }
            }
            let starts_bus = i == 0 || self.rows[i - 1].bus_id != r.bus_id;
            if starts_bus {
                if !seen.insert(r.bus_id) {
                    push(i, format!("bus {} appears in more than one block", r.bus_id));
                }
                continue;
            }
            let p = &self.rows[i - 1];
            if r.month != p.month + 1 {
                push(i, format!("bus {}: month {} does not follow month {}", r.bus_id, r.month, p.month));
            }
            let raw = if p.decision == 1 { 0 } else { p.x_bin } + p.delta_bin;
            let expect = match n_bins {
                Some(n) => raw.min(n - 1),
                None => raw,
            };
            if r.x_bin != expect {
                push(
                    i,
                    format!(
                        "bus {}: x_bin {} but the previous month implies {expect}",
                        r.bus_id, r.x_bin
                    ),
                );
            }
        }
        out
    }

    pub fn validate(&self, n_bins: Option<usize>) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidPanel(vec![RowProblem {
                row: 0,
                message: "dataset has no observations".into(),
            }]));
        }
        let p = self.problems(n_bins);
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidPanel(p))
        }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["bus_id", "month", "x_bin", "decision", "delta_bin"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::InvalidPanel(vec![RowProblem {
                row: 0,
                message: format!("header must be {}", expected.join(",")),
            }]));
        }
        let mut rows = Vec::new();
        let mut problems = Vec::new();
        for (i, rec) in rdr.deserialize::<Observation>().enumerate() {
            match rec {
                Ok(o) => rows.push(o),
                Err(e) => problems.push(RowProblem {
                    row: i,
                    message: e.to_string(),
                }),
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidPanel(problems));
        }
        Ok(Self { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["bus_id", "month", "x_bin", "decision", "delta_bin"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_writer(std::fs::File::create(path)?)
    }

    /// `[keep, replace]` counts per state.
    pub fn cell_counts(&self, n_bins: usize) -> Vec<[u64; 2]> {
        let mut c = vec![[0u64; 2]; n_bins];
        for r in &self.rows {
            c[r.x_bin][r.action().index()] += 1;
        }
        c
    }

    /// Two copies of every bus, the copies renumbered after the originals.
    pub fn duplicated(&self) -> Self {
        let offset = self.rows.iter().map(|r| r.bus_id).max().unwrap_or(0) + 1;
        let mut rows = self.rows.clone();
        rows.extend(self.rows.iter().map(|r| Observation {
            bus_id: r.bus_id + offset,
            ..*r
        }));
        Self { rows }
    }
}
