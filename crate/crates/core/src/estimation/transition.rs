//! Nonparametric estimation of the mileage-increment law.
//!
//! Observations are attributed to the bin whose row governs their
//! increment: the current bin after keeping, bin 0 after replacing. Bins
//! with fewer than [`MIN_BIN_OBS`] observations borrow the frequencies of
//! their group of [`POOL_WIDTH`] consecutive bins. Groups with no data at
//! all (never visited) take the row of the nearest group that has data.

use crate::error::{Error, Result};
use crate::model::TransitionModel;

use super::panel::PanelDataset;

pub const MIN_BIN_OBS: u64 = 30;
pub const POOL_WIDTH: usize = 10;

pub fn estimate_transition(data: &PanelDataset, n_bins: usize) -> Result<TransitionModel> {
    if data.is_empty() {
        return Err(Error::Transition("no observations".into()));
    }
    if n_bins == 0 {
        return Err(Error::Transition("grid has no bins".into()));
    }
    let width = data.rows.iter().map(|r| r.delta_bin).max().unwrap_or(0) + 1;
    let mut counts = vec![vec![0u64; width]; n_bins];
    for r in &data.rows {
        let bin = if r.decision == 1 { 0 } else { r.x_bin };
        if bin >= n_bins {
            return Err(Error::Transition(format!("x_bin {} outside the grid of {n_bins} bins", r.x_bin)));
        }
        counts[bin][r.delta_bin] += 1;
    }

    let n_groups = n_bins.div_ceil(POOL_WIDTH);
    let mut group_counts = vec![vec![0u64; width]; n_groups];
    for (x, row) in counts.iter().enumerate() {
        for (k, c) in row.iter().enumerate() {
            group_counts[x / POOL_WIDTH][k] += c;
        }
    }
    let total = |row: &[u64]| row.iter().sum::<u64>();
    let normalize = |row: &[u64]| -> Vec<f64> {
        let t = total(row) as f64;
        row.iter().map(|&c| c as f64 / t).collect()
    };
    let populated: Vec<usize> = (0..n_groups).filter(|&g| total(&group_counts[g]) > 0).collect();
    if populated.is_empty() {
        return Err(Error::Transition("no bin group has observations".into()));
    }
    let group_row = |g: usize| -> Vec<f64> {
        let nearest = *populated
            .iter()
            .min_by_key(|&&h| (h as isize - g as isize).unsigned_abs() * 2 + usize::from(h > g))
            .expect("nonempty");
        normalize(&group_counts[nearest])
    };

    let rows = counts
        .iter()
        .enumerate()
        .map(|(x, row)| {
            if total(row) >= MIN_BIN_OBS {
                normalize(row)
            } else {
                group_row(x / POOL_WIDTH)
            }
        })
        .collect();
    Ok(TransitionModel { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::panel::Observation;

    fn obs(x_bin: usize, decision: u8, delta_bin: usize) -> Observation {
        Observation {
            bus_id: 1,
            month: 1,
            x_bin,
            decision,
            delta_bin,
        }
    }

    #[test]
    fn degenerate_increments() {
        let data = PanelDataset {
            rows: (0..50).map(|t| obs(t % 5, 0, 1)).collect(),
        };
        let tm = estimate_transition(&data, 5).unwrap();
        for row in &tm.rows {
            assert_eq!(row, &vec![0.0, 1.0]);
        }
    }

    #[test]
    fn counting_two_observations() {
        let data = PanelDataset {
            rows: vec![obs(0, 0, 0), obs(0, 0, 2)],
        };
        let tm = estimate_transition(&data, 1).unwrap();
        assert_eq!(tm.rows[0], vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn replacement_counts_toward_bin_zero() {
        let mut rows: Vec<_> = (0..40).map(|_| obs(0, 0, 0)).collect();
        rows.extend((0..40).map(|_| obs(3, 1, 1)));
        rows.extend((0..40).map(|_| obs(3, 0, 0)));
        let tm = estimate_transition(&PanelDataset { rows }, 4).unwrap();
        assert_eq!(tm.rows[0], vec![0.5, 0.5]);
        assert_eq!(tm.rows[3], vec![1.0, 0.0]);
    }

    #[test]
    fn sparse_bins_pool_and_unvisited_groups_borrow() {
        let mut rows: Vec<_> = (0..100).map(|_| obs(0, 0, 1)).collect();
        rows.push(obs(5, 0, 0));
        let tm = estimate_transition(&PanelDataset { rows }, 25).unwrap();
        assert_eq!(tm.rows[0], vec![0.0, 1.0]);
        // bin 5 pools with its group: 100 of 101 observations have Δ = 1
        assert!((tm.rows[5][1] - 100.0 / 101.0).abs() < 1e-15);
        // groups 1 and 2 have no data and borrow group 0
        assert_eq!(tm.rows[24], tm.rows[5]);
        tm.validate(25).unwrap();
    }
}
