//! Shared fixtures for the criterion benchmarks.

use ezddc::estimation::recovery::{recovery_config, recovery_model, simulate_from, RECOVERY_TRUTH};
use ezddc::{BusModel, DrawBlock, EstimationConfig, PanelDataset};

/// The 130-bin recovery design at the true parameters.
pub fn empirical_model() -> BusModel {
    recovery_model(&RECOVERY_TRUTH).expect("recovery design is valid")
}

/// A draw block sized like the one used inside the likelihood.
pub fn inner_draws(model: &BusModel) -> DrawBlock {
    DrawBlock::for_solve(model.shocks.distribution, recovery_config(0).solver.n_sim_eps, 1)
}

/// A synthetic panel on the empirical grid with its estimation settings.
pub fn empirical_panel(buses: usize, months: usize) -> (PanelDataset, EstimationConfig) {
    let data = simulate_from(&empirical_model(), buses, months, 1).expect("simulation succeeds");
    (data, recovery_config(1))
}
