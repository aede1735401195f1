//! Tracks the Danskin stationarity estimate along a GSAT run with a linear
//! model.

use gsot::data::gen_blobs;
use gsot::gdadmm::{default_lambda, gsat_train, ModelShape, SolverConfig};
use gsot::models::Arch;
use gsot::{CostKind, GroupCostSpec, Result};

fn main() -> Result<()> {
    let ds = gen_blobs(400, 5, 2, 2.0, 0)?;
    let spec = GroupCostSpec::new(CostKind::GroupNorm, 0.5, default_lambda(&ds))?;
    let cfg = SolverConfig {
        t0: 2000,
        eta0: 0.003,
        stationarity_every: 100,
        stationarity_groups: 25,
        ..SolverConfig::default()
    }
    .scaled_inner(&spec);
    let (_, trace) = gsat_train(
        &ds,
        ModelShape {
            arch: Arch::LinearSoftmax,
            hidden: 0,
        },
        &spec,
        &cfg,
    )?;
    println!("{:>6} {:>12} {:>14}", "iter", "robust loss", "stationarity");
    for r in trace.records.iter().filter(|r| r.stationarity.is_finite()) {
        println!(
            "{:>6} {:>12.5} {:>14.3e}",
            r.iter, r.robust_loss, r.stationarity
        );
    }
    Ok(())
}
