//! Weak duality on a tiny instance: the grid c-transform of the inner problem
//! upper-bounds the objective of any transported group, and the ADMM solver
//! lands inside the bracket the grid search reports.

use gsot::cli::verify::oracle_solver;
use gsot::data::rng;
use gsot::gdadmm::{admm_solve, inner_objective};
use gsot::models::{Arch, LabeledBatch, ModelParams};
use gsot::ot_oracle::{grid_ctransform, weak_duality_check, Pushforward, TinyInstance};
use gsot::{CostKind, GroupCostSpec, Matrix, Result};

fn main() -> Result<()> {
    let mut r = rng(9);
    let model = ModelParams::init(Arch::MlpElu, 2, 4, 2, &mut r);
    let pool = LabeledBatch::new(
        Matrix::random_normal(10, 2, &mut r),
        (0..10).map(|i| i % 2).collect(),
    )?;
    let inst = TinyInstance::default();

    for kind in CostKind::ALL {
        let spec = GroupCostSpec::new(kind, 0.5, 0.5)?;
        let group = LabeledBatch::new(pool.x.select_rows(&[0, 1]), pool.y[..2].to_vec())?;
        let grid = grid_ctransform(&model, &group, &spec, &inst)?;
        let st = admm_solve(&model, &group, &spec, &oracle_solver(2), 200)?;
        let admm = inner_objective(&model, &group, &spec, &st.delta_aux)?;
        println!(
            "{:<10} grid {:.6} (slack {:.1e}), admm {admm:.6}",
            kind.tag(),
            grid.value,
            grid.slack
        );

        let mut worst = f64::INFINITY;
        for t in 0..20 {
            let map = Pushforward::random(2, 3, 1.0, &mut r);
            let rep = weak_duality_check(&model, &pool, &spec, &inst, &|x| map.apply(x), 2, 1, t)?;
            worst = worst.min(rep.min_gap);
        }
        println!("{:<10} smallest gap over 20 pushforwards {worst:.3e}", "");
    }
    Ok(())
}
