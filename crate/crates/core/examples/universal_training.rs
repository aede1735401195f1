//! GSAT with the universal cost: the inner maximizer moves every sample of a
//! group by the same vector, and the trained model is compared with ERM under
//! a universal attack.

use gsot::attacks::{AttackConfig, AttackKind};
use gsot::cli::attacked_accuracy;
use gsot::data::{planted_task, rng, PlantedTaskSpec};
use gsot::gdadmm::{admm_solve, default_lambda, erm_train, gsat_train, ModelShape, SolverConfig};
use gsot::groupcost::max_row_deviation;
use gsot::models::Arch;
use gsot::{CostKind, GroupCostSpec, Result};

fn main() -> Result<()> {
    let task = planted_task(&PlantedTaskSpec {
        n_train: 400,
        n_test: 400,
        d: 10,
        classes: 4,
        structure: 3,
        low_rank: false,
        strong: 1.5,
        weak: 1.0,
        seed: 1,
    })?;
    let (train, test) = (task.train, task.test);
    let spec = GroupCostSpec::new(CostKind::Indicator, 0.9, 0.3 * default_lambda(&train))?;
    let cfg = SolverConfig {
        t0: 1000,
        eta0: 0.02,
        seed: 1,
        ..SolverConfig::default()
    }
    .scaled_inner(&spec);
    let shape = ModelShape {
        arch: Arch::MlpElu,
        hidden: 16,
    };

    let (gsat, trace) = gsat_train(&train, shape, &spec, &cfg)?;
    let erm = erm_train(&train, shape, &cfg)?;
    let last = trace.records.last().expect("t0 >= 1");
    println!(
        "final robust loss {:.4}, clean loss {:.4}",
        last.robust_loss, last.clean_loss
    );

    let group = train.sample_group(cfg.m, &mut rng(5));
    let st = admm_solve(&gsat, &group, &spec, &cfg, 200)?;
    println!(
        "inner maximizer on one group: row norm {:.4}, max row deviation {:.1e}",
        gsot::linalg::norm2(st.delta_aux.row(0)),
        max_row_deviation(&st.delta_aux)
    );

    let mn = train.mean_feature_norm();
    let mut atk = AttackConfig::paper_structured(AttackKind::Universal, mn);
    atk.max_norm = 0.5 * mn;
    atk.step_size = 0.01 * mn;
    println!("{:<6} {:>8} {:>10}", "model", "clean", "universal");
    for (name, m) in [("erm", &erm), ("gsat", &gsat)] {
        let (acc, _) = attacked_accuracy(m, &test, &atk, 16)?;
        println!(
            "{name:<6} {:>8.3} {:>10.3}",
            m.accuracy(&test.batch())?,
            acc
        );
    }
    Ok(())
}
