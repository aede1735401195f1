//! Accuracy of an ERM model as the structured attacks are allowed more
//! columns or a higher rank, against per-sample PGD at the same budget.

use gsot::attacks::{AttackConfig, AttackKind};
use gsot::cli::attacked_accuracy;
use gsot::data::{planted_task, PlantedTaskSpec};
use gsot::gdadmm::{erm_train, ModelShape, SolverConfig};
use gsot::models::Arch;
use gsot::Result;

fn main() -> Result<()> {
    let task = planted_task(&PlantedTaskSpec {
        n_train: 400,
        n_test: 400,
        d: 10,
        classes: 4,
        structure: 2,
        low_rank: false,
        strong: 2.0,
        weak: 1.0,
        seed: 0,
    })?;
    let cfg = SolverConfig {
        t0: 1000,
        eta0: 0.02,
        ..SolverConfig::default()
    };
    let model = erm_train(
        &task.train,
        ModelShape {
            arch: Arch::MlpElu,
            hidden: 16,
        },
        &cfg,
    )?;
    let mn = task.train.mean_feature_norm();
    let budget = 0.5 * mn;
    println!(
        "clean accuracy {:.3}, per-row budget {budget:.3}",
        model.accuracy(&task.test.batch())?
    );

    let structured = |kind| {
        let mut a = AttackConfig::paper_structured(kind, mn);
        a.max_norm = budget;
        a.step_size = 0.01 * mn;
        a
    };
    for (label, kinds) in [
        (
            "group-sparse",
            (1..=5)
                .map(|k| AttackKind::GroupSparse { k })
                .collect::<Vec<_>>(),
        ),
        (
            "low-rank",
            (1..=4).map(|r| AttackKind::LowRank { r }).collect(),
        ),
    ] {
        println!("{label}:");
        for kind in kinds {
            let (acc, norm) = attacked_accuracy(&model, &task.test, &structured(kind), 16)?;
            println!("  {kind:<16} acc {acc:.3}  mean |delta| {norm:.3}");
        }
    }
    let (acc, _) = attacked_accuracy(&model, &task.test, &structured(AttackKind::Universal), 16)?;
    println!("universal        acc {acc:.3}");
    let (acc, _) = attacked_accuracy(&model, &task.test, &AttackConfig::paper_pgd(mn, budget), 16)?;
    println!("per-sample pgd   acc {acc:.3}");
    Ok(())
}
