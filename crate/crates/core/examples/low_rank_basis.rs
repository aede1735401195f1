//! Subspace extraction: train GSAT with the nuclear cost on a task planted in
//! a 2-dimensional subspace and compare the leading perturbation direction
//! with it.

use gsot::cli::config::ExperimentConfig;
use gsot::cli::{self, select, Command};
use gsot::data::{planted_task, PlantedTaskSpec};
use gsot::Result;

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("gsot-basis-selection");
    let seed = 3;
    let cfg = ExperimentConfig::parse(&format!(
        "seed = {seed}\nout = {}\n\
         data.source = planted\ndata.classes = 4\ndata.planted.structure = 2\n\
         data.planted.low_rank = true\ndata.planted.strong = 2\ndata.planted.weak = 0\n\
         model.arch = mlp-elu\nmodel.hidden = 16\n\
         cost.kind = nuclear\ncost.alpha = 0.9\ncost.lambda_scale = 0.075\n\
         solver.inner = scaled\nsolver.t0 = 1000\nsolver.eta0 = 0.02\n\
         select.r = 2\nselect.repetitions = 50\n",
        out.display()
    ))?;
    cli::execute(Command::Train, &cfg)?;
    let report = select::select_basis(&cfg)?;
    print!("{}", report.text);

    let planted = planted_task(&PlantedTaskSpec {
        n_train: 400,
        n_test: 400,
        d: 10,
        classes: 4,
        structure: 2,
        low_rank: true,
        strong: 2.0,
        weak: 0.0,
        seed,
    })?;
    for (i, s) in report.scores.iter().enumerate() {
        let v = report.basis.row(i);
        let inside: f64 = (0..2)
            .map(|b| {
                planted
                    .basis
                    .column(b)
                    .iter()
                    .zip(v)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    .powi(2)
            })
            .sum();
        println!(
            "direction {} (score {s:.3}): share inside the planted subspace {:.3}",
            i + 1,
            inside.sqrt()
        );
    }
    Ok(())
}
