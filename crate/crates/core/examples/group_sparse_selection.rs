//! Feature selection: train GSAT with the group cost on a task whose labels
//! depend on three planted columns, then rank columns by how much the inner
//! maximizer moves them.

use gsot::cli::config::ExperimentConfig;
use gsot::cli::{self, select, Command};
use gsot::data::{planted_task, PlantedTaskSpec};
use gsot::Result;

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("gsot-feature-selection");
    let seed = 1;
    let cfg = ExperimentConfig::parse(&format!(
        "seed = {seed}\nout = {}\n\
         data.source = planted\ndata.classes = 2\ndata.planted.structure = 3\n\
         data.planted.strong = 1.5\ndata.planted.weak = 0\n\
         model.arch = mlp-elu\nmodel.hidden = 16\n\
         cost.kind = group\ncost.alpha = 0.9\ncost.lambda_scale = 0.075\n\
         solver.inner = scaled\nsolver.t0 = 1000\nsolver.eta0 = 0.02\n\
         select.k = 3\nselect.repetitions = 50\n",
        out.display()
    ))?;
    cli::execute(Command::Train, &cfg)?;
    let report = select::select_features(&cfg)?;
    print!("{}", report.text);

    let planted = planted_task(&PlantedTaskSpec {
        n_train: 400,
        n_test: 400,
        d: 10,
        classes: 2,
        structure: 3,
        low_rank: false,
        strong: 1.5,
        weak: 0.0,
        seed,
    })?;
    let mut chosen = report.selected.clone();
    chosen.sort_unstable();
    println!("selected {chosen:?}, planted {:?}", planted.columns);
    Ok(())
}
