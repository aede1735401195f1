//! The three closed-form proximal operators on one random matrix, each
//! checked against the iterative oracle.

use gsot::data::rng;
use gsot::prox::{prox_objective, prox_oracle, ProxParams};
use gsot::{CostKind, Matrix, Result};

fn main() -> Result<()> {
    let v = Matrix::random_normal(5, 4, &mut rng(7)).scale(2.0);
    let xi = 1.5;
    println!("V =\n{v}");
    for kind in CostKind::ALL {
        let closed = ProxParams::new(kind, xi)?.apply(&v)?;
        let oracle = prox_oracle(kind, &v, xi)?;
        println!("{kind}: closed form =\n{closed}");
        println!(
            "  objective {:.9} (oracle {:.9}), distance to oracle {:.2e}\n",
            prox_objective(kind, &v, &closed, xi)?,
            prox_objective(kind, &v, &oracle, xi)?,
            closed.sub(&oracle)?.frobenius_norm()
        );
    }
    Ok(())
}
