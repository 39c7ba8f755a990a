//! A neural ODE rolled out with RK4 over a horizon, and its sensitivity to
//! the field parameters.

use sekf::{NodeModel, ParamModel};

fn main() -> sekf::Result<()> {
    // Two states, one exogenous input, a constant extra input to the field.
    let horizon = 5;
    let node = NodeModel::new(2, 1, &[8], 0.1, horizon, true, 7)?;
    let x0 = [0.5, 0.1];
    let u: Vec<f64> = (0..horizon).map(|k| (k as f64 * 0.4).sin()).collect();

    let traj = node.rollout(&x0, &u)?;
    for (k, x) in traj.chunks(2).enumerate() {
        println!(
            "t = {:.1}  x = [{:+.5}, {:+.5}]",
            (k + 1) as f64 * node.dt(),
            x[0],
            x[1]
        );
    }

    let mut input = x0.to_vec();
    input.extend(&u);
    let (_, h) = node.jacobian(&input)?;
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!(
        "{} parameters, Jacobian {}x{}, Frobenius norm {norm:.4}",
        node.n_params(),
        h.nrows(),
        h.ncols()
    );
    Ok(())
}
