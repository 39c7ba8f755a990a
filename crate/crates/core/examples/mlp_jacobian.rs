//! Parameter Jacobian of a small MLP, checked against central differences.

use sekf::{Mlp, ParamModel};

fn main() -> sekf::Result<()> {
    let mut mlp = Mlp::new(&[2, 5, 2], 42)?;
    let x = [0.3, -0.7];
    let (y, h) = mlp.jacobian(&x)?;
    println!("output {y:?}");
    println!("jacobian: {} params x {} outputs", h.nrows(), h.ncols());

    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..mlp.n_params() {
        let orig = mlp.params()[i];
        mlp.params_mut()[i] = orig + step;
        let up = mlp.predict(&x)?;
        mlp.params_mut()[i] = orig - step;
        let down = mlp.predict(&x)?;
        mlp.params_mut()[i] = orig;
        for j in 0..y.len() {
            let fd = (up[j] - down[j]) / (2.0 * step);
            worst = worst.max((fd - h[(i, j)]).abs());
        }
    }
    println!("max |analytic - finite difference| = {worst:.2e}");
    Ok(())
}
