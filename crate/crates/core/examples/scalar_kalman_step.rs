//! One filter update done by hand: a single parameter with unit sensitivity.

use nalgebra::DMatrix;
use sekf::{SekfState, SelectionPolicy};

fn main() -> sekf::Result<()> {
    let mut state = SekfState::new(1, 100.0, 0.1, 1e-3, SelectionPolicy::All)?;
    let mut params = [0.0];
    let h = DMatrix::from_element(1, 1, 1.0);

    // Prior variance 100, measurement variance 1/eta = 1000, innovation 1:
    // gain 100/1100 = 1/11, posterior variance 100 * 10/11 + 0.1.
    state.update_with_jacobian(&mut params, &h, &[1.0])?;
    println!("parameter  {:.6}", params[0]);
    println!("variance   {:.6}", state.covariance()[(0, 0)]);

    for k in 1..5 {
        let e = 1.0 - params[0];
        state.update_with_jacobian(&mut params, &h, &[e])?;
        println!(
            "step {k}: e = {e:.5}  param = {:.5}  var = {:.3}",
            params[0],
            state.covariance()[(0, 0)]
        );
    }
    Ok(())
}
