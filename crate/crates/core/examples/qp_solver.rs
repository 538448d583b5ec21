//! The active-set QP solver on a small box-constrained problem, cold and
//! warm started.
use fovpc::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};

fn main() -> fovpc::Result<()> {
    // minimize |x - (2, -3, 0.5)|^2 subject to -1 <= x_i <= 1 and x_0 + x_1 + x_2 <= 0.2
    let h = DMatrix::identity(3, 3) * 2.0;
    let f = DVector::from_column_slice(&[-4.0, 6.0, -1.0]);
    let mut a = DMatrix::zeros(7, 3);
    let mut b = DVector::zeros(7);
    for i in 0..3 {
        a[(i, i)] = 1.0;
        a[(3 + i, i)] = -1.0;
        b[i] = 1.0;
        b[3 + i] = 1.0;
    }
    a.row_mut(6).fill(1.0);
    b[6] = 0.2;
    let qp = QuadraticProgram::new(h, f, a, b)?;

    let cold = qp.solve()?;
    println!("x = {:.4?}", cold.x.as_slice());
    println!("active {:?}, multipliers {:.4?}, {} iterations", cold.active_set, cold.multipliers.as_slice(), cold.iterations);
    let warm = qp.solve_with_hint(&cold.active_set)?;
    println!("warm start: {} iterations, same x: {}", warm.iterations, (warm.x - &cold.x).amax() < 1e-12);
    let r = qp.kkt_residuals(&cold.x, &cold.multipliers);
    println!("KKT residuals {r:?}");
    Ok(())
}
