//! The verification suite run by `ctml gradcheck --full`.

use ctml::verify::run_suite;

fn main() -> ctml::Result<()> {
    for c in run_suite(true)? {
        println!("{:24} {:.3e} < {:.0e}: {}", c.name, c.worst, c.tol, c.passed());
    }
    Ok(())
}
