//! Prints the solved preset coefficients as Rust constants.

fn main() {
    match pb_core::calibration::solve() {
        Ok(c) => print!("{}", c.to_rust()),
        Err(e) => {
            eprintln!("calibration failed: {e}");
            std::process::exit(1);
        }
    }
}
