//! Run the bundled four-state reactor fixture through the library API and
//! print the report; `ddmpc demo cstr` does the same from the command line.

use ddmpc::cli::{parse_config, CSTR_FIXTURE};
use ddmpc::runner::{render_report, run_experiment};

fn main() -> ddmpc::Result<()> {
    let cfg = parse_config(CSTR_FIXTURE.as_bytes())?;
    let outcome = run_experiment(&cfg)?;
    print!("{}", render_report(&outcome)?);
    Ok(())
}
