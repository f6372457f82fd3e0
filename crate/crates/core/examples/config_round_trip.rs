//! Load an experiment from JSON, adjust it in code, and write it back out.

use ddmpc::cli::{parse_config, serialize_config};

fn main() -> ddmpc::Result<()> {
    let mut cfg = parse_config(include_bytes!("../fixtures/scalar.json"))?;
    cfg.mpc.order = 2;
    cfg.seed = 42;
    let text = serialize_config(&cfg)?;
    assert_eq!(parse_config(text.as_bytes())?, cfg);
    println!("{text}");
    Ok(())
}
