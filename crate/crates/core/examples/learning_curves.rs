//! Plot learning curves of existing run directories.
//!
//! cargo run --release --example learning_curves -- runs/a runs/b

use std::path::PathBuf;

use rmc::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dirs: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if dirs.is_empty() {
        eprintln!("usage: learning_curves RUN_DIR...");
        std::process::exit(2);
    }
    let out = run::output_root().join("curves.svg");
    let chart = run::plot_runs(&dirs, &out, "eval return")?;
    for s in &chart.series {
        let last = s.y.last().copied().unwrap_or(f64::NAN);
        println!("{:<24} {} points, last {last:.1}", s.label, s.x.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}
