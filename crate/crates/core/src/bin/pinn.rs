//! Command-line front end: training runs, evaluation, benchmark sweeps, data
//! and tableau generation, and graph inspection.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use pinn_core::irk;

#[derive(Parser)]
#[command(name = "pinn", about = "physics-informed network training engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate Gauss-Legendre tableau files for the given stage counts.
    GenTableau {
        /// Stage counts to generate (1..=500).
        #[arg(long = "stages", num_args = 1.., required = true)]
        stages: Vec<usize>,
        /// Output directory for the text files.
        #[arg(long, default_value_os_t = irk::default_tableau_dir())]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenTableau { stages, out } => {
            std::fs::create_dir_all(&out)?;
            for q in stages {
                let start = std::time::Instant::now();
                let t = irk::gauss_legendre_tableau(q)?;
                let path = irk::tableau_path(&out, q);
                irk::save_tableau(&t, &path)?;
                let (wb, wa) = t.order_condition_defects(q.min(20));
                println!(
                    "q={q}: wrote {} in {:.1}s (order defects b {wb:.2e}, a {wa:.2e})",
                    path.display(),
                    start.elapsed().as_secs_f64()
                );
            }
        }
    }
    Ok(())
}
