use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sogmap_core::pipeline;
use sogmap_core::render::{render_pgm, render_ppm};
use sogmap_core::sogm::{decode_grid, DYNAMIC};
use sogmap_core::{Config, Error, Result};

#[derive(Parser)]
#[command(name = "sogmap", version, about = "Occupancy forecasting, risk maps and planning")]
struct Cli {
    /// key=value overrides applied on top of the profile
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// 48 x 48 grids, 11 layers, narrow network
    #[arg(long, global = true)]
    small: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate sessions into <out>/sessions/<id>/
    Record {
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify map cells from recorded sessions into <out>/annot/<map>.lbl
    Annotate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired input and ground-truth grids per sample
    GenSogm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label grid; without it the simulator labels are used
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train on a sample directory; writes weights.wgt and loss.csv
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast every <id>.in.sogm into <id>.pred.sogm
    Predict {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Score predictions against ground truth; writes report.csv and pr.csv
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of <id>.gt.sogm files (defaults to --in)
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Plan through the risk map of one prediction
    Plan {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PGM of one layer and channel, or PPM of the merged-time view
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        /// .pgm or .ppm
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = DYNAMIC)]
        channel: usize,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    match &cli.config {
        Some(p) => Config::load(p, cli.small),
        None => Ok(Config::profile(cli.small)),
    }
}

fn render(input: &Path, out: &Path, layer: usize, channel: usize) -> Result<()> {
    let (grid, _) = decode_grid(&std::fs::read(input)?)?;
    let bytes = match out.extension().and_then(|e| e.to_str()) {
        Some("pgm") => render_pgm(&grid, layer, channel)?,
        Some("ppm") => render_ppm(&grid),
        _ => return Err(Error::invalid("render output must end in .pgm or .ppm")),
    };
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(out, bytes)?)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Record { out } => {
            for d in pipeline::record(&cfg, cli.seed, out)? {
                println!("{}", d.display());
            }
        }
        Command::Annotate { input, out } => {
            let (path, a) = pipeline::annotate(&cfg, input, out)?;
            println!("{} agreement={:.4}", path.display(), a.agreement);
        }
        Command::GenSogm { input, out, labels } => {
            let n = pipeline::gen_sogm(&cfg, input, labels.as_deref(), out)?;
            println!("samples={n}");
        }
        Command::Train { input, out } => {
            let r = pipeline::train_cmd(&cfg, cli.seed, input, out)?;
            println!(
                "epochs={} first_loss={} last_loss={}",
                r.losses.len(),
                r.losses.first().copied().unwrap_or(f64::NAN),
                r.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Predict { input, out, weights } => {
            let n = pipeline::predict_cmd(&cfg, weights, input, out)?;
            println!("predictions={n}");
        }
        Command::Eval { input, out, gt } => {
            let r = pipeline::eval_cmd(&cfg, input, gt.as_deref().unwrap_or(input), out)?;
            let ap = r.ap_tot.map_or("NA".to_string(), |v| v.to_string());
            println!("ap_tot={ap} mse={}", r.mse);
        }
        Command::Plan { input, out } => {
            let p = pipeline::plan_cmd(&cfg, input, out)?;
            println!("seed={} cost={}", p.seed_index, p.cost);
        }
        Command::Render { input, out, layer, channel } => render(input, out, *layer, *channel)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error kind={} code={} msg={msg:?}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
