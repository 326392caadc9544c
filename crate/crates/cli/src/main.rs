use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qdsource_cli::commands::{self, Experiment, StreamFormat};
use qdsource_cli::config::RunConfig;
use qdsource_cli::CliError;

/// Waveguide-coupled quantum-dot single-photon source simulator.
#[derive(Parser)]
#[command(name = "qdsource", version)]
struct Cli {
    /// JSON run configuration; built-in reference values when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config and defaults to `.`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emission probability and impurity versus laser power.
    Rabi,
    /// β-factors and impurity across emitter offsets.
    ImpurityMap,
    /// Synthesise detector streams and analyse their correlations.
    Synth {
        #[arg(long, value_enum, default_value = "hbt")]
        experiment: Experiment,
        #[arg(long, default_value_t = 1_000_000)]
        pulses: u64,
        #[arg(long, value_enum, default_value = "binary")]
        format: StreamFormat,
    },
    /// Efficiency budget and expected count rate.
    Budget,
    /// Correct a raw HOM visibility, or fit a `g2,v_raw` CSV to its intercept.
    HomCorrect {
        #[arg(long, requires = "g2", conflicts_with = "points")]
        v_raw: Option<f64>,
        #[arg(long)]
        g2: Option<f64>,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        eta_opt: Option<f64>,
    },
    /// Fit a `power,intensity` Rabi CSV for P_π and the dephasing rate.
    FitRabi {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit the analytic mode profiles to the impurity anchors.
    Calibrate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Rabi => {
            let s = commands::cmd_rabi(&cfg, &out)?;
            println!("rows               {}", s.rows.len());
            println!("theta_peak/pi      {:.4}", s.theta_peak_over_pi);
            println!("xi(P -> 0)         {:.6e}", s.xi_low_power);
            println!("xi(P_pi)           {:.6e}", s.xi_at_p_pi);
            println!("ratio              {:.4}", s.xi_at_p_pi / s.xi_low_power);
        }
        Command::ImpurityMap => {
            let points = commands::cmd_impurity_map(&cfg, &out)?;
            println!("wrote {} offsets to {}", points.len(), out.join("impurity_map.csv").display());
        }
        Command::Synth {
            experiment,
            pulses,
            format,
        } => {
            let seed = cli
                .seed
                .or(cfg.seed)
                .ok_or_else(|| CliError::Config("synth needs a seed (--seed or config `seed`)".into()))?;
            let result = commands::cmd_synth(&cfg, experiment, pulses, seed, format, &out)?;
            println!("{}", serde_json::to_string_pretty(&result).expect("serialisable"));
        }
        Command::Budget => {
            let (_, table) = commands::cmd_budget(&cfg.budget, &out)?;
            print!("{table}");
        }
        Command::HomCorrect {
            v_raw,
            g2,
            points,
            r,
            t,
            epsilon,
            eta_opt,
        } => {
            if let Some(p) = points {
                let fit = commands::cmd_hom_intercept(&p)?;
                println!("V          {:.4} +/- {:.4}", fit.visibility, fit.uncertainty);
                println!("slope      {:.4}", fit.slope);
            } else {
                let (v_raw, g2) = match (v_raw, g2) {
                    (Some(v), Some(g)) => (v, g),
                    _ => return Err(CliError::Config("give --v-raw and --g2, or --points".into())),
                };
                let mut setup = cfg.hom_setup()?;
                setup.r = r.unwrap_or(setup.r);
                setup.t = t.unwrap_or(setup.t);
                setup.epsilon = epsilon.unwrap_or(setup.epsilon);
                setup.eta_opt = eta_opt.unwrap_or(setup.eta_opt);
                setup.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let v = commands::cmd_hom_correct(&setup, v_raw, g2)?;
                let flag = if v.out_of_range { "  (outside [0, 1])" } else { "" };
                println!("V          {:.4}{flag}", v.value);
            }
        }
        Command::FitRabi { data } => {
            let fit = commands::cmd_fit_rabi(&cfg, &data, &out)?;
            println!("P_pi       {:.6}", fit.p_pi);
            println!("gamma_d    {:.6} /ns", fit.gamma_d);
            println!("scale      {:.6}", fit.scale);
        }
        Command::Calibrate => {
            let c = commands::cmd_calibrate(&out)?;
            println!("b_c                 {:.6}", c.b_c);
            println!("b_e                 {:.9}", c.b_e);
            println!("effective_width_nm  {:.6}", c.effective_width);
            println!("xi_at_reach         {:.4e}", c.xi_at_reach);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
