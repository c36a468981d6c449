use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use otthom::cell::{assemble_cell_problem, solve_cell_with, CellOptions};
use otthom::density::{build_density_model, estimate_density, family_graph, DensityModel};
use otthom::energy::MassDistribution;
use otthom::experiments::{run_experiment, ExperimentConfig, ExperimentName};
use otthom::geodesic::{audit_apriori_bound, solve_geodesic, GeodesicProblem};
use otthom::geometry::Orthotope;
use otthom::graph::{validate_geometry, EmbeddedGraph};
use otthom::random_graphs::GeneratorSpec;
use otthom::recovery::{assemble_recovery, RecoveryParams, SmoothCurveSpec};
use otthom::Error;

#[derive(Parser)]
#[command(name = "otthom", version, about = "Discrete dynamical optimal transport and homogenized energies")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph from a generator spec and write it as JSON.
    GenGraph {
        /// Generator spec: a JSON file path or an inline JSON object.
        #[arg(long)]
        spec: String,
        #[arg(long, env = "OTTHOM_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the geometric assumptions of a graph inside a box.
    Validate {
        #[arg(long)]
        graph: PathBuf,
        /// Lower corner followed by upper corner, comma separated.
        #[arg(long = "box", value_delimiter = ',')]
        bbox: Vec<f64>,
        #[arg(long, default_value_t = 0.25)]
        probe_spacing: f64,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
    },
    /// Solve one cell problem.
    Cell {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v: Vec<f64>,
        #[arg(long)]
        eps: f64,
        #[arg(long = "box", value_delimiter = ',')]
        bbox: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Estimate f(v) across scales and seeds, or build a sampled model.
    Density {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v: Option<Vec<f64>>,
        /// Build a model on this many direction pairs instead of one vector.
        #[arg(long)]
        directions: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        eps_list: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long = "box", value_delimiter = ',')]
        bbox: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimise the discrete action between two masses.
    Geodesic {
        #[arg(long)]
        graph: PathBuf,
        /// JSON array of vertex masses.
        #[arg(long)]
        m0: PathBuf,
        #[arg(long)]
        m1: PathBuf,
        #[arg(long, default_value_t = 16)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        total_time: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Write the optimal curve here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a recovery sequence for a smooth curve and print its audit.
    Recover {
        /// Curve spec: a JSON file path or an inline JSON object.
        #[arg(long)]
        curve: String,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        eps: f64,
        /// Depot level (default: the smallest admissible value).
        #[arg(long)]
        alpha: Option<f64>,
        /// Density model JSON (default: built from the family).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run a named experiment and write its CSV.
    Experiment {
        name: String,
        /// JSON config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, env = "OTTHOM_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Args)]
struct FamilyArgs {
    /// Generator spec: a JSON file path or an inline JSON object.
    #[arg(long)]
    family: String,
    #[arg(long, env = "OTTHOM_SEED")]
    seed: Option<u64>,
}

impl FamilyArgs {
    fn load(&self) -> Result<GeneratorSpec, Error> {
        let mut spec: GeneratorSpec = serde_json::from_str(&read_json_arg(&self.family)?)?;
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

fn read_json_arg(s: &str) -> Result<String, Error> {
    if s.trim_start().starts_with('{') {
        Ok(s.to_string())
    } else {
        std::fs::read_to_string(s).map_err(|e| Error::Config(format!("{s}: {e}")))
    }
}

fn read_file(p: &Path) -> Result<String, Error> {
    std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

fn parse_box(v: &[f64]) -> Result<Orthotope, Error> {
    if v.is_empty() || v.len() % 2 != 0 {
        return Err(Error::Config("--box needs lower and upper corners".into()));
    }
    let n = v.len() / 2;
    Orthotope::new(v[..n].to_vec(), v[n..].to_vec()).map_err(|e| Error::Config(e.to_string()))
}

fn unit_box(n: usize, b: &Option<Vec<f64>>) -> Result<Orthotope, Error> {
    match b {
        Some(v) => parse_box(v),
        None => Ok(Orthotope::cube(n, 0.0, 1.0)?),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?);
    Ok(())
}

enum Outcome {
    Pass,
    Fail,
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.cmd {
        Command::GenGraph { spec, seed, out } => {
            let mut s: GeneratorSpec = serde_json::from_str(&read_json_arg(&spec)?)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
            let g = s.generate()?;
            g.save(&out)?;
            eprintln!("wrote {} vertices, {} edges to {}", g.num_vertices(), g.num_edges(), out.display());
            Ok(Outcome::Pass)
        }
        Command::Validate { graph, bbox, probe_spacing, pairs } => {
            let g = EmbeddedGraph::from_json(&read_file(&graph)?)?;
            let rep = validate_geometry(&g, &parse_box(&bbox)?, probe_spacing, pairs)?;
            print_json(&rep)?;
            Ok(if rep.passed() { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Cell { family, v, eps, bbox, tol } => {
            let fam = family.load()?;
            let q = unit_box(v.len(), &bbox)?;
            let g = family_graph(&fam, &q, eps, fam.seed)?;
            let p = assemble_cell_problem(&g, &q, &v, eps)?;
            let s = solve_cell_with(&p, CellOptions { tol, ..CellOptions::default() })?;
            print_json(&serde_json::json!({
                "value": s.value,
                "competitorValue": s.competitor_value,
                "energy": s.energy,
                "dualityGap": s.duality_gap,
                "divergenceResidual": s.divergence_residual,
                "iterations": s.iterations,
                "converged": s.converged,
            }))?;
            Ok(if s.converged { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Density { family, v, directions, eps_list, seeds, bbox, tol, out } => {
            let fam = family.load()?;
            let opts = CellOptions { tol, ..CellOptions::default() };
            let seeds = seeds.unwrap_or_else(|| vec![fam.seed]);
            let json = match (v, directions) {
                (Some(v), None) => {
                    let q = unit_box(v.len(), &bbox)?;
                    serde_json::to_string_pretty(&estimate_density(&fam, &v, &q, &eps_list, &seeds, opts)?)?
                }
                (None, Some(m)) => {
                    let q = unit_box(fam.n, &bbox)?;
                    build_density_model(&fam, m, &q, &eps_list, &seeds, opts)?.to_json()
                }
                _ => return Err(Error::Config("give exactly one of --v and --directions".into())),
            };
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
            Ok(Outcome::Pass)
        }
        Command::Geodesic { graph, m0, m1, steps, total_time, tol, out } => {
            let g = EmbeddedGraph::from_json(&read_file(&graph)?)?;
            let m0: MassDistribution = serde_json::from_str(&read_file(&m0)?)?;
            let m1: MassDistribution = serde_json::from_str(&read_file(&m1)?)?;
            let sol = solve_geodesic(&g, &GeodesicProblem::new(m0, m1, steps)?.with_total_time(total_time).with_tol(tol))?;
            let ap = audit_apriori_bound(&g, &sol.curve)?;
            print_json(&serde_json::json!({ "report": sol.report, "apriori": ap }))?;
            if let Some(p) = out {
                std::fs::write(p, sol.curve.to_json())?;
            }
            Ok(if sol.report.converged && ap.holds { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Recover { curve, family, h, delta, eta, eps, alpha, model } => {
            let spec: SmoothCurveSpec = serde_json::from_str(&read_json_arg(&curve)?)?;
            let fam = family.load()?;
            let alpha = alpha.unwrap_or_else(|| RecoveryParams::minimal_alpha(h, &spec));
            let params = RecoveryParams::new(h, delta, eta, eps, alpha);
            let model = match model {
                Some(p) => DensityModel::from_json(&read_file(&p)?)?,
                None => {
                    let q = Orthotope::cube(spec.dim(), 0.0, 1.0)?;
                    build_density_model(&fam, 4, &q, &[delta], &[fam.seed], CellOptions::default())?
                }
            };
            let rec = assemble_recovery(&spec, &params, &fam, &model)?;
            print_json(&rec.audit)?;
            Ok(Outcome::Pass)
        }
        Command::Experiment { name, config, output, seed, tol } => {
            let name: ExperimentName = name.parse()?;
            let mut c = match config {
                Some(p) => ExperimentConfig::from_json(&read_file(&p)?)?,
                None => ExperimentConfig::new(name),
            };
            if c.name != name {
                return Err(Error::Config(format!("config is for '{}', not '{name}'", c.name)));
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(t) = tol {
                c.tol = t;
            }
            if output.is_some() {
                c.output = output;
            }
            let res = run_experiment(&c)?;
            if c.output.is_none() {
                res.write_csv(std::io::stdout().lock())?;
            }
            for a in &res.assertions {
                eprintln!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            Ok(if res.passed() { Outcome::Pass } else { Outcome::Fail })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidParams(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
