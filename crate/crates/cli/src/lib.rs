//! Batch front end: parse a run configuration, dispatch a subcommand and
//! write CSV/JSON artifacts.

use bloch_homog::bloch::FiberAssembler;
use bloch_homog::cauchy::{cauchy_csv, CauchyProblem};
use bloch_homog::cell::EffectiveData;
use bloch_homog::config::{CauchyMode, RunConfig};
use bloch_homog::expsweep::{k_grid, run_sweep, sharpness_probe, sweep_csv, Law, ProbeTable};
use bloch_homog::germ::{classify, GermMatrices, GermRow, Regime};
use bloch_homog::lattice::FourierBasis;
use bloch_homog::models::ModelDescriptor;
use bloch_homog::oracle::{fit_all, samples_csv};
use bloch_homog::report::{to_json, Cell, Csv};
use bloch_homog::validate::{self, thetas_for};
use bloch_homog::Error;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "bloch-homog", version, about = "Floquet-Bloch homogenization error laws")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; built-in defaults if omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores if omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Basis cutoff (overrides `cutoff`).
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub cutoff: Option<f64>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Effective matrices and correctors as JSON.
    Effective,
    /// Spectral germ over the θ grid and regime classification.
    Germ,
    /// Band samples and dispersion fits.
    Bands,
    /// Sup-norm sweep over (ε, τ).
    Sweep,
    /// Extremal-fiber probe table.
    Sharpness,
    /// Cauchy problem error tables.
    Cauchy,
    /// Full property suite on the model zoo.
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Effective => "effective",
            Command::Germ => "germ",
            Command::Bands => "bands",
            Command::Sweep => "sweep",
            Command::Sharpness => "sharpness",
            Command::Cauchy => "cauchy",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("thread pool: {0}")]
    Threads(String),
    #[error("{0} checks failed")]
    ValidationFailed(usize),
}

impl CliError {
    /// 1 for numerical or validation failures, 2 for configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                Error::Config(_)
                | Error::Parse(_)
                | Error::Model(_)
                | Error::Dimension(_)
                | Error::DegenerateLattice
                | Error::NotPositive
                | Error::SupportOverflow(_)
                | Error::ProbeInapplicable(_)
                | Error::GridTooCoarse { .. } => 2,
                _ => 1,
            },
            CliError::Read { .. } | CliError::Threads(_) => 2,
            CliError::Write { .. } | CliError::ValidationFailed(_) => 1,
        }
    }
}

/// Files written and summary lines of one run.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

/// Load the configuration named by the command line and apply its overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Read { path: p.clone(), source })?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(c) = cli.cutoff {
        cfg.cutoff = Some(c);
    }
    cfg.check()?;
    Ok(cfg)
}

/// Run one subcommand; artifacts land in `out`.
pub fn run(command: Command, cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<Outcome, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Threads(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|source| CliError::Write { path: out.to_path_buf(), source })?;
    let mut w = Writer { out, outcome: Outcome::default() };
    pool.install(|| dispatch(command, cfg, &mut w))?;
    Ok(w.outcome)
}

pub fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out.clone().or_else(|| cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

struct Writer<'a> {
    out: &'a Path,
    outcome: Outcome,
}

impl Writer<'_> {
    fn file(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, text).map_err(|source| CliError::Write { path: path.clone(), source })?;
        self.outcome.files.push(path);
        Ok(())
    }

    fn say(&mut self, line: String) {
        self.outcome.summary.push(line);
    }
}

struct Setup {
    model: ModelDescriptor,
    basis: FourierBasis,
    eff: EffectiveData,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let model = cfg.model.build()?;
        let basis = FourierBasis::new(&model.spec.lattice, cfg.cutoff.unwrap_or(model.default_cutoff))?;
        let eff = EffectiveData::compute(&model.spec, &basis)?;
        Ok(Setup { model, basis, eff })
    }

    fn assembler(&self) -> Result<FiberAssembler, CliError> {
        Ok(FiberAssembler::new(&self.model.spec, &self.basis)?)
    }

    fn thetas(&self, cfg: &RunConfig) -> Vec<Vec<f64>> {
        thetas_for(self.model.spec.lattice.dim, cfg.theta_grid)
    }

    fn regime(&self, cfg: &RunConfig) -> Regime {
        classify(&self.model.spec, &self.eff, &self.thetas(cfg)).0.regime
    }

    /// The configured law, or the sharpest one the regime supports.
    fn law(&self, cfg: &RunConfig) -> Law {
        cfg.law.unwrap_or_else(|| match self.regime(cfg) {
            Regime::Enhanced1 | Regime::Enhanced2 => Law::Enhanced,
            _ => Law::General,
        })
    }
}

#[derive(Serialize)]
struct EffectiveDoc<'a> {
    model: &'a str,
    params: &'a std::collections::BTreeMap<String, f64>,
    #[serde(flatten)]
    report: bloch_homog::cell::EffectiveReport,
}

#[derive(Serialize)]
struct GermDoc<'a> {
    model: &'a str,
    classification: bloch_homog::germ::ClassificationReport,
    matrices: Vec<GermMatrices>,
}

fn dispatch(command: Command, cfg: &RunConfig, w: &mut Writer) -> Result<(), CliError> {
    if command == Command::Validate {
        return validate_cmd(cfg, w);
    }
    let st = Setup::new(cfg)?;
    let spec = &st.model.spec;
    let name = st.model.name.as_str();
    match command {
        Command::Effective => {
            let report = st.eff.report();
            w.say(format!("{name}: basis {} residual {:.3e}", report.basis_size, report.residual));
            w.file("effective.json", &to_json(&EffectiveDoc { model: name, params: &st.model.params, report }))?;
        }
        Command::Germ => {
            let (class, reports) = classify(spec, &st.eff, &st.thetas(cfg));
            let n = spec.n;
            let d = spec.lattice.dim;
            let mut header: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
            for key in ["gamma", "mu", "nu"] {
                header.extend((1..=n).map(|j| format!("{key}_{j}")));
            }
            header.extend(["n_norm", "n0_norm", "ambiguous"].map(String::from));
            let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
            for r in &reports {
                let row = GermRow::from(r);
                let mut cells: Vec<Cell> = row.theta.iter().map(|&x| x.into()).collect();
                for v in [&row.gammas, &row.mus, &row.nus] {
                    cells.extend(v.iter().map(|&x| Cell::from(x)));
                }
                cells.extend([row.n_norm.into(), row.n0_norm.into(), row.ambiguous.into()]);
                csv.row(cells);
            }
            w.say(format!("{name}: regime {} max|N| {:.3e} max|N0| {:.3e}", class.label, class.n_max, class.n0_max));
            w.file("germ.csv", &csv.finish())?;
            let matrices = reports.iter().map(GermMatrices::from).collect();
            w.file("classification.json", &to_json(&GermDoc { model: name, classification: class, matrices }))?;
        }
        Command::Bands => {
            let asm = st.assembler()?;
            let d = spec.lattice.dim;
            let thetas = if cfg.bands.thetas.is_empty() {
                vec![(0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()]
            } else {
                cfg.bands.thetas.clone()
            };
            let count = cfg.bands.count.unwrap_or(spec.n);
            let mut all = Vec::new();
            for (i, theta) in thetas.iter().enumerate() {
                if theta.len() != d {
                    return Err(Error::Dimension(format!("bands θ has {} entries, expected {d}", theta.len())).into());
                }
                let fits = fit_all(&asm, theta, count, &cfg.oracle)?;
                for f in &fits {
                    w.say(format!("{name}: θ#{i} band {} γ {:.10} μ {:.3e} ν {:.6}", f.l + 1, f.gamma, f.mu, f.nu));
                }
                let file = if thetas.len() == 1 { "bands.csv".to_string() } else { format!("bands_{i}.csv") };
                w.file(&file, &samples_csv(&fits))?;
                all.push(fits);
            }
            w.file("fits.json", &to_json(&all))?;
        }
        Command::Sweep => {
            let asm = st.assembler()?;
            let law = st.law(cfg);
            let eps_min = cfg.eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
            let grid = k_grid(spec, &cfg.k_grid, eps_min)?;
            let res = run_sweep(spec, &st.eff, &asm, &grid, &cfg.eps_list, &cfg.tau_list, cfg.s, law)?;
            w.say(format!(
                "{name}: law {:?} ε-slope {:.4} τ-exponent {:.4} constant {:.4e}",
                law, res.eps_slope, res.tau_exponent, res.constant_estimate
            ));
            w.file("sweep.csv", &sweep_csv(&res))?;
            w.file("sweep.json", &to_json(&res))?;
        }
        Command::Sharpness => {
            let asm = st.assembler()?;
            let regime = st.regime(cfg);
            let law = st.law(cfg);
            if law == Law::Enhanced && !matches!(regime, Regime::Enhanced1 | Regime::Enhanced2) {
                return Err(Error::Config(format!("enhanced probe requested but the regime is {}", regime.label())).into());
            }
            let theta0 = match &cfg.sharpness.theta0 {
                Some(t) => t.clone(),
                None => st.thetas(cfg).swap_remove(0),
            };
            let table = sharpness_probe(spec, &st.eff, &asm, &theta0, cfg.s, &cfg.sharpness.tau_list, law)?;
            w.say(format!("{name}: law {:?} constant {:.4e} ratio τ-slope {:.4}", law, table.fitted_constant, table.ratio_tau_slope));
            w.file("sharpness.csv", &probe_csv(&table))?;
            w.file("sharpness.json", &to_json(&table))?;
        }
        Command::Cauchy => {
            let asm = st.assembler()?;
            let law = st.law(cfg);
            let c = &cfg.cauchy;
            let bump = c.profile_for(spec.lattice.dim)?;
            let amp = c.amplitude_for(spec.n)?;
            let mut p = CauchyProblem::new(spec, &st.eff, &asm, bump, amp, c.s.unwrap_or(cfg.s), law)?;
            if c.normalize {
                p = p.normalized();
            }
            if let Some(fc) = c.fiber_cutoff {
                p = p.with_fiber_cutoff(fc)?;
            }
            if !c.forcing.is_empty() {
                p = p.with_forcing(c.forcing_pieces())?;
            }
            p.centering = c.centering.clone();
            p.quadrature = c.quadrature.clone();
            let table = match c.mode {
                CauchyMode::FixedTime => p.eps_table(c.tau, &c.eps_list)?,
                CauchyMode::LongTime => p.long_time_table(c.alpha, &c.eps_list)?,
            };
            w.say(format!("{name}: law {:?} slope {:.4} predicted {:.4}", law, table.fitted_slope, table.predicted_slope));
            w.file("cauchy.csv", &cauchy_csv(&table))?;
            w.file("cauchy.json", &to_json(&table))?;
        }
        Command::Validate => unreachable!(),
    }
    Ok(())
}

fn validate_cmd(cfg: &RunConfig, w: &mut Writer) -> Result<(), CliError> {
    let report = validate::run(&cfg.validate_options())?;
    for line in validate::summary_lines(&report) {
        w.say(line);
    }
    w.file("validate.csv", &report.csv())?;
    w.file("validate.json", &to_json(&report))?;
    if report.failures > 0 {
        return Err(CliError::ValidationFailed(report.failures));
    }
    Ok(())
}

fn probe_csv(t: &ProbeTable) -> String {
    let mut csv = Csv::new(&["tau", "eps", "t", "branch", "lambda", "phase_defect", "sup_norm", "ratio", "lower_bound"]);
    for r in &t.rows {
        csv.row(vec![
            r.tau.into(),
            r.eps.into(),
            r.t.into(),
            r.branch.into(),
            r.lambda.into(),
            r.phase_defect.into(),
            r.sup_norm.into(),
            r.ratio.into(),
            r.lower_bound.into(),
        ]);
    }
    csv.finish()
}
