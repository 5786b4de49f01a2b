//! `dualem` command-line front end.
//!
//! Exit codes: 0 success, 1 a validation check failed, 2 solver or
//! configuration error, 64 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use dualem::circuit::{solve_simultaneous, CapacitiveCoupling};
use dualem::electrostatic::{ElectrostaticSolver, PotentialAssignment};
use dualem::inductive::solve_pair;
use dualem::output::{self, num, Provenance};
use dualem::scenarios::{run_scenario, ScenarioKind};
use dualem::sensor::Excitation;
use dualem::validate::run_oracle_suite;
use dualem::{Error, RunConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "dualem",
    version,
    about = "Forward models for a dual inductive/capacitive planar sensor"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "dualem-out")]
    out: PathBuf,
    /// Override a configuration value, e.g. `--set geometry.n1=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Also write SVG plots where available.
    #[arg(long, global = true)]
    plot: bool,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Free-space mutual inductance, plate-induced change and voltage per frequency.
    Inductive,
    /// Capacitance matrix, potential field and sensitivity map.
    Capacitive,
    /// Netlist solve, or the simultaneous-mode network when no netlist is configured.
    Circuit,
    /// Run one experiment sweep.
    Scenario {
        /// plastic_stack, water_immersion, copper_stack, copper_plus_plastic or water_plus_ferrite
        name: String,
    },
    /// Run the oracle cross-checks and print a pass/fail table.
    Validate,
    /// Print the effective configuration (defaults, file and overrides) as TOML.
    Config,
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    plot: bool,
    quiet: bool,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn provenance(&self, generator: &str) -> Provenance {
        let q = self.cfg.quadrature_spec();
        let e = &self.cfg.electrostatic;
        Provenance {
            generator: format!("dualem {} {generator}", env!("CARGO_PKG_VERSION")),
            config_hash: self.cfg.hash(),
            solver_settings: vec![
                ("alpha_max".into(), format!("{:e}", q.alpha_max)),
                ("alpha_points".into(), q.alpha_points.to_string()),
                ("quadrature_rel_tol".into(), format!("{:e}", q.rel_tol)),
                ("grid_cell".into(), format!("{:e}", e.grid.cell)),
                ("cg_rel_tol".into(), format!("{:e}", e.solver.rel_tol)),
                (
                    "extrusion_length".into(),
                    format!("{:e}", e.extrusion_length),
                ),
            ],
            estimate_flags: self.cfg.estimate_flags(),
            extra: Vec::new(),
        }
    }

    fn write(&self, name: &str, contents: &str) -> dualem::Result<()> {
        let path = self.out.join(name);
        output::write_file(&path, contents)?;
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }
}

fn load_config(common: &Common) -> dualem::Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path, &common.overrides),
        None => RunConfig::from_toml("", &common.overrides),
    }
}

fn configure_threads() -> dualem::Result<()> {
    let Ok(raw) = std::env::var("DUALEM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Error::Config(format!(
            "DUALEM_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

fn inductive(ctx: &Context) -> dualem::Result<()> {
    let cfg = &ctx.cfg;
    let q = cfg.quadrature_spec();
    let plate = cfg.inductive.plate;
    let mut rows = Vec::new();
    for &f in &cfg.inductive.frequencies {
        let exc = Excitation::current(f, Complex64::new(cfg.circuit.drive_current, 0.0));
        let s = solve_pair(&cfg.geometry, Some(&plate), exc.omega(), &q)?;
        let v = dualem::inductive::induced_voltage(&s.total(), &exc)?;
        ctx.say(format!(
            "f = {f:e} Hz: M = {:.6e} H, dL = {:.6e} {:+.6e}i H",
            s.free_space, s.delta.re, s.delta.im
        ));
        rows.push(vec![
            num(f),
            num(s.free_space),
            num(s.delta.re),
            num(s.delta.im),
            num(v.re),
            num(v.im),
        ]);
    }
    let mut prov = ctx.provenance("inductive");
    prov.extra.push((
        "plate".into(),
        format!(
            "sigma={:e} mu_r={} thickness={:e} liftoff={:e}",
            plate.sigma, plate.mu_r, plate.thickness, plate.liftoff
        ),
    ));
    let csv = output::table_csv(
        &[
            "frequency_Hz",
            "M_free_H",
            "re_dL_H",
            "im_dL_H",
            "re_V",
            "im_V",
        ],
        &rows,
        &prov,
    )?;
    ctx.write("inductive.csv", &csv)
}

fn capacitive(ctx: &Context) -> dualem::Result<()> {
    let model = ctx.cfg.capacitive_model();
    let solver = ElectrostaticSolver::new(&model)?;
    let matrix = solver.capacitance_matrix()?;
    if let Some(w) = &matrix.warning {
        eprintln!("warning: {w}");
    }
    let aggregate = solver.aggregate_coupling()?;
    ctx.say(format!(
        "aggregate transmitter-receiver coupling: {aggregate:.6e} F"
    ));
    let (i, j, c) = matrix.largest_cross_pair();
    ctx.say(format!(
        "largest pair: {}-{} {c:.6e} F",
        matrix.names[i], matrix.names[j]
    ));
    let mut prov = ctx.provenance("capacitive");
    prov.extra
        .push(("aggregate_coupling_F".into(), num(aggregate)));
    prov.extra
        .push(("raw_asymmetry".into(), num(matrix.raw_asymmetry)));
    ctx.write(
        "capacitance_matrix.csv",
        &output::capacitance_matrix_csv(&matrix, &prov)?,
    )?;
    let field = solver.solve_potential(&PotentialAssignment::excitation_ramp(
        &model,
        dualem::electrostatic::ReceiverDrive::Uniform(0.0),
    ))?;
    ctx.write(
        "field.csv",
        &output::field_csv(&field, &ctx.provenance("capacitive field"))?,
    )?;
    let s = solver.sensitivity_map()?;
    ctx.say(format!(
        "sensitivity peak column at x = {:.3} mm",
        s.peak_column_x() * 1e3
    ));
    ctx.write(
        "sensitivity.csv",
        &output::sensitivity_csv(&s, &ctx.provenance("capacitive sensitivity"))?,
    )
}

fn circuit(ctx: &Context) -> dualem::Result<()> {
    let cfg = &ctx.cfg;
    if let Some(netlist) = &cfg.netlist {
        let net = netlist.build()?;
        let omega = 2.0 * std::f64::consts::PI * netlist.frequency;
        let s = net.solve(omega)?;
        let probes: Vec<String> = if netlist.probes.is_empty() {
            s.node_names.iter().skip(1).cloned().collect()
        } else {
            netlist.probes.clone()
        };
        let mut rows = Vec::new();
        for p in &probes {
            let v = s.voltage(p)?;
            ctx.say(format!("V({p}) = {:.6e} {:+.6e}i V", v.re, v.im));
            rows.push(vec![
                num(netlist.frequency),
                p.clone(),
                num(v.re),
                num(v.im),
            ]);
        }
        let csv = output::table_csv(
            &["frequency_Hz", "node", "re_V", "im_V"],
            &rows,
            &ctx.provenance("circuit netlist"),
        )?;
        return ctx.write("circuit.csv", &csv);
    }
    let q = cfg.quadrature_spec();
    let m = solve_pair(&cfg.geometry, None, 0.0, &q)?.free_space;
    let c = ElectrostaticSolver::new(&cfg.electrostatic.model())?.receiver_segment_couplings()?;
    let mut per = [0.0; 6];
    if c.len() != 6 {
        return Err(Error::Model(format!(
            "simultaneous network needs six receiver segments, got {}",
            c.len()
        )));
    }
    for (k, (_, v)) in c.iter().enumerate() {
        per[k] = *v;
    }
    let mut rows = Vec::new();
    for &f in &cfg.inductive.frequencies {
        let p = cfg.circuit.simultaneous(
            Complex64::new(m, 0.0),
            CapacitiveCoupling::PerSegment(per),
            f,
        );
        let r = solve_simultaneous(&p)?.readout;
        ctx.say(format!(
            "f = {f:e} Hz: v_diff = {:.6e} {:+.6e}i V, v_common = {:.6e} {:+.6e}i V, C_m = {:.6e} F",
            r.v_diff.re, r.v_diff.im, r.v_common.re, r.v_common.im, r.c_m
        ));
        rows.push(vec![
            num(f),
            num(r.v_diff.re),
            num(r.v_diff.im),
            num(r.v_common.re),
            num(r.v_common.im),
            num(r.c_m),
        ]);
    }
    let csv = output::table_csv(
        &[
            "frequency_Hz",
            "re_V_diff",
            "im_V_diff",
            "re_V_common",
            "im_V_common",
            "C_m_F",
        ],
        &rows,
        &ctx.provenance("circuit simultaneous"),
    )?;
    ctx.write("circuit.csv", &csv)
}

fn scenario(ctx: &Context, name: &str) -> dualem::Result<()> {
    let kind: ScenarioKind = name.parse()?;
    let r = run_scenario(kind, &ctx.cfg)?;
    for p in &r.points {
        let parts: Vec<String> = p
            .readings
            .iter()
            .map(|x| format!("{} {:.4}", x.channel.name(), x.normalized))
            .collect();
        let cm = p
            .c_m
            .map(|c| format!(", C_m {c:.4e} F"))
            .unwrap_or_default();
        ctx.say(format!(
            "{} = {}: {}{cm}",
            r.sweep_label,
            p.sweep_value,
            parts.join(", ")
        ));
    }
    ctx.write(&format!("{kind}.csv"), &output::scenario_csv(&r)?)?;
    if ctx.plot {
        ctx.write(&format!("{kind}.svg"), &output::scenario_svg(&r))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), (u8, String)> {
    let fail = |e: Error| (EXIT_ERROR, e.to_string());
    configure_threads().map_err(fail)?;
    let cfg = load_config(&cli.common).map_err(fail)?;
    let ctx = Context {
        cfg,
        out: cli.common.out,
        plot: cli.common.plot,
        quiet: cli.common.quiet,
    };
    match cli.command {
        Command::Inductive => inductive(&ctx).map_err(fail),
        Command::Capacitive => capacitive(&ctx).map_err(fail),
        Command::Circuit => circuit(&ctx).map_err(fail),
        Command::Scenario { name } => match name.parse::<ScenarioKind>() {
            Ok(_) => scenario(&ctx, &name).map_err(fail),
            Err(e) => Err((EXIT_USAGE, e.to_string())),
        },
        Command::Config => {
            print!("{}", ctx.cfg.to_toml());
            Ok(())
        }
        Command::Validate => {
            let t = run_oracle_suite(&ctx.cfg).map_err(fail)?;
            // The table is the command's result, so it prints even with --quiet.
            print!("{}", t.render());
            if t.all_passed() {
                Ok(())
            } else {
                Err((EXIT_VALIDATION, "one or more oracle checks failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
