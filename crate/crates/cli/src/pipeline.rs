//! Scenario pipeline: graph check, weight, spectrum, runs, and serialization.

use std::path::{Path, PathBuf};
use std::time::Instant;

use consensus_core::dynamics::{
    consensus_distance, discrete_step_matrix, euler_gamma, fit_contraction, fit_decay,
    integrate_rk4, iterate_discrete, run_per_cluster, subdominant_radius, ControlSpec,
    DecayFit, LyapunovMonitor, Perturbation, Trajectory,
};
use consensus_core::graph::{analyze_graph, require_strong_connectivity, DiGraphSummary};
use consensus_core::kernel::{constant_s_check, refinement_study};
use consensus_core::operator::{assemble_generator, compute_weight, weighted_mean, Weight};
use consensus_core::spectral::{full_spectrum, SpectralReport};
use log::{info, warn};
use serde_json::Value;

use crate::config::{Control, Format, LoadedConfig, Source};
use crate::error::{CliError, InModule};
use crate::output::{thin_indices, write_json, write_table_csv, write_trajectory_csv, JsonObject};
use crate::scenario::{self, Scenario, RNG_NAME};
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Graph, weight and spectrum only.
    Analyze,
    /// Full pipeline with RK4 integration and decay fit.
    Simulate,
    /// Explicit Euler iteration `y <- dt Gamma y`.
    Discrete,
    /// Kernel discretization and grid refinement.
    Kernel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Discrete => "discrete",
            Command::Kernel => "kernel",
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub formats: Option<Vec<Format>>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    /// Switches the control to `u = -alpha pi y`.
    pub alpha: Option<f64>,
    /// Write the wall-clock runtime into the summary. Off by default so that
    /// reruns stay byte-identical.
    pub record_runtime: bool,
}

impl Overrides {
    pub fn apply(&self, config: &mut LoadedConfig) -> Result<(), CliError> {
        let c = &mut config.config;
        if let Some(seed) = self.seed {
            c.scenario.seed = seed;
        }
        if let Some(out) = &self.out {
            c.output.dir = Some(out.clone());
        }
        if let Some(formats) = &self.formats {
            c.output.formats = formats.clone();
        }
        if let Some(dt) = self.dt {
            c.integration.dt = Some(dt);
            c.discrete.dt = Some(dt);
        }
        if let Some(t_end) = self.t_end {
            c.integration.t_end = Some(t_end);
        }
        if let Some(alpha) = self.alpha {
            c.control = Control::JurdjevicQuinn { alpha };
        }
        config.validate()
    }
}

/// Everything a run produces before it touches the file system.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub summary: Value,
    pub n: usize,
    pub trajectory: Option<Trajectory>,
    /// Per-class runs of a graph split into closed classes.
    pub class_trajectories: Vec<Trajectory>,
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

fn source_kind(source: &Source) -> &'static str {
    match source {
        Source::FullyConnected { .. } => "fully_connected",
        Source::Ring { .. } => "ring",
        Source::Blocks { .. } => "blocks",
        Source::Kernel { .. } => "kernel",
        Source::MatrixFile { .. } => "matrix_file",
    }
}

fn header(config: &LoadedConfig, command: Command, n: usize) -> JsonObject {
    let c = &config.config;
    let mut obj = JsonObject::new();
    obj.put("scenario", c.scenario.name.clone())
        .put("command", command.name())
        .put("seed", c.scenario.seed)
        .put("rng", RNG_NAME)
        .put("source", source_kind(&c.source))
        .put("n", n as u64)
        .put("runtime", Value::Null);
    obj
}

fn put_graph(obj: &mut JsonObject, g: &DiGraphSummary) {
    obj.put("is_strongly_connected", g.is_strongly_connected)
        .put("component_count", g.component_count as u64)
        .put("closed_class_count", g.closed_classes.len() as u64);
}

fn put_weight(obj: &mut JsonObject, w: &Weight) -> Result<(), CliError> {
    obj.nums("v", w.vector().iter())?
        .num("v_min", w.min())?
        .num("v_max", w.max())?;
    Ok(())
}

fn complex(obj: &JsonObject, key: &str, re: f64, im: f64) -> Result<Value, CliError> {
    let mut c = obj.child(key);
    c.num("re", re)?.num("im", im)?;
    Ok(c.build())
}

fn put_spectrum(obj: &mut JsonObject, r: &SpectralReport, with_eigenvalues: bool) -> Result<(), CliError> {
    obj.num("s_A2", r.spectral_bound_a2)?;
    let l2 = complex(obj, "lambda2", r.lambda2.re, r.lambda2.im)?;
    obj.put("lambda2", l2)
        .opt("fiedler", r.fiedler)?
        .put("gershgorin_ok", r.gershgorin_ok);
    if with_eigenvalues {
        let list = r
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, z)| complex(obj, &format!("eigenvalues[{k}]"), z.re, z.im))
            .collect::<Result<Vec<_>, _>>()?;
        obj.put("eigenvalues", list);
    }
    Ok(())
}

fn put_fit(obj: &mut JsonObject, fit: Option<&DecayFit>) -> Result<(), CliError> {
    obj.opt("fitted_slope", fit.map(|f| f.slope))?
        .opt("predicted_slope", fit.and_then(|f| f.predicted))?
        .opt("relative_gap", fit.and_then(|f| f.relative_gap))?;
    match fit {
        Some(f) => {
            obj.nums("fit_window", [f.window.0, f.window.1].iter())?
                .put("fit_envelope", f.envelope)
                .put("fit_samples", f.samples as u64)
                .put("underflow_truncated", f.underflow_truncated);
        }
        None => {
            obj.put("fit_window", Value::Null);
        }
    }
    Ok(())
}

fn horizon(config: &LoadedConfig) -> Result<(f64, f64), CliError> {
    let i = &config.config.integration;
    let need = |field: &str, flag: &str| {
        CliError::config(
            &config.origin,
            format!("`{field}` is required for this command (or pass {flag})"),
        )
    };
    let dt = i.dt.ok_or_else(|| need("integration.dt", "--dt"))?;
    let t_end = i.t_end.ok_or_else(|| need("integration.t_end", "--t-end"))?;
    Ok((dt, t_end))
}

fn control_spec(control: &Control) -> ControlSpec {
    match *control {
        Control::None => ControlSpec::None,
        Control::JurdjevicQuinn { alpha } => ControlSpec::JurdjevicQuinn { alpha },
        Control::CubicDamping { beta } => ControlSpec::Nonlinear(Perturbation::CubicDamping { beta }),
    }
}

fn put_control(obj: &mut JsonObject, control: &Control) -> Result<(), CliError> {
    let mut c = obj.child("control");
    match *control {
        Control::None => {
            c.put("kind", "none");
        }
        Control::JurdjevicQuinn { alpha } => {
            c.put("kind", "jurdjevic_quinn").num("alpha", alpha)?;
        }
        Control::CubicDamping { beta } => {
            c.put("kind", "cubic_damping").num("beta", beta)?;
        }
    }
    let built = c.build();
    obj.put("control", built);
    Ok(())
}

/// Graph split into closed classes, or the connectivity error when some
/// class still listens to another.
fn closed_classes_only(g: &DiGraphSummary) -> Result<(), CliError> {
    if g.closed_classes.len() == g.component_count {
        Ok(())
    } else {
        require_strong_connectivity(g).in_module("graph")
    }
}

pub fn execute(command: Command, config: &LoadedConfig) -> Result<Artifacts, CliError> {
    let scenario = scenario::build(config)?;
    info!(
        "{}: {} agents, seed {}",
        config.config.scenario.name,
        scenario.sigma.n(),
        config.config.scenario.seed
    );
    match command {
        Command::Analyze => analyze(config, &scenario),
        Command::Simulate => simulate(config, &scenario),
        Command::Discrete => discrete(config, &scenario),
        Command::Kernel => kernel(config, &scenario),
    }
}

fn graph_of(config: &LoadedConfig, s: &Scenario) -> Result<DiGraphSummary, CliError> {
    analyze_graph(s.sigma.matrix(), config.config.scenario.tolerance_zero).in_module("graph")
}

fn analyze(config: &LoadedConfig, s: &Scenario) -> Result<Artifacts, CliError> {
    let n = s.sigma.n();
    let g = graph_of(config, s)?;
    let mut obj = header(config, Command::Analyze, n);
    put_graph(&mut obj, &g);
    if g.is_strongly_connected {
        let gen = assemble_generator(&s.sigma);
        let w = compute_weight(&gen).in_module("operator")?;
        let report = full_spectrum(&gen).in_module("spectral")?;
        put_weight(&mut obj, &w)?;
        obj.num("weight_residual", w.residual())?
            .num("consensus_value", weighted_mean(&s.y_in, &w).in_module("operator")?)?;
        put_spectrum(&mut obj, &report, true)?;
        if config.config.integration.var_p {
            let m = LyapunovMonitor::build(&gen, &w).in_module("spectral")?;
            let mut c = obj.child("lyapunov");
            c.num("residual", m.certificate.residual)?
                .num("min_eig_p", m.certificate.min_eig_p)?
                .num("lambda_max_p", m.certificate.lambda_max)?;
            let built = c.build();
            obj.put("lyapunov", built);
        }
    } else {
        closed_classes_only(&g)?;
        let mut classes = Vec::new();
        for (k, members) in g.components().into_iter().enumerate() {
            let mut c = obj.child(&format!("classes[{k}]"));
            c.put("members", members.iter().map(|&i| i as u64 + 1).collect::<Vec<_>>());
            let block = s.sigma.restrict(&members).in_module("operator")?;
            let y = nalgebra::DVector::from_iterator(members.len(), members.iter().map(|&i| s.y_in[i]));
            if members.len() == 1 {
                put_weight(&mut c, &Weight::uniform(1))?;
                c.num("consensus_value", y[0])?.put("s_A2", Value::Null);
            } else {
                let gen = assemble_generator(&block);
                let w = compute_weight(&gen).in_module("operator")?;
                put_weight(&mut c, &w)?;
                c.num("consensus_value", weighted_mean(&y, &w).in_module("operator")?)?;
                put_spectrum(&mut c, &full_spectrum(&gen).in_module("spectral")?, true)?;
            }
            classes.push(c.build());
        }
        obj.put("classes", classes);
    }
    Ok(Artifacts {
        summary: obj.build(),
        n,
        trajectory: None,
        class_trajectories: Vec::new(),
        tables: Vec::new(),
    })
}

fn simulate(config: &LoadedConfig, s: &Scenario) -> Result<Artifacts, CliError> {
    let c = &config.config;
    let n = s.sigma.n();
    let (dt, t_end) = horizon(config)?;
    let g = graph_of(config, s)?;
    let mut obj = header(config, Command::Simulate, n);
    put_graph(&mut obj, &g);
    put_control(&mut obj, &c.control)?;
    obj.num("dt", dt)?.num("t_end", t_end)?;

    if !g.is_strongly_connected {
        closed_classes_only(&g)?;
        if !matches!(c.control, Control::None) {
            return Err(CliError::config(
                &config.origin,
                "`control`: feedback needs a strongly connected graph; runs split into classes are uncontrolled",
            ));
        }
        info!("{} closed classes, running each on its own", g.component_count);
        let run = run_per_cluster(&s.sigma, &s.y_in, dt, t_end, c.scenario.tolerance_zero).in_module("dynamics")?;
        put_weight(&mut obj, &run.weight)?;
        obj.put("consensus_value", Value::Null).put("s_A2", Value::Null);
        put_fit(&mut obj, None)?;
        let mut classes = Vec::new();
        for (k, class) in run.classes.iter().enumerate() {
            let mut co = obj.child(&format!("classes[{k}]"));
            co.put("members", class.members.iter().map(|&i| i as u64 + 1).collect::<Vec<_>>());
            put_weight(&mut co, &class.weight)?;
            co.num("consensus_value", class.consensus)?;
            match &class.spectrum {
                Some(r) => put_spectrum(&mut co, r, false)?,
                None => {
                    co.put("s_A2", Value::Null);
                }
            }
            put_fit(&mut co, class.fit.as_ref())?;
            let last = class.trajectory.monitors.last().expect("nonempty run");
            co.num("final_weighted_mean", last.weighted_mean)?.num("final_var_v", last.var_v)?;
            classes.push(co.build());
        }
        obj.put("classes", classes);
        let last = run.trajectory.monitors.last().expect("nonempty run");
        obj.num("final_var_v", last.var_v)?
            .put("steps", run.trajectory.len() as u64 - 1);
        return Ok(Artifacts {
            summary: obj.build(),
            n,
            class_trajectories: run.classes.into_iter().map(|c| c.trajectory).collect(),
            trajectory: Some(run.trajectory),
            tables: Vec::new(),
        });
    }

    let gen = assemble_generator(&s.sigma);
    let w = compute_weight(&gen).in_module("operator")?;
    let report = full_spectrum(&gen).in_module("spectral")?;
    let monitor = if c.integration.var_p {
        Some(LyapunovMonitor::build(&gen, &w).in_module("spectral")?)
    } else {
        None
    };
    let control = control_spec(&c.control);
    let traj = integrate_rk4(&gen, &s.y_in, dt, t_end, &w, &control, monitor.as_ref()).in_module("dynamics")?;

    let alpha = match c.control {
        Control::JurdjevicQuinn { alpha } => alpha,
        _ => 0.0,
    };
    let target = report.lambda2 - alpha;
    let fit = match fit_decay(&traj, c.integration.window_fraction, Some(target)) {
        Ok(fit) => Some(fit),
        Err(e) => {
            warn!("decay fit skipped: {e}");
            None
        }
    };

    put_weight(&mut obj, &w)?;
    obj.num("weight_residual", w.residual())?
        .num("consensus_value", weighted_mean(&s.y_in, &w).in_module("operator")?)?;
    put_spectrum(&mut obj, &report, false)?;
    obj.num("closed_loop_bound", report.spectral_bound_a2 - alpha)?;
    put_fit(&mut obj, fit.as_ref())?;
    if let Some(m) = &monitor {
        let mut l = obj.child("lyapunov");
        l.num("residual", m.certificate.residual)?
            .num("min_eig_p", m.certificate.min_eig_p)?
            .num("lambda_max_p", m.certificate.lambda_max)?;
        let built = l.build();
        obj.put("lyapunov", built);
    }
    let first = &traj.monitors[0];
    let last = traj.monitors.last().expect("nonempty run");
    obj.num("final_var_v", last.var_v)?
        .num("mean_drift", (last.weighted_mean - first.weighted_mean).abs())?
        .put("steps", traj.len() as u64 - 1);
    Ok(Artifacts {
        summary: obj.build(),
        n,
        trajectory: Some(traj),
        class_trajectories: Vec::new(),
        tables: Vec::new(),
    })
}

fn discrete(config: &LoadedConfig, s: &Scenario) -> Result<Artifacts, CliError> {
    let c = &config.config;
    let n = s.sigma.n();
    let g = graph_of(config, s)?;
    require_strong_connectivity(&g).in_module("graph")?;
    let gen = assemble_generator(&s.sigma);
    let max_s = gen.row_sums().max();
    let dt = c.discrete.dt.unwrap_or(1.0 / max_s);
    let gamma = euler_gamma(&s.sigma, dt).in_module("dynamics")?;
    let step = discrete_step_matrix(&gamma, dt).in_module("dynamics")?;
    let w = compute_weight(&gen).in_module("operator")?;
    let traj = iterate_discrete(&gamma, dt, &s.y_in, c.discrete.steps, &w).in_module("dynamics")?;
    let rho = subdominant_radius(&step).in_module("dynamics")?;
    let fit = fit_contraction(&traj, &w, rho).in_module("dynamics")?;
    let errors = traj
        .states
        .iter()
        .map(|y| consensus_distance(y, &w))
        .collect::<consensus_core::Result<Vec<_>>>()
        .in_module("dynamics")?;

    let mut obj = header(config, Command::Discrete, n);
    put_graph(&mut obj, &g);
    put_weight(&mut obj, &w)?;
    obj.num("consensus_value", weighted_mean(&s.y_in, &w).in_module("operator")?)?
        .num("dt", dt)?
        .put("steps", c.discrete.steps as u64)
        .num("stability_product", max_s * dt)?
        .num("rho_star", rho)?
        .num("contraction_m", fit.m)?
        .num("per_step_rate", fit.per_step)?
        .put("usable_steps", fit.usable as u64)
        .num("worst_bound_ratio", fit.worst_ratio(&errors))?
        .num("final_distance", *errors.last().expect("nonempty run"))?;
    Ok(Artifacts {
        summary: obj.build(),
        n,
        trajectory: Some(traj),
        class_trajectories: Vec::new(),
        tables: Vec::new(),
    })
}

fn kernel(config: &LoadedConfig, s: &Scenario) -> Result<Artifacts, CliError> {
    let c = &config.config;
    let Source::Kernel { name, param, dimension, .. } = &c.source else {
        return Err(CliError::config(&config.origin, "`source.kind`: the kernel command needs kind = \"kernel\""));
    };
    let grid = s.grid.as_ref().expect("kernel source carries its grid");
    let n = s.sigma.n();
    let gen = assemble_generator(&s.sigma);
    let w = compute_weight(&gen).in_module("operator")?;
    let report = full_spectrum(&gen).in_module("spectral")?;
    let check = constant_s_check(grid).in_module("kernel")?;
    let kernel = scenario::kernel_from_name(name, *param, &config.origin)?;
    let rows = refinement_study(&kernel, &c.kernel.n_list, |x| x[0]).in_module("kernel")?;

    let mut obj = header(config, Command::Kernel, n);
    obj.put("kernel", name.clone())
        .opt("kernel_param", *param)?
        .put("dimension", *dimension as u64)
        .num("delta_hat", grid.delta_hat)?
        .num("s_max", grid.s_values.max())?
        .num("essential_bound", grid.essential_bound())?;
    put_weight(&mut obj, &w)?;
    obj.num("consensus_value", weighted_mean(&s.y_in, &w).in_module("operator")?)?;
    put_spectrum(&mut obj, &report, false)?;

    let mut cs = obj.child("constant_s");
    cs.put("applicable", check.applicable)
        .put("passed", check.passed)
        .num("s_spread", check.s_spread)?
        .num("delta", check.delta)?
        .opt("mismatch", check.mismatch)?
        .put("note", check.note.clone());
    let built = cs.build();
    obj.put("constant_s", built);

    let mut refinement = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let mut ro = obj.child(&format!("refinement[{k}]"));
        ro.put("n", r.n as u64)
            .num("consensus", r.consensus)?
            .num("s_A2", r.s_a2)?
            .num("delta_hat", r.delta_hat)?;
        refinement.push(ro.build());
    }
    obj.put("refinement", refinement).put("refinement_initial", "y(x) = x_1");
    Ok(Artifacts {
        summary: obj.build(),
        n,
        trajectory: None,
        class_trajectories: Vec::new(),
        tables: vec![Table {
            name: "refinement".into(),
            header: vec!["n", "consensus", "s_A2", "delta_hat"],
            rows: rows
                .iter()
                .map(|r| vec![r.n as f64, r.consensus, r.s_a2, r.delta_hat])
                .collect(),
        }],
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes the requested formats into `dir` and returns the files written.
pub fn emit(artifacts: &Artifacts, dir: &Path, formats: &[Format], max_rows: usize, title: &str) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    let wants = |f: Format| formats.contains(&f);
    if wants(Format::Csv) {
        if let Some(traj) = &artifacts.trajectory {
            let path = dir.join("trajectory.csv");
            write_trajectory_csv(&path, traj, artifacts.n, &thin_indices(traj.len(), max_rows))?;
            written.push(path);
        }
        for (k, traj) in artifacts.class_trajectories.iter().enumerate() {
            let path = dir.join(format!("class_{}.csv", k + 1));
            write_trajectory_csv(&path, traj, traj.n_agents(), &thin_indices(traj.len(), max_rows))?;
            written.push(path);
        }
        for table in &artifacts.tables {
            let path = dir.join(format!("{}.csv", table.name));
            write_table_csv(&path, &table.header, &table.rows)?;
            written.push(path);
        }
    }
    if wants(Format::Json) {
        let path = dir.join("summary.json");
        write_json(&path, &artifacts.summary)?;
        written.push(path);
    }
    if wants(Format::Svg) {
        if let Some(traj) = &artifacts.trajectory {
            let idx = thin_indices(traj.len(), max_rows);
            let path = dir.join("states.svg");
            write_text(&path, &svg::states_plot(&format!("{title}: states"), traj, &idx))?;
            written.push(path);
            let path = dir.join("variance.svg");
            write_text(&path, &svg::variance_plot(&format!("{title}: variance"), traj, &idx))?;
            written.push(path);
        }
        for table in &artifacts.tables {
            let series: Vec<svg::Series> = (1..table.header.len())
                .map(|col| svg::Series {
                    label: table.header[col].to_string(),
                    points: table.rows.iter().map(|r| (r[0].log2(), r[col])).collect(),
                    color: ["#1f4e9c", "#b3431b", "#2c7a3f"][(col - 1) % 3].into(),
                })
                .collect();
            let path = dir.join(format!("{}.svg", table.name));
            write_text(&path, &svg::line_plot(&format!("{title}: {}", table.name), "log2 N", "value", &series))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Builds, runs and writes one scenario.
pub fn run_scenario(
    command: Command,
    mut config: LoadedConfig,
    overrides: &Overrides,
) -> Result<(Artifacts, Vec<PathBuf>), CliError> {
    overrides.apply(&mut config)?;
    let start = Instant::now();
    let mut artifacts = execute(command, &config)?;
    if overrides.record_runtime {
        if let Value::Object(map) = &mut artifacts.summary {
            map.insert("runtime".into(), Value::from(start.elapsed().as_secs_f64()));
        }
    }
    let c = &config.config;
    let written = emit(
        &artifacts,
        &config.out_dir(),
        &c.output.formats,
        c.output.max_rows,
        &c.scenario.name,
    )?;
    Ok((artifacts, written))
}

/// Runs `simulate` for every config concurrently, each into
/// `out_root/<name>` (or its own configured directory without a root).
pub fn run_batch(
    configs: Vec<LoadedConfig>,
    out_root: Option<&Path>,
    overrides: &Overrides,
) -> Vec<(String, Result<Vec<PathBuf>, CliError>)> {
    let mut names: Vec<&str> = configs.iter().map(|c| c.config.scenario.name.as_str()).collect();
    names.sort_unstable();
    if let Some(dup) = names.windows(2).find(|w| w[0] == w[1]) {
        let name = dup[0].to_string();
        return vec![(
            name.clone(),
            Err(CliError::config("batch", format!("scenario name `{name}` appears twice"))),
        )];
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .into_iter()
            .map(|config| {
                let name = config.config.scenario.name.clone();
                let mut own = overrides.clone();
                if let Some(root) = out_root {
                    own.out = Some(root.join(&name));
                }
                let handle = scope.spawn(move || run_scenario(Command::Simulate, config, &own).map(|(_, files)| files));
                (name, handle)
            })
            .collect();
        handles
            .into_iter()
            .map(|(name, h)| (name, h.join().expect("scenario thread panicked")))
            .collect()
    })
}
