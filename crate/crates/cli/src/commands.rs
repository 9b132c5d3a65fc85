use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;

use platoon_core::analysis::{self, block_spectrum_union_check, build_closed_loop_with, is_hurwitz, spectrum_csv};
use platoon_core::config::{AnalysisSettings, Config, GridAxis};
use platoon_core::control::{certify_gains, synthesize_kv, ControlError, GainVector};
use platoon_core::simulation::{
    compute_metrics, metrics_csv, plot_script, run, siso_trajectory, trajectory_csv, PlantMode, PlotPane, SimConfig,
};
use platoon_core::topology::{build_named, coupling_spectrum, Topology, TopologyKind};

use crate::exit::{CmdResult, Failure, Status};

/// Inputs shared by every command.
pub struct Common {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<Config, Failure> {
        let cfg = match &self.config {
            Some(p) => Config::load(p, &self.overrides)?,
            None => Config::from_overrides(&self.overrides)?,
        };
        debug!("loaded {} scenario(s)", cfg.scenarios.len());
        Ok(cfg)
    }
}

/// Records what produced the files in an output directory.
struct RunManifest {
    dir: PathBuf,
    command: &'static str,
    outputs: Vec<String>,
}

impl RunManifest {
    /// Creates the output directory before anything is written to it.
    fn create(dir: &Path, command: &'static str) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::bad_input(format!("cannot create '{}': {e}", dir.display())))?;
        Ok(RunManifest {
            dir: dir.to_path_buf(),
            command,
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf, Failure> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(rel.to_string());
        Ok(p)
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<(), Failure> {
        let p = self.path(rel)?;
        fs::write(p, contents)?;
        Ok(())
    }

    fn finish(self, common: &Common) -> Result<(), Failure> {
        let mut m = String::new();
        let _ = writeln!(m, "command={}", self.command);
        let config = common
            .config
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "(built-in defaults)".into());
        let _ = writeln!(m, "config={config}");
        for o in &common.overrides {
            let _ = writeln!(m, "override={o}");
        }
        let _ = writeln!(m, "out={}", self.dir.display());
        let _ = writeln!(m, "version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(
            m,
            "determinism=no random numbers are drawn; identical inputs give byte-identical CSV files"
        );
        for o in &self.outputs {
            let _ = writeln!(m, "output={o}");
        }
        fs::write(self.dir.join("manifest.txt"), m)?;
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round())
    } else {
        let s = format!("{x:.6}");
        s.trim_end_matches('0').to_string()
    }
}

/// `1 (×9)`-style list of eigenvalues, equal values grouped.
fn grouped_eigenvalues(values: &[f64]) -> String {
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        match groups.last_mut() {
            Some((g, count)) if (v - *g).abs() <= 1e-9 * g.abs().max(1.0) => *count += 1,
            _ => groups.push((v, 1)),
        }
    }
    groups
        .iter()
        .map(|(v, c)| {
            if *c > 1 {
                format!("{} (×{c})", fmt_num(*v))
            } else {
                fmt_num(*v)
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn topo(common: &Common, kind: &str, n: usize, range: Option<usize>) -> CmdResult {
    let kind: TopologyKind = kind.parse()?;
    if kind == TopologyKind::Custom {
        return Err(Failure::bad_input("custom topologies are read from a file, not built"));
    }
    let r = range.unwrap_or(kind.reference_range());
    let topo = build_named(kind, n, if kind.is_generalized() { r } else { 1 })?;
    let spec = coupling_spectrum(&topo)?;
    println!("kind {kind}, N = {n}, r = {}", topo.range());
    println!("lambda_min = {:.12}", spec.min_eig);
    println!("lambda_max = {:.12}", spec.max_eig);
    match spec.real_eigenvalues() {
        Some(real) => println!("eigenvalues: {}", grouped_eigenvalues(&real)),
        None => println!(
            "eigenvalues: {}",
            spec.eigenvalues.iter().map(|e| format!("{e:.6}")).collect::<Vec<_>>().join(", ")
        ),
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut manifest = RunManifest::create(&out, "topo")?;
    manifest.write(&format!("topology_{kind}.txt"), &topo.to_text())?;
    let mut csv = String::from("index,re,im\n");
    for (k, e) in spec.eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "{},{:.17e},{:.17e}", k + 1, e.re, e.im);
    }
    manifest.write(&format!("spectrum_{kind}.csv"), &csv)?;
    manifest.finish(common)?;
    Ok(Status::Ok)
}

pub fn certify(common: &Common, key_value: bool, synthesize: Option<f64>) -> CmdResult {
    let cfg = common.load()?;
    let mut manifest = common.out.as_deref().map(|d| RunManifest::create(d, "certify")).transpose()?;
    let mut worst = Status::Ok;
    for sc in &cfg.scenarios {
        let tau = sc.sim.plant_params.powertrain_tau;
        let spec = coupling_spectrum(&sc.sim.topology)?;
        let mut gains = sc.sim.gains;
        if let Some(margin) = synthesize {
            gains.kappa_v = synthesize_kv(gains.kappa_s, gains.kappa_p, gains.kappa_a, &spec, tau, margin)?;
        }
        let cert = match certify_gains(&gains, &spec, tau) {
            Ok(c) => c,
            Err(ControlError::NotApplicable) => {
                return Err(Failure::new(
                    Status::NotApplicable,
                    format!("{}: theorem not applicable to this coupling matrix", sc.label),
                ))
            }
            Err(e) => return Err(e.into()),
        };
        if key_value {
            println!("topology={}", sc.label);
            println!("gains={}", gains_kv(&gains));
            print!("{}", cert.to_key_value());
        } else {
            println!("== {} with {}", sc.label, gains_text(&gains));
            println!("{cert}");
        }
        if let Some(m) = manifest.as_mut() {
            m.write(
                &format!("{}/certificate.txt", sc.label),
                &format!("topology={}\ngains={}\n{}", sc.label, gains_kv(&gains), cert.to_key_value()),
            )?;
        }
        if !cert.holds {
            worst = Status::Unstable;
        }
    }
    if let Some(m) = manifest {
        m.finish(common)?;
    }
    Ok(worst)
}

fn gains_kv(g: &GainVector) -> String {
    format!("{:e},{:e},{:e},{:e}", g.kappa_s, g.kappa_p, g.kappa_v, g.kappa_a)
}

fn gains_text(g: &GainVector) -> String {
    format!(
        "kappa_s = {}, kappa_p = {}, kappa_v = {}, kappa_a = {}",
        g.kappa_s, g.kappa_p, g.kappa_v, g.kappa_a
    )
}

pub fn simulate(common: &Common) -> CmdResult {
    let cfg = common.load()?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut manifest = RunManifest::create(&out, "simulate")?;
    let mut panes = Vec::new();
    for sc in &cfg.scenarios {
        info!("simulating {}", sc.label);
        let traj = match sc.sim.plant_mode {
            PlantMode::LinearFourthOrderSiso => siso_trajectory(&sc.sim)?,
            _ => run(&sc.sim)?,
        };
        let metrics = compute_metrics(&traj, cfg.analysis.settle_window, cfg.analysis.settle_band)?;
        let traj_rel = format!("{}/trajectory.csv", sc.label);
        let mut w = BufWriter::new(File::create(manifest.path(&traj_rel)?)?);
        trajectory_csv(&traj, cfg.output_stride, &mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(manifest.path(&format!("{}/metrics.csv", sc.label))?)?);
        metrics_csv(&sc.label, &metrics, &mut w)?;
        w.flush()?;
        panes.push(PlotPane {
            label: sc.label.clone(),
            csv: traj_rel,
            epoch_starts: traj.epoch_starts().iter().map(|(_, t)| *t).collect(),
        });

        println!("== {} ({} followers, {})", sc.label, sc.sim.n_followers(), sc.sim.plant_mode);
        let mut epochs: Vec<&str> = Vec::new();
        for e in &metrics.epochs {
            if !epochs.contains(&e.epoch.as_str()) {
                epochs.push(&e.epoch);
            }
        }
        for name in epochs {
            let worst = metrics
                .epochs_named(name)
                .max_by(|a, b| a.steady_state_error.abs().total_cmp(&b.steady_state_error.abs()))
                .expect("epoch has rows");
            let unsettled = metrics.epochs_named(name).filter(|e| e.settling_time.is_none()).count();
            println!(
                "  {name:<14} max |e_ss| = {:.3e} m (veh {}), peak |e| = {:.3e} m, unsettled {unsettled}",
                worst.steady_state_error.abs(),
                worst.vehicle,
                metrics.epochs_named(name).map(|e| e.max_abs_error).fold(0.0, f64::max)
            );
        }
        if metrics.any_collision() {
            println!("  collision: yes");
        }
    }
    manifest.write("plot.py", &plot_script(&panes))?;
    manifest.finish(common)?;
    Ok(Status::Ok)
}

struct SweepRow {
    topology: String,
    gains: GainVector,
    certificate: String,
    min_margin: f64,
    hurwitz: String,
    abscissa: f64,
}

fn closed_loop(
    topo: &Topology,
    gains: &GainVector,
    tau: f64,
    settings: &AnalysisSettings,
) -> Result<analysis::ClosedLoopSystem, analysis::AnalysisError> {
    let order = if gains.kappa_s == 0.0 { 3 } else { 4 };
    build_closed_loop_with(topo, gains, tau, order, settings.max_states)
}

fn sweep_point(sim: &SimConfig, label: &str, gains: GainVector, settings: &AnalysisSettings) -> SweepRow {
    let tau = sim.plant_params.powertrain_tau;
    let verdict = match coupling_spectrum(&sim.topology) {
        Ok(spec) => certify_gains(&gains, &spec, tau),
        Err(e) => Err(ControlError::Precondition(e.to_string())),
    };
    let (certificate, min_margin) = match verdict {
        Ok(c) => (if c.holds { "stable" } else { "unstable" }.to_string(), c.min_margin()),
        Err(ControlError::NotApplicable) => ("not-applicable".into(), f64::NAN),
        Err(_) => ("invalid".into(), f64::NAN),
    };
    let (hurwitz, abscissa) = match closed_loop(&sim.topology, &gains, tau, settings) {
        Ok(sys) => (
            if is_hurwitz(&sys, settings.tol) { "stable" } else { "unstable" }.to_string(),
            sys.spectral_abscissa,
        ),
        Err(e) => {
            debug!("closed loop failed at {gains:?}: {e}");
            ("error".into(), f64::NAN)
        }
    };
    SweepRow {
        topology: label.to_string(),
        gains,
        certificate,
        min_margin,
        hurwitz,
        abscissa,
    }
}

pub fn sweep(common: &Common, x: Option<GridAxis>, y: Option<GridAxis>) -> CmdResult {
    let cfg = common.load()?;
    let grid_x = x.unwrap_or(cfg.sweep.x);
    let grid_y = if x.is_some() || y.is_some() { y } else { cfg.sweep.y };
    if grid_y.is_some_and(|g| g.param == grid_x.param) {
        return Err(Failure::bad_input("x and y axes vary the same gain"));
    }
    let mut points = Vec::new();
    for (s_idx, sc) in cfg.scenarios.iter().enumerate() {
        for &vx in &grid_x.values() {
            let ys = grid_y.map(|g| g.values()).unwrap_or_else(|| vec![f64::NAN]);
            for &vy in &ys {
                let mut g = sc.sim.gains;
                grid_x.param.set(&mut g, vx);
                if let Some(gy) = grid_y {
                    gy.param.set(&mut g, vy);
                }
                points.push((s_idx, g));
            }
        }
    }
    if points.is_empty() {
        return Err(Failure::bad_input("empty grid"));
    }
    info!("sweeping {} grid points", points.len());
    // Rows keep grid order regardless of scheduling.
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|(s_idx, g)| {
            let sc = &cfg.scenarios[*s_idx];
            sweep_point(&sc.sim, &sc.label, *g, &cfg.analysis)
        })
        .collect();

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut manifest = RunManifest::create(&out, "sweep")?;
    let mut csv = String::from("topology,kappa_s,kappa_p,kappa_v,kappa_a,certificate,min_margin,hurwitz,spectral_abscissa\n");
    let mut disagreements = 0;
    let mut failures = 0;
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{},{:.16e}",
            r.topology,
            r.gains.kappa_s,
            r.gains.kappa_p,
            r.gains.kappa_v,
            r.gains.kappa_a,
            r.certificate,
            r.min_margin,
            r.hurwitz,
            r.abscissa
        );
        if r.hurwitz == "error" {
            failures += 1;
        } else if (r.certificate == "stable" || r.certificate == "unstable") && r.certificate != r.hurwitz {
            disagreements += 1;
        }
    }
    manifest.write("sweep.csv", &csv)?;
    manifest.finish(common)?;
    for sc in &cfg.scenarios {
        let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.topology == sc.label).collect();
        let stable = mine.iter().filter(|r| r.certificate == "stable").count();
        println!("{}: {} points, {stable} certified stable", sc.label, mine.len());
    }
    println!("certificate/numerical disagreements: {disagreements}");
    if failures > 0 {
        return Err(Failure::new(
            Status::Numerical,
            format!("{failures} grid points failed the numerical eigenvalue check"),
        ));
    }
    Ok(Status::Ok)
}

pub fn analyze(common: &Common) -> CmdResult {
    let cfg = common.load()?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut manifest = RunManifest::create(&out, "analyze")?;
    let mut worst = Status::Ok;
    for sc in &cfg.scenarios {
        let tau = sc.sim.plant_params.powertrain_tau;
        let sys = closed_loop(&sc.sim.topology, &sc.sim.gains, tau, &cfg.analysis)?;
        let hurwitz = is_hurwitz(&sys, cfg.analysis.tol);
        println!(
            "== {}: order {}, {} states, spectral abscissa {:.6e}, {}",
            sc.label,
            sys.order,
            sys.full_matrix.nrows(),
            sys.spectral_abscissa,
            if hurwitz { "Hurwitz" } else { "not Hurwitz" }
        );
        if sys.structured {
            let d = analysis::block_spectrum_distance(&sys)?;
            let ok = block_spectrum_union_check(&sys, cfg.analysis.tol);
            println!(
                "  block spectrum union: distance {d:.3e}, {}",
                if ok { "matches" } else { "MISMATCH" }
            );
            if !ok {
                worst = Status::Numerical;
            }
        } else {
            println!("  general coupling matrix: no block decomposition");
        }
        manifest.write(&format!("{}/spectrum.csv", sc.label), &spectrum_csv(&sys)?)?;
        if !hurwitz && worst == Status::Ok {
            worst = Status::Unstable;
        }
    }
    manifest.finish(common)?;
    if worst == Status::Numerical {
        return Err(Failure::new(Status::Numerical, "block spectra do not match the full spectrum"));
    }
    Ok(worst)
}

pub fn template() -> CmdResult {
    print!("{}", platoon_core::config::template());
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping() {
        assert_eq!(grouped_eigenvalues(&[1.0; 9]), "1 (×9)");
        assert_eq!(grouped_eigenvalues(&[0.5, 1.0, 1.0 + 1e-12, 2.25]), "0.5, 1 (×2), 2.25");
    }
}
