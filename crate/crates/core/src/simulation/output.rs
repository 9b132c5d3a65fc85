//! CSV emission and the matplotlib plot script.

use std::io::{self, Write};

use super::{Metrics, Trajectory};

/// Write `t,veh,p,v,a,u,e_spacing`, one row per sample and vehicle. Every
/// `stride`-th sample is written; numbers carry 17 significant digits. The
/// leader (veh 0) has no spacing error and reports 0.
pub fn trajectory_csv<W: Write>(traj: &Trajectory, stride: usize, mut w: W) -> io::Result<()> {
    writeln!(w, "t,veh,p,v,a,u,e_spacing")?;
    let stride = stride.max(1);
    for k in (0..traj.len()).step_by(stride) {
        let t = traj.times[k];
        for (veh, s) in traj.vehicles.iter().enumerate() {
            let e = if veh == 0 { 0.0 } else { traj.spacing_errors[veh - 1][k] };
            writeln!(
                w,
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t, veh, s.position[k], s.velocity[k], s.acceleration[k], s.input[k], e
            )?;
        }
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_else(|| "nan".into())
}

/// One row per follower per epoch.
pub fn metrics_csv<W: Write>(label: &str, m: &Metrics, mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "topology,veh,epoch,t_start,t_end,steady_state_error,window_max_abs_error,max_abs_error,settling_time,min_spacing_error,collision"
    )?;
    for e in &m.epochs {
        let summary = &m.vehicles[e.vehicle - 1];
        writeln!(
            w,
            "{label},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
            e.vehicle,
            e.epoch,
            e.t_start,
            e.t_end,
            e.steady_state_error,
            e.window_max_abs_error,
            e.max_abs_error,
            opt(e.settling_time),
            summary.min_spacing_error,
            summary.collision
        )?;
    }
    Ok(())
}

/// A plot pane: one topology and the trajectory file it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPane {
    pub label: String,
    /// Path relative to the script's directory.
    pub csv: String,
    /// Epoch start times, shaded alternately.
    pub epoch_starts: Vec<f64>,
}

fn py_str(s: &str) -> String {
    let escaped: String = s
        .chars()
        .flat_map(|c| match c {
            '\\' => vec!['\\', '\\'],
            '\'' => vec!['\\', '\''],
            '\n' => vec!['\\', 'n'],
            c => vec![c],
        })
        .collect();
    format!("'{escaped}'")
}

/// Self-contained Python script plotting spacing error against time, one
/// pane per topology.
pub fn plot_script(panes: &[PlotPane]) -> String {
    let mut s = String::new();
    s.push_str("#!/usr/bin/env python3\n");
    s.push_str("# Spacing error against time, one pane per topology.\n");
    s.push_str("# Usage: python3 plot.py [output.png]\n");
    s.push_str("import csv\nimport os\nimport sys\n\nimport matplotlib\nmatplotlib.use('Agg')\nimport matplotlib.pyplot as plt\n\n");
    s.push_str("HERE = os.path.dirname(os.path.abspath(__file__))\n");
    s.push_str("PANES = [\n");
    for p in panes {
        let starts: Vec<String> = p.epoch_starts.iter().map(|t| format!("{t:.6}")).collect();
        s.push_str(&format!(
            "    ({}, {}, [{}]),\n",
            py_str(&p.label),
            py_str(&p.csv),
            starts.join(", ")
        ));
    }
    s.push_str("]\n\n");
    s.push_str(
        r#"
def load(path):
    series = {}
    with open(os.path.join(HERE, path), newline='') as f:
        for row in csv.DictReader(f):
            veh = int(row['veh'])
            if veh == 0:
                continue
            t, e = series.setdefault(veh, ([], []))
            t.append(float(row['t']))
            e.append(float(row['e_spacing']))
    return series


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, 'spacing_error.png')
    fig, axes = plt.subplots(len(PANES), 1, figsize=(8, 2.6 * len(PANES)), sharex=True, squeeze=False)
    for ax, (label, path, starts) in zip(axes[:, 0], PANES):
        series = load(path)
        t_end = max(max(t) for t, _ in series.values())
        bounds = starts + [t_end]
        for k in range(len(starts)):
            ax.axvspan(bounds[k], bounds[k + 1], color='0.5', alpha=0.06 * (k % 4))
        for veh in sorted(series):
            t, e = series[veh]
            ax.plot(t, e, linewidth=0.8, label='follower %d' % veh)
        ax.set_title(label)
        ax.set_ylabel('spacing error [m]')
        ax.grid(True, linewidth=0.3)
    axes[-1, 0].set_xlabel('time [s]')
    axes[0, 0].legend(loc='upper right', fontsize='x-small', ncol=3)
    fig.tight_layout()
    fig.savefig(out, dpi=150)


if __name__ == '__main__':
    main()
"#,
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{compute_metrics, VehicleSeries};

    fn tiny() -> Trajectory {
        let series = |c: f64| VehicleSeries {
            position: vec![c, c + 1.0],
            velocity: vec![1.0, 1.0],
            acceleration: vec![0.0, 0.0],
            input: vec![0.0, 0.1],
            torque: vec![0.0, 0.0],
        };
        Trajectory {
            times: vec![0.0, 0.1],
            vehicles: vec![series(0.0), series(-10.0)],
            spacing_errors: vec![vec![0.0, 0.25]],
            events: Vec::new(),
            gap: 10.0,
            label: "PF".into(),
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let mut buf = Vec::new();
        trajectory_csv(&tiny(), 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,veh,p,v,a,u,e_spacing");
        assert_eq!(lines.len(), 5);
        let last: Vec<_> = lines[4].split(',').collect();
        assert_eq!(last[1], "1");
        assert_eq!(last[6].parse::<f64>().unwrap(), 0.25);
        assert_eq!(last[0], "1.0000000000000001e-1");
    }

    #[test]
    fn metrics_csv_has_row_per_vehicle_epoch() {
        let mut t = tiny();
        t.times = (0..=300).map(|k| k as f64 * 0.1).collect();
        t.spacing_errors = vec![vec![0.0; 301]];
        let m = compute_metrics(&t, 20.0, 0.02).unwrap();
        let mut buf = Vec::new();
        metrics_csv("PF", &m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("PF,1,initial,"));
    }

    #[test]
    fn plot_script_lists_panes() {
        let s = plot_script(&[
            PlotPane {
                label: "PF".into(),
                csv: "PF/trajectory.csv".into(),
                epoch_starts: vec![0.0, 30.0],
            },
            PlotPane {
                label: "it's".into(),
                csv: "x.csv".into(),
                epoch_starts: vec![0.0],
            },
        ]);
        assert!(s.contains("('PF', 'PF/trajectory.csv', [0.000000, 30.000000]),"));
        assert!(s.contains("'it\\'s'"));
        assert!(s.contains("e_spacing"));
    }
}
