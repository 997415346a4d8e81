//! CSV tables and plot scripts.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hetnet_core::montecarlo::RelativeGap;
use hetnet_core::planner::{PlanSolution, TradeoffSystem};

use crate::campaign::{query_label, Engine, Row};

/// First line of every results table; bump when columns change.
pub const RESULTS_HEADER: &str = "# hetnet results v1";
pub const RESULT_COLUMNS: [&str; 11] =
    ["config_hash", "axis", "axis_value", "query", "threshold", "engine", "outage", "ci95", "trials", "seed", "error"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the results table. Wall times are left out so the file is
/// reproducible byte for byte; see [`write_timings`].
pub fn write_results<W: Write>(out: W, hash: &str, axis: &str, rows: &[Row]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{RESULTS_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record([
            hash.to_string(),
            axis.to_string(),
            opt(r.axis_value),
            query_label(r.query),
            r.threshold.to_string(),
            r.engine.name().to_string(),
            opt(r.outage),
            opt(r.ci95),
            opt(r.trials),
            opt(r.seed),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings<W: Write>(out: W, rows: &[Row]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# hetnet timings v1")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis_value", "query", "threshold", "engine", "wall_ms"])?;
    for r in rows {
        w.write_record([
            opt(r.axis_value),
            query_label(r.query),
            r.threshold.to_string(),
            r.engine.name().to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<std::fs::File> {
    let p = dir.join(name);
    std::fs::File::create(&p).with_context(|| format!("cannot write {}", p.display()))
}

/// One plotted series: a query at a threshold from one engine.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Series {
    query: String,
    threshold_bits: u64,
    engine: &'static str,
}

fn series(rows: &[Row]) -> Vec<(Series, f64)> {
    let set: BTreeSet<(String, u64, &'static str)> =
        rows.iter().map(|r| (query_label(r.query), r.threshold.to_bits(), r.engine.name())).collect();
    set.into_iter()
        .map(|(query, bits, engine)| (Series { query, threshold_bits: bits, engine }, f64::from_bits(bits)))
        .collect()
}

/// Writes `<name>.csv`, `<name>.timings.csv`, a gnuplot script and a plain
/// description of the figure. Returns the paths written.
pub fn emit_sweep(dir: &Path, name: &str, hash: &str, axis: &str, rows: &[Row]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let csv_name = format!("{name}.csv");
    write_results(create(dir, &csv_name)?, hash, axis, rows)?;
    write_timings(create(dir, &format!("{name}.timings.csv"))?, rows)?;
    let mut written = vec![dir.join(&csv_name), dir.join(format!("{name}.timings.csv"))];
    if rows.is_empty() {
        return Ok(written);
    }

    let all = series(rows);
    let mut gp = create(dir, &format!("{name}.gp"))?;
    writeln!(gp, "# gnuplot script for {csv_name}")?;
    writeln!(gp, "set datafile separator \",\"")?;
    writeln!(gp, "set terminal pngcairo size 900,600")?;
    writeln!(gp, "set output \"{name}.png\"")?;
    writeln!(gp, "set xlabel \"{axis}\"")?;
    writeln!(gp, "set ylabel \"outage probability\"")?;
    writeln!(gp, "set key outside right")?;
    let mut parts = Vec::new();
    for (s, t) in &all {
        // Columns: 3 axis_value, 4 query, 5 threshold, 6 engine, 7 outage, 8 ci95.
        let select = format!("(strcol(4) eq \"{}\" && strcol(6) eq \"{}\" && $5 == {t:e} ? $7 : 1/0)", s.query, s.engine);
        let title = format!("{} T={t} {}", s.query, s.engine);
        if s.engine == Engine::Sim.name() {
            parts.push(format!("\"{csv_name}\" using 3:{select}:8 with yerrorbars title \"{title}\""));
        } else {
            parts.push(format!("\"{csv_name}\" using 3:{select} with linespoints title \"{title}\""));
        }
    }
    writeln!(gp, "plot {}", parts.join(", \\\n     "))?;
    written.push(dir.join(format!("{name}.gp")));

    let mut txt = create(dir, &format!("{name}.plot.txt"))?;
    writeln!(txt, "figure: outage probability against {axis}")?;
    writeln!(txt, "data: {csv_name}")?;
    writeln!(txt, "x: column axis_value")?;
    writeln!(txt, "y: column outage")?;
    writeln!(txt, "error bars: column ci95 (sim rows only)")?;
    writeln!(txt, "series (select rows by query, threshold and engine):")?;
    for (s, t) in &all {
        writeln!(txt, "  query={} threshold={t} engine={}", s.query, s.engine)?;
    }
    written.push(dir.join(format!("{name}.plot.txt")));
    Ok(written)
}

pub fn write_tradeoff<W: Write>(out: W, hash: &str, sys: &TradeoffSystem) -> Result<()> {
    let mut out = out;
    writeln!(out, "# hetnet tradeoff v1")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["config_hash".to_string(), "constraint".into(), "target".into()];
    header.extend((1..=sys.n_bs_types).map(|i| format!("coeff_mu{i}")));
    header.extend(["bound".to_string(), "infeasible_at_zero".into()]);
    w.write_record(&header)?;
    for c in &sys.constraints {
        let mut rec = vec![hash.to_string(), constraint_label(c.id), c.target.to_string()];
        rec.extend(c.coeffs.iter().map(|a| a.to_string()));
        rec.push(c.bound.to_string());
        rec.push(c.infeasible_at_zero().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn constraint_label(id: hetnet_core::planner::ConstraintId) -> String {
    query_label(id)
}

pub fn write_plan<W: Write>(out: W, hash: &str, sys: &TradeoffSystem, sol: &PlanSolution) -> Result<()> {
    let mut out = out;
    writeln!(out, "# hetnet plan v1")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config_hash", "item", "value"])?;
    for (i, m) in sol.mu.iter().enumerate() {
        w.write_record([hash, &format!("mu{}", i + 1), &m.to_string()])?;
    }
    w.write_record([hash, "utility", &sol.utility.to_string()])?;
    for (c, d) in sys.constraints.iter().zip(&sol.duals) {
        w.write_record([hash, &format!("dual {}", constraint_label(c.id)), &d.to_string()])?;
    }
    let active: Vec<String> = sol.active.iter().map(|id| constraint_label(*id)).collect();
    w.write_record([hash, "active", &active.join(" ")])?;
    w.write_record([hash, "kkt_stationarity", &sol.kkt.stationarity.to_string()])?;
    w.write_record([hash, "kkt_primal", &sol.kkt.primal.to_string()])?;
    w.write_record([hash, "kkt_complementarity", &sol.kkt.complementarity.to_string()])?;
    w.write_record([hash, "kkt_dual", &sol.kkt.dual.to_string()])?;
    w.flush()?;
    Ok(())
}

/// Human-readable planning report.
pub fn plan_report(sys: &TradeoffSystem, sol: &PlanSolution) -> String {
    let mut s = String::new();
    s.push_str(&format!("tradeoff at T = {}\n", sys.threshold));
    s.push_str(&sys.describe());
    s.push('\n');
    for (i, m) in sol.mu.iter().enumerate() {
        s.push_str(&format!("mu{} = {m:.6}\n", i + 1));
    }
    s.push_str(&format!("utility = {:.6}\n", sol.utility));
    if sol.active.is_empty() {
        s.push_str("no constraint is active\n");
    } else {
        for (c, d) in sys.constraints.iter().zip(&sol.duals) {
            if sol.active.contains(&c.id) {
                s.push_str(&format!("active: {} (multiplier {d:.6})\n", c.id));
            }
        }
    }
    s.push_str(&format!("KKT residual = {:.3e}\n", sol.kkt.max()));
    s
}

pub fn write_frontier<W: Write>(out: W, hash: &str, mu1: &[f64], mu2: &[f64]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# hetnet frontier v1")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config_hash", "mu1", "max_mu2"])?;
    for (a, b) in mu1.iter().zip(mu2) {
        w.write_record([hash, &a.to_string(), &b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gap<W: Write>(out: W, hash: &str, gap: &RelativeGap, labels: &[String]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# hetnet gap v1")?;
    let mut w = csv::Writer::from_writer(out);
    let n = gap.baseline.mu.len();
    let mut header = vec!["config_hash".to_string(), "alpha".into(), "eta".into(), "utility".into()];
    header.extend((1..=n).map(|i| format!("mu{i}")));
    for l in labels {
        header.push(format!("sim {l}"));
        header.push(format!("ci95 {l}"));
        header.push(format!("relaxed {l}"));
    }
    w.write_record(&header)?;
    let mut base = vec![hash.to_string(), "inf".into(), "0".into(), gap.baseline.utility.to_string()];
    base.extend(gap.baseline.mu.iter().map(|m| m.to_string()));
    base.extend(labels.iter().flat_map(|_| [String::new(), String::new(), String::new()]));
    w.write_record(&base)?;
    for p in &gap.points {
        let mut rec = vec![hash.to_string(), p.alpha.to_string(), p.eta.to_string(), p.plan.utility.to_string()];
        rec.extend(p.plan.mu.iter().map(|m| m.to_string()));
        for (e, t) in p.simulated.iter().zip(&p.relaxed_targets) {
            rec.push(e.probability.to_string());
            rec.push(e.ci95_halfwidth.to_string());
            rec.push(t.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetnet_core::planner::ConstraintId;

    fn row(v: f64, engine: Engine) -> Row {
        Row {
            axis_value: Some(v),
            query: ConstraintId::Tier1 { ue_type: 0 },
            threshold: 0.1,
            engine,
            outage: Some(0.25),
            ci95: (engine == Engine::Sim).then_some(0.01),
            trials: (engine == Engine::Sim).then_some(1000),
            seed: (engine == Engine::Sim).then_some(1),
            error: None,
            wall_ms: 1.5,
        }
    }

    #[test]
    fn results_have_a_versioned_header() {
        let mut buf = Vec::new();
        write_results(&mut buf, "abc", "lambda1", &[row(0.5, Engine::Analytic), row(0.5, Engine::Sim)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines[1], RESULT_COLUMNS.join(","));
        assert_eq!(lines[2], "abc,lambda1,0.5,tier1.1,0.1,analytic,0.25,,,,");
        assert_eq!(lines[3], "abc,lambda1,0.5,tier1.1,0.1,sim,0.25,0.01,1000,1,");
        assert!(!text.contains("1.5"));
    }

    #[test]
    fn two_engines_give_two_series_in_the_script() {
        let dir = tempfile::tempdir().unwrap();
        let rows = [row(0.5, Engine::Analytic), row(0.5, Engine::Sim), row(1.0, Engine::Analytic), row(1.0, Engine::Sim)];
        let files = emit_sweep(dir.path(), "s", "h", "lambda1", &rows).unwrap();
        assert_eq!(files.len(), 4);
        let gp = std::fs::read_to_string(dir.path().join("s.gp")).unwrap();
        assert_eq!(gp.matches("title").count(), 2);
        assert!(gp.contains("yerrorbars") && gp.contains("linespoints"));
        // Only emitted columns are referenced.
        for col in ["using 3:", "strcol(4)", "strcol(6)", "$5", "$7", ":8"] {
            assert!(gp.contains(col), "{col}");
        }
        let txt = std::fs::read_to_string(dir.path().join("s.plot.txt")).unwrap();
        for name in ["axis_value", "outage", "ci95"] {
            assert!(RESULT_COLUMNS.contains(&name) && txt.contains(name));
        }
    }

    #[test]
    fn empty_tables_still_write_csv() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_sweep(dir.path(), "e", "h", "T", &[]).unwrap();
        assert_eq!(files.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        assert!(emit_sweep(&file.join("sub"), "s", "h", "T", &[row(1.0, Engine::Analytic)]).is_err());
    }
}
