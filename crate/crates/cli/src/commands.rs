use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use greenbrown::exposure::{fit_power_law, hhi, hhi_powerlaw_approx, hhi_powerlaw_limit, read_ranked_exposures};
use greenbrown::mc::{convergence_experiment, simulate_loss_samples, summarize, ConvergenceRow};
use greenbrown::{ExposureLaw, LimitModel, LoanClassParams, PortfolioSpec};

use crate::config::Resolved;
use crate::output::{num, write_text, CsvSink, PLOT_PREAMBLE};
use crate::UsageError;

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

/// `steps` evenly spaced points from `lo` to `hi` inclusive.
fn linspace(lo: f64, hi: f64, steps: usize) -> anyhow::Result<Vec<f64>> {
    if steps < 2 || !(lo < hi) {
        return Err(usage(format!("grid needs lo < hi and at least 2 steps (got {lo}..{hi}, {steps})")));
    }
    let m = (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| (lo * (m - i as f64) + hi * i as f64) / m)
        .collect())
}

fn law_for(decay: f64) -> ExposureLaw {
    if decay == 0.0 {
        ExposureLaw::Uniform
    } else {
        ExposureLaw::power(decay, 0.0)
    }
}

fn shape_spec(run: &Resolved, name: &str, shape: f64) -> anyhow::Result<PortfolioSpec> {
    run.config.scenario(name)?.spec_with_shape(shape).map_err(usage)
}

fn fixed_shape_spec(run: &Resolved, name: &str) -> anyhow::Result<PortfolioSpec> {
    let preset = run.config.scenario(name)?;
    preset
        .spec()
        .map_err(|e| usage(format!("scenario {name}: {e}; set `shape` for it in the config")))
}

fn python_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

pub fn limit(run: &Resolved) -> anyhow::Result<Vec<PathBuf>> {
    let sec = &run.config.limit;
    if sec.grid_points == 0 {
        return Err(usage("limit.grid_points must be positive"));
    }
    let denom = (sec.grid_points + 1) as f64;
    let grid: Vec<f64> = (1..=sec.grid_points).map(|i| i as f64 / denom).collect();
    let mut written = Vec::new();
    let mut files = Vec::new();
    for name in &sec.scenarios {
        let models = sec
            .shapes
            .iter()
            .map(|&shape| Ok(LimitModel::from_spec(&shape_spec(run, name, shape)?)?))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let mut header = vec!["loss".to_string()];
        for shape in &sec.shapes {
            header.push(format!("density_shape_{shape}"));
            header.push(format!("cdf_shape_{shape}"));
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let file = format!("limit_{name}.csv");
        let mut sink = CsvSink::create(run, &file, &header)?;
        for &l in &grid {
            let mut row = vec![num(l)];
            for m in &models {
                row.push(num(m.mix_density(l)?));
                row.push(num(m.mix_cdf(l)?));
            }
            sink.row(&row)?;
        }
        written.push(sink.finish()?);
        files.push(file);
    }
    let script = format!(
        "{PLOT_PREAMBLE}
FILES = {}

fig, axes = plt.subplots(1, len(FILES), figsize=(4.5 * len(FILES), 3.5), squeeze=False)
for ax, name in zip(axes[0], FILES):
    header, body = read(name)
    loss = column(header, body, \"loss\")
    for h in header:
        if h.startswith(\"density_shape_\"):
            ax.plot(loss, column(header, body, h), label=\"shape \" + h[len(\"density_shape_\"):])
    ax.set_title(name[len(\"limit_\"):-4])
    ax.set_xlabel(\"loss\")
    ax.set_xlim(0, float(sys.argv[1]) if len(sys.argv) > 1 else 0.15)
    ax.legend()
axes[0][0].set_ylabel(\"density\")
fig.tight_layout()
fig.savefig(os.path.join(HERE, \"limit_densities.png\"), dpi=150)
",
        python_list(&files)
    );
    written.push(write_text(&run.out, "plot_limit.py", &script)?);
    Ok(written)
}

pub fn var(run: &Resolved) -> anyhow::Result<Vec<PathBuf>> {
    let sec = &run.config.var;
    let pds = linspace(sec.pd_green_min, sec.pd_green_max, sec.pd_green_steps)?;
    let omegas = linspace(0.0, 1.0, sec.budget_steps)?;
    let mut written = Vec::new();

    let mut header = vec!["scenario".to_string(), "shape".into(), "pd_green".into()];
    header.extend(sec.levels.iter().map(|l| format!("var_{l}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut sink = CsvSink::create(run, "var_pd_green.csv", &header)?;
    for name in &sec.scenarios {
        for &shape in &sec.shapes {
            let base = shape_spec(run, name, shape)?;
            for &pd in &pds {
                let green = LoanClassParams { pd, ..base.green };
                green.validate().map_err(usage)?;
                let model = LimitModel::new(green, base.brown)?;
                let mut row = vec![name.clone(), num(shape), num(pd)];
                for &beta in &sec.levels {
                    row.push(num(model.mix_var(beta).map_err(usage)?));
                }
                sink.row(&row)?;
            }
        }
    }
    written.push(sink.finish()?);

    let level_col = format!("var_{}", sec.budget_level);
    let mut sink = CsvSink::create(run, "var_budget.csv", &["scenario", "shape", "omega_green", &level_col])?;
    for name in &sec.budget_scenarios {
        for &shape in &sec.budget_shapes {
            let base = shape_spec(run, name, shape)?;
            for &w in &omegas {
                let model = LimitModel::new(
                    LoanClassParams { omega: w, ..base.green },
                    LoanClassParams { omega: 1.0 - w, ..base.brown },
                )?;
                let v = model.mix_var(sec.budget_level).map_err(usage)?;
                sink.row([name.clone(), num(shape), num(w), num(v)])?;
            }
        }
    }
    written.push(sink.finish()?);

    let script = format!(
        "{PLOT_PREAMBLE}
header, body = read(\"var_pd_green.csv\")
levels = [h for h in header if h.startswith(\"var_\")]
series = sorted({{(r[0], r[1]) for r in body}})
fig, axes = plt.subplots(1, len(levels), figsize=(4.5 * len(levels), 3.5), squeeze=False)
for ax, level in zip(axes[0], levels):
    for scenario, shape in series:
        rows = [r for r in body if (r[0], r[1]) == (scenario, shape)]
        i = header.index(level)
        ax.plot([float(r[2]) for r in rows], [float(r[i]) for r in rows], label=f\"{{scenario}} shape {{shape}}\")
    ax.set_title(\"beta = \" + level[len(\"var_\"):])
    ax.set_xlabel(\"green default probability\")
    ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(os.path.join(HERE, \"var_pd_green.png\"), dpi=150)

header, body = read(\"var_budget.csv\")
fig, ax = plt.subplots(figsize=(5, 3.5))
for scenario, shape in sorted({{(r[0], r[1]) for r in body}}):
    rows = [r for r in body if (r[0], r[1]) == (scenario, shape)]
    ax.plot([float(r[2]) for r in rows], [float(r[3]) for r in rows], label=f\"{{scenario}} shape {{shape}}\")
ax.set_xlabel(\"green exposure share\")
ax.set_ylabel(header[3])
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(os.path.join(HERE, \"var_budget.png\"), dpi=150)
"
    );
    written.push(write_text(&run.out, "plot_var.py", &script)?);
    Ok(written)
}

pub fn alpha_sensitivity(run: &Resolved) -> anyhow::Result<Vec<PathBuf>> {
    let sec = &run.config.alpha_sens;
    let alphas = linspace(sec.alpha_min, sec.alpha_max, sec.steps)?;
    let mut sink = CsvSink::create(run, "alpha_sensitivity.csv", &["config_id", "alpha", "var99"])?;
    for market in run.config.markets() {
        for &alpha in &alphas {
            let spec = market.spec_with_shape(alpha).map_err(usage)?;
            let v = LimitModel::from_spec(&spec)?.mix_var(0.99)?;
            sink.row([market.id.clone(), num(alpha), num(v)])?;
        }
    }
    let mut written = vec![sink.finish()?];
    let script = format!(
        "{PLOT_PREAMBLE}
header, body = read(\"alpha_sensitivity.csv\")
fig, ax = plt.subplots(figsize=(5, 3.5))
for cid in dict.fromkeys(r[0] for r in body):
    rows = [r for r in body if r[0] == cid]
    ax.plot([float(r[1]) for r in rows], [float(r[2]) for r in rows], label=cid)
ax.set_xlabel(\"factor shape\")
ax.set_ylabel(\"VaR 99%\")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, \"alpha_sensitivity.png\"), dpi=150)
"
    );
    written.push(write_text(&run.out, "plot_alpha_sens.py", &script)?);
    Ok(written)
}

const SUMMARY_HEADER: [&str; 8] = [
    "n",
    "a",
    "level",
    "var_empirical",
    "var_analytic",
    "error",
    "hhi_g",
    "hhi_b",
];

fn summary_row(r: &ConvergenceRow) -> [String; 8] {
    [
        r.n.to_string(),
        num(r.a),
        num(r.level),
        num(r.var_empirical),
        num(r.var_analytic),
        num(r.error),
        num(r.hhi_g),
        num(r.hhi_b),
    ]
}

/// Rows by size, one block of quantile columns per decay.
fn render_table(name: &str, decays: &[f64], levels: &[f64], rows: &[ConvergenceRow]) -> String {
    let mut out = format!("{name}: empirical VaR (error against the limit)\n");
    let _ = write!(out, "{:>6}", "n");
    for a in decays {
        for l in levels {
            let _ = write!(out, " | a={a} {:>5}%      ", l * 100.0);
        }
        let _ = write!(out, " | {:>7} {:>7}", "HHI_g", "HHI_b");
    }
    out.push('\n');
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.dedup();
    for n in sizes {
        let _ = write!(out, "{n:>6}");
        for &a in decays {
            let block: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.n == n && r.a == a).collect();
            for r in &block {
                let _ = write!(out, " | {:.4} ({:+.4})", r.var_empirical, r.error);
            }
            if let Some(r) = block.first() {
                let _ = write!(out, " | {:.5} {:.5}", r.hhi_g, r.hhi_b);
            }
        }
        out.push('\n');
    }
    out
}

pub fn converge(run: &Resolved) -> anyhow::Result<Vec<PathBuf>> {
    let sec = &run.config.converge;
    if sec.sizes.is_empty() || sec.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("converge.sizes must be nonempty and strictly increasing"));
    }
    let mc = run.mc(&sec.levels)?;
    let mut written = Vec::new();
    let mut errors = CsvSink::create(run, "convergence_errors.csv", &["scenario", "a", "level", "n", "abs_error"])?;
    let mut tables = String::new();
    let mut files = Vec::new();
    for name in &sec.scenarios {
        let base = fixed_shape_spec(run, name)?;
        let model = LimitModel::from_spec(&base)?;
        let file = format!("convergence_{name}.csv");
        let mut sink = CsvSink::create(run, &file, &SUMMARY_HEADER)?;
        let mut all = Vec::new();
        for &a in &sec.decays {
            let template = base.with_exposure_law(law_for(a));
            template.validate().map_err(usage)?;
            log::info!("{name}: a = {a}, {} replications per size", mc.n_samples);
            let rows = convergence_experiment(&template, &sec.sizes, &mc, &model)?;
            for r in &rows {
                sink.row(summary_row(r))?;
                errors.row([name.clone(), num(r.a), num(r.level), r.n.to_string(), num(r.error.abs())])?;
            }
            all.extend(rows);
        }
        written.push(sink.finish()?);
        files.push(file);
        let table = render_table(name, &sec.decays, &sec.levels, &all);
        print!("{table}");
        tables.push_str(&table);
        tables.push('\n');
    }
    written.push(errors.finish()?);
    written.push(write_text(&run.out, "convergence_tables.txt", &tables)?);
    let script = format!(
        "{PLOT_PREAMBLE}
header, body = read(\"convergence_errors.csv\")
scenarios = list(dict.fromkeys(r[0] for r in body))
fig, axes = plt.subplots(1, len(scenarios), figsize=(5 * len(scenarios), 3.5), squeeze=False)
for ax, scenario in zip(axes[0], scenarios):
    rows = [r for r in body if r[0] == scenario]
    for a, level in dict.fromkeys((r[1], r[2]) for r in rows):
        sel = [r for r in rows if (r[1], r[2]) == (a, level)]
        ax.plot([int(r[3]) for r in sel], [float(r[4]) for r in sel], marker=\"o\", label=f\"a={{a}} beta={{level}}\")
    ax.set_title(scenario)
    ax.set_xlabel(\"portfolio size\")
    ax.set_ylabel(\"absolute VaR error\")
    ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(os.path.join(HERE, \"convergence_errors.png\"), dpi=150)
"
    );
    written.push(write_text(&run.out, "plot_converge.py", &script)?);
    Ok(written)
}

pub fn fit_exposures(run: &Resolved, csv_path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let data = read_ranked_exposures(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    if data.renormalized {
        log::warn!("{}: weights did not sum to 1 and were renormalized", csv_path.display());
    }
    let fit = fit_power_law(&data.weights)?;
    if fit.is_degenerate() {
        eprintln!("warning: fitted decay a = {:.4} is close to zero; the power-law model is degenerate for this input", fit.a);
    }
    let n = data.weights.len();
    let data_hhi = hhi(&data.weights);
    let approx = hhi_powerlaw_approx(fit.a, n).unwrap_or(f64::NAN);
    let limit = hhi_powerlaw_limit(fit.a).ok();
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("exposures");
    let mut sink = CsvSink::create(
        run,
        &format!("fit_{stem}.csv"),
        &[
            "n",
            "a",
            "b",
            "c",
            "rmse",
            "r2",
            "hhi",
            "hhi_approx",
            "hhi_limit",
            "hhi_rate_exponent",
            "hhi_exact_limit",
        ],
    )?;
    sink.row([
        n.to_string(),
        num(fit.a),
        num(fit.b),
        num(fit.c),
        num(fit.rmse),
        num(fit.r2),
        num(data_hhi),
        num(approx),
        num(limit.map_or(f64::NAN, |l| l.limit)),
        num(limit.and_then(|l| l.rate_exponent).unwrap_or(f64::NAN)),
        num(limit.and_then(|l| l.exact_limit).unwrap_or(f64::NAN)),
    ])?;
    println!(
        "a = {:.4}  b = {:.4}  c = {:.4}  rmse = {:.3e}  r2 = {:.4}  HHI = {:.2e}",
        fit.a, fit.b, fit.c, fit.rmse, fit.r2, data_hhi
    );
    Ok(vec![sink.finish()?])
}

pub fn simulate(run: &Resolved) -> anyhow::Result<Vec<PathBuf>> {
    let sec = &run.config.simulate;
    if sec.obligors < 2 {
        return Err(usage("simulate.obligors must be at least 2"));
    }
    let law = if sec.decay == 0.0 {
        ExposureLaw::Uniform
    } else {
        ExposureLaw::power(sec.decay, sec.shift)
    };
    let spec = fixed_shape_spec(run, &sec.scenario)?
        .with_exposure_law(law)
        .with_total_count(sec.obligors);
    spec.validate().map_err(usage)?;
    let mc = run.mc(&sec.levels)?;
    let mut written = Vec::new();
    let mut samples = simulate_loss_samples(&spec, &mc)?;
    if sec.raw {
        let mut raw = CsvSink::create(run, &format!("losses_{}.csv", sec.scenario), &["loss"])?;
        for &l in &samples {
            raw.row([num(l)])?;
        }
        written.push(raw.finish()?);
    }
    let summary = summarize(&spec, &mc, &mut samples)?;
    let model = LimitModel::from_spec(&spec).ok();
    let mut sink = CsvSink::create(run, &format!("simulate_{}.csv", sec.scenario), &SUMMARY_HEADER)?;
    for q in &summary.empirical_quantiles {
        let analytic = model
            .as_ref()
            .and_then(|m| m.mix_var(q.level).ok())
            .unwrap_or(f64::NAN);
        sink.row(summary_row(&ConvergenceRow {
            n: sec.obligors,
            a: sec.decay,
            level: q.level,
            var_empirical: q.loss,
            var_analytic: analytic,
            error: q.loss - analytic,
            hhi_g: summary.hhi_green,
            hhi_b: summary.hhi_brown,
        }))?;
    }
    written.push(sink.finish()?);
    let mut moments = CsvSink::create(
        run,
        &format!("simulate_{}_moments.csv", sec.scenario),
        &["n_samples", "mean", "variance"],
    )?;
    moments.row([summary.n_samples.to_string(), num(summary.mean), num(summary.variance)])?;
    written.push(moments.finish()?);
    println!(
        "{}: mean loss {:.6} (se {:.2e}), variance {:.3e}",
        sec.scenario,
        summary.mean,
        summary.mean_stderr(),
        summary.variance
    );
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_decimal_points() {
        let g = linspace(-3.0, 3.0, 61).unwrap();
        assert_eq!(g[22], -0.8);
        assert_eq!(g[30], 0.0);
        assert_eq!(g[38], 0.8);
        assert!(linspace(1.0, 0.0, 5).is_err());
        assert!(linspace(0.0, 1.0, 1).is_err());
    }
}
