use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use siegel_forge::chains::{generate_crooked_curve, is_stably_crooked, standard_chain, winding_number, JordanPolyline};
use siegel_forge::tower::{advance_level, init_tower_with, TowerOptions, TowerState};
use siegel_forge::verify::{
    check_compact_containment, check_conditions, invariant_suite, render_approximant, rotation_number_report,
    write_stats_csv, ConditionsReport,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_VERIFY: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "siegel-forge", version, about = "Renormalization towers for pseudo-circle Siegel disks")]
struct Cli {
    /// Worker threads for grid evaluations (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed of the random test points used by verify.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stably crooked curve in C_m and draw it.
    Crooked {
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Build a tower from a TOML config.
    Build {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Overrides `levels` of the config.
        #[arg(long)]
        levels: Option<usize>,
        /// Overrides `render.resolution` of the config.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Re-verify a saved tower state.
    Verify { state: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RenderConfig {
    resolution: usize,
    /// The raster covers |Re ζ|, |Im ζ| <= e^{2π margin}.
    margin: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { resolution: 512, margin: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct BuildConfig {
    h: f64,
    q1: u64,
    levels: usize,
    tower: TowerOptions,
    render: RenderConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig { h: 1.0, q1: 5, levels: 2, tower: TowerOptions::default(), render: RenderConfig::default() }
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn write_file(path: &Path, text: &str) -> Result<(), ExitCode> {
    std::fs::write(path, text).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))
}

fn svg_of(curve: &JordanPolyline, m: usize) -> String {
    let s = 60.0;
    let (w, h) = (s * (m as f64 + 1.0), s * 2.0);
    let mut out = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="-30 -30 {w} {h}">"#);
    out.push('\n');
    if let Ok(chain) = standard_chain(m) {
        for (i, l) in chain.links.iter().enumerate() {
            let pts: Vec<String> = l.vertices.iter().map(|v| format!("{:.2},{:.2}", v.re * s, (1.0 - v.im) * s)).collect();
            let hue = 360.0 * i as f64 / m as f64;
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="hsl({hue:.0},60%,70%)" fill-opacity="0.25" stroke="hsl({hue:.0},60%,40%)" stroke-width="1"/>"#,
                pts.join(" ")
            );
        }
    }
    let n = curve.len() as i64;
    let pts: Vec<String> = (0..=n)
        .map(|k| curve.lifted(k))
        .map(|v| format!("{:.3},{:.3}", v.re * s, (1.0 - v.im) * s))
        .collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, pts.join(" "));
    out.push_str("</svg>\n");
    out
}

fn cmd_crooked(m: usize, out_dir: &Path) -> ExitCode {
    let curve = match generate_crooked_curve(m) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_NUMERIC, format!("m = {m}: {e}")),
    };
    let chain = match standard_chain(m) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_NUMERIC, e),
    };
    let crooked = is_stably_crooked(&curve, &chain).unwrap_or(false);
    let winding = winding_number(&curve, &chain).ok();
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return fail(EXIT_IO, format!("{}: {e}", out_dir.display()));
    }
    let doc = serde_json::json!({ "m": m, "stably_crooked": crooked, "winding": winding, "curve": curve });
    let json = match serde_json::to_string_pretty(&doc) {
        Ok(j) => j,
        Err(e) => return fail(EXIT_IO, e),
    };
    if let Err(c) = write_file(&out_dir.join(format!("crooked_m{m}.json")), &json) {
        return c;
    }
    if let Err(c) = write_file(&out_dir.join(format!("crooked_m{m}.svg")), &svg_of(&curve, m)) {
        return c;
    }
    if !crooked || winding != Some(1) {
        return fail(EXIT_VERIFY, format!("m = {m}: stably crooked {crooked}, winding {winding:?}"));
    }
    println!("m = {m}: stably crooked, winding 1, {} vertices", curve.len());
    ExitCode::SUCCESS
}

fn margins_table(report: &ConditionsReport) -> String {
    let mut out = String::from("level  cond  status   margin        detail\n");
    for l in &report.levels {
        for c in &l.conditions {
            let status = if c.vacuous { "vacuous" } else if c.passed { "pass" } else { "FAIL" };
            let margin = c.margin.map_or("unbounded".to_string(), |m| format!("{m:.4e}"));
            let _ = writeln!(out, "{:<6} ({})   {:<8} {:<13} {}", l.level, c.id, status, margin, c.detail);
        }
    }
    for c in &report.invariants {
        let _ = writeln!(out, "{:<18} {:<5} {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
    }
    out
}

fn cmd_build(config: Option<&Path>, out_dir: &Path, levels: Option<usize>, resolution: Option<usize>) -> ExitCode {
    let mut cfg: BuildConfig = match config {
        Some(p) => {
            let text = match std::fs::read_to_string(p) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_IO, format!("{}: {e}", p.display())),
            };
            match toml::from_str(&text) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_IO, format!("{}: {e}", p.display())),
            }
        }
        None => BuildConfig::default(),
    };
    if let Some(l) = levels {
        cfg.levels = l;
    }
    if let Some(r) = resolution {
        cfg.render.resolution = r;
    }
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return fail(EXIT_IO, format!("{}: {e}", out_dir.display()));
    }
    match toml::to_string(&cfg) {
        Ok(t) => {
            if let Err(c) = write_file(&out_dir.join("config.resolved.toml"), &t) {
                return c;
            }
        }
        Err(e) => return fail(EXIT_IO, e),
    }
    let mut state = match init_tower_with(cfg.h, cfg.q1, cfg.tower.clone()) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_NUMERIC, format!("level 1, stage init: {e}")),
    };
    let mut stage_error = None;
    while state.levels.len() < cfg.levels {
        info!("advancing to level {}", state.levels.len() + 1);
        match advance_level(&state, None) {
            Ok(s) => state = s,
            Err(e) => {
                stage_error = Some(e);
                break;
            }
        }
    }
    let json = match state.to_json() {
        Ok(j) => j,
        Err(e) => return fail(EXIT_IO, e),
    };
    if let Err(c) = write_file(&out_dir.join("state.json"), &json) {
        return c;
    }
    let report = check_conditions(&state);
    let mut text = margins_table(&report);
    let rot = rotation_number_report(&state);
    let _ = writeln!(text, "theta_{} = {}  cf {:?}  tail <= {}", state.levels.len(), rot.theta, rot.continued_fraction, rot.tail_bound);
    let compact = check_compact_containment(&state);
    let _ = writeln!(text, "compact containment: {} (outer radii {:?})", compact.passed, compact.outer_radii);
    if let Err(c) = write_file(&out_dir.join("ledger.txt"), &text) {
        return c;
    }
    print!("{text}");
    let mut stats = Vec::new();
    for k in 1..=state.levels.len() {
        match render_approximant(&state, k, cfg.render.resolution, cfg.render.margin) {
            Ok((raster, s)) => {
                if let Err(e) = raster.write_png(&out_dir.join(format!("approximant_{k}.png"))) {
                    return fail(EXIT_IO, e);
                }
                stats.push(s);
            }
            Err(e) => eprintln!("warning: level {k} not rendered: {e}"),
        }
    }
    let csv = match std::fs::File::create(out_dir.join("regions.csv")) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_IO, e),
    };
    if let Err(e) = write_stats_csv(csv, &stats) {
        return fail(EXIT_IO, e);
    }
    if let Some(e) = stage_error {
        return fail(EXIT_NUMERIC, e);
    }
    if !report.passed() {
        return fail(EXIT_VERIFY, format!("failed checks: {}", report.failures().join(", ")));
    }
    ExitCode::SUCCESS
}

fn cmd_verify(path: &Path, seed: u64) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_IO, format!("{}: {e}", path.display())),
    };
    let state = match TowerState::from_json(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_IO, format!("{}: parse error: {e}", path.display())),
    };
    let mut report = check_conditions(&state);
    report.invariants.extend(invariant_suite(&state, seed, 200));
    print!("{}", margins_table(&report));
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_VERIFY, format!("failed checks: {}", report.failures().join(", ")))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIEGEL_FORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            return fail(EXIT_IO, e);
        }
    }
    match &cli.command {
        Command::Crooked { m, out_dir } => cmd_crooked(*m, out_dir),
        Command::Build { config, out_dir, levels, resolution } => cmd_build(config.as_deref(), out_dir, *levels, *resolution),
        Command::Verify { state } => cmd_verify(state, cli.seed),
    }
}
