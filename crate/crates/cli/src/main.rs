use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use flatlab_core::fields::{fld1, Battery, Grid2, ScalarField, SymField, VectorField, BATTERY_ORDER};
use flatlab_core::mollify::ScaleLadder;
use flatlab_core::pipeline::{self, ExperimentConfig};
use flatlab_core::potential::reconstruct_potential;
use flatlab_core::ruling::{check_developability, compare_rulings, RulingConfig};
use flatlab_core::shape::{metric_deviation, normal_deviation, residual_sweep, MollifiedImmersion};
use flatlab_core::surfaces::{generate, ImmersionField, SurfaceSpec};
use flatlab_core::weakdet::{degree_scan, ma_pairing, NodeRect, DEFAULT_DELTAS, SCAN_SEED, STENCIL_MARGIN_CELLS};
use flatlab_core::FlatError;
use serde_json::json;

/// Exit status when a pipeline gate fails.
const GATE_FAILURE: u8 = 1;
const ALL_INVALID: u8 = 4;

#[derive(Parser)]
#[command(name = "flatlab", version, about = "Mollified isometric immersion laboratory")]
struct Cli {
    /// Experiment config (JSON); supplies defaults for subcommand options.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a corpus surface; writes u and the `.du.fld` sidecar.
    Gen(GenArgs),
    /// Mollified second fundamental forms over a scale ladder.
    Sff(LadderArgs),
    /// Metric, Codazzi and Gauss residuals per scale, as CSV.
    Residuals(LadderArgs),
    /// Reconstruct v with hess v close to a form field.
    Potential(PotentialArgs),
    /// Very weak Hessian determinant of v against the battery, as CSV.
    Ma(MaArgs),
    /// Brouwer degree scan of grad v and its perturbations.
    Degree(DegreeArgs),
    /// Ruling detection on a gradient-type field.
    Ruling(RulingArgs),
    /// Compare the rulings of grad u and grad v.
    Compare(CompareArgs),
    /// Full pipeline from a config.
    Run,
    /// Flatten a run bundle into CSV and print the gate table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    surface: Option<String>,
    /// Surface parameter `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// `x0,y0,x1,y1`
    #[arg(long, value_parser = parse_domain, allow_hyphen_values = true)]
    domain: Option<[f64; 4]>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct LadderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// `eps0,count,ratio`
    #[arg(long)]
    eps_ladder: Option<ScaleLadder>,
}

#[derive(Args)]
struct PotentialArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// `default`, or `q=<order>` for the default placement with another bump order.
    #[arg(long, default_value = "default")]
    battery: String,
}

#[derive(Args)]
struct DegreeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Perturbation sizes; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RulingOpts {
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    tol_w: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct RulingArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    opts: RulingOpts,
}

#[derive(Args)]
struct CompareArgs {
    /// Immersion file; its `.du.fld` sidecar must exist.
    #[arg(long)]
    u: PathBuf,
    #[arg(long)]
    v: PathBuf,
    #[command(flatten)]
    opts: RulingOpts,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let v = v.trim().parse().map_err(|_| format!("cannot parse value in {s:?}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_domain(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|_| format!("expected x0,y0,x1,y1, got {s:?}"))
}

struct Ctx {
    config: Option<ExperimentConfig>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out(&self, what: &str) -> anyhow::Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("{what} needs --out"))
    }

    fn ladder(&self, given: Option<ScaleLadder>) -> anyhow::Result<ScaleLadder> {
        given
            .or(self.config.as_ref().map(|c| c.eps_ladder))
            .ok_or_else(|| anyhow!("--eps-ladder or --config is required"))
    }

    fn ruling(&self, o: &RulingOpts) -> RulingConfig {
        let base = self.config.as_ref().map(|c| c.ruling).unwrap_or_default();
        RulingConfig {
            rho: o.rho.unwrap_or(base.rho),
            tol: o.tol.unwrap_or(base.tol),
            tol_w: o.tol_w.unwrap_or(base.tol_w),
            stride: o.stride.unwrap_or(base.stride),
            seed: base.seed,
        }
    }
}

fn sidecar(u: &Path) -> PathBuf {
    let s = u.to_string_lossy();
    PathBuf::from(match s.strip_suffix(".fld") {
        Some(stem) => format!("{stem}.du.fld"),
        None => format!("{s}.du.fld"),
    })
}

fn load_immersion(path: &Path) -> anyhow::Result<ImmersionField> {
    let u = fld1::read(path).with_context(|| format!("reading {}", path.display()))?;
    let side = sidecar(path);
    let du = fld1::read(&side).with_context(|| format!("reading derivative sidecar {}", side.display()))?;
    Ok(ImmersionField::from_stacked(u, &du)?)
}

fn load_scalar(path: &Path) -> anyhow::Result<ScalarField> {
    let f = fld1::read(path).with_context(|| format!("reading {}", path.display()))?;
    if f.ncomp() != 1 {
        return Err(FlatError::Format(format!("{} has {} components, expected 1", path.display(), f.ncomp())).into());
    }
    Ok(f.comp(0).clone())
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gen(ctx: &Ctx, a: &GenArgs) -> anyhow::Result<u8> {
    let cfg = ctx.config.as_ref();
    let spec = match (&a.surface, cfg) {
        (Some(kind), _) => SurfaceSpec::from_params(kind, &a.params)?,
        (None, Some(c)) => c.surface.clone(),
        (None, None) => bail!("--surface or --config is required"),
    };
    let [x0, y0, x1, y1] = a.domain.or(cfg.map(|c| c.domain)).unwrap_or([0.0, 0.0, 1.0, 1.0]);
    let n = a.n.or(cfg.map(|c| c.n)).ok_or_else(|| anyhow!("--n or --config is required"))?;
    let grid = Grid2::from_bounds(x0, y0, x1, y1, n, n)?;
    let u = generate(&spec, &grid)?;
    let out = ctx.out("gen")?;
    fld1::write(out, &u.u)?;
    fld1::write(sidecar(out), &u.du_stacked())?;
    log::info!("wrote {} and its sidecar", out.display());
    Ok(0)
}

fn sff(ctx: &Ctx, a: &LadderArgs) -> anyhow::Result<u8> {
    let u = load_immersion(&a.input)?;
    let ladder = ctx.ladder(a.eps_ladder)?;
    ladder.validate(u.grid())?;
    let dir = ctx.out("sff")?;
    std::fs::create_dir_all(dir)?;
    let mut forms = Vec::new();
    for (k, eps) in ladder.scales().into_iter().enumerate() {
        let m = MollifiedImmersion::new(&u, eps)?;
        let f = m.second_form();
        let alt = m.alternative_form();
        let name = format!("A_{k}.fld");
        fld1::write(dir.join(&name), &VectorField::from_components(vec![f.a.xx.clone(), f.a.xy.clone(), f.a.yy.clone()])?)?;
        forms.push(json!({ "eps": eps, "file": name, "form_sup": f.a.max_abs_inset(0), "alternative_gap": alt.discrepancy }));
    }
    let rates = json!({
        "metric_deviation": metric_deviation(&u, &ladder)?,
        "normal_deviation": normal_deviation(&u, &ladder)?,
        "forms": forms,
    });
    write_json(Some(&dir.join("rates.json")), &rates)?;
    Ok(0)
}

fn residuals(ctx: &Ctx, a: &LadderArgs) -> anyhow::Result<u8> {
    let u = load_immersion(&a.input)?;
    let rows = residual_sweep(&u, &ctx.ladder(a.eps_ladder)?)?;
    let mut text = String::from("eps,metric_dev_C1,codazzi_sup,gauss_pairing_max_over_battery,gauss_identity_sup\n");
    for r in rows {
        text += &format!(
            "{},{},{},{},{}\n",
            r.eps, r.metric_dev_c1, r.codazzi_sup, r.gauss_pairing_max_over_battery, r.gauss_identity_sup
        );
    }
    write_text(ctx.out.as_deref(), &text)?;
    Ok(0)
}

fn potential(ctx: &Ctx, a: &PotentialArgs) -> anyhow::Result<u8> {
    let f = fld1::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if f.ncomp() != 3 {
        return Err(FlatError::Format(format!("form field needs 3 components (xx, xy, yy), found {}", f.ncomp())).into());
    }
    let form = SymField::new(f.comp(0).clone(), f.comp(1).clone(), f.comp(2).clone())?;
    let r = reconstruct_potential(&form)?;
    fld1::write(ctx.out("potential")?, &VectorField::from_components(vec![r.v.clone()])?)?;
    if let Some(p) = &a.report {
        write_json(Some(p), &serde_json::to_value(r.report(&form))?)?;
    }
    Ok(0)
}

fn ma(ctx: &Ctx, a: &MaArgs) -> anyhow::Result<u8> {
    let v = load_scalar(&a.input)?;
    let order = match a.battery.as_str() {
        "default" => ctx.config.as_ref().map(|c| c.battery.order).unwrap_or(BATTERY_ORDER),
        other => other
            .strip_prefix("q=")
            .and_then(|q| q.parse().ok())
            .ok_or_else(|| FlatError::InvalidArgument(format!("unknown battery {other:?}")))?,
    };
    let base = Battery::for_grid(v.grid(), STENCIL_MARGIN_CELLS + 1)?;
    let mut text = String::from("psi_id,pairing\n");
    for (k, p) in base.members.iter().enumerate() {
        let psi = flatlab_core::fields::TestFunction::new(p.center, p.radius, order)?;
        text += &format!("{k},{}\n", ma_pairing(&v, &psi)?);
    }
    write_text(ctx.out.as_deref(), &text)?;
    Ok(0)
}

fn degree(ctx: &Ctx, a: &DegreeArgs) -> anyhow::Result<u8> {
    let v = load_scalar(&a.input)?;
    let cfg = ctx.config.as_ref();
    let deltas = if !a.delta.is_empty() {
        a.delta.clone()
    } else {
        cfg.map(|c| c.degree.deltas.clone()).unwrap_or_else(|| DEFAULT_DELTAS.to_vec())
    };
    let samples = a.samples.or(cfg.map(|c| c.degree.samples)).unwrap_or(50);
    let seed = a.seed.or(cfg.map(|c| c.seed)).unwrap_or(SCAN_SEED);
    let rect = NodeRect::full(v.grid()).inset(STENCIL_MARGIN_CELLS)?;
    let scan = degree_scan(&v, &rect, &deltas, samples, seed)?;
    write_json(ctx.out.as_deref(), &serde_json::to_value(&scan)?)?;
    Ok(if scan.all_invalid() { ALL_INVALID } else { 0 })
}

fn ruling(ctx: &Ctx, a: &RulingArgs) -> anyhow::Result<u8> {
    let f = fld1::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let r = check_developability(&f, &ctx.ruling(&a.opts))?;
    let out = ctx.out.as_deref();
    let raster = match out {
        Some(p) => {
            let name = p.with_extension("classes.fld");
            fld1::write(&name, &r.class_raster()?)?;
            Some(name.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        }
        None => None,
    };
    let segments: Vec<_> = r
        .segments
        .iter()
        .map(|s| json!({ "polyline": [s.a, s.b], "theta": s.theta, "truncated": s.truncated }))
        .collect();
    let doc = json!({
        "verdict": if r.developable { "developable" } else { "not_developable" },
        "tol": r.tol,
        "tol_w": r.tol_w,
        "counts": r.counts,
        "min_margin_ratio": r.min_margin_ratio,
        "crossings": r.crossings,
        "lipschitz": r.lipschitz,
        "weak_residual": r.weak_residual,
        "sensitivity_residual": r.sensitivity_residual,
        "class_raster": raster,
        "segments": segments,
    });
    write_json(out, &doc)?;
    Ok(0)
}

fn compare(ctx: &Ctx, a: &CompareArgs) -> anyhow::Result<u8> {
    let u = load_immersion(&a.u)?;
    let v = load_scalar(&a.v)?;
    let c = compare_rulings(&u, &v, &ctx.ruling(&a.opts))?;
    let doc = json!({
        "u_developable": c.u_developable,
        "v_developable": c.v_developable,
        "verdicts_agree": c.verdicts_agree,
        "compared": c.compared,
        "max_angle_deg": c.max_angle_deg,
        "mean_angle_deg": c.mean_angle_deg,
    });
    write_json(ctx.out.as_deref(), &doc)?;
    Ok(0)
}

fn run(ctx: &Ctx) -> anyhow::Result<u8> {
    let cfg = ctx.config.as_ref().ok_or_else(|| FlatError::InvalidArgument("run needs --config".into()))?;
    let outcome = pipeline::run_pipeline(cfg, ctx.out.as_deref())?;
    let rows = pipeline::report(&outcome.out_dir)?;
    print!("{}", pipeline::render_table(&rows));
    println!("verdict: {}", outcome.summary.verdict);
    Ok(if outcome.degree_all_invalid() {
        ALL_INVALID
    } else if outcome.passed() {
        0
    } else {
        GATE_FAILURE
    })
}

fn report(ctx: &Ctx, a: &ReportArgs) -> anyhow::Result<u8> {
    let rows = pipeline::report(&a.input)?;
    if let Some(out) = &ctx.out {
        let file = std::fs::File::create(out).with_context(|| format!("writing {}", out.display()))?;
        pipeline::write_report_csv(&rows, file)?;
    }
    print!("{}", pipeline::render_table(&rows));
    Ok(0)
}

fn dispatch(cli: &Cli) -> anyhow::Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config = match &cli.config {
        Some(p) => Some(ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?),
        None => None,
    };
    let ctx = Ctx { config, out: cli.out.clone() };
    match &cli.cmd {
        Cmd::Gen(a) => gen(&ctx, a),
        Cmd::Sff(a) => sff(&ctx, a),
        Cmd::Residuals(a) => residuals(&ctx, a),
        Cmd::Potential(a) => potential(&ctx, a),
        Cmd::Ma(a) => ma(&ctx, a),
        Cmd::Degree(a) => degree(&ctx, a),
        Cmd::Ruling(a) => ruling(&ctx, a),
        Cmd::Compare(a) => compare(&ctx, a),
        Cmd::Run => run(&ctx),
        Cmd::Report(a) => report(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<FlatError>()).map(pipeline::exit_code).unwrap_or(2);
            ExitCode::from(code as u8)
        }
    }
}
