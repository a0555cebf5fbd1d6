//! End-to-end experiment runs: config, staged execution, acceptance gates, and
//! the flat CSV report.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{FlatError, Result};
use crate::fields::{fld1, pair, Battery, Grid2, ScalarField, VectorField};
use crate::mollify::{RateFit, ScaleLadder};
use crate::potential::{gradient_holder_diagnostic, reconstruct_potential, relative_error_mod_affine, PotentialReport};
use crate::ruling::{check_developability, compare_rulings, max_direction_error, ClassCounts, LipschitzStats, RulingConfig};
use crate::shape::{battery_at, metric_deviation_with, normal_deviation, residual_sweep, MetricDeviation, MollifiedImmersion, ResidualRow};
use crate::surfaces::{generate, isometry_defect, SurfaceSpec};
use crate::weakdet::{component_pairing, degree_scan, ma_pairing, DegreeScan, NodeRect, STENCIL_MARGIN_CELLS};

pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_COLUMNS: [&str; 6] = ["quantity", "eps", "value", "fitted_exponent", "required_exponent", "pass"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    /// Bump exponent of the test functions.
    pub order: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeSpec {
    pub deltas: Vec<f64>,
    pub samples: usize,
}

/// Acceptance thresholds. Every gate is `value <= bound` or `value >= bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub isometry_defect: f64,
    /// Required metric C1 exponent is `2 alpha - 1`; this is the floor on the fit quality.
    pub metric_fit_residual: f64,
    pub codazzi_sup: f64,
    /// Relative to `|psi|_{W^{1,1}}`.
    pub gauss_pairing: f64,
    /// Relative L2 distance of `v` to the analytic potential, modulo affine maps.
    pub potential_l2: f64,
    /// `hessian_gap <= max(h2_factor h^2, eps2_factor eps^2) |A|_0`
    pub hessian_gap_h2_factor: f64,
    pub hessian_gap_eps2_factor: f64,
    /// Relative to `|psi|_{W^{1,1}}`.
    pub ma_pairing: f64,
    pub degree_max_fails: usize,
    pub degree_min_valid: usize,
    pub ruling_angle_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub surface: SurfaceSpec,
    /// `[x0, y0, x1, y1]`
    pub domain: [f64; 4],
    /// Nodes per axis.
    pub n: usize,
    pub eps_ladder: ScaleLadder,
    /// Scale of the potential, degree and ruling stages.
    pub working_eps: f64,
    pub alpha: f64,
    pub battery: BatterySpec,
    pub degree: DegreeSpec,
    pub ruling: RulingConfig,
    pub tolerances: Tolerances,
    pub output: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<Grid2> {
        let [x0, y0, x1, y1] = self.domain;
        Grid2::from_bounds(x0, y0, x1, y1, self.n, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlatError::InvalidArgument(m));
        let grid = self.grid()?;
        self.surface.validate(&grid)?;
        ScaleLadder::new(self.eps_ladder.eps0, self.eps_ladder.count, self.eps_ladder.ratio)?;
        if !(self.working_eps > 0.0) {
            return bad(format!("working_eps must be positive, got {}", self.working_eps));
        }
        if !(self.alpha > 0.5 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (1/2, 1], got {}", self.alpha));
        }
        if self.degree.samples == 0 || self.degree.deltas.iter().any(|d| !(*d > 0.0)) {
            return bad("degree stage needs positive deltas and samples".into());
        }
        if !(self.ruling.rho > 0.0 && self.ruling.tol > 0.0 && self.ruling.tol_w > 0.0) {
            return bad("ruling radius and tolerances must be positive".into());
        }
        Ok(())
    }

    /// `2 alpha - 1`
    pub fn required_metric_exponent(&self) -> f64 {
        2.0 * self.alpha - 1.0
    }
}

/// One acceptance check. Serialized as a single report row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub quantity: String,
    pub eps: Option<f64>,
    pub value: f64,
    pub fitted_exponent: Option<f64>,
    pub required_exponent: Option<f64>,
    pub bound: Option<f64>,
    pub pass: bool,
}

/// Raw measurements the gates are evaluated on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub h: f64,
    pub working_eps: f64,
    pub isometry_defect: f64,
    pub metric: Option<MetricDeviation>,
    pub codazzi_sup: Option<f64>,
    pub gauss_pairing: Option<f64>,
    pub potential_l2: Option<f64>,
    pub hessian_gap: Option<f64>,
    pub form_sup: Option<f64>,
    pub ma_pairing: Option<f64>,
    pub degree: Option<DegreeScan>,
    pub ruling_developable: Option<bool>,
    pub verdicts_agree: Option<bool>,
    pub max_angle_deg: Option<f64>,
}

fn upper(quantity: &str, eps: Option<f64>, value: f64, bound: f64) -> Gate {
    Gate {
        quantity: quantity.into(),
        eps,
        value,
        fitted_exponent: None,
        required_exponent: None,
        bound: Some(bound),
        pass: value <= bound,
    }
}

fn flag(quantity: &str, ok: bool) -> Gate {
    Gate {
        quantity: quantity.into(),
        eps: None,
        value: if ok { 1.0 } else { 0.0 },
        fitted_exponent: None,
        required_exponent: None,
        bound: None,
        pass: ok,
    }
}

/// Gates for whatever stages produced measurements.
pub fn evaluate_gates(m: &Measured, tol: &Tolerances, alpha: f64) -> Vec<Gate> {
    let mut gates = vec![upper("isometry_defect", None, m.isometry_defect, tol.isometry_defect)];
    let eps = Some(m.working_eps);
    if let Some(md) = &m.metric {
        let need = 2.0 * alpha - 1.0;
        let rate = |name: &str, fit: &RateFit| Gate {
            quantity: name.into(),
            eps: None,
            value: fit.values.last().copied().unwrap_or(0.0),
            fitted_exponent: fit.exponent,
            required_exponent: Some(need),
            bound: None,
            pass: fit.effective_exponent() >= need,
        };
        gates.push(rate("metric_dev_C1", &md.c1));
        gates.push(upper("metric_dev_C1_fit_residual", None, md.c1.residual, tol.metric_fit_residual));
    }
    if let Some(v) = m.codazzi_sup {
        gates.push(upper("codazzi_sup", eps, v, tol.codazzi_sup));
    }
    if let Some(v) = m.gauss_pairing {
        gates.push(upper("gauss_pairing", eps, v, tol.gauss_pairing));
    }
    if let Some(v) = m.potential_l2 {
        gates.push(upper("potential_l2_mod_affine", eps, v, tol.potential_l2));
    }
    if let (Some(v), Some(a)) = (m.hessian_gap, m.form_sup) {
        let bound = (tol.hessian_gap_h2_factor * m.h * m.h).max(tol.hessian_gap_eps2_factor * m.working_eps * m.working_eps) * a;
        gates.push(upper("hessian_gap", eps, v, bound));
    }
    if let Some(v) = m.ma_pairing {
        gates.push(upper("ma_pairing", eps, v, tol.ma_pairing));
    }
    if let Some(d) = &m.degree {
        gates.push(upper("degree_fails", eps, d.fails() as f64, tol.degree_max_fails as f64));
        let vacuous = d.degenerate_image;
        let valid = |s: &crate::weakdet::FormulaSummary| (s.pass + s.fail) as f64;
        let mut least = if vacuous { f64::INFINITY } else { valid(&d.gradient) };
        for s in &d.perturbed {
            least = least.min(valid(s));
        }
        let min_valid = tol.degree_min_valid as f64;
        gates.push(Gate {
            quantity: "degree_min_valid".into(),
            eps,
            value: if least.is_finite() { least } else { -1.0 },
            fitted_exponent: None,
            required_exponent: None,
            bound: Some(min_valid),
            pass: least >= min_valid,
        });
    }
    if let Some(ok) = m.ruling_developable {
        gates.push(flag("ruling_developable", ok));
    }
    if let Some(ok) = m.verdicts_agree {
        gates.push(flag("ruling_verdicts_agree", ok));
        let a = m.max_angle_deg.unwrap_or(0.0);
        gates.push(upper("ruling_max_angle_deg", eps, a, tol.ruling_angle_deg));
    }
    gates
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSection {
    pub report: PotentialReport,
    pub oracle_l2_mod_affine: Option<f64>,
    pub gradient_holder: crate::potential::GradientHolder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaSection {
    /// `|Det D^2 v [psi]| / |psi|_{W^{1,1}}` per battery member.
    pub pairings: Vec<f64>,
    /// Per-component pairings of the mollified immersion, same normalization.
    pub component_pairings: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulingSection {
    pub developable: bool,
    pub tol: f64,
    pub tol_w: f64,
    pub counts: ClassCounts,
    pub min_margin_ratio: Option<f64>,
    pub segments: usize,
    pub truncated_segments: usize,
    pub crossings: usize,
    pub lipschitz: LipschitzStats,
    pub weak_residual: f64,
    pub sensitivity_residual: Option<f64>,
    pub max_direction_error_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSection {
    pub u_developable: bool,
    pub v_developable: bool,
    pub verdicts_agree: bool,
    pub compared: usize,
    pub max_angle_deg: Option<f64>,
    pub mean_angle_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub surface: String,
    pub grid: Grid2,
    pub working_eps: f64,
    /// Set when a failed gate ended the run before the last stage.
    pub stopped_after: Option<String>,
    pub isometry_defect: f64,
    pub metric: Option<MetricDeviation>,
    pub normal: Option<RateFit>,
    pub residuals: Vec<ResidualRow>,
    pub potential: Option<PotentialSection>,
    pub ma: Option<MaSection>,
    pub degree: Option<DegreeScan>,
    pub ruling: Option<RulingSection>,
    pub compare: Option<CompareSection>,
    pub gates: Vec<Gate>,
    pub all_gates_pass: bool,
    /// `developable`, `not_developable` or `undetermined`.
    pub verdict: String,
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
}

/// Outcome of `run_pipeline`: the summary, also written to `summary.json`.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.summary.all_gates_pass
    }

    pub fn degree_all_invalid(&self) -> bool {
        self.summary.degree.as_ref().is_some_and(|d| d.all_invalid())
    }
}

struct Stages {
    out: PathBuf,
    artifacts: Vec<String>,
}

impl Stages {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {stage}");
        f(self).map_err(|e| FlatError::Stage {
            stage: stage.into(),
            completed: self.artifacts.iter().map(|a| self.out.join(a).display().to_string()).collect(),
            source: Box::new(e),
        })
    }

    fn write_field(&mut self, name: &str, field: &VectorField) -> Result<()> {
        fld1::write(self.out.join(name), field)?;
        self.artifacts.push(name.into());
        Ok(())
    }
}

const NOTES: [&str; 2] = [
    "fitted exponents bound O(eps^k) behaviour only; the little-o refinement cannot be certified from finitely many scales",
    "ruling verdicts hold at the stated tolerances, not in the exact sense",
];

/// Run every stage of `cfg`, writing artifacts and `summary.json` into `out`
/// (the config's output directory when `None`).
pub fn run_pipeline(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone());
    std::fs::create_dir_all(&out)?;
    let mut st = Stages { out: out.clone(), artifacts: Vec::new() };
    let grid = cfg.grid()?;
    let eps = cfg.working_eps;
    let mut m = Measured { h: grid.h_max(), working_eps: eps, ..Measured::default() };
    let mut summary = Summary {
        name: cfg.name.clone(),
        surface: cfg.surface.name().into(),
        grid,
        working_eps: eps,
        stopped_after: None,
        isometry_defect: 0.0,
        metric: None,
        normal: None,
        residuals: Vec::new(),
        potential: None,
        ma: None,
        degree: None,
        ruling: None,
        compare: None,
        gates: Vec::new(),
        all_gates_pass: false,
        verdict: "undetermined".into(),
        artifacts: Vec::new(),
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
    };

    let u = st.run("gen", |_| generate(&cfg.surface, &grid))?;
    st.run("gen", |st| {
        st.write_field("u.fld", &u.u)?;
        st.write_field("u.du.fld", &u.du_stacked())
    })?;
    m.isometry_defect = isometry_defect(&u);
    summary.isometry_defect = m.isometry_defect;
    if m.isometry_defect > cfg.tolerances.isometry_defect {
        summary.stopped_after = Some("gen".into());
        return finish(cfg, summary, &m, st);
    }

    let (metric, normal, rows) = st.run("residuals", |_| {
        let metric = metric_deviation_with(&u, &cfg.eps_ladder, cfg.tolerances.isometry_defect)?;
        let normal = normal_deviation(&u, &cfg.eps_ladder)?;
        Ok((metric, normal, residual_sweep(&u, &cfg.eps_ladder)?))
    })?;
    m.metric = Some(metric.clone());
    summary.metric = Some(metric);
    summary.normal = Some(normal);
    summary.residuals = rows;

    let mi = st.run("sff", |_| MollifiedImmersion::new(&u, eps))?;
    let form = mi.second_form();
    st.run("sff", |st| {
        m.codazzi_sup = Some(mi.codazzi()?.sup);
        let (_, battery) = battery_at(&grid, eps)?;
        let battery = reorder(battery, cfg.battery.order)?;
        let det = form.a.det();
        let mut gp = 0.0f64;
        for psi in &battery.members {
            gp = gp.max(pair(&det, psi)?.abs() / psi.w11_norm(mi.grid()));
        }
        m.gauss_pairing = Some(gp);
        let a = &form.a;
        st.write_field("A.fld", &VectorField::from_components(vec![a.xx.clone(), a.xy.clone(), a.yy.clone()])?)
    })?;

    let pot = st.run("potential", |_| reconstruct_potential(&form.a))?;
    st.run("potential", |st| {
        let report = pot.report(&form.a);
        m.hessian_gap = Some(report.hessian_gap);
        m.form_sup = Some(report.form_sup);
        let vg = *pot.v.grid();
        let oracle = match cfg.surface.potential(0.0, 0.0) {
            Some(_) => {
                let want = ScalarField::from_fn(vg, |x, y| cfg.surface.potential(x, y).unwrap_or(0.0))?;
                Some(relative_error_mod_affine(&pot.v, &want)?)
            }
            None => None,
        };
        m.potential_l2 = oracle;
        let holder = gradient_holder_diagnostic(&pot.v, cfg.alpha, &cfg.eps_ladder.scales())?;
        summary.potential = Some(PotentialSection { report, oracle_l2_mod_affine: oracle, gradient_holder: holder });
        st.write_field("v.fld", &VectorField::from_components(vec![pot.v.clone()])?)
    })?;
    let v = &pot.v;

    st.run("ma", |_| {
        let battery = reorder(Battery::for_grid(v.grid(), STENCIL_MARGIN_CELLS + 1)?, cfg.battery.order)?;
        let mut pairings = Vec::with_capacity(battery.len());
        let mut comps = Vec::with_capacity(battery.len());
        for psi in &battery.members {
            let w = psi.w11_norm(v.grid());
            pairings.push(ma_pairing(v, psi)?.abs() / w);
            comps.push(component_pairing(&u, eps, psi)?.map(|c| c.abs() / w));
        }
        m.ma_pairing = Some(pairings.iter().cloned().fold(0.0, f64::max));
        summary.ma = Some(MaSection { pairings, component_pairings: comps });
        Ok(())
    })?;

    st.run("degree", |_| {
        let rect = NodeRect::full(v.grid()).inset(STENCIL_MARGIN_CELLS)?;
        let scan = degree_scan(v, &rect, &cfg.degree.deltas, cfg.degree.samples, cfg.seed)?;
        m.degree = Some(scan.clone());
        summary.degree = Some(scan);
        Ok(())
    })?;

    st.run("ruling", |st| {
        let du = u.du_stacked();
        let r = check_developability(&du, &cfg.ruling)?;
        let err = max_direction_error(&r, |x, y| cfg.surface.ruling_angle(x, y));
        m.ruling_developable = Some(r.developable);
        summary.ruling = Some(RulingSection {
            developable: r.developable,
            tol: r.tol,
            tol_w: r.tol_w,
            counts: r.counts,
            min_margin_ratio: r.min_margin_ratio,
            segments: r.segments.len(),
            truncated_segments: r.segments.iter().filter(|s| s.truncated.contains(&true)).count(),
            crossings: r.crossings,
            lipschitz: r.lipschitz,
            weak_residual: r.weak_residual,
            sensitivity_residual: r.sensitivity_residual,
            max_direction_error_deg: err,
        });
        st.write_field("ruling_u.fld", &r.class_raster()?)
    })?;

    st.run("compare", |st| {
        let c = compare_rulings(&u, v, &cfg.ruling)?;
        m.verdicts_agree = Some(c.verdicts_agree);
        m.max_angle_deg = c.max_angle_deg;
        summary.compare = Some(CompareSection {
            u_developable: c.u_developable,
            v_developable: c.v_developable,
            verdicts_agree: c.verdicts_agree,
            compared: c.compared,
            max_angle_deg: c.max_angle_deg,
            mean_angle_deg: c.mean_angle_deg,
        });
        st.write_field("ruling_v.fld", &c.v_report.class_raster()?)
    })?;

    finish(cfg, summary, &m, st)
}

fn reorder(battery: Battery, order: u32) -> Result<Battery> {
    let members = battery
        .members
        .iter()
        .map(|p| crate::fields::TestFunction::new(p.center, p.radius, order))
        .collect::<Result<Vec<_>>>()?;
    Ok(Battery { members })
}

fn finish(cfg: &ExperimentConfig, mut summary: Summary, m: &Measured, mut st: Stages) -> Result<RunOutcome> {
    summary.gates = evaluate_gates(m, &cfg.tolerances, cfg.alpha);
    summary.all_gates_pass = summary.gates.iter().all(|g| g.pass);
    summary.verdict = match (&summary.ruling, &summary.compare) {
        (Some(r), Some(c)) if r.developable && c.verdicts_agree => "developable",
        (Some(r), _) if !r.developable => "not_developable",
        _ => "undetermined",
    }
    .into();
    st.artifacts.push(SUMMARY_FILE.into());
    summary.artifacts = st.artifacts.clone();
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(st.out.join(SUMMARY_FILE), text + "\n")?;
    Ok(RunOutcome { summary, out_dir: st.out })
}

/// One CSV row of the flattened bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub quantity: String,
    pub eps: Option<f64>,
    pub value: String,
    pub fitted_exponent: Option<f64>,
    pub required_exponent: Option<f64>,
    pub pass: Option<bool>,
}

/// A gate object: reported as one row rather than one row per field.
fn is_gate(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.contains_key("quantity") && o.contains_key("pass") && o.contains_key("value"))
}

/// Leaves of a JSON document, counting each gate object as one leaf.
pub fn leaf_count(v: &Value) -> usize {
    if is_gate(v) {
        return 1;
    }
    match v {
        Value::Object(o) => o.values().map(leaf_count).sum(),
        Value::Array(a) => a.iter().map(leaf_count).sum(),
        _ => 1,
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn flatten(v: &Value, path: &str, eps: Option<f64>, rows: &mut Vec<ReportRow>) {
    if is_gate(v) {
        rows.push(ReportRow {
            quantity: scalar_text(&v["quantity"]),
            eps: v["eps"].as_f64(),
            value: scalar_text(&v["value"]),
            fitted_exponent: v["fitted_exponent"].as_f64(),
            required_exponent: v["required_exponent"].as_f64(),
            pass: v["pass"].as_bool(),
        });
        return;
    }
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match v {
        Value::Object(o) => {
            // rows of an eps-indexed table carry their scale
            let eps = o.get("eps").and_then(Value::as_f64).or(eps);
            for (k, x) in o {
                flatten(x, &join(k), eps, rows);
            }
        }
        Value::Array(a) => {
            for (k, x) in a.iter().enumerate() {
                flatten(x, &join(&k.to_string()), eps, rows);
            }
        }
        leaf => rows.push(ReportRow {
            quantity: path.to_string(),
            eps,
            value: scalar_text(leaf),
            fitted_exponent: None,
            required_exponent: None,
            pass: None,
        }),
    }
}

pub fn report_rows(bundle: &Value) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    flatten(bundle, "", None, &mut rows);
    rows
}

pub fn write_report_csv(rows: &[ReportRow], w: impl Write) -> Result<()> {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.quantity.clone(),
            opt(r.eps),
            r.value.clone(),
            opt(r.fitted_exponent),
            opt(r.required_exponent),
            r.pass.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Human-readable table of the gate rows.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut s = format!("{:<30} {:>12} {:>14} {:>10} {:>10} {}\n", "quantity", "eps", "value", "fitted", "required", "pass");
    let f = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    for r in rows.iter().filter(|r| r.pass.is_some()) {
        let value = r.value.parse::<f64>().map(|v| format!("{v:.4e}")).unwrap_or_else(|_| r.value.clone());
        s += &format!(
            "{:<30} {:>12} {:>14} {:>10} {:>10} {}\n",
            r.quantity,
            r.eps.map(|e| format!("{e}")).unwrap_or_else(|| "-".into()),
            value,
            f(r.fitted_exponent),
            f(r.required_exponent),
            if r.pass == Some(true) { "pass" } else { "FAIL" }
        );
    }
    s
}

/// Read `summary.json` from a bundle directory (or a summary file), write
/// `report.csv` next to it, and return the rows.
pub fn report(bundle: &Path) -> Result<Vec<ReportRow>> {
    let file = if bundle.is_dir() { bundle.join(SUMMARY_FILE) } else { bundle.to_path_buf() };
    if !file.exists() {
        return Err(FlatError::InvalidArgument(format!("no bundle at {}", file.display())));
    }
    let value: Value = serde_json::from_str(&std::fs::read_to_string(&file)?)?;
    let rows = report_rows(&value);
    let dir = file.parent().unwrap_or(Path::new("."));
    write_report_csv(&rows, std::fs::File::create(dir.join(REPORT_FILE))?)?;
    Ok(rows)
}

/// Process exit status for an error: 2 bad input, 3 numerical failure.
pub fn exit_code(e: &FlatError) -> i32 {
    match e {
        FlatError::Stage { source, .. } => exit_code(source),
        FlatError::NonPositiveMeasurement { .. }
        | FlatError::NotImmersion { .. }
        | FlatError::NotPositiveDefinite { .. }
        | FlatError::NotIsometric { .. }
        | FlatError::NonConvergence { .. } => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn small_config(surface: SurfaceSpec, out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            name: surface.name().into(),
            surface,
            domain: [0.0, 0.0, 1.0, 1.0],
            n: 129,
            eps_ladder: ScaleLadder::new(0.125, 4, 0.5).unwrap(),
            working_eps: 0.0625,
            alpha: 2.0 / 3.0,
            battery: BatterySpec { order: 8 },
            degree: DegreeSpec { deltas: vec![0.2, 0.1], samples: 10 },
            ruling: RulingConfig { rho: 0.06, ..RulingConfig::default() },
            tolerances: Tolerances {
                isometry_defect: 1e-10,
                metric_fit_residual: 0.15,
                codazzi_sup: 1e-3,
                gauss_pairing: 1e-6,
                potential_l2: 1e-3,
                hessian_gap_h2_factor: 10.0,
                hessian_gap_eps2_factor: 5.0,
                ma_pairing: 1e-6,
                degree_max_fails: 0,
                degree_min_valid: 10,
                ruling_angle_deg: 1.0,
            },
            output: out.to_path_buf(),
            seed: 7,
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = small_config(SurfaceSpec::Cylinder { r: 1.0 }, Path::new("out"));
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let mut v: Value = serde_json::from_str(&cfg.to_json()).unwrap();
        v["surprise"] = Value::Bool(true);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        v.as_object_mut().unwrap().remove("surprise");
        v.as_object_mut().unwrap().remove("seed");
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut bad = cfg.clone();
        bad.alpha = 0.4;
        assert!(ExperimentConfig::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn plane_run_is_trivially_passing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(SurfaceSpec::plane(), dir.path());
        let out = run_pipeline(&cfg, None).unwrap();
        let s = &out.summary;
        assert!(out.passed(), "{:#?}", s.gates);
        assert!(s.metric.as_ref().unwrap().c1.is_zero());
        assert_eq!(s.verdict, "developable");
        assert!(s.artifacts.iter().all(|a| dir.path().join(a).exists()));
    }

    #[test]
    fn sphere_stops_at_isometry_gate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(SurfaceSpec::SpherePatch { radius: 1.0 }, dir.path());
        cfg.domain = [-0.35, -0.35, 0.35, 0.35];
        let out = run_pipeline(&cfg, None).unwrap();
        assert!(!out.passed());
        assert_eq!(out.summary.stopped_after.as_deref(), Some("gen"));
        let g = &out.summary.gates[0];
        assert_eq!(g.quantity, "isometry_defect");
        assert!(!g.pass && g.value > 0.1);
    }

    #[test]
    fn stage_failure_names_stage_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(SurfaceSpec::Cylinder { r: 1.0 }, dir.path());
        cfg.eps_ladder = ScaleLadder { eps0: 0.125, count: 6, ratio: 0.5 };
        match run_pipeline(&cfg, None).unwrap_err() {
            FlatError::Stage { stage, completed, source } => {
                assert_eq!(stage, "residuals");
                assert_eq!(completed.len(), 2);
                assert!(completed[0].ends_with("u.fld"));
                assert!(matches!(*source, FlatError::InvalidLadder(_)));
                assert_eq!(exit_code(&FlatError::Stage { stage, completed, source }), 2);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn identical_configs_give_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = small_config(SurfaceSpec::Cylinder { r: 1.0 }, a.path());
        let ra = run_pipeline(&cfg, Some(a.path())).unwrap();
        run_pipeline(&cfg, Some(b.path())).unwrap();
        assert!(ra.passed(), "{:#?}", ra.summary.gates);
        for name in &ra.summary.artifacts {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn report_rows_match_leaves() {
        let empty = report_rows(&serde_json::json!({}));
        assert!(empty.is_empty());
        let mut buf = Vec::new();
        write_report_csv(&empty, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "quantity,eps,value,fitted_exponent,required_exponent,pass\n");

        let doc = serde_json::json!({
            "a": 1.5,
            "rows": [{"eps": 0.25, "x": 2.0}, {"eps": 0.125, "x": 3.0}],
            "gates": [{"quantity": "q", "eps": null, "value": 0.1, "fitted_exponent": 1.2,
                       "required_exponent": 0.33, "bound": null, "pass": true}],
            "s": "text", "n": null
        });
        let rows = report_rows(&doc);
        assert_eq!(rows.len(), leaf_count(&doc));
        assert_eq!(rows.len(), 8);
        let x = rows.iter().find(|r| r.quantity == "rows.1.x").unwrap();
        assert_eq!(x.eps, Some(0.125));
        let q = rows.iter().find(|r| r.quantity == "q").unwrap();
        assert_eq!((q.fitted_exponent, q.pass), (Some(1.2), Some(true)));
    }

    fn measured() -> Measured {
        let fit = |e: f64| RateFit {
            exponent: Some(e),
            residual: 0.05,
            scales: vec![0.1, 0.05, 0.025, 0.0125],
            values: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            verdict: crate::mollify::RateVerdict::Fitted,
        };
        Measured {
            h: 1.0 / 512.0,
            working_eps: 1.0 / 32.0,
            isometry_defect: 3e-16,
            metric: Some(MetricDeviation { c1: fit(1.0), c0: fit(2.0) }),
            codazzi_sup: Some(4e-6),
            gauss_pairing: Some(2e-9),
            potential_l2: Some(5e-5),
            hessian_gap: Some(1e-4),
            form_sup: Some(1.0),
            ma_pairing: Some(3e-9),
            degree: None,
            ruling_developable: Some(true),
            verdicts_agree: Some(true),
            max_angle_deg: Some(0.01),
        }
    }

    fn scaled(t: &Tolerances, k: f64) -> Tolerances {
        Tolerances {
            isometry_defect: t.isometry_defect * k,
            metric_fit_residual: t.metric_fit_residual * k,
            codazzi_sup: t.codazzi_sup * k,
            gauss_pairing: t.gauss_pairing * k,
            potential_l2: t.potential_l2 * k,
            hessian_gap_h2_factor: t.hessian_gap_h2_factor * k,
            hessian_gap_eps2_factor: t.hessian_gap_eps2_factor * k,
            ma_pairing: t.ma_pairing * k,
            degree_max_fails: (t.degree_max_fails as f64 * k) as usize,
            degree_min_valid: (t.degree_min_valid as f64 / k).ceil() as usize,
            ruling_angle_deg: t.ruling_angle_deg * k,
        }
    }

    proptest! {
        #[test]
        fn tightening_never_turns_fail_into_pass(k in 1e-4f64..1.0, alpha in 0.55f64..1.0, a in 0.5f64..1.0) {
            let base = small_config(SurfaceSpec::plane(), Path::new("x")).tolerances;
            let tight = scaled(&base, k);
            let (loose_alpha, tight_alpha) = (alpha * a, alpha);
            let m = measured();
            let loose = evaluate_gates(&m, &base, loose_alpha);
            let tight = evaluate_gates(&m, &tight, tight_alpha);
            prop_assert_eq!(loose.len(), tight.len());
            for (l, t) in loose.iter().zip(&tight) {
                prop_assert_eq!(&l.quantity, &t.quantity);
                prop_assert!(l.pass || !t.pass, "{} turned into a pass", t.quantity);
            }
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&FlatError::NonConvergence { achieved: 1.0, tolerance: 1e-10 }), 3);
        assert_eq!(exit_code(&FlatError::InvalidArgument("x".into())), 2);
        assert_eq!(exit_code(&FlatError::Format("x".into())), 2);
    }
}
