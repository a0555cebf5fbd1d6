//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::time::Instant;

use flatlab_core::fields::{
    holder_profile, little_holder_verdict, Battery, Grid2, HolderVerdict, ScalarField, SymField, TestFunction, VectorField,
    BATTERY_ORDER,
};
use flatlab_core::mollify::ScaleLadder;
use flatlab_core::potential::{reconstruct_potential, relative_error_mod_affine};
use flatlab_core::ruling::{check_developability, compare_rulings, concurrency_point, max_direction_error, RulingConfig};
use flatlab_core::shape::{battery_at, metric_deviation, MollifiedImmersion, SUP_MARGIN};
use flatlab_core::surfaces::{generate, isometry_defect, ImmersionField, SurfaceSpec};
use flatlab_core::weakdet::{
    component_pairing, degree_on_rect, degree_scan, ma_pairing, NodeRect, PlanarMap, DEFAULT_DELTAS, SCAN_SEED,
    STENCIL_MARGIN_CELLS,
};
use flatlab_core::Result;

const H: f64 = 1.0 / 512.0;
const EPS: f64 = 1.0 / 32.0;
const SPHERE_HALF_WIDTH: f64 = 0.3515625;

struct Check {
    ok: bool,
    detail: String,
}

impl Check {
    fn new() -> Self {
        Self { ok: true, detail: String::new() }
    }

    fn expect(&mut self, ok: bool, what: String) {
        if !self.detail.is_empty() {
            self.detail += "; ";
        }
        self.detail += &what;
        if !ok {
            self.detail += " [miss]";
            self.ok = false;
        }
    }
}

fn unit(n: usize) -> Grid2 {
    Grid2::from_bounds(0.0, 0.0, 1.0, 1.0, n, n).unwrap()
}

fn sphere_grid(h: f64) -> Grid2 {
    let a = SPHERE_HALF_WIDTH;
    let n = (2.0 * a / h).round() as usize + 1;
    Grid2::from_bounds(-a, -a, a, a, n, n).unwrap()
}

fn cone() -> SurfaceSpec {
    SurfaceSpec::Cone { apex: [-1.0, 0.5], opening: PI / 6.0 }
}

fn tangent_developable() -> (SurfaceSpec, Grid2) {
    let g = Grid2::from_bounds(2.5, -0.5, 3.5, 0.5, 513, 513).unwrap();
    (SurfaceSpec::TangentDevelopable { a: 1.0, b: 1.0 }, g)
}

fn potential_of(u: &ImmersionField, eps: f64) -> Result<(ScalarField, SymField, f64)> {
    let form = MollifiedImmersion::new(u, eps)?.second_form();
    let r = reconstruct_potential(&form.a)?;
    Ok((r.v, form.a, r.hessian_gap))
}

/// Analytic defect `r^2 / (1 - r^2)` of the unit hemisphere graph at the window corner.
fn sphere_defect_oracle(half_width: f64) -> f64 {
    let r2 = 2.0 * half_width * half_width;
    r2 / (1.0 - r2)
}

fn c1_isometry() -> Result<Check> {
    let mut c = Check::new();
    let g = unit(513);
    let (td, tg) = tangent_developable();
    for (spec, grid) in [(SurfaceSpec::Cylinder { r: 1.0 }, g), (cone(), g), (td, tg), (SurfaceSpec::plane(), g)] {
        let d = isometry_defect(&generate(&spec, &grid)?);
        c.expect(d <= 1e-10, format!("{} {d:.1e}", spec.name()));
    }
    let s = isometry_defect(&generate(&SurfaceSpec::SpherePatch { radius: 1.0 }, &sphere_grid(H))?);
    let oracle = sphere_defect_oracle(0.5 / 2f64.sqrt());
    c.expect((s - oracle).abs() <= 0.05 * oracle, format!("sphere {s:.4} vs {oracle:.4}"));
    c.expect(
        (s - sphere_defect_oracle(SPHERE_HALF_WIDTH)).abs() < 1e-12,
        format!("corner oracle {:.4}", sphere_defect_oracle(SPHERE_HALF_WIDTH)),
    );
    Ok(c)
}

fn c2_metric_rate() -> Result<Check> {
    let mut c = Check::new();
    let u = generate(&SurfaceSpec::Cylinder { r: 1.0 }, &unit(513))?;
    let m = metric_deviation(&u, &ScaleLadder::new(0.125, 6, 0.5)?)?;
    let (e1, e0) = (m.c1.effective_exponent(), m.c0.effective_exponent());
    c.expect(e1 >= 1.0 && e1 > 1.0 / 3.0, format!("C1 exponent {e1:.3}"));
    c.expect(e0 >= 1.9, format!("C0 exponent {e0:.3}"));
    c.expect(m.c1.residual <= 0.15 && m.c0.residual <= 0.15, format!("fit residuals {:.3}, {:.3}", m.c1.residual, m.c0.residual));
    Ok(c)
}

/// Codazzi sup at `h` and at `h/2`, the latter over the coarse sup box.
fn codazzi_pair(spec: &SurfaceSpec, coarse: Grid2, fine: Grid2) -> Result<(f64, f64)> {
    let a = MollifiedImmersion::new(&generate(spec, &coarse)?, EPS)?.codazzi()?;
    let b = MollifiedImmersion::new(&generate(spec, &fine)?, EPS)?.codazzi()?;
    let [x0, y0, x1, y1] = a.field.grid().bounds();
    let m = SUP_MARGIN as f64 * coarse.h_max();
    let bx = [x0 + m, y0 + m, x1 - m, y1 - m];
    let fine_sup = (0..2).map(|k| b.field.comp(k).max_abs_within(bx)).fold(0.0, f64::max);
    Ok((a.sup, fine_sup))
}

/// Below this the residual is round-off and has no h-rate.
const ROUNDOFF_FLOOR: f64 = 1e-11;

fn c3_codazzi() -> Result<Check> {
    let mut c = Check::new();
    for (spec, coarse, fine) in [
        (SurfaceSpec::Cylinder { r: 1.0 }, unit(513), unit(1025)),
        (SurfaceSpec::SpherePatch { radius: 1.0 }, sphere_grid(H), sphere_grid(H / 2.0)),
    ] {
        let (a, b) = codazzi_pair(&spec, coarse, fine)?;
        c.expect(a <= 1e-5, format!("{} sup {a:.2e}", spec.name()));
        if a > ROUNDOFF_FLOOR {
            let ratio = a / b;
            c.expect((3.5..=4.5).contains(&ratio), format!("halving ratio {ratio:.2}"));
        } else {
            c.expect(b <= ROUNDOFF_FLOOR, format!("round-off at both h ({b:.1e})"));
        }
    }
    Ok(c)
}

fn c4_gauss() -> Result<Check> {
    let mut c = Check::new();
    let u = generate(&SurfaceSpec::Cylinder { r: 1.0 }, &unit(513))?;
    let m = MollifiedImmersion::new(&u, EPS)?;
    let (ge, battery) = battery_at(u.grid(), EPS)?;
    let mut worst = 0.0f64;
    for psi in &battery.members {
        worst = worst.max(m.gauss_pairing(psi)?.abs() / psi.w11_norm(&ge));
    }
    c.expect(worst <= 1e-6, format!("cylinder max/W11 {worst:.1e} over {}", battery.len()));
    let s = MollifiedImmersion::new(&generate(&SurfaceSpec::SpherePatch { radius: 1.0 }, &sphere_grid(H))?, EPS)?;
    let psi = TestFunction::new([0.0, 0.0], 0.1, BATTERY_ORDER)?.unit_mass();
    let v = s.gauss_pairing(&psi)?;
    c.expect((0.98..=1.02).contains(&v), format!("sphere {v:.5}"));
    Ok(c)
}

fn exp_cos_gap(n: usize) -> Result<f64> {
    let g = unit(n);
    let f = |k: usize| {
        ScalarField::from_fn(g, move |x, y| {
            let (s, c) = y.sin_cos();
            [x.exp() * c, -x.exp() * s, -x.exp() * c][k]
        })
    };
    let a = SymField::new(f(0)?, f(1)?, f(2)?)?;
    Ok(reconstruct_potential(&a)?.hessian_gap)
}

fn c5_potential() -> Result<Check> {
    let mut c = Check::new();
    let u = generate(&SurfaceSpec::Cylinder { r: 1.0 }, &unit(513))?;
    let (v, a, gap) = potential_of(&u, EPS)?;
    let want = ScalarField::from_fn(*v.grid(), |x, _| -0.5 * x * x)?;
    let e = relative_error_mod_affine(&v, &want)?;
    c.expect(e <= 1e-4, format!("L2 mod affine {e:.1e}"));
    let bound = (10.0 * H * H).max(5.0 * EPS * EPS) * a.max_abs_inset(0);
    c.expect(gap <= bound, format!("hessian_gap {gap:.1e} <= {bound:.1e}"));
    let slope = (exp_cos_gap(129)? / exp_cos_gap(257)?).log2();
    c.expect(slope >= 1.9, format!("refinement slope {slope:.3}"));
    Ok(c)
}

fn c6_monge_ampere() -> Result<Check> {
    let mut c = Check::new();
    let g = unit(129);
    let psi = TestFunction::new([0.5, 0.5], 0.3, BATTERY_ORDER)?;
    let mass = psi.mass();
    // (v, det hess v)
    let cases: [(fn(f64, f64) -> f64, f64, f64); 3] =
        [(|x, _| x * x, 0.0, 4.0), (|x, y| x * y, -1.0, 1.0), (|x, y| x * x + y * y, 4.0, 4.0)];
    for (k, (f, det, scale)) in cases.into_iter().enumerate() {
        let got = ma_pairing(&ScalarField::from_fn(g, f)?, &psi)?;
        let want = det * mass;
        let rel = (got - want).abs() / (scale * mass);
        c.expect(rel <= 1e-6, format!("smooth case {k} rel {rel:.1e}"));
    }
    let cyl = generate(&SurfaceSpec::Cylinder { r: 1.0 }, &unit(513))?;
    let (v, _, _) = potential_of(&cyl, EPS)?;
    let battery = Battery::for_grid(v.grid(), STENCIL_MARGIN_CELLS + 1)?;
    let mut worst = 0.0f64;
    let mut comp = 0.0f64;
    for p in &battery.members {
        let w = p.w11_norm(v.grid());
        worst = worst.max(ma_pairing(&v, p)?.abs() / w);
        comp = comp.max(component_pairing(&cyl, EPS, p)?.iter().map(|x| x.abs() / w).fold(0.0, f64::max));
    }
    c.expect(worst <= 1e-6, format!("cylinder Det D2v {worst:.1e}"));
    c.expect(comp <= 1e-5, format!("cylinder components {comp:.1e}"));
    let sg = sphere_grid(H);
    let sphere = generate(&SurfaceSpec::SpherePatch { radius: 1.0 }, &sg)?;
    let psi = TestFunction::new([0.0, 0.0], 0.1, BATTERY_ORDER)?.unit_mass();
    let third = component_pairing(&sphere, EPS, &psi)?[2].abs() / psi.w11_norm(&sg);
    c.expect(third >= 1e3 * 1e-5, format!("sphere graph component {third:.2e}"));
    Ok(c)
}

fn c7_degree() -> Result<Check> {
    let mut c = Check::new();
    let g = Grid2::from_bounds(-1.0, -1.0, 1.0, 1.0, 33, 33)?;
    let rect = NodeRect::full(&g);
    let id = PlanarMap::new(VectorField::from_fn(g, 2, |x, y, o| o.copy_from_slice(&[x, y]))?)?;
    let d1 = degree_on_rect(&id, &rect, [0.1, 0.2])?.degree;
    c.expect(d1 == Some(1), format!("identity {d1:?}"));
    let sq = PlanarMap::new(VectorField::from_fn(g, 2, |x, y, o| o.copy_from_slice(&[x * x - y * y, 2.0 * x * y]))?)?;
    let d2 = degree_on_rect(&sq, &rect, [0.05, 0.02])?.degree;
    c.expect(d2 == Some(2), format!("z^2 {d2:?}"));

    let (v, _, _) = potential_of(&generate(&SurfaceSpec::Cylinder { r: 1.0 }, &unit(513))?, EPS)?;
    let rect = NodeRect::full(v.grid()).inset(STENCIL_MARGIN_CELLS)?;
    let scan = degree_scan(&v, &rect, &DEFAULT_DELTAS, 50, SCAN_SEED)?;
    let valid = |s: &flatlab_core::weakdet::FormulaSummary| s.pass + s.fail;
    c.expect(scan.fails() == 0, format!("cylinder fails {}", scan.fails()));
    c.expect(valid(&scan.gradient) >= 50, format!("grad v valid {}", valid(&scan.gradient)));
    for s in &scan.perturbed {
        c.expect(valid(s) >= 50, format!("delta {} valid {}", s.delta.unwrap(), valid(s)));
    }

    let sphere = generate(&SurfaceSpec::SpherePatch { radius: 1.0 }, &sphere_grid(H))?;
    let (sv, _, _) = potential_of(&sphere, EPS)?;
    let map = PlanarMap::gradient(&sv);
    let r = NodeRect::full(sv.grid()).inset(STENCIL_MARGIN_CELLS)?;
    let mid = map.at(sv.grid().nx / 2, sv.grid().ny / 2);
    let d = degree_on_rect(&map, &r, mid)?.degree;
    c.expect(d == Some(1), format!("sphere grad v degree {d:?}"));
    Ok(c)
}

fn ruling_cfg() -> RulingConfig {
    RulingConfig::default()
}

fn c8_rulings() -> Result<Check> {
    let mut c = Check::new();
    let g = unit(513);
    let cyl = SurfaceSpec::Cylinder { r: 1.0 };
    let r = check_developability(&generate(&cyl, &g)?.du_stacked(), &ruling_cfg())?;
    let e = max_direction_error(&r, |x, y| cyl.ruling_angle(x, y)).unwrap_or(f64::INFINITY);
    c.expect(r.developable && e <= 0.5, format!("cylinder err {e:.1e} deg"));
    c.expect(r.crossings == 0, format!("cylinder crossings {}", r.crossings));

    let co = cone();
    let r = check_developability(&generate(&co, &g)?.du_stacked(), &ruling_cfg())?;
    let e = max_direction_error(&r, |x, y| co.ruling_angle(x, y)).unwrap_or(f64::INFINITY);
    c.expect(r.developable && e <= 1.0, format!("cone err {e:.1e} deg"));
    let miss = concurrency_point(&r.segments).map(|p| (p[0] + 1.0).hypot(p[1] - 0.5)).unwrap_or(f64::INFINITY);
    c.expect(miss <= 2.0 * H, format!("apex miss {miss:.1e} over {} segments", r.segments.len()));
    c.expect(r.crossings == 0, format!("cone crossings {}", r.crossings));

    let r = check_developability(&generate(&SurfaceSpec::plane(), &g)?.du_stacked(), &ruling_cfg())?;
    c.expect(r.counts.locally_constant == r.classes.len(), format!("plane constant {}/{}", r.counts.locally_constant, r.classes.len()));

    let (td, tg) = tangent_developable();
    let r = check_developability(&generate(&td, &tg)?.du_stacked(), &ruling_cfg())?;
    let e = max_direction_error(&r, |x, y| td.ruling_angle(x, y)).unwrap_or(f64::INFINITY);
    c.expect(r.developable && r.crossings == 0, format!("tangent developable err {e:.1e} deg, crossings {}", r.crossings));

    let r = check_developability(&generate(&SurfaceSpec::SpherePatch { radius: 1.0 }, &sphere_grid(H))?.du_stacked(), &ruling_cfg())?;
    c.expect(!r.developable, format!("sphere ambiguous {}/{}", r.counts.ambiguous, r.classes.len()));
    Ok(c)
}

fn c9_transfer() -> Result<Check> {
    let mut c = Check::new();
    for spec in [SurfaceSpec::Cylinder { r: 1.0 }, cone()] {
        let u = generate(&spec, &unit(513))?;
        let (v, _, _) = potential_of(&u, EPS)?;
        let cmp = compare_rulings(&u, &v, &ruling_cfg())?;
        let a = cmp.max_angle_deg.unwrap_or(f64::INFINITY);
        c.expect(cmp.verdicts_agree && cmp.u_developable && a <= 1.0, format!("{} max {a:.1e} deg over {}", spec.name(), cmp.compared));
    }
    Ok(c)
}

/// All-pairs `[f]_{0,alpha|r}` straight from the definition.
fn brute_force(f: &ScalarField, alpha: f64, r: f64) -> f64 {
    let g = f.grid();
    let mut best = 0.0f64;
    for a in 0..g.len() {
        for b in a + 1..g.len() {
            let (ia, ja, ib, jb) = (a % g.nx, a / g.nx, b % g.nx, b / g.nx);
            let d = ((ib as i64 - ia as i64) as f64 * g.hx).hypot((jb as i64 - ja as i64) as f64 * g.hy);
            if d <= r + 1e-12 * r {
                best = best.max((f.values()[a] - f.values()[b]).abs() / d.powf(alpha));
            }
        }
    }
    best
}

fn c10_holder() -> Result<Check> {
    let mut c = Check::new();
    let g = Grid2::from_bounds(-1.0, -1.0, 1.0, 1.0, 129, 129)?;
    let scales = [0.5, 0.25, 0.125, 0.0625];
    let abs = ScalarField::from_fn(g, |x, _| x.abs())?;
    let p = holder_profile(&abs, 0.5, &scales)?;
    let top = p.values.iter().cloned().fold(0.0, f64::max);
    let dev = p.scales.iter().zip(&p.values).map(|(r, v)| (v / r.sqrt() - 1.0).abs()).fold(0.0, f64::max);
    let verdict = little_holder_verdict(&p, 0.75 * top);
    c.expect(verdict == HolderVerdict::Member && dev <= 0.05, format!("|x| {verdict:?}, dev {dev:.1e}"));
    let root = ScalarField::from_fn(g, |x, _| x.abs().sqrt())?;
    let p = holder_profile(&root, 0.5, &scales)?;
    let top = p.values.iter().cloned().fold(0.0, f64::max);
    let dev = p.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let verdict = little_holder_verdict(&p, 0.75 * top);
    c.expect(verdict == HolderVerdict::NonMember && dev <= 0.05, format!("|x|^1/2 {verdict:?}, dev {dev:.1e}"));
    let small = Grid2::from_bounds(-1.0, -1.0, 1.0, 1.0, 33, 33)?;
    let sc = [0.5, 0.25, 0.125];
    let mut equal = true;
    for f in [
        ScalarField::from_fn(small, |x, _| x.abs())?,
        ScalarField::from_fn(small, |x, _| x.abs().sqrt())?,
        ScalarField::from_fn(small, |x, y| (3.0 * x).sin() * y + (x * y).abs().powf(0.3))?,
    ] {
        let p = holder_profile(&f, 0.5, &sc)?;
        for (k, &r) in sc.iter().enumerate() {
            equal &= p.values[k] == brute_force(&f, 0.5, r);
        }
    }
    c.expect(equal, "bucketed equals all-pairs on 33^2".into());
    Ok(c)
}

fn main() {
    let criteria: [(&str, fn() -> Result<Check>); 10] = [
        ("isometry gauge", c1_isometry),
        ("metric mollification rate", c2_metric_rate),
        ("Codazzi residual", c3_codazzi),
        ("Gauss pairing", c4_gauss),
        ("potential reconstruction", c5_potential),
        ("Monge-Ampere pairing", c6_monge_ampere),
        ("degree formulas", c7_degree),
        ("ruling detection", c8_rulings),
        ("u/v ruling transfer", c9_transfer),
        ("Hoelder diagnostics", c10_holder),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = match run() {
            Ok(c) => (c.ok, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {} {name}: {detail} ({:.1}s)",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
