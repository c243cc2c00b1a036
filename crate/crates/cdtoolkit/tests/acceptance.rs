//! Acceptance suite: one test per criterion, each printing a single
//! `criterion k: PASS|FAIL` line with its measured figures and runtime.
//! Run with `cargo test -p cdtoolkit --test acceptance -- --nocapture`.

use std::f64::consts::PI;
use std::time::Instant;

use cdtoolkit::cd1d::{
    apriori_sup_bound, check_differential, check_three_point, log_mollify, model_density, random_cd_density, GridDensity, ModelKind,
    MollifierSpec, Verdict,
};
use cdtoolkit::coefficients::sigma_ode_residual;
use cdtoolkit::hopflax::{
    interior_grid, interpolants, mask_hausdorff, midpoint_set, midpoints_brute_force, temporal_certificates, z_function, ContinuumEngine,
    SampleEngine, Z_DELTA,
};
use cdtoolkit::ly::{certify, extract_z, factorize, holder_combine, holder_triples, segment_pipeline, synthesize};
use cdtoolkit::rays::{cd1_check, mcp_check, Guide};
use cdtoolkit::spaces::{make_space, DiscreteMeasure, DiskLayout, SampledSpace, SpaceKind};
use cdtoolkit::w2::line::{voronoi_edges, SmoothDensity1d, SmoothMonotone1d};
use cdtoolkit::w2::{check_cd_entropy, quantile_coupling, solve_w2_lp, solve_w2_quantile, EntropyVariant};
use cdtoolkit::{CurvatureParams, Dim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(k: f64, n: f64) -> CurvatureParams<f64> {
    CurvatureParams::finite(k, n).unwrap()
}

/// Prints the verdict line, then fails the test if the criterion or its
/// runtime budget is missed.
fn verdict(id: u32, pass: bool, detail: String, start: Instant, budget_s: f64) {
    let secs = start.elapsed().as_secs_f64();
    let ok = pass && secs < budget_s;
    println!("criterion {id}: {} {detail} ({secs:.2} s of {budget_s} s)", if ok { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(secs < budget_s, "criterion {id} over its runtime budget: {secs:.2} s");
}

#[test]
fn criterion_01_sigma_ode() {
    let start = Instant::now();
    let cases = [(1.0, 1.0, PI / 2.0), (-4.0, 2.0, 1.0), (0.0, 3.0, 1.0)];
    let mut worst = (0.0f64, 0.0f64);
    for (k, caln, theta) in cases {
        let r = sigma_ode_residual(k, Dim::Finite(caln), theta, 201).unwrap();
        worst = (worst.0.max(r.interior), worst.1.max(r.boundary));
    }
    let pass = worst.0 <= 1e-3 && worst.1 <= 1e-12;
    verdict(1, pass, format!("interior residual {:.2e}, boundary {:.2e}", worst.0, worst.1), start, 1.0);
}

#[test]
fn criterion_02_equality_density() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [2.0, 3.0, 5.0] {
        let p = params(n - 1.0, n);
        let h = model_density(ModelKind::Sphere, p, 0.0, PI, 513).unwrap();
        let diff = check_differential(&h, p, None).unwrap();
        let three = check_three_point(&h, p, 10_000, None).unwrap();
        let off = check_three_point(&h, params(n - 1.0 + 0.1, n), 10_000, None).unwrap();
        let refuted = !off.passed && (off.verdict == Verdict::IntervalTooLong || off.worst_violation > off.tolerance_used);
        pass &= diff.passed && diff.worst_violation <= 1e-4 && three.passed && refuted;
        detail.push(format!(
            "N={n}: diff {:.1e}, 3pt {:.1e}, K+0.1 {:?} at {:?}",
            diff.worst_violation, three.worst_violation, off.verdict, off.worst_witness
        ));
    }
    verdict(2, pass, detail.join("; "), start, 5.0);
}

/// `h = (1 + psi / (N - 1))^{N-1}` with `psi` concave piecewise linear: the
/// power transform of the log-concave `exp(psi)` to finite `N`.
fn power_transformed(n: f64, a: f64, b: f64, nodes: usize, rng: &mut ChaCha8Rng) -> GridDensity<f64> {
    let m = n - 1.0;
    let len = b - a;
    let pieces: Vec<(f64, f64)> = (0..rng.gen_range(1..=5)).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0) / len)).collect();
    let mid = 0.5 * (a + b);
    let raw = |x: f64| pieces.iter().map(|(c, s)| c + s * (x - mid)).fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = (0..nodes).map(|i| a + len * i as f64 / (nodes - 1) as f64).collect();
    let top = xs.iter().map(|&x| raw(x)).fold(f64::NEG_INFINITY, f64::max);
    let low = xs.iter().map(|&x| raw(x) - top).fold(0.0, f64::min);
    // Keep 1 + psi / m >= 0.1 so the power transform stays positive.
    let scale = if low < -0.9 * m { 0.9 * m / -low } else { 1.0 };
    GridDensity::new(a, b, xs.iter().map(|&x| (1.0 + scale * (raw(x) - top) / m).powf(m)).collect()).unwrap()
}

#[test]
fn criterion_03_apriori_bound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut reverified) = (f64::NEG_INFINITY, 0);
    for _ in 0..100 {
        let n = rng.gen_range(1.5..8.0);
        let a = rng.gen_range(-1.0..1.0);
        let b = a + rng.gen_range(0.3..3.0);
        let h = power_transformed(n, a, b, 513, &mut rng).normalized().unwrap();
        if check_three_point(&h, params(0.0, n), 2000, None).unwrap().passed {
            reverified += 1;
        }
        let bound = apriori_sup_bound(params(0.0, n), a, b).unwrap();
        let top = h.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(top - bound);
    }
    let pass = reverified == 100 && worst <= 1e-6;
    verdict(3, pass, format!("{reverified}/100 re-verified CD(0,N), max(h) - bound = {worst:.3e}"), start, 5.0);
}

#[test]
fn criterion_04_mollification() {
    let start = Instant::now();
    let p = params(1.0, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut passed, mut worst) = (0, f64::NEG_INFINITY);
    let mut domain_ok = true;
    for _ in 0..50 {
        let h = random_cd_density(p, 0.0, 2.0, 401, &mut rng).unwrap();
        let m = log_mollify(&h, 0.05, MollifierSpec::Triweight).unwrap();
        domain_ok &= (m.a - 0.05).abs() < 1e-12 && (m.b - 1.95).abs() < 1e-12;
        let r = check_three_point(&m, p, 4000, None).unwrap();
        passed += r.passed as usize;
        worst = worst.max(r.worst_violation);
    }
    let pass = passed == 50 && domain_ok;
    verdict(4, pass, format!("{passed}/50 mollified densities pass on (0.05, 1.95), worst violation {worst:.2e}"), start, 10.0);
}

#[test]
fn criterion_05_duality_and_midpoints() {
    let start = Instant::now();
    let space = make_space(SpaceKind::Segment { a: 0.0, b: 1.0 }, 401).unwrap();
    let cell = 1.0 / 400.0;
    let potentials: [Box<dyn Fn(f64) -> f64>; 5] = [
        Box::new(|x| 0.25 * x),
        Box::new(|x| -0.3 * x),
        Box::new(|x| 0.6 * (x - 0.3).powi(2) / 2.0),
        Box::new(|x| -0.8 * (x - 0.7).powi(2) / 2.0),
        Box::new(|x| 0.2 * x + 0.45 * (x - 0.6).powi(2) / 2.0 + 0.05 * (3.0 * x).sin()),
    ];
    let (mut gap, mut haus) = (f64::INFINITY, 0.0f64);
    let mut built = 0;
    for phi in &potentials {
        let values: Vec<f64> = space.points.iter().map(|p| phi(p[0])).collect();
        // On a finite sample only the double c-transform is exactly c-concave.
        let Ok(e) = SampleEngine::symmetrized(&space, &values) else { continue };
        built += 1;
        let times = [0.25, 0.5, 0.75];
        for it in interpolants(&e, &times).unwrap() {
            for (a, b) in it.phi_t.iter().zip(&it.phibar_t) {
                gap = gap.min(b - a);
            }
        }
        for t in times {
            let mask = midpoint_set(&e, t, None).unwrap();
            haus = haus.max(mask_hausdorff(&space, &mask, &midpoints_brute_force(&e, t)));
        }
    }
    let pass = built == 5 && gap >= -1e-10 && haus <= cell + 1e-12;
    verdict(5, pass, format!("{built}/5 c-concave, min(phibar - phi) {gap:.2e}, mask distance {haus:.2e}"), start, 10.0);
}

#[test]
fn criterion_06_third_order() {
    let start = Instant::now();
    let families: Vec<(ContinuumEngine<f64>, [f64; 5])> = vec![
        (ContinuumEngine::segment_translation(0.0, 1.0, 0.25).unwrap(), [0.3, 0.45, 0.6, 0.75, 0.9]),
        (ContinuumEngine::segment_contraction(0.0, 1.0, 0.3, 0.6).unwrap(), [0.0, 0.1, 0.55, 0.8, 1.0]),
        (ContinuumEngine::circle_translation(6.0, 0.5, 1.5, 0.8).unwrap(), [0.55, 0.8, 1.0, 1.2, 1.45]),
        (ContinuumEngine::circle_contraction(2.0 * PI, 0.3, 1.0, 0.7).unwrap(), [-0.6, 0.0, 0.6, 0.9, 1.25]),
    ];
    let times = interior_grid::<f64>(19);
    let (mut traces, mut third, mut two) = (0, f64::INFINITY, f64::INFINITY);
    let mut all = true;
    for (e, starts) in &families {
        for &x0 in starts {
            let tr = e.trace(x0, &times).unwrap();
            traces += 1;
            for c in temporal_certificates(e, &tr, &[0.02, 0.05], 1e-8).unwrap() {
                if c.name.starts_with("third_order") {
                    third = third.min(c.slack);
                    all &= c.pass;
                }
            }
            let z = z_function(e, &tr, Z_DELTA, 1e-6).unwrap();
            two = two.min(z.two_point.slack);
            all &= z.two_point.pass;
        }
    }
    let pass = all && traces == 20 && third >= -1e-8 && two >= -1e-6;
    verdict(6, pass, format!("{traces} traces, third-order slack {third:.2e}, two-point z slack {two:.2e}"), start, 30.0);
}

#[test]
fn criterion_07_needle_check() {
    let start = Instant::now();
    let space = make_space(SpaceKind::Disk { radius: 1.0, layout: DiskLayout::Cartesian }, 800).unwrap();
    let m = DiscreteMeasure::uniform(space.len());
    let guide = Guide::Function(space.points.iter().map(|p| p[1]).collect());
    let flat = cd1_check(&space, &m, &guide, &params(0.0, 2.0), None).unwrap();
    let curved = cd1_check(&space, &m, &guide, &params(1.0, 2.0), None).unwrap();
    let failing = 1.0 - curved.passing_fraction;
    let pass = flat.passing_fraction == 1.0 && flat.check.pass && failing >= 0.5 && !curved.check.witnesses.is_empty();
    let detail = format!(
        "{} points, {} rays; K=0 passing {:.3}; K=1 failing {:.3} with {} witnesses",
        space.len(),
        flat.structure.rays.len(),
        flat.passing_fraction,
        failing,
        curved.check.witnesses.len()
    );
    verdict(7, pass, detail, start, 60.0);
}

fn sin_reference(space: &SampledSpace<f64>) -> DiscreteMeasure<f64> {
    let e = voronoi_edges(space).unwrap();
    DiscreteMeasure::new((0..space.len()).map(|k| (e[k].cos() - e[k + 1].cos()) / 2.0).collect()).unwrap()
}

fn tilted(reference: &DiscreteMeasure<f64>, space: &SampledSpace<f64>, rng: &mut ChaCha8Rng) -> DiscreteMeasure<f64> {
    let (a, k, p) = (rng.gen_range(0.2..0.8), rng.gen_range(0.5..2.5), rng.gen_range(0.0..2.0 * PI));
    let w = (0..space.len()).map(|i| reference.weights[i] * (a * (k * space.points[i][0] + p).sin()).exp()).collect();
    DiscreteMeasure::new(w).unwrap().normalized().unwrap()
}

#[test]
fn criterion_08_entropy_convexity() {
    let start = Instant::now();
    let n = 1001;
    let space = make_space(SpaceKind::Segment { a: 0.0, b: PI }, n).unwrap();
    let reference = sin_reference(&space);
    let p = params(1.0, 2.0);
    let t: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let (mut min_margin, mut max_budget) = (f64::INFINITY, 0.0f64);
    let mut all = true;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let mu0 = tilted(&reference, &space, &mut rng);
        let mu1 = tilted(&reference, &space, &mut rng);
        let c = check_cd_entropy(&space, &reference, &mu0, &mu1, &p, EntropyVariant::Cd, &t, None).unwrap();
        all &= c.pass && c.slack >= -c.tolerance;
        min_margin = min_margin.min(c.slack + c.tolerance);
        max_budget = max_budget.max(c.tolerance);
    }
    let flat = DiscreteMeasure::uniform(n);
    let left = DiscreteMeasure::new((0..n).map(|i| if i < 300 { 1.0 } else { 0.0 }).collect()).unwrap().normalized().unwrap();
    let right = DiscreteMeasure::new((0..n).map(|i| if i > 700 { 1.0 } else { 0.0 }).collect()).unwrap().normalized().unwrap();
    let bad = check_cd_entropy(&space, &flat, &left, &right, &p, EntropyVariant::Cd, &t, None).unwrap();
    let refuted = bad.slack < 0.0 && !bad.pass && !bad.witnesses.is_empty();
    let pass = all && max_budget <= 0.02 && refuted;
    let detail = format!("20 pairs, min slack + budget {min_margin:.2e}, max budget {max_budget:.2e}; flat slack {:.3e}", bad.slack);
    verdict(8, pass, detail, start, 60.0);
}

#[test]
fn criterion_09_mcp() {
    let start = Instant::now();
    let space = make_space(SpaceKind::Segment { a: 0.0, b: 1.0 }, 401).unwrap();
    let e = voronoi_edges(&space).unwrap();
    let lebesgue = DiscreteMeasure::new(e.windows(2).map(|w| w[1] - w[0]).collect()).unwrap();
    let ts: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let mut all = true;
    let mut worst = f64::INFINITY;
    let mut names = Vec::new();
    for n in [1.5, 2.0, 4.0] {
        let checks = mcp_check(&space, &lebesgue, 0, &params(0.0, n), &ts, Some(1e-3)).unwrap();
        for c in &checks {
            all &= c.pass && c.slack >= -1e-3;
            worst = worst.min(c.slack);
            if !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
    }
    let pass = all && names.iter().any(|n| n == "mcp_per_bin") && names.iter().any(|n| n == "mcpe_entropy") && names.len() >= 5;
    verdict(9, pass, format!("checks {} all pass, min slack {worst:.2e}", names.join("/")), start, 10.0);
}

#[test]
fn criterion_10_ly_rigidity() {
    let start = Instant::now();
    // (a) forward-synthesized data.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut synth_ok, mut worst_residual) = (0, 0.0f64);
    for _ in 0..50 {
        let p = params(rng.gen_range(-1.5..1.5), rng.gen_range(1.5..5.0));
        let ell = rng.gen_range(0.5..1.5);
        let (data, _) = synthesize(p, ell, 401, 200, &mut rng).unwrap();
        let z = extract_z(&data, None).unwrap();
        let f = match factorize(&data, &z, 200, None) {
            Ok(f) => f,
            Err(e) => {
                println!("  factorize rejected a synthetic family: {e}");
                worst_residual = f64::INFINITY;
                continue;
            }
        };
        worst_residual = worst_residual.max(f.residual);
        let checks = certify(&data, &f, None).unwrap();
        let l_ok = checks.iter().find(|c| c.name == "l_concavity").is_some_and(|c| c.pass);
        let y_ok = checks.iter().find(|c| c.name == "y_cd").is_some_and(|c| c.pass);
        synth_ok += (f.residual <= 1e-5 && l_ok && y_ok) as usize;
    }
    // (b) Hölder recombination on pairs certified independently.
    let (mut certified, mut holder_min) = (0, f64::INFINITY);
    while certified < 200 {
        let p = params(rng.gen_range(-2.0..2.0), rng.gen_range(1.5..6.0));
        let ell = rng.gen_range(0.3..1.5);
        let (_, pair) = synthesize(p, ell, 101, 50, &mut rng).unwrap();
        let y = GridDensity::new(0.0, 1.0, pair.y.clone()).unwrap();
        let l_concave = (1..100).all(|i| pair.l[i - 1] - 2.0 * pair.l[i] + pair.l[i + 1] <= 1e-12);
        if !(l_concave && check_three_point(&y, p.scaled(ell * ell), 2000, None).unwrap().passed) {
            continue;
        }
        let c = holder_combine(&pair.l, &y, &p, ell, &holder_triples(101, 500, certified as u64), None).unwrap();
        holder_min = holder_min.min(c.slack);
        certified += 1;
    }
    // (c) end-to-end on the sin model.
    let space = make_space(SpaceKind::Segment { a: 0.0, b: PI }, 401).unwrap();
    let reference = DiscreteMeasure::from_fn(&space, |p| p[0].sin()).unwrap();
    let dens = SmoothDensity1d::from_fn(0.0, PI, 4001, f64::sin).unwrap();
    let src = SmoothDensity1d::from_fn(0.0, PI, 4001, |x: f64| x.sin() * (1.0 + 0.4 * x.cos())).unwrap();
    let tgt = SmoothDensity1d::from_fn(0.0, PI, 4001, |x: f64| x.sin() * (1.0 - 0.3 * (2.0 * x).sin())).unwrap();
    let map = SmoothMonotone1d::new(&src, &tgt).unwrap();
    let times: Vec<f64> = (0..41).map(|k| k as f64 / 40.0).collect();
    let out = segment_pipeline(&space, &reference, &dens, &map, 1.2, times, params(1.0, 2.0)).unwrap();
    let pipeline_ok = out.checks.iter().all(|c| c.pass);
    let y_slack = out.checks.iter().find(|c| c.name == "y_cd").map_or(f64::NAN, |c| c.slack);
    let pass = synth_ok == 50 && holder_min >= -1e-9 && pipeline_ok;
    let detail = format!(
        "(a) {synth_ok}/50, max residual {worst_residual:.2e}; (b) min Hölder slack {holder_min:.2e}; (c) pipeline {} with Y slack {y_slack:.2e}",
        if pipeline_ok { "ok" } else { "failed" }
    );
    verdict(10, pass, detail, start, 120.0);
}

#[test]
fn criterion_11_w2_cross_validation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut cost_rel, mut feas, mut supp) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(16..60);
        let space = make_space(SpaceKind::Segment { a: 0.0, b: rng.gen_range(0.5..3.0) }, n).unwrap();
        let draw = |rng: &mut ChaCha8Rng| {
            let mut w: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() }).collect();
            w[rng.gen_range(0..n)] = 1.0;
            DiscreteMeasure::new(w).unwrap().normalized().unwrap()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let (plan, dual) = solve_w2_lp(&space, &a, &b).unwrap();
        let (ra, rb) = (a.support(), b.support());
        let wa: Vec<f64> = ra.iter().map(|&i| a.weights[i]).collect();
        let wb: Vec<f64> = rb.iter().map(|&j| b.weights[j]).collect();
        let stair: f64 = quantile_coupling(&wa, &wb).iter().map(|&(i, j, m)| m * space.dist(ra[i], rb[j]).powi(2) / 2.0).sum();
        cost_rel = cost_rel.max((plan.cost - stair).abs() / stair.max(1e-300));
        feas = feas.max(dual.feasibility_defect(&space));
        supp = supp.max(dual.support_defect(&space, &plan));
        let (qplan, qdual) = solve_w2_quantile(&space, &a, &b).unwrap();
        cost_rel = cost_rel.max((qplan.cost - stair).abs() / stair.max(1e-300));
        feas = feas.max(qdual.feasibility_defect(&space));
        supp = supp.max(qdual.support_defect(&space, &qplan));
    }
    let pass = cost_rel <= 1e-9 && feas <= 1e-8 && supp <= 1e-8;
    verdict(11, pass, format!("100 instances, cost rel err {cost_rel:.2e}, feasibility {feas:.2e}, support {supp:.2e}"), start, 30.0);
}
