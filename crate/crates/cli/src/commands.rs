use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use cmcloop::delaunay::{growth_measure, ClosedForm, write_tau_grid, DelaunayProfile, DelaunayResidue};
use cmcloop::dressing::{dress, extract_simple_factors, ExtractOptions, SimpleFactor};
use cmcloop::io::{pair_from_complex, write_json};
use cmcloop::iwasawa::iwasawa_fixed;
use cmcloop::linalg::M2;
use cmcloop::loopcore::MatrixLoop;
use cmcloop::potential::{frame_convergence, write_convergence_csv, zap, Potential};
use cmcloop::scalar::{circle_points, cis, C};
use cmcloop::surface::ends::{EndOptions, EndSetup};
use cmcloop::surface::{
    build_mesh, frame_relation_residual, richardson_derivatives, vertex, DelaunaySource, FrameSource, Grid, PotentialSource,
    SurfaceMesh,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::CmdError;

fn num(e: cmcloop::Error) -> CmdError {
    CmdError::Numeric(e.to_string())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CmdError> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CmdError::Io(format!("{}: {e}", path.display())))
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

struct MeshOutcome {
    report: Value,
    pass: bool,
}

struct Built {
    mesh: SurfaceMesh<f64>,
    source: &'static str,
    /// Frame relation residual at sampled vertices.
    pointwise: f64,
}

/// `|∂f − w·G eⱼ G⁻¹|/w` and the normal components of `∂f`, with `∂f` from Richardson
/// differences, at about 64 vertices spread over the grid.
fn pointwise_conformality<S: FrameSource<f64>>(src: &S, grid: &Grid<f64>, h: f64) -> f64 {
    let (si, sj) = ((grid.nx / 8).max(1), (grid.ny / 8).max(1));
    let pts: Vec<(f64, f64)> =
        (0..grid.nx).step_by(si).flat_map(|i| (0..grid.ny).step_by(sj).map(move |j| (grid.x(i), grid.y(j)))).collect();
    pts.par_iter()
        .map(|&(x, y)| {
            let r = vertex(src, h, x, y).and_then(|v| {
                let (fx, fy) = richardson_derivatives(src, h, x, y, 2.5e-4)?;
                let (rel, perp) = frame_relation_residual(&v, fx, fy);
                Ok(rel.max(perp))
            });
            r.unwrap_or(f64::INFINITY)
        })
        .reduce(|| 0.0, f64::max)
}

fn write_mesh(cfg: &ExperimentConfig, dir: &Path, built: &Built) -> Result<MeshOutcome, CmdError> {
    let mesh = &built.mesh;
    mesh.write_obj(create(dir, &cfg.outputs.obj)?).map_err(num)?;
    mesh.write_csv(create(dir, &cfg.outputs.csv)?).map_err(num)?;
    let (conf, metric) = mesh.conformality_residual();
    let normal = mesh.normal_residual();
    let holes = mesh.hole_count();
    let t = &cfg.tolerances;
    let pass = holes == 0 && normal < t.normal && built.pointwise < t.conformality;
    let report = json!({
        "source": built.source,
        "vertices": mesh.points.len(),
        "holes": holes,
        "closed_y": mesh.closed_y,
        "normal_residual": finite(normal),
        "conformality_residual": finite(built.pointwise),
        "grid_conformality_residual": finite(conf),
        "grid_metric_residual": finite(metric),
        "pass": pass,
    });
    Ok(MeshOutcome { report, pass })
}

/// Closed-form frames where they exist at the Sym point, otherwise a numerical
/// factorization of `exp(A log z)` per vertex.
fn delaunay_mesh(
    cfg: &ExperimentConfig,
    res: &DelaunayResidue<f64>,
    prof: &DelaunayProfile<f64>,
    grid: &Grid<f64>,
    factors: Vec<SimpleFactor<f64>>,
) -> Result<Built, CmdError> {
    let dressed = !factors.is_empty();
    match DelaunaySource::new(res, prof, cfg.lambda_sym(), factors) {
        Ok(src) => Ok(Built {
            mesh: build_mesh(&src, grid, cfg.h),
            source: "closed_form",
            pointwise: pointwise_conformality(&src, grid, cfg.h),
        }),
        Err(cmcloop::Error::NearSingular(_)) if !dressed => {
            let pot = Potential::unperturbed(*res, cfg.z_radius);
            let sp = pot.sample_circle(cfg.r, cfg.samples, 1);
            let z = zap(&sp, 1).map_err(num)?;
            let src = PotentialSource::new(&pot, &z, cfg.r, cfg.lambda_sym());
            Ok(Built {
                mesh: build_mesh(&src, grid, cfg.h),
                source: "numeric",
                pointwise: pointwise_conformality(&src, grid, cfg.h),
            })
        }
        Err(e) => Err(num(e)),
    }
}

fn profile_json(prof: &DelaunayProfile<f64>) -> Value {
    json!({
        "rho": prof.rho,
        "vmin": prof.vmin,
        "vmax": prof.vmax,
        "vacuum": prof.vacuum,
        "rho_quadrature": prof.rho_quadrature,
        "rho_ode": prof.rho_ode,
    })
}

fn finish(cfg: &ExperimentConfig, dir: &Path, command: &str, seed: Option<u64>, body: Value, pass: bool) -> Result<bool, CmdError> {
    let report = json!({
        "command": command,
        "config": cfg,
        "seed": seed,
        "result": body,
        "pass": pass,
    });
    write_json(create(dir, &cfg.outputs.json)?, &report).map_err(num)?;
    Ok(pass)
}

/// Closed-form Delaunay mesh and `τ` samples.
pub fn cmd_delaunay(cfg: &ExperimentConfig, dir: &Path, seed: Option<u64>) -> Result<bool, CmdError> {
    let res = cfg.residue()?;
    let prof = DelaunayProfile::new(&res).map_err(num)?;
    let grid = cfg.grid(prof.rho)?;
    let built = delaunay_mesh(cfg, &res, &prof, &grid, Vec::new())?;
    let m = write_mesh(cfg, dir, &built)?;
    let sd = res.spectral_data(0.0, 0.0, 0);
    let mut pts = vec![C::new(1.0, 0.0)];
    pts.extend(circle_points(1.0, 16).into_iter().skip(1));
    pts.extend(circle_points(cfg.r, 16));
    pts.extend(circle_points(0.5 * cfg.r, 8).into_iter().map(|l| l * cis(0.2)));
    pts.retain(|&l| sd.dist_to_segment(l) > 1e-3);
    write_tau_grid(create(dir, &cfg.outputs.tau_csv)?, &res, &prof, &pts).map_err(num)?;
    let body = json!({ "profile": profile_json(&prof), "mesh": m.report });
    finish(cfg, dir, "delaunay", seed, body, m.pass)
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (hi.ln() + (lo.ln() - hi.ln()) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Frame convergence, end asymptotics and positive-factor growth.
pub fn cmd_verify(cfg: &ExperimentConfig, dir: &Path, seed: Option<u64>) -> Result<bool, CmdError> {
    match verify_inner(cfg, dir) {
        Ok((body, pass)) => finish(cfg, dir, "verify", seed, body, pass),
        Err(CmdError::Numeric(msg)) => {
            finish(cfg, dir, "verify", seed, json!({ "error": msg }), false)?;
            Err(CmdError::Numeric(msg))
        }
        Err(e) => Err(e),
    }
}

fn verify_inner(cfg: &ExperimentConfig, dir: &Path) -> Result<(Value, bool), CmdError> {
    let pot = cfg.potential()?;
    let res = pot.residue;
    let prof = DelaunayProfile::new(&res).map_err(num)?;
    let v = &cfg.verify;
    let tol = &cfg.tolerances;
    let n = cfg.order_n();
    let unperturbed = pot.terms.is_empty();

    let sp = pot.sample_circle(cfg.r, cfg.samples, v.zap_order + 1);
    let zd = zap(&sp, v.zap_order).map_err(num)?;
    let zs: Vec<C<f64>> = log_space(v.z_min, v.z_max, v.z_points).into_iter().rev().map(|z| C::new(z, 0.0)).collect();
    let conv = frame_convergence(&sp, &zd, &zs, n).map_err(num)?;
    write_convergence_csv(create(dir, &cfg.outputs.convergence_csv)?, &conv).map_err(num)?;
    let worst = conv.rows.iter().fold(0.0f64, |s, r| s.max(r.unitary_err).max(r.positive_err));
    let conv_pass = if unperturbed {
        worst < 1e-10
    } else {
        conv.unitary_slope >= conv.floor - tol.slope_margin && conv.positive_slope >= conv.floor - tol.slope_margin
    };

    let setup = EndSetup::new(&pot, &prof, cfg.r, cfg.samples, v.zap_order, cfg.h, n).map_err(num)?;
    let opts = EndOptions { windows: v.windows, nx: v.window_nx, ny: v.window_ny, x_top: v.x_top };
    let ends = setup.run(&opts).map_err(num)?;
    ends.write_csv(create(dir, &cfg.outputs.ends_csv)?).map_err(num)?;
    let deepest = ends.deepest_max();
    let ends_pass = deepest < tol.deepest_window && (ends.monotone_tail(5) || deepest == 0.0);

    let sd = res.spectral_data(0.0, 0.0, 0);
    let mut lams = circle_points(cfg.r, 10);
    lams.extend(circle_points(0.8 * cfg.r, 10).into_iter().map(|l| l * cis(0.3)));
    lams.retain(|&l| sd.dist_to_segment(l) > 1e-2);
    let a: Vec<M2<f64>> = circle_points(cfg.r, cfg.samples).into_iter().map(|l| res.at(l)).collect();
    let pos = |z: f64| -> cmcloop::Result<MatrixLoop<f64>> {
        let e: Vec<M2<f64>> = a.iter().map(|m| (*m * C::new(z.ln(), 0.0)).exp() - M2::identity()).collect();
        Ok(iwasawa_fixed(&e, cfg.r)?.positive())
    };
    let growth = growth_measure(pos, &res, &prof, &log_space(1e-4, 1e-1, 8), &lams).map_err(num)?;
    let growth_pass = growth.iter().all(|g| g.within_tau(tol.growth_margin));

    let body = json!({
        "profile": profile_json(&prof),
        "n": n,
        "frame_convergence": {
            "floor": conv.floor,
            "unitary_slope": finite(conv.unitary_slope),
            "positive_slope": finite(conv.positive_slope),
            "largest_error": worst,
            "pass": conv_pass,
        },
        "end_asymptotics": {
            "floor": ends.floor,
            "c0_rate": ends.c0_rate,
            "c1_rate": ends.c1_rate,
            "metric_rate": ends.metric_rate,
            "normal_rate": ends.normal_rate,
            "deepest_window_max": deepest,
            "monotone_last_5": ends.monotone_tail(5),
            "windows": ends.rows,
            "pass": ends_pass,
        },
        "growth": {
            "rows": growth.iter().map(|g| json!({
                "lambda": pair_from_complex(g.lambda),
                "slope": g.slope,
                "tau": g.tau,
                "re_mu": g.re_mu,
            })).collect::<Vec<_>>(),
            "pass": growth_pass,
        },
    });
    Ok((body, conv_pass && ends_pass && growth_pass))
}

/// Dressed Delaunay mesh, per-factor unitarity, and the extraction round trip.
pub fn cmd_dress(cfg: &ExperimentConfig, dir: &Path, seed: Option<u64>) -> Result<bool, CmdError> {
    let res = cfg.residue()?;
    let prof = DelaunayProfile::new(&res).map_err(num)?;
    let grid = cfg.grid(prof.rho)?;
    let factors = cfg.factors()?;
    let mut r_d = cfg.r;
    for g in &factors {
        let m = g.lambda0().norm();
        if !(m > 0.0 && m < 1.0) {
            return Err(CmdError::Config(format!("factor singularity |λ0| = {m} must lie in (0, 1)")));
        }
        r_d = r_d.min(0.5 * m);
    }
    let tol = &cfg.tolerances;

    // frame of exp((x0 + i y0)A) in closed form, sampled on C_{r_d} and its reflection
    let (x0, y0) = (0.5 * (grid.x_min + grid.x_max), 0.5);
    let frame = |l: C<f64>| ClosedForm::new(&res, &prof, l)?.frame(x0, y0).map(|f| f.0);
    let mut unitarity = Vec::new();
    for g in &factors {
        let d = dress(g, frame, r_d, cfg.samples).map_err(num)?;
        unitarity.push(json!({
            "lambda0": pair_from_complex(g.lambda0()),
            "sample_radius": r_d,
            "unitarity_residual": d.unitarity_residual,
            "band_residual": d.band_residual,
        }));
    }
    let unit_pass = unitarity.iter().all(|u| u["unitarity_residual"].as_f64().is_some_and(|x| x < tol.unitarity));

    let built = delaunay_mesh(cfg, &res, &prof, &grid, factors.clone())?;
    let m = write_mesh(cfg, dir, &built)?;

    let (extraction, ext_pass) = match &cfg.extraction {
        None => (Value::Null, true),
        Some(ec) => {
            let gs = cfg.normalized_factors()?;
            let s: Vec<M2<f64>> = circle_points(ec.r, ec.samples)
                .into_iter()
                .map(|l| gs.iter().try_fold(M2::identity(), |acc, g| Ok(acc * g.eval(l)?)))
                .collect::<cmcloop::Result<_>>()
                .map_err(num)?;
            let (cp, _) = MatrixLoop::from_samples(&s, ec.r, ec.samples / 2 - 1);
            let opts = ExtractOptions { samples: ec.samples, ..ExtractOptions::default() };
            let ex = extract_simple_factors(&cp, &res, ec.r, &opts).map_err(num)?;
            let dres = (ex.residue.a - res.a).norm().max((ex.residue.b - res.b).norm()).max((ex.residue.c - res.c).abs());
            let pass = ex.factors.len() == gs.len() && ex.reconstruction_residual < tol.extraction && dres < 1e-6;
            let certs: Vec<Value> = ex
                .certificates
                .iter()
                .map(|c| {
                    json!({
                        "lambda": pair_from_complex(c.lambda),
                        "k": c.k,
                        "nilpotent_norm": c.nilpotent_norm,
                        "square_ratio": c.square_ratio,
                    })
                })
                .collect();
            let v = json!({
                "factors_found": ex.factors.len(),
                "certificates": certs,
                "reconstruction_residual": ex.reconstruction_residual,
                "residue": [pair_from_complex(ex.residue.a), pair_from_complex(ex.residue.b), ex.residue.c],
                "residue_deviation": dres,
                "residue_tail": ex.residue_tail,
                "monodromy_unitarity": ex.monodromy_unitarity,
                "pass": pass,
            });
            (v, pass)
        }
    };
    let body = json!({
        "profile": profile_json(&prof),
        "factors": unitarity,
        "mesh": m.report,
        "extraction": extraction,
    });
    finish(cfg, dir, "dress", seed, body, unit_pass && m.pass && ext_pass)
}
