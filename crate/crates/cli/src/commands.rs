use std::collections::HashMap;
use std::path::{Path, PathBuf};

use bgmoe::baseline::{fit_gamma_glm, predict_glm};
use bgmoe::bgdist::log_density;
use bgmoe::config::{parse_list, GridSpec, RunConfig};
use bgmoe::em::{e_step, fit_with_report, write_trace, EMConfig};
use bgmoe::metrics::{adjusted_rand, misclassification, mixture_samples, score_predictions, ScoreReport};
use bgmoe::model_io::{load_model, to_text};
use bgmoe::moe::classify_rows;
use bgmoe::select::{aic, bic, stepwise, Criterion};
use bgmoe::sim::{simulate_study1, simulate_study2, LABEL_COLUMN};
use bgmoe::{BGParams, ColumnKind, Dataset, Error, FittedModel, ModelSpec, QuadratureConfig, Result};
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::output::Outputs;
use crate::{DensityArgs, EmArgs, EvaluateArgs, FitArgs, PredictArgs, SelectArgs, SimulateArgs};

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Parse { line, message } => usage(format!("{}: line {line}: {message}", p.display())),
            other => other,
        }),
        None => Ok(RunConfig::default()),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// A flag value, else the `[output]` entry `key` of the config.
fn path_or_config(flag: Option<PathBuf>, cfg: &RunConfig, key: &str, flag_name: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.get(key).map(PathBuf::from))
        .ok_or_else(|| usage(format!("--{flag_name} is required")))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn em_config(args: &EmArgs, cfg: &RunConfig) -> Result<(EMConfig, QuadratureConfig)> {
    let mut em = cfg.em.clone();
    if let Some(v) = args.seed {
        em.seed = v;
    }
    if let Some(v) = args.restarts {
        em.restarts = v;
    }
    if let Some(v) = args.tol {
        em.tol = v;
    }
    if let Some(v) = args.max_iter {
        em.max_iter = v;
    }
    if args.aitken {
        em.use_aitken = true;
    }
    em.validate()?;
    let q = quad_config(args.quad_tol, cfg)?;
    Ok((em, q))
}

fn quad_config(tol: Option<f64>, cfg: &RunConfig) -> Result<QuadratureConfig> {
    let mut q = cfg.quadrature;
    if let Some(t) = tol {
        q.relative_tolerance = t;
    }
    q.validate()?;
    Ok(q)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn summary(model: &FittedModel) -> String {
    format!(
        "model={}\ng={}\nspec={}\nloglik={}\nn_params={}\naic={}\nbic={}\nconverged={}\niterations={}",
        model.spec.name(),
        model.spec.g,
        model.spec.describe(),
        fmt(model.loglik),
        model.n_params,
        fmt(aic(model.loglik, model.n_params)),
        fmt(bic(model.loglik, model.n_params, model.n_obs)),
        model.converged,
        model.iterations
    )
}

pub fn simulate(args: SimulateArgs, cfg: &RunConfig) -> Result<()> {
    let out = path_or_config(args.out, cfg, "out", "out")?;
    let seed = args.seed.unwrap_or(cfg.em.seed);
    let sim = match args.study {
        1 => simulate_study1(args.n, seed)?,
        2 => simulate_study2(args.n, seed)?,
        s => return Err(usage(format!("--study must be 1 or 2, got {s}"))),
    };
    let mut buf = Vec::new();
    sim.to_dataset(true)?.write_csv(&mut buf)?;
    let mut outputs = Outputs::default();
    outputs.add(&out, &buf)?;
    outputs.commit()?;
    let second = sim.true_labels.iter().filter(|&&l| l == 1).count();
    println!("rows={}\ncomponent1={}\ncomponent2={}", args.n, args.n - second, second);
    Ok(())
}

fn list_or(flag: &Option<String>, fallback: &Option<Vec<String>>) -> Vec<String> {
    match flag {
        Some(s) => parse_list(s),
        None => fallback.clone().unwrap_or_default(),
    }
}

pub fn fit(args: FitArgs, cfg: &RunConfig) -> Result<()> {
    let data_path = path_or_config(args.data.clone(), cfg, "data", "data")?;
    let out = path_or_config(args.out.clone(), cfg, "out", "out")?;
    let trace_path = args
        .trace
        .clone()
        .or_else(|| cfg.paths.get("trace").map(PathBuf::from))
        .unwrap_or_else(|| sibling(&out, ".trace.csv"));
    let model_type = args
        .spec
        .clone()
        .or_else(|| cfg.model.model_type.clone())
        .ok_or_else(|| usage("--spec is required"))?;
    let g = match args.g.or(cfg.model.g) {
        Some(g) => g,
        None if model_type.len() == 2 => 1,
        None => return Err(usage("--g is required for three-letter model types")),
    };
    let m = &cfg.model;
    let spec = ModelSpec::build(
        &model_type,
        g,
        list_or(&args.gating, &m.gating),
        [
            list_or(&args.alpha1, &m.alpha[0]),
            list_or(&args.alpha2, &m.alpha[1]),
            list_or(&args.alpha3, &m.alpha[2]),
        ],
        list_or(&args.beta, &m.beta),
    )?;
    let (em, q) = em_config(&args.em, cfg)?;
    let data = Dataset::from_csv_path(&data_path)?;
    for c in spec.covariates() {
        if data.column(&c).is_none() {
            return Err(Error::Data(format!("unknown covariate column '{c}'")));
        }
    }
    let report = fit_with_report(&data, &spec, &em, &q)?;
    let mut trace = Vec::new();
    write_trace(report.champion_trace(), &mut trace)?;
    let mut outputs = Outputs::default();
    outputs.add(&out, to_text(&report.model).as_bytes())?;
    outputs.add(&trace_path, &trace)?;
    outputs.commit()?;
    println!("{}", summary(&report.model));
    let ok = report.restarts.iter().filter(|r| r.result.is_ok()).count();
    println!("restarts_ok={ok}/{}", report.restarts.len());
    Ok(())
}

pub fn select(args: SelectArgs, cfg: &RunConfig) -> Result<()> {
    let data_path = path_or_config(args.data.clone(), cfg, "data", "data")?;
    let out = path_or_config(args.out.clone(), cfg, "out", "out")?;
    let trace_path = args
        .trace
        .clone()
        .or_else(|| cfg.paths.get("trace").map(PathBuf::from))
        .unwrap_or_else(|| sibling(&out, ".trace.csv"));
    let (em, q) = em_config(&args.em, cfg)?;
    let data = Dataset::from_csv_path(&data_path)?;

    let mut search = cfg.search.clone();
    let configured = {
        let c = &search.candidates;
        !(c.gating.is_empty() && c.alpha.iter().all(Vec::is_empty) && c.beta.is_empty())
    };
    if let Some(all) = &args.candidates {
        search.candidates = bgmoe::select::Candidates::everywhere(&parse_list(all));
    } else if !configured {
        let cols: Vec<String> = data
            .column_names()
            .iter()
            .filter(|n| n.as_str() != LABEL_COLUMN)
            .cloned()
            .collect();
        search.candidates = bgmoe::select::Candidates::everywhere(&cols);
    }
    let c = &mut search.candidates;
    if let Some(s) = &args.gating_candidates {
        c.gating = parse_list(s);
    }
    for (k, flag) in [&args.alpha1_candidates, &args.alpha2_candidates, &args.alpha3_candidates]
        .into_iter()
        .enumerate()
    {
        if let Some(s) = flag {
            c.alpha[k] = parse_list(s);
        }
    }
    if let Some(s) = &args.beta_candidates {
        c.beta = parse_list(s);
    }
    for name in c.gating.iter().chain(c.alpha.iter().flatten()).chain(&c.beta) {
        if data.column(name).is_none() {
            return Err(Error::Data(format!("unknown covariate column '{name}'")));
        }
    }
    if let Some(g) = args.max_g {
        search.max_g = g;
    }
    if let Some(s) = args.max_steps {
        search.max_steps = s;
    }
    if let Some(c) = &args.criterion {
        search.criterion = c.parse::<Criterion>()?;
    }
    if search.max_g == 0 {
        return Err(usage("--max-g must be at least 1"));
    }

    let (model, trace) = stepwise(&data, &search, &em, &q)?;
    let mut trace_buf = Vec::new();
    trace.write_csv(&mut trace_buf)?;
    let mut outputs = Outputs::default();
    outputs.add(&out, to_text(&model).as_bytes())?;
    outputs.add(&trace_path, &trace_buf)?;
    outputs.commit()?;
    println!("{}", summary(&model));
    println!("criterion={}\nsteps={}", search.criterion, trace.accepted().count() - 1);
    Ok(())
}

struct GlmColumns {
    mean: [Vec<f64>; 2],
    dispersion: [f64; 2],
}

fn glm_baseline(train_path: &Path, covs: &[String], data: &Dataset) -> Result<GlmColumns> {
    let train = Dataset::from_csv_path(train_path)?;
    let y = train.responses()?;
    let x_train = train.design(covs)?;
    let kinds: Vec<ColumnKind> = covs.iter().map(|c| train.kind(c)).collect::<Result<_>>()?;
    let x_new = data.design_with(covs, &kinds)?;
    let mut mean: [Vec<f64>; 2] = Default::default();
    let mut dispersion = [0.0; 2];
    for r in 0..2 {
        let target: Vec<f64> = y.iter().map(|v| v[r]).collect();
        let f = fit_gamma_glm(&target, &x_train)?;
        mean[r] = predict_glm(&f, &x_new)?;
        dispersion[r] = f.dispersion;
    }
    Ok(GlmColumns { mean, dispersion })
}

pub fn predict(args: PredictArgs, cfg: &RunConfig) -> Result<()> {
    let data_path = path_or_config(args.data.clone(), cfg, "data", "data")?;
    let out = path_or_config(args.out.clone(), cfg, "pred", "out")?;
    let q = quad_config(args.quad_tol, cfg)?;
    let model = load_model(&args.model)?;
    let data = Dataset::from_csv_reader(std::fs::File::open(&data_path)?, false)?;
    let designs = model.designs(&data)?;
    let table = model.param_table(&designs)?;
    let g = model.g();
    let n = data.len();
    let z = if data.has_responses() {
        Some(e_step(&data, &model, &q)?.z)
    } else {
        None
    };
    let glm = match &args.glm_train {
        Some(p) => {
            let covs = match &args.glm_covariates {
                Some(s) => parse_list(s),
                None => model.spec.covariates(),
            };
            Some(glm_baseline(p, &covs, &data)?)
        }
        None => None,
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["row", "yhat1", "yhat2", "yhat_sum", "map_component"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=g).map(|c| format!("tau_{c}")));
    if z.is_some() {
        header.extend((1..=g).map(|c| format!("z_{c}")));
    }
    for name in ["alpha1", "alpha2", "alpha3", "beta"] {
        header.extend((1..=g).map(|c| format!("{name}_{c}")));
    }
    if glm.is_some() {
        header.extend(["glm_y1", "glm_y2", "glm_disp1", "glm_disp2"].map(String::from));
    }
    w.write_record(&header).map_err(csv_err)?;
    let labels = match &z {
        Some(z) => classify_rows(z, g),
        None => {
            let tau: Vec<f64> = (0..n).flat_map(|i| table.tau(i)).collect();
            classify_rows(&tau, g)
        }
    };
    for i in 0..n {
        let yhat = model.predict_mean(&designs, i)?;
        let mut row = vec![
            (i + 1).to_string(),
            fmt(yhat[0]),
            fmt(yhat[1]),
            fmt(yhat[0] + yhat[1]),
            (labels[i] + 1).to_string(),
        ];
        row.extend(table.tau(i).into_iter().map(fmt));
        if let Some(z) = &z {
            row.extend(z[i * g..(i + 1) * g].iter().map(|v| fmt(*v)));
        }
        for k in 0..3 {
            row.extend(table.alpha[k][i * g..(i + 1) * g].iter().map(|v| fmt(*v)));
        }
        row.extend(table.beta[i * g..(i + 1) * g].iter().map(|v| fmt(*v)));
        if let Some(glm) = &glm {
            row.extend([
                fmt(glm.mean[0][i]),
                fmt(glm.mean[1][i]),
                fmt(glm.dispersion[0]),
                fmt(glm.dispersion[1]),
            ]);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let buf = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut outputs = Outputs::default();
    outputs.add(&out, &buf)?;
    outputs.commit()?;
    println!("rows={n}\ncomponents={g}");
    Ok(())
}

/// Numeric columns of a CSV file by header name.
fn read_numeric_table(path: &Path) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(std::fs::File::open(path)?);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(String::from)
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: r + 2,
            message: e.to_string(),
        })?;
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: r + 2,
                message: format!("column '{}': cannot parse '{cell}' as a number", header[j]),
            })?;
            cols[j].push(v);
        }
    }
    let n = cols.first().map_or(0, Vec::len);
    Ok((n, header.into_iter().zip(cols).collect()))
}

fn column<'a>(t: &'a HashMap<String, Vec<f64>>, name: &str) -> Result<&'a [f64]> {
    t.get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Data(format!("prediction file lacks column '{name}'")))
}

pub fn evaluate(args: EvaluateArgs, cfg: &RunConfig) -> Result<()> {
    let out = path_or_config(args.out.clone(), cfg, "scores", "out")?;
    let seed = args.seed.unwrap_or(cfg.em.seed);
    if args.samples < 2 {
        return Err(usage("--samples must be at least 2"));
    }
    let (n, pred) = read_numeric_table(&args.pred)?;
    let actual_data = Dataset::from_csv_path(&args.actual)?;
    let actual = actual_data.responses()?;
    if actual.len() != n {
        return Err(Error::Data(format!(
            "prediction file has {n} rows but the observed data have {}",
            actual.len()
        )));
    }
    let g = (1..).take_while(|c| pred.contains_key(&format!("tau_{c}"))).count();
    if g == 0 {
        return Err(Error::Data("prediction file lacks tau_1".into()));
    }
    let (y1, y2) = (column(&pred, "yhat1")?, column(&pred, "yhat2")?);
    let means: Vec<[f64; 2]> = y1.iter().zip(y2).map(|(a, b)| [*a, *b]).collect();
    let get = |name: &str, c: usize| column(&pred, &format!("{name}_{c}"));
    let mut tau = Vec::with_capacity(g);
    let mut params: Vec<[&[f64]; 4]> = Vec::with_capacity(g);
    for c in 1..=g {
        tau.push(get("tau", c)?);
        params.push([get("alpha1", c)?, get("alpha2", c)?, get("alpha3", c)?, get("beta", c)?]);
    }
    let moe = score_predictions(actual, &means, args.samples, seed, |i, m, rng| {
        let w: Vec<f64> = tau.iter().map(|t| t[i]).collect();
        let comps = params
            .iter()
            .map(|p| BGParams::new(p[0][i], p[1][i], p[2][i], p[3][i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(mixture_samples(&w, &comps, m, rng))
    })?;

    let mut reports: Vec<(&str, ScoreReport)> = vec![("moe", moe)];
    if pred.contains_key("glm_y1") {
        let gm: Vec<[f64; 2]> = column(&pred, "glm_y1")?
            .iter()
            .zip(column(&pred, "glm_y2")?)
            .map(|(a, b)| [*a, *b])
            .collect();
        let disp = [column(&pred, "glm_disp1")?, column(&pred, "glm_disp2")?];
        let glm = score_predictions(actual, &gm, args.samples, seed, |i, m, rng| {
            let dists = [0, 1]
                .map(|r| Gamma::new(1.0 / disp[r][i], gm[i][r] * disp[r][i]).map_err(|e| Error::InvalidParameter(e.to_string())));
            let [d1, d2] = dists;
            let (d1, d2) = (d1?, d2?);
            Ok((0..m).map(|_| [d1.sample(rng), d2.sample(rng)]).collect())
        })?;
        reports.push(("glm", glm));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["target", "model", "crps", "rmse", "gini", "wasserstein"])
        .map_err(csv_err)?;
    for (target_idx, target) in ["sum", "y1", "y2"].iter().enumerate() {
        for (name, rep) in &reports {
            let s = rep.targets()[target_idx].1;
            w.write_record([
                target.to_string(),
                name.to_string(),
                fmt(s.crps),
                fmt(s.rmse),
                fmt(s.gini),
                fmt(s.wasserstein),
            ])
            .map_err(csv_err)?;
            println!(
                "{target} {name} crps={} rmse={} gini={} wasserstein={}",
                fmt(s.crps),
                fmt(s.rmse),
                fmt(s.gini),
                fmt(s.wasserstein)
            );
        }
    }
    let buf = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut outputs = Outputs::default();
    outputs.add(&out, &buf)?;
    outputs.commit()?;

    if let (Some(truth), Some(map)) = (actual_data.column(LABEL_COLUMN), pred.get("map_component")) {
        if let bgmoe::Column::Numeric(t) = truth {
            let a: Vec<usize> = t.iter().map(|v| (*v as usize).saturating_sub(1)).collect();
            let b: Vec<usize> = map.iter().map(|v| (*v as usize).saturating_sub(1)).collect();
            println!("ari={}", fmt(adjusted_rand(&a, &b)?));
            if a.iter().chain(&b).all(|&l| l < 20) {
                println!("misclassification={}", fmt(misclassification(&a, &b)?));
            }
        }
    }
    Ok(())
}

pub fn density(args: DensityArgs, cfg: &RunConfig) -> Result<()> {
    let out = path_or_config(args.out.clone(), cfg, "grid", "out")?;
    let q = quad_config(args.quad_tol, cfg)?;
    let vals: Vec<f64> = args
        .params
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("--params: '{s}' is not a number")))
        })
        .collect::<Result<_>>()?;
    let [a1, a2, a3, b] = vals[..] else {
        return Err(usage("--params needs four values: alpha1,alpha2,alpha3,beta"));
    };
    let p = BGParams::new(a1, a2, a3, b)?;
    let grid: GridSpec = args.grid.parse()?;
    let y1: Vec<f64> = grid.y1.points().collect();
    let y2: Vec<f64> = grid.y2.points().collect();
    let rows: Vec<Vec<f64>> = y1
        .par_iter()
        .map(|&u| {
            y2.iter()
                .map(|&v| match log_density(u, v, &p, &q) {
                    Ok(l) => Ok(l.exp()),
                    // the density is infinite on the diagonal when it is singular there
                    Err(Error::Domain(_)) if u == v => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["y1", "y2", "density"]).map_err(csv_err)?;
    let mut mass = 0.0;
    for (u, row) in y1.iter().zip(&rows) {
        for (v, d) in y2.iter().zip(row) {
            if d.is_finite() {
                mass += d;
            }
            w.write_record([fmt(*u), fmt(*v), fmt(*d)]).map_err(csv_err)?;
        }
    }
    let buf = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut outputs = Outputs::default();
    outputs.add(&out, &buf)?;
    outputs.commit()?;
    println!("points={}\nmass={}", y1.len() * y2.len(), fmt(mass * grid.cell_area()));
    Ok(())
}
