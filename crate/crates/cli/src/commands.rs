//! Subcommand bodies. Each validates the configuration before any run.

use std::io::Write as _;
use std::path::Path;

use ndr_core::dataio::{self, TabularDataset};
use ndr_core::datagen::SimModel;
use ndr_core::net::NetworkParams;
use ndr_core::sampler::ConditionalSampler;
use ndr_core::stats;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{self, NdrCell};
use crate::jobs::run_jobs;
use crate::output::{self, cell_rows, Cell, ResultRow, SeedOutcome};
use crate::CliError;

fn run_err(e: ndr_core::Error) -> CliError {
    CliError::from(e)
}

#[derive(Serialize)]
struct SimulateSidecar<'a> {
    model: &'a str,
    n: usize,
    seed: u64,
    columns: Vec<String>,
}

/// Writes `x1..xp,y` and a `<out>.json` sidecar.
pub fn simulate(model: SimModel, n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Config("n must be positive".into()));
    }
    let data = model.sample(n, seed).map_err(run_err)?;
    let table = TabularDataset {
        feature_names: (1..=model.input_dim()).map(|j| format!("x{j}")).collect(),
        response_name: "y".into(),
        data,
    };
    output::create(out)?;
    dataio::write_csv(out, &table).map_err(run_err)?;
    let sidecar = SimulateSidecar {
        model: model.name(),
        n,
        seed,
        columns: table.column_names(),
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".json");
    let mut f = output::create(Path::new(&path))?;
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::Run(e.to_string()))?;
    writeln!(f, "{text}").map_err(|e| CliError::Run(e.to_string()))
}

/// Trains one sampler and writes `net.txt`, `trace.csv` and the wall-clock
/// sidecar `trace.timing.csv` into `out_dir`.
pub fn train(cfg: &ExperimentConfig, data_path: Option<&Path>, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let data = match data_path {
        Some(p) => dataio::load_csv(p, &cfg.realdata.response).map_err(run_err)?.0.data,
        None => experiment::training_data(cfg.sim_model()?, cfg.n, seed).map_err(run_err)?,
    };
    let cell = NdrCell {
        m1: cfg.train.m1,
        m2: cfg.train.m2,
        dtilde: cfg.network.noise_dim,
    };
    let (sampler, trace) = experiment::fit_ndr(cfg, &data, None, cell, seed).map_err(run_err)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Run(format!("{}: {e}", out_dir.display())))?;
    sampler.net.save(&out_dir.join("net.txt")).map_err(run_err)?;
    for (name, text) in [("trace.csv", trace.to_csv()), ("trace.timing.csv", trace.timing_csv())] {
        let mut f = output::create(&out_dir.join(name))?;
        f.write_all(text.as_bytes()).map_err(|e| CliError::Run(e.to_string()))?;
    }
    Ok(())
}

/// Scores a saved network on the configured synthetic model.
pub fn eval(cfg: &ExperimentConfig, net_path: &Path, seed: u64, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let model = cfg.sim_model()?;
    let net = NetworkParams::load(net_path).map_err(run_err)?;
    let noise = cfg.noise.spec(&net.config);
    let sampler = ConditionalSampler::new(net, noise).map_err(run_err)?;
    let report = experiment::evaluate_sampler(cfg, &sampler, model, seed).map_err(run_err)?;
    let c = &sampler.net.config;
    let cell = Cell {
        model: model.name().into(),
        method: "ndr".into(),
        m1: cfg.train.m1,
        m2: Some(cfg.train.m2),
        dtilde: Some(c.noise_dim),
    };
    let hash = cfg.hash();
    let rows: Vec<ResultRow> = report
        .values()
        .into_iter()
        .map(|v| cell.row(Some(seed), &v.metric, v.level, Some(v.value), None, &hash))
        .collect();
    output::write_results_file(out, &rows)
}

/// Every `(m1, m2, dtilde)` cell over every seed.
pub fn grid_rows(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<ResultRow>, CliError> {
    cfg.validate()?;
    let model = cfg.sim_model()?;
    let mut cells = Vec::new();
    for &m1 in &cfg.grid.m1 {
        for &m2 in &cfg.grid.m2 {
            for &dtilde in &cfg.grid.dtilde {
                cells.push(NdrCell { m1: Some(m1), m2, dtilde });
            }
        }
    }
    let seeds = &cfg.seeds;
    let outcomes: Vec<SeedOutcome> = run_jobs(cells.len() * seeds.len(), threads, |j| {
        let cell = cells[j / seeds.len()];
        let seed = seeds[j % seeds.len()];
        experiment::cdf_run(cfg, model, cfg.n, cell, seed)
            .map(|e| vec![("cdf_l2".to_string(), None, e)])
            .map_err(|e| e.to_string())
    })?;
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for (c, chunk) in cells.iter().zip(outcomes.chunks(seeds.len())) {
        let cell = Cell {
            model: model.name().into(),
            method: "ndr".into(),
            m1: c.m1,
            m2: Some(c.m2),
            dtilde: Some(c.dtilde),
        };
        rows.extend(cell_rows(&cell, seeds, chunk, &hash));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub m1: usize,
    pub m2: usize,
    pub mean_err: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
    /// Standard error of the mean across seeds.
    pub std_err: f64,
    pub failed: usize,
}

/// Model 1a CDF error for each `(m1, m2)` pair, sorted by `m1 * m2`.
pub fn decay_rows(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<DecayRow>, CliError> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    for &m1 in &cfg.decay.m1 {
        for &m2 in &cfg.decay.m2 {
            pairs.push((m1, m2));
        }
    }
    let mut run_cfg = cfg.clone();
    run_cfg.train.epochs = cfg.decay.epochs;
    run_cfg.train.batch_size = cfg.decay.batch_size;
    run_cfg.train.early_stopping = cfg.decay.early_stopping;
    let seeds = &cfg.seeds;
    let outcomes = run_jobs(pairs.len() * seeds.len(), threads, |j| {
        let (m1, m2) = pairs[j / seeds.len()];
        let seed = seeds[j % seeds.len()];
        let cell = NdrCell {
            m1: Some(m1),
            m2,
            dtilde: cfg.network.noise_dim,
        };
        experiment::cdf_run(&run_cfg, SimModel::M1a, cfg.decay.n, cell, seed)
    })?;
    let mut rows: Vec<DecayRow> = pairs
        .iter()
        .zip(outcomes.chunks(seeds.len()))
        .map(|(&(m1, m2), chunk)| {
            let ok: Vec<f64> = chunk.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let (mean, sd) = stats::mean_std(&ok);
            DecayRow {
                m1,
                m2,
                mean_err: mean,
                std: sd,
                std_err: sd / (ok.len() as f64).sqrt(),
                failed: chunk.len() - ok.len(),
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.m1 * r.m2, r.m2, r.m1));
    Ok(rows)
}

pub fn write_decay<W: std::io::Write>(out: W, rows: &[DecayRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m1", "m2", "m1m2", "mean_err", "std_err"])?;
    for r in rows {
        w.write_record([
            r.m1.to_string(),
            r.m2.to_string(),
            (r.m1 * r.m2).to_string(),
            r.mean_err.to_string(),
            r.std_err.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Run(e.to_string()))
}

/// NDR and regression baselines per model, per seed, with aggregates.
pub fn compare_rows(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<ResultRow>, CliError> {
    cfg.validate()?;
    let models: Vec<SimModel> = cfg.compare.models.iter().map(|m| m.parse().expect("validated")).collect();
    let seeds = &cfg.seeds;
    let outcomes = run_jobs(models.len() * seeds.len(), threads, |j| {
        experiment::compare_run(cfg, models[j / seeds.len()], seeds[j % seeds.len()]).map_err(|e| e.to_string())
    })?;
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for (model, chunk) in models.iter().zip(outcomes.chunks(seeds.len())) {
        let mut methods: Vec<String> = vec!["ndr".into(), "lsq".into()];
        methods.extend(cfg.metrics.levels.iter().map(|a| format!("qr@{a}")));
        for method in methods {
            let per_seed: Vec<SeedOutcome> = chunk
                .iter()
                .map(|o| match o {
                    Ok(v) => Ok(v
                        .iter()
                        .filter(|(m, ..)| *m == method)
                        .map(|(_, metric, level, value)| (metric.clone(), *level, *value))
                        .collect()),
                    Err(e) => Err(e.clone()),
                })
                .collect();
            let is_ndr = method == "ndr";
            let cell = Cell {
                model: model.name().into(),
                method,
                m1: None,
                m2: is_ndr.then_some(cfg.compare.m2),
                dtilde: is_ndr.then_some(cfg.network.noise_dim),
            };
            rows.extend(cell_rows(&cell, seeds, &per_seed, &hash));
        }
    }
    Ok(rows)
}

/// The real-data pipeline over every seed (one permutation per seed).
pub fn realdata_rows(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<ResultRow>, CliError> {
    cfg.validate()?;
    let path = cfg
        .realdata
        .path
        .as_ref()
        .ok_or_else(|| CliError::Config("realdata needs a dataset path".into()))?;
    if !path.exists() {
        return Err(CliError::Config(format!("dataset {} not found (no datasets are bundled)", path.display())));
    }
    let (table, report) = dataio::load_csv(path, &cfg.realdata.response).map_err(run_err)?;
    if report.rows_dropped > 0 {
        log::info!("dropped {} malformed rows", report.rows_dropped);
    }
    let seeds = &cfg.seeds;
    let outcomes: Vec<SeedOutcome> = run_jobs(seeds.len(), threads, |j| {
        experiment::realdata_run(cfg, &table, seeds[j]).map_err(|e| e.to_string())
    })?;
    let name = path.file_stem().map_or("data".to_string(), |s| s.to_string_lossy().into_owned());
    let cell = Cell {
        model: name,
        method: "ndr".into(),
        m1: cfg.train.m1,
        m2: Some(cfg.train.m2),
        dtilde: Some(cfg.network.noise_dim),
    };
    Ok(cell_rows(&cell, seeds, &outcomes, &cfg.hash()))
}

/// Short fit on Model 1a and a finite-difference gradient check. Prints one
/// line per check and fails if any check fails.
pub fn selftest() -> Result<(), CliError> {
    use ndr_core::loss::{energy_loss, energy_loss_output_grad};
    use ndr_core::metrics::CdfErrorSpec;
    use ndr_core::ndarray::Array2;

    let mut failures = 0;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    let g = Array2::from_shape_vec((2, 3), vec![0.3, -0.2, 1.1, 0.5, 0.9, -0.4]).expect("shape");
    let y = ndr_core::ndarray::arr1(&[0.1, 0.7]);
    let grad = energy_loss_output_grad(g.view(), y.view()).map_err(run_err)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for k in 0..3 {
            let mut gp = g.clone();
            gp[[i, k]] += h;
            let mut gm = g.clone();
            gm[[i, k]] -= h;
            let fd = (energy_loss(gp.view(), y.view()).map_err(run_err)? - energy_loss(gm.view(), y.view()).map_err(run_err)?) / (2.0 * h);
            worst = worst.max((fd - grad[[i, k]]).abs());
        }
    }
    report("energy gradient", worst < 1e-6, format!("max abs diff {worst:.2e}"));

    let mut cfg = ExperimentConfig::default();
    cfg.model = "m1a".into();
    cfg.train.epochs = 150;
    cfg.train.batch_size = 500;
    cfg.train.early_stopping = false;
    let cell = NdrCell { m1: None, m2: 10, dtilde: 1 };
    let data = experiment::training_data(SimModel::M1a, 2000, 0).map_err(run_err)?;
    let (sampler, trace) = experiment::fit_ndr(&cfg, &data, None, cell, 0).map_err(run_err)?;
    let losses = trace.train_losses();
    let (first, last) = (losses[0], *losses.last().expect("epochs"));
    report("training loss decreases", last < first, format!("{first:.4} -> {last:.4}"));
    let spec = CdfErrorSpec { n_x: 200, grid_n: 400, k_cdf: 400 };
    let err = ndr_core::metrics::cdf_l2_error(&sampler, SimModel::M1a, &spec, 1).map_err(run_err)?;
    report("m1a cdf error", err < 0.08, format!("{err:.4} (limit 0.08)"));

    if failures > 0 {
        return Err(CliError::Run(format!("{failures} selftest check(s) failed")));
    }
    Ok(())
}
