//! One function per subcommand. Every command is a pure function of
//! (config, input files, seed): inputs are hashed into the manifest, outputs
//! are written atomically, and labels in persisted artifacts are 1-based
//! (subgroup 1..K, state 1..S, week 1..T).

use crate::artifacts::{fmt_f64, fmt_opt, RunRecorder};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use mhmmx::assignment::{
    accuracy_over_time, assign_offline, assign_online, online_profile, smooth_accuracy,
    AssignSource, AssignmentResult,
};
use mhmmx::cvi::{cvi_report, Clustering, SymptomDimension};
use mhmmx::data::{load_dataset, split_dataset, ColumnKind, Dataset, DatasetSchema};
use mhmmx::hmm::{state_occupancy, viterbi_decode};
use mhmmx::inference::{fit, fit_map, FitConfig, PosteriorDraws};
use mhmmx::mixture::{FittedModel, ModelSpec};
use mhmmx::selection::select_over;
use mhmmx::simulate::{recovery_benchmark, simulate};
use serde::Serialize;
use std::collections::HashMap;
use std::path::Path;

pub struct DataPaths<'a> {
    pub baseline: &'a Path,
    pub trajectory: &'a Path,
    pub schema: &'a Path,
}

fn load_schema(rec: &mut RunRecorder, path: &Path) -> CliResult<DatasetSchema> {
    let bytes = rec.read_input(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::input(format!("schema `{}` is not valid: {e}", path.display())))
}

fn load_data(rec: &mut RunRecorder, paths: &DataPaths) -> CliResult<Dataset> {
    let schema = load_schema(rec, paths.schema)?;
    rec.hash_input(paths.baseline)?;
    rec.hash_input(paths.trajectory)?;
    Ok(load_dataset(paths.baseline, paths.trajectory, &schema)?)
}

fn load_model(rec: &mut RunRecorder, path: &Path) -> CliResult<FittedModel> {
    let bytes = rec.read_input(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::input(format!("model `{}` is not UTF-8", path.display())))?;
    Ok(FittedModel::from_json(&text)?)
}

fn load_draws(rec: &mut RunRecorder, path: &Path) -> CliResult<PosteriorDraws> {
    let bytes = rec.read_input(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::input(format!("draws `{}` are not valid: {e}", path.display())))
}

fn model_spec(cfg: &RunConfig, schema: &DatasetSchema) -> ModelSpec {
    let mut spec = ModelSpec::new(cfg.k, cfg.s);
    spec.priors = cfg.priors.clone();
    spec.mp = schema.mp as usize;
    spec.md = schema.md as usize;
    spec
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &RunConfig, rec: &mut RunRecorder) -> CliResult<()> {
    let mut sim = recovery_benchmark();
    sim.n = cfg.simulate.n;
    sim.t = cfg.simulate.t;
    sim.missingness = cfg.simulate.missingness;
    // seed 0 means "benchmark default"
    if cfg.seed != 0 {
        sim.seed = cfg.seed;
    }
    let out = simulate(&sim)?;
    let ds = &out.dataset;

    // baseline CSV in the same format the loader reads
    let mut baseline = String::from("id");
    for col in &ds.encoding.columns {
        baseline.push(',');
        baseline.push_str(&col.name);
    }
    baseline.push('\n');
    for p in &ds.patients {
        baseline.push_str(&p.id);
        let mut j = 0;
        for col in &ds.encoding.columns {
            baseline.push(',');
            match &col.kind {
                ColumnKind::Numeric => baseline.push_str(&fmt_f64(p.x[j])),
                ColumnKind::Binary { levels } => {
                    baseline.push_str(if p.x[j] == 0.0 { &levels[0] } else { &levels[1] })
                }
                ColumnKind::Categorical { .. } => {
                    return Err(CliError::input(
                        "categorical factors are not produced by the simulator".to_string(),
                    ))
                }
            }
            j += col.kind.encoded_width();
        }
        baseline.push('\n');
    }
    rec.write_output("baseline.csv", baseline.as_bytes())?;

    let mut traj = String::from("id,week,pain,disability\n");
    for p in &ds.patients {
        for (w, obs) in p.trajectory.iter().enumerate() {
            let pain = obs.pain.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
            let dis = obs
                .disability
                .map(|v| v.to_string())
                .unwrap_or_else(|| "NA".into());
            traj.push_str(&format!("{},{},{pain},{dis}\n", p.id, w + 1));
        }
    }
    rec.write_output("trajectory.csv", traj.as_bytes())?;

    let schema = DatasetSchema {
        columns: ds.encoding.columns.clone(),
        t: ds.t,
        mp: ds.mp,
        md: ds.md,
    };
    rec.write_output(
        "schema.json",
        serde_json::to_string_pretty(&schema)
            .map_err(|e| CliError::input(e.to_string()))?
            .as_bytes(),
    )?;

    #[derive(Serialize)]
    struct Truth<'a> {
        seed: u64,
        model: &'a mhmmx::mixture::MixtureModel,
        /// True subgroup per patient, 1-based, dataset order.
        subgroups: Vec<usize>,
        /// True latent state per patient-week, 1-based.
        state_paths: Vec<Vec<usize>>,
    }
    let truth = Truth {
        seed: sim.seed,
        model: &out.truth,
        subgroups: out.subgroups.iter().map(|&k| k + 1).collect(),
        state_paths: out
            .state_paths
            .iter()
            .map(|p| p.iter().map(|&s| s + 1).collect())
            .collect(),
    };
    rec.write_output(
        "truth.json",
        serde_json::to_string_pretty(&truth)
            .map_err(|e| CliError::input(e.to_string()))?
            .as_bytes(),
    )?;
    Ok(())
}

// --------------------------------------------------------------------- fit

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitMode {
    Map,
    Mcmc,
}

pub fn cmd_fit(
    cfg: &RunConfig,
    paths: &DataPaths,
    mode: FitMode,
    rec: &mut RunRecorder,
) -> CliResult<()> {
    let schema = load_schema(rec, paths.schema)?;
    rec.hash_input(paths.baseline)?;
    rec.hash_input(paths.trajectory)?;
    let ds = load_dataset(paths.baseline, paths.trajectory, &schema)?;
    let spec = model_spec(cfg, &schema);

    match mode {
        FitMode::Map => {
            let fitted = fit_map(&spec, &ds, &cfg.map, cfg.seed)?;
            rec.write_output("model.json", fitted.to_json()?.as_bytes())?;
        }
        FitMode::Mcmc => {
            let fc = FitConfig {
                map: cfg.map.clone(),
                sampler: cfg.sampler.clone(),
                seed: cfg.seed,
            };
            let (draws, fitted) = fit(&spec, &ds, &fc)?;
            rec.write_output("model.json", fitted.to_json()?.as_bytes())?;
            rec.write_output(
                "draws.json",
                serde_json::to_string(&draws)
                    .map_err(|e| CliError::input(e.to_string()))?
                    .as_bytes(),
            )?;

            // columnar draws: one row per draw, one column per parameter
            let mut csv = draws.names.join(",");
            csv.push('\n');
            for row in &draws.values {
                let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
                csv.push_str(&cells.join(","));
                csv.push('\n');
            }
            rec.write_output("draws.csv", csv.as_bytes())?;

            #[derive(Serialize)]
            struct Diagnostics<'a> {
                names: &'a [String],
                rhat: &'a [f64],
                ess: &'a [f64],
                max_rhat: f64,
                min_ess: f64,
                divergence_rate: f64,
                accept_rate: f64,
            }
            let diag = Diagnostics {
                names: &draws.names,
                rhat: &draws.diagnostics.rhat,
                ess: &draws.diagnostics.ess,
                max_rhat: draws.diagnostics.max_rhat,
                min_ess: draws.diagnostics.min_ess,
                divergence_rate: draws.divergence_rate,
                accept_rate: draws.accept_rate,
            };
            rec.write_output(
                "diagnostics.json",
                serde_json::to_string_pretty(&diag)
                    .map_err(|e| CliError::input(e.to_string()))?
                    .as_bytes(),
            )?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ select

pub fn cmd_select(
    cfg: &RunConfig,
    paths: &DataPaths,
    k_values: &[usize],
    s_values: &[usize],
    rec: &mut RunRecorder,
) -> CliResult<()> {
    let schema = load_schema(rec, paths.schema)?;
    rec.hash_input(paths.baseline)?;
    rec.hash_input(paths.trajectory)?;
    let ds = load_dataset(paths.baseline, paths.trajectory, &schema)?;
    let (train, test) = split_dataset(&ds, cfg.split_fraction, cfg.seed)?;

    let mut specs = Vec::new();
    for &k in k_values {
        for &s in s_values {
            let mut spec = model_spec(cfg, &schema);
            spec.k = k;
            spec.s = s;
            specs.push(spec);
        }
    }
    let fc = FitConfig {
        map: cfg.map.clone(),
        sampler: cfg.sampler.clone(),
        seed: cfg.seed,
    };
    let report = select_over(&train, &test, &specs, &fc, cfg.thin)?;

    let mut csv = String::from(
        "k,s,status,in_sample_deviance,out_of_sample_deviance,in_sample_lpd,out_of_sample_lpd,n_draws,error\n",
    );
    for c in &report.candidates {
        match &c.outcome {
            Ok(e) => csv.push_str(&format!(
                "{},{},ok,{},{},{},{},{},\n",
                c.k,
                c.s,
                fmt_f64(e.in_sample.deviance),
                fmt_f64(e.out_of_sample.deviance),
                fmt_f64(e.in_sample.raw),
                fmt_f64(e.out_of_sample.raw),
                e.out_of_sample.n_draws,
            )),
            Err(msg) => csv.push_str(&format!(
                "{},{},failed,NA,NA,NA,NA,NA,\"{}\"\n",
                c.k,
                c.s,
                msg.replace('"', "'"),
            )),
        }
    }
    rec.write_output("selection.csv", csv.as_bytes())?;

    #[derive(Serialize)]
    struct Recommendation {
        recommended_k: Option<usize>,
        recommended_s: Option<usize>,
        n_train: usize,
        n_test: usize,
    }
    let recj = Recommendation {
        recommended_k: report.recommended.map(|(k, _)| k),
        recommended_s: report.recommended.map(|(_, s)| s),
        n_train: train.n_patients(),
        n_test: test.n_patients(),
    };
    rec.write_output(
        "recommendation.json",
        serde_json::to_string_pretty(&recj)
            .map_err(|e| CliError::input(e.to_string()))?
            .as_bytes(),
    )?;
    Ok(())
}

// ------------------------------------------------------------------ assign

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AssignCliMode {
    Offline,
    Online,
}

fn assignment_csv(results: &[AssignmentResult], k: usize) -> String {
    let mut csv = String::from("id,mode,t");
    for j in 1..=k {
        csv.push_str(&format!(",prob_{j}"));
    }
    csv.push_str(",label,max_prob\n");
    for r in results {
        let (mode, t) = match r.mode {
            mhmmx::assignment::AssignMode::Offline => ("offline", 0),
            mhmmx::assignment::AssignMode::Online { t } => ("online", t),
        };
        csv.push_str(&format!("{},{mode},{t}", r.id));
        for &p in &r.probs {
            csv.push(',');
            csv.push_str(&fmt_f64(p));
        }
        csv.push_str(&format!(",{},{}\n", r.label + 1, fmt_f64(r.max_prob)));
    }
    csv
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_assign(
    cfg: &RunConfig,
    paths: &DataPaths,
    model_path: &Path,
    draws_path: Option<&Path>,
    mode: AssignCliMode,
    t: Option<usize>,
    rec: &mut RunRecorder,
) -> CliResult<()> {
    let fitted = load_model(rec, model_path)?;
    let draws = draws_path.map(|p| load_draws(rec, p)).transpose()?;
    let ds = load_data(rec, paths)?;
    let source = match &draws {
        Some(d) => AssignSource::DrawAverage {
            draws: d,
            thin: cfg.thin,
        },
        None => AssignSource::PointEstimate,
    };

    let results: Vec<AssignmentResult> = ds
        .patients
        .iter()
        .map(|p| match mode {
            AssignCliMode::Offline => assign_offline(&fitted, source, p),
            AssignCliMode::Online => {
                assign_online(&fitted, source, p, t.unwrap_or(p.trajectory.len()))
            }
        })
        .collect::<mhmmx::Result<_>>()?;

    rec.write_output(
        "assignments.csv",
        assignment_csv(&results, fitted.model.n_subgroups()).as_bytes(),
    )?;
    Ok(())
}

// ------------------------------------------------------------------ decode

pub fn cmd_decode(
    _cfg: &RunConfig,
    paths: &DataPaths,
    model_path: &Path,
    rec: &mut RunRecorder,
) -> CliResult<()> {
    let fitted = load_model(rec, model_path)?;
    let ds = load_data(rec, paths)?;
    let k = fitted.model.n_subgroups();
    let s = fitted.model.hmms[0].n_states();

    let mut paths_csv = String::from("id,subgroup,week,state\n");
    let mut by_subgroup: Vec<Vec<Vec<usize>>> = vec![Vec::new(); k];
    for p in &ds.patients {
        let a = assign_online(&fitted, AssignSource::PointEstimate, p, p.trajectory.len())?;
        let path = viterbi_decode(&fitted.model.hmms[a.label], &p.trajectory)?;
        for (w, &st) in path.iter().enumerate() {
            paths_csv.push_str(&format!("{},{},{},{}\n", p.id, a.label + 1, w + 1, st + 1));
        }
        by_subgroup[a.label].push(path);
    }
    rec.write_output("paths.csv", paths_csv.as_bytes())?;

    // occupancy per subgroup: share of decoded patients in each state by week
    let mut occ_csv = String::from("subgroup,week,state,share\n");
    for (kk, group) in by_subgroup.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let occ = state_occupancy(group, s)?;
        for (w, row) in occ.iter().enumerate() {
            for (st, &share) in row.iter().enumerate() {
                occ_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    kk + 1,
                    w + 1,
                    st + 1,
                    fmt_f64(share)
                ));
            }
        }
    }
    rec.write_output("occupancy.csv", occ_csv.as_bytes())?;
    Ok(())
}

// --------------------------------------------------------------------- cvi

pub fn cmd_cvi(
    _cfg: &RunConfig,
    paths: &DataPaths,
    assignments_path: &Path,
    method: &str,
    rec: &mut RunRecorder,
) -> CliResult<()> {
    let bytes = rec.read_input(assignments_path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::input(format!("assignments header: {e}")))?
        .clone();
    let id_idx = headers.iter().position(|h| h == "id").ok_or_else(|| {
        CliError::input("assignments CSV is missing the `id` column".to_string())
    })?;
    let label_idx = headers.iter().position(|h| h == "label").ok_or_else(|| {
        CliError::input("assignments CSV is missing the `label` column".to_string())
    })?;
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::input(format!("assignments row: {e}")))?;
        let id = record
            .get(id_idx)
            .ok_or_else(|| CliError::input(format!("assignments row {}: short row", row_no + 2)))?
            .to_string();
        let label: usize = record
            .get(label_idx)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| {
                CliError::input(format!(
                    "assignments row {}: label is not a positive integer",
                    row_no + 2
                ))
            })?;
        if label == 0 {
            return Err(CliError::input(format!(
                "assignments row {}: labels are 1-based",
                row_no + 2
            )));
        }
        by_id.insert(id, label - 1);
    }

    let ds = load_data(rec, paths)?;
    let raw_labels: Vec<usize> = ds
        .patients
        .iter()
        .map(|p| {
            by_id.get(&p.id).copied().ok_or_else(|| {
                CliError::input(format!("no assignment for patient `{}`", p.id))
            })
        })
        .collect::<CliResult<_>>()?;

    // remap to contiguous 0-based cluster indices
    let mut seen: Vec<usize> = raw_labels.clone();
    seen.sort_unstable();
    seen.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| seen.binary_search(l).unwrap())
        .collect();
    let n_clusters = seen.len();

    let mut csv = String::from("panel,method,subgroups,silhouette,calinski_harabasz,davies_bouldin_star\n");
    for (panel, dim) in [
        ("pain", SymptomDimension::Pain),
        ("disability", SymptomDimension::Disability),
    ] {
        // every index is undefined for a single cluster (e.g. the trivial
        // one-cluster baseline); report NA rather than failing
        let (sil, ch, db) = if n_clusters < 2 {
            (None, None, None)
        } else {
            let clustering = Clustering::from_dataset(&ds, dim, labels.clone())?;
            let report = cvi_report(&clustering)?;
            (
                report.silhouette,
                report.calinski_harabasz,
                report.davies_bouldin_star,
            )
        };
        csv.push_str(&format!(
            "{panel},{method},{n_clusters},{},{},{}\n",
            fmt_opt(sil),
            fmt_opt(ch),
            fmt_opt(db),
        ));
    }
    rec.write_output("cvi.csv", csv.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------- accuracy

pub fn cmd_accuracy(
    cfg: &RunConfig,
    paths: &DataPaths,
    model_path: &Path,
    draws_path: Option<&Path>,
    rec: &mut RunRecorder,
) -> CliResult<()> {
    let fitted = load_model(rec, model_path)?;
    let draws = draws_path.map(|p| load_draws(rec, p)).transpose()?;
    let ds = load_data(rec, paths)?;
    let source = match &draws {
        Some(d) => AssignSource::DrawAverage {
            draws: d,
            thin: cfg.thin,
        },
        None => AssignSource::PointEstimate,
    };

    let profiles: Vec<Vec<AssignmentResult>> = ds
        .patients
        .iter()
        .map(|p| online_profile(&fitted, source, p))
        .collect::<mhmmx::Result<_>>()?;
    let table = accuracy_over_time(&profiles, &cfg.thresholds)?;

    let n_weeks = table.agreement.len();
    let mut smoothed = Vec::with_capacity(cfg.thresholds.len());
    for j in 0..cfg.thresholds.len() {
        let series: Vec<Option<f64>> = (0..n_weeks).map(|t| table.agreement[t][j]).collect();
        smoothed.push(smooth_accuracy(&series, cfg.window));
    }

    let mut csv = String::from("t,threshold,n_qualifying,agreement,agreement_smoothed\n");
    for t in 0..n_weeks {
        for (j, &thr) in table.thresholds.iter().enumerate() {
            csv.push_str(&format!(
                "{t},{},{},{},{}\n",
                fmt_f64(thr),
                table.n_qualifying[t][j],
                fmt_opt(table.agreement[t][j]),
                fmt_opt(smoothed[j][t]),
            ));
        }
    }
    rec.write_output("accuracy.csv", csv.as_bytes())?;
    Ok(())
}
