use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use fabr_core::data_io::{
    load_labels_opts, load_matrix_opts, one_hot_encode, save_labels, save_matrix,
    synth_classification, DenseMatrix, LabeledDataset,
};
use fabr_core::ensemble::{batch_partition, fit_ensemble, EnsembleConfig, MemberSolver, MemberState};
use fabr_core::error::{Error, Result};
use fabr_core::feature_gen::{generate_block, Activation, FeaturePlan};
use fabr_core::full_solver::{self, FitOptions, PredictMode};
use fabr_core::harness::{self, SolverChoice};
use fabr_core::linalg;
use fabr_core::lowrank_solver;
use fabr_core::ridge_spectral::{classify, ResolventMode, RidgeGrid, RidgeSolution};

use crate::model::{load_model, save_model, MemberBody, MemberPayload, ModelFile, SolverKind};
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let csv_skip_header = cli.csv_skip_header;
    match cli.command {
        Command::Synth { n, d, seed, out } => cmd_synth(n as usize, d as usize, seed, &out),
        Command::Train {
            features,
            labels,
            p,
            p1,
            z,
            seed,
            activation,
            weight_scale,
            nu,
            batch_size,
            demean,
            mode,
            checkpoints,
            store_beta,
            classes,
            shuffle_seed,
            out,
        } => cmd_train(TrainArgs {
            csv_skip_header,
            features,
            labels,
            p: p as usize,
            p1: p1 as usize,
            z,
            seed,
            activation,
            weight_scale,
            nu: nu.map(|v| v as usize),
            batch_size: batch_size.map(|v| v as usize),
            demean,
            mode,
            checkpoints,
            store_beta,
            classes,
            shuffle_seed,
            out,
        }),
        Command::Predict { model, test, train, labels, out } => {
            cmd_predict(&model, &test, train.as_deref(), labels.as_deref(), &out, csv_skip_header)
        }
        Command::Voc {
            train_features,
            train_labels,
            test_features,
            test_labels,
            p,
            p1,
            z,
            seed,
            activation,
            weight_scale,
            nu,
            demean,
            mode,
            checkpoints,
            timings,
            out,
        } => cmd_voc(VocArgs {
            csv_skip_header,
            train_features,
            train_labels,
            test_features,
            test_labels,
            p: p as usize,
            p1: p1 as usize,
            z,
            seed,
            activation,
            weight_scale,
            nu: nu.map(|v| v as usize),
            demean,
            mode,
            checkpoints,
            timings,
            out,
        }),
        Command::Bench { d, num_z, n, reps, seed, no_timings, out } => cmd_bench(
            &d,
            &num_z,
            n as usize,
            reps as usize,
            seed,
            cli.threads,
            !no_timings,
            &out,
        ),
        Command::Inspect { model } => cmd_inspect(&model),
    }
}

fn parse_f64_list(raw: &str, flag: &str) -> Result<Vec<f64>> {
    let mut values = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("{flag}: cannot parse '{s}' as a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    values.sort_by(|a, b| a.partial_cmp(b).ok_or(()).expect("finite"));
    values.dedup();
    Ok(values)
}

fn parse_usize_list(raw: &str, flag: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("{flag}: cannot parse '{s}' as an integer")))
        })
        .collect()
}

fn parse_mode(raw: &str) -> Result<ResolventMode> {
    match raw {
        "exact" => Ok(ResolventMode::Exact),
        "annihilate" => Ok(ResolventMode::Annihilate),
        other => Err(Error::Data(format!("unknown mode '{other}' (use exact or annihilate)"))),
    }
}

fn mem_budget_from_env() -> Result<u64> {
    match std::env::var("FABR_MEM_BUDGET_BYTES") {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|_| Error::Data(format!("FABR_MEM_BUDGET_BYTES='{raw}' is not a byte count"))),
        Err(_) => Ok(fabr_core::DEFAULT_MEM_BUDGET_BYTES),
    }
}

fn load_dataset(
    features: &Path,
    labels: &Path,
    classes: Option<usize>,
    csv_skip_header: bool,
) -> Result<LabeledDataset> {
    let x = load_matrix_opts(features, csv_skip_header)?;
    let y = load_labels_opts(labels, csv_skip_header)?;
    let inferred = y.iter().copied().max().map_or(0, |m| m as usize + 1);
    let num_classes = classes.unwrap_or(inferred).max(2);
    LabeledDataset::new(x.data, y, num_classes)
}

fn cmd_synth(n: usize, d: usize, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ds = synth_classification(n, d, seed)?;
    let features_path = out.join("features.fabm");
    let labels_path = out.join("labels.fabm");
    save_matrix(&DenseMatrix::new(ds.features), &features_path)?;
    save_labels(&ds.labels, &labels_path)?;
    println!(
        "wrote {} ({n} x {d}) and {} ({n} x 1)",
        features_path.display(),
        labels_path.display()
    );
    Ok(())
}

struct TrainArgs {
    csv_skip_header: bool,
    features: std::path::PathBuf,
    labels: std::path::PathBuf,
    p: usize,
    p1: usize,
    z: String,
    seed: u64,
    activation: String,
    weight_scale: f64,
    nu: Option<usize>,
    batch_size: Option<usize>,
    demean: bool,
    mode: String,
    checkpoints: Option<String>,
    store_beta: bool,
    classes: Option<usize>,
    shuffle_seed: u64,
    out: std::path::PathBuf,
}

/// Projected labels `V^T Y` for a rank-capped member, from its own batch.
fn member_vty(
    v: &Array2<f64>,
    labels: &[u32],
    num_classes: usize,
    demean: bool,
) -> Result<Array2<f64>> {
    let encoded = one_hot_encode(labels, num_classes, demean)?;
    Ok(linalg::matmul(v.view(), true, encoded.matrix.view(), false))
}

/// Stacked `P x K` coefficients per grid point via the dual identity,
/// regenerating the member's blocks.
fn member_beta(
    x_member: &Array2<f64>,
    plan: &FeaturePlan,
    q: &[Array2<f64>],
    num_classes: usize,
) -> Result<Vec<Array2<f64>>> {
    let mut betas =
        vec![Array2::<f64>::zeros((plan.total_features, num_classes)); q.len()];
    let mut offset = 0;
    for k in 0..plan.block_count() {
        let block = generate_block(x_member.view(), plan, k)?;
        let width = block.values.ncols();
        for (zi, qz) in q.iter().enumerate() {
            let b = linalg::matmul(block.values.view(), true, qz.view(), false);
            betas[zi]
                .slice_mut(ndarray::s![offset..offset + width, ..])
                .assign(&b);
        }
        offset += width;
    }
    Ok(betas)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let ds = load_dataset(&args.features, &args.labels, args.classes, args.csv_skip_header)?;
    let plan = FeaturePlan {
        master_seed: args.seed,
        total_features: args.p,
        block_width: args.p1,
        activation: args.activation.parse::<Activation>()?,
        weight_scale: args.weight_scale,
        input_dim: ds.features.ncols(),
    };
    plan.validate()?;
    let grid = RidgeGrid::new(parse_f64_list(&args.z, "--z")?)?;
    let mode = parse_mode(&args.mode)?;
    let checkpoints = match &args.checkpoints {
        Some(raw) => parse_usize_list(raw, "--checkpoints")?,
        None => Vec::new(),
    };
    let opts = FitOptions {
        voc_checkpoints: checkpoints.clone(),
        demean: args.demean,
        mode,
        mem_budget: mem_budget_from_env()?,
    };
    let num_classes = ds.num_classes;
    let n = ds.len();

    let solver = match args.nu {
        Some(nu) => SolverKind::Lowrank { nu },
        None => SolverKind::Full,
    };
    let batch_size = args.batch_size.unwrap_or(n);

    // Fit, collect per-member payloads, and score the training set.
    let mut members = Vec::new();
    let train_classes: Vec<Vec<u32>>;
    if batch_size == n {
        match solver {
            SolverKind::Full => {
                let state = full_solver::fit(&ds, &plan, &grid, &opts)?;
                let preds =
                    full_solver::predict(&state, ds.features.view(), &plan, PredictMode::Final)?;
                train_classes = preds.final_entry().classes.clone();
                let beta = args
                    .store_beta
                    .then(|| member_beta(&ds.features, &plan, &state.solution.q, num_classes))
                    .transpose()?;
                members.push(MemberPayload {
                    label_means: state.solution.label_means.clone(),
                    body: MemberBody::Full { q: state.solution.q.clone() },
                    beta,
                });
            }
            SolverKind::Lowrank { nu } => {
                let model = lowrank_solver::fit_lowrank(&ds, &plan, &grid, nu, &opts)?;
                let preds = lowrank_solver::predict_lowrank(
                    &model,
                    ds.features.view(),
                    &plan,
                    PredictMode::Final,
                )?;
                train_classes = preds.final_entry().classes.clone();
                let vty = member_vty(&model.state.v, &ds.labels, num_classes, args.demean)?;
                let beta = args
                    .store_beta
                    .then(|| member_beta(&ds.features, &plan, &model.solution.q, num_classes))
                    .transpose()?;
                members.push(MemberPayload {
                    label_means: model.solution.label_means.clone(),
                    body: MemberBody::Lowrank {
                        v: model.state.v.clone(),
                        d: model.state.d.clone(),
                        vty,
                    },
                    beta,
                });
            }
        }
    } else {
        let config = EnsembleConfig {
            batch_size,
            solver: match solver {
                SolverKind::Full => MemberSolver::Full,
                SolverKind::Lowrank { nu } => MemberSolver::Lowrank { nu },
            },
            plan: plan.clone(),
            grid: grid.clone(),
            shuffle_seed: args.shuffle_seed,
            fit: opts,
        };
        let ensemble = fit_ensemble(&ds, &config)?;
        let preds = fabr_core::ensemble::predict_ensemble(&ensemble, ds.features.view())?;
        train_classes = preds.final_entry().classes.clone();
        for (member, batch) in ensemble.members.iter().zip(ensemble.batches.iter()) {
            let batch_labels: Vec<u32> = batch.iter().map(|&i| ds.labels[i]).collect();
            let member_x = ds.features.select(ndarray::Axis(0), batch);
            let payload = match member {
                MemberState::Full(state) => {
                    let beta = args
                        .store_beta
                        .then(|| member_beta(&member_x, &plan, &state.solution.q, num_classes))
                        .transpose()?;
                    MemberPayload {
                        label_means: state.solution.label_means.clone(),
                        body: MemberBody::Full { q: state.solution.q.clone() },
                        beta,
                    }
                }
                MemberState::Lowrank(model) => {
                    let vty = member_vty(&model.state.v, &batch_labels, num_classes, args.demean)?;
                    let beta = args
                        .store_beta
                        .then(|| member_beta(&member_x, &plan, &model.solution.q, num_classes))
                        .transpose()?;
                    MemberPayload {
                        label_means: model.solution.label_means.clone(),
                        body: MemberBody::Lowrank {
                            v: model.state.v.clone(),
                            d: model.state.d.clone(),
                            vty,
                        },
                        beta,
                    }
                }
            };
            members.push(payload);
        }
    }

    println!("train accuracy by shrinkage:");
    for (zi, &z) in grid.values().iter().enumerate() {
        let acc = harness::accuracy(&train_classes[zi], &ds.labels)?;
        println!("  z={z} acc={acc:.6}");
    }

    let model = ModelFile {
        solver,
        mode,
        demean: args.demean,
        n_train: n,
        num_classes,
        batch_size,
        shuffle_seed: args.shuffle_seed,
        checkpoints,
        plan,
        grid,
        members,
    };
    save_model(&model, &args.out)?;
    println!("wrote model to {}", args.out.display());
    Ok(())
}

/// Mean member scores per grid point, label means re-added.
fn model_scores(
    model: &ModelFile,
    x_test: &Array2<f64>,
    x_train: Option<&Array2<f64>>,
) -> Result<Vec<Array2<f64>>> {
    let grid = &model.grid;
    let plan = &model.plan;
    let m = x_test.nrows();
    let k = model.num_classes;
    let mut sums: Vec<Array2<f64>> = vec![Array2::zeros((m, k)); grid.len()];

    if model.store_beta() {
        // one pass over test blocks; coefficients are already materialized
        let mut offset = 0;
        let mut raw: Vec<Vec<Array2<f64>>> =
            vec![vec![Array2::zeros((m, k)); grid.len()]; model.members.len()];
        for kb in 0..plan.block_count() {
            let s_test = generate_block(x_test.view(), plan, kb)?;
            let width = s_test.values.ncols();
            for (mi, member) in model.members.iter().enumerate() {
                let betas = member.beta.as_ref().expect("store_beta checked");
                for (zi, beta) in betas.iter().enumerate() {
                    let slice = beta.slice(ndarray::s![offset..offset + width, ..]);
                    linalg::gemm_acc(
                        &mut raw[mi][zi],
                        1.0,
                        s_test.values.view(),
                        false,
                        slice,
                        false,
                        1.0,
                    );
                }
            }
            offset += width;
        }
        for (mi, member) in model.members.iter().enumerate() {
            for (zi, scores) in raw[mi].iter().enumerate() {
                let mut with_means = scores.clone();
                for mut row in with_means.rows_mut() {
                    for (j, mean) in member.label_means.iter().enumerate() {
                        row[j] += mean;
                    }
                }
                sums[zi] += &with_means;
            }
        }
    } else {
        let x_train = x_train.ok_or_else(|| {
            Error::Data(
                "this model stores dual weights; pass --train with the training features used to fit"
                    .into(),
            )
        })?;
        if x_train.nrows() != model.n_train {
            return Err(Error::Data(format!(
                "training features have {} rows but the model was fit on {}",
                x_train.nrows(),
                model.n_train
            )));
        }
        let batches = batch_partition(model.n_train, model.batch_size, model.shuffle_seed)?;
        if batches.len() != model.members.len() {
            return Err(Error::Data("model member count does not match its batch layout".into()));
        }
        for (member, batch) in model.members.iter().zip(batches.iter()) {
            let member_x = x_train.select(ndarray::Axis(0), batch);
            let solution = RidgeSolution {
                q: member.dual_weights(grid)?,
                grid: grid.clone(),
                label_means: member.label_means.clone(),
                n_train: member.rows(),
                checkpoint: None,
            };
            let preds = full_solver::predict_from_parts(
                member_x.view(),
                x_test.view(),
                plan,
                &[],
                &solution,
                PredictMode::Final,
            )?;
            for (zi, scores) in preds.final_entry().scores.iter().enumerate() {
                sums[zi] += scores;
            }
        }
    }

    let weight = 1.0 / model.members.len() as f64;
    for sum in &mut sums {
        sum.mapv_inplace(|v| v * weight);
    }
    Ok(sums)
}

fn cmd_predict(
    model_path: &Path,
    test_path: &Path,
    train_path: Option<&Path>,
    labels_path: Option<&Path>,
    out: &Path,
    csv_skip_header: bool,
) -> Result<()> {
    let model = load_model(model_path)?;
    let x_test = load_matrix_opts(test_path, csv_skip_header)?.data;
    if x_test.ncols() != model.plan.input_dim && x_test.nrows() > 0 {
        return Err(Error::Data(format!(
            "test features have {} columns but the model expects {}",
            x_test.ncols(),
            model.plan.input_dim
        )));
    }
    let x_train = train_path
        .map(|p| load_matrix_opts(p, csv_skip_header))
        .transpose()?
        .map(|m| m.data);
    let scores = model_scores(&model, &x_test, x_train.as_ref())?;
    let zeros = vec![0.0; model.num_classes];
    let classes: Vec<Vec<u32>> = scores.iter().map(|s| classify(s.view(), &zeros)).collect();

    let mut csv = String::new();
    csv.push_str("row,z,class");
    for j in 0..model.num_classes {
        csv.push_str(&format!(",score_{j}"));
    }
    csv.push('\n');
    for (zi, &z) in model.grid.values().iter().enumerate() {
        for row in 0..x_test.nrows() {
            csv.push_str(&format!("{row},{z},{}", classes[zi][row]));
            for j in 0..model.num_classes {
                csv.push_str(&format!(",{}", scores[zi][[row, j]]));
            }
            csv.push('\n');
        }
    }
    std::fs::write(out, csv).map_err(|e| Error::io(out, e))?;

    if let Some(labels_path) = labels_path {
        let truth = load_labels_opts(labels_path, csv_skip_header)?;
        println!("test accuracy by shrinkage:");
        for (zi, &z) in model.grid.values().iter().enumerate() {
            let acc = harness::accuracy(&classes[zi], &truth)?;
            println!("  z={z} acc={acc:.6}");
        }
    }
    println!("wrote predictions to {}", out.display());
    Ok(())
}

struct VocArgs {
    csv_skip_header: bool,
    train_features: std::path::PathBuf,
    train_labels: std::path::PathBuf,
    test_features: std::path::PathBuf,
    test_labels: std::path::PathBuf,
    p: usize,
    p1: usize,
    z: String,
    seed: u64,
    activation: String,
    weight_scale: f64,
    nu: Option<usize>,
    demean: bool,
    mode: String,
    checkpoints: Option<String>,
    timings: bool,
    out: std::path::PathBuf,
}

fn cmd_voc(args: VocArgs) -> Result<()> {
    let train =
        load_dataset(&args.train_features, &args.train_labels, None, args.csv_skip_header)?;
    let test = load_dataset(
        &args.test_features,
        &args.test_labels,
        Some(train.num_classes),
        args.csv_skip_header,
    )?;
    let plan = FeaturePlan {
        master_seed: args.seed,
        total_features: args.p,
        block_width: args.p1,
        activation: args.activation.parse::<Activation>()?,
        weight_scale: args.weight_scale,
        input_dim: train.features.ncols(),
    };
    plan.validate()?;
    let grid = RidgeGrid::new(parse_f64_list(&args.z, "--z")?)?;
    let checkpoints = match &args.checkpoints {
        Some(raw) => parse_usize_list(raw, "--checkpoints")?,
        None => (1..=plan.block_count()).collect(),
    };
    let solver = match args.nu {
        Some(nu) => SolverChoice::Lowrank { nu },
        None => SolverChoice::Full,
    };
    let opts = FitOptions {
        demean: args.demean,
        mode: parse_mode(&args.mode)?,
        mem_budget: mem_budget_from_env()?,
        ..FitOptions::default()
    };
    let curve = harness::run_voc(
        &train, &test, &plan, &grid, &checkpoints, solver, &opts, args.timings,
    )?;
    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut w = std::io::BufWriter::new(file);
    curve.write_csv(&mut w).map_err(|e| Error::io(&args.out, e))?;
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    if let Some(threshold) = curve.threshold_checkpoint() {
        println!("interpolation threshold nearest checkpoint: {threshold}");
    }
    println!("wrote {} rows to {}", curve.rows.len(), args.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    d_raw: &str,
    num_z_raw: &str,
    n: usize,
    reps: usize,
    seed: u64,
    threads: usize,
    record_timings: bool,
    out: &Path,
) -> Result<()> {
    let dgrid = parse_usize_list(d_raw, "--d")?;
    let zgrid_sizes = parse_usize_list(num_z_raw, "--num-z")?;
    eprintln!("blas core: {}, threads: {threads}", linalg::blas_core_name());
    let records = harness::run_bench(&dgrid, &zgrid_sizes, n, reps, seed, threads, record_timings)?;
    let csv = harness::bench_csv_string(&records);
    std::fs::write(out, &csv).map_err(|e| Error::io(out, e))?;
    print!("{csv}");
    Ok(())
}

fn cmd_inspect(model_path: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let solver = match model.solver {
        SolverKind::Full => "full".to_string(),
        SolverKind::Lowrank { nu } => format!("lowrank (nu={nu})"),
    };
    println!("solver: {solver}");
    println!(
        "mode: {}",
        match model.mode {
            ResolventMode::Exact => "exact",
            ResolventMode::Annihilate => "annihilate",
        }
    );
    println!("demean: {}", model.demean);
    println!("n_train: {}", model.n_train);
    println!("num_classes: {}", model.num_classes);
    println!("members: {} (batch_size {})", model.members.len(), model.batch_size);
    println!(
        "plan: seed={} p={} p1={} activation={} weight_scale={} input_dim={}",
        model.plan.master_seed,
        model.plan.total_features,
        model.plan.block_width,
        model.plan.activation,
        model.plan.weight_scale,
        model.plan.input_dim
    );
    println!(
        "z grid: {}",
        model
            .grid
            .values()
            .iter()
            .map(|z| z.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    println!(
        "checkpoints: {}",
        if model.checkpoints.is_empty() {
            "none".to_string()
        } else {
            model
                .checkpoints
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }
    );
    println!("store_beta: {}", model.store_beta());
    for (i, member) in model.members.iter().enumerate() {
        match &member.body {
            MemberBody::Full { q } => {
                println!("member {i}: rows={} dual weights per z={}", member.rows(), q.len());
            }
            MemberBody::Lowrank { v, d, .. } => {
                println!("member {i}: rows={} rank={} (top eigenvalue {:.6e})", member.rows(), d.len(),
                    d.first().copied().unwrap_or(0.0));
                let _ = v;
            }
        }
    }
    Ok(())
}
