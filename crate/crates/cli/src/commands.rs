use std::path::{Path, PathBuf};
use std::time::Instant;

use slnet_core::baselines::{median_subtract, rolling_ball_stack, RollingBallConfig};
use slnet_core::io::{
    atomic_write, load_model, read_locs_csv, read_tiff, read_truth_csv, save_model, write_locs_csv, write_tiff,
    write_truth_csv,
};
use slnet_core::localize::{localize_stack, render, LocalizeParams, Threshold};
use slnet_core::metrics::{localization_error, sparsity, squirrel_scores, TruthTable};
use slnet_core::rpca::RpcaConfig;
use slnet_core::slnet::{decompose, decompose_rpca, train, GradientPolicy, Hyperparams, TRIPLET};
use slnet_core::synth::{generate, SynthConfig};
use slnet_core::{Grid, ImageStack, Normalization, StackMeta};

use crate::args::*;
use crate::error::CliError;

/// Wall-clock seconds per named stage, in execution order.
#[derive(Default)]
pub struct Timings(pub Vec<(String, f64)>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.0.push((stage.to_string(), t0.elapsed().as_secs_f64()));
        out
    }
}

/// Runs the subcommand and returns its primary output path.
pub fn run(cmd: &Command, timings: &mut Timings) -> Result<PathBuf, CliError> {
    match cmd {
        Command::Synth(a) => synth(a, timings),
        Command::Train(a) => train_cmd(a, timings),
        Command::Decompose(a) => decompose_cmd(a, timings),
        Command::Baseline(a) => baseline(a, timings),
        Command::Localize(a) => localize(a, timings),
        Command::Render(a) => render_cmd(a, timings),
        Command::Metrics(a) => metrics(a, timings),
        Command::Sweep(a) => sweep(a, timings),
        Command::Bench(a) => bench(a, timings),
    }
}

fn synth(a: &SynthArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    if a.background_rank == 0 {
        return Err(CliError::Usage("--background-rank must be >= 1".into()));
    }
    let defaults = SynthConfig::default();
    let background = if a.background_rank == 1 {
        defaults.background.clone()
    } else {
        SynthConfig::random_background(a.width, a.height, a.background_rank, 3, 120.0, 30.0, 0.25, a.seed)
    };
    let cfg = SynthConfig {
        width: a.width,
        height: a.height,
        frames: a.frames,
        emitters: a.emitters,
        psf_sigma: a.psf_sigma,
        blink_on_prob: a.blink_prob,
        photons: a.photons,
        background,
        read_noise_sigma: a.read_noise,
        shot_noise: !a.no_shot_noise,
        seed: a.seed,
        ..defaults
    };
    let (stack, truth) = t.time("generate", || generate(&cfg))?;
    t.time("write", || -> Result<(), CliError> {
        write_tiff(&stack, &a.out, a.bit_depth)?;
        if let Some(p) = &a.truth {
            write_truth_csv(&TruthTable::from_ground_truth(&truth), p)?;
        }
        if let Some(p) = &a.widefield {
            let wf = truth.widefield().into_iter().map(|v| v as f32).collect();
            write_tiff(&ImageStack::new(a.width, a.height, wf, StackMeta::default())?, p, 16)?;
        }
        Ok(())
    })?;
    Ok(a.out.clone())
}

fn hyperparams(h: &HyperArgs) -> Hyperparams {
    Hyperparams {
        mu: h.mu,
        alpha: h.alpha,
        epochs: h.epochs,
        learning_rate: h.lr,
        triplet_offset: h.delta,
        hidden_channels: h.hidden,
        kernel_size: h.kernel,
        seed: h.seed,
        normalization: match h.normalization {
            NormArg::Max => Normalization::MaxScale,
            NormArg::None => Normalization::None,
        },
        gradient_policy: match h.gradient {
            GradientArg::StraightThrough => GradientPolicy::StraightThrough,
            GradientArg::Subspace => GradientPolicy::Subspace,
        },
        shrink_at_inference: false,
    }
}

fn read_stack(path: &Path, t: &mut Timings) -> Result<ImageStack, CliError> {
    Ok(t.time("read", || read_tiff(path))?)
}

fn train_cmd(a: &TrainArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    let mut stack = read_stack(&a.input, t)?;
    if let Some(n) = a.frames {
        if n == 0 || n > stack.len() {
            return Err(CliError::Usage(format!("--frames must lie in 1..={}", stack.len())));
        }
        stack = stack.slice(0, n)?;
    }
    let hp = hyperparams(&a.hp);
    let (model, report) = t.time("train", || train(&stack, &hp))?;
    t.time("write", || -> Result<(), CliError> {
        save_model(&model, &a.out_model)?;
        if let Some(p) = &a.out_report {
            let mut csv = String::from("epoch,total,data,sparse,residual\n");
            for e in &report.epochs {
                csv += &format!(
                    "{},{},{},{},{}\n",
                    e.epoch + 1,
                    e.terms.total,
                    e.terms.data,
                    e.terms.sparse,
                    e.terms.residual
                );
            }
            atomic_write(p, csv.as_bytes())?;
        }
        Ok(())
    })?;
    Ok(a.out_model.clone())
}

fn decompose_cmd(a: &DecomposeArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    let stack = read_stack(&a.input, t)?;
    let result = match a.backend {
        Backend::Slnet => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("--model is required for --backend slnet".into()))?;
            let model = load_model(path)?;
            let hp = Hyperparams {
                mu: a.mu,
                triplet_offset: a.delta,
                shrink_at_inference: a.shrink_at_inference,
                ..Hyperparams::default()
            };
            t.time("decompose", || decompose(&model, &stack, &hp))?
        }
        Backend::Rpca => {
            let cfg = a.lambda.map(|lambda| RpcaConfig {
                lambda,
                ..RpcaConfig::for_shape(TRIPLET, stack.pixels_per_frame())
            });
            t.time("decompose", || decompose_rpca(&stack, a.delta, cfg))?
        }
    };
    t.time("write", || -> Result<(), CliError> {
        write_tiff(&result.sparse, &a.out_sparse, a.bit_depth)?;
        if let Some(p) = &a.out_lowrank {
            write_tiff(&result.low_rank, p, a.bit_depth)?;
        }
        Ok(())
    })?;
    Ok(a.out_sparse.clone())
}

fn baseline(a: &BaselineArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    let stack = read_stack(&a.input, t)?;
    let out = t.time("subtract", || match a.method {
        BaselineMethod::Median => median_subtract(&stack),
        BaselineMethod::Rollingball => rolling_ball_stack(&stack, &RollingBallConfig::new(a.radius)),
    })?;
    t.time("write", || write_tiff(&out, &a.out, a.bit_depth))?;
    Ok(a.out.clone())
}

fn localize(a: &LocalizeArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    let stack = read_stack(&a.input, t)?;
    let params = LocalizeParams {
        threshold: match a.threshold_mode {
            ThresholdMode::Wavelet => Threshold::Wavelet(a.threshold),
            ThresholdMode::Robust => Threshold::Robust(a.threshold),
            ThresholdMode::Absolute => Threshold::Absolute(a.threshold),
        },
        min_separation: a.min_separation,
        roi_radius: a.roi_radius,
    };
    let table = t.time("localize", || localize_stack(&stack, &params, a.pixel_size))?;
    t.time("write", || write_locs_csv(&table, &a.out))?;
    Ok(a.out.clone())
}

fn render_to_stack(grid: Grid<f64>) -> Result<ImageStack, CliError> {
    let (w, h) = (grid.width(), grid.height());
    let data = grid.into_vec().into_iter().map(|v| v as f32).collect();
    Ok(ImageStack::new(w, h, data, StackMeta::default())?)
}

fn render_cmd(a: &RenderArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    let table = t.time("read", || read_locs_csv(&a.locs, a.pixel_size))?;
    let img = t.time("render", || render(&table, a.magnification, a.width, a.height))?;
    t.time("write", || {
        write_tiff(&render_to_stack(img)?, &a.out, 16).map_err(CliError::from)
    })?;
    Ok(a.out.clone())
}

fn metrics(a: &MetricsArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    if a.input.is_none() && a.locs.is_none() {
        return Err(CliError::Usage("metrics needs --input and/or --locs".into()));
    }
    if (a.truth.is_some() || a.widefield.is_some()) && a.locs.is_none() {
        return Err(CliError::Usage("--truth and --widefield need --locs".into()));
    }
    let mut rows: Vec<(String, String)> = Vec::new();
    if let Some(p) = &a.input {
        let stack = read_stack(p, t)?;
        rows.push(("sparsity_percent".into(), sparsity(stack.data())?.to_string()));
    }
    if let Some(p) = &a.locs {
        let table = read_locs_csv(p, a.pixel_size)?;
        rows.push(("localizations".into(), table.len().to_string()));
        if let Some(tp) = &a.truth {
            let truth = read_truth_csv(tp, None)?;
            let e = t.time("localization_error", || {
                localization_error(&table, &truth, a.match_radius)
            })?;
            rows.push(("rmse_px".into(), e.rmse.to_string()));
            rows.push(("recall".into(), e.recall.to_string()));
            rows.push(("precision".into(), e.precision.to_string()));
            rows.push(("matched".into(), e.matched.to_string()));
            rows.push(("true_active".into(), e.true_active.to_string()));
        }
        if let Some(wp) = &a.widefield {
            let wf = read_tiff(wp)?;
            if wf.len() != 1 {
                return Err(CliError::Usage("--widefield must be a single-page TIFF".into()));
            }
            let (w, h) = (wf.width(), wf.height());
            let wf = Grid::from_vec(w, h, wf.frame(0).iter().map(|&v| v as f64).collect())?;
            let blur = a.blur_sigma.unwrap_or(1.3 * a.magnification as f64);
            let s = t.time("squirrel", || -> Result<_, CliError> {
                let rec = render(&table, a.magnification, w, h)?;
                Ok(squirrel_scores(&rec, &wf, blur)?)
            })?;
            rows.push(("rsp".into(), s.rsp.to_string()));
            rows.push(("rse".into(), s.rse.to_string()));
        }
    }
    let mut csv = String::from("metric,value\n");
    for (k, v) in rows {
        csv += &format!("{k},{v}\n");
    }
    atomic_write(&a.out, csv.as_bytes())?;
    Ok(a.out.clone())
}

fn sweep(a: &SweepArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    let stack = read_stack(&a.input, t)?;
    let start = Instant::now();
    let mut csv = String::from("alpha,mu,seed,sparsity,final_loss,wall_time_s\n");
    for &alpha in &a.alphas {
        for &mu in &a.mus {
            for &seed in &a.seeds {
                let hp = Hyperparams {
                    alpha,
                    mu,
                    seed,
                    epochs: a.epochs,
                    learning_rate: a.lr,
                    triplet_offset: a.delta,
                    hidden_channels: a.hidden,
                    ..Hyperparams::default()
                };
                let t0 = Instant::now();
                let (model, report) = train(&stack, &hp)?;
                let d = decompose(&model, &stack, &hp)?;
                let secs = t0.elapsed().as_secs_f64();
                let loss = report.final_loss().map_or("nan".to_string(), |l| l.to_string());
                csv += &format!("{alpha},{mu},{seed},{},{loss},{secs:.3}\n", sparsity(d.sparse.data())?);
            }
        }
    }
    t.0.push(("sweep".into(), start.elapsed().as_secs_f64()));
    atomic_write(&a.out, csv.as_bytes())?;
    Ok(a.out.clone())
}

fn bench(a: &BenchArgs, t: &mut Timings) -> Result<PathBuf, CliError> {
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be >= 1".into()));
    }
    let stack = read_stack(&a.input, t)?;
    let model = a.model.as_ref().map(|p| load_model(p)).transpose()?;
    let threads = slnet_core::par::threads();
    let mut csv = String::from("method,frames,threads,seconds,frames_per_second\n");
    let mut time_best = |name: &str, f: &dyn Fn() -> Result<(), CliError>| -> Result<(), CliError> {
        let mut best = f64::INFINITY;
        for _ in 0..a.repeats {
            let t0 = Instant::now();
            f()?;
            best = best.min(t0.elapsed().as_secs_f64());
        }
        csv += &format!(
            "{name},{},{threads},{best:.6},{:.3}\n",
            stack.len(),
            stack.len() as f64 / best
        );
        t.0.push((name.to_string(), best));
        Ok(())
    };
    time_best("median", &|| median_subtract(&stack).map(drop).map_err(Into::into))?;
    time_best(&format!("rollingball-r{}", a.radius), &|| {
        rolling_ball_stack(&stack, &RollingBallConfig::new(a.radius))
            .map(drop)
            .map_err(Into::into)
    })?;
    time_best("rpca", &|| {
        decompose_rpca(&stack, a.delta, None).map(drop).map_err(Into::into)
    })?;
    if let Some(m) = &model {
        let hp = Hyperparams {
            triplet_offset: a.delta,
            ..Hyperparams::default()
        };
        time_best("slnet", &|| decompose(m, &stack, &hp).map(drop).map_err(Into::into))?;
    }
    atomic_write(&a.out, csv.as_bytes())?;
    Ok(a.out.clone())
}
