use std::fmt::Write as _;
use std::path::Path;

use mpsim::config::{bias_range, load_config, parse_bias_list, parse_quantity, Dim};
use mpsim::f64::{CavityModel1D, Checkpoint, CuratedDataset, FloquetParams, SequenceSet, SimConfig, SurrogateModel};
use mpsim::grid::Component;
use mpsim::io::{read_probe, write_probe, write_spectrum, write_spectrum_map};
use mpsim::lem::{
    batch_loss_and_grad, default_schedule, macrospin_ringdown, train, CurriculumStage, LemError, LemHyper, PhysicsSpec,
    RingdownToy, TrainOptions,
};
use mpsim::oracle::{floquet_scalarized, hybrid_eigenfrequencies, hybrid_from_bare, kittel_frequency, pabs_map, DetuningConvention};
use mpsim::signal::{fft_magnitude, Window};
use mpsim::simulation::{export_dataset, probe_spectrum, sweep_runs, SpectrumMap};
use mpsim::units::{si_to_oersted, PhysicalConstants};
use mpsim::Vec3;
use serde::Deserialize;
use serde_json::json;

use crate::manifest::{sha256_hex, Outputs};
use crate::{BiasArgs, Cli, Command, CliError, DataArgs, OracleCmd};

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn runtime(m: impl std::fmt::Display) -> CliError {
    CliError::Runtime(m.to_string())
}

fn q(s: &str, dim: Dim, flag: &str) -> Result<f64, CliError> {
    parse_quantity(s, dim).map_err(|m| usage(format!("--{flag}: {m}")))
}

fn mu0_gamma() -> f64 {
    PhysicalConstants::<f64>::default().mu0_gamma_abs()
}

fn biases(b: &BiasArgs) -> Result<Option<Vec<f64>>, CliError> {
    match (&b.biases, &b.from) {
        (Some(_), Some(_)) => Err(usage("give either --biases or --from/--to/--step")),
        (Some(list), None) => parse_bias_list(list).map(Some).map_err(|m| usage(format!("--biases: {m}"))),
        (None, Some(from)) => {
            let to = b.to.as_deref().ok_or_else(|| usage("--from needs --to"))?;
            let step = b.step.as_deref().ok_or_else(|| usage("--from needs --step"))?;
            bias_range(q(from, Dim::Field, "from")?, q(to, Dim::Field, "to")?, q(step, Dim::Field, "step")?)
                .map(Some)
                .map_err(usage)
        }
        (None, None) => Ok(None),
    }
}

fn config(path: &Path) -> Result<(SimConfig, String), CliError> {
    let cfg = load_config(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((cfg, sha256_hex(&bytes)))
}

fn with_biases(mut cfg: SimConfig, list: Option<Vec<f64>>) -> Result<SimConfig, CliError> {
    if let Some(b) = list {
        cfg.bias_sweep = b;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn hash_of(parts: &impl serde::Serialize) -> String {
    sha256_hex(serde_json::to_string(parts).unwrap_or_default().as_bytes())
}

fn dry_run(cfg: &SimConfig) -> Result<(), CliError> {
    let dt = cfg.dt().map_err(usage)?;
    let n = cfg.grid.cells();
    println!("dt = {dt:.6e} s");
    println!("steps = {}", cfg.n_steps().map_err(usage)?);
    println!("cells = {} x {} x {} = {}", n[0], n[1], n[2], cfg.grid.n_cells());
    println!("memory = {} bytes", cfg.memory_estimate());
    let oe: Vec<String> = cfg.bias_sweep.iter().map(|b| format!("{:.6}", si_to_oersted(*b))).collect();
    println!("biases ({}) = {} Oe", oe.len(), oe.join(", "));
    println!("probes = {}", cfg.probes.len());
    Ok(())
}

fn run_diag(bias: f64, d: &mpsim::simulation::RunDiagnostics<f64>) -> serde_json::Value {
    json!({
        "bias_a_per_m": bias,
        "steps": d.steps,
        "llg_cells": d.llg.cells,
        "llg_total_iters": d.llg.total_iters,
        "llg_max_iters": d.llg.max_iters,
        "llg_max_residual": d.llg.max_residual,
    })
}

fn partial(out: Outputs, total: usize) -> Result<(), CliError> {
    let m = out.finish()?;
    if m.failures.is_empty() {
        Ok(())
    } else {
        for f in &m.failures {
            eprintln!("{f}");
        }
        Err(runtime(format!("{} of {total} runs failed; completed results kept", m.failures.len())))
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { config: path, bias } => {
            let (cfg, hash) = config(path)?;
            let list = bias.as_deref().map(parse_bias_list).transpose().map_err(|m| usage(format!("--bias: {m}")))?;
            let cfg = with_biases(cfg, list)?;
            if cli.dry_run {
                return dry_run(&cfg);
            }
            let mut out = Outputs::new(&cli.out, "simulate", hash, cli.seed)?;
            let runs = sweep_runs(&cfg, &cfg.bias_sweep, cli.parallel);
            let total = runs.len();
            for (bi, r) in runs.into_iter().enumerate() {
                match r {
                    Ok(art) => {
                        for p in &art.probes {
                            let mut buf = Vec::new();
                            write_probe(&mut buf, p).map_err(runtime)?;
                            let name =
                                format!("probe_b{bi:03}_{}_{}_{}_{}.txt", p.component.name(), p.at[0], p.at[1], p.at[2]);
                            out.write(&name, &buf)?;
                        }
                        out.manifest.diagnostics.push(run_diag(art.bias, &art.diagnostics));
                    }
                    Err(e) => out.manifest.failures.push(e.to_string()),
                }
            }
            partial(out, total)
        }
        Command::Sweep { config: path, biases: b } => {
            let (cfg, hash) = config(path)?;
            let cfg = with_biases(cfg, biases(b)?)?;
            if cfg.probes.is_empty() {
                return Err(usage(format!("{}: a sweep needs at least one [[probe]]", path.display())));
            }
            if cli.dry_run {
                return dry_run(&cfg);
            }
            let mut out = Outputs::new(&cli.out, "sweep", hash_of(&(hash, &cfg.bias_sweep)), cli.seed)?;
            let runs = sweep_runs(&cfg, &cfg.bias_sweep, cli.parallel);
            let total = runs.len();
            let mut map = SpectrumMap { biases: vec![], freqs: vec![], mags: vec![] };
            for r in runs {
                let spec = r.map_err(|e| e.to_string()).and_then(|art| {
                    let s = probe_spectrum(&cfg, &art).map_err(|e| e.to_string())?;
                    Ok((art, s))
                });
                match spec {
                    Ok((art, s)) => {
                        if map.freqs.is_empty() {
                            map.freqs = s.freqs;
                        }
                        map.biases.push(art.bias);
                        map.mags.push(s.mags);
                        out.manifest.diagnostics.push(run_diag(art.bias, &art.diagnostics));
                    }
                    Err(e) => out.manifest.failures.push(e),
                }
            }
            let mut buf = Vec::new();
            write_spectrum_map(&mut buf, &map).map_err(runtime)?;
            out.write("spectrum_map.txt", &buf)?;
            partial(out, total)
        }
        Command::Oracle(o) => oracle(cli, o),
        Command::Curate { probes, truncate, factor, toy, toy_len } => curate(cli, probes, *truncate, *factor, *toy, *toy_len),
        Command::Train { dataset, schedule, hidden, dt_cell, window_stride, clip, data } => {
            cmd_train(cli, dataset, schedule.as_deref(), *hidden, *dt_cell, *window_stride, *clip, data)
        }
        Command::Predict { checkpoint, dataset, prefix, data } => predict(cli, checkpoint, dataset, *prefix, data),
    }
}

fn oracle(cli: &Cli, o: &OracleCmd) -> Result<(), CliError> {
    match o {
        OracleCmd::Kittel { h0, ms, gamma } => {
            let h0 = q(h0, Dim::Field, "h0")?;
            let ms = q(ms, Dim::Magnetization, "ms")?;
            let f = kittel_frequency(h0, ms, gamma.unwrap_or_else(mu0_gamma)).map_err(usage)?;
            println!("# h0_a_per_m ms_a_per_m frequency_hz");
            println!("{h0:.9e} {ms:.9e} {f:.9e}");
            println!("# {:.4} GHz", f / 1e9);
        }
        OracleCmd::Eigenfreq { omega_p, delta, omega_m, convention, g } => {
            let wp = q(omega_p, Dim::Frequency, "omega-p")?;
            let g = q(g, Dim::Frequency, "g")?;
            let (up, lo) = match (delta, omega_m) {
                (Some(d), None) => hybrid_eigenfrequencies(wp, q(d, Dim::Frequency, "delta")?, g),
                (None, Some(m)) => {
                    let conv = match convention.as_str() {
                        "photon-minus-magnon" => DetuningConvention::PhotonMinusMagnon,
                        "magnon-minus-photon" => DetuningConvention::MagnonMinusPhoton,
                        c => return Err(usage(format!("--convention: unknown {c:?}"))),
                    };
                    hybrid_from_bare(wp, q(m, Dim::Frequency, "omega-m")?, g, conv)
                }
                _ => return Err(usage("give exactly one of --delta and --omega-m")),
            }
            .map_err(usage)?;
            println!("# upper_hz lower_hz");
            println!("{up:.9e} {lo:.9e}");
        }
        OracleCmd::PabsMap { biases: b, fmin, fmax, df, model } => {
            let biases = biases(b)?.ok_or_else(|| usage("pabs-map needs --biases or --from/--to/--step"))?;
            let (f0, f1, df) = (q(fmin, Dim::Frequency, "fmin")?, q(fmax, Dim::Frequency, "fmax")?, q(df, Dim::Frequency, "df")?);
            if !(df > 0.0 && f1 > f0) {
                return Err(usage("need fmin < fmax and df > 0"));
            }
            let m = match model.as_str() {
                "consistent" => CavityModel1D::reference_consistent(),
                "listed" => CavityModel1D::reference_as_listed(),
                s => return Err(usage(format!("--model: unknown {s:?} (consistent, listed)"))),
            };
            let n = ((f1 - f0) / df + 1e-9).floor() as usize;
            let freqs: Vec<f64> = (0..=n).map(|i| f0 + df * i as f64).collect();
            let mags = pabs_map(&m, &biases, &freqs).map_err(runtime)?;
            let map = SpectrumMap { biases: biases.clone(), freqs, mags };
            let mut out = Outputs::new(&cli.out, "oracle pabs-map", hash_of(&(&m, &map.biases, f0, f1, df)), cli.seed)?;
            let mut buf = Vec::new();
            write_spectrum_map(&mut buf, &map).map_err(runtime)?;
            out.write("pabs_map.txt", &buf)?;
            out.finish()?;
        }
        OracleCmd::Floquet { h0, hx0, hz0, f0, ms, gamma, t_end, steps_per_period } => {
            let p = FloquetParams {
                h0: q(h0, Dim::Field, "h0")?,
                hx0: q(hx0, Dim::Field, "hx0")?,
                hz0: q(hz0, Dim::Field, "hz0")?,
                f0: q(f0, Dim::Frequency, "f0")?,
                ms: q(ms, Dim::Magnetization, "ms")?,
                mu0_gamma: *gamma,
                t_end: q(t_end, Dim::Time, "t-end")?,
                m0_dir: Vec3::new(0.1, 1.0, 0.05).with_norm(1.0),
                steps_per_period: *steps_per_period,
            };
            if !(p.f0 > 0.0) {
                return Err(usage("--f0 must be positive"));
            }
            let r = floquet_scalarized(&p);
            println!("# monodromy determinant");
            println!("{:.16e}", r.det);
            println!("# multiplier re im modulus");
            for e in r.eigenvalues {
                println!("{:.16e} {:.16e} {:.16e}", e.re, e.im, e.norm());
            }
            let mut out = Outputs::new(&cli.out, "oracle floquet", hash_of(&p), cli.seed)?;
            let mut text = String::from("# t_s mx my mz\n");
            for (t, s) in r.times.iter().zip(&r.states) {
                let _ = writeln!(text, "{t:.16e} {:.16e} {:.16e} {:.16e}", s.x, s.y, s.z);
            }
            out.write("floquet_trajectory.txt", text.as_bytes())?;
            out.manifest.diagnostics.push(json!({ "det": r.det, "monodromy": r.monodromy }));
            out.finish()?;
        }
    }
    Ok(())
}

/// Curated probes or toy sequences.
#[derive(Deserialize)]
#[serde(untagged)]
enum DatasetFile {
    Curated(CuratedDataset),
    Sequences(SequenceSet),
}

fn curate(cli: &Cli, probes: &[std::path::PathBuf], truncate: usize, factor: usize, toy: Option<usize>, toy_len: usize) -> Result<(), CliError> {
    let text = if let Some(n) = toy {
        let t = RingdownToy { n_traj: n, len: toy_len, ..RingdownToy::default() };
        let set = macrospin_ringdown(&t, cli.seed).map_err(usage)?;
        if cli.dry_run {
            println!("toy trajectories = {n} x {toy_len} samples, dt = {:.6e} s", t.dt_ml);
            return Ok(());
        }
        serde_json::to_string(&set).map_err(runtime)?
    } else {
        if probes.is_empty() {
            return Err(usage("curate needs probe files or --toy"));
        }
        let mut series: Vec<mpsim::f64::ProbeSeries> = Vec::new();
        for p in probes {
            let f = std::fs::File::open(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            series.push(read_probe(std::io::BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", p.display())))?);
        }
        let ds = export_dataset(&series, truncate, factor).map_err(usage)?;
        if cli.dry_run {
            for s in &ds.series {
                println!("{} {:?}: {} samples, dt = {:.6e} s", s.component.name(), s.at, s.samples.len(), s.dt);
            }
            return Ok(());
        }
        serde_json::to_string(&ds).map_err(runtime)?
    };
    let mut out = Outputs::new(&cli.out, "curate", sha256_hex(text.as_bytes()), cli.seed)?;
    out.write("dataset.json", text.as_bytes())?;
    out.finish()?;
    Ok(())
}

fn component_pair(s: &str) -> Result<[Component; 2], CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let c: Vec<Component> = parts.iter().filter_map(|p| Component::parse(p)).collect();
    match c.as_slice() {
        [a, b] if parts.len() == 2 && a != b => Ok([*a, *b]),
        _ => Err(usage(format!("--components: expected two distinct components, got {s:?}"))),
    }
}

fn axis_of(c: Component) -> Result<usize, CliError> {
    match c {
        Component::Mx => Ok(0),
        Component::My => Ok(1),
        Component::Mz => Ok(2),
        _ => Err(usage(format!("physics residual needs magnetization components, got {}", c.name()))),
    }
}

fn load_sequences(path: &Path, a: &DataArgs) -> Result<SequenceSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let file: DatasetFile =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: not a dataset ({e})", path.display())))?;
    match file {
        DatasetFile::Sequences(s) => Ok(s),
        DatasetFile::Curated(ds) => {
            let comps = component_pair(&a.components)?;
            let physics = match &a.h0 {
                None => None,
                Some(h0) => {
                    let ms = q(&a.ms, Dim::Magnetization, "ms")?;
                    Some(PhysicsSpec {
                        h0: q(h0, Dim::Field, "h0")?,
                        ms,
                        alpha: a.alpha,
                        mu0_gamma: mu0_gamma(),
                        axes: [axis_of(comps[0])?, axis_of(comps[1])?],
                        scale: ms,
                    })
                }
            };
            SequenceSet::from_curated(&ds, comps, physics).map_err(|e| usage(format!("{}: {e}", path.display())))
        }
    }
}

#[derive(Deserialize)]
struct ScheduleFile {
    stage: Vec<CurriculumStage<f64>>,
}

fn lem_err(e: LemError) -> CliError {
    match e {
        LemError::NonFinite { .. } | LemError::Io(_) => runtime(e),
        _ => usage(e),
    }
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(runtime)?;
    Ok(pool.install(f))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cli: &Cli,
    dataset: &Path,
    schedule: Option<&Path>,
    hidden: usize,
    dt_cell: f64,
    window_stride: usize,
    clip: Option<f64>,
    a: &DataArgs,
) -> Result<(), CliError> {
    let data = load_sequences(dataset, a)?;
    let stages = match schedule {
        None => default_schedule(),
        Some(p) => {
            let t = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<ScheduleFile>(&t).map_err(|e| usage(format!("{}: {e}", p.display())))?.stage
        }
    };
    if stages.is_empty() || hidden == 0 || window_stride == 0 {
        return Err(usage("schedule, --hidden and --window-stride must be non-empty"));
    }
    if cli.dry_run {
        for (i, s) in stages.iter().enumerate() {
            let w = data.windows(s.input_len, s.pred_len, window_stride).len();
            println!("stage {i}: {w} windows, {} epochs, lambda {:e}", s.epochs, s.lambda);
        }
        return Ok(());
    }
    let hyper = LemHyper { hidden, channels: data.channels, dt_cell };
    let mut model = SurrogateModel::init(hyper, data.norm.clone(), data.dt_ml, cli.seed);
    let opts = TrainOptions { seed: cli.seed, window_stride, parallel: cli.parallel != 1, clip, ..TrainOptions::default() };
    let report = in_pool(cli.parallel, || train(&mut model, &data, &stages, &opts))?.map_err(lem_err)?;

    let last = stages.last().unwrap();
    let windows = data.windows(last.input_len, last.pred_len, window_stride);
    let serial = TrainOptions { parallel: false, ..opts };
    let (final_loss, _) =
        batch_loss_and_grad(&model, &data, &windows, last.input_len, last.pred_len, last.lambda, &serial).map_err(lem_err)?;

    let ckpt = Checkpoint::from_model(&model, data.physics, report.position);
    let ck = serde_json::to_string(&ckpt).map_err(runtime)?;
    let data_hash = sha256_hex(std::fs::read(dataset).unwrap_or_default().as_slice());
    let mut out = Outputs::new(&cli.out, "train", hash_of(&(data_hash, &stages, hidden, dt_cell, window_stride)), cli.seed)?;
    out.write("checkpoint.json", ck.as_bytes())?;
    let mut hist = String::from("# stage epoch total recon pred phys\n");
    for h in &report.history {
        for (e, l) in h.epochs.iter().enumerate() {
            let _ = writeln!(hist, "{} {} {:.16e} {:.16e} {:.16e} {:.16e}", h.stage, e, l.total, l.recon, l.pred, l.phys);
        }
    }
    out.write("loss_history.txt", hist.as_bytes())?;
    out.manifest.diagnostics.push(json!({
        "n_params": model.n_params(),
        "optimizer_steps": report.steps,
        "final_loss": final_loss,
        "final_eval": { "input_len": last.input_len, "pred_len": last.pred_len, "lambda": last.lambda, "window_stride": window_stride },
    }));
    out.finish()?;
    println!("final loss {:.6e} (recon {:.3e}, pred {:.3e}, phys {:.3e})", final_loss.total, final_loss.recon, final_loss.pred, final_loss.phys);
    Ok(())
}

fn predict(cli: &Cli, checkpoint: &Path, dataset: &Path, prefix: f64, a: &DataArgs) -> Result<(), CliError> {
    if !(prefix > 0.0 && prefix < 1.0) {
        return Err(usage("--prefix must lie in (0, 1)"));
    }
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| usage(format!("{}: {e}", checkpoint.display())))?;
    let model = ckpt.to_model().map_err(|e| usage(format!("{}: {e}", checkpoint.display())))?;
    let data = load_sequences(dataset, a)?;
    let c = data.channels;
    if c != model.hyper.channels {
        return Err(usage(format!("checkpoint has {} channels, dataset {c}", model.hyper.channels)));
    }
    if cli.dry_run {
        for i in 0..data.trajs.len() {
            let n = data.len_of(i);
            let k = ((prefix * n as f64).round() as usize).clamp(1, n - 1);
            println!("trajectory {i}: {k} input samples, {} predicted", n - k);
        }
        return Ok(());
    }
    let hash = hash_of(&(sha256_hex(&std::fs::read(checkpoint).unwrap_or_default()), sha256_hex(&std::fs::read(dataset).unwrap_or_default()), prefix));
    let mut out = Outputs::new(&cli.out, "predict", hash, cli.seed)?;
    for (i, t) in data.trajs.iter().enumerate() {
        let n = t.len() / c;
        if n < 2 {
            out.manifest.failures.push(format!("trajectory {i}: too short"));
            continue;
        }
        let k = ((prefix * n as f64).round() as usize).clamp(1, n - 1);
        let phys: Vec<f64> = t.iter().enumerate().map(|(j, v)| data.norm[j % c].invert(*v)).collect();
        let pred = model.predict_physical(&phys[..k * c], n - k).map_err(lem_err)?;
        let mut text = String::from("# t_s");
        for ch in 0..c {
            let _ = write!(text, " pred{ch}");
        }
        for ch in 0..c {
            let _ = write!(text, " true{ch}");
        }
        text.push('\n');
        let mut se = 0.0;
        for s in 0..n - k {
            let _ = write!(text, "{:.16e}", (k + s) as f64 * data.dt_ml);
            for ch in 0..c {
                let _ = write!(text, " {:.16e}", pred[s * c + ch]);
            }
            for ch in 0..c {
                let truth = phys[(k + s) * c + ch];
                let _ = write!(text, " {truth:.16e}");
                let e = data.norm[ch].apply(pred[s * c + ch]) - data.norm[ch].apply(truth);
                se += e * e;
            }
            text.push('\n');
        }
        out.write(&format!("pred_{i:03}.txt"), text.as_bytes())?;
        let ch0: Vec<f64> = pred.iter().step_by(c).copied().collect();
        match fft_magnitude(&ch0, data.dt_ml, Window::Hann) {
            Ok(mut s) => {
                s.label = format!("pred{i:03}");
                let mut buf = Vec::new();
                write_spectrum(&mut buf, &s).map_err(runtime)?;
                out.write(&format!("spectrum_{i:03}.txt"), &buf)?;
            }
            Err(e) => out.manifest.failures.push(format!("trajectory {i}: spectrum: {e}")),
        }
        out.manifest.diagnostics.push(json!({
            "trajectory": i,
            "input_samples": k,
            "predicted_samples": n - k,
            "rmse_normalized": (se / ((n - k) * c) as f64).sqrt(),
        }));
    }
    partial(out, data.trajs.len())
}
