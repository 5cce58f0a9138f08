use std::f64::consts::PI;
use std::path::Path;

use dqdsim::config::Config;
use dqdsim::device::DeviceParams;
use dqdsim::experiments::{
    cnot_calibration, cnot_superposition_scan, echo_exchange_phase, exchange_frequency_shift, exchange_law_scan,
    exchange_spectroscopy, fit_rabi_frequency, fit_t2_star, hahn_echo, rabi_chevron, ramsey, resonance_centers,
    run_rb, SpectroscopyOptions,
};
use dqdsim::pulses::{calibrate_cnot, NoiseConfig, DEFAULT_DT_MAX};
use dqdsim::qcore::{Qubit, Spin};
use dqdsim::rb::{quasi_static_sigma, ErrorModel, RbConfig};
use dqdsim::readout::{
    add_noise, calibrate_white_noise, generate_trace, simulate_scores, write_trace_csv, FidelityCurve,
};
use dqdsim::report::reproduce_all;
use dqdsim::result::{ExperimentResult, SweepSpec};
use dqdsim::tomo::{bell_experiment, write_density_csv, BellOptions, VisibilityModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::{Cli, Command, Failure, RbModel};

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn noise(p: &DeviceParams, samples: usize, seed: u64) -> NoiseConfig {
    if samples == 0 {
        NoiseConfig::noiseless()
    } else {
        NoiseConfig::from_t2_star(p, samples, seed)
    }
}

fn require(cond: bool, what: &str) -> Result<(), Failure> {
    if cond {
        Ok(())
    } else {
        Err(Failure::Range(what.to_string()))
    }
}

fn run_meta(cli: &Cli, cfg: &Config, command: &str) -> Result<Map<String, Value>, Failure> {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(cli.seed));
    m.insert(
        "config".into(),
        serde_json::to_value(cfg).map_err(|e| Failure::Runtime(e.to_string()))?,
    );
    Ok(m)
}

fn io(e: std::io::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_result(cli: &Cli, cfg: &Config, command: &str, mut r: ExperimentResult) -> Result<String, Failure> {
    for (k, v) in run_meta(cli, cfg, command)? {
        r.metadata.insert(k, v);
    }
    let name = cli.name.clone().unwrap_or_else(|| command.to_string());
    let (csv, _) = r.write(&cli.out_dir, &name)?;
    Ok(csv.display().to_string())
}

fn write_raw(cli: &Cli, cfg: &Config, command: &str, csv: Vec<u8>, extra: Map<String, Value>) -> Result<String, Failure> {
    let mut meta = run_meta(cli, cfg, command)?;
    meta.extend(extra);
    let name = cli.name.clone().unwrap_or_else(|| command.to_string());
    std::fs::create_dir_all(&cli.out_dir).map_err(io)?;
    let csv_path = cli.out_dir.join(format!("{name}.csv"));
    std::fs::write(&csv_path, csv).map_err(io)?;
    let text = serde_json::to_string_pretty(&Value::Object(meta)).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(cli.out_dir.join(format!("{name}.meta.json")), text + "\n").map_err(io)?;
    Ok(csv_path.display().to_string())
}

pub fn run(cli: &Cli, cfg: &Config) -> Result<String, Failure> {
    let p = &cfg.device;
    let seed = cli.seed;
    match &cli.command {
        Command::Rabi(a) => {
            require(a.points >= 8, "--points must be ≥ 8")?;
            require(a.max_time > 0.0, "--max-time must be > 0")?;
            require(a.detuning_points >= 1, "--detuning-points must be ≥ 1")?;
            let f0 = p.qubit_frequency(a.target);
            let freqs = if a.detuning_points == 1 {
                vec![f0]
            } else {
                linspace(f0 - a.detuning_span, f0 + a.detuning_span, a.detuning_points)
            };
            let times = linspace(0.0, a.max_time, a.points);
            let nz = noise(p, a.samples, seed);
            let r = rabi_chevron(p, a.target, &freqs, &times, &nz)?;
            let resonant = rabi_chevron(p, a.target, &[f0], &times, &nz)?;
            let f = fit_rabi_frequency(&times, resonant.column("p_up").unwrap())?;
            let out = write_result(cli, cfg, "rabi", r)?;
            Ok(format!(
                "rabi: fitted Rabi frequency {:.4} MHz (configured {:.4} MHz) -> {out}",
                f * 1e-6,
                p.rabi_frequency * 1e-6
            ))
        }
        Command::Ramsey(a) => {
            require(a.points >= 4, "--points must be ≥ 4")?;
            require(a.samples >= 1, "--samples must be ≥ 1")?;
            let delays = linspace(0.0, a.max_delay, a.points);
            let r = ramsey(p, a.target, &delays, &NoiseConfig::from_t2_star(p, a.samples, seed))?;
            let t2 = fit_t2_star(&delays, r.column("p_up").unwrap())?;
            let out = write_result(cli, cfg, "ramsey", r)?;
            Ok(format!(
                "ramsey: fitted T2* {:.3} us (configured {:.3} us) -> {out}",
                t2 * 1e6,
                p.t2_star(a.target) * 1e6
            ))
        }
        Command::Echo(a) => {
            require(a.points >= 2, "--points must be ≥ 2")?;
            let delays = linspace(0.0, a.max_delay, a.points);
            let r = hahn_echo(p, a.target, &delays, &noise(p, a.samples, seed))?;
            let col = r.column("p_up").unwrap();
            let min = col.iter().copied().fold(1.0, f64::min);
            let out = write_result(cli, cfg, "echo", r)?;
            Ok(format!("echo: minimum echo amplitude P↑ = {min:.4} -> {out}"))
        }
        Command::Spectroscopy(a) => {
            require(a.points >= 16, "--points must be ≥ 16")?;
            require(a.tau_points >= 1, "--tau-points must be ≥ 1")?;
            let opts = SpectroscopyOptions {
                probe_rabi: a.probe_rabi,
                ..SpectroscopyOptions::default()
            };
            let j = p.exchange_at(a.vm)?;
            let lw = opts.linewidth(p);
            let center = p.qubit_frequency(Qubit::Left);
            let half = 0.75 * j + 4.0 * lw;
            let freqs = linspace(center - half, center + half, a.points);
            let pi_time = 1.0 / (2.0 * p.rabi_frequency);
            let taus = linspace(0.0, pi_time, a.tau_points);
            let r = exchange_spectroscopy(p, a.vm, &taus, &freqs, &opts)?;
            let mid = 1.0 / (4.0 * p.rabi_frequency);
            let mid_row = exchange_spectroscopy(p, a.vm, &[mid], &freqs, &opts)?;
            let centers = resonance_centers(&freqs, mid_row.column("p_up_left").unwrap());
            let split = match centers.as_slice() {
                [lo, hi] => format!("{:.4} MHz", (hi - lo) * 1e-6),
                _ => "unresolved".to_string(),
            };
            let out = write_result(cli, cfg, "spectroscopy", r)?;
            Ok(format!(
                "spectroscopy: branch splitting {split} (J = {:.4} MHz at {:.1} mV) -> {out}",
                j * 1e-6,
                a.vm * 1e3
            ))
        }
        Command::ExchangeFit(a) => {
            let opts = SpectroscopyOptions {
                probe_rabi: a.probe_rabi,
                ..SpectroscopyOptions::default()
            };
            let m = exchange_law_scan(p, &a.voltages, a.points, &opts)?;
            let summary = match &m.fit {
                Ok(f) => {
                    let j = |v: f64| dqdsim::device::exchange_vs_vm(&f.params, v).unwrap_or(f64::NAN);
                    format!(
                        "fitted J(390 mV) = {:.3} MHz, J(410 mV) = {:.3} MHz",
                        j(0.390) * 1e-6,
                        j(0.410) * 1e-6
                    )
                }
                Err(e) => format!("fit failed ({e})"),
            };
            let mut r = m.result;
            r.set_meta("samples", &m.samples)?;
            if let Err(e) = &m.fit {
                r.set_meta("fit_error", e)?;
            }
            let out = write_result(cli, cfg, "exchange-fit", r)?;
            Ok(format!("exchange-fit: {summary} -> {out}"))
        }
        Command::EchoPhase(a) => {
            require(a.points >= 2, "--points must be ≥ 2")?;
            let taus = linspace(0.0, a.tau_max, a.points);
            let nz = noise(p, a.samples, seed);
            let down = echo_exchange_phase(p, a.target, a.j_on, &taus, false, a.echo_tau, &nz)?;
            let up = echo_exchange_phase(p, a.target, a.j_on, &taus, true, a.echo_tau, &nz)?;
            let df = exchange_frequency_shift(&up)? - exchange_frequency_shift(&down)?;
            let mut r = ExperimentResult::new(
                "echo_exchange_phase",
                vec![SweepSpec::new("tau_dc", "s", taus.clone())],
                p,
                Some(seed),
            )?;
            for (suffix, res) in [("other_down", &down), ("other_up", &up)] {
                for c in &res.columns {
                    r.push_column(&format!("{}_{suffix}", c.name), &c.unit, c.values.clone(), c.probability)?;
                }
            }
            r.set_meta("target", a.target)?;
            r.set_meta("j_on", a.j_on)?;
            r.set_meta("echo_tau", a.echo_tau)?;
            r.set_meta("frequency_difference", df)?;
            let out = write_result(cli, cfg, "echo-phase", r)?;
            Ok(format!(
                "echo-phase: f(other up) - f(other down) = {:.4} MHz (J = {:.4} MHz) -> {out}",
                df * 1e-6,
                a.j_on * 1e-6
            ))
        }
        Command::CnotCal(a) => {
            require(a.points >= 2, "--points must be ≥ 2")?;
            require(a.step > 0.0, "--step must be > 0")?;
            let taus: Vec<f64> = (0..a.points).map(|k| k as f64 * a.step).collect();
            let r = cnot_calibration(p, a.j_on, &taus, a.input, a.rabi, a.tau_dc)?;
            let max = r.column("p_up_left").unwrap().iter().copied().fold(0.0, f64::max);
            let out = write_result(cli, cfg, "cnot-cal", r)?;
            Ok(format!(
                "cnot-cal: input {} max P↑(left) = {max:.4} -> {out}",
                a.input.label()
            ))
        }
        Command::CnotScan(a) => {
            require(a.points >= 1, "--points must be ≥ 1")?;
            let cal = calibrate_cnot(p, a.j_on, DEFAULT_DT_MAX)?;
            let thetas = linspace(0.0, 2.0 * PI, a.points);
            let r = cnot_superposition_scan(p, &cal, &thetas)?;
            let fid = r.column("fidelity").unwrap();
            let min = fid.iter().copied().fold(1.0, f64::min);
            let out = write_result(cli, cfg, "cnot-scan", r)?;
            Ok(format!(
                "cnot-scan: gate fidelity {:.6}, minimum output fidelity {min:.6} -> {out}",
                cal.fidelity
            ))
        }
        Command::Rb(a) => {
            let model = match a.model {
                RbModel::None => ErrorModel::None,
                RbModel::Depolarizing => ErrorModel::Depolarizing(a.rate),
                RbModel::QuasiStatic => ErrorModel::QuasiStatic(a.sigma.unwrap_or_else(|| quasi_static_sigma(p, a.target))),
            };
            let rb = RbConfig {
                target: a.target,
                lengths: a.lengths.clone(),
                n_sequences: a.sequences,
                model,
                shots: a.shots,
                seed,
            };
            let (r, data) = run_rb(p, &rb)?;
            let summary = match &data.fit {
                Ok(f) => format!("F_c = {:.5} ± {:.5}", f.f_c, f.f_c_std),
                Err(e) => format!("fit failed ({e})"),
            };
            let out = write_result(cli, cfg, "rb", r)?;
            Ok(format!("rb: {summary} -> {out}"))
        }
        Command::ReadoutSim(a) => readout(cli, cfg, a.traces, a.thresholds, a.calibrate, a.export_traces),
        Command::BellTomo(a) => {
            let vis = VisibilityModel::symmetric(a.vl, a.vr)?;
            let opts = BellOptions {
                j_on: a.j_on,
                ..BellOptions::default()
            };
            let res = bell_experiment(p, &vis, &noise(p, a.samples, seed), &opts)?;
            let mut csv = Vec::new();
            write_density_csv(&res.rho, &mut csv)?;
            let mut raw = Vec::new();
            write_density_csv(&res.rho_raw, &mut raw)?;
            let mut extra = Map::new();
            extra.insert("fidelity".into(), json!(res.fidelity));
            extra.insert("fidelity_raw".into(), json!(res.fidelity_raw));
            extra.insert("cnot_gate_fidelity".into(), json!(res.cnot_fidelity));
            extra.insert("visibility".into(), json!(vis));
            extra.insert("records".into(), json!(res.records));
            extra.insert("rho_raw_csv".into(), json!(String::from_utf8_lossy(&raw)));
            extra.insert("samples".into(), json!(a.samples));
            let out = write_raw(cli, cfg, "bell-tomo", csv, extra)?;
            Ok(format!(
                "bell-tomo: F = {:.4} (raw inversion {:.4}) -> {out}",
                res.fidelity, res.fidelity_raw
            ))
        }
        Command::Reproduce => {
            let rows = reproduce_all(cfg, seed);
            for r in &rows {
                println!("{r}");
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["id", "criterion", "passed", "measured", "expected"])
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            for r in &rows {
                w.write_record([r.id.to_string(), r.name.to_string(), r.passed.to_string(), r.measured.clone(), r.expected.clone()])
                    .map_err(|e| Failure::Runtime(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
            let mut extra = Map::new();
            extra.insert("rows".into(), json!(rows));
            let out = write_raw(cli, cfg, "reproduce", bytes, extra)?;
            let failed: Vec<String> = rows.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
            if failed.is_empty() {
                Ok(format!("reproduce: {}/{} criteria passed -> {out}", rows.len(), rows.len()))
            } else {
                Err(Failure::Criteria(format!(
                    "reproduce: criteria {} failed ({}/{} passed) -> {out}",
                    failed.join(", "),
                    rows.len() - failed.len(),
                    rows.len()
                )))
            }
        }
    }
}

fn readout(
    cli: &Cli,
    cfg: &Config,
    traces: usize,
    n_thresholds: usize,
    calibrate: bool,
    export: bool,
) -> Result<String, Failure> {
    require(traces >= 1, "--traces must be ≥ 1")?;
    require(n_thresholds >= 2, "--thresholds must be ≥ 2")?;
    let ro = &cfg.readout;
    let top = 1.5 * ro.left.blip_amplitude.max(ro.right.blip_amplitude);
    let thresholds = linspace(0.0, top, n_thresholds);
    let mut curves = Vec::new();
    for (k, q) in [Qubit::Left, Qubit::Right].into_iter().enumerate() {
        let (rp, delay) = ro.dot(q);
        let s = simulate_scores(rp, traces, delay, cli.seed.wrapping_add(k as u64))?;
        curves.push(FidelityCurve::from_scores(&s.up, &s.down, thresholds.clone()));
    }
    let mut r = ExperimentResult::new(
        "readout_fidelity",
        vec![SweepSpec::new("threshold", "blip amplitude", thresholds.clone())],
        &cfg.device,
        Some(cli.seed),
    )?;
    for (curve, dot) in curves.iter().zip(["left", "right"]) {
        r.push_column(&format!("f_up_{dot}"), "", curve.f_up.clone(), true)?;
        r.push_column(&format!("f_down_{dot}"), "", curve.f_down.clone(), true)?;
        r.push_column(&format!("visibility_{dot}"), "", curve.visibility.clone(), false)?;
        let (i, v) = curve.best();
        r.set_meta(&format!("best_visibility_{dot}"), v)?;
        r.set_meta(&format!("best_threshold_{dot}"), thresholds[i])?;
    }
    r.set_meta("traces_per_state", traces)?;
    let mut summary = format!(
        "readout-sim: best visibility left {:.3}, right {:.3}",
        curves[0].best().1,
        curves[1].best().1
    );
    if calibrate {
        let (wl, vl) = calibrate_white_noise(&ro.left, 0.0, 0.85, traces, cli.seed)?;
        let (wr, vr) = calibrate_white_noise(&ro.right, ro.partner_delay, 0.78, traces, cli.seed)?;
        r.set_meta("calibrated_white_density", [wl, wr])?;
        summary += &format!("; calibrated white density {wl:.3e} / {wr:.3e} gives {vl:.3} / {vr:.3}");
    }
    let stem = cli.name.clone().unwrap_or_else(|| "readout-sim".to_string());
    let mut example_traces = Vec::new();
    if export {
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
        for q in [Qubit::Left, Qubit::Right] {
            let (rp, _) = ro.dot(q);
            for spin in [Spin::Up, Spin::Down] {
                let clean = generate_trace(rp, spin, &mut rng);
                let noisy = add_noise(&clean, &rp.noise, rp.sample_rate, &mut rng);
                let mut buf = Vec::new();
                write_trace_csv(&noisy, rp.sample_rate, &mut buf)?;
                let spin_name = if spin == Spin::Up { "up" } else { "down" };
                example_traces.push((format!("{stem}-trace-{}-{spin_name}.csv", q.name()), buf));
            }
        }
    }
    let out = write_result(cli, cfg, "readout-sim", r)?;
    for (file, buf) in example_traces {
        std::fs::write(Path::new(&cli.out_dir).join(file), buf).map_err(io)?;
    }
    Ok(format!("{summary} -> {out}"))
}
