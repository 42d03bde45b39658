use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use nvpolar::estimation::{decay_rate_guess, fit_rate_constants, synth_dataset, FitResult};
use nvpolar::io::{
    load_config, load_dataset, load_state, parse_pulse_program, write_dataset, write_state, Config,
    Manifest,
};
use nvpolar::optimizer::{self, optimize_protocol, SweepSpec, SweepVariable};
use nvpolar::pulse::{run_program, Trace};
use nvpolar::rates::{equivalence_suite, evolve_numeric, PopulationVector};
use nvpolar::readout::{measure, polarization_from_peaks, Measurement, ReadoutSettings};
use nvpolar::spin::{transition_frequencies, LevelLabel};

use crate::failure::{Categorize, Failure};

const SELFTEST_TOLERANCE: f64 = 1e-9;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .parse_failure()
}

/// Defaults when no file is given.
fn config(path: Option<&Path>, manifest: &mut Manifest) -> Result<Config, Failure> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = read(path)?;
    manifest.input("config", text.as_bytes());
    load_config(&text)
        .with_context(|| format!("in {}", path.display()))
        .parse_failure()
}

struct OutDir<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl<'a> OutDir<'a> {
    fn create(dir: &'a Path, manifest: Manifest) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .numeric_failure()?;
        Ok(Self { dir, manifest })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))
            .numeric_failure()?;
        self.manifest.output(name, contents.as_bytes());
        Ok(())
    }

    fn finish(self) -> Result<(), Failure> {
        let text = self.manifest.render();
        let path = self.dir.join("manifest.txt");
        fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .numeric_failure()
    }
}

fn trace_csv(trace: &Trace) -> String {
    let mut out = String::from("index,label,cycle,elapsed_ns");
    for l in LevelLabel::ORDER {
        let _ = write!(out, ",p{l}");
    }
    out.push('\n');
    for e in &trace.entries {
        let _ = write!(
            out,
            "{},{},{},{}",
            e.index.map_or(String::new(), |i| i.to_string()),
            e.label,
            e.cycle.map_or(String::new(), |c| c.to_string()),
            e.elapsed
        );
        for v in e.state.0 {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn summary(state: &PopulationVector) -> Result<String, Failure> {
    let peaks = nvpolar::readout::PeakSet::from_populations(state);
    let pol = polarization_from_peaks(&peaks).numeric_failure()?;
    let [m, z, p] = peaks.amplitudes;
    Ok(format!(
        "amp_m1 = {m}\namp_0 = {z}\namp_p1 = {p}\ntotal = {}\np = {}\nclamped = {}\n",
        peaks.total(),
        pol.p,
        pol.clamped
    ))
}

fn write_measurement(out: &mut OutDir<'_>, suffix: &str, m: &Measurement) -> Result<String, Failure> {
    let mut fid = String::from("tau_ns,signal\n");
    for (t, s) in m.fid.tau.iter().zip(&m.fid.signal) {
        let _ = writeln!(fid, "{t},{s}");
    }
    out.write(&format!("fid{suffix}.csv"), &fid)?;
    let mut spec = String::from("frequency_mhz,magnitude\n");
    for (f, a) in m.spectrum.frequency.iter().zip(&m.spectrum.magnitude) {
        let _ = writeln!(spec, "{f},{a}");
    }
    out.write(&format!("spectrum{suffix}.csv"), &spec)?;
    let pol = polarization_from_peaks(&m.peaks).numeric_failure()?;
    let [a, b, c] = m.peaks.amplitudes;
    let [fa, fb, fc] = m.fid.line_offsets;
    let text = format!(
        "line_offset_m1_mhz = {fa}\nline_offset_0_mhz = {fb}\nline_offset_p1_mhz = {fc}\n\
         peak_m1 = {a}\npeak_0 = {b}\npeak_p1 = {c}\ntotal = {}\np = {}\nclamped = {}\n",
        m.peaks.total(),
        pol.p,
        pol.clamped
    );
    out.write(&format!("peaks{suffix}.txt"), &text)?;
    Ok(text)
}

pub fn simulate(program: &Path, config_path: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let mut manifest = Manifest::new("simulate");
    let cfg = config(config_path, &mut manifest)?;
    let src = read(program)?;
    manifest.input("program", src.as_bytes());
    let table = transition_frequencies(&cfg.params).numeric_failure()?;
    let program = parse_pulse_program(&src, &cfg.presets, &table)
        .with_context(|| format!("in {}", program.display()))
        .parse_failure()?;
    manifest.set("cycles", program.cycles());
    let trace = run_program(&program, &table, &cfg.engine).numeric_failure()?;

    let mut dir = OutDir::create(out, manifest)?;
    dir.write("trace.csv", &trace_csv(&trace))?;
    dir.write("final_state.csv", &write_state(trace.final_state()))?;
    let text = summary(trace.final_state())?;
    dir.write("summary.txt", &text)?;
    print!("{text}");

    let readouts: Vec<_> = trace.entries.iter().filter_map(|e| e.readout.map(|r| (e.state, r))).collect();
    for (k, (state, (tau_max, tau_step, detuning))) in readouts.iter().enumerate() {
        let settings = ReadoutSettings {
            tau_max: *tau_max,
            tau_step: *tau_step,
            detuning: detuning.unwrap_or(cfg.readout.detuning),
            ..cfg.readout.clone()
        };
        let m = measure(state, &cfg.params, &settings).numeric_failure()?;
        let suffix = if readouts.len() == 1 { String::new() } else { format!("_{}", k + 1) };
        write_measurement(&mut dir, &suffix, &m)?;
    }
    dir.finish()
}

pub fn spectrum(state: &Path, config_path: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let mut manifest = Manifest::new("spectrum");
    let cfg = config(config_path, &mut manifest)?;
    let text = read(state)?;
    manifest.input("state", text.as_bytes());
    let state = load_state(&text)
        .with_context(|| format!("in {}", state.display()))
        .parse_failure()?;
    manifest
        .set("apodization", cfg.readout.apodization.name())
        .set("zero_pad", cfg.readout.zero_pad);
    let m = measure(&state, &cfg.params, &cfg.readout).numeric_failure()?;
    let mut dir = OutDir::create(out, manifest)?;
    let text = write_measurement(&mut dir, "", &m)?;
    print!("{text}");
    dir.finish()
}

pub fn fit(data: &Path, config_path: Option<&Path>, fit_kp: bool, out: Option<&Path>) -> Result<(), Failure> {
    let mut manifest = Manifest::new("fit");
    let cfg = config(config_path, &mut manifest)?;
    let text = read(data)?;
    manifest.input("data", text.as_bytes());
    let dataset = load_dataset(&text)
        .with_context(|| format!("in {}", data.display()))
        .parse_failure()?;
    let fit_kp = fit_kp || cfg.fit.fit_kp;
    manifest
        .set("fit_kp", fit_kp)
        .set("guess_wavelength_nm", cfg.fit.guess.wavelength_nm.unwrap_or(0));
    let mut guess = cfg.fit.guess;
    if fit_kp && guess.k_p <= 0.0 {
        guess.k_p = decay_rate_guess(&dataset, guess.k_s);
    }
    let result = fit_rate_constants(&dataset, &guess, fit_kp).numeric_failure()?;
    let report = result.to_key_value();
    print!("{report}");
    if let Some(out) = out {
        let mut dir = OutDir::create(out, manifest)?;
        dir.write("fit.txt", &report)?;
        dir.write("fit.csv", &format!("{}\n{}\n", FitResult::CSV_HEADER, result.to_csv_row()))?;
        dir.finish()?;
    }
    Ok(())
}

pub fn sweep(variable: &str, config_path: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let variable: SweepVariable = variable.parse().map_err(|e: String| anyhow!(e)).parse_failure()?;
    let mut manifest = Manifest::new("sweep");
    let cfg = config(config_path, &mut manifest)?;
    manifest.set("variable", variable.name());
    let values = match variable {
        SweepVariable::Duration => cfg.sweep.durations.clone(),
        SweepVariable::Cycles => cfg.sweep.cycles.clone(),
        SweepVariable::Fidelity => cfg.sweep.fidelities.clone(),
    };
    let curve = optimizer::sweep(&SweepSpec::new(variable, values, cfg.context())).numeric_failure()?;
    let mut dir = OutDir::create(out, manifest)?;
    dir.write("curve.csv", &curve.to_csv())?;
    dir.write("curve.dat", &curve.to_two_column())?;
    println!("{} points written to {}", curve.points.len(), out.display());
    dir.finish()
}

pub fn optimize(config_path: Option<&Path>, signal_min: Option<f64>, out: &Path) -> Result<(), Failure> {
    let mut manifest = Manifest::new("optimize");
    let cfg = config(config_path, &mut manifest)?;
    let threshold = signal_min.unwrap_or(cfg.optimize.signal_min);
    if !threshold.is_finite() {
        return Err(anyhow!("signal threshold {threshold} is not finite")).parse_failure();
    }
    manifest.set("signal_min", threshold);
    let report = optimize_protocol(&cfg.context(), &cfg.optimize.durations, cfg.optimize.max_cycles, threshold)
        .numeric_failure()?;
    let mut dir = OutDir::create(out, manifest)?;
    dir.write("grid.csv", &report.grid_csv())?;
    let text = report.to_key_value();
    dir.write("optimum.txt", &text)?;
    print!("{text}");
    dir.finish()
}

pub fn synth(
    config_path: Option<&Path>,
    wavelength: Option<u16>,
    noise: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    let mut manifest = Manifest::new("synth");
    let cfg = config(config_path, &mut manifest)?;
    let rates = match wavelength {
        Some(nm) => cfg.presets.get(nm).parse_failure()?,
        None => cfg.synth.rates,
    };
    let noise = noise.unwrap_or(cfg.synth.noise_sigma);
    let seed = seed.unwrap_or(cfg.seed);
    manifest
        .seed(seed)
        .set("wavelength_nm", rates.wavelength_nm.unwrap_or(0))
        .set("noise_sigma", noise);
    let data = synth_dataset(&rates, &cfg.synth.durations, noise, seed).numeric_failure()?;
    let mut dir = OutDir::create(out, manifest)?;
    dir.write("data.csv", &write_dataset(&data))?;
    println!("{} rows written to {}", data.rows.len(), out.join("data.csv").display());
    dir.finish()
}

pub fn selftest() -> Result<(), Failure> {
    let cfg = Config::default();
    let cases = equivalence_suite(&cfg.presets, 0.1).numeric_failure()?;
    let mut worst = 0.0f64;
    for c in &cases {
        println!("{:<16} max |analytic - rk4| = {:e}", c.name, c.residual);
        worst = worst.max(c.residual);
    }

    let mut no_decay = cfg.presets.get(532).numeric_failure()?;
    no_decay.k_p = 0.0;
    let mut drift = 0.0f64;
    for t in [0.0, 100.0, 1000.0, 5000.0] {
        let s = evolve_numeric(&no_decay, &PopulationVector::pre_repolarization(), t, 0.1).numeric_failure()?;
        drift = drift.max((s.total() - 1.0).abs());
    }
    println!("{:<16} max |total - 1| = {drift:e}", "conservation");

    println!("max_residual = {worst:e}");
    if worst < SELFTEST_TOLERANCE && drift < 1e-12 {
        println!("selftest: ok");
        Ok(())
    } else {
        println!("selftest: FAILED");
        Err(anyhow!("residual {worst:e} exceeds {SELFTEST_TOLERANCE:e} or drift {drift:e}")).numeric_failure()
    }
}
