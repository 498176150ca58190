use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;

use ncalg::algnn::{evaluate_rmse, AlgNN};
use ncalg::asm::{apply, apply_streaming, instantiate};
use ncalg::experiment::{
    load_table, prepare_split, render_csv, render_summary, run_experiment, train_architecture, Architecture,
};
use ncalg::io::{self, content_hash, read_json, read_matrix_csv, read_polynomial, read_shift_set, read_signal_csv};
use ncalg::lipconst::{
    analytic_l0, analytic_l1, empirical_l0, empirical_l0_at_blocks, empirical_l1, empirical_l1_at_blocks,
    CertificateDomain, CertificateReport,
};
use ncalg::perturb::{perturb_shifts, perturbation_norms, PerturbationModel, PerturbationSpec};
use ncalg::spectral::{joint_block_diagonalize, JbdOptions, SpectraReport};
use ncalg::stability::{
    adversarial_signal, verify_filter_stability, verify_network_stability, StabilityReport, Verdict, VerifyOptions,
};
use ncalg::{rng, NcPolynomial, Signal, VERSION};

use crate::config::{out_dir, resolve};
use crate::error::{CliError, Result};
use crate::{
    ApplyMode, ExperimentArgs, FilterArgs, LipArgs, PerturbArgs, SpectraArgs, SweepArgs, TrainArgs, VerifyArgs,
    VerifyNetArgs,
};

/// Header shared by every report.
#[derive(Serialize)]
struct Provenance<'a, A: Serialize> {
    version: &'static str,
    config_hash: String,
    seeds: Vec<u64>,
    invocation: &'a A,
}

impl<'a, A: Serialize> Provenance<'a, A> {
    fn new(invocation: &'a A, seeds: Vec<u64>) -> Self {
        let json = serde_json::to_string(invocation).expect("arguments serialize");
        Provenance {
            version: VERSION,
            config_hash: content_hash(json.as_bytes()),
            seeds,
            invocation,
        }
    }
}

#[derive(Serialize)]
struct Report<'a, A: Serialize, B: Serialize> {
    #[serde(flatten)]
    provenance: Provenance<'a, A>,
    #[serde(flatten)]
    body: B,
}

fn write_report<A: Serialize, B: Serialize>(path: &Path, invocation: &A, seeds: Vec<u64>, body: B) -> Result<()> {
    let report = Report {
        provenance: Provenance::new(invocation, seeds),
        body,
    };
    Ok(io::write_json(path, &report)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ncalg::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn spectra(a: &SpectraArgs) -> Result<()> {
    let s = read_shift_set(&a.shifts)?;
    let opts = JbdOptions {
        seed: a.seed,
        ..JbdOptions::with_tol(a.tol)
    };
    let d = joint_block_diagonalize(&s, &opts)?;
    let out = out_dir(&a.out)?;
    io::write_matrix_csv(&out.join("basis.csv"), d.basis())?;
    let body = SpectraReport {
        block_sizes: d.block_sizes(),
        offblock_residual: d.offblock_residual(),
        basis_file: "basis.csv".into(),
    };
    println!("block sizes: {:?}", body.block_sizes);
    println!("off-block residual: {:.3e}", body.offblock_residual);
    write_report(&out.join("spectra.json"), a, vec![a.seed], body)
}

#[derive(Serialize)]
struct FilterBody {
    dim: usize,
    terms: usize,
    degree: usize,
    output_file: &'static str,
    output_norm: f64,
}

pub fn filter(a: &FilterArgs) -> Result<()> {
    let s = read_shift_set(&a.shifts)?;
    let p = read_polynomial(&a.filter, s.num_generators())?;
    let x = read_signal_csv(&a.signal)?;
    let y = match a.mode {
        ApplyMode::Dense => apply(&instantiate(&p, &s)?, &x)?,
        ApplyMode::Streaming => apply_streaming(&p, &s, &x)?,
    };
    let out = out_dir(&a.out)?;
    io::write_signal_csv(&out.join("output.csv"), &y)?;
    println!("output norm: {:.6e}", y.norm());
    let body = FilterBody {
        dim: s.dim(),
        terms: p.num_terms(),
        degree: p.degree(),
        output_file: "output.csv",
        output_norm: y.norm(),
    };
    write_report(&out.join("filter.json"), a, vec![], body)
}

pub fn lip(a: &LipArgs) -> Result<()> {
    let shifts = a.shifts.as_deref().map(read_shift_set).transpose()?;
    let m = match (&shifts, a.generators) {
        (Some(s), _) => s.num_generators(),
        (None, Some(m)) => m,
        (None, None) => {
            return Err(CliError::Schema("either --shifts or --generators is required".into()));
        }
    };
    let p = read_polynomial(&a.filter, m)?;
    let radius = match (a.radius, &shifts) {
        (Some(r), _) => r,
        (None, Some(s)) => s.max_norm(),
        (None, None) => return Err(CliError::Schema("--radius is required without --shifts".into())),
    };
    let domain = CertificateDomain::from(a.domain);
    let (l0_empirical, l1_empirical) = match domain {
        CertificateDomain::Ball => (
            empirical_l0(&p, radius, a.trials, a.seed)?,
            empirical_l1(&p, radius, a.trials, a.seed)?,
        ),
        CertificateDomain::Blocks => {
            let s = shifts
                .as_ref()
                .ok_or_else(|| CliError::Schema("--domain blocks requires --shifts".into()))?;
            let d = joint_block_diagonalize(s, &JbdOptions::with_tol(a.tol))?;
            (
                empirical_l0_at_blocks(&p, &d, a.trials, a.seed)?,
                empirical_l1_at_blocks(&p, &d, a.trials, a.seed)?,
            )
        }
    };
    let body = CertificateReport {
        radius,
        domain,
        l0_analytic: analytic_l0(&p, radius)?,
        l1_analytic: analytic_l1(&p, radius)?,
        l0_empirical,
        l1_empirical,
        trials: a.trials,
        seed: a.seed,
    };
    println!(
        "L0 analytic {:.6e}, sampled {:.6e}",
        body.l0_analytic, body.l0_empirical
    );
    println!("L1 analytic {:?}, sampled {:?}", body.l1_analytic, body.l1_empirical);
    let out = out_dir(&a.out)?;
    write_report(&out.join("certificate.json"), a, vec![a.seed], body)
}

#[derive(Serialize)]
struct PerturbBody {
    delta: f64,
    sup_t: f64,
    sup_dt: f64,
    spec_file: &'static str,
    shifts_dir: &'static str,
}

pub fn perturb(a: &PerturbArgs) -> Result<()> {
    let s = read_shift_set(&a.shifts)?;
    let spec = PerturbationSpec {
        kind: a.kind.into(),
        magnitude: a.magnitude,
        delta_cap: a.delta_cap,
        seed: a.seed,
    };
    let pm = spec.sample(s.dim())?;
    let norms = perturbation_norms(&s, &pm)?;
    let out = out_dir(&a.out)?;
    io::write_matrix_csv(&out.join("t0.csv"), pm.t0())?;
    io::write_matrix_csv(&out.join("t1.csv"), pm.t1())?;
    io::write_json(&out.join("spec.json"), &spec)?;
    io::write_shift_set(&out.join("shifts"), &perturb_shifts(&s, &pm)?)?;
    println!(
        "delta {:.6}, sup T {:.6e}, sup DT {:.6e}",
        pm.delta(),
        norms.sup_t,
        norms.sup_dt
    );
    let body = PerturbBody {
        delta: pm.delta(),
        sup_t: norms.sup_t,
        sup_dt: norms.sup_dt,
        spec_file: "spec.json",
        shifts_dir: "shifts",
    };
    write_report(&out.join("perturb.json"), a, vec![a.seed], body)
}

/// A `perturb` output directory holds `t0.csv`/`t1.csv`; a file is a JSON
/// spec, sampled with its seed offset by `layer`.
fn load_perturbation(path: &Path, n: usize, layer: u64) -> Result<PerturbationModel> {
    if path.is_dir() {
        let t0 = read_matrix_csv(&path.join("t0.csv"))?;
        let t1 = read_matrix_csv(&path.join("t1.csv"))?;
        return Ok(PerturbationModel::new(t0, t1)?);
    }
    let mut spec: PerturbationSpec = read_json(path)?;
    spec.seed = spec.seed.wrapping_add(layer);
    Ok(spec.sample(n)?)
}

fn finish_sweep<A: Serialize>(invocation: &A, sweep: &SweepArgs, report: &StabilityReport) -> Result<()> {
    let out = out_dir(&sweep.out)?;
    let header = Provenance::new(invocation, vec![sweep.seed]);
    let mut text = serde_json::to_string(&header).expect("arguments serialize");
    text.push('\n');
    text.push_str(&report.to_json_lines());
    write_text(&out.join("stability.jsonl"), &text)?;
    for p in &report.probes {
        println!("eps {:.1e}: lhs {:.6e} rhs {:.6e}", p.epsilon, p.lhs, p.rhs_first_order);
    }
    println!("verdict: {:?}", report.verdict);
    match report.verdict {
        Verdict::Bounded => Ok(()),
        Verdict::Violated => Err(CliError::Violated {
            tightness: report.tightness(),
        }),
        Verdict::Inconclusive => Err(CliError::Inconclusive),
    }
}

fn sweep_signal(sweep: &SweepArgs, n: usize, adversarial: impl FnOnce() -> Result<Signal>) -> Result<Signal> {
    match sweep.signal.as_str() {
        "random" => Ok(rng::gaussian_vector(&mut rng::seeded(sweep.seed), n)),
        "adversarial" => adversarial(),
        path => Ok(read_signal_csv(Path::new(path))?),
    }
}

fn verify_options(sweep: &SweepArgs) -> VerifyOptions {
    VerifyOptions {
        c2_cap_factor: sweep.c2_cap_factor,
    }
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    let s = read_shift_set(&a.shifts)?;
    let p: NcPolynomial = read_polynomial(&a.filter, s.num_generators())?;
    let pm = load_perturbation(&a.sweep.perturbation, s.dim(), 0)?;
    let smallest = a.sweep.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let x = sweep_signal(&a.sweep, s.dim(), || {
        Ok(adversarial_signal(&p, &s, &pm.scaled(smallest))?)
    })?;
    let report = verify_filter_stability(&p, &s, &pm, &x, &a.sweep.epsilons, a.radius, &verify_options(&a.sweep))?;
    finish_sweep(a, &a.sweep, &report)
}

pub fn verify_net(a: &VerifyNetArgs) -> Result<()> {
    let net = AlgNN::load(&a.model)?;
    let n = net.input_dim();
    let perts = (0..net.layers().len())
        .map(|l| load_perturbation(&a.sweep.perturbation, net.layers()[l].shifts.dim(), l as u64))
        .collect::<Result<Vec<_>>>()?;
    let f_in = net.input_features();
    let x = match a.sweep.signal.as_str() {
        "random" => rng::gaussian_matrix(&mut rng::seeded(a.sweep.seed), n, f_in),
        "adversarial" => {
            return Err(CliError::Schema(
                "adversarial signals are only defined for single filters".into(),
            ));
        }
        path => {
            let m = read_matrix_csv(Path::new(path))?;
            if m.nrows() == 1 && f_in == 1 {
                m.transpose()
            } else {
                m
            }
        }
    };
    if x.shape() != (n, f_in) {
        return Err(ncalg::Error::DimensionMismatch {
            expected: n * f_in,
            found: x.len(),
        }
        .into());
    }
    let report = verify_network_stability(&net, &perts, &x, &a.sweep.epsilons, &verify_options(&a.sweep))?;
    finish_sweep(a, &a.sweep, &report)
}

#[derive(Serialize)]
struct TrainBody<'a> {
    config: &'a ncalg::experiment::ExperimentConfig,
    experiment_config_hash: String,
    arch: Architecture,
    final_train_mse: f64,
    test_rmse: f64,
    max_l1: f64,
    model_dir: &'static str,
    loss: &'a [f64],
    penalty: &'a [f64],
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let arch: Architecture = a.arch.parse()?;
    let cfg = resolve(a.run.config.as_deref(), &a.run.overrides)?;
    let table = load_table(&cfg)?;
    let split = prepare_split(&table, &cfg, a.seed)?;
    let (net, history) = train_architecture(arch, &split, &cfg)?;
    let test_rmse = evaluate_rmse(&net, &split.test_samples)?;
    let out = out_dir(&a.run.out)?;
    net.save(&out.join("model"))?;
    let final_train_mse = history.loss.last().copied().unwrap_or(f64::NAN);
    info!("{}: final train mse {final_train_mse:.4}", arch.name());
    println!(
        "{}: train mse {final_train_mse:.6}, test rmse {test_rmse:.6}",
        arch.name()
    );
    let body = TrainBody {
        config: &cfg,
        experiment_config_hash: cfg.hash(),
        arch,
        final_train_mse,
        test_rmse,
        max_l1: net.max_l1()?,
        model_dir: "model",
        loss: &history.loss,
        penalty: &history.penalty,
    };
    write_report(&out.join("train.json"), a, vec![a.seed], body)
}

pub fn experiment(a: &ExperimentArgs) -> Result<()> {
    let cfg = resolve(a.run.config.as_deref(), &a.run.overrides)?;
    let output = run_experiment(&cfg)?;
    let out = out_dir(&a.run.out)?;
    write_text(&out.join("results.csv"), &render_csv(&output.rows))?;
    write_text(&out.join("summary.json"), &render_summary(&output.summary))?;
    for arch in &output.summary.architectures {
        let medians: Vec<String> = arch
            .fractions
            .iter()
            .map(|f| format!("{}:{:.4}", f.fraction, f.median_delta))
            .collect();
        println!("{:8} median delta {}", arch.arch.name(), medians.join(" "));
    }
    println!(
        "penalized not worse than unpenalized at {}/{} fractions",
        output.summary.il_not_worse_fractions, output.summary.compared_fractions
    );
    Ok(())
}
